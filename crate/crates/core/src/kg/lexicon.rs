//! Phrase lexicons and narratives-graph construction by key-phrase matching.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;

use super::{Atom, EntityKind, EntityRef, GraphError, KnowledgeGraph, IS_MENTIONED_IN};

/// Lowercases, turns every non-alphanumeric character into a separator and
/// splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<Vec<String>, EntityRef>,
    max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    /// First token of the match.
    pub start: usize,
    /// Number of tokens matched.
    pub len: usize,
    pub entity: EntityRef,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, phrase: &str, entity: EntityRef) -> Result<(), GraphError> {
        let tokens = tokenize(phrase);
        if tokens.is_empty() {
            return Err(GraphError::EmptyPhrase);
        }
        if self.entries.contains_key(&tokens) {
            return Err(GraphError::DuplicatePhrase(tokens.join(" ")));
        }
        self.max_len = self.max_len.max(tokens.len());
        self.entries.insert(tokens, entity);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads `phrase<TAB>kind<TAB>id` rows.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let mut lex = Lexicon::new();
        let reader = BufReader::new(File::open(path)?);
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut row = || -> Result<(), GraphError> {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 3 {
                    return Err(GraphError::Parse(format!(
                        "lexicon row needs 3 fields, got {}",
                        fields.len()
                    )));
                }
                let kind: EntityKind = fields[1].parse()?;
                lex.insert(fields[0], EntityRef::new(kind, fields[2])?)
            };
            row().map_err(|e| e.at_line(idx + 1))?;
        }
        Ok(lex)
    }

    /// Only the entries of one entity kind.
    pub fn of_kind(&self, kind: EntityKind) -> Lexicon {
        let entries: HashMap<_, _> = self
            .entries
            .iter()
            .filter(|(_, e)| e.kind == kind)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let max_len = entries.keys().map(Vec::len).max().unwrap_or(0);
        Lexicon { entries, max_len }
    }

    fn longest_at(&self, tokens: &[String], start: usize) -> Option<(usize, &EntityRef)> {
        let upper = self.max_len.min(tokens.len() - start);
        (1..=upper).rev().find_map(|len| {
            self.entries
                .get(&tokens[start..start + len])
                .map(|e| (len, e))
        })
    }

    /// Leftmost-longest, non-overlapping matches.
    pub fn find_mentions(&self, text: &str) -> Vec<Mention> {
        find_mentions_in(&[self], &tokenize(text))
    }
}

fn find_mentions_in(lexicons: &[&Lexicon], tokens: &[String]) -> Vec<Mention> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        // ties go to the earlier lexicon
        let best = lexicons
            .iter()
            .filter_map(|lex| lex.longest_at(tokens, i))
            .fold(None::<(usize, &EntityRef)>, |acc, cand| match acc {
                Some(a) if a.0 >= cand.0 => Some(a),
                _ => Some(cand),
            });
        match best {
            Some((len, entity)) => {
                out.push(Mention {
                    start: i,
                    len,
                    entity: entity.clone(),
                });
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NarrativeReport {
    pub texts: usize,
    pub matched: usize,
    pub unmatched: usize,
    pub mentions: usize,
}

/// Builds the narratives graph: every text with at least one lexicon match
/// becomes a narrative node linked by `is_mentioned_in` to each matched
/// drug or disease.
pub fn build_narratives_graph(
    texts: &[(String, String)],
    drug_lex: &Lexicon,
    disease_lex: &Lexicon,
) -> Result<(KnowledgeGraph, NarrativeReport), GraphError> {
    let mut seen = BTreeSet::new();
    for (id, _) in texts {
        if !seen.insert(super::normalize_id(id)) {
            return Err(GraphError::DuplicateNarrative(id.clone()));
        }
    }
    let lexicons = [drug_lex, disease_lex];
    let per_text: Vec<BTreeSet<EntityRef>> = texts
        .par_iter()
        .map(|(_, text)| {
            find_mentions_in(&lexicons, &tokenize(text))
                .into_iter()
                .map(|m| m.entity)
                .collect()
        })
        .collect();

    let mut g = KnowledgeGraph::new();
    let mut report = NarrativeReport {
        texts: texts.len(),
        ..Default::default()
    };
    let mut by_text: BTreeMap<String, BTreeSet<EntityRef>> = BTreeMap::new();
    for ((id, _), entities) in texts.iter().zip(per_text) {
        if entities.is_empty() {
            report.unmatched += 1;
        } else {
            report.matched += 1;
            by_text.insert(id.clone(), entities);
        }
    }
    for (id, entities) in by_text {
        let narrative = EntityRef::new(EntityKind::Narrative, &id)?;
        for entity in entities {
            g.add_atom(
                Atom::new(IS_MENTIONED_IN, vec![entity, narrative.clone()]),
                1.0,
            )?;
            report.mentions += 1;
        }
    }
    Ok((g, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexicons() -> (Lexicon, Lexicon) {
        let mut drugs = Lexicon::new();
        drugs
            .insert(
                "albuterol",
                EntityRef::new(EntityKind::Drug, "albuterol").unwrap(),
            )
            .unwrap();
        let mut diseases = Lexicon::new();
        for p in ["asthma", "coronary heart disease", "heart disease"] {
            diseases
                .insert(p, EntityRef::new(EntityKind::Disease, p).unwrap())
                .unwrap();
        }
        (drugs, diseases)
    }

    /// All lexicon spans, then only those not strictly inside a longer one.
    fn maximal_spans(lex: &Lexicon, text: &str) -> BTreeSet<String> {
        let tokens = tokenize(text);
        let mut spans = Vec::new();
        for s in 0..tokens.len() {
            for e in s + 1..=tokens.len() {
                if let Some(ent) = lex.entries.get(&tokens[s..e]) {
                    spans.push((s, e, ent.id.clone()));
                }
            }
        }
        spans
            .iter()
            .filter(|(s, e, _)| {
                !spans
                    .iter()
                    .any(|(s2, e2, _)| s2 <= s && e <= e2 && (e2 - s2) > (e - s))
            })
            .map(|(_, _, id)| id.clone())
            .collect()
    }

    #[test]
    fn exact_match() {
        let (drugs, diseases) = lexicons();
        let texts = vec![(
            "t1".to_string(),
            "Patient with asthma, prescribed albuterol.".to_string(),
        )];
        let (g, report) = build_narratives_graph(&texts, &drugs, &diseases).unwrap();
        assert_eq!(report.matched, 1);
        let atoms: Vec<String> = g.observed().keys().map(|a| a.to_string()).collect();
        assert_eq!(
            atoms,
            vec![
                "is_mentioned_in(albuterol, t1)",
                "is_mentioned_in(asthma, t1)"
            ]
        );
    }

    #[test]
    fn no_match_creates_nothing() {
        let (drugs, diseases) = lexicons();
        let texts = vec![("t2".to_string(), "no relevant terms".to_string())];
        let (g, report) = build_narratives_graph(&texts, &drugs, &diseases).unwrap();
        assert!(g.is_empty());
        assert_eq!(report.unmatched, 1);
    }

    #[test]
    fn longest_match_wins() {
        let (drugs, diseases) = lexicons();
        let text = "coronary heart disease noted";
        let expected = maximal_spans(&diseases, text);
        assert_eq!(
            expected,
            BTreeSet::from(["coronary heart disease".to_string()])
        );
        let texts = vec![("t3".to_string(), text.to_string())];
        let (g, _) = build_narratives_graph(&texts, &drugs, &diseases).unwrap();
        let found: BTreeSet<String> = g.observed().keys().map(|a| a.args[0].id.clone()).collect();
        assert_eq!(found, expected);
    }

    #[test]
    fn repeated_mentions_dedupe() {
        let (drugs, diseases) = lexicons();
        let texts = vec![("t".to_string(), "asthma asthma ASTHMA".to_string())];
        let (g, report) = build_narratives_graph(&texts, &drugs, &diseases).unwrap();
        assert_eq!(g.observed().len(), 1);
        assert_eq!(report.mentions, 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let (drugs, diseases) = lexicons();
        let texts = vec![
            ("t".to_string(), "asthma".to_string()),
            ("T".to_string(), "asthma".to_string()),
        ];
        assert!(build_narratives_graph(&texts, &drugs, &diseases).is_err());
    }

    #[test]
    fn lexicon_rejects_duplicates_and_empty() {
        let mut lex = Lexicon::new();
        let e = EntityRef::new(EntityKind::Disease, "gout").unwrap();
        lex.insert("Gout", e.clone()).unwrap();
        assert!(lex.insert("gout!", e.clone()).is_err());
        assert!(lex.insert(" -- ", e).is_err());
    }

    #[test]
    fn matching_is_token_anchored() {
        let (_, diseases) = lexicons();
        assert!(diseases.find_mentions("asthmatic").is_empty());
    }
}
