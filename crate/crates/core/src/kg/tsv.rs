//! Line-oriented TSV format for graphs.
//!
//! ```text
//! # comment
//! node<TAB>kind<TAB>id
//! edge<TAB>predicate<TAB>arg1<TAB>arg2<TAB>value
//! ```
//!
//! Open-predicate edges may carry `?` as value when the gold label is unknown.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Atom, EntityRef, GraphError, KnowledgeGraph};

pub fn load_graph(path: impl AsRef<Path>) -> Result<KnowledgeGraph, GraphError> {
    let file = File::open(path)?;
    parse_graph(BufReader::new(file))
}

pub fn parse_graph<R: Read>(reader: R) -> Result<KnowledgeGraph, GraphError> {
    let mut g = KnowledgeGraph::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        parse_row(&mut g, &line).map_err(|e| e.at_line(idx + 1))?;
    }
    Ok(g)
}

fn parse_row(g: &mut KnowledgeGraph, line: &str) -> Result<(), GraphError> {
    let trimmed = line.trim_end_matches(['\r', '\n']);
    if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
        return Ok(());
    }
    let fields: Vec<&str> = trimmed.split('\t').collect();
    match fields[0].trim() {
        "node" => {
            if fields.len() != 3 {
                return Err(GraphError::Parse(format!(
                    "node row needs 3 fields, got {}",
                    fields.len()
                )));
            }
            let kind = fields[1].parse()?;
            g.add_node(EntityRef::new(kind, fields[2])?);
            Ok(())
        }
        "edge" => {
            if fields.len() < 4 {
                return Err(GraphError::Parse(format!(
                    "edge row needs at least 4 fields, got {}",
                    fields.len()
                )));
            }
            let predicate = fields[1].trim().to_lowercase();
            let raw_args = &fields[2..fields.len() - 1];
            let sig = g
                .signature(&predicate)
                .ok_or_else(|| GraphError::UnknownPredicate(predicate.clone()))?;
            if sig.arity() != raw_args.len() {
                return Err(GraphError::Arity {
                    predicate,
                    expected: sig.arity(),
                    got: raw_args.len(),
                });
            }
            let args = raw_args
                .iter()
                .enumerate()
                .map(|(pos, raw)| g.resolve_arg(&predicate, pos, raw))
                .collect::<Result<Vec<_>, _>>()?;
            let atom = Atom::new(&predicate, args);
            let raw_value = fields[fields.len() - 1].trim();
            if raw_value == "?" {
                return g.add_target(atom, None);
            }
            let value: f64 = raw_value
                .parse()
                .map_err(|_| GraphError::Parse(format!("bad truth value `{raw_value}`")))?;
            g.add_atom(atom, value)
        }
        other => Err(GraphError::Parse(format!("unknown record type `{other}`"))),
    }
}

pub fn write_graph<W: Write>(g: &KnowledgeGraph, writer: W) -> Result<(), GraphError> {
    let mut w = BufWriter::new(writer);
    for node in g.nodes() {
        writeln!(w, "node\t{}\t{}", node.kind, node.id)?;
    }
    for (atom, value) in g.observed() {
        writeln!(
            w,
            "edge\t{}\t{}\t{}",
            atom.predicate,
            join_args(atom),
            value
        )?;
    }
    for (atom, gold) in g.targets() {
        match gold {
            Some(v) => writeln!(w, "edge\t{}\t{}\t{}", atom.predicate, join_args(atom), v)?,
            None => writeln!(w, "edge\t{}\t{}\t?", atom.predicate, join_args(atom))?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_graph(g: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    write_graph(g, File::create(path)?)
}

fn join_args(atom: &Atom) -> String {
    atom.args
        .iter()
        .map(|a| a.id.as_str())
        .collect::<Vec<_>>()
        .join("\t")
}

/// Reads `id<TAB>text` narrative rows.
pub fn read_narratives(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, GraphError> {
    let file = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let (id, text) = match (parts.next(), parts.next()) {
            (Some(id), Some(text)) if !text.contains('\t') => (id.trim(), text),
            _ => {
                return Err(
                    GraphError::Parse("expected `id<TAB>text` without extra tabs".into())
                        .at_line(idx + 1),
                )
            }
        };
        out.push((id.to_string(), text.to_string()));
    }
    Ok(out)
}
