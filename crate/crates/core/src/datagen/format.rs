//! Line-oriented dataset files.
//!
//! ```text
//! # ifo-dataset v1 states=<S> actions=<A> kind=<expert|imperfect>
//! s s'        (expert)
//! s a s'      (imperfect)
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use super::{LabeledDataset, StateOnlyDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Expert(StateOnlyDataset),
    Imperfect(LabeledDataset),
}

impl Dataset {
    pub fn n_states(&self) -> usize {
        match self {
            Dataset::Expert(d) => d.n_states(),
            Dataset::Imperfect(d) => d.n_states(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Dataset::Expert(d) => d.n_actions(),
            Dataset::Imperfect(d) => d.n_actions(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let kind = match self {
            Dataset::Expert(_) => "expert",
            Dataset::Imperfect(_) => "imperfect",
        };
        writeln!(out, "# ifo-dataset v1 states={} actions={} kind={kind}", self.n_states(), self.n_actions())
            .expect("writing to a String");
        match self {
            Dataset::Expert(d) => {
                for (s, s2) in d.pairs() {
                    writeln!(out, "{s} {s2}").expect("writing to a String");
                }
            }
            Dataset::Imperfect(d) => {
                for (s, a, s2) in d.triples() {
                    writeln!(out, "{s} {a} {s2}").expect("writing to a String");
                }
            }
        }
        out
    }
}

impl From<StateOnlyDataset> for Dataset {
    fn from(d: StateOnlyDataset) -> Self {
        Dataset::Expert(d)
    }
}

impl From<LabeledDataset> for Dataset {
    fn from(d: LabeledDataset) -> Self {
        Dataset::Imperfect(d)
    }
}

pub fn write_dataset<W: Write>(data: &Dataset, mut out: W) -> Result<()> {
    out.write_all(data.to_text().as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut lines = Vec::new();
    for line in BufReader::new(input).lines() {
        lines.push(line?);
    }
    parse_lines(lines.iter().map(String::as_str))
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    parse_lines(text.lines())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_header(line: &str) -> Result<(usize, usize, bool)> {
    let rest = line
        .strip_prefix("# ifo-dataset v1 ")
        .ok_or_else(|| parse_err(1, "expected `# ifo-dataset v1` header"))?;
    let (mut states, mut actions, mut kind) = (None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| parse_err(1, format!("bad field `{field}`")))?;
        match key {
            "states" => states = value.parse::<usize>().ok(),
            "actions" => actions = value.parse::<usize>().ok(),
            "kind" => {
                kind = match value {
                    "expert" => Some(true),
                    "imperfect" => Some(false),
                    _ => return Err(parse_err(1, format!("unknown kind `{value}`"))),
                }
            }
            _ => return Err(parse_err(1, format!("unknown field `{key}`"))),
        }
    }
    match (states, actions, kind) {
        (Some(s), Some(a), Some(k)) => Ok((s, a, k)),
        _ => Err(parse_err(1, "header needs states, actions and kind")),
    }
}

fn parse_lines<'a>(mut lines: impl Iterator<Item = &'a str>) -> Result<Dataset> {
    let header = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
    let (n_states, n_actions, expert) = parse_header(header)?;
    let width = if expert { 2 } else { 3 };
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<usize> = line
            .split_whitespace()
            .map(|f| f.parse::<usize>().map_err(|e| parse_err(lineno, format!("`{f}`: {e}"))))
            .collect::<Result<_>>()?;
        if fields.len() != width {
            return Err(parse_err(lineno, format!("expected {width} fields, found {}", fields.len())));
        }
        records.push(fields);
    }
    let map = |e: Error| match e {
        Error::InvalidArgument(msg) => parse_err(0, msg),
        other => other,
    };
    if expert {
        let pairs = records.iter().map(|r| (r[0], r[1])).collect();
        StateOnlyDataset::new(n_states, n_actions, pairs).map(Dataset::Expert).map_err(map)
    } else {
        let triples = records.iter().map(|r| (r[0], r[1], r[2])).collect();
        LabeledDataset::new(n_states, n_actions, triples).map(Dataset::Imperfect).map_err(map)
    }
}
