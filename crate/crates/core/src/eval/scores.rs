use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Utterance ids with one value each, in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreList {
    pub ids: Vec<String>,
    pub values: Vec<f64>,
}

impl ScoreList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: impl Into<String>, value: f64) {
        self.ids.push(id.into());
        self.values.push(value);
    }

    /// Values as binary labels; fails on anything but 0 or 1.
    pub fn labels(&self) -> Result<Vec<u8>> {
        self.values
            .iter()
            .zip(&self.ids)
            .map(|(&v, id)| match v {
                0.0 => Ok(0),
                1.0 => Ok(1),
                _ => Err(Error::Input(format!("label for {id} is {v}, not 0 or 1"))),
            })
            .collect()
    }
}

/// `id<TAB>score` lines.
pub fn format_scores(list: &ScoreList) -> String {
    let mut s = String::new();
    for (id, v) in list.ids.iter().zip(&list.values) {
        writeln!(s, "{id}\t{v:?}").unwrap();
    }
    s
}

fn parse(text: &str, what: &str, value: impl Fn(&str) -> Option<f64>) -> Result<ScoreList> {
    let mut out = ScoreList::default();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Input(format!("{what} line {}: {line:?}", i + 1));
        let (id, v) = line.split_once('\t').ok_or_else(bad)?;
        if id.is_empty() {
            return Err(bad());
        }
        out.push(id, value(v.trim()).ok_or_else(bad)?);
    }
    Ok(out)
}

pub fn parse_scores(text: &str) -> Result<ScoreList> {
    parse(text, "score file", |v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
}

pub fn parse_labels(text: &str) -> Result<ScoreList> {
    parse(text, "label file", |v| match v {
        "0" => Some(0.0),
        "1" => Some(1.0),
        _ => None,
    })
}

pub fn write_scores(path: &Path, list: &ScoreList) -> Result<()> {
    std::fs::write(path, format_scores(list)).map_err(|e| Error::io(path, e))
}

/// `id<TAB>0|1` lines; values must already be labels.
pub fn write_labels(path: &Path, list: &ScoreList) -> Result<()> {
    let mut s = String::new();
    for (id, y) in list.ids.iter().zip(list.labels()?) {
        writeln!(s, "{id}\t{y}").unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<ScoreList> {
    parse_scores(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_labels(path: &Path) -> Result<ScoreList> {
    parse_labels(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
