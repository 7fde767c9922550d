//! Plain-text dataset directories.
//!
//! - `edges.txt`: one `u v` pair per line, `#` comments allowed.
//! - `features.csv`: one comma-separated row per node, no header.
//! - `labels.csv` (optional): `node,label` lines.
//! - `splits.json`: `{"train": [...], "valid": [...], "test": [...]}`.
//! - `links.json` (optional): held-out positive and negative pairs.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fmt_float, write_atomic};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::Matrix;

pub const EDGES_FILE: &str = "edges.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPLITS_FILE: &str = "splits.json";
pub const LINKS_FILE: &str = "links.json";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSplits {
    pub pos_train: Vec<(usize, usize)>,
    pub pos_valid: Vec<(usize, usize)>,
    pub pos_test: Vec<(usize, usize)>,
    pub neg_valid: Vec<(usize, usize)>,
    pub neg_test: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub graph: Graph,
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
    pub splits: Splits,
    pub links: Option<LinkSplits>,
}

impl DatasetBundle {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.features.nrows() != n {
            return Err(Error::InconsistentDimensions(format!(
                "{} feature rows for {n} nodes",
                self.features.nrows()
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::InconsistentDimensions(format!(
                    "{} labels for {n} nodes",
                    labels.len()
                )));
            }
        }
        let mut seen = HashSet::new();
        for &i in self
            .splits
            .train
            .iter()
            .chain(&self.splits.valid)
            .chain(&self.splits.test)
        {
            if i >= n {
                return Err(Error::NodeOutOfRange { node: i, num_nodes: n });
            }
            if !seen.insert(i) {
                return Err(Error::InvalidParams(format!("node {i} appears in more than one split")));
            }
        }
        if let Some(links) = &self.links {
            for &(u, v) in all_pairs(links) {
                for node in [u, v] {
                    if node >= n {
                        return Err(Error::NodeOutOfRange { node, num_nodes: n });
                    }
                }
            }
        }
        Ok(())
    }
}

fn all_pairs(links: &LinkSplits) -> impl Iterator<Item = &(usize, usize)> {
    links
        .pos_train
        .iter()
        .chain(&links.pos_valid)
        .chain(&links.pos_test)
        .chain(&links.neg_valid)
        .chain(&links.neg_test)
}

fn read_required(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    Ok(fs::read_to_string(path)?)
}

fn read_optional(dir: &Path, name: &str) -> Result<Option<String>> {
    let path = dir.join(name);
    if path.is_file() {
        Ok(Some(fs::read_to_string(path)?))
    } else {
        Ok(None)
    }
}

fn parse_error(file: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_edges(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_error(
                EDGES_FILE,
                idx + 1,
                format!("expected `u v`, found {trimmed:?}"),
            ));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_error(EDGES_FILE, idx + 1, format!("invalid node index {s:?}")))
        };
        edges.push((parse(fields[0])?, parse(fields[1])?));
    }
    Ok(edges)
}

fn parse_features(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row = trimmed
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_error(FEATURES_FILE, idx + 1, format!("invalid number {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_error(
                    FEATURES_FILE,
                    idx + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let d = rows.first().map_or(0, Vec::len);
    Ok(Matrix::from_row_iterator(rows.len(), d, rows.into_iter().flatten()))
}

fn parse_labels(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (node, label) = trimmed
            .split_once(',')
            .ok_or_else(|| parse_error(LABELS_FILE, idx + 1, "expected `node,label`"))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| parse_error(LABELS_FILE, idx + 1, format!("invalid integer {s:?}")))
        };
        out.push((parse(node)?, parse(label)?));
    }
    Ok(out)
}

/// Loads a dataset directory. The node count is one past the largest node
/// index mentioned in any file; `features.csv` must have exactly that many
/// rows.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    let edges = parse_edges(&read_required(dir, EDGES_FILE)?)?;
    let features = parse_features(&read_required(dir, FEATURES_FILE)?)?;
    let splits: Splits = serde_json::from_str(&read_required(dir, SPLITS_FILE)?)?;
    let label_pairs = read_optional(dir, LABELS_FILE)?.map(|t| parse_labels(&t)).transpose()?;
    let links: Option<LinkSplits> = read_optional(dir, LINKS_FILE)?
        .map(|t| serde_json::from_str(&t))
        .transpose()?;

    let mut n = 0;
    let mut bump = |i: usize| n = n.max(i + 1);
    edges.iter().for_each(|&(u, v)| {
        bump(u);
        bump(v)
    });
    splits
        .train
        .iter()
        .chain(&splits.valid)
        .chain(&splits.test)
        .for_each(|&i| bump(i));
    if let Some(pairs) = &label_pairs {
        pairs.iter().for_each(|&(i, _)| bump(i));
    }
    if let Some(l) = &links {
        all_pairs(l).for_each(|&(u, v)| {
            bump(u);
            bump(v)
        });
    }
    if features.nrows() != n {
        return Err(Error::InconsistentDimensions(format!(
            "{FEATURES_FILE} has {} rows but the dataset references {n} nodes",
            features.nrows()
        )));
    }

    let labels = match label_pairs {
        Some(pairs) => {
            let mut labels = vec![None; n];
            for (node, label) in pairs {
                if labels[node].replace(label).is_some() {
                    return Err(Error::InconsistentDimensions(format!("node {node} labelled twice")));
                }
            }
            let missing = labels.iter().position(Option::is_none);
            if let Some(node) = missing {
                return Err(Error::InconsistentDimensions(format!("node {node} has no label")));
            }
            Some(labels.into_iter().map(Option::unwrap).collect())
        }
        None => None,
    };

    let bundle = DatasetBundle {
        graph: Graph::build(&edges, n)?,
        features,
        labels,
        splits,
        links,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir)?;
    let mut edges = String::new();
    for &(u, v) in bundle.graph.edges() {
        edges.push_str(&format!("{u} {v}\n"));
    }
    write_atomic(&dir.join(EDGES_FILE), edges.as_bytes())?;

    let mut features = String::new();
    for row in bundle.features.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| fmt_float(*v)).collect();
        features.push_str(&cells.join(","));
        features.push('\n');
    }
    write_atomic(&dir.join(FEATURES_FILE), features.as_bytes())?;

    if let Some(labels) = &bundle.labels {
        let text: String = labels.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")).collect();
        write_atomic(&dir.join(LABELS_FILE), text.as_bytes())?;
    }
    write_atomic(&dir.join(SPLITS_FILE), &serde_json::to_vec(&bundle.splits)?)?;
    if let Some(links) = &bundle.links {
        write_atomic(&dir.join(LINKS_FILE), &serde_json::to_vec(links)?)?;
    }
    Ok(())
}
