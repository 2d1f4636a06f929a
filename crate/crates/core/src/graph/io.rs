//! Text and JSON graph formats.
//!
//! The four-file layout holds one node per line for features and labels
//! (`-1` marks an unlabeled node), one `u v` pair per line for edges, and a
//! JSON object of split index lists. The bundle format embeds all four in a
//! single JSON document.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, Splits};
use crate::autodiff::Tensor;

pub const BUNDLE_FORMAT: &str = "tide-bundle/1";

/// Paths of the four-file layout.
#[derive(Clone, Debug)]
pub struct GraphFiles {
    pub features: PathBuf,
    pub edges: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

impl GraphFiles {
    /// `features.txt`, `edges.txt`, `labels.txt` and `splits.json` inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            features: dir.join("features.txt"),
            edges: dir.join("edges.txt"),
            labels: dir.join("labels.txt"),
            splits: dir.join("splits.json"),
        }
    }

    pub fn exist(&self) -> bool {
        [&self.features, &self.edges, &self.labels, &self.splits]
            .iter()
            .all(|p| p.is_file())
    }
}

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), GraphError> {
    fs::write(path, contents).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_features(path: &Path) -> Result<Tensor, GraphError> {
    let text = read(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, content) in lines(&text) {
        let row = content
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_error(path, line, format!("bad float {tok:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_error(
                    path,
                    line,
                    format!("expected {} values, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    Tensor::from_rows(&rows).map_err(|e| parse_error(path, 0, e.to_string()))
}

fn parse_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>, GraphError> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (line, content) in lines(&text) {
        let parts: Vec<&str> = content.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(parse_error(path, line, "expected \"u v\""));
        }
        let mut ends = [0usize; 2];
        for (slot, tok) in ends.iter_mut().zip(&parts) {
            *slot = tok
                .parse()
                .map_err(|_| parse_error(path, line, format!("bad node index {tok:?}")))?;
            if *slot >= n {
                return Err(parse_error(
                    path,
                    line,
                    format!("edge endpoint {slot} out of range for {n} nodes"),
                ));
            }
        }
        edges.push((ends[0], ends[1]));
    }
    Ok(edges)
}

fn parse_labels(path: &Path) -> Result<Vec<Option<usize>>, GraphError> {
    let text = read(path)?;
    lines(&text)
        .map(|(line, content)| match content.parse::<i64>() {
            Ok(-1) => Ok(None),
            Ok(c) if c >= 0 => Ok(Some(c as usize)),
            _ => Err(parse_error(path, line, format!("bad label {content:?}"))),
        })
        .collect()
}

fn parse_splits(path: &Path) -> Result<Splits, GraphError> {
    serde_json::from_str(&read(path)?).map_err(|source| GraphError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Loads the four-file layout. The class count is one more than the largest
/// label present.
pub fn load_graph(files: &GraphFiles) -> Result<Graph, GraphError> {
    let features = parse_features(&files.features)?;
    let n = features.rows();
    let labels = parse_labels(&files.labels)?;
    if labels.len() != n {
        return Err(GraphError::Inconsistent(format!(
            "{} has {n} rows but {} has {} labels",
            files.features.display(),
            files.labels.display(),
            labels.len()
        )));
    }
    let edges = parse_edges(&files.edges, n)?;
    let splits = parse_splits(&files.splits)?;
    let num_classes = labels.iter().flatten().max().map_or(0, |&c| c + 1);
    Graph::new(features, edges, labels, num_classes, splits)
}

/// Writes the four-file layout; floats use shortest round-trip formatting.
pub fn save_graph(graph: &Graph, files: &GraphFiles) -> Result<(), GraphError> {
    let mut features = String::new();
    for row in graph.features().iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        features.push_str(&cells.join(" "));
        features.push('\n');
    }
    let mut edges = String::new();
    for (u, v) in graph.edges() {
        edges.push_str(&format!("{u} {v}\n"));
    }
    let mut labels = String::new();
    for l in graph.labels() {
        match l {
            Some(c) => labels.push_str(&format!("{c}\n")),
            None => labels.push_str("-1\n"),
        }
    }
    let splits = serde_json::to_string(graph.splits()).expect("splits serialize");
    write(&files.features, &features)?;
    write(&files.edges, &edges)?;
    write(&files.labels, &labels)?;
    write(&files.splits, &splits)
}

/// Single-document graph with free-form provenance metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub format: String,
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub features: Vec<Vec<f64>>,
    pub edges: Vec<[usize; 2]>,
    pub labels: Vec<i64>,
    pub splits: Splits,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl Bundle {
    pub fn from_graph(graph: &Graph, meta: BTreeMap<String, serde_json::Value>) -> Self {
        Self {
            format: BUNDLE_FORMAT.to_string(),
            num_nodes: graph.n(),
            num_features: graph.dim(),
            num_classes: graph.num_classes(),
            features: graph.features().iter_rows().map(<[f64]>::to_vec).collect(),
            edges: graph.edges().into_iter().map(|(u, v)| [u, v]).collect(),
            labels: graph
                .labels()
                .iter()
                .map(|l| l.map_or(-1, |c| c as i64))
                .collect(),
            splits: graph.splits().clone(),
            meta,
        }
    }

    pub fn to_graph(&self) -> Result<Graph, GraphError> {
        if self.format != BUNDLE_FORMAT {
            return Err(GraphError::Invalid(format!(
                "unknown bundle format {:?}",
                self.format
            )));
        }
        let features = if self.num_nodes == 0 {
            Tensor::zeros(0, self.num_features)
        } else {
            Tensor::from_rows(&self.features).map_err(|e| GraphError::Invalid(e.to_string()))?
        };
        if features.rows() != self.num_nodes || features.cols() != self.num_features {
            return Err(GraphError::Inconsistent(format!(
                "bundle declares {}x{} features, found {:?}",
                self.num_nodes,
                self.num_features,
                features.shape()
            )));
        }
        let labels = self
            .labels
            .iter()
            .map(|&l| match l {
                -1 => Ok(None),
                c if c >= 0 => Ok(Some(c as usize)),
                c => Err(GraphError::Invalid(format!("bad label {c}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Graph::new(
            features,
            self.edges.iter().map(|&[u, v]| (u, v)),
            labels,
            self.num_classes,
            self.splits.clone(),
        )
    }

    /// Compact JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("bundle serializes");
        s.push('\n');
        s
    }
}

pub fn write_bundle(path: impl AsRef<Path>, bundle: &Bundle) -> Result<(), GraphError> {
    write(path.as_ref(), &bundle.to_json())
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<Bundle, GraphError> {
    let path = path.as_ref();
    serde_json::from_str(&read(path)?).map_err(|source| GraphError::Json {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, features: &str, edges: &str, labels: &str) -> GraphFiles {
        let files = GraphFiles::in_dir(dir);
        fs::write(&files.features, features).unwrap();
        fs::write(&files.edges, edges).unwrap();
        fs::write(&files.labels, labels).unwrap();
        fs::write(
            &files.splits,
            r#"{"train":[0],"val":[],"test_id":[1],"test_ood":[]}"#,
        )
        .unwrap();
        files
    }

    #[test]
    fn two_node_files_load() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_files(dir.path(), "0.5\n-1.25\n", "0 1\n", "0\n1\n");
        let g = load_graph(&files).unwrap();
        assert_eq!((g.n(), g.dim(), g.num_classes()), (2, 1, 2));
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn dangling_edge_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_files(dir.path(), "0.5\n1.0\n", "0 1\n0 5\n", "0\n1\n");
        let err = load_graph(&files).unwrap_err();
        assert!(
            matches!(&err, GraphError::Parse { line: 2, message, .. } if message.contains("out of range")),
            "{err}"
        );
    }

    #[test]
    fn bad_float_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_files(dir.path(), "0.5\nabc\n", "", "0\n1\n");
        assert!(matches!(
            load_graph(&files).unwrap_err(),
            GraphError::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn label_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_files(dir.path(), "0.5\n1.0\n", "", "0\n1\n1\n");
        assert!(matches!(
            load_graph(&files).unwrap_err(),
            GraphError::Inconsistent(_)
        ));
    }
}
