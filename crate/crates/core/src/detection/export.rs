use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// One line of a score dump.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub node_id: usize,
    pub score: f64,
    pub is_ood: bool,
    pub predicted: usize,
    pub label: Option<usize>,
}

/// Columns `node_id,score,is_ood,predicted,label`; unlabeled nodes get
/// label `-1`.
pub fn write_scores_csv(path: impl AsRef<Path>, rows: &[ScoreRow]) -> io::Result<()> {
    let mut out = String::from("node_id,score,is_ood,predicted,label\n");
    for r in rows {
        let label = r.label.map_or(-1, |l| l as i64);
        writeln!(
            out,
            "{},{:?},{},{},{}",
            r.node_id,
            r.score,
            u8::from(r.is_ood),
            r.predicted,
            label
        )
        .expect("string write");
    }
    fs::write(path, out)
}

/// Counts of ID and OOD values over shared equal-width bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    /// `bins + 1` edges from `min` to `max`.
    pub edges: Vec<f64>,
    pub id: Vec<usize>,
    pub ood: Vec<usize>,
}

/// Bins over the joint range of both samples; the last bin is closed.
pub fn histogram(id: &[f64], ood: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let all = id.iter().chain(ood);
    let min = all.clone().copied().fold(f64::INFINITY, f64::min);
    let max = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let (min, max) = if min.is_finite() {
        (min, max)
    } else {
        (0.0, 0.0)
    };
    let width = (max - min) / bins as f64;
    let edges = (0..=bins)
        .map(|i| {
            if i == bins {
                max
            } else {
                min + width * i as f64
            }
        })
        .collect();
    let bin = |v: f64| {
        if width > 0.0 {
            (((v - min) / width) as usize).min(bins - 1)
        } else {
            0
        }
    };
    let mut h = Histogram {
        min,
        max,
        edges,
        id: vec![0; bins],
        ood: vec![0; bins],
    };
    for &v in id {
        h.id[bin(v)] += 1;
    }
    for &v in ood {
        h.ood[bin(v)] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_are_conserved() {
        let id = [0.0, 0.5, 1.0, 1.0];
        let ood = [2.0, 3.0, -1.0];
        let h = histogram(&id, &ood, 64);
        assert_eq!(h.id.iter().sum::<usize>(), 4);
        assert_eq!(h.ood.iter().sum::<usize>(), 3);
        assert_eq!(h.edges.len(), 65);
        assert_eq!((h.min, h.max), (-1.0, 3.0));
        assert_eq!(h.ood[63], 1);
        assert_eq!(h.ood[0], 1);
    }

    #[test]
    fn constant_values_land_in_first_bin() {
        let h = histogram(&[2.0, 2.0], &[2.0], 8);
        assert_eq!(h.id[0], 2);
        assert_eq!(h.ood[0], 1);
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_scores_csv(
            &path,
            &[
                ScoreRow {
                    node_id: 3,
                    score: -1.5,
                    is_ood: false,
                    predicted: 2,
                    label: Some(2),
                },
                ScoreRow {
                    node_id: 7,
                    score: 0.1,
                    is_ood: true,
                    predicted: 0,
                    label: None,
                },
            ],
        )
        .unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "node_id,score,is_ood,predicted,label\n3,-1.5,0,2,2\n7,0.1,1,0,-1\n"
        );
    }
}
