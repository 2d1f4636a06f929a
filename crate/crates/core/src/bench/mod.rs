//! Synthetic in-distribution graphs and distribution shifts.
//!
//! Every generator is a pure function of its inputs and seed.

mod csbm;
mod shift;

pub use csbm::{gen_csbm, CsbmParams};
pub use shift::{
    apply_feature_shift, apply_shift, apply_shifts, apply_structure_shift, label_leave_out_split,
    ood_view, LabelSplit,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::GraphError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("classes are unidentifiable: no structural and no feature signal")]
    Unidentifiable,
    #[error("cannot rewire {needed} edges: only {available} non-edges exist")]
    CannotRewire { needed: usize, available: usize },
    #[error("invalid shift: {0}")]
    InvalidShift(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// What a shift changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftKind {
    /// Replace a fraction `intensity` of edges with random non-edges.
    Structure,
    /// Mix a fraction `intensity` of nodes with a random partner:
    /// `mix * x_i + (1 - mix) * x_j`.
    Feature { mix: f64 },
    /// Move the listed classes out of the labeled splits.
    Label { classes: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub intensity: f64,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn structure(intensity: f64, seed: u64) -> Self {
        Self {
            kind: ShiftKind::Structure,
            intensity,
            seed,
        }
    }

    pub fn feature(mix: f64, seed: u64) -> Self {
        Self {
            kind: ShiftKind::Feature { mix },
            intensity: 1.0,
            seed,
        }
    }

    pub fn label(classes: Vec<usize>) -> Self {
        Self {
            kind: ShiftKind::Label { classes },
            intensity: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(BenchError::InvalidShift(format!(
                "intensity {} outside [0, 1]",
                self.intensity
            )));
        }
        match &self.kind {
            ShiftKind::Feature { mix } if !(0.0..=1.0).contains(mix) => Err(
                BenchError::InvalidShift(format!("mixing weight {mix} outside [0, 1]")),
            ),
            ShiftKind::Label { classes } if classes.is_empty() => Err(BenchError::InvalidShift(
                "held-out class set is empty".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ShiftKind::Structure => "structure",
            ShiftKind::Feature { .. } => "feature",
            ShiftKind::Label { .. } => "label",
        }
    }
}

impl fmt::Display for ShiftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ShiftKind::Structure => write!(f, "structure:{}", self.intensity),
            ShiftKind::Feature { mix } if self.intensity == 1.0 => write!(f, "feature:{mix}"),
            ShiftKind::Feature { mix } => write!(f, "feature:{mix}@{}", self.intensity),
            ShiftKind::Label { classes } => {
                let list: Vec<String> = classes.iter().map(usize::to_string).collect();
                write!(f, "label:{}", list.join(","))
            }
        }
    }
}

/// A `+`-joined chain of shifts, applied left to right.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftChain(pub Vec<ShiftSpec>);

impl ShiftChain {
    /// Gives each link its own seed derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        for (i, s) in self.0.iter_mut().enumerate() {
            s.seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64 + 1);
        }
        self
    }

    pub fn is_label(&self) -> bool {
        self.0
            .iter()
            .any(|s| matches!(s.kind, ShiftKind::Label { .. }))
    }

    /// Short name for file stems, e.g. `structure+feature`.
    pub fn stem(&self) -> String {
        self.0
            .iter()
            .map(ShiftSpec::name)
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl fmt::Display for ShiftChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ShiftSpec::to_string).collect();
        f.write_str(&parts.join("+"))
    }
}

/// Parses `structure:0.5`, `feature:0.5`, `feature:0.5@0.3` (mixing weight,
/// then fraction of nodes mixed), `label:4,5,6` and `+`-joined chains.
impl FromStr for ShiftChain {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |msg: String| BenchError::InvalidShift(msg);
        let mut specs = Vec::new();
        for part in s.split('+') {
            let (kind, arg) = part
                .split_once(':')
                .ok_or_else(|| bad(format!("{part:?}: expected kind:value")))?;
            let num = |t: &str| -> Result<f64, BenchError> {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("{part:?}: bad number {t:?}")))
            };
            let spec = match kind.trim() {
                "structure" => ShiftSpec::structure(num(arg)?, 0),
                "feature" => match arg.split_once('@') {
                    Some((mix, frac)) => ShiftSpec {
                        intensity: num(frac)?,
                        ..ShiftSpec::feature(num(mix)?, 0)
                    },
                    None => ShiftSpec::feature(num(arg)?, 0),
                },
                "label" => {
                    if arg.trim() == "all" {
                        return Err(bad("cannot hold out every class".into()));
                    }
                    let classes = arg
                        .split(',')
                        .map(|t| {
                            t.trim()
                                .parse::<usize>()
                                .map_err(|_| bad(format!("{part:?}: bad class {t:?}")))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    ShiftSpec::label(classes)
                }
                other => return Err(bad(format!("unknown shift kind {other:?}"))),
            };
            spec.validate()?;
            specs.push(spec);
        }
        let chain = ShiftChain(specs);
        if chain.is_label() && chain.0.len() > 1 {
            return Err(bad("label shift cannot be chained".into()));
        }
        Ok(chain)
    }
}
