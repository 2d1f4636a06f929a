use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::objectives::{MarginOrientation, Weights};

/// Which loss terms a run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Cross-entropy on the joint network only, through the posterior mean.
    Sl,
    /// Three independent variational bottlenecks.
    Ib,
    /// Bottlenecks plus the reconstruction term on the joint network.
    IbCind,
    /// Everything, including the pairwise MI penalties.
    Tide,
}

impl ObjectiveMode {
    pub const ALL: [ObjectiveMode; 4] = [Self::Sl, Self::Ib, Self::IbCind, Self::Tide];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sl => "sl",
            Self::Ib => "ib",
            Self::IbCind => "ib_cind",
            Self::Tide => "tide",
        }
    }

    pub fn uses_cind(self) -> bool {
        matches!(self, Self::IbCind | Self::Tide)
    }

    pub fn uses_pmi(self) -> bool {
        self == Self::Tide
    }
}

impl fmt::Display for ObjectiveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown objective {s:?}; expected sl, ib, ib_cind or tide"))
    }
}

/// Every trade-off weight and optimizer setting of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TideConfig {
    pub beta_z: f64,
    pub beta_v: f64,
    pub beta_q: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub lambda_cind: f64,
    pub lambda_oe: f64,
    pub prop_alpha: f64,
    pub prop_k: usize,
    pub t_id: f64,
    pub t_ood: f64,
    pub margin: MarginOrientation,
    pub lr: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub seed: u64,
    pub exposure_enabled: bool,
    pub objective_mode: ObjectiveMode,
    /// Cap on the nodes entering each pairwise MI term per epoch; a fresh
    /// uniform subset is drawn when the graph is larger.
    pub pmi_nodes: usize,
}

impl Default for TideConfig {
    fn default() -> Self {
        Self {
            beta_z: 0.001,
            beta_v: 0.001,
            beta_q: 0.001,
            alpha1: 0.01,
            alpha2: 0.01,
            alpha3: 0.01,
            lambda_cind: 1.0,
            lambda_oe: 1.0,
            prop_alpha: 0.5,
            prop_k: 2,
            t_id: -5.0,
            t_ood: -1.0,
            margin: MarginOrientation::Written,
            lr: 0.01,
            epochs: 200,
            hidden: 64,
            seed: 0,
            exposure_enabled: false,
            objective_mode: ObjectiveMode::Tide,
            pmi_nodes: 1024,
        }
    }
}

impl TideConfig {
    /// Sets one weight for all three bottlenecks.
    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta_z = beta;
        self.beta_v = beta;
        self.beta_q = beta;
        self
    }

    /// Sets one weight for all three pairwise terms.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha1 = alpha;
        self.alpha2 = alpha;
        self.alpha3 = alpha;
        self
    }

    pub fn with_mode(mut self, mode: ObjectiveMode) -> Self {
        self.objective_mode = mode;
        self
    }

    /// Supervised baseline: joint network only, no bottleneck weight.
    pub fn sl_baseline(&self) -> Self {
        self.clone().with_mode(ObjectiveMode::Sl).with_beta(0.0)
    }

    /// Weights actually in effect for this mode.
    pub fn weights(&self) -> Weights {
        let mode = self.objective_mode;
        let alpha = |a: f64| if mode.uses_pmi() { a } else { 0.0 };
        Weights {
            lambda_cind: if mode.uses_cind() {
                self.lambda_cind
            } else {
                0.0
            },
            alpha1: alpha(self.alpha1),
            alpha2: alpha(self.alpha2),
            alpha3: alpha(self.alpha3),
            lambda_oe: if self.exposure_enabled {
                self.lambda_oe
            } else {
                0.0
            },
        }
    }

    /// Range checks. The trade-off weights must lie in `[0, 1]`, the span
    /// of their search grids; the margins in `[-9, 0]` with `t_id < t_ood`
    /// when exposure is on.
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        let unit = [
            ("beta_z", self.beta_z),
            ("beta_v", self.beta_v),
            ("beta_q", self.beta_q),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("lambda_cind", self.lambda_cind),
            ("prop_alpha", self.prop_alpha),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.lambda_oe >= 0.0 && self.lambda_oe.is_finite()) {
            return bad(format!(
                "lambda_oe = {} must be non-negative",
                self.lambda_oe
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if self.hidden == 0 || self.pmi_nodes == 0 {
            return bad("hidden and pmi_nodes must be positive".into());
        }
        if self.exposure_enabled {
            for (name, t) in [("t_id", self.t_id), ("t_ood", self.t_ood)] {
                if !(-9.0..=0.0).contains(&t) {
                    return bad(format!("{name} = {t} outside [-9, 0]"));
                }
            }
            if self.t_id >= self.t_ood {
                return bad(format!(
                    "t_id ({}) must be below t_ood ({})",
                    self.t_id, self.t_ood
                ));
            }
        }
        Ok(())
    }
}
