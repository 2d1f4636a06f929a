use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::autodiff::Tensor;
use crate::graph::{Graph, Splits};

/// Contextual stochastic block model.
///
/// Class `c` has mean `mu_sep / sqrt(2) * e_c`, so any two class means are
/// exactly `mu_sep` apart; this needs `dim >= classes`. Features add
/// `noise * N(0, 1)` per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsbmParams {
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub mu_sep: f64,
    pub noise: f64,
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for CsbmParams {
    fn default() -> Self {
        Self {
            n: 500,
            classes: 4,
            dim: 16,
            p_in: 0.05,
            p_out: 0.005,
            mu_sep: 2.0,
            noise: 1.0,
            seed: 0,
            train_frac: 0.4,
            val_frac: 0.2,
        }
    }
}

impl CsbmParams {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidParams(m));
        if self.classes == 0 || self.n < self.classes {
            return bad(format!(
                "need n >= classes >= 1, got n={} C={}",
                self.n, self.classes
            ));
        }
        if self.dim < self.classes {
            return bad(format!(
                "feature dimension {} is smaller than class count {}",
                self.dim, self.classes
            ));
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return bad(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            ));
        }
        if !(self.mu_sep >= 0.0 && self.mu_sep.is_finite()) || !(self.noise >= 0.0) {
            return bad("mu_sep and noise must be finite and non-negative".into());
        }
        let fracs = [self.train_frac, self.val_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || self.train_frac + self.val_frac > 1.0 {
            return bad("split fractions must lie in [0, 1] and sum to at most 1".into());
        }
        if self.p_in == self.p_out && self.mu_sep == 0.0 {
            return Err(BenchError::Unidentifiable);
        }
        Ok(())
    }
}

/// Samples a labeled graph with train / val / test_id splits.
///
/// Labels are a shuffled balanced assignment, so every class appears.
pub fn gen_csbm(params: &CsbmParams) -> Result<Graph, BenchError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.n;

    let mut labels: Vec<usize> = (0..n).map(|i| i % params.classes).collect();
    labels.shuffle(&mut rng);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] {
                params.p_in
            } else {
                params.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let scale = params.mu_sep / std::f64::consts::SQRT_2;
    let mut features = Tensor::randn(n, params.dim, &mut rng).map(|z| params.noise * z);
    for (i, &c) in labels.iter().enumerate() {
        features.row_mut(i)[c] += scale;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (params.train_frac * n as f64).round() as usize;
    let n_val = ((params.val_frac * n as f64).round() as usize).min(n - n_train);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let splits = Splits {
        train: sorted(&order[..n_train]),
        val: sorted(&order[n_train..n_train + n_val]),
        test_id: sorted(&order[n_train + n_val..]),
        ..Splits::default()
    };

    Ok(Graph::new(
        features,
        edges,
        labels.into_iter().map(Some).collect(),
        params.classes,
        splits,
    )?)
}
