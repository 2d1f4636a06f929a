//! Loss terms: cross-entropy, Gaussian KL, the variational bottleneck,
//! the pairwise similarity MI estimate, reconstruction, and the energy
//! margin regularizer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::model::{reconstruct, LatentVars, PairHead, ReconHead};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

type Result<T> = std::result::Result<T, ObjectiveError>;

/// Mean over `rows` of `KL(N(mu, sigma^2) || N(0, I))`, summed over latent
/// dimensions.
pub fn kl_standard_normal(tape: &mut Tape, latent: LatentVars, rows: &[usize]) -> Result<Var> {
    if rows.is_empty() {
        return Err(AutodiffError::Empty {
            op: "kl_standard_normal",
        }
        .into());
    }
    let mu = tape.select_rows(latent.mu, rows)?;
    let sigma = tape.select_rows(latent.sigma, rows)?;
    let mu2 = tape.square(mu)?;
    let var = tape.square(sigma)?;
    let log_sigma = tape.log(sigma)?;
    let log_var = tape.scale(log_sigma, 2.0)?;
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, log_var)?;
    let per_entry = tape.add_scalar(b, -1.0)?;
    let total = tape.sum(per_entry)?;
    Ok(tape.scale(total, 0.5 / rows.len() as f64)?)
}

/// Closed-form KL for plain values, same reduction as
/// [`kl_standard_normal`] over all rows.
pub fn kl_value(mu: &Tensor, sigma: &Tensor) -> f64 {
    let total: f64 = mu
        .data()
        .iter()
        .zip(sigma.data())
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum();
    total / mu.rows() as f64
}

/// Mean negative log-softmax of the true class over `rows`.
pub fn cross_entropy(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    rows: &[usize],
) -> Result<Var> {
    if rows.is_empty() {
        return Err(AutodiffError::Empty {
            op: "cross_entropy",
        }
        .into());
    }
    let picked = tape.select_rows(logits, rows)?;
    let logp = tape.log_softmax_rows(picked)?;
    let true_class: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
    let ll = tape.pick_cols(logp, &true_class)?;
    let mean = tape.mean(ll)?;
    Ok(tape.neg(mean)?)
}

/// Cross-entropy and KL of one bottleneck.
#[derive(Clone, Copy, Debug)]
pub struct VibTerms {
    pub total: Var,
    pub ce: Var,
    pub kl: Var,
}

/// `CE(logits, labels on rows) + beta * KL(latent on rows)`.
pub fn vib_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    rows: &[usize],
    latent: LatentVars,
    beta: f64,
) -> Result<VibTerms> {
    if !(beta >= 0.0) {
        return Err(ObjectiveError::Config(format!(
            "beta must be >= 0, got {beta}"
        )));
    }
    let ce = cross_entropy(tape, logits, labels, rows)?;
    let kl = kl_standard_normal(tape, latent, rows)?;
    let weighted = tape.scale(kl, beta)?;
    let total = tape.add(ce, weighted)?;
    Ok(VibTerms { total, ce, kl })
}

/// Scaled dot-product similarity `(S1 W1)(S2 W2)^T / sqrt(p)`.
fn similarity(tape: &mut Tape, s1: Var, s2: Var, head: &PairHead<Var>) -> Result<Var> {
    let n = tape.value(s1).rows();
    if n == 0 {
        return Err(AutodiffError::Empty {
            op: "club_estimate",
        }
        .into());
    }
    if tape.value(s2).rows() != n {
        return Err(AutodiffError::ShapeMismatch {
            op: "club_estimate",
            left: tape.value(s1).shape(),
            right: tape.value(s2).shape(),
        }
        .into());
    }
    let p1 = tape.matmul(s1, head.left)?;
    let p2 = tape.matmul(s2, head.right)?;
    let p = tape.value(p1).cols().max(1) as f64;
    let p2t = tape.transpose(p2)?;
    let raw = tape.matmul(p1, p2t)?;
    Ok(tape.scale(raw, 1.0 / p.sqrt())?)
}

/// Contrastive log-ratio estimate: mean matched similarity minus mean
/// similarity over all pairs.
pub fn club_estimate(tape: &mut Tape, s1: Var, s2: Var, head: &PairHead<Var>) -> Result<Var> {
    let s = similarity(tape, s1, s2, head)?;
    let diag = tape.diag(s)?;
    let positive = tape.mean(diag)?;
    let all = tape.mean(s)?;
    Ok(tape.sub(positive, all)?)
}

/// Training loss of the similarity head: classify each row's matched
/// partner among all candidates, `-mean_i log softmax(S_i)_i`.
pub fn club_head_loss(tape: &mut Tape, s1: Var, s2: Var, head: &PairHead<Var>) -> Result<Var> {
    let s = similarity(tape, s1, s2, head)?;
    let logp = tape.log_softmax_rows(s)?;
    let diag = tape.diag(logp)?;
    let mean = tape.mean(diag)?;
    Ok(tape.neg(mean)?)
}

/// `||X - recon(Z)||^2 / (n d)`.
pub fn recon_cind_loss(
    tape: &mut Tape,
    z_sample: Var,
    x: &Tensor,
    recon: &ReconHead<Var>,
) -> Result<Var> {
    let x_hat = reconstruct(tape, z_sample, recon)?;
    Ok(tape.mean_squared_error(x_hat, x.clone())?)
}

/// Direction of the energy margin hinges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginOrientation {
    /// `max(0, t_id - e)^2` on ID nodes and `max(0, e - t_ood)^2` on
    /// exposed OOD nodes.
    #[default]
    Written,
    /// `max(0, e - t_id)^2` on ID nodes and `max(0, t_ood - e)^2` on
    /// exposed OOD nodes, which pushes ID energies down and OOD up.
    Flipped,
}

/// `-logsumexp` of each row, as an `n x 1` column.
pub fn energy(tape: &mut Tape, logits: Var) -> Result<Var> {
    let lse = tape.log_sum_exp_rows(logits)?;
    Ok(tape.neg(lse)?)
}

fn mean_sq_hinge(tape: &mut Tape, e: Var, threshold: f64, above: bool) -> Result<Var> {
    // above: penalize e > threshold
    let shifted = tape.add_scalar(e, -threshold)?;
    let signed = if above { shifted } else { tape.neg(shifted)? };
    let hinge = tape.relu(signed)?;
    let sq = tape.square(hinge)?;
    Ok(tape.mean(sq)?)
}

/// Squared-hinge margin loss on ID and exposed OOD energies (`n x 1`
/// columns).
pub fn energy_reg_loss(
    tape: &mut Tape,
    e_id: Var,
    e_ood: Var,
    t_id: f64,
    t_ood: f64,
    orientation: MarginOrientation,
) -> Result<Var> {
    if t_id > t_ood {
        return Err(ObjectiveError::Config(format!(
            "t_id ({t_id}) must not exceed t_ood ({t_ood})"
        )));
    }
    let (id_above, ood_above) = match orientation {
        MarginOrientation::Written => (false, true),
        MarginOrientation::Flipped => (true, false),
    };
    let a = mean_sq_hinge(tape, e_id, t_id, id_above)?;
    let b = mean_sq_hinge(tape, e_ood, t_ood, ood_above)?;
    Ok(tape.add(a, b)?)
}

/// Coefficients applied when composing per-network totals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub lambda_cind: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Zero when exposure is off.
    pub lambda_oe: f64,
}

/// Scalar value of every component on one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub vib_z: f64,
    pub vib_v: f64,
    pub vib_q: f64,
    pub ce_z: f64,
    pub ce_v: f64,
    pub ce_q: f64,
    pub kl_z: f64,
    pub kl_v: f64,
    pub kl_q: f64,
    pub cind: f64,
    pub pmi_zv: f64,
    pub pmi_zq: f64,
    pub pmi_vq: f64,
    pub pair_head: f64,
    pub energy_reg: f64,
    /// Z, V and Q network totals.
    pub total_per_network: [f64; 3],
}

impl LossBreakdown {
    /// Fills `total_per_network` from the components:
    /// Z gets `vib_z + l_cind cind + a1 pmi_zv + a2 pmi_zq + l_oe energy_reg`,
    /// V gets `vib_v + a1 pmi_zv + a3 pmi_vq`,
    /// Q gets `vib_q + a2 pmi_zq + a3 pmi_vq`.
    pub fn with_totals(mut self, w: &Weights) -> Self {
        self.total_per_network = [
            self.vib_z
                + w.lambda_cind * self.cind
                + w.alpha1 * self.pmi_zv
                + w.alpha2 * self.pmi_zq
                + w.lambda_oe * self.energy_reg,
            self.vib_v + w.alpha1 * self.pmi_zv + w.alpha3 * self.pmi_vq,
            self.vib_q + w.alpha2 * self.pmi_zq + w.alpha3 * self.pmi_vq,
        ];
        self
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    /// Name of the first non-finite component.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        let fields = [
            ("vib_z", self.vib_z),
            ("vib_v", self.vib_v),
            ("vib_q", self.vib_q),
            ("cind", self.cind),
            ("pmi_zv", self.pmi_zv),
            ("pmi_zq", self.pmi_zq),
            ("pmi_vq", self.pmi_vq),
            ("pair_head", self.pair_head),
            ("energy_reg", self.energy_reg),
        ];
        fields.iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| *n)
    }
}

/// Composes per-network totals from independently computed components.
pub fn tide_total(components: LossBreakdown, weights: &Weights) -> LossBreakdown {
    components.with_totals(weights)
}
