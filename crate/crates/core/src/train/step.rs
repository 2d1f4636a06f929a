use rand::seq::index;
use rand::Rng;

use super::{ObjectiveMode, TideConfig, TrainError};
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::graph::Graph;
use crate::model::{
    encode_feature, encode_joint, encode_structure, predict_logits, reparameterize, GraphContext,
    PairHead, TideModel,
};
use crate::objectives::{
    club_estimate, club_head_loss, cross_entropy, energy, energy_reg_loss, recon_cind_loss,
    vib_loss, LossBreakdown, ObjectiveError,
};

/// Everything a training forward pass reads from the graphs.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub ctx: GraphContext,
    /// Class of every node; unlabeled nodes hold 0 and never enter a loss.
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub exposure: Option<ExposureData>,
}

#[derive(Clone, Debug)]
pub struct ExposureData {
    pub ctx: GraphContext,
    pub rows: Vec<usize>,
}

impl TrainData {
    pub fn new(g: &Graph, exposure: Option<&Graph>) -> Result<Self, TrainError> {
        if g.splits().train.is_empty() {
            return Err(TrainError::Config("graph has no training nodes".into()));
        }
        let exposure = match exposure {
            None => None,
            Some(o) => {
                if o.dim() != g.dim() {
                    return Err(TrainError::Config(format!(
                        "exposure graph has {} features, training graph {}",
                        o.dim(),
                        g.dim()
                    )));
                }
                if o.splits().exposure.is_empty() {
                    return Err(TrainError::Config(
                        "exposure graph has no exposure nodes".into(),
                    ));
                }
                Some(ExposureData {
                    ctx: GraphContext::new(o),
                    rows: o.splits().exposure.clone(),
                })
            }
        };
        Ok(Self {
            ctx: GraphContext::new(g),
            labels: g.labels().iter().map(|l| l.unwrap_or(0)).collect(),
            train: g.splits().train.clone(),
            val: g.splits().val.clone(),
            exposure,
        })
    }

    pub fn n(&self) -> usize {
        self.ctx.n()
    }
}

/// Standard normal draws for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    pub z: Tensor,
    pub v: Tensor,
    pub q: Tensor,
    /// Rows entering the pairwise MI terms; `None` means all.
    pub pmi_rows: Option<Vec<usize>>,
}

impl Noise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, n: usize, latent: usize, pmi_nodes: usize) -> Self {
        let z = Tensor::randn(n, latent, rng);
        let v = Tensor::randn(n, latent, rng);
        let q = Tensor::randn(n, latent, rng);
        let pmi_rows = (n > pmi_nodes).then(|| {
            let mut rows = index::sample(rng, n, pmi_nodes).into_vec();
            rows.sort_unstable();
            rows
        });
        Self { z, v, q, pmi_rows }
    }

    pub fn zeros(n: usize, latent: usize) -> Self {
        Self {
            z: Tensor::zeros(n, latent),
            v: Tensor::zeros(n, latent),
            q: Tensor::zeros(n, latent),
            pmi_rows: None,
        }
    }
}

/// Failure inside a named loss component.
#[derive(Debug)]
pub struct StepError {
    pub component: &'static str,
    pub source: ObjectiveError,
}

impl StepError {
    pub fn into_train_error(self, epoch: usize) -> TrainError {
        match self.source {
            ObjectiveError::Autodiff(AutodiffError::NonFinite { op }) => TrainError::NonFinite {
                epoch,
                component: format!("{} ({op})", self.component),
            },
            ObjectiveError::Config(m) => TrainError::Config(m),
            ObjectiveError::Autodiff(e) => TrainError::Autodiff {
                component: self.component,
                source: e,
            },
        }
    }
}

fn at<T, E: Into<ObjectiveError>>(
    component: &'static str,
    r: Result<T, E>,
) -> Result<T, StepError> {
    r.map_err(|e| StepError {
        component,
        source: e.into(),
    })
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// Sum of every distinct term; one backward pass of this gives each
    /// network the gradient of its own total.
    pub objective: Var,
    /// Z, V and Q network totals.
    pub totals: [Var; 3],
    /// Training loss of the similarity heads, when present.
    pub pair_head: Option<Var>,
    /// Joint-network training logits.
    pub logits_z: Var,
    pub cind: Option<Var>,
    pub losses: LossBreakdown,
}

fn weighted_sum(tape: &mut Tape, terms: &[(f64, Var)]) -> Result<Var, AutodiffError> {
    let mut acc = tape.scale(terms[0].1, terms[0].0)?;
    for &(c, v) in &terms[1..] {
        let s = tape.scale(v, c)?;
        acc = tape.add(acc, s)?;
    }
    Ok(acc)
}

/// Builds every loss component for `cfg.objective_mode` on `tape`.
pub fn forward_step(
    tape: &mut Tape,
    m: &TideModel<Var>,
    data: &TrainData,
    cfg: &TideConfig,
    noise: &Noise,
) -> Result<StepOutput, StepError> {
    let w = cfg.weights();
    let mode = cfg.objective_mode;
    let ctx = &data.ctx;
    let (labels, rows) = (&data.labels, &data.train);
    let mut losses = LossBreakdown::default();
    let val = |tape: &Tape, v: Var| tape.value(v).item();

    let z = at("encode_z", encode_joint(tape, m, ctx))?;
    let zero = tape.constant(Tensor::scalar(0.0));
    let mut terms: Vec<(f64, Var)> = Vec::new();
    let mut z_terms: Vec<(f64, Var)> = Vec::new();
    let mut v_terms: Vec<(f64, Var)> = vec![(1.0, zero)];
    let mut q_terms: Vec<(f64, Var)> = vec![(1.0, zero)];
    let mut pair_head = None;
    let mut cind = None;
    let mut logits_mu = None;

    let logits_z = if mode == ObjectiveMode::Sl {
        let logits = at(
            "logits_z",
            predict_logits(tape, z.mu, &ctx.a_norm, &m.head_z),
        )?;
        let ce = at("vib_z", cross_entropy(tape, logits, labels, rows))?;
        losses.ce_z = val(tape, ce);
        losses.vib_z = losses.ce_z;
        terms.push((1.0, ce));
        z_terms.push((1.0, ce));
        logits_mu = Some(logits);
        logits
    } else {
        let v = at("encode_v", encode_feature(tape, m, ctx))?;
        let q = at("encode_q", encode_structure(tape, m, ctx))?;
        let sz = at("sample_z", reparameterize(tape, z, noise.z.clone()))?;
        let sv = at("sample_v", reparameterize(tape, v, noise.v.clone()))?;
        let sq = at("sample_q", reparameterize(tape, q, noise.q.clone()))?;
        let lz = at("logits_z", predict_logits(tape, sz, &ctx.a_norm, &m.head_z))?;
        let lv = at("logits_v", predict_logits(tape, sv, &ctx.a_norm, &m.head_v))?;
        let lq = at("logits_q", predict_logits(tape, sq, &ctx.a_norm, &m.head_q))?;
        let vz = at("vib_z", vib_loss(tape, lz, labels, rows, z, cfg.beta_z))?;
        let vv = at("vib_v", vib_loss(tape, lv, labels, rows, v, cfg.beta_v))?;
        let vq = at("vib_q", vib_loss(tape, lq, labels, rows, q, cfg.beta_q))?;
        for (t, (vib, ce, kl)) in [
            (vz, (&mut losses.vib_z, &mut losses.ce_z, &mut losses.kl_z)),
            (vv, (&mut losses.vib_v, &mut losses.ce_v, &mut losses.kl_v)),
            (vq, (&mut losses.vib_q, &mut losses.ce_q, &mut losses.kl_q)),
        ] {
            *vib = val(tape, t.total);
            *ce = val(tape, t.ce);
            *kl = val(tape, t.kl);
        }
        terms.extend([(1.0, vz.total), (1.0, vv.total), (1.0, vq.total)]);
        z_terms.push((1.0, vz.total));
        v_terms.push((1.0, vv.total));
        q_terms.push((1.0, vq.total));

        if mode.uses_cind() {
            let c = at("cind", recon_cind_loss(tape, sz, &ctx.features, &m.recon))?;
            losses.cind = val(tape, c);
            terms.push((w.lambda_cind, c));
            z_terms.push((w.lambda_cind, c));
            cind = Some(c);
        }

        if mode.uses_pmi() {
            let pick = |tape: &mut Tape, s: Var| match &noise.pmi_rows {
                Some(r) => tape.select_rows(s, r),
                None => Ok(s),
            };
            let pz = at("pmi", pick(tape, sz))?;
            let pv = at("pmi", pick(tape, sv))?;
            let pq = at("pmi", pick(tape, sq))?;
            let mut head_terms = Vec::new();
            for (name, s1, s2, head, coef, slot) in [
                ("pmi_zv", pz, pv, &m.pair_zv, w.alpha1, &mut losses.pmi_zv),
                ("pmi_zq", pz, pq, &m.pair_zq, w.alpha2, &mut losses.pmi_zq),
                ("pmi_vq", pv, pq, &m.pair_vq, w.alpha3, &mut losses.pmi_vq),
            ] {
                let frozen = PairHead {
                    left: tape.detach(head.left),
                    right: tape.detach(head.right),
                };
                let est = at(name, club_estimate(tape, s1, s2, &frozen))?;
                *slot = val(tape, est);
                terms.push((coef, est));
                let (d1, d2) = (tape.detach(s1), tape.detach(s2));
                head_terms.push((1.0, at("pair_head", club_head_loss(tape, d1, d2, head))?));
                (name == "pmi_zv" || name == "pmi_zq").then(|| z_terms.push((coef, est)));
                (name == "pmi_zv" || name == "pmi_vq").then(|| v_terms.push((coef, est)));
                (name == "pmi_zq" || name == "pmi_vq").then(|| q_terms.push((coef, est)));
            }
            let heads = at("pair_head", weighted_sum(tape, &head_terms))?;
            losses.pair_head = val(tape, heads);
            terms.push((1.0, heads));
            pair_head = Some(heads);
        }
        lz
    };

    if let Some(exposure) = &data.exposure {
        if cfg.exposure_enabled {
            let logits = match logits_mu {
                Some(l) => l,
                None => at(
                    "energy_reg",
                    predict_logits(tape, z.mu, &ctx.a_norm, &m.head_z),
                )?,
            };
            let id_logits = at("energy_reg", tape.select_rows(logits, rows))?;
            let e_id = at("energy_reg", energy(tape, id_logits))?;
            let oz = at("energy_reg", encode_joint(tape, m, &exposure.ctx))?;
            let ol = at(
                "energy_reg",
                predict_logits(tape, oz.mu, &exposure.ctx.a_norm, &m.head_z),
            )?;
            let ol = at("energy_reg", tape.select_rows(ol, &exposure.rows))?;
            let e_ood = at("energy_reg", energy(tape, ol))?;
            let reg = at(
                "energy_reg",
                energy_reg_loss(tape, e_id, e_ood, cfg.t_id, cfg.t_ood, cfg.margin),
            )?;
            losses.energy_reg = val(tape, reg);
            terms.push((w.lambda_oe, reg));
            z_terms.push((w.lambda_oe, reg));
        }
    }

    let objective = at("objective", weighted_sum(tape, &terms))?;
    let totals = [
        at("total_z", weighted_sum(tape, &z_terms))?,
        at("total_v", weighted_sum(tape, &v_terms))?,
        at("total_q", weighted_sum(tape, &q_terms))?,
    ];
    let losses = losses.with_totals(&w);
    if let Some(component) = losses.first_non_finite() {
        return Err(StepError {
            component,
            source: AutodiffError::NonFinite { op: component }.into(),
        });
    }
    Ok(StepOutput {
        objective,
        totals,
        pair_head,
        logits_z,
        cind,
        losses,
    })
}
