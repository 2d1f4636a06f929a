use std::sync::Arc;

use super::{Dense, Encoder, Head, LayerKind, ReconHead, TideModel, SIGMA_FLOOR};
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::graph::{Graph, SparseMatrix};

type Result<T> = std::result::Result<T, AutodiffError>;

/// Per-graph inputs shared by every forward pass.
#[derive(Clone, Debug)]
pub struct GraphContext {
    pub a_norm: Arc<SparseMatrix>,
    pub features: Tensor,
    /// Constant `n x 1` input of the structure encoder.
    pub ones: Tensor,
}

impl GraphContext {
    pub fn new(g: &Graph) -> Self {
        Self {
            a_norm: Arc::new(g.sym_normalized_adjacency()),
            features: g.features().clone(),
            ones: Tensor::ones(g.n(), 1),
        }
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }
}

/// Per-node Gaussian posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution {
    pub mu: Tensor,
    pub sigma: Tensor,
}

/// A posterior still attached to a tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentVars {
    pub mu: Var,
    pub sigma: Var,
}

impl LatentVars {
    pub fn values(&self, tape: &Tape) -> LatentDistribution {
        LatentDistribution {
            mu: tape.value(self.mu).clone(),
            sigma: tape.value(self.sigma).clone(),
        }
    }
}

fn affine(tape: &mut Tape, x: Var, layer: &Dense<Var>) -> Result<Var> {
    let xw = tape.matmul(x, layer.weight)?;
    match layer.bias {
        Some(b) => tape.add_row(xw, b),
        None => Ok(xw),
    }
}

/// `A_norm (H W) + b`, then ReLU when `activate`.
pub fn gcn_layer(
    tape: &mut Tape,
    h: Var,
    a_norm: &Arc<SparseMatrix>,
    layer: &Dense<Var>,
    activate: bool,
) -> Result<Var> {
    let hw = tape.matmul(h, layer.weight)?;
    let mut out = tape.spmm(a_norm, hw)?;
    if let Some(b) = layer.bias {
        out = tape.add_row(out, b)?;
    }
    if activate {
        out = tape.relu(out)?;
    }
    Ok(out)
}

fn apply(
    tape: &mut Tape,
    kind: LayerKind,
    x: Var,
    a_norm: &Arc<SparseMatrix>,
    layer: &Dense<Var>,
    activate: bool,
) -> Result<Var> {
    match kind {
        LayerKind::Gcn => gcn_layer(tape, x, a_norm, layer, activate),
        LayerKind::Mlp => {
            let out = affine(tape, x, layer)?;
            if activate {
                tape.relu(out)
            } else {
                Ok(out)
            }
        }
    }
}

fn encode(
    tape: &mut Tape,
    enc: &Encoder<Var>,
    input: Var,
    a_norm: &Arc<SparseMatrix>,
) -> Result<LatentVars> {
    let h1 = apply(tape, enc.kind, input, a_norm, &enc.layers[0], true)?;
    let h2 = apply(tape, enc.kind, h1, a_norm, &enc.layers[1], true)?;
    let mu = affine(tape, h2, &enc.mu)?;
    let raw = affine(tape, h2, &enc.sigma)?;
    let soft = tape.softplus(raw)?;
    let sigma = tape.add_scalar(soft, SIGMA_FLOOR)?;
    Ok(LatentVars { mu, sigma })
}

/// Joint encoder over features and adjacency.
pub fn encode_joint(
    tape: &mut Tape,
    model: &TideModel<Var>,
    ctx: &GraphContext,
) -> Result<LatentVars> {
    let x = tape.constant(ctx.features.clone());
    encode(tape, &model.joint, x, &ctx.a_norm)
}

/// Feature encoder; row `i` of the output depends only on row `i` of `x`.
pub fn encode_feature(
    tape: &mut Tape,
    model: &TideModel<Var>,
    ctx: &GraphContext,
) -> Result<LatentVars> {
    let x = tape.constant(ctx.features.clone());
    encode(tape, &model.feature, x, &ctx.a_norm)
}

/// Structure encoder over a constant all-ones input.
pub fn encode_structure(
    tape: &mut Tape,
    model: &TideModel<Var>,
    ctx: &GraphContext,
) -> Result<LatentVars> {
    let ones = tape.constant(ctx.ones.clone());
    encode(tape, &model.structure, ones, &ctx.a_norm)
}

/// `mu + sigma * noise`.
pub fn reparameterize(tape: &mut Tape, latent: LatentVars, noise: Tensor) -> Result<Var> {
    tape.reparameterize(latent.mu, latent.sigma, noise)
}

/// Raw class logits; no softmax is applied.
pub fn predict_logits(
    tape: &mut Tape,
    sample: Var,
    a_norm: &Arc<SparseMatrix>,
    head: &Head<Var>,
) -> Result<Var> {
    apply(tape, head.kind, sample, a_norm, &head.layer, false)
}

/// Row-wise decode back to input features.
pub fn reconstruct(tape: &mut Tape, sample: Var, recon: &ReconHead<Var>) -> Result<Var> {
    let h = affine(tape, sample, &recon.hidden)?;
    let h = tape.relu(h)?;
    affine(tape, h, &recon.out)
}

impl TideModel<Tensor> {
    fn latent_with(
        &self,
        ctx: &GraphContext,
        f: fn(&mut Tape, &TideModel<Var>, &GraphContext) -> Result<LatentVars>,
    ) -> Result<LatentDistribution> {
        let mut tape = Tape::new();
        let bound = self.bind_constant(&mut tape);
        Ok(f(&mut tape, &bound, ctx)?.values(&tape))
    }

    pub fn joint_latent(&self, ctx: &GraphContext) -> Result<LatentDistribution> {
        self.latent_with(ctx, encode_joint)
    }

    pub fn feature_latent(&self, ctx: &GraphContext) -> Result<LatentDistribution> {
        self.latent_with(ctx, encode_feature)
    }

    pub fn structure_latent(&self, ctx: &GraphContext) -> Result<LatentDistribution> {
        self.latent_with(ctx, encode_structure)
    }

    /// Joint-network logits from the posterior mean, as used at inference.
    pub fn logits(&self, ctx: &GraphContext) -> Result<Tensor> {
        let mut tape = Tape::new();
        let m = self.bind_constant(&mut tape);
        let z = encode_joint(&mut tape, &m, ctx)?;
        let logits = predict_logits(&mut tape, z.mu, &ctx.a_norm, &m.head_z)?;
        Ok(tape.value(logits).clone())
    }
}
