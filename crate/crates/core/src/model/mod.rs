//! Parameters and forward passes of the joint, feature and structure
//! networks.
//!
//! A model is generic over its parameter slot: `TideModel<Tensor>` stores
//! weights, `TideModel<Var>` is the same model bound to a [`Tape`].
//! [`TideModel::map`] walks the parameters in a fixed order, which is also
//! the checkpoint order.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, Manifest, ParamInfo};
pub use forward::{
    encode_feature, encode_joint, encode_structure, gcn_layer, predict_logits, reconstruct,
    reparameterize, GraphContext, LatentDistribution, LatentVars,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};

/// Lower bound added to every scale output.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Propagates over the normalized adjacency after the affine map.
    Gcn,
    /// Row-wise affine map.
    Mlp,
}

/// `x W + b`, with `W` of shape `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<P> {
    pub weight: P,
    pub bias: Option<P>,
}

/// Two hidden layers then a mean head and a raw-scale head.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<P> {
    pub kind: LayerKind,
    pub layers: [Dense<P>; 2],
    pub mu: Dense<P>,
    pub sigma: Dense<P>,
}

/// Single layer mapping a latent sample to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Head<P> {
    pub kind: LayerKind,
    pub layer: Dense<P>,
}

/// Two-layer MLP from a latent sample back to input features.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconHead<P> {
    pub hidden: Dense<P>,
    pub out: Dense<P>,
}

/// Bias-free projections for the two sides of a pairwise similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct PairHead<P> {
    pub left: P,
    pub right: P,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TideModel<P = Tensor> {
    pub dims: ModelDims,
    pub joint: Encoder<P>,
    pub feature: Encoder<P>,
    pub structure: Encoder<P>,
    pub head_z: Head<P>,
    pub head_v: Head<P>,
    pub head_q: Head<P>,
    pub recon: ReconHead<P>,
    pub pair_zv: PairHead<P>,
    pub pair_zq: PairHead<P>,
    pub pair_vq: PairHead<P>,
}

/// Which network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Network {
    /// Joint encoder, its prediction head and the reconstruction head.
    Z,
    /// Feature encoder and its head.
    V,
    /// Structure encoder and its head.
    Q,
    /// Similarity projections of the pairwise estimators.
    Pair,
}

impl Network {
    pub fn of(name: &str) -> Self {
        match name.split('.').next().unwrap_or_default() {
            "joint" | "head_z" | "recon" => Network::Z,
            "feature" | "head_v" => Network::V,
            "structure" | "head_q" => Network::Q,
            _ => Network::Pair,
        }
    }
}

impl<P> Dense<P> {
    fn map<'a, Q, F: FnMut(&str, &'a P) -> Q>(&'a self, prefix: &str, f: &mut F) -> Dense<Q> {
        Dense {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: self.bias.as_ref().map(|b| f(&format!("{prefix}.bias"), b)),
        }
    }
}

impl<P> Encoder<P> {
    fn map<'a, Q, F: FnMut(&str, &'a P) -> Q>(&'a self, prefix: &str, f: &mut F) -> Encoder<Q> {
        Encoder {
            kind: self.kind,
            layers: [
                self.layers[0].map(&format!("{prefix}.layer1"), f),
                self.layers[1].map(&format!("{prefix}.layer2"), f),
            ],
            mu: self.mu.map(&format!("{prefix}.mu"), f),
            sigma: self.sigma.map(&format!("{prefix}.sigma"), f),
        }
    }
}

impl<P> Head<P> {
    fn map<'a, Q, F: FnMut(&str, &'a P) -> Q>(&'a self, prefix: &str, f: &mut F) -> Head<Q> {
        Head {
            kind: self.kind,
            layer: self.layer.map(prefix, f),
        }
    }
}

impl<P> ReconHead<P> {
    fn map<'a, Q, F: FnMut(&str, &'a P) -> Q>(&'a self, prefix: &str, f: &mut F) -> ReconHead<Q> {
        ReconHead {
            hidden: self.hidden.map(&format!("{prefix}.hidden"), f),
            out: self.out.map(&format!("{prefix}.out"), f),
        }
    }
}

impl<P> PairHead<P> {
    fn map<'a, Q, F: FnMut(&str, &'a P) -> Q>(&'a self, prefix: &str, f: &mut F) -> PairHead<Q> {
        PairHead {
            left: f(&format!("{prefix}.left"), &self.left),
            right: f(&format!("{prefix}.right"), &self.right),
        }
    }
}

impl<P> TideModel<P> {
    /// Applies `f` to every parameter in checkpoint order.
    pub fn map<'a, Q>(&'a self, mut f: impl FnMut(&str, &'a P) -> Q) -> TideModel<Q> {
        let f = &mut f;
        TideModel {
            dims: self.dims,
            joint: self.joint.map("joint", f),
            feature: self.feature.map("feature", f),
            structure: self.structure.map("structure", f),
            head_z: self.head_z.map("head_z", f),
            head_v: self.head_v.map("head_v", f),
            head_q: self.head_q.map("head_q", f),
            recon: self.recon.map("recon", f),
            pair_zv: self.pair_zv.map("pair_zv", f),
            pair_zq: self.pair_zq.map("pair_zq", f),
            pair_vq: self.pair_vq.map("pair_vq", f),
        }
    }

    /// Parameters with their dotted names, in checkpoint order.
    pub fn named_params(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.map(|name, p| out.push((name.to_string(), p)));
        out
    }
}

impl TideModel<Tensor> {
    /// Glorot-uniform weights and zero biases, drawn from `seed`.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = |fan_in: usize, fan_out: usize, bias: bool| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Dense {
                weight: Tensor::uniform(fan_in, fan_out, bound, &mut rng),
                bias: bias.then(|| Tensor::zeros(1, fan_out)),
            }
        };
        let ModelDims {
            input: d,
            hidden: h,
            latent: l,
            classes: c,
        } = dims;
        let mut encoder = |kind, input| Encoder {
            kind,
            layers: [dense(input, h, true), dense(h, h, true)],
            mu: dense(h, l, true),
            sigma: dense(h, l, true),
        };
        let joint = encoder(LayerKind::Gcn, d);
        let feature = encoder(LayerKind::Mlp, d);
        let structure = encoder(LayerKind::Gcn, 1);
        let mut head = |kind| Head {
            kind,
            layer: dense(l, c, true),
        };
        let head_z = head(LayerKind::Gcn);
        let head_v = head(LayerKind::Mlp);
        let head_q = head(LayerKind::Gcn);
        let recon = ReconHead {
            hidden: dense(l, h, true),
            out: dense(h, d, true),
        };
        let mut pair = || PairHead {
            left: dense(l, l, false).weight,
            right: dense(l, l, false).weight,
        };
        let (pair_zv, pair_zq, pair_vq) = (pair(), pair(), pair());
        Self {
            dims,
            joint,
            feature,
            structure,
            head_z,
            head_v,
            head_q,
            recon,
            pair_zv,
            pair_zq,
            pair_vq,
        }
    }

    /// Same shapes with every entry zero.
    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.rows(), t.cols()))
    }

    /// Trainable leaves on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> TideModel<Var> {
        self.map(|_, t| tape.leaf(t.clone()))
    }

    /// Gradient-free leaves on `tape`.
    pub fn bind_constant(&self, tape: &mut Tape) -> TideModel<Var> {
        self.map(|_, t| tape.constant(t.clone()))
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_params().iter().all(|(_, t)| t.is_finite())
    }

    /// Rebuilds a model from tensors listed in checkpoint order.
    pub fn from_flat(template: &Self, tensors: Vec<Tensor>) -> Self {
        let mut it = tensors.into_iter();
        template.map(|_, _| it.next().expect("one tensor per parameter"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            input: 5,
            hidden: 8,
            latent: 6,
            classes: 3,
        }
    }

    #[test]
    fn init_shapes_and_order() {
        let m = TideModel::init(dims(), 1);
        let names: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "joint.layer1.weight");
        assert_eq!(names.last().unwrap(), "pair_vq.right");
        assert_eq!(m.joint.layers[0].weight.shape(), (5, 8));
        assert_eq!(m.structure.layers[0].weight.shape(), (1, 8));
        assert_eq!(m.head_z.layer.weight.shape(), (6, 3));
        assert_eq!(m.recon.out.weight.shape(), (8, 5));
        assert_eq!(m.pair_zq.left.shape(), (6, 6));
        assert!(m.is_finite());
    }

    #[test]
    fn networks_partition_params() {
        let m = TideModel::init(dims(), 1);
        let count = |net| {
            m.named_params()
                .iter()
                .filter(|(n, _)| Network::of(n) == net)
                .count()
        };
        assert_eq!(count(Network::Z), 8 + 2 + 4);
        assert_eq!(count(Network::V), 10);
        assert_eq!(count(Network::Q), 10);
        assert_eq!(count(Network::Pair), 6);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        assert_eq!(TideModel::init(dims(), 4), TideModel::init(dims(), 4));
        assert_ne!(TideModel::init(dims(), 4), TideModel::init(dims(), 5));
    }

    #[test]
    fn flat_round_trip() {
        let m = TideModel::init(dims(), 2);
        let flat: Vec<Tensor> = m
            .named_params()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        assert_eq!(TideModel::from_flat(&m.zeros_like(), flat), m);
    }
}
