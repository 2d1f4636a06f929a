//! Optimization of the three networks and the pairwise heads, model
//! selection on validation accuracy, and inference-time scoring.

mod adam;
mod config;
mod step;

pub use adam::{adam_step, AdamState};
pub use config::{ObjectiveMode, TideConfig};
pub use step::{forward_step, ExposureData, Noise, StepError, StepOutput, TrainData};

use std::fs;
use std::io::{self, Write as _};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{log_sum_exp_rows, AutodiffError, Tape, Tensor};
use crate::detection::{energy_score, propagate_energy, DetectionError, EnergyScores};
use crate::graph::Graph;
use crate::model::{GraphContext, ModelDims, PairHead, TideModel};
use crate::objectives::{club_estimate, club_head_loss, LossBreakdown, ObjectiveError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {component} at epoch {epoch}")]
    NonFinite { epoch: usize, component: String },
    #[error("{component}: {source}")]
    Autodiff {
        component: &'static str,
        source: AutodiffError,
    },
    #[error("exposure is enabled but no exposure graph was given")]
    MissingExposure,
    #[error("an exposure graph was given but exposure is disabled")]
    UnexpectedExposure,
    #[error(transparent)]
    Detection(#[from] DetectionError),
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_ce: f64,
    /// Seconds since training started.
    pub wall_secs: f64,
}

impl EpochRecord {
    /// Equality ignoring wall time.
    pub fn same_run(&self, other: &Self) -> bool {
        Self {
            wall_secs: 0.0,
            ..self.clone()
        } == Self {
            wall_secs: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    /// Parameters at the selected epoch.
    pub model: TideModel,
    pub log: Vec<EpochRecord>,
    /// 0 means the initial parameters won.
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

pub fn write_log_jsonl(path: impl AsRef<Path>, log: &[EpochRecord]) -> io::Result<()> {
    let mut out = Vec::new();
    for r in log {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    fs::write(path, out)
}

/// Accuracy and mean cross-entropy of `logits` over `rows`.
pub fn accuracy_and_ce(logits: &Tensor, labels: &[usize], rows: &[usize]) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let lse = log_sum_exp_rows(logits);
    let (mut hits, mut ce) = (0usize, 0.0);
    for &i in rows {
        let row = logits.row(i);
        hits += usize::from(argmax(row) == labels[i]);
        ce += lse.get(i, 0) - row[labels[i]];
    }
    (hits as f64 / rows.len() as f64, ce / rows.len() as f64)
}

/// First index of the largest entry.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn check_exposure(cfg: &TideConfig, exposure: Option<&Graph>) -> Result<(), TrainError> {
    match (cfg.exposure_enabled, exposure.is_some()) {
        (true, false) => Err(TrainError::MissingExposure),
        (false, true) => Err(TrainError::UnexpectedExposure),
        _ => Ok(()),
    }
}

/// Model shapes for `g` under `cfg`; the latent width equals the hidden width.
pub fn model_dims(g: &Graph, cfg: &TideConfig) -> ModelDims {
    ModelDims {
        input: g.dim(),
        hidden: cfg.hidden,
        latent: cfg.hidden,
        classes: g.num_classes(),
    }
}

/// Trains every network for `cfg.epochs` full-batch Adam steps on the
/// training split of `g` and returns the parameters with the best
/// validation accuracy, ties going to the lower validation loss.
///
/// `exposure` must be given exactly when `cfg.exposure_enabled`; its
/// exposure split supplies the outlier nodes of the energy regularizer.
pub fn train_tide(
    g: &Graph,
    exposure: Option<&Graph>,
    cfg: &TideConfig,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    check_exposure(cfg, exposure)?;
    let data = TrainData::new(g, exposure)?;
    let dims = model_dims(g, cfg);
    let mut model = TideModel::init(dims, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let eval_rows = if data.val.is_empty() {
        &data.train
    } else {
        &data.val
    };
    let score = |m: &TideModel| -> Result<(f64, f64, f64), TrainError> {
        let logits = m.logits(&data.ctx).map_err(|e| TrainError::Autodiff {
            component: "validation",
            source: e,
        })?;
        let (val_acc, val_ce) = accuracy_and_ce(&logits, &data.labels, eval_rows);
        let (train_acc, _) = accuracy_and_ce(&logits, &data.labels, &data.train);
        Ok((train_acc, val_acc, val_ce))
    };

    let (_, mut best_acc, mut best_ce) = score(&model)?;
    let mut best = (model.clone(), 0usize);
    let mut state = AdamState::new(
        &model
            .named_params()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect::<Vec<_>>(),
    );
    let mut log = Vec::with_capacity(cfg.epochs);
    let started = Instant::now();

    for epoch in 1..=cfg.epochs {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let noise = Noise::draw(&mut rng, data.n(), dims.latent, cfg.pmi_nodes);
        let out = forward_step(&mut tape, &bound, &data, cfg, &noise)
            .map_err(|e| e.into_train_error(epoch))?;
        let grads = tape
            .backward(out.objective)
            .map_err(|e| TrainError::Autodiff {
                component: "backward",
                source: e,
            })?;
        let vars: Vec<_> = bound.named_params().into_iter().map(|(_, v)| *v).collect();
        let slots: Vec<_> = vars.iter().map(|&v| grads.get(v)).collect();
        let mut params: Vec<Tensor> = model
            .named_params()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        adam_step(&mut params, &slots, &mut state, cfg.lr);
        model = TideModel::from_flat(&model, params);
        if !model.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                component: "parameters".into(),
            });
        }

        let (train_acc, val_acc, val_ce) = score(&model)?;
        log.push(EpochRecord {
            epoch,
            losses: out.losses,
            train_acc,
            val_acc,
            val_ce,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        if val_acc > best_acc || (val_acc == best_acc && val_ce < best_ce) {
            best_acc = val_acc;
            best_ce = val_ce;
            best = (model.clone(), epoch);
        }
    }
    Ok(TrainOutput {
        model: best.0,
        log,
        best_epoch: best.1,
        best_val_acc: best_acc,
    })
}

/// Joint network alone, trained with plain cross-entropy and no exposure.
pub fn train_sl_baseline(g: &Graph, cfg: &TideConfig) -> Result<TrainOutput, TrainError> {
    let cfg = TideConfig {
        exposure_enabled: false,
        ..cfg.sl_baseline()
    };
    train_tide(g, None, &cfg)
}

/// Fits a similarity head to paired samples `(x_i, y_i)` by full-batch
/// Adam on the head loss and returns the trained projections.
pub fn fit_pair_head(
    x: &Tensor,
    y: &Tensor,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<PairHead<Tensor>, TrainError> {
    let p = x.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = (3.0 / p as f64).sqrt();
    let mut params = vec![
        Tensor::uniform(p, p, bound, &mut rng),
        Tensor::uniform(y.cols(), p, bound, &mut rng),
    ];
    let mut state = AdamState::new(&params);
    let err = |source| TrainError::Autodiff {
        component: "pair_head",
        source,
    };
    for _ in 0..steps {
        let mut tape = Tape::new();
        let (xs, ys) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let head = PairHead {
            left: tape.leaf(params[0].clone()),
            right: tape.leaf(params[1].clone()),
        };
        let loss = club_head_loss(&mut tape, xs, ys, &head).map_err(|e| match e {
            ObjectiveError::Autodiff(a) => err(a),
            ObjectiveError::Config(m) => TrainError::Config(m),
        })?;
        let grads = tape.backward(loss).map_err(err)?;
        let slots = [grads.get(head.left), grads.get(head.right)];
        adam_step(&mut params, &slots, &mut state, lr);
    }
    let right = params.pop().expect("two projections");
    let left = params.pop().expect("two projections");
    Ok(PairHead { left, right })
}

/// Similarity-based MI estimate of `(x, y)` under a fitted head.
pub fn pair_estimate(x: &Tensor, y: &Tensor, head: &PairHead<Tensor>) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let (xs, ys) = (tape.constant(x.clone()), tape.constant(y.clone()));
    let h = PairHead {
        left: tape.constant(head.left.clone()),
        right: tape.constant(head.right.clone()),
    };
    let est = club_estimate(&mut tape, xs, ys, &h).map_err(|e| match e {
        ObjectiveError::Autodiff(source) => TrainError::Autodiff {
            component: "pair_estimate",
            source,
        },
        ObjectiveError::Config(m) => TrainError::Config(m),
    })?;
    Ok(tape.value(est).item())
}

/// Inference outputs on one graph.
#[derive(Clone, Debug)]
pub struct Inference {
    pub logits: Tensor,
    pub predictions: Vec<usize>,
    pub energy_raw: EnergyScores,
    /// Propagated with `cfg.prop_alpha` and `cfg.prop_k`.
    pub energy: EnergyScores,
}

pub fn infer(model: &TideModel, g: &Graph, cfg: &TideConfig) -> Result<Inference, TrainError> {
    if g.dim() != model.dims.input || g.num_classes() > model.dims.classes {
        return Err(TrainError::Config(format!(
            "graph has {} features and {} classes, model expects {} and {}",
            g.dim(),
            g.num_classes(),
            model.dims.input,
            model.dims.classes
        )));
    }
    let ctx = GraphContext::new(g);
    let logits = model.logits(&ctx).map_err(|e| TrainError::Autodiff {
        component: "inference",
        source: e,
    })?;
    let predictions = logits.iter_rows().map(argmax).collect();
    let energy_raw = energy_score(&logits);
    let energy = propagate_energy(&energy_raw, g, cfg.prop_alpha, cfg.prop_k)?;
    Ok(Inference {
        logits,
        predictions,
        energy_raw,
        energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{gen_csbm, label_leave_out_split, CsbmParams};

    fn small() -> Graph {
        gen_csbm(&CsbmParams {
            n: 80,
            dim: 8,
            ..CsbmParams::default()
        })
        .unwrap()
    }

    fn quick(mode: ObjectiveMode) -> TideConfig {
        TideConfig {
            epochs: 5,
            hidden: 8,
            ..TideConfig::default().with_mode(mode)
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let g = small();
        let cfg = TideConfig {
            epochs: 0,
            ..quick(ObjectiveMode::Tide)
        };
        let out = train_tide(&g, None, &cfg).unwrap();
        assert_eq!(out.best_epoch, 0);
        assert!(out.log.is_empty());
        let init = TideModel::init(model_dims(&g, &cfg), cfg.seed);
        assert_eq!(out.model.named_params(), init.named_params());
    }

    #[test]
    fn every_mode_trains_and_logs() {
        let g = small();
        for mode in ObjectiveMode::ALL {
            let out = train_tide(&g, None, &quick(mode)).unwrap();
            assert_eq!(out.log.len(), 5);
            assert!(out.model.is_finite());
            let l = out.log[0].losses;
            assert!(l.is_finite());
            if mode == ObjectiveMode::Sl {
                assert_eq!((l.kl_z, l.vib_v, l.cind), (0.0, 0.0, 0.0));
            } else {
                assert!(l.kl_z > 0.0 && l.vib_v > 0.0);
            }
            assert_eq!(l.cind > 0.0, mode.uses_cind());
            assert_eq!(l.pair_head > 0.0, mode.uses_pmi());
        }
    }

    #[test]
    fn training_is_deterministic() {
        let g = small();
        let a = train_tide(&g, None, &quick(ObjectiveMode::Tide)).unwrap();
        let b = train_tide(&g, None, &quick(ObjectiveMode::Tide)).unwrap();
        assert!(a.log.iter().zip(&b.log).all(|(x, y)| x.same_run(y)));
        assert_eq!(a.model.named_params(), b.model.named_params());
    }

    #[test]
    fn exposure_must_match_flag() {
        let g = small();
        let split = label_leave_out_split(&g, &[3]).unwrap();
        let cfg = quick(ObjectiveMode::Tide);
        assert!(matches!(
            train_tide(&split.graph, Some(&split.graph), &cfg),
            Err(TrainError::UnexpectedExposure)
        ));
        let on = TideConfig {
            exposure_enabled: true,
            ..cfg
        };
        assert!(matches!(
            train_tide(&split.graph, None, &on),
            Err(TrainError::MissingExposure)
        ));
        let out = train_tide(&split.graph, Some(&split.graph), &on).unwrap();
        assert!(out.log.iter().all(|r| r.losses.energy_reg >= 0.0));
        // near-zero initial logits put every energy near -ln C, inside the
        // flipped margins' penalty zone
        let flipped = TideConfig {
            margin: crate::objectives::MarginOrientation::Flipped,
            ..on
        };
        let out = train_tide(&split.graph, Some(&split.graph), &flipped).unwrap();
        assert!(out.log[0].losses.energy_reg > 0.0);
    }

    #[test]
    fn training_fits_the_training_split() {
        let g = small();
        let cfg = TideConfig {
            epochs: 60,
            hidden: 16,
            ..TideConfig::default()
        };
        let out = train_tide(&g, None, &cfg).unwrap();
        let first = out.log.first().unwrap().losses.ce_z;
        let last = out.log.last().unwrap().losses.ce_z;
        assert!(last < first, "{first} -> {last}");
        assert!(out.best_val_acc > 0.5, "{}", out.best_val_acc);
    }

    #[test]
    fn inference_shapes() {
        let g = small();
        let out = train_tide(&g, None, &quick(ObjectiveMode::Ib)).unwrap();
        let inf = infer(&out.model, &g, &quick(ObjectiveMode::Ib)).unwrap();
        assert_eq!(inf.predictions.len(), g.n());
        assert_eq!(inf.energy.k, 2);
        assert!(inf.energy_raw.e.iter().all(|e| e.is_finite()));
    }

    #[test]
    fn fitted_head_separates_dependent_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(200, 3, &mut rng);
        let noise = Tensor::randn(200, 3, &mut rng);
        let head = fit_pair_head(&x, &x, 200, 0.05, 0).unwrap();
        assert!(pair_estimate(&x, &x, &head).unwrap() > 0.5);
        let head = fit_pair_head(&x, &noise, 200, 0.05, 0).unwrap();
        assert!(pair_estimate(&x, &noise, &head).unwrap().abs() < 0.5);
    }

    #[test]
    fn jsonl_log_round_trips() {
        let g = small();
        let out = train_tide(&g, None, &quick(ObjectiveMode::Sl)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_log_jsonl(&path, &out.log).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let back: Vec<EpochRecord> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(back, out.log);
    }
}
