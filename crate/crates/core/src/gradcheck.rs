//! Central-difference verification of every loss component and of the
//! routed per-network gradients of the full objective.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{check_gradients_multi, AutodiffError, GradCheck, Tape, Tensor, Var};
use crate::graph::{Graph, Splits};
use crate::model::{Dense, LatentVars, ModelDims, Network, PairHead, ReconHead, TideModel};
use crate::objectives::{
    club_estimate, club_head_loss, cross_entropy, energy, energy_reg_loss, kl_standard_normal,
    recon_cind_loss, vib_loss, MarginOrientation, ObjectiveError,
};
use crate::train::{forward_step, Noise, ObjectiveMode, TideConfig, TrainData};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct GradCase {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub h: f64,
    pub tolerance: f64,
    pub cases: Vec<GradCase>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cases {
            writeln!(
                f,
                "{:<5} {:<22} max_rel_error={:.3e} entries={}",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.max_rel_error,
                c.entries
            )?;
        }
        write!(
            f,
            "h={:e} tolerance={:e} overall={}",
            self.h,
            self.tolerance,
            if self.passed() { "pass" } else { "fail" }
        )
    }
}

fn ad(e: ObjectiveError) -> AutodiffError {
    match e {
        ObjectiveError::Autodiff(a) => a,
        ObjectiveError::Config(detail) => AutodiffError::Domain {
            op: "objective",
            detail,
        },
    }
}

/// Connected-ish random graph: `n` nodes, `dim` features, 3 classes, each
/// pair linked with probability 0.3, first 60% train.
pub fn random_graph(n: usize, dim: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = Tensor::randn(n, dim, &mut rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < 0.3 || j == i + 1 {
                edges.push((i, j));
            }
        }
    }
    let labels = (0..n).map(|_| Some(rng.random_range(0..3))).collect();
    let n_train = n * 3 / 5;
    let splits = Splits {
        train: (0..n_train).collect(),
        val: (n_train..n - 2).collect(),
        test_id: (n - 2..n).collect(),
        ..Splits::default()
    };
    Graph::new(features, edges, labels, 3, splits).expect("valid random graph")
}

fn positive(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::uniform(rows, cols, 1.0, rng);
    t.data_mut().iter_mut().for_each(|v| *v = 0.5 + v.abs());
    t
}

fn dense(weight: Var, bias: Var) -> Dense<Var> {
    Dense {
        weight,
        bias: Some(bias),
    }
}

/// Checks each stand-alone loss component on random inputs.
pub fn component_checks(seed: u64, h: f64) -> Result<Vec<(String, GradCheck)>, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, p, d) = (10, 3, 4, 6);
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let rows: Vec<usize> = (0..7).collect();
    let x = Tensor::randn(n, d, &mut rng);
    let mut out = Vec::new();

    let logits = Tensor::randn(n, c, &mut rng);
    out.push((
        "cross_entropy".to_string(),
        check_gradients_multi(
            |t, v| cross_entropy(t, v[0], &labels, &rows).map_err(ad),
            std::slice::from_ref(&logits),
            h,
        )?,
    ));

    let mu = Tensor::randn(n, p, &mut rng);
    let sigma = positive(n, p, &mut rng);
    out.push((
        "kl".to_string(),
        check_gradients_multi(
            |t, v| {
                kl_standard_normal(
                    t,
                    LatentVars {
                        mu: v[0],
                        sigma: v[1],
                    },
                    &rows,
                )
                .map_err(ad)
            },
            &[mu.clone(), sigma.clone()],
            h,
        )?,
    ));

    out.push((
        "vib".to_string(),
        check_gradients_multi(
            |t, v| {
                let latent = LatentVars {
                    mu: v[1],
                    sigma: v[2],
                };
                Ok(vib_loss(t, v[0], &labels, &rows, latent, 0.01)
                    .map_err(ad)?
                    .total)
            },
            &[logits.clone(), mu.clone(), sigma.clone()],
            h,
        )?,
    ));

    let s1 = Tensor::randn(n, p, &mut rng);
    let s2 = Tensor::randn(n, p, &mut rng);
    let w1 = Tensor::uniform(p, p, 1.0, &mut rng);
    let w2 = Tensor::uniform(p, p, 1.0, &mut rng);
    let pair_points = [s1.clone(), s2.clone(), w1, w2];
    out.push((
        "club_estimate".to_string(),
        check_gradients_multi(
            |t, v| {
                let head = PairHead {
                    left: v[2],
                    right: v[3],
                };
                club_estimate(t, v[0], v[1], &head).map_err(ad)
            },
            &pair_points,
            h,
        )?,
    ));
    out.push((
        "club_head_loss".to_string(),
        check_gradients_multi(
            |t, v| {
                let head = PairHead {
                    left: v[2],
                    right: v[3],
                };
                club_head_loss(t, v[0], v[1], &head).map_err(ad)
            },
            &pair_points,
            h,
        )?,
    ));

    let hid = 5;
    let recon_points = [
        s1.clone(),
        Tensor::uniform(p, hid, 0.8, &mut rng),
        Tensor::uniform(1, hid, 0.5, &mut rng),
        Tensor::uniform(hid, d, 0.8, &mut rng),
        Tensor::uniform(1, d, 0.5, &mut rng),
    ];
    out.push((
        "recon_cind".to_string(),
        check_gradients_multi(
            |t, v| {
                let head = ReconHead {
                    hidden: dense(v[1], v[2]),
                    out: dense(v[3], v[4]),
                };
                recon_cind_loss(t, v[0], &x, &head).map_err(ad)
            },
            &recon_points,
            h,
        )?,
    ));

    // spread energies across both margins so each hinge has active rows
    let mut id_logits = Tensor::randn(n, c, &mut rng);
    let mut ood_logits = Tensor::randn(n, c, &mut rng);
    id_logits.data_mut().iter_mut().for_each(|v| *v *= 2.0);
    ood_logits.data_mut().iter_mut().for_each(|v| *v *= 2.0);
    for (name, orientation) in [
        ("energy_reg", MarginOrientation::Written),
        ("energy_reg_flipped", MarginOrientation::Flipped),
    ] {
        out.push((
            name.to_string(),
            check_gradients_multi(
                |t, v| {
                    let e_id = energy(t, v[0]).map_err(ad)?;
                    let e_ood = energy(t, v[1]).map_err(ad)?;
                    energy_reg_loss(t, e_id, e_ood, -2.0, -1.5, orientation).map_err(ad)
                },
                &[id_logits.clone(), ood_logits.clone()],
                h,
            )?,
        ));
    }
    Ok(out)
}

/// Compares the fused gradient of the full objective, restricted to each
/// network's parameters, with central differences of that network's own
/// total. The similarity heads are compared against their training loss.
pub fn routed_checks(
    g: &Graph,
    exposure: Option<&Graph>,
    cfg: &TideConfig,
    h: f64,
) -> Result<Vec<(String, GradCheck)>, crate::Error> {
    let data = TrainData::new(g, exposure)?;
    let dims = ModelDims {
        input: g.dim(),
        hidden: cfg.hidden,
        latent: cfg.hidden,
        classes: g.num_classes(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // zero biases put a dead hidden row exactly on the ReLU kink of the
    // next layer, where central differences see half the slope
    let model = TideModel::init(dims, cfg.seed).map(|name, t| {
        if name.ends_with(".bias") {
            Tensor::uniform(t.rows(), t.cols(), 0.1, &mut rng)
        } else {
            t.clone()
        }
    });
    let noise = Noise::draw(&mut rng, data.n(), dims.latent, cfg.pmi_nodes);
    let step_err = |e: crate::train::StepError| crate::Error::from(e.into_train_error(0));

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let out = forward_step(&mut tape, &bound, &data, cfg, &noise).map_err(step_err)?;
    let grads = tape.backward(out.objective)?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let vars: Vec<Var> = bound.named_params().into_iter().map(|(_, v)| *v).collect();
    let mut params: Vec<Tensor> = model
        .named_params()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();

    let target = |net: Network, params: &[Tensor]| -> Result<f64, crate::Error> {
        let m = TideModel::from_flat(&model, params.to_vec());
        let mut tape = Tape::new();
        let bound = m.bind_constant(&mut tape);
        let out = forward_step(&mut tape, &bound, &data, cfg, &noise).map_err(step_err)?;
        let v = match net {
            Network::Z => out.totals[0],
            Network::V => out.totals[1],
            Network::Q => out.totals[2],
            Network::Pair => match out.pair_head {
                Some(v) => v,
                None => return Ok(0.0),
            },
        };
        Ok(tape.value(v).item())
    };

    let mut results = Vec::new();
    for net in [Network::Z, Network::V, Network::Q, Network::Pair] {
        let mut check = GradCheck {
            max_rel_error: 0.0,
            worst: (0, 0, 0),
            entries: 0,
        };
        for k in (0..names.len()).filter(|&k| Network::of(&names[k]) == net) {
            let analytic = grads.get_or_zeros(vars[k], params[k].shape());
            for e in 0..params[k].len() {
                let original = params[k].data()[e];
                params[k].data_mut()[e] = original + h;
                let plus = target(net, &params)?;
                params[k].data_mut()[e] = original - h;
                let minus = target(net, &params)?;
                params[k].data_mut()[e] = original;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic.data()[e];
                let rel = (a - numeric).abs() / (numeric.abs() + 1e-8);
                if rel > check.max_rel_error {
                    let cols = params[k].cols();
                    check.max_rel_error = rel;
                    check.worst = (k, e / cols, e % cols);
                }
                check.entries += 1;
            }
        }
        let label = match net {
            Network::Z => "routed_total_z",
            Network::V => "routed_total_v",
            Network::Q => "routed_total_q",
            Network::Pair => "routed_pair_heads",
        };
        results.push((label.to_string(), check));
    }
    Ok(results)
}

/// Configuration of the routed check: every term active, exposure on,
/// small hidden width.
pub fn routed_config(seed: u64) -> TideConfig {
    TideConfig {
        hidden: 8,
        seed,
        exposure_enabled: true,
        t_id: -2.0,
        t_ood: -1.0,
        margin: MarginOrientation::Flipped,
        beta_z: 0.01,
        beta_v: 0.01,
        beta_q: 0.01,
        alpha1: 0.5,
        alpha2: 0.3,
        alpha3: 0.2,
        lambda_cind: 0.7,
        lambda_oe: 0.5,
        ..TideConfig::default().with_mode(ObjectiveMode::Tide)
    }
}

/// Full suite on a 10-node random graph.
pub fn run_suite(seed: u64, h: f64, tolerance: f64) -> Result<GradReport, crate::Error> {
    let mut checks = component_checks(seed, h)?;
    let g = random_graph(10, 6, seed);
    let other = random_graph(10, 6, seed.wrapping_add(1));
    let exposure = crate::bench::ood_view(&other, &[0, 1, 2, 3, 4])?;
    checks.extend(routed_checks(&g, Some(&exposure), &routed_config(seed), h)?);
    Ok(GradReport {
        h,
        tolerance,
        cases: checks
            .into_iter()
            .map(|(name, c)| GradCase {
                name,
                max_rel_error: c.max_rel_error,
                entries: c.entries,
                passed: c.max_rel_error < tolerance,
            })
            .collect(),
    })
}
