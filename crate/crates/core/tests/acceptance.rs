//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported, not hidden; set TIDE_ACCEPTANCE_STRICT=1
//! to turn any FAIL into a non-zero exit. Criterion 9 needs
//! TIDE_CORA_DIR (features.txt, edges.txt, labels.txt, splits.json).

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tide::autodiff::Tensor;
use tide::bench::{CsbmParams, ShiftChain};
use tide::detection::{
    aupr, auroc, energy_score, evaluate, fpr_at_95_tpr, propagate_energy, EnergyScores,
};
use tide::experiment::{compare, write_comparison, Comparison, Fixture, Stat};
use tide::gradcheck::{random_graph, run_suite};
use tide::graph::{load_graph, GraphFiles};
use tide::objectives::kl_value;
use tide::train::{fit_pair_head, pair_estimate, ObjectiveMode, TideConfig};

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass: Some(pass),
            detail: detail.into(),
        }
    }

    fn skip(detail: impl Into<String>) -> Self {
        Self {
            pass: None,
            detail: detail.into(),
        }
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let r = run_suite(0, 1e-5, 1e-3).expect("gradient suite runs");
    let secs = t.elapsed().as_secs_f64();
    let worst = r
        .cases
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    Outcome::new(
        r.passed() && secs < 30.0,
        format!(
            "{} cases, worst {} at {:.2e}, {:.1}s",
            r.cases.len(),
            worst.name,
            worst.max_rel_error,
            secs
        ),
    )
}

fn brute_auroc(scores: &[f64], is_ood: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if is_ood[i] && !is_ood[j] {
                pairs += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

fn brute_aupr(scores: &[f64], is_ood: &[bool]) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = is_ood.iter().filter(|&&o| o).count() as f64;
    let (mut ap, mut last_recall) = (0.0, 0.0);
    for t in thresholds {
        let tp = (0..scores.len())
            .filter(|&i| scores[i] >= t && is_ood[i])
            .count() as f64;
        let flagged = scores.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / n_pos;
        ap += (recall - last_recall) * tp / flagged;
        last_recall = recall;
    }
    ap
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = rng.random_range(2..=200);
        // coarse grid for half the cases so ties occur
        let coarse = case % 2 == 0;
        let mut scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.random_range(-3.0..3.0);
                if coarse {
                    (s * 2.0).round() / 2.0
                } else {
                    s
                }
            })
            .collect();
        let mut is_ood: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        is_ood[0] = true;
        is_ood[1] = false;
        scores
            .iter_mut()
            .zip(&is_ood)
            .for_each(|(s, &o)| *s += if o { 0.5 } else { 0.0 });
        let a = auroc(&scores, &is_ood).unwrap();
        let p = aupr(&scores, &is_ood).unwrap();
        worst = worst
            .max((a - brute_auroc(&scores, &is_ood)).abs())
            .max((p - brute_aupr(&scores, &is_ood)).abs());
    }
    let scores = [0.0, 1.0, 2.0, 3.0, 2.5, 3.5, 4.0, 5.0];
    let is_ood = [false, false, false, false, true, true, true, true];
    let fpr = fpr_at_95_tpr(&scores, &is_ood).unwrap();
    let labels = vec![None; 8];
    let via_evaluate = evaluate(&scores, &is_ood, &[0; 8], &labels, &[false; 8])
        .unwrap()
        .fpr95;
    Outcome::new(
        worst <= 1e-12 && fpr == 0.25 && via_evaluate == 0.25,
        format!("max oracle gap {worst:.1e} over 100 vectors; fpr95 example {fpr}"),
    )
}

fn energy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let logits = Tensor::randn(50, 7, &mut rng);
    let e = energy_score(&logits);
    let mut gap: f64 = 0.0;
    for (row, &v) in logits.iter_rows().zip(&e.e) {
        let lse: f64 = row.iter().map(|x| x.exp()).sum::<f64>().ln();
        gap = gap.max((v + lse).abs());
    }
    let two = tide::graph::Graph::new(
        Tensor::zeros(2, 1),
        [(0, 1)],
        vec![None; 2],
        1,
        Default::default(),
    )
    .unwrap();
    let s = EnergyScores {
        e: vec![0.0, 1.0],
        propagated: false,
        k: 0,
        alpha: 1.0,
    };
    let clique = propagate_energy(&s, &two, 0.5, 1).unwrap().e == vec![0.5, 0.5];
    let identity = propagate_energy(&s, &two, 1.0, 3).unwrap().e == s.e;

    let mut hull = true;
    for seed in 0..100 {
        let g = random_graph(12 + (seed as usize % 20), 2, seed);
        let e0: Vec<f64> = (0..g.n()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let alpha = rng.random_range(0.0..1.0);
        let s = EnergyScores {
            e: e0.clone(),
            propagated: false,
            k: 0,
            alpha: 1.0,
        };
        let walk = g.row_stochastic_adjacency();
        let next = propagate_energy(&s, &g, alpha, 1).unwrap().e;
        for i in 0..g.n() {
            let vals = walk.row(i).map(|(j, _)| e0[j]).chain([e0[i]]);
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
                (l.min(v), h.max(v))
            });
            hull &= next[i] >= lo - 1e-12 && next[i] <= hi + 1e-12;
        }
    }
    Outcome::new(
        gap <= 1e-12 && clique && identity && hull,
        format!("lse gap {gap:.1e}; 2-clique {clique}; alpha=1 identity {identity}; hull {hull}"),
    )
}

fn kl() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let normal = rand_distr::StandardNormal;
    let mut worst_z: f64 = 0.0;
    for _ in 0..20 {
        let mu: f64 = rng.random_range(-2.0..2.0);
        let sigma: f64 = rng.random_range(0.3..2.5);
        let analytic = kl_value(&Tensor::scalar(mu), &Tensor::scalar(sigma));
        let n = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let eps: f64 = rng.sample(normal);
            let x = mu + sigma * eps;
            let v = -sigma.ln() - 0.5 * eps * eps + 0.5 * x * x;
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        worst_z = worst_z.max((analytic - mean).abs() / se);
    }
    Outcome::new(
        worst_z < 3.0,
        format!("largest |analytic - MC| = {worst_z:.2} SE over 20 draws"),
    )
}

fn club() -> Outcome {
    let (n, p) = (256, 2);
    let rhos = [0.0, 0.5, 0.9];
    let mut ok = 0;
    let mut example = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = Tensor::randn(n, p, &mut rng);
        let noise = Tensor::randn(n, p, &mut rng);
        let x_eval = Tensor::randn(n, p, &mut rng);
        let noise_eval = Tensor::randn(n, p, &mut rng);
        let pair = |x: &Tensor, e: &Tensor, rho: f64| {
            let mut y = x.clone();
            let c = (1.0 - rho * rho).sqrt();
            y.data_mut()
                .iter_mut()
                .zip(e.data())
                .for_each(|(v, &z)| *v = rho * *v + c * z);
            y
        };
        let est: Vec<f64> = rhos
            .iter()
            .map(|&rho| {
                let head = fit_pair_head(&x, &pair(&x, &noise, rho), 300, 0.05, seed).unwrap();
                pair_estimate(&x_eval, &pair(&x_eval, &noise_eval, rho), &head).unwrap()
            })
            .collect();
        if est.windows(2).all(|w| w[0] < w[1]) {
            ok += 1;
        }
        if seed == 0 {
            example = est;
        }
    }
    let truth: Vec<f64> = rhos
        .iter()
        .map(|r: &f64| -0.5 * (1.0 - r * r).ln())
        .collect();
    Outcome::new(
        ok == 10,
        format!(
            "increasing in {ok}/10 seeds; seed 0 estimates {:.3?} vs per-dim MI {:.3?}",
            example, truth
        ),
    )
}

fn fixture_params() -> CsbmParams {
    CsbmParams {
        n: 500,
        classes: 4,
        seed: 0,
        ..CsbmParams::default()
    }
}

fn fixture(shift: &str) -> Fixture {
    let chain: ShiftChain = shift.parse().unwrap();
    Fixture::csbm(&fixture_params(), &chain.with_seed(0)).unwrap()
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn feature_comparison() -> (Comparison, f64) {
    let t = Instant::now();
    let c = compare(
        &fixture("feature:0.5"),
        &TideConfig::default(),
        &[ObjectiveMode::Sl, ObjectiveMode::Ib],
        &SEEDS,
        1,
    )
    .unwrap();
    (c, t.elapsed().as_secs_f64())
}

fn joint_comparison() -> Comparison {
    compare(
        &fixture("structure:0.5+feature:0.5"),
        &TideConfig::default(),
        &ObjectiveMode::ALL,
        &SEEDS,
        1,
    )
    .unwrap()
}

fn ib_over_sl(c: &Comparison, secs: f64) -> Outcome {
    let sl = c.row(ObjectiveMode::Sl).unwrap();
    let ib = c.row(ObjectiveMode::Ib).unwrap();
    let raw = |r: &tide::experiment::ModeSummary| r.stat("energy_raw", "auroc").mean;
    let prop = |r: &tide::experiment::ModeSummary| r.stat("energy", "auroc").mean;
    let margin = 100.0 * (raw(ib) - raw(sl));
    let propagation_helps = prop(sl) > raw(sl) && prop(ib) > raw(ib);
    Outcome::new(
        margin >= 2.0 && propagation_helps && secs < 300.0,
        format!(
            "raw AUROC SL {:.2} IB {:.2} (margin {margin:+.2}, need >= 2); propagated SL {:.2} IB {:.2}; {secs:.0}s",
            100.0 * raw(sl),
            100.0 * raw(ib),
            100.0 * prop(sl),
            100.0 * prop(ib)
        ),
    )
}

fn ablation(c: &Comparison) -> Outcome {
    use ObjectiveMode::*;
    let order = [Tide, IbCind, Ib, Sl];
    let stat = |m| c.row(m).unwrap().stat("energy", "fpr95");
    let raw = |m| c.row(m).unwrap().stat("energy_raw", "fpr95");
    let mut ok = true;
    for w in order.windows(2) {
        let (a, b): (Stat, Stat) = (stat(w[0]), stat(w[1]));
        let pooled = ((a.std * a.std + b.std * b.std) / 2.0).sqrt();
        ok &= a.mean - b.mean <= pooled;
    }
    let fmt = |f: &dyn Fn(ObjectiveMode) -> Stat| {
        order
            .iter()
            .map(|&m| format!("{} {:.2}±{:.2}", m, 100.0 * f(m).mean, 100.0 * f(m).std))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Outcome::new(
        ok,
        format!("FPR95 {}; without propagation {}", fmt(&stat), fmt(&raw)),
    )
}

fn entropy(c: &Comparison) -> Outcome {
    let sl: Vec<_> = c.runs_of(ObjectiveMode::Sl).collect();
    let ib: Vec<_> = c.runs_of(ObjectiveMode::Ib).collect();
    let (mut lower, mut wider) = (0, 0);
    for (s, i) in sl.iter().zip(&ib) {
        assert_eq!(s.seed, i.seed);
        lower += usize::from(i.entropy_id < s.entropy_id);
        wider += usize::from(i.entropy_ood - i.entropy_id > s.entropy_ood - s.entropy_id);
    }
    Outcome::new(
        lower >= 4 && wider >= 4,
        format!("IB lower ID entropy in {lower}/5 seeds, wider OOD-ID gap in {wider}/5 (need 4)"),
    )
}

fn cora() -> Outcome {
    let Ok(dir) = std::env::var("TIDE_CORA_DIR") else {
        return Outcome::skip("TIDE_CORA_DIR not set");
    };
    let files = GraphFiles::in_dir(&dir);
    if !files.exist() {
        return Outcome::skip(format!("no graph files in {dir}"));
    }
    let t = Instant::now();
    let g = load_graph(&files).unwrap();
    let shift = std::env::var("TIDE_CORA_SHIFT").unwrap_or_else(|_| "structure:0.5".into());
    let chain: ShiftChain = shift.parse().unwrap();
    let fix = Fixture::shifted(&g, &chain.with_seed(0)).unwrap();
    let c = compare(
        &fix,
        &TideConfig::default(),
        &[ObjectiveMode::Tide],
        &[0, 1, 2],
        1,
    )
    .unwrap();
    let row = c.row(ObjectiveMode::Tide).unwrap();
    let (a, f) = (
        100.0 * row.stat("energy", "auroc").mean,
        100.0 * row.stat("energy", "fpr95").mean,
    );
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        (a - 95.15).abs() <= 3.0 && (f - 23.31).abs() <= 8.0 && secs < 600.0,
        format!(
            "{shift}: AUROC {a:.2} (target 95.15±3), FPR95 {f:.2} (target 23.31±8), {secs:.0}s"
        ),
    )
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    ["table.md", "table.csv", "runs.json"]
        .iter()
        .all(|f| fs::read(a.join(f)).ok() == fs::read(b.join(f)).ok())
}

fn determinism(first: [&Comparison; 2]) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (feature, _) = feature_comparison();
    let joint = joint_comparison();
    let mut ok = true;
    for (name, a, b) in [("feature", first[0], &feature), ("joint", first[1], &joint)] {
        let (pa, pb) = (
            dir.path().join(format!("{name}_a")),
            dir.path().join(format!("{name}_b")),
        );
        write_comparison(&pa, a).unwrap();
        write_comparison(&pb, b).unwrap();
        ok &= same_bytes(&pa, &pb);
    }
    Outcome::new(
        ok,
        "table.md, table.csv and runs.json identical across two runs",
    )
}

fn main() {
    let strict = std::env::var("TIDE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |k: usize, name: &'static str, o: Outcome| {
        let tag = match o.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("{tag} criterion {k:>2} {name}: {}", o.detail);
        results.push((k, name, o));
    };
    report(1, "gradient correctness", gradients());
    report(2, "metric oracles", metrics());
    report(3, "energy and propagation", energy());
    report(4, "KL closed form vs Monte Carlo", kl());
    report(5, "similarity MI estimate monotone in correlation", club());
    let (feature, secs) = feature_comparison();
    report(6, "IB over SL detection", ib_over_sl(&feature, secs));
    let joint = joint_comparison();
    report(7, "ablation FPR95 ordering", ablation(&joint));
    report(8, "entropy checks", entropy(&feature));
    report(9, "real-data reproduction", cora());
    report(10, "determinism", determinism([&feature, &joint]));

    let failed: Vec<String> = results
        .iter()
        .filter(|r| r.2.pass == Some(false))
        .map(|r| r.0.to_string())
        .collect();
    let passed = results.iter().filter(|r| r.2.pass == Some(true)).count();
    let skipped = results.iter().filter(|r| r.2.pass.is_none()).count();
    println!(
        "acceptance: {passed} passed, {} failed{}, {skipped} skipped",
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({})", failed.join(", "))
        }
    );
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
