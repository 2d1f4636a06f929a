//! Detection evaluation of a trained model on an ID/OOD graph pair, and
//! multi-seed comparisons across objective modes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{apply_shifts, gen_csbm, label_leave_out_split, CsbmParams, ShiftChain};
use crate::detection::{
    evaluate, histogram, msp_score, predictive_entropy, DetectionError, DetectionReport, Histogram,
    ScoreRow,
};
use crate::graph::Graph;
use crate::model::TideModel;
use crate::train::{infer, train_tide, Inference, ObjectiveMode, TideConfig};
use crate::Error;

/// Score families reported by [`evaluate_detection`].
pub const SCORE_NAMES: [&str; 4] = ["energy", "energy_raw", "msp", "entropy"];

pub const HIST_BINS: usize = 64;

/// Training graph plus the graph holding the test OOD nodes. For a label
/// shift both are the same remapped graph.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub id: Graph,
    pub ood: Graph,
}

impl Fixture {
    /// cSBM graph under `shift`; a label shift replaces the ID graph by
    /// its remapped split.
    pub fn csbm(params: &CsbmParams, shift: &ShiftChain) -> Result<Self, Error> {
        let g = gen_csbm(params)?;
        Self::shifted(&g, shift)
    }

    pub fn shifted(g: &Graph, shift: &ShiftChain) -> Result<Self, Error> {
        if let [spec] = shift.0.as_slice() {
            if let crate::bench::ShiftKind::Label { classes } = &spec.kind {
                let split = label_leave_out_split(g, classes)?;
                return Ok(Self {
                    id: split.graph.clone(),
                    ood: split.graph,
                });
            }
        }
        Ok(Self {
            id: g.clone(),
            ood: apply_shifts(g, shift)?,
        })
    }
}

/// Everything `eval` writes.
#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    /// One report per entry of [`SCORE_NAMES`].
    pub reports: BTreeMap<String, DetectionReport>,
    pub entropy_id: f64,
    pub entropy_ood: f64,
    #[serde(skip)]
    pub rows: BTreeMap<String, Vec<ScoreRow>>,
    #[serde(skip)]
    pub hist_energy: Histogram,
    #[serde(skip)]
    pub hist_confidence: Histogram,
}

impl Evaluation {
    pub fn report(&self, score: &str) -> &DetectionReport {
        &self.reports[score]
    }

    /// `report.json` contents: reports, mean entropies and run metadata.
    pub fn to_json(&self, meta: serde_json::Value) -> String {
        let doc = serde_json::json!({
            "reports": self.reports,
            "entropy_id": self.entropy_id,
            "entropy_ood": self.entropy_ood,
            "meta": meta,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
        s.push('\n');
        s
    }

    /// `hist.json` contents.
    pub fn hist_json(&self) -> String {
        let doc = serde_json::json!({
            "energy": self.hist_energy,
            "confidence": self.hist_confidence,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("histogram serializes");
        s.push('\n');
        s
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Scores ID test nodes of `fix.id` against test OOD nodes of `fix.ood`.
pub fn evaluate_detection(
    model: &TideModel,
    fix: &Fixture,
    cfg: &TideConfig,
) -> Result<Evaluation, Error> {
    let id_nodes = &fix.id.splits().test_id;
    let ood_nodes = &fix.ood.splits().test_ood;
    if id_nodes.is_empty() {
        return Err(DetectionError::NoId.into());
    }
    if ood_nodes.is_empty() {
        return Err(DetectionError::NoOod.into());
    }
    let inf_id = infer(model, &fix.id, cfg)?;
    let inf_ood = infer(model, &fix.ood, cfg)?;
    let ent_id = predictive_entropy(&inf_id.logits);
    let ent_ood = predictive_entropy(&inf_ood.logits);
    let msp_id = msp_score(&inf_id.logits);
    let msp_ood = msp_score(&inf_ood.logits);

    let gather = |inf: &Inference, ent: &[f64], msp: &[f64], i: usize| -> [f64; 4] {
        [inf.energy.e[i], inf.energy_raw.e[i], msp[i], ent[i]]
    };
    let mut nodes = Vec::new();
    for &i in id_nodes {
        let s = gather(&inf_id, &ent_id, &msp_id, i);
        nodes.push((i, false, s, inf_id.predictions[i], fix.id.labels()[i]));
    }
    for &i in ood_nodes {
        let s = gather(&inf_ood, &ent_ood, &msp_ood, i);
        nodes.push((i, true, s, inf_ood.predictions[i], None));
    }
    let is_ood: Vec<bool> = nodes.iter().map(|n| n.1).collect();
    let preds: Vec<usize> = nodes.iter().map(|n| n.3).collect();
    let labels: Vec<Option<usize>> = nodes.iter().map(|n| n.4).collect();
    let id_mask: Vec<bool> = is_ood.iter().map(|o| !o).collect();

    let mut reports = BTreeMap::new();
    let mut rows = BTreeMap::new();
    for (k, name) in SCORE_NAMES.iter().enumerate() {
        let scores: Vec<f64> = nodes.iter().map(|n| n.2[k]).collect();
        if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
            return Err(DetectionError::NonFinite(bad).into());
        }
        reports.insert(
            name.to_string(),
            evaluate(&scores, &is_ood, &preds, &labels, &id_mask)?,
        );
        rows.insert(
            name.to_string(),
            nodes
                .iter()
                .zip(&scores)
                .map(|(n, &score)| ScoreRow {
                    node_id: n.0,
                    score,
                    is_ood: n.1,
                    predicted: n.3,
                    label: n.4,
                })
                .collect(),
        );
    }
    let split = |k: usize, ood: bool| -> Vec<f64> {
        nodes
            .iter()
            .filter(|n| n.1 == ood)
            .map(|n| n.2[k])
            .collect()
    };
    let confidence = |ood: bool| -> Vec<f64> { split(2, ood).iter().map(|s| -s).collect() };
    Ok(Evaluation {
        reports,
        entropy_id: mean(&split(3, false)),
        entropy_ood: mean(&split(3, true)),
        rows,
        hist_energy: histogram(&split(0, false), &split(0, true), HIST_BINS),
        hist_confidence: histogram(&confidence(false), &confidence(true), HIST_BINS),
    })
}

/// `cfg` specialized to `mode` and `seed`; the supervised mode also drops
/// the bottleneck weight.
pub fn mode_config(cfg: &TideConfig, mode: ObjectiveMode, seed: u64) -> TideConfig {
    let c = TideConfig {
        seed,
        ..cfg.clone().with_mode(mode)
    };
    if mode == ObjectiveMode::Sl {
        c.sl_baseline()
    } else {
        c
    }
}

/// Outcome of one (mode, seed) run.
#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub mode: ObjectiveMode,
    pub seed: u64,
    pub best_epoch: usize,
    pub reports: BTreeMap<String, DetectionReport>,
    pub entropy_id: f64,
    pub entropy_ood: f64,
}

pub fn run_one(
    fix: &Fixture,
    cfg: &TideConfig,
    mode: ObjectiveMode,
    seed: u64,
) -> Result<RunResult, Error> {
    let cfg = mode_config(cfg, mode, seed);
    let exposure = cfg.exposure_enabled.then_some(&fix.ood);
    let out = train_tide(&fix.id, exposure, &cfg)?;
    let ev = evaluate_detection(&out.model, fix, &cfg)?;
    Ok(RunResult {
        mode,
        seed,
        best_epoch: out.best_epoch,
        reports: ev.reports,
        entropy_id: ev.entropy_id,
        entropy_ood: ev.entropy_ood,
    })
}

/// Worker count from `TIDE_THREADS`; unset means 1.
pub fn thread_count() -> Result<usize, Error> {
    match std::env::var("TIDE_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Usage(format!(
                "TIDE_THREADS={v:?} is not a positive integer"
            ))),
        },
    }
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(v: &[f64]) -> Self {
        let m = mean(v);
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        Self { mean: m, std }
    }
}

/// Summary columns: (header, score family, metric).
const COLUMNS: [(&str, &str, &str); 8] = [
    ("AUROC", "energy", "auroc"),
    ("AUPR", "energy", "aupr"),
    ("FPR95", "energy", "fpr95"),
    ("ID ACC", "energy", "id_accuracy"),
    ("AUROC w/o prop", "energy_raw", "auroc"),
    ("AUPR w/o prop", "energy_raw", "aupr"),
    ("FPR95 w/o prop", "energy_raw", "fpr95"),
    ("MSP AUROC", "msp", "auroc"),
];

fn metric(r: &DetectionReport, name: &str) -> f64 {
    match name {
        "auroc" => r.auroc,
        "aupr" => r.aupr,
        "fpr95" => r.fpr95,
        _ => r.id_accuracy,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeSummary {
    pub mode: ObjectiveMode,
    pub seeds: usize,
    /// Keyed `<score>.<metric>`, e.g. `energy_raw.auroc`.
    pub stats: BTreeMap<String, Stat>,
    pub entropy_id: Stat,
    pub entropy_gap: Stat,
}

impl ModeSummary {
    pub fn stat(&self, score: &str, metric: &str) -> Stat {
        self.stats[&format!("{score}.{metric}")]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub rows: Vec<ModeSummary>,
    pub runs: Vec<RunResult>,
}

impl Comparison {
    pub fn row(&self, mode: ObjectiveMode) -> Option<&ModeSummary> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn runs_of(&self, mode: ObjectiveMode) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.mode == mode)
    }

    /// Percentages, `mean ± std`.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| mode |");
        for (h, ..) in COLUMNS {
            write!(s, " {h} |").unwrap();
        }
        s.push_str(" ID entropy | entropy gap |\n|---|");
        s.push_str(&"---:|".repeat(COLUMNS.len() + 2));
        s.push('\n');
        for r in &self.rows {
            write!(s, "| {} |", r.mode).unwrap();
            for (_, score, m) in COLUMNS {
                let st = r.stat(score, m);
                write!(s, " {:.2} ± {:.2} |", 100.0 * st.mean, 100.0 * st.std).unwrap();
            }
            for st in [r.entropy_id, r.entropy_gap] {
                write!(s, " {:.4} ± {:.4} |", st.mean, st.std).unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Fractions, one row per mode.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,seeds");
        for (_, score, m) in COLUMNS {
            write!(s, ",{score}.{m}_mean,{score}.{m}_std").unwrap();
        }
        s.push_str(",entropy_id_mean,entropy_id_std,entropy_gap_mean,entropy_gap_std\n");
        for r in &self.rows {
            write!(s, "{},{}", r.mode, r.seeds).unwrap();
            for (_, score, m) in COLUMNS {
                let st = r.stat(score, m);
                write!(s, ",{:?},{:?}", st.mean, st.std).unwrap();
            }
            for st in [r.entropy_id, r.entropy_gap] {
                write!(s, ",{:?},{:?}", st.mean, st.std).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Writes `table.md`, `table.csv` and `runs.json` into `dir`.
pub fn write_comparison(dir: &Path, c: &Comparison) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut runs = serde_json::to_string_pretty(&c.runs).expect("runs serialize");
    runs.push('\n');
    for (name, text) in [
        ("table.md", c.to_markdown()),
        ("table.csv", c.to_csv()),
        ("runs.json", runs),
    ] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Trains and evaluates every (mode, seed) pair on `threads` workers.
/// Results do not depend on the worker count.
pub fn compare(
    fix: &Fixture,
    cfg: &TideConfig,
    modes: &[ObjectiveMode],
    seeds: &[u64],
    threads: usize,
) -> Result<Comparison, Error> {
    use rayon::prelude::*;
    if modes.is_empty() || seeds.is_empty() {
        return Err(Error::Usage(
            "compare needs at least one mode and one seed".into(),
        ));
    }
    let jobs: Vec<(ObjectiveMode, u64)> = modes
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Usage(e.to_string()))?;
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, s)| run_one(fix, cfg, m, s))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let rows = modes
        .iter()
        .map(|&mode| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.mode == mode).collect();
            let mut stats = BTreeMap::new();
            for score in SCORE_NAMES {
                for m in ["auroc", "aupr", "fpr95", "id_accuracy"] {
                    let v: Vec<f64> = mine.iter().map(|r| metric(&r.reports[score], m)).collect();
                    stats.insert(format!("{score}.{m}"), Stat::of(&v));
                }
            }
            let ent: Vec<f64> = mine.iter().map(|r| r.entropy_id).collect();
            let gap: Vec<f64> = mine.iter().map(|r| r.entropy_ood - r.entropy_id).collect();
            ModeSummary {
                mode,
                seeds: mine.len(),
                stats,
                entropy_id: Stat::of(&ent),
                entropy_gap: Stat::of(&gap),
            }
        })
        .collect();
    Ok(Comparison { rows, runs })
}
