//! Command-line front end: `generate`, `train`, `eval`, `compare` and
//! `check-grad`. Every command is a function of its flags and input files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bench::{gen_csbm, CsbmParams, ShiftChain};
use crate::detection::write_scores_csv;
use crate::experiment::{
    compare, evaluate_detection, thread_count, write_comparison, Comparison, Fixture, SCORE_NAMES,
};
use crate::gradcheck::{run_suite, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::graph::{load_graph, read_bundle, write_bundle, Bundle, Graph, GraphFiles};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::objectives::MarginOrientation;
use crate::train::{train_tide, write_log_jsonl, ObjectiveMode, TideConfig};
use crate::Error;

#[derive(Debug, Parser)]
#[command(
    name = "tide",
    version,
    about = "Node-level graph OOD detection experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an ID bundle and one shifted bundle per --shift.
    Generate(GenerateArgs),
    /// Train a model on a bundle.
    Train(TrainArgs),
    /// Score a checkpoint on an ID/OOD bundle pair.
    Eval(EvalArgs),
    /// Train and evaluate several objectives over several seeds.
    Compare(CompareArgs),
    /// Verify analytic gradients against central differences.
    CheckGrad(CheckGradArgs),
}

#[derive(Debug, Args)]
pub struct CsbmArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    pub p_out: f64,
    #[arg(long, default_value_t = 2.0)]
    pub mu_sep: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Seed for graph generation and shifts; `--seed` seeds training.
    #[arg(long, default_value_t = 0)]
    pub graph_seed: u64,
}

impl CsbmArgs {
    pub fn params(&self) -> CsbmParams {
        CsbmParams {
            n: self.n,
            classes: self.classes,
            dim: self.dim,
            p_in: self.p_in,
            p_out: self.p_out,
            mu_sep: self.mu_sep,
            noise: self.noise,
            seed: self.graph_seed,
            ..CsbmParams::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// `csbm` or `files` (features.txt, edges.txt, labels.txt, splits.json in --input).
    #[arg(long, default_value = "csbm")]
    pub kind: String,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub csbm: CsbmArgs,
    /// Shift chain, e.g. `feature:0.5`, `structure:0.3+feature:0.5`, `label:3`.
    #[arg(long = "shift")]
    pub shifts: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags that override the config file.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// JSON document with any subset of the config fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub objective: Option<ObjectiveMode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Bottleneck weight for all three encoders.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Pairwise MI weight for all three pairs.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda_cind: Option<f64>,
    #[arg(long)]
    pub lambda_oe: Option<f64>,
    #[arg(long)]
    pub prop_alpha: Option<f64>,
    #[arg(long)]
    pub prop_k: Option<usize>,
    /// Swap the hinge directions of the energy regularizer.
    #[arg(long)]
    pub flipped_margins: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TideConfig, Error> {
        let mut c = match &self.config {
            None => TideConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?
            }
        };
        if let Some(m) = self.objective {
            c.objective_mode = m;
        }
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { c.$field = v; })*};
        }
        set!(
            epochs,
            seed,
            hidden,
            lr,
            lambda_cind,
            lambda_oe,
            prop_alpha,
            prop_k
        );
        if let Some(b) = self.beta {
            c = c.with_beta(b);
        }
        if let Some(a) = self.alpha {
            c = c.with_alpha(a);
        }
        if self.flipped_margins {
            c.margin = MarginOrientation::Flipped;
        }
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Bundle whose exposure split feeds the energy regularizer; turns
    /// exposure training on.
    #[arg(long)]
    pub exposure: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Bundle holding the ID test nodes; defaults to --ood, which must
    /// then carry its own ID test split (label shifts).
    #[arg(long)]
    pub id: Option<PathBuf>,
    #[arg(long)]
    pub ood: PathBuf,
    #[arg(long)]
    pub prop_alpha: Option<f64>,
    #[arg(long)]
    pub prop_k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// ID bundle; without it a cSBM graph is generated from the flags below.
    #[arg(long)]
    pub id: Option<PathBuf>,
    /// OOD bundle paired with --id.
    #[arg(long)]
    pub ood: Option<PathBuf>,
    #[command(flatten)]
    pub csbm: CsbmArgs,
    /// Shift chain applied to the generated graph.
    #[arg(long, default_value = "feature:0.5")]
    pub shift: String,
    #[arg(long, value_delimiter = ',', default_value = "sl,ib,ib_cind,tide")]
    pub modes: Vec<ObjectiveMode>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub exposure: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckGradArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub h: f64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<Graph, Error> {
    Ok(read_bundle(path)?.to_graph()?)
}

fn describe(g: &Graph) -> String {
    format!(
        "n={} edges={} C={} d={}",
        g.n(),
        g.num_edges(),
        g.num_classes(),
        g.dim()
    )
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<Vec<PathBuf>, Error> {
    let chains = a
        .shifts
        .iter()
        .map(|s| {
            s.parse::<ShiftChain>()
                .map(|c| c.with_seed(a.csbm.graph_seed))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (g, mut meta) = match a.kind.as_str() {
        "csbm" => {
            let p = a.csbm.params();
            (
                gen_csbm(&p)?,
                BTreeMap::from([("csbm".to_string(), json!(p))]),
            )
        }
        "files" => {
            let dir = a
                .input
                .as_ref()
                .ok_or_else(|| Error::Usage("--kind files needs --input".into()))?;
            let files = GraphFiles::in_dir(dir);
            (
                load_graph(&files)?,
                BTreeMap::from([("source".to_string(), json!(dir))]),
            )
        }
        k => {
            return Err(Error::Usage(format!(
                "unknown --kind {k:?}; expected csbm or files"
            )))
        }
    };
    mkdir(&a.out)?;
    let mut written = Vec::new();
    let id_path = a.out.join("id.bundle");
    write_bundle(&id_path, &Bundle::from_graph(&g, meta.clone()))?;
    println!("id: {}", describe(&g));
    written.push(id_path);
    for chain in &chains {
        let fix = Fixture::shifted(&g, chain)?;
        meta.insert("shift".to_string(), json!(chain.to_string()));
        let path = a.out.join(format!("{}.bundle", chain.stem()));
        write_bundle(&path, &Bundle::from_graph(&fix.ood, meta.clone()))?;
        let s = fix.ood.splits();
        println!(
            "{}: {} shift={} test_id={} test_ood={} exposure={}",
            chain.stem(),
            describe(&fix.ood),
            chain,
            s.test_id.len(),
            s.test_ood.len(),
            s.exposure.len()
        );
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), Error> {
    let mut cfg = a.cfg.resolve()?;
    cfg.exposure_enabled = a.exposure.is_some();
    let g = load_bundle(&a.data)?;
    let exposure = a.exposure.as_deref().map(load_bundle).transpose()?;
    let out = train_tide(&g, exposure.as_ref(), &cfg)?;
    mkdir(&a.out)?;
    let config = serde_json::to_value(&cfg).expect("config serializes");
    save_checkpoint(&a.out, &out.model, cfg.seed, config)?;
    let log = a.out.join("train_log.jsonl");
    write_log_jsonl(&log, &out.log).map_err(|e| Error::io(&log, e))?;
    println!(
        "trained {} for {} epochs; best epoch {} val acc {:.4}",
        cfg.objective_mode, cfg.epochs, out.best_epoch, out.best_val_acc
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), Error> {
    let (model, manifest) = load_checkpoint(&a.model)?;
    let mut cfg: TideConfig = serde_json::from_value(manifest.config.clone())
        .map_err(|e| Error::Usage(format!("checkpoint config: {e}")))?;
    if let Some(v) = a.prop_alpha {
        cfg.prop_alpha = v;
    }
    if let Some(v) = a.prop_k {
        cfg.prop_k = v;
    }
    let ood = load_bundle(&a.ood)?;
    let id = match &a.id {
        Some(p) => load_bundle(p)?,
        None => ood.clone(),
    };
    let ev = evaluate_detection(&model, &Fixture { id, ood }, &cfg)?;
    mkdir(&a.out)?;
    let meta = json!({
        "config_hash": manifest.config_hash,
        "prop_alpha": cfg.prop_alpha,
        "prop_k": cfg.prop_k,
    });
    write(&a.out.join("report.json"), ev.to_json(meta))?;
    write(&a.out.join("hist.json"), ev.hist_json())?;
    for name in SCORE_NAMES {
        let file = if name == "energy" {
            "scores.csv".to_string()
        } else {
            format!("scores_{name}.csv")
        };
        let path = a.out.join(file);
        write_scores_csv(&path, &ev.rows[name]).map_err(|e| Error::io(&path, e))?;
    }
    let r = ev.report("energy");
    println!(
        "auroc={:.4} aupr={:.4} fpr95={:.4} id_acc={:.4} (n_id={} n_ood={})",
        r.auroc, r.aupr, r.fpr95, r.id_accuracy, r.n_id, r.n_ood
    );
    Ok(())
}

pub fn cmd_compare(a: &CompareArgs) -> Result<Comparison, Error> {
    let mut cfg = a.cfg.resolve()?;
    cfg.exposure_enabled = a.exposure;
    let fix = match (&a.id, &a.ood) {
        (Some(id), Some(ood)) => Fixture {
            id: load_bundle(id)?,
            ood: load_bundle(ood)?,
        },
        (None, None) => {
            let chain: ShiftChain = a.shift.parse()?;
            Fixture::csbm(&a.csbm.params(), &chain.with_seed(a.csbm.graph_seed))?
        }
        _ => return Err(Error::Usage("--id and --ood go together".into())),
    };
    let table = compare(&fix, &cfg, &a.modes, &a.seeds, thread_count()?)?;
    write_comparison(&a.out, &table)?;
    print!("{}", table.to_markdown());
    Ok(table)
}

pub fn cmd_check_grad(a: &CheckGradArgs) -> Result<(), Error> {
    let report = run_suite(a.seed, a.h, a.tolerance)?;
    println!("{report}");
    if let Some(p) = &a.json {
        write(
            p,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Error::GradCheck(format!(
            "max relative error {:.3e} exceeds {:e}",
            report.max_rel_error(),
            a.tolerance
        )))
    }
}

pub fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| ()),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a).map(|_| ()),
        Command::CheckGrad(a) => cmd_check_grad(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_tables_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_the_config_file() {
        let cli = Cli::try_parse_from([
            "tide", "train", "--data", "d", "--out", "o", "--beta", "0.1", "--epochs", "3",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else {
            panic!()
        };
        let cfg = a.cfg.resolve().unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!([cfg.beta_z, cfg.beta_v, cfg.beta_q], [0.1; 3]);
    }
}
