//! Adds the objective's terms one at a time (sl, ib, ib_cind, tide) on a
//! joint structure and feature shift and writes the comparison tables.
//!
//! cargo run --release --example ablation -- [out_dir]

use std::path::PathBuf;

use tide::bench::CsbmParams;
use tide::experiment::{compare, thread_count, write_comparison, Fixture};
use tide::train::{ObjectiveMode, TideConfig};

fn main() -> Result<(), tide::Error> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "ablation_out".into()),
    );
    let shift = "structure:0.5+feature:0.5"
        .parse::<tide::bench::ShiftChain>()?
        .with_seed(0);
    let fix = Fixture::csbm(&CsbmParams::default(), &shift)?;
    let modes = [
        ObjectiveMode::Sl,
        ObjectiveMode::Ib,
        ObjectiveMode::IbCind,
        ObjectiveMode::Tide,
    ];
    let table = compare(
        &fix,
        &TideConfig::default(),
        &modes,
        &[0, 1, 2, 3, 4],
        thread_count()?,
    )?;
    write_comparison(&out, &table)?;
    print!("{}", table.to_markdown());
    println!();
    for mode in modes {
        let row = table.row(mode).expect("mode was run");
        let (p, r) = (row.stat("energy", "fpr95"), row.stat("energy_raw", "fpr95"));
        println!(
            "{:<8} fpr95 propagated {:.2}±{:.2}  raw {:.2}±{:.2}",
            mode.name(),
            100.0 * p.mean,
            100.0 * p.std,
            100.0 * r.mean,
            100.0 * r.std
        );
    }
    println!("tables in {}", out.display());
    Ok(())
}
