//! Bottleneck training against plain supervised training under one shift,
//! over several seeds, with and without energy propagation.
//!
//! cargo run --release --example ib_vs_sl -- [shift] [seeds]

use tide::bench::{CsbmParams, ShiftChain};
use tide::experiment::{compare, thread_count, Fixture};
use tide::train::{ObjectiveMode, TideConfig};

fn main() -> Result<(), tide::Error> {
    let mut args = std::env::args().skip(1);
    let shift: ShiftChain = args
        .next()
        .unwrap_or_else(|| "feature:0.5".into())
        .parse()?;
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);

    let fix = Fixture::csbm(&CsbmParams::default(), &shift.with_seed(0))?;
    let seeds: Vec<u64> = (0..seeds).collect();
    let table = compare(
        &fix,
        &TideConfig::default(),
        &[ObjectiveMode::Sl, ObjectiveMode::Ib],
        &seeds,
        thread_count()?,
    )?;
    print!("{}", table.to_markdown());
    println!();
    for mode in [ObjectiveMode::Sl, ObjectiveMode::Ib] {
        let row = table.row(mode).expect("mode was run");
        let (raw, prop) = (row.stat("energy_raw", "auroc"), row.stat("energy", "auroc"));
        println!(
            "{:<3} raw auroc {:.2}±{:.2}  propagated {:.2}±{:.2}  id entropy {:.3}  gap {:.3}",
            mode.name(),
            100.0 * raw.mean,
            100.0 * raw.std,
            100.0 * prop.mean,
            100.0 * prop.std,
            row.entropy_id.mean,
            row.entropy_gap.mean
        );
    }
    Ok(())
}
