//! Central-difference check of every loss component and of the per-network
//! routed gradients.
//!
//! cargo run --example gradient_check -- [seed]

use tide::gradcheck::{run_suite, DEFAULT_STEP, DEFAULT_TOLERANCE};

fn main() -> Result<(), tide::Error> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let report = run_suite(seed, DEFAULT_STEP, DEFAULT_TOLERANCE)?;
    println!("{report}");
    if !report.passed() {
        std::process::exit(2);
    }
    Ok(())
}
