//! Builds a cSBM graph and one shifted copy per shift family, then writes
//! each as a bundle.
//!
//! cargo run --example generate_benchmark -- out_dir

use std::collections::BTreeMap;
use std::path::PathBuf;

use tide::bench::{gen_csbm, CsbmParams, ShiftChain};
use tide::experiment::Fixture;
use tide::graph::{write_bundle, Bundle};

fn main() -> Result<(), tide::Error> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "bench_out".into()),
    );
    std::fs::create_dir_all(&out).map_err(|e| tide::Error::io(&out, e))?;

    let params = CsbmParams::default();
    let g = gen_csbm(&params)?;
    let homophily = g
        .edges()
        .iter()
        .filter(|&&(u, v)| g.labels()[u] == g.labels()[v])
        .count() as f64
        / g.num_edges() as f64;
    println!(
        "id: n={} edges={} classes={} dim={} edge homophily={homophily:.3}",
        g.n(),
        g.num_edges(),
        g.num_classes(),
        g.dim()
    );
    write_bundle(
        out.join("id.bundle"),
        &Bundle::from_graph(&g, BTreeMap::new()),
    )?;

    for text in [
        "structure:0.5",
        "feature:0.5",
        "label:3",
        "structure:0.5+feature:0.5",
    ] {
        let chain: ShiftChain = text.parse::<ShiftChain>()?.with_seed(params.seed);
        let fix = Fixture::shifted(&g, &chain)?;
        let s = fix.ood.splits();
        let kept = g
            .edges()
            .iter()
            .filter(|&&(u, v)| fix.ood.has_edge(u, v))
            .count();
        println!(
            "{text:<26} edges kept {kept}/{}  test_id={} test_ood={} exposure={}",
            g.num_edges(),
            fix.id.splits().test_id.len(),
            s.test_ood.len(),
            s.exposure.len()
        );
        write_bundle(
            out.join(format!("{}.bundle", chain.stem())),
            &Bundle::from_graph(&fix.ood, BTreeMap::new()),
        )?;
    }
    println!("bundles in {}", out.display());
    Ok(())
}
