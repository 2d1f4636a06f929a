//! Fits the similarity head on correlated Gaussian pairs and compares the
//! resulting MI estimate to the true per-dimension MI.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tide::autodiff::Tensor;
use tide::train::{fit_pair_head, pair_estimate};

fn pairs(n: usize, dim: usize, rho: f64, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(n, dim, &mut rng);
    let e = Tensor::randn(n, dim, &mut rng);
    let c = (1.0 - rho * rho).sqrt();
    let y: Vec<f64> = x
        .data()
        .iter()
        .zip(e.data())
        .map(|(a, b)| rho * a + c * b)
        .collect();
    (x, Tensor::from_vec(n, dim, y).expect("shape matches"))
}

fn main() -> Result<(), tide::Error> {
    let (n, dim) = (400, 4);
    println!("rho    estimate   true MI");
    for rho in [0.0, 0.3, 0.6, 0.9] {
        let (x, y) = pairs(n, dim, rho, 7);
        let head = fit_pair_head(&x, &y, 300, 0.05, 0)?;
        let est = pair_estimate(&x, &y, &head)?;
        let truth = -0.5 * dim as f64 * (1.0 - rho * rho).ln();
        println!("{rho:.1}    {est:>8.4}   {truth:.4}");
    }
    Ok(())
}
