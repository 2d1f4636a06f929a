//! Energy scores straight from logits: the score, its propagation over the
//! graph, and the three threshold-free metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tide::autodiff::Tensor;
use tide::detection::{
    aupr, auroc, energy_score, fpr_at_95_tpr, msp_score, predictive_entropy, propagate_energy,
};
use tide::gradcheck::random_graph;

fn main() -> Result<(), tide::Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_graph(40, 4, 3);
    let n = g.n();

    // the first half leans towards one class, the second half does not
    let mut logits = Tensor::randn(n, 3, &mut rng);
    for i in 0..n / 2 {
        let c = i % 3;
        logits.set(i, c, logits.get(i, c) + 2.5);
    }
    let is_ood: Vec<bool> = (0..n).map(|i| i >= n / 2).collect();

    let raw = energy_score(&logits);
    let msp = msp_score(&logits);
    let entropy = predictive_entropy(&logits);
    println!("score       auroc   aupr    fpr95");
    let show = |name: &str, s: &[f64]| -> Result<(), tide::Error> {
        println!(
            "{name:<11} {:.4}  {:.4}  {:.4}",
            auroc(s, &is_ood)?,
            aupr(s, &is_ood)?,
            fpr_at_95_tpr(s, &is_ood)?
        );
        Ok(())
    };
    show("energy", &raw.e)?;
    show("msp", &msp)?;
    show("entropy", &entropy)?;
    for k in [1, 2, 4] {
        let p = propagate_energy(&raw, &g, 0.5, k)?;
        show(&format!("prop k={k}"), &p.e)?;
    }
    Ok(())
}
