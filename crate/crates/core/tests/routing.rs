use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tide::autodiff::{Tape, Var};
use tide::bench::{gen_csbm, CsbmParams};
use tide::gradcheck::random_graph;
use tide::model::{ModelDims, Network, TideModel};
use tide::train::{
    forward_step, train_sl_baseline, train_tide, Noise, ObjectiveMode, StepOutput, TideConfig,
    TrainData,
};

fn dims(hidden: usize) -> ModelDims {
    ModelDims {
        input: 6,
        hidden,
        latent: hidden,
        classes: 3,
    }
}

/// Networks whose parameters receive a non-zero gradient from `pick`.
fn touched(alpha: f64, pick: impl Fn(&StepOutput) -> Var) -> Vec<Network> {
    let g = random_graph(10, 6, 1);
    let cfg = TideConfig {
        hidden: 6,
        ..TideConfig::default().with_alpha(alpha)
    };
    let data = TrainData::new(&g, None).unwrap();
    let model = TideModel::init(dims(6), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Noise::draw(&mut rng, 10, 6, 1024);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let out = forward_step(&mut tape, &bound, &data, &cfg, &noise).unwrap();
    let grads = tape.backward(pick(&out)).unwrap();
    let mut nets = Vec::new();
    for (name, v) in bound.named_params() {
        let nonzero = grads
            .get(*v)
            .is_some_and(|t| t.data().iter().any(|&x| x != 0.0));
        let net = Network::of(&name);
        if nonzero && !nets.contains(&net) {
            nets.push(net);
        }
    }
    nets
}

#[test]
fn reconstruction_term_only_reaches_the_joint_network() {
    assert_eq!(touched(0.01, |o| o.cind.unwrap()), vec![Network::Z]);
}

#[test]
fn without_pairwise_terms_each_total_stays_in_its_lane() {
    assert_eq!(touched(0.0, |o| o.totals[0]), vec![Network::Z]);
    assert_eq!(touched(0.0, |o| o.totals[1]), vec![Network::V]);
    assert_eq!(touched(0.0, |o| o.totals[2]), vec![Network::Q]);
}

#[test]
fn pairwise_terms_couple_the_networks_but_not_the_heads() {
    let all = vec![Network::Z, Network::V, Network::Q];
    for k in 0..3 {
        assert_eq!(touched(0.01, |o| o.totals[k]), all);
    }
    // detached samples: the head loss trains only the heads
    assert_eq!(touched(0.01, |o| o.pair_head.unwrap()), vec![Network::Pair]);
}

#[test]
fn joint_total_ignores_the_structure_network_without_pairwise_terms() {
    // finite-difference probe: perturbing a structure weight leaves the
    // joint network's total unchanged
    let g = random_graph(10, 6, 2);
    let cfg = TideConfig {
        hidden: 6,
        ..TideConfig::default().with_alpha(0.0)
    };
    let data = TrainData::new(&g, None).unwrap();
    let model = TideModel::init(dims(6), 4);
    let noise = Noise::draw(&mut ChaCha8Rng::seed_from_u64(1), 10, 6, 1024);
    let total_z = |m: &TideModel| {
        let mut tape = Tape::new();
        let b = m.bind_constant(&mut tape);
        let out = forward_step(&mut tape, &b, &data, &cfg, &noise).unwrap();
        tape.value(out.totals[0]).item()
    };
    let base = total_z(&model);
    let mut bumped = model.clone();
    bumped.structure.layers[0].weight.data_mut()[0] += 1e-3;
    assert_eq!(base, total_z(&bumped));
}

#[test]
fn without_coupling_terms_side_networks_match_plain_bottlenecks() {
    let g = gen_csbm(&CsbmParams {
        n: 80,
        dim: 6,
        ..CsbmParams::default()
    })
    .unwrap();
    let base = TideConfig {
        epochs: 15,
        hidden: 8,
        lambda_cind: 0.0,
        ..TideConfig::default().with_alpha(0.0)
    };
    let coupled = train_tide(&g, None, &base).unwrap();
    let plain = train_tide(&g, None, &base.clone().with_mode(ObjectiveMode::Ib)).unwrap();
    let side = |m: &TideModel| {
        m.named_params()
            .into_iter()
            .filter(|(n, _)| matches!(Network::of(n), Network::V | Network::Q | Network::Z))
            .map(|(n, t)| (n, t.clone()))
            .collect::<Vec<_>>()
    };
    for (r1, r2) in coupled.log.iter().zip(&plain.log) {
        assert_eq!(r1.losses.vib_v, r2.losses.vib_v);
        assert_eq!(r1.losses.vib_q, r2.losses.vib_q);
        assert_eq!(r1.losses.vib_z, r2.losses.vib_z);
    }
    assert_eq!(side(&coupled.model), side(&plain.model));
}

fn fixture() -> tide::graph::Graph {
    gen_csbm(&CsbmParams::default()).unwrap()
}

#[test]
fn training_halves_the_training_loss() {
    let out = train_tide(&fixture(), None, &TideConfig::default()).unwrap();
    let first = out.log[0].losses.ce_z;
    let last = out.log.last().unwrap().losses.ce_z;
    assert!(last <= 0.5 * first, "{first} -> {last}");
}

#[test]
fn supervised_baseline_separates_the_fixture() {
    let out = train_sl_baseline(&fixture(), &TideConfig::default()).unwrap();
    assert!(out.best_val_acc > 0.9, "{}", out.best_val_acc);
    let again = train_sl_baseline(&fixture(), &TideConfig::default()).unwrap();
    assert_eq!(
        out.model.named_params(),
        again.model.named_params(),
        "seeded runs must agree"
    );
    assert!(out
        .log
        .iter()
        .all(|r| r.losses.kl_z == 0.0 && r.losses.vib_v == 0.0));
}
