use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BenchError, ShiftChain, ShiftKind, ShiftSpec};
use crate::graph::{Graph, Splits};

fn rng_for(spec: &ShiftSpec) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(spec.seed)
}

/// Replaces `round(intensity * |E|)` uniformly chosen edges with the same
/// number of uniformly chosen pairs that were not edges before the shift.
/// Features, labels and splits are untouched.
pub fn apply_structure_shift(g: &Graph, spec: &ShiftSpec) -> Result<Graph, BenchError> {
    if spec.kind != ShiftKind::Structure {
        return Err(BenchError::InvalidShift(format!(
            "expected structure, got {spec}"
        )));
    }
    spec.validate()?;
    let mut rng = rng_for(spec);
    let mut edges = g.edges();
    let m = (spec.intensity * edges.len() as f64).round() as usize;
    if m == 0 {
        return Ok(g.clone());
    }
    let n = g.n();
    let available = n * n.saturating_sub(1) / 2 - edges.len();
    if available < m {
        return Err(BenchError::CannotRewire {
            needed: m,
            available,
        });
    }

    let original: HashSet<(usize, usize)> = edges.iter().copied().collect();
    edges.shuffle(&mut rng);
    edges.truncate(edges.len() - m);

    let added: Vec<(usize, usize)> = if available <= 4 * m {
        let mut pool: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|e| !original.contains(e))
            .collect();
        let (chosen, _) = pool.partial_shuffle(&mut rng, m);
        chosen.to_vec()
    } else {
        let mut seen = HashSet::with_capacity(m);
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            let e = (u.min(v), u.max(v));
            if u != v && !original.contains(&e) && seen.insert(e) {
                out.push(e);
            }
        }
        out
    };
    edges.extend(added);
    Ok(g.with_edges(edges)?)
}

/// Mixes `round(intensity * n)` nodes with a partner:
/// `mix * x_i + (1 - mix) * x_j`, using pre-shift features.
///
/// Partners follow a single random cycle over all nodes, so when every node
/// is mixed the partner map is a permutation and the per-dimension feature
/// mean is preserved.
pub fn apply_feature_shift(g: &Graph, spec: &ShiftSpec) -> Result<Graph, BenchError> {
    let ShiftKind::Feature { mix } = spec.kind else {
        return Err(BenchError::InvalidShift(format!(
            "expected feature, got {spec}"
        )));
    };
    spec.validate()?;
    let n = g.n();
    if n < 2 {
        return Err(BenchError::InvalidShift(format!(
            "feature mixing needs at least 2 nodes, got {n}"
        )));
    }
    let mut rng = rng_for(spec);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mixed = (spec.intensity * n as f64).round() as usize;

    let x = g.features();
    let mut out = x.clone();
    for k in 0..mixed {
        let (i, j) = (order[k], order[(k + 1) % n]);
        for (o, (&a, &b)) in out.row_mut(i).iter_mut().zip(x.row(i).iter().zip(x.row(j))) {
            *o = mix * a + (1.0 - mix) * b;
        }
    }
    Ok(g.with_features(out)?)
}

/// Structure or feature shift by kind.
pub fn apply_shift(g: &Graph, spec: &ShiftSpec) -> Result<Graph, BenchError> {
    match spec.kind {
        ShiftKind::Structure => apply_structure_shift(g, spec),
        ShiftKind::Feature { .. } => apply_feature_shift(g, spec),
        ShiftKind::Label { .. } => Err(BenchError::InvalidShift(
            "label shift changes splits; use label_leave_out_split".into(),
        )),
    }
}

/// Result of holding classes out of the labeled splits.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSplit {
    /// Remapped graph: held-out nodes are unlabeled, in `test_ood` or (if
    /// they were training nodes) in `exposure`.
    pub graph: Graph,
    pub num_classes: usize,
    /// Original class to new class; `None` for held-out classes.
    pub class_map: Vec<Option<usize>>,
    pub original_labels: Vec<Option<usize>>,
}

/// Holds `ood_classes` out and relabels the rest to `0..C - |ood_classes|`
/// in increasing order of original class.
pub fn label_leave_out_split(g: &Graph, ood_classes: &[usize]) -> Result<LabelSplit, BenchError> {
    let c = g.num_classes();
    let held: BTreeSet<usize> = ood_classes.iter().copied().collect();
    if held.is_empty() {
        return Err(BenchError::InvalidShift(
            "held-out class set is empty".into(),
        ));
    }
    if let Some(&bad) = held.iter().find(|&&k| k >= c) {
        return Err(BenchError::InvalidShift(format!(
            "class {bad} does not exist ({c} classes)"
        )));
    }
    if held.len() == c {
        return Err(BenchError::InvalidShift(
            "cannot hold out every class".into(),
        ));
    }
    let mut class_map = vec![None; c];
    let mut next = 0;
    for (k, slot) in class_map.iter_mut().enumerate() {
        if !held.contains(&k) {
            *slot = Some(next);
            next += 1;
        }
    }

    let original = g.labels().to_vec();
    let is_ood = |i: usize| original[i].is_some_and(|l| held.contains(&l));
    let labels: Vec<Option<usize>> = original
        .iter()
        .map(|l| l.and_then(|k| class_map[k]))
        .collect();
    let s = g.splits();
    let keep = |v: &[usize]| {
        v.iter()
            .copied()
            .filter(|&i| !is_ood(i))
            .collect::<Vec<_>>()
    };
    let exposure: Vec<usize> = s.train.iter().copied().filter(|&i| is_ood(i)).collect();
    let exposed: HashSet<usize> = exposure.iter().copied().collect();
    let splits = Splits {
        train: keep(&s.train),
        val: keep(&s.val),
        test_id: keep(&s.test_id),
        test_ood: (0..g.n())
            .filter(|&i| is_ood(i) && !exposed.contains(&i))
            .collect(),
        exposure,
    };
    let graph = g.with_labels(labels, next, splits)?;
    Ok(LabelSplit {
        graph,
        num_classes: next,
        class_map,
        original_labels: original,
    })
}

/// Marks a shifted graph for evaluation: nodes listed in `exposure` are kept
/// for exposure training and every other node is a test OOD node. Labels
/// are kept but no labeled split remains.
pub fn ood_view(shifted: &Graph, exposure: &[usize]) -> Result<Graph, BenchError> {
    let exposed: HashSet<usize> = exposure.iter().copied().collect();
    let splits = Splits {
        test_ood: (0..shifted.n()).filter(|i| !exposed.contains(i)).collect(),
        exposure: exposure.to_vec(),
        ..Splits::default()
    };
    Ok(shifted.with_splits(splits)?)
}

/// Applies a chain and returns the OOD graph.
///
/// Structure and feature chains shift the whole graph, then take the ID
/// training nodes as the exposure set. A label chain returns the remapped
/// graph, which holds both ID and OOD splits.
pub fn apply_shifts(g: &Graph, chain: &ShiftChain) -> Result<Graph, BenchError> {
    if let [ShiftSpec {
        kind: ShiftKind::Label { classes },
        ..
    }] = chain.0.as_slice()
    {
        return Ok(label_leave_out_split(g, classes)?.graph);
    }
    let mut current = g.clone();
    for spec in &chain.0 {
        current = apply_shift(&current, spec)?;
    }
    ood_view(&current, &g.splits().train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::bench::{gen_csbm, CsbmParams};

    fn fixture() -> Graph {
        gen_csbm(&CsbmParams {
            n: 120,
            p_in: 0.2,
            p_out: 0.02,
            ..CsbmParams::default()
        })
        .unwrap()
    }

    fn intra_fraction(g: &Graph) -> f64 {
        let e = g.edges();
        let same = e
            .iter()
            .filter(|&&(u, v)| g.labels()[u] == g.labels()[v])
            .count();
        same as f64 / e.len() as f64
    }

    #[test]
    fn zero_intensity_is_identity() {
        let g = fixture();
        assert_eq!(
            apply_structure_shift(&g, &ShiftSpec::structure(0.0, 3)).unwrap(),
            g
        );
        assert_eq!(
            apply_feature_shift(&g, &ShiftSpec::feature(1.0, 3)).unwrap(),
            g
        );
    }

    #[test]
    fn structure_shift_preserves_counts_and_destroys_homophily() {
        let g = fixture();
        let before = intra_fraction(&g);
        for intensity in [0.3, 1.0] {
            let s = apply_structure_shift(&g, &ShiftSpec::structure(intensity, 9)).unwrap();
            assert_eq!(s.num_edges(), g.num_edges());
            assert_eq!(s.features(), g.features());
            assert_eq!(s.labels(), g.labels());
        }
        let s = apply_structure_shift(&g, &ShiftSpec::structure(1.0, 9)).unwrap();
        let after = intra_fraction(&s);
        assert!(before > 0.6, "{before}");
        assert!((after - 0.25).abs() < 0.08, "{after}");
        // full rewiring never keeps an original edge
        for (u, v) in s.edges() {
            assert!(!g.has_edge(u, v));
        }
    }

    #[test]
    fn complete_graph_cannot_rewire() {
        let n = 4;
        let edges: Vec<_> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect();
        let g = Graph::new(
            Tensor::zeros(n, 1),
            edges,
            vec![None; n],
            1,
            Splits::default(),
        )
        .unwrap();
        assert!(matches!(
            apply_structure_shift(&g, &ShiftSpec::structure(1.0, 0)),
            Err(BenchError::CannotRewire {
                needed: 6,
                available: 0
            })
        ));
    }

    #[test]
    fn two_nodes_meet_in_the_middle() {
        let x = Tensor::from_rows(&[vec![0.0, 2.0], vec![4.0, -2.0]]).unwrap();
        let g = Graph::new(x, [(0, 1)], vec![None; 2], 1, Splits::default()).unwrap();
        let s = apply_feature_shift(&g, &ShiftSpec::feature(0.5, 11)).unwrap();
        assert_eq!(s.features().row(0), &[2.0, 0.0]);
        assert_eq!(s.features().row(1), &[2.0, 0.0]);
        assert_eq!(s.edges(), g.edges());
    }

    #[test]
    fn feature_mean_preserved_under_full_mixing() {
        let g = fixture();
        let s = apply_feature_shift(&g, &ShiftSpec::feature(0.3, 5)).unwrap();
        for j in 0..g.dim() {
            let m0: f64 = (0..g.n()).map(|i| g.features().get(i, j)).sum();
            let m1: f64 = (0..g.n()).map(|i| s.features().get(i, j)).sum();
            assert!((m0 - m1).abs() < 1e-9);
        }
        assert_eq!(s.edges(), g.edges());
    }

    #[test]
    fn single_node_feature_shift_fails() {
        let g = Graph::new(Tensor::zeros(1, 1), [], vec![None], 1, Splits::default()).unwrap();
        assert!(apply_feature_shift(&g, &ShiftSpec::feature(0.5, 0)).is_err());
    }

    #[test]
    fn seven_classes_hold_out_three() {
        let g = gen_csbm(&CsbmParams {
            n: 140,
            classes: 7,
            ..CsbmParams::default()
        })
        .unwrap();
        let split = label_leave_out_split(&g, &[4, 5, 6]).unwrap();
        assert_eq!(split.num_classes, 4);
        assert_eq!(split.graph.num_classes(), 4);
        let s = split.graph.splits();
        for &i in &s.test_ood {
            assert!(split.original_labels[i].unwrap() >= 4);
        }
        for &i in s.train.iter().chain(&s.val).chain(&s.test_id) {
            assert!(split.original_labels[i].unwrap() < 4);
        }
        assert!(label_leave_out_split(&g, &[]).is_err());
        assert!(label_leave_out_split(&g, &[0, 1, 2, 3, 4, 5, 6]).is_err());
    }

    #[test]
    fn ood_view_excludes_exposure() {
        let g = fixture();
        let chain: ShiftChain = "structure:0.5+feature:0.5".parse().unwrap();
        let o = apply_shifts(&g, &chain.with_seed(1)).unwrap();
        assert_eq!(o.splits().exposure, g.splits().train);
        assert_eq!(o.splits().test_ood.len() + g.splits().train.len(), g.n());
    }
}
