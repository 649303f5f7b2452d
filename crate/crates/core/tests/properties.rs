mod common;

use hypergp::gplvm::{gplvm_marginal_loglik, LatentConfiguration};
use hypergp::hypergraph::Hypergraph;
use hypergp::inducing::select_for_hypergraph;
use hypergp::io::{format_hypergraph, parse_hypergraph, NamedHypergraph};
use hypergp::kernel::{eigendecompose, matern_gram, AmplitudeScaling, MaternHyperparams, SpectralMatern};
use hypergp::metrics::{clustering_scores, ece, rmse};
use hypergp::synthetic::{random_hypergraph, rng, standard_normal_matrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

use common::jacobi_eigen;

fn hypergraph(seed: u64, n: usize, weighted: bool) -> Hypergraph<f64> {
    random_hypergraph(&mut rng(seed), n, n.max(3) - 1, 4, weighted)
}

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn laplacian_is_symmetric_with_unit_spectrum(seed in any::<u64>(), n in 2usize..16, weighted in any::<bool>()) {
        let h = hypergraph(seed, n, weighted);
        let l = h.laplacian().matrix().clone();
        prop_assert_eq!(&l, &l.transpose());
        let (values, _) = jacobi_eigen(&l);
        prop_assert!(values[0] > -1e-10);
        prop_assert!(values[n - 1] < 1.0 + 1e-10);
        let root = h.degrees().vertex_degrees.map(f64::sqrt);
        prop_assert!((&l * root).amax() < 1e-12);
    }

    #[test]
    fn dual_is_an_involution(seed in any::<u64>(), n in 1usize..14) {
        let h = hypergraph(seed, n, false);
        let back = h.dual().unwrap().dual().unwrap();
        prop_assert_eq!(back.incidence().to_dense::<f64>(), h.incidence().to_dense::<f64>());
    }

    #[test]
    fn matern_gram_is_psd(seed in any::<u64>(), n in 2usize..14, nu in 0.5f64..3.0, ell in 0.2f64..5.0) {
        let h = hypergraph(seed, n, true);
        let k = matern_gram(&eigendecompose(h.laplacian().matrix()).unwrap(), &MaternHyperparams::new(nu, ell, 1.0).unwrap()).unwrap();
        let (values, _) = jacobi_eigen(k.matrix());
        prop_assert!(values[0] >= -1e-10 * values[n - 1]);
        prop_assert!((k.matrix().diagonal().mean() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn selection_is_distinct_and_exact(seed in any::<u64>(), n in 2usize..20, frac in 0.0f64..=1.0) {
        let h = hypergraph(seed, n, false);
        let j = ((n as f64 * frac).round() as usize).clamp(1, n);
        let z = select_for_hypergraph(&h, j, None, seed).unwrap().indices;
        let mut sorted = z.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), j);
        prop_assert!(z.iter().all(|&v| v < n));
    }

    #[test]
    fn gplvm_objective_ignores_rotations(seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU, flip in any::<bool>()) {
        let h = hypergraph(seed, 8, false);
        let k = SpectralMatern::hypergraph(h.laplacian().matrix(), MaternHyperparams::default(), AmplitudeScaling::UnitMeanDiagonal).unwrap();
        let mut r = rng(seed);
        let x = standard_normal_matrix::<f64, _>(&mut r, 8, 2);
        let y = standard_normal_matrix::<f64, _>(&mut r, 8, 3);
        let (c, s) = (angle.cos(), angle.sin());
        let sign = if flip { -1.0 } else { 1.0 };
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s * sign, s, c * sign]);
        let a = gplvm_marginal_loglik(&LatentConfiguration::new(x.clone()), k.gram(), &y).unwrap().total();
        let b = gplvm_marginal_loglik(&LatentConfiguration::new(x * rot), k.gram(), &y).unwrap().total();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn ece_ignores_row_order(probs in proptest::collection::vec((0.0f64..1.0, 0usize..2), 1..40), shift in 0usize..40) {
        let n = probs.len();
        let p = DMatrix::from_fn(n, 2, |i, c| if c == 0 { probs[i].0 } else { 1.0 - probs[i].0 });
        let y: Vec<usize> = probs.iter().map(|t| t.1).collect();
        let order: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let p2 = p.select_rows(&order);
        let y2: Vec<usize> = order.iter().map(|&i| y[i]).collect();
        let a = ece(&y, &p, 10).unwrap();
        prop_assert!((a - ece(&y2, &p2, 10).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn clustering_scores_ignore_relabelling(
        pairs in proptest::collection::vec((0usize..4, 0usize..5), 1..50),
        perm in Just([3usize, 0, 4, 1, 2]).prop_shuffle(),
    ) {
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let relabelled: Vec<usize> = b.iter().map(|&l| perm[l] + 10).collect();
        let s = clustering_scores(&a, &b).unwrap();
        let t = clustering_scores(&a, &relabelled).unwrap();
        prop_assert!((s.ami - t.ami).abs() < 1e-12);
        prop_assert!((s.homogeneity - t.homogeneity).abs() < 1e-12);
        prop_assert!((s.completeness - t.completeness).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&s.homogeneity) && (0.0..=1.0).contains(&s.completeness));
        prop_assert!(s.ami <= 1.0 + 1e-12);
    }

    #[test]
    fn rmse_is_a_symmetric_distance(a in proptest::collection::vec(-1e3f64..1e3, 1..30), d in -10.0f64..10.0) {
        let b: Vec<f64> = a.iter().map(|v| v + d).collect();
        let ab = rmse(&a, &b).unwrap();
        prop_assert_eq!(ab, rmse(&b, &a).unwrap());
        prop_assert!((ab - d.abs()).abs() < 1e-9);
    }

    #[test]
    fn hypergraph_text_round_trips(seed in any::<u64>(), n in 1usize..15, weighted in any::<bool>()) {
        let h = hypergraph(seed, n, weighted);
        let named = NamedHypergraph { hypergraph: h, names: (0..n).map(|i| format!("node_{i}")).collect() };
        let parsed = parse_hypergraph(&format_hypergraph(&named).unwrap(), None).unwrap();
        prop_assert_eq!(parsed.hypergraph.weights(), named.hypergraph.weights());
        let renamed = |nh: &NamedHypergraph| -> Vec<Vec<String>> {
            nh.hypergraph.hyperedges().iter().map(|e| {
                let mut names: Vec<String> = e.iter().map(|&v| nh.names[v].clone()).collect();
                names.sort();
                names
            }).collect()
        };
        prop_assert_eq!(renamed(&parsed), renamed(&named));
    }
}
