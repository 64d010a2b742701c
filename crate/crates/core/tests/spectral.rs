mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use slash_core::attnops::AttnMap;
use slash_core::graphtext::{build_token_adjacency, serialize, Graph};
use slash_core::spectral::*;
use slash_core::synthmodel::{generate, GeneratorSpec};

proptest! {
    #[test]
    fn trace_energy_matches_edge_sum(seed in any::<u64>(), n in 2usize..30, dim in 1usize..8, p in 0.05..0.8f64) {
        let mut rng = common::rng(seed);
        let g = random_graph(n, p, &mut rng);
        let h = random_matrix(n, dim, &mut rng);
        let trace = dirichlet_energy(&h, &laplacian(&g).unwrap()).unwrap();
        let edges = common::edgewise_energy(&g.edges, &h);
        prop_assert!((trace - edges).abs() <= 1e-10 * edges.max(1.0));
    }

    #[test]
    fn laplacian_rows_sum_to_zero(seed in any::<u64>(), n in 2usize..30) {
        let g = random_graph(n, 0.3, &mut common::rng(seed));
        let l = laplacian(&g).unwrap().matrix;
        prop_assert_eq!(&l, &l.transpose());
        for r in l.row_iter() {
            prop_assert_eq!(r.sum(), 0.0);
        }
    }

    #[test]
    fn mixing_contracts_exactly(seed in any::<u64>(), lambda in 0.0..0.99f64) {
        let mut rng = common::rng(seed);
        let topo = random_matrix(5, 3, &mut rng);
        let v0 = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let rep = mix_with_sink(&topo, &v0, lambda).unwrap();
        let c = verify_contraction(&rep, 0, 4).unwrap();
        prop_assert!((c.lhs - c.rhs).abs() <= 1e-12 * c.rhs.max(1.0));
    }
}

#[test]
fn spec_examples_for_mixing() {
    let topo = DMatrix::from_row_slice(2, 1, &[2.0, 4.0]);
    let rep = mix_with_sink(&topo, &DVector::from_element(1, 0.0), 0.5).unwrap();
    assert_eq!(rep.h, DMatrix::from_row_slice(2, 1, &[1.0, 2.0]));
    let c = verify_contraction(&rep, 0, 1).unwrap();
    assert_eq!((c.lhs, c.rhs), (1.0, 1.0));

    let e = verify_expansion(&rep, 0.0, 0, 1).unwrap();
    assert!((e.observed_ratio - 2.0).abs() < 1e-12);
    assert_eq!(e.predicted_rho, 2.0);

    let near_one = mix_with_sink(&topo, &DVector::from_element(1, 0.0), 0.999).unwrap();
    assert!(near_one.h.abs().max() <= 0.001 * 4.0 + 1e-12);
}

#[test]
fn amplification_of_energy_at_heavy_sink() {
    let lap = laplacian(&Graph::new(3, vec![(0, 1), (1, 2)]).unwrap()).unwrap();
    let topo = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, -1.0, 0.5, 0.5]);
    let rep = mix_with_sink(&topo, &DVector::from_row_slice(&[3.0, 3.0]), 0.8).unwrap();
    let s = verify_spectral_amplification(&rep, &lap, 0.0).unwrap();
    assert!((s.e_sharpened / s.e_mixed - 25.0).abs() < 1e-10);
    let same = verify_spectral_amplification(&rep, &lap, 1.0).unwrap();
    assert!((same.e_sharpened - same.e_mixed).abs() <= 1e-12 * same.e_mixed);
}

#[test]
fn constant_topology_reports_undefined_decay() {
    let lap = laplacian(&Graph::new(3, vec![(0, 1), (1, 2)]).unwrap()).unwrap();
    let rep = mix_with_sink(&DMatrix::from_element(3, 2, 1.5), &DVector::zeros(2), 0.4).unwrap();
    let d = verify_energy_decay(&rep, &lap).unwrap();
    assert_eq!((d.e_mixed, d.e_topo, d.factor), (0.0, 0.0, None));
}

#[test]
fn per_node_sink_perturbation_moves_distances_linearly() {
    let delta = 1e-3;
    let mut rng = common::rng(11);
    for _ in 0..200 {
        let n = rng.random_range(2..12);
        let dim = rng.random_range(1..6);
        let topo = random_matrix(n, dim, &mut rng);
        let v0 = DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0));
        let lambda = rng.random_range(0.05..0.9);
        let lambdas: Vec<f64> = (0..n).map(|_| lambda + rng.random_range(-delta..=delta)).collect();
        let mut h = topo.clone();
        for k in 0..n {
            let row = topo.row(k) * (1.0 - lambdas[k]) + v0.transpose() * lambdas[k];
            h.set_row(k, &row);
        }
        let (k, l) = (0, n - 1);
        let lhs = (h.row(k) - h.row(l)).norm();
        let rhs = (1.0 - lambda) * (topo.row(k) - topo.row(l)).norm();
        // triangle inequality on h_k - h_l = (1-lambda)(t_k - t_l) + d_k (v0 - t_k) - d_l (v0 - t_l)
        let bound = delta
            * ((v0.transpose() - topo.row(k)).norm() + (v0.transpose() - topo.row(l)).norm());
        assert!((lhs - rhs).abs() <= bound + 1e-12, "{lhs} {rhs} {bound}");
    }
}

#[test]
fn exact_regime_has_no_residual() {
    let adj = build_token_adjacency(&serialize(&Graph::new(3, vec![(0, 1), (0, 2)]).unwrap()));
    let n = adj.n();
    let mut map = AttnMap::zeros(n);
    map.set(0, 0, 1.0);
    for i in 1..n {
        let nb: Vec<usize> = adj.preceding_neighbors(i).collect();
        if nb.is_empty() {
            map.set(i, 0, 1.0);
            continue;
        }
        map.set(i, 0, 0.5);
        for &j in &nb {
            map.set(i, j, 0.5 / nb.len() as f64);
        }
    }
    let values = random_matrix(n, 4, &mut common::rng(2));
    let step = implicit_gat_step(&map, &adj, &values).unwrap();
    assert_eq!(step.residual_norm, 0.0);
    let zero = implicit_gat_step(&map, &adj, &DMatrix::zeros(n, 4)).unwrap();
    assert_eq!(zero.residual_norm, 0.0);
}

fn unit_rows(n: usize, dim: usize, seed: u64) -> DMatrix<f64> {
    let mut v = random_matrix(n, dim, &mut common::rng(seed));
    for mut r in v.row_iter_mut() {
        let norm = r.norm();
        r /= norm;
    }
    v
}

#[test]
fn residual_bounded_by_off_structure_mass() {
    let mut spec = GeneratorSpec::default_for_seed(5);
    spec.layers = 3;
    spec.heads = 8;
    spec.planted = [(1, 2)].into();
    let t = generate(&spec).unwrap();
    let adj = spec.adjacency().unwrap();
    let map = t.map(1, 2);
    let values = unit_rows(t.n, 6, 9);
    let step = implicit_gat_step(map, &adj, &values).unwrap();
    assert!(step.residual_norm > 0.0);
    let (start, end) = adj.span();
    for i in start..end {
        let off: f64 = (1..=i)
            .filter(|&j| j == i || !adj.get(i, j))
            .map(|j| map.get(i, j))
            .sum();
        let diff = (step.h_full.row(i) - step.h_simplified.row(i)).norm();
        assert!(diff <= off + 1e-12);
    }
}

#[test]
fn residual_shrinks_with_generator_noise() {
    // the max is pinned by block-opening rows, whose residual is their own
    // diagonal whatever the noise level; the row mean must fall strictly
    let (mut last_max, mut last_mean) = (f64::INFINITY, f64::INFINITY);
    for noise in [0.2, 0.1, 0.05, 0.0] {
        let mut spec = GeneratorSpec::default_for_seed(1);
        spec.layers = 3;
        spec.heads = 8;
        spec.planted = [(1, 2)].into();
        spec.noise_fraction = noise;
        let t = generate(&spec).unwrap();
        let adj = spec.adjacency().unwrap();
        // with constant features the relative residual is exactly the row's
        // off-structure mass; zero-mean features let diffuse noise cancel
        let values = DMatrix::from_element(t.n, 6, 1.0);
        let map = t.map(1, 2);
        let step = implicit_gat_step(map, &adj, &values).unwrap();
        let (start, end) = adj.span();
        for i in start..end {
            let off: f64 = (1..=i).filter(|&j| j == i || !adj.get(i, j)).map(|j| map.get(i, j)).sum();
            let rel = (step.h_full.row(i) - step.h_simplified.row(i)).norm() / step.h_full.row(i).norm();
            assert!((rel - off).abs() < 1e-9);
        }
        let mean = (start..end)
            .map(|i| (step.h_full.row(i) - step.h_simplified.row(i)).norm() / step.h_full.row(i).norm())
            .sum::<f64>()
            / (end - start) as f64;
        assert!(step.residual_norm <= last_max + 1e-12, "noise {noise}: {} > {last_max}", step.residual_norm);
        assert!(mean < last_mean, "noise {noise}: {mean} !< {last_mean}");
        last_max = step.residual_norm;
        last_mean = mean;
    }
}

#[test]
fn verification_suite_passes() {
    let report = run_verification(&VerifyConfig {
        seeds: 5,
        ..VerifyConfig::default()
    })
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures().next());
}

#[test]
fn directed_graphs_are_rejected() {
    let mut g = Graph::new(2, vec![(0, 1)]).unwrap();
    g.directed = true;
    assert!(laplacian(&g).is_err());
}
