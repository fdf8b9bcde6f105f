use levy_teugels::bsde::{mean_se, Projector};
use levy_teugels::config::RunConfig;
use levy_teugels::levy_model::{clayton_copula, ClaytonCopulaParams, LevyModel, MarginalMeasure};
use levy_teugels::multi_index::graded_lex_enumerate;
use levy_teugels::orthobasis::{gram_schmidt, GramMatrix, DEFAULT_PRUNE_TOL};
use levy_teugels::pdie::{solve_linear_pdie, PdieOptions, SpaceGrid};
use levy_teugels::pricing::Payoff;
use levy_teugels::MultiIndex;
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn spd(size: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, size + 4), size).prop_map(|a| {
        (0..a.len())
            .map(|i| {
                (0..a.len())
                    .map(|j| dot(&a[i], &a[j]) + if i == j { 0.1 } else { 0.0 })
                    .collect()
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn multi_index_label_round_trips(parts in prop::collection::vec(0u32..6, 1..4)) {
        let p = MultiIndex::new(parts);
        prop_assert_eq!(MultiIndex::parse_label(&p.label()), Some(p));
    }

    #[test]
    fn graded_lex_is_sorted_by_degree(n in 1usize..4, d in 1u32..5) {
        let order = graded_lex_enumerate(n, d);
        prop_assert!(order.windows(2).all(|w| w[0].degree() <= w[1].degree()));
        let mut dedup = order.clone();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), order.len());
    }

    #[test]
    fn gram_schmidt_diagonalises(g in (3usize..8).prop_flat_map(spd)) {
        let size = g.len();
        let gram = GramMatrix { order: graded_lex_enumerate(size, 1), entries: g.clone() };
        let b = gram_schmidt(&gram, DEFAULT_PRUNE_TOL).unwrap();
        let c = b.coeffs();
        for i in 0..size {
            prop_assert_eq!(c[i][i], 1.0);
            for j in 0..i {
                let gj: Vec<f64> = (0..size).map(|k| dot(&g[k], &c[j])).collect();
                let scale = (b.norms_sq()[i] * b.norms_sq()[j]).sqrt();
                prop_assert!(dot(&c[i], &gj).abs() <= 1e-8 * scale.max(1e-12), "({i},{j})");
            }
        }
    }

    #[test]
    fn projector_is_idempotent_and_orthogonal(
        cols in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 12), 1..5),
        b in prop::collection::vec(-3.0f64..3.0, 12),
    ) {
        let p = Projector::new(cols.clone(), 1e-10);
        let pb = p.project(&b);
        let ppb = p.project(&pb);
        for (x, y) in pb.iter().zip(&ppb) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        let resid: Vec<f64> = b.iter().zip(&pb).map(|(x, y)| x - y).collect();
        for c in &cols {
            prop_assert!(dot(&resid, c).abs() <= 1e-8 * (1.0 + dot(c, c).sqrt() * dot(&b, &b).sqrt()));
        }
    }

    #[test]
    fn clayton_is_symmetric_and_bounded(u in 0.01f64..10.0, v in 0.01f64..10.0, mu in 0.1f64..5.0, eta in 0.0f64..=1.0) {
        let p = ClaytonCopulaParams::new(mu, eta).unwrap();
        let a = clayton_copula(&[u, v], &p).unwrap();
        let b = clayton_copula(&[v, u], &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        prop_assert!(a >= 0.0 && a <= u.min(v) + 1e-12);
    }

    #[test]
    fn mean_se_is_shift_invariant(v in prop::collection::vec(-5.0f64..5.0, 2..50), s in -10.0f64..10.0) {
        let (m, se) = mean_se(&v);
        let w: Vec<f64> = v.iter().map(|x| x + s).collect();
        let (m2, se2) = mean_se(&w);
        prop_assert!((m2 - m - s).abs() <= 1e-9);
        prop_assert!((se2 - se).abs() <= 1e-9);
    }

    #[test]
    fn call_minus_put_is_forward(s in 1.0f64..200.0, k in 1.0f64..200.0) {
        let c = Payoff::Call.value(&[s], k);
        let p = Payoff::Put.value(&[s], k);
        prop_assert!((c - p - (s - k)).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pdie_reproduces_affine_terminals(slope in -2.0f64..2.0, offset in -1.0f64..1.0, lambda in 0.2f64..2.0) {
        let model = LevyModel::zero(1)
            .unwrap()
            .with_copula(vec![MarginalMeasure::PoissonUnitJump { intensity: lambda }], None)
            .unwrap();
        let grid = SpaceGrid::with_spacing(&[-3.0], &[6.0], 0.25, &[0.0]).unwrap();
        let g = move |x: &[f64]| vec![offset + slope * x[0]];
        let sol = solve_linear_pdie(&model, &g, &grid, 1.0, PdieOptions::default()).unwrap();
        // unit jumps lie in the unit ball, so X is compensated and E X(1) = 0
        let want = offset + slope * 0.5;
        prop_assert!((sol.value(0, 0.0, &[0.5]) - want).abs() <= 1e-9);
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), paths in 1usize..10_000, degree in 1u32..5) {
        let text = format!(
            r#"{{"model": {{"dimension": 1, "atoms": [{{"x": [0.5], "intensity": 2.0}}]}},
                 "basis": {{"degree": {degree}}}, "simulation": {{"seed": {seed}, "paths": {paths}}}}}"#
        );
        let cfg = RunConfig::parse(&text).unwrap();
        let again = RunConfig::parse(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(cfg, again);
    }
}
