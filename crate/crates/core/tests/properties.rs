use proptest::prelude::*;

use phcirc_core::components::{ebers_moll, pn_diode_current, transformer_relation, EbersMoll};
use phcirc_core::graph::{fundamental_cycle_matrix, incidence_matrix, spanning_forest, DirectedGraph};

fn graph_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2..9usize).prop_flat_map(|n| {
        let edge = (0..n, 1..n).prop_map(move |(a, d)| (a, (a + d) % n));
        (Just(n), prop::collection::vec(edge, 0..16))
    })
}

proptest! {
    #[test]
    fn cycles_are_orthogonal_to_cuts((n, edges) in graph_strategy()) {
        let mut g = DirectedGraph::new();
        for v in 0..n {
            g.add_vertex(format!("{v}")).unwrap();
        }
        for (k, &(a, b)) in edges.iter().enumerate() {
            g.add_edge(format!("e{k}"), a, b).unwrap();
        }
        let a0 = incidence_matrix(&g);
        let b = fundamental_cycle_matrix(&g, &spanning_forest(&g)).unwrap();
        prop_assert!(a0.mul(&b.transpose()).is_zero());
        prop_assert_eq!(a0.rank() + b.rank(), edges.len());
    }

    #[test]
    fn transformer_is_lossless(t in -10.0..10.0f64, i1 in -5.0..5.0f64, u2 in -5.0..5.0f64) {
        let (f, e) = transformer_relation(t);
        let (i, u) = ([i1, -t * i1], [t * u2, u2]);
        for r in 0..2 {
            let res = f[(r, 0)] * i[0] + f[(r, 1)] * i[1] + e[(r, 0)] * u[0] + e[(r, 1)] * u[1];
            prop_assert!(res.abs() <= 1e-12 * (1.0 + t.abs()) * (1.0 + i1.abs() + u2.abs()));
        }
        prop_assert!((i[0] * u[0] + i[1] * u[1]).abs() <= 1e-12 * (1.0 + t * t) * (1.0 + i1 * i1 + u2 * u2));
    }

    #[test]
    fn base_current_identity(u_bc in -0.8..0.3f64, u_be in -0.3..0.8f64) {
        let p = EbersMoll::default();
        let (i_c, i_e) = ebers_moll(u_bc, u_be, &p).unwrap();
        let i_b = i_e - i_c;
        let c = (u_bc / p.v_t).exp_m1();
        let e = (u_be / p.v_t).exp_m1();
        let expected = p.i_s * (1.0 / p.alpha_f - 1.0) * e + p.i_s * (1.0 / p.alpha_r - 1.0) * c;
        prop_assert!((i_b - expected).abs() <= 1e-9 * expected.abs().max(p.i_s));
    }

    #[test]
    fn diode_sharpens_as_b_shrinks(u in 1e-4..0.05f64, a in 1e-14..1e-10f64) {
        let coarse = pn_diode_current(u, a, 0.01).unwrap();
        let fine = pn_diode_current(u, a, 0.001).unwrap();
        prop_assert!(fine >= coarse);
        prop_assert!(coarse >= a / 0.01 * u);
        prop_assert!(pn_diode_current(-u, a, 0.001).unwrap().abs() <= a);
    }
}
