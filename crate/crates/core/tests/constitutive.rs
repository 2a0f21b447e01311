use fvcal_core::constitutive::{
    kirchhoff_stress, solve_local, yield_function, Branch, Elastic, Hardening, LocalState, Material, LOCAL_MAX_ITER,
    LOCAL_TOL,
};
use proptest::prelude::*;

const I2: [f64; 4] = [1.0, 0.0, 0.0, 1.0];

fn steel() -> Material<f64> {
    Material {
        elastic: Elastic { e: 200_000.0, nu: 0.3 },
        hardening: Hardening::Voce { y: 330.0, s: 1000.0, d: 10.0 },
    }
}

fn det(f: &[f64; 4]) -> f64 {
    f[0] * f[3] - f[1] * f[2]
}

fn mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3], a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3]]
}

fn rotation(theta: f64) -> [f64; 4] {
    let (s, c) = theta.sin_cos();
    [c, -s, s, c]
}

/// Deformation path from the identity through `incs` scaled by `scale`.
fn path(incs: &[[f64; 4]], scale: f64) -> Vec<[f64; 4]> {
    let mut f = I2;
    let mut out = vec![f];
    for d in incs {
        f = [f[0] + scale * d[0], f[1] + scale * d[1], f[2] + scale * d[2], f[3] + scale * d[3]];
        out.push(f);
    }
    out
}

fn run(path: &[[f64; 4]], mat: &Material<f64>) -> Vec<(LocalState, Branch)> {
    let mut xi = LocalState::VIRGIN;
    let mut out = vec![(xi, Branch::Elastic)];
    for w in path.windows(2) {
        let sol = solve_local(&xi, &w[1], &w[0], mat, LOCAL_TOL, LOCAL_MAX_ITER).unwrap();
        xi = sol.state;
        out.push((xi, sol.branch));
    }
    out
}

fn increments() -> impl Strategy<Value = Vec<[f64; 4]>> {
    prop::collection::vec(prop::array::uniform4(-1.0f64..1.0), 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn converged_states_are_admissible(incs in increments(), scale in 1e-4f64..0.03) {
        let mat = steel();
        let p = path(&incs, scale);
        prop_assume!(p.iter().all(|f| det(f) > 0.5));
        let hist = run(&p, &mat);
        for (k, (xi, br)) in hist.iter().enumerate().skip(1) {
            let st = kirchhoff_stress(xi, det(&p[k]), &mat.elastic).unwrap();
            // plane stress
            prop_assert!(st.tau[3].abs() <= 1e-8 * st.tau_norm().max(330.0));
            let f = yield_function(xi, &mat);
            match br {
                Branch::Plastic => {
                    prop_assert!(f.abs() <= 1e-9 * 330.0);
                    prop_assert!((xi.isochoric_det() - 1.0).abs() <= 1e-10);
                }
                Branch::Elastic => prop_assert!(f <= 1e-9 * 330.0),
            }
            prop_assert!(xi.alpha >= hist[k - 1].0.alpha);
        }
    }

    #[test]
    fn superposed_rotation_leaves_invariants_unchanged(incs in increments(), scale in 1e-4f64..0.03, theta in -3.0f64..3.0) {
        let mat = steel();
        let p = path(&incs, scale);
        prop_assume!(p.iter().all(|f| det(f) > 0.5));
        let q = rotation(theta);
        let rotated: Vec<[f64; 4]> = p.iter().map(|f| mul(&q, f)).collect();
        let (a, b) = (run(&p, &mat), run(&rotated, &mat));
        for ((xa, ba), (xb, bb)) in a.iter().zip(&b) {
            prop_assert_eq!(ba, bb);
            prop_assert!((xa.alpha - xb.alpha).abs() <= 1e-12);
            prop_assert!((xa.ie - xb.ie).abs() <= 1e-12);
            prop_assert!((xa.f33 - xb.f33).abs() <= 1e-12);
            prop_assert!((xa.zeta_norm() - xb.zeta_norm()).abs() <= 1e-10 * xa.zeta_norm().max(1e-6));
        }
    }

    #[test]
    fn elastic_excursion_returns_to_the_virgin_state(inc in prop::array::uniform4(-1.0f64..1.0), scale in 1e-6f64..4e-4) {
        let mat = steel();
        let f = [1.0 + scale * inc[0], scale * inc[1], scale * inc[2], 1.0 + scale * inc[3]];
        let hist = run(&[I2, f, I2], &mat);
        prop_assert!(hist.iter().all(|(_, b)| *b == Branch::Elastic));
        let back = hist[2].0.to_array();
        let virgin = LocalState::VIRGIN.to_array();
        for k in 0..6 {
            prop_assert!((back[k] - virgin[k]).abs() <= 1e-12, "{:?}", back);
        }
    }
}
