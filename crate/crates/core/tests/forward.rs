use std::collections::BTreeMap;

use fvcal_core::constitutive::{
    piola_inplane, solve_local, Branch, Elastic, Hardening, LocalState, Material, LOCAL_MAX_ITER, LOCAL_TOL,
};
use fvcal_core::fem::{FeModel, Schedule, Trajectory};
use fvcal_core::mesh::{build_notched_plate, Mesh, NotchedPlateSpec, BOTTOM, TOP};
use fvcal_core::params::ParamSpace;

fn steel() -> Material<f64> {
    Material {
        elastic: Elastic { e: 200_000.0, nu: 0.3 },
        hardening: Hardening::Voce { y: 330.0, s: 1000.0, d: 10.0 },
    }
}

fn plate(h: f64) -> FeModel {
    let mesh = build_notched_plate(&NotchedPlateSpec::default().with_edge_length(h)).unwrap();
    FeModel::new(mesh, 0.02, Schedule::nominal()).unwrap()
}

/// Two triangles covering `[0, w] x [0, h]`; every node is on a clamped or
/// driven edge, so the deformation is the homogeneous `diag(1, 1 + d/h)`.
fn patch(w: f64, h: f64) -> Mesh {
    let nodes = vec![[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
    let elements = vec![[0, 1, 2], [0, 2, 3]];
    let sets = BTreeMap::from([(BOTTOM.to_string(), vec![0, 1]), (TOP.to_string(), vec![2, 3])]);
    Mesh::new(nodes, elements, sets).unwrap()
}

#[test]
fn patch_small_strain_matches_linear_elasticity() {
    // transverse strain is suppressed, so sigma_22 = E / (1 - nu^2) eps_22
    let (w, h, t) = (2.0, 1.0, 0.1);
    let eps = 1e-7;
    let model = FeModel::new(patch(w, h), t, Schedule::new(vec![0.0, 1.0], eps * h).unwrap()).unwrap();
    let traj = model.solve(&steel()).unwrap();
    let expected = 200_000.0 / (1.0 - 0.09) * eps * w * t;
    let rel = (traj.loads[1] - expected).abs() / expected;
    assert!(rel < 1e-5, "load {} vs {expected}", traj.loads[1]);
    assert!(traj.branches[1].iter().all(|&b| b == Branch::Elastic));
}

#[test]
fn patch_load_follows_the_local_response() {
    let (w, h, t) = (1.0, 2.0, 0.05);
    let sched = Schedule::nominal();
    let model = FeModel::new(patch(w, h), t, sched.clone()).unwrap();
    let mat = steel();
    let traj = model.solve(&mat).unwrap();
    let mut xi = LocalState::VIRGIN;
    let mut f_prev = [1.0, 0.0, 0.0, 1.0];
    for n in 1..=sched.num_steps() {
        let f = [1.0, 0.0, 0.0, 1.0 + sched.top_displacement(n) / h];
        let sol = solve_local(&xi, &f, &f_prev, &mat, LOCAL_TOL, LOCAL_MAX_ITER).unwrap();
        let p = piola_inplane(&sol.state.to_array(), &f, &mat.elastic);
        let expected = p[3] * w * t;
        assert!((traj.loads[n] - expected).abs() <= 1e-9 * expected.abs(), "step {n}");
        for st in &traj.states[n] {
            assert!((st.alpha - sol.state.alpha).abs() <= 1e-12);
        }
        xi = sol.state;
        f_prev = f;
    }
    assert!(traj.states[sched.num_steps()][0].alpha > 0.0);
}

#[test]
fn converged_steps_balance_forces() {
    let model = plate(0.05);
    let mat = steel();
    let traj = model.solve(&mat).unwrap();
    for n in 1..=traj.num_steps() {
        let r = model.global_residual(&traj.displacements[n], &traj.states[n], &mat);
        let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let free = model.free_dofs().iter().fold(0.0f64, |m, &d| m.max(r[d].abs()));
        assert!(free <= 1e-10 * scale.max(1.0), "step {n}: free residual {free}");
        let top = model.reaction_load(&r);
        assert!((top - traj.loads[n]).abs() <= 1e-12 * top.abs());
        assert!((top + model.bottom_reaction(&r)).abs() <= 1e-8 * top.abs(), "step {n}");
    }
}

#[test]
fn load_grows_monotonically_and_localizes() {
    let model = plate(0.05);
    let traj = model.solve(&steel()).unwrap();
    assert_eq!(traj.loads[0], 0.0);
    assert!(traj.loads.windows(2).all(|w| w[1] > w[0]));
    let f_end = *traj.loads.last().unwrap();
    assert!((10.0..13.0).contains(&f_end), "final load {f_end}");
    let alpha = traj.max_alpha(traj.num_steps());
    assert!((0.28..=0.42).contains(&alpha), "max plastic strain {alpha}");
}

#[test]
fn rigid_translation_leaves_residual_unchanged() {
    let model = plate(0.1);
    let mat = steel();
    let traj = model.solve(&mat).unwrap();
    let n = traj.num_steps();
    let r0 = model.global_residual(&traj.displacements[n], &traj.states[n], &mat);
    let shifted: Vec<f64> =
        traj.displacements[n].iter().enumerate().map(|(d, v)| v + if d % 2 == 0 { 0.3 } else { -0.7 }).collect();
    let r1 = model.global_residual(&shifted, &traj.states[n], &mat);
    let scale = r0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in r0.iter().zip(&r1) {
        assert!((a - b).abs() <= 1e-10 * scale);
    }
}

#[test]
fn step_solution_does_not_depend_on_the_predictor() {
    let model = plate(0.1);
    let mat = steel();
    let traj = model.solve(&mat).unwrap();
    for n in [2, 5, 8] {
        let (u_a, ev_a, _) =
            model.solve_step(n, &traj.displacements[n - 1], None, &traj.states[n - 1], &mat).unwrap();
        let (u_b, ev_b, _) = model
            .solve_step(n, &traj.displacements[n - 1], Some(&traj.displacements[n - 2]), &traj.states[n - 1], &mat)
            .unwrap();
        let scale = u_a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in u_a.iter().zip(&u_b) {
            assert!((a - b).abs() <= 1e-9 * scale, "step {n}");
        }
        let (fa, fb) = (model.reaction_load(&ev_a.residual), model.reaction_load(&ev_b.residual));
        assert!((fa - fb).abs() <= 1e-9 * fa.abs());
    }
}

#[test]
fn zero_drive_stays_undeformed() {
    let mesh = build_notched_plate(&NotchedPlateSpec::default().with_edge_length(0.1)).unwrap();
    let model = FeModel::new(mesh, 0.02, Schedule::new(vec![0.0, 1.0, 2.0], 0.0).unwrap()).unwrap();
    let traj = model.solve(&steel()).unwrap();
    for n in 0..=2 {
        assert!(traj.displacements[n].iter().all(|&v| v == 0.0));
        assert_eq!(traj.loads[n], 0.0);
        assert!(traj.states[n].iter().all(|s| *s == LocalState::VIRGIN));
    }
}

#[test]
fn elastic_tangent_is_symmetric() {
    let model = plate(0.1);
    let mat = steel();
    let traj = model.solve(&mat).unwrap();
    let u = &traj.displacements[1];
    let ev = model.evaluate(u, &traj.displacements[0], &traj.states[0], &mat, true).unwrap();
    let mut checked = 0;
    for (e, k) in ev.tangents.iter().enumerate() {
        if ev.branches[e] != Branch::Elastic {
            continue;
        }
        let asym = (k - k.transpose()).abs().max();
        assert!(asym <= 1e-8 * k.abs().max(), "element {e}");
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn parameter_partials_match_differences() {
    let model = plate(0.1);
    let mat = steel();
    let traj = model.solve(&mat).unwrap();
    let space = ParamSpace::new(&mat, &["E", "nu", "Y", "S", "D"]).unwrap();
    let p = space.base_values();
    let n = traj.num_steps();
    let (u, u_prev) = (&traj.displacements[n], &traj.displacements[n - 1]);
    let seeded = space.seeded(&p);
    for e in (0..model.num_elements()).step_by(7) {
        let j = model.element_jacobians(
            e,
            u,
            u_prev,
            &traj.states[n][e],
            &traj.states[n - 1][e],
            traj.branches[n][e],
            &seeded,
            false,
        );
        let xi = traj.states[n][e].to_array();
        let u_e = model.gather(e, u);
        for k in 0..p.len() {
            let h = 1e-6 * p[k];
            let mut pp = p.clone();
            pp[k] += h;
            let rp = model.element_residual(e, &u_e, &xi, &space.material(&pp));
            pp[k] -= 2.0 * h;
            let rm = model.element_residual(e, &u_e, &xi, &space.material(&pp));
            for i in 0..6 {
                let fd = (rp[i] - rm[i]) / (2.0 * h);
                let scale = j.dr_dp.column(k).abs().max().max(1e-12);
                assert!((fd - j.dr_dp[(i, k)]).abs() <= 1e-6 * scale, "element {e} param {k}");
            }
        }
    }
}

#[test]
fn element_count_scales_with_edge_length() {
    let count = |h: f64| build_notched_plate(&NotchedPlateSpec::default().with_edge_length(h)).unwrap().num_elements();
    let (a, b) = (count(0.04), count(0.02));
    let ratio = b as f64 / a as f64;
    assert!((3.2..4.8).contains(&ratio), "{a} -> {b}");
}

#[test]
fn trajectory_file_round_trip() {
    let model = plate(0.1);
    let traj = model.solve(&steel()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.traj");
    traj.write(&path).unwrap();
    let back = Trajectory::read(&path).unwrap();
    assert_eq!(back, traj);
    let mut bytes = traj.to_bytes();
    bytes.truncate(bytes.len() - 3);
    assert!(Trajectory::from_bytes(&bytes).is_err());
    let csv = traj.loads_csv();
    assert!(csv.starts_with("step,time,F\n"));
    assert_eq!(csv.lines().count(), traj.times.len() + 1);
}
