use fvcal_core::constitutive::{Elastic, Hardening, Material};
use fvcal_core::fem::{FeModel, Schedule};
use fvcal_core::mesh::{build_notched_plate, Mesh, NotchedPlateSpec};
use fvcal_core::synth::{self, MeasurementSet, MlsSpec, NoiseSpec};

fn steel() -> Material<f64> {
    Material {
        elastic: Elastic { e: 200_000.0, nu: 0.3 },
        hardening: Hardening::Voce { y: 330.0, s: 1000.0, d: 10.0 },
    }
}

fn mesh(h: f64) -> Mesh {
    build_notched_plate(&NotchedPlateSpec::default().with_edge_length(h)).unwrap()
}

fn data(h: f64) -> (FeModel, MeasurementSet) {
    let model = FeModel::new(mesh(h), 0.02, Schedule::nominal()).unwrap();
    let ms = synth::generate(&model, &steel()).unwrap();
    (model, ms)
}

/// RMS of `a - b` over all displacement components of steps 1 onward.
fn rms_diff(a: &MeasurementSet, b: &MeasurementSet) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (u, v) in a.displacements.iter().zip(&b.displacements).skip(1) {
        for (x, y) in u.iter().zip(v) {
            s += (x - y).powi(2);
            n += 1;
        }
    }
    (s / n as f64).sqrt()
}

fn rms(a: &MeasurementSet) -> f64 {
    let zero = MeasurementSet { displacements: a.displacements.iter().map(|u| vec![0.0; u.len()]).collect(), ..a.clone() };
    rms_diff(a, &zero)
}

#[test]
fn generated_files_are_reproducible() {
    let (model, clean) = data(0.1);
    let spec = NoiseSpec::new(1.0, 1.0, 1.0, 42);
    let dir = tempfile::tempdir().unwrap();
    let write = |stem: &str| {
        let again = synth::generate(&model, &steel()).unwrap();
        synth::add_noise(&again, &spec).unwrap().write(dir.path(), stem).unwrap();
    };
    write("a");
    write("b");
    for suffix in ["_displacements.csv", "_loads.csv", ".toml"] {
        let a = std::fs::read(dir.path().join(format!("a{suffix}"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b{suffix}"))).unwrap();
        assert_eq!(a, b, "{suffix}");
    }
    let back = MeasurementSet::read(dir.path(), "a").unwrap();
    assert_eq!(back, synth::add_noise(&clean, &spec).unwrap());
    assert_eq!(back.provenance.noise, Some(spec));
    assert_eq!(back.provenance.mesh_id, model.mesh().fingerprint());
    assert_eq!(back.provenance.params["Y"], 330.0);
    back.check_against(model.mesh(), &model.schedule().times).unwrap();
    assert!(back.check_against(&mesh(0.05), &model.schedule().times).is_err());
}

#[test]
fn filtering_halves_the_noise_on_a_width_profile() {
    let (model, clean) = data(0.02);
    let noisy = synth::add_noise(&clean, &NoiseSpec::new(5.0, 5.0, 1.0, 7)).unwrap();
    let spec = MlsSpec::for_filter(model.mesh());
    let filtered = synth::filter(&noisy, model.mesh(), &spec).unwrap();
    // nodes on the line y = 0.8 H, clear of the notch ligament
    let line: Vec<usize> = (0..model.mesh().num_nodes()).filter(|&k| (model.mesh().nodes[k][1] - 0.8).abs() < 0.01).collect();
    assert!(line.len() > 20);
    let profile_rms = |ms: &MeasurementSet| {
        let mut s = 0.0;
        for (u, c) in ms.displacements.iter().zip(&clean.displacements).skip(1) {
            s += line.iter().map(|&k| (u[2 * k] - c[2 * k]).powi(2) + (u[2 * k + 1] - c[2 * k + 1]).powi(2)).sum::<f64>();
        }
        (s / (2 * line.len() * clean.num_steps()) as f64).sqrt()
    };
    let (before, after) = (profile_rms(&noisy), profile_rms(&filtered));
    assert!(after * 2.0 <= before, "noise rms {before:e} -> {after:e}");
    assert!(rms_diff(&filtered, &clean) < rms_diff(&noisy, &clean));
    assert_eq!(filtered.loads, noisy.loads);
    assert_eq!(filtered.provenance.filter, Some(spec));
}

#[test]
fn remap_reproduces_linear_fields() {
    let (a, b) = (mesh(0.05), mesh(0.03));
    let (_, mut ms) = data(0.05);
    let f = |p: &[f64; 2], n: usize| [1e-3 * n as f64 * (0.2 + p[0] - 2.0 * p[1]), 1e-3 * (p[1] - 0.5 * p[0])];
    for (n, u) in ms.displacements.iter_mut().enumerate() {
        *u = a.nodes.iter().flat_map(|p| f(p, n)).collect();
    }
    let spec = MlsSpec::for_meshes(1, &a, &b);
    for target in [&a, &b] {
        let out = synth::remap(&ms, &a, target, &spec).unwrap();
        for (n, u) in out.displacements.iter().enumerate() {
            for (k, p) in target.nodes.iter().enumerate() {
                let e = f(p, n);
                assert!((u[2 * k] - e[0]).abs() < 1e-12 && (u[2 * k + 1] - e[1]).abs() < 1e-12);
            }
        }
        assert_eq!(out.provenance.num_nodes, target.num_nodes());
        assert_eq!(out.provenance.remap.as_ref().unwrap().source_num_nodes, a.num_nodes());
    }
}

#[test]
fn remap_round_trip_between_resolutions() {
    let (model, clean) = data(0.02);
    let fine = mesh(0.01);
    let spec = MlsSpec::for_meshes(1, model.mesh(), &fine);
    let there = synth::remap(&clean, model.mesh(), &fine, &spec).unwrap();
    let back = synth::remap(&there, &fine, model.mesh(), &spec).unwrap();
    let rel = rms_diff(&back, &clean) / rms(&clean);
    assert!(rel <= 5e-3, "relative round-trip rms {rel:e}");
}
