//! End-to-end acceptance checks, one test per criterion. Each prints a
//! single PASS/FAIL line with the measured numbers, then asserts.

use std::cell::Cell;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use fvcal_cli::invariants::{check_program, program, round_trip, ROUND_TRIP_TOL};
use fvcal_cli::runner::Problem;
use fvcal_cli::studies::{self, GroupSummary};
use fvcal_cli::{Method, RunConfig};
use fvcal_core::constitutive::{Elastic, Hardening, Material};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

// Timing results are only meaningful when nothing else runs alongside.
static SERIAL: Mutex<()> = Mutex::new(());

fn config(name: &str, edge_length: f64) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.plate.edge_length = edge_length;
    cfg
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let mark = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "acceptance {id} [{mark}] {name}: {detail}").unwrap();
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn group<'a>(groups: &'a [GroupSummary], case: &str, method: Method) -> &'a GroupSummary {
    groups
        .iter()
        .find(|g| g.case == case && g.method == method.as_str())
        .unwrap_or_else(|| panic!("no group {case}/{method}"))
}

fn err(g: &GroupSummary) -> Vec<f64> {
    g.mean_error_percent.clone().expect("truth known")
}

#[test]
fn c1_gradient_equivalence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut cfg = config("e1.cfg", 0.02);
    cfg.inverse.truncate(1);
    let dir = tempfile::tempdir().unwrap();
    let g = studies::gradcheck(&cfg, dir.path()).unwrap();
    let femu = &g.summaries[0];
    let tol = 1e-6 * femu.analytic.abs();
    let pass = g.vfm_fs_adjoint_rel <= 1e-12 && femu.window_min_error <= tol;
    let detail = format!(
        "VFM FS/adjoint max rel diff {:.2e} (<= 1e-12); FEMU adjoint FD error {:.2e} in [1e-6, 1e-3] (<= {tol:.2e}), \
         minimum {:.2e} at h={:.0e}",
        g.vfm_fs_adjoint_rel, femu.window_min_error, femu.min_error, femu.min_step
    );
    report(1, "gradient equivalence", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn c2_noiseless_recovery() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut cfg = config("e1.cfg", 0.02);
    cfg.inverse[0].methods = vec![Method::FemuAdjoint, Method::VfmFs, Method::VfmAdjoint];
    let dir = tempfile::tempdir().unwrap();
    let r = studies::calibrate(&cfg, dir.path()).unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for g in &r.groups {
        let e = max_abs(&err(g));
        worst = worst.max(e);
        parts.push(format!("{}/{} {e:.4}%", g.inverse, g.method));
    }
    let pass = worst <= 0.1 && r.groups.iter().all(|g| g.failed == 0);
    let detail = format!("worst error {worst:.4}% (<= 0.1%): {}", parts.join(", "));
    report(2, "noiseless recovery", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn c3_timing_ordering() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut cfg = config("e1.cfg", 0.05);
    cfg.inverse.truncate(1);
    let dir = tempfile::tempdir().unwrap();
    let t = studies::timing(&cfg, dir.path()).unwrap();
    let w = |m| t.time(m).unwrap();
    let (fs, adj, vfd, fa, ffd) =
        (w(Method::VfmFs), w(Method::VfmAdjoint), w(Method::VfmFd), w(Method::FemuAdjoint), w(Method::FemuFd));
    let comparable = fs / adj <= 2.0 && adj / fs <= 2.0;
    let pass = comparable && fs.max(adj) < vfd && vfd < fa && fa < ffd;
    let detail = format!(
        "VFM-FS {fs:.3}s, VFM-Adjoint {adj:.3}s, VFM-FD {vfd:.3}s, FEMU-Adjoint {fa:.3}s, FEMU-FD {ffd:.3}s; \
         ratios to VFM-Adjoint {:.2} {:.2} {:.2} {:.2}",
        fs / adj,
        vfd / adj,
        fa / adj,
        ffd / adj
    );
    report(3, "timing ordering", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn c4_multistart() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = config("e2.cfg", 0.05);
    let dir = tempfile::tempdir().unwrap();
    let r = studies::calibrate(&cfg, dir.path()).unwrap();
    let truth = cfg.inverse[0].truth_values(&cfg.truth_material()).unwrap();
    let mut worst: f64 = 0.0;
    let mut ok = 0;
    for rec in &r.records {
        if let Ok(c) = &rec.outcome {
            worst = worst.max(max_abs(&c.errors(&truth)));
            ok += 1;
        }
    }
    let means: Vec<String> = r.groups.iter().map(|g| format!("{} mean {:.4}%", g.method, max_abs(&err(g)))).collect();
    let pass = ok == 20 && worst <= 0.1;
    let detail = format!("{ok}/20 runs converged, worst single-run error {worst:.4}% (<= 0.1%); {}", means.join(", "));
    report(4, "multistart", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn c5_noise_robustness() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = config("e3.cfg", 0.02);
    let dir = tempfile::tempdir().unwrap();
    let mut raw = cfg.clone();
    raw.noise.as_mut().unwrap().filter = vec![false];
    let a = studies::calibrate(&raw, &dir.path().join("raw")).unwrap();
    let mut filt = cfg.clone();
    let n = filt.noise.as_mut().unwrap();
    n.filter = vec![true];
    n.disp_scales = vec![2.0];
    filt.inverse[0].methods = vec![Method::VfmAdjoint];
    let b = studies::calibrate(&filt, &dir.path().join("filtered")).unwrap();

    let scales = ["0", "0.5", "1", "2", "5"];
    let ve: Vec<Vec<f64>> = scales.iter().map(|s| err(group(&a.groups, &format!("dnsf{s}"), Method::VfmAdjoint))).collect();
    let fe: Vec<Vec<f64>> = scales.iter().map(|s| err(group(&a.groups, &format!("dnsf{s}"), Method::FemuAdjoint))).collect();
    let vmax: Vec<f64> = ve.iter().map(|e| max_abs(e)).collect();
    let fmax: Vec<f64> = fe.iter().map(|e| max_abs(e)).collect();

    let pa = (0..2).all(|k| ve[k][0] <= 2.0 && fe[k][0] <= 2.0);
    let pb = vmax.windows(2).all(|w| w[1] >= w[0]) && (2..5).all(|k| vmax[k] > fmax[k]);
    let s_hit = |s: &str| group(&a.groups, &format!("dnsf{s}"), Method::VfmAdjoint).at_bound().contains(&"S");
    let pc = s_hit("2") && s_hit("5");
    let f2 = group(&b.groups, "dnsf2-filtered", Method::VfmAdjoint);
    let pd = f2.at_bound().is_empty() && f2.failed == 0;

    let mut lines = vec![
        format!("(a) Y error at 0x/0.5x: VFM {:.3}/{:.3}%, FEMU {:.3}/{:.3}% (<= 2%) {}", ve[0][0], ve[1][0], fe[0][0], fe[1][0], ok(pa)),
        format!("(b) VFM max error by DNSF {vmax:.3?}%, FEMU {fmax:.3?}% {}", ok(pb)),
        format!("(c) unfiltered VFM S at bound at 2x: {}, 5x: {} {}", s_hit("2"), s_hit("5"), ok(pc)),
        format!("(d) filtered VFM 2x mean {:.2?}, at bound {:?} {}", f2.mean, f2.at_bound(), ok(pd)),
    ];
    lines.insert(0, String::new());
    let pass = pa && pb && pc && pd;
    let detail = lines.join("\n    ");
    report(5, "noise robustness", pass, &detail);
    assert!(pass, "{detail}");
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

#[test]
fn c6_hardening_misspecification() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = config("e4.cfg", 0.05);
    let dir = tempfile::tempdir().unwrap();
    let r = studies::e4(&cfg, dir.path()).unwrap();
    let load = |inv, m| r.row(inv, m).unwrap().load_error;
    let (fv, vv) = (load("voce", Method::FemuAdjoint), load("voce", Method::VfmAdjoint));
    let (fk, vk) = (load("linear-voce", Method::FemuAdjoint), load("linear-voce", Method::VfmAdjoint));
    let pass = fk < fv && vk < vv && fv < vv;
    let detail = format!("load error [N^2] K=0: FEMU {fv:.4e}, VFM {vv:.4e}; K free: FEMU {fk:.4e}, VFM {vk:.4e}");
    report(6, "hardening misspecification", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn c7_mesh_mismatch() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = config("e5.cfg", 0.01);
    let dir = tempfile::tempdir().unwrap();
    let r = studies::e5(&cfg, dir.path()).unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for row in &r.rows {
        let e = studies::row_errors(&cfg, row).unwrap();
        worst = worst.max(max_abs(&e));
        parts.push(format!("{}/{} {:.2?} ({:.3}%)", row.label, row.method, row.mean, max_abs(&e)));
    }
    let pass = r.rows.len() == 4 && worst <= 1.5;
    let detail = format!("worst error {worst:.3}% (<= 1.5%): {}", parts.join(", "));
    report(7, "mesh mismatch", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn c8_constitutive_invariants() {
    let mat = Material { elastic: Elastic { e: 200_000.0, nu: 0.3 }, hardening: Hardening::Voce { y: 330.0, s: 1000.0, d: 10.0 } };
    let inc = prop::array::uniform4(-1.0..1.0f64);
    let strategy = (prop::collection::vec(inc, 3..12), 0.002..0.02f64, 0.0..std::f64::consts::TAU, prop::array::uniform4(-1.0..1.0f64));
    let mut runner = TestRunner::new(Config { cases: 100, failure_persistence: None, ..Config::default() });
    let worst = Cell::new((0.0f64, 0.0f64, 0.0f64, 0.0f64));
    let plastic = Cell::new(0);
    let res = runner.run(&strategy, |(incs, scale, theta, small)| {
        let c = check_program(&program(&incs, scale), theta, &mat).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let f = [1.0 + 5e-4 * small[0], 5e-4 * small[1], 5e-4 * small[2], 1.0 + 5e-4 * small[3]];
        let rt = round_trip(f, &mat).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let w = worst.get();
        worst.set((w.0.max(c.plane_stress), w.1.max(c.isochoric), w.2.max(c.objectivity), w.3.max(rt)));
        plastic.set(plastic.get() + c.plastic_steps);
        prop_assert!(c.passes(), "{c:?}");
        prop_assert!(rt <= ROUND_TRIP_TOL, "round trip {rt}");
        Ok(())
    });
    let (worst, plastic) = (worst.get(), plastic.get());
    let pass = res.is_ok() && plastic > 0;
    let detail = format!(
        "100 programs, {plastic} plastic steps; plane stress {:.1e}, isochoric {:.1e}, objectivity {:.1e}, round trip {:.1e}{}",
        worst.0,
        worst.1,
        worst.2,
        worst.3,
        res.as_ref().err().map(|e| format!("; {e}")).unwrap_or_default()
    );
    report(8, "constitutive invariants", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn c9_vfm_zero_at_truth() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = config("e1.cfg", 0.02);
    let model = studies::build_model(&cfg, cfg.plate.edge_length).unwrap();
    let data = studies::clean_data(&cfg, &model).unwrap();
    let truth = cfg.truth_material();
    let mut parts = Vec::new();
    let mut pass = true;
    let scale = max_abs(&data.loads);
    let floor = 1e-16 * scale * scale;
    for inv in &cfg.inverse {
        let pb = Problem::new(&model, &data, inv, &truth).unwrap();
        let vfm = pb.vfm().unwrap();
        let p = inv.truth_values(&truth).unwrap();
        let (v, gf) = vfm.gradient_forward(&p).unwrap();
        let (_, ga) = vfm.gradient_adjoint(&p).unwrap();
        let (nf, na) = (max_abs(&gf), max_abs(&ga));
        pass &= v <= floor && nf <= floor && na <= floor;
        parts.push(format!("{}: V {v:.2e}, |g_fs| {nf:.2e}, |g_adj| {na:.2e}", inv.name));
    }
    let detail = format!("floor 1e-16 F^2 = {floor:.2e}; {}", parts.join("; "));
    report(9, "VFM zero at truth", pass, &detail);
    assert!(pass, "{detail}");
}
