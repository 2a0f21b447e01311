use fvcal_core::constitutive::{Elastic, Hardening, Material};
use fvcal_core::fem::{FeModel, Schedule};
use fvcal_core::femu::FemuProblem;
use fvcal_core::gradcheck::{default_steps, run_gradcheck, GradMethod};
use fvcal_core::mesh::{build_notched_plate, NotchedPlateSpec};
use fvcal_core::optimize::Bounds;
use fvcal_core::params::ParamSpace;
use fvcal_core::synth::{self, MeasurementSet};
use fvcal_core::vfm::{FieldGenerator, VfmGradient, VfmProblem, VirtualField};

const GUESS: [f64; 3] = [360.0, 920.0, 6.0];

fn steel() -> Material<f64> {
    Material {
        elastic: Elastic { e: 200_000.0, nu: 0.3 },
        hardening: Hardening::Voce { y: 330.0, s: 1000.0, d: 10.0 },
    }
}

fn model_with(h: f64, schedule: Schedule) -> FeModel {
    let mesh = build_notched_plate(&NotchedPlateSpec::default().with_edge_length(h)).unwrap();
    FeModel::new(mesh, 0.02, schedule).unwrap()
}

fn setup(h: f64) -> (FeModel, MeasurementSet) {
    let model = model_with(h, Schedule::nominal());
    let data = synth::generate(&model, &steel()).unwrap();
    (model, data)
}

fn plastic_space() -> ParamSpace {
    ParamSpace::new(&steel(), &["Y", "S", "D"]).unwrap()
}

fn fields(model: &FeModel) -> Vec<VirtualField> {
    vec![VirtualField::generate(model.mesh(), FieldGenerator::CosQuadratic).unwrap()]
}

fn assert_close(a: &[f64], b: &[f64], rel: f64) {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= rel * scale, "{a:?} vs {b:?}");
    }
}

#[test]
fn femu_adjoint_matches_differences() {
    let (model, data) = setup(0.1);
    let fem = FemuProblem::new(&model, &data, plastic_space(), 1.0).unwrap();
    let (v, g) = fem.objective_and_gradient(&GUESS).unwrap();
    assert!(v.disp > 0.0 && v.load > 0.0);
    let (fd, solves) = fem.gradient_fd(&GUESS, 1e-6).unwrap();
    assert_eq!(solves, 6);
    assert_close(&g, &fd, 1e-6);
}

#[test]
fn femu_adjoint_with_elastic_parameters() {
    let (model, data) = setup(0.1);
    let space = ParamSpace::new(&steel(), &["E", "nu", "Y", "S", "D"]).unwrap();
    let fem = FemuProblem::new(&model, &data, space, 0.3).unwrap();
    let p = [220_000.0, 0.24, 360.0, 920.0, 6.0];
    let (_, g) = fem.objective_and_gradient(&p).unwrap();
    let (fd, _) = fem.gradient_fd(&p, 1e-6).unwrap();
    assert_close(&g, &fd, 1e-6);
}

#[test]
fn femu_vanishes_at_the_generating_parameters() {
    let (model, data) = setup(0.1);
    let fem = FemuProblem::new(&model, &data, plastic_space(), 1.0).unwrap();
    let truth = [330.0, 1000.0, 10.0];
    let (v, g) = fem.objective_and_gradient(&truth).unwrap();
    assert_eq!(v.total, 0.0);
    assert!(g.iter().all(|&x| x == 0.0), "{g:?}");
    assert!(fem.objective(&GUESS).unwrap().total > 1e-6);
}

#[test]
fn femu_load_term_reacts_to_a_single_perturbed_load() {
    let (model, mut data) = setup(0.1);
    let delta = 0.37;
    let alpha = 2.5;
    data.loads[1] += delta;
    let fem = FemuProblem::new(&model, &data, plastic_space(), alpha).unwrap();
    let v = fem.objective(&[330.0, 1000.0, 10.0]).unwrap();
    let expected = alpha / (2.0 * 7.0) * delta * delta * 0.1;
    assert_eq!(v.disp, 0.0);
    assert!((v.load - expected).abs() <= 1e-12 * expected);
}

#[test]
fn femu_single_step_schedule() {
    let model = model_with(0.1, Schedule::new(vec![0.0, 2.0], 0.01).unwrap());
    let data = synth::generate(&model, &steel()).unwrap();
    let fem = FemuProblem::new(&model, &data, plastic_space(), 1.0).unwrap();
    let (_, g) = fem.objective_and_gradient(&GUESS).unwrap();
    let (fd, _) = fem.gradient_fd(&GUESS, 1e-6).unwrap();
    assert_close(&g, &fd, 1e-6);
}

#[test]
fn objectives_are_invariant_under_time_rescaling() {
    let base = Schedule::nominal();
    let c = 3.5;
    let slow = Schedule::new(base.times.iter().map(|t| t * c).collect(), base.top_rate / c).unwrap();
    let (m1, m2) = (model_with(0.1, base), model_with(0.1, slow));
    let (d1, d2) = (synth::generate(&m1, &steel()).unwrap(), synth::generate(&m2, &steel()).unwrap());
    let f1 = FemuProblem::new(&m1, &d1, plastic_space(), 1.0).unwrap();
    let f2 = FemuProblem::new(&m2, &d2, plastic_space(), 1.0).unwrap();
    let (v1, g1) = f1.objective_and_gradient(&GUESS).unwrap();
    let (v2, g2) = f2.objective_and_gradient(&GUESS).unwrap();
    assert!((v1.total - v2.total).abs() <= 1e-9 * v1.total);
    assert_close(&g2, &g1, 1e-8);

    let w1 = VfmProblem::new(&m1, &d1, fields(&m1), plastic_space()).unwrap();
    let w2 = VfmProblem::new(&m2, &d2, fields(&m2), plastic_space()).unwrap();
    let (a, ga) = w1.gradient_adjoint(&GUESS).unwrap();
    let (b, gb) = w2.gradient_adjoint(&GUESS).unwrap();
    assert!((a - b).abs() <= 1e-9 * a);
    assert_close(&gb, &ga, 1e-8);
}

#[test]
fn vfm_forward_and_adjoint_agree() {
    let (model, data) = setup(0.1);
    let fields = vec![
        VirtualField::generate(model.mesh(), FieldGenerator::CosQuadratic).unwrap(),
        VirtualField::generate(model.mesh(), FieldGenerator::CosLinear).unwrap(),
    ];
    let vfm = VfmProblem::new(&model, &data, fields, plastic_space()).unwrap();
    let (vf, gf) = vfm.objective_and_gradient(&GUESS, VfmGradient::Forward).unwrap();
    let (va, ga) = vfm.objective_and_gradient(&GUESS, VfmGradient::Adjoint).unwrap();
    assert_eq!(vf, va);
    assert_close(&ga, &gf, 1e-12);
    let fd = vfm.gradient_fd(&GUESS, 1e-6).unwrap();
    assert_close(&gf, &fd, 1e-6);
}

#[test]
fn vfm_vanishes_at_the_generating_parameters() {
    let (model, data) = setup(0.1);
    let vfm = VfmProblem::new(&model, &data, fields(&model), plastic_space()).unwrap();
    let truth = [330.0, 1000.0, 10.0];
    let (v, g) = vfm.gradient_adjoint(&truth).unwrap();
    let (v0, g0) = vfm.gradient_adjoint(&GUESS).unwrap();
    assert!(v <= 1e-20 * v0, "{v} vs {v0}");
    let s0 = g0.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(g.iter().all(|x| x.abs() <= 1e-10 * s0), "{g:?}");
}

#[test]
fn shifted_loads_shift_the_scaled_mismatch() {
    let (model, mut data) = setup(0.1);
    let delta = 0.5;
    data.loads.iter_mut().skip(1).for_each(|f| *f += delta);
    let vfm = VfmProblem::new(&model, &data, fields(&model), plastic_space()).unwrap();
    let st = vfm.state(&[330.0, 1000.0, 10.0]).unwrap();
    let t = data.total_time();
    for n in 1..=data.num_steps() {
        let expected = -delta * data.dt(n) / t;
        assert!((st.scaled_mismatch[0][n] - expected).abs() <= 1e-9 * delta, "step {n}");
    }
    assert!((st.value - 0.5 * delta * delta).abs() <= 1e-9);
}

#[test]
fn elastic_response_has_no_yield_sensitivity() {
    let mut mat = steel();
    mat.hardening = Hardening::Voce { y: 1e6, s: 1000.0, d: 10.0 };
    let model = model_with(0.1, Schedule::nominal());
    let data = synth::generate(&model, &mat).unwrap();
    let space = ParamSpace::new(&mat, &["E", "Y"]).unwrap();
    let vfm = VfmProblem::new(&model, &data, fields(&model), space).unwrap();
    let (_, g) = vfm.gradient_adjoint(&[210_000.0, 1e6]).unwrap();
    assert_eq!(g[1], 0.0);
    assert!(g[0] != 0.0);
}

#[test]
fn gradient_checks_show_a_clean_truncation_regime() {
    let (model, data) = setup(0.05);
    let bounds = Bounds::new(vec![250.0, 800.0, 2.0], vec![400.0, 1150.0, 12.0]).unwrap();
    let dir = [0.1; 3];
    let window = |r: &fvcal_core::gradcheck::GradCheckReport| {
        r.steps
            .iter()
            .zip(&r.errors)
            .filter(|(h, _)| (1e-6..=1e-3).contains(*h))
            .filter_map(|(_, e)| *e)
            .fold(f64::INFINITY, f64::min)
    };

    let fem = FemuProblem::new(&model, &data, plastic_space(), 1.0).unwrap();
    let (_, g) = fem.objective_and_gradient(&GUESS).unwrap();
    let r = run_gradcheck(GradMethod::FemuAdjoint, |q| fem.objective(q).map(|v| v.total), &GUESS, &g, &bounds, &dir, &default_steps())
        .unwrap();
    assert!(window(&r) <= 1e-6 * r.analytic.abs(), "{r:?}");
    assert!(r.decreases_until(1e-6), "{r:?}");
    // round-off takes over for the smallest steps
    assert!(r.errors.last().unwrap().unwrap() > r.minimum().unwrap().1 * 10.0);

    let vfm = VfmProblem::new(&model, &data, fields(&model), plastic_space()).unwrap();
    let (_, g) = vfm.gradient_adjoint(&GUESS).unwrap();
    let r = run_gradcheck(GradMethod::VfmAdjoint, |q| vfm.objective(q), &GUESS, &g, &bounds, &dir, &default_steps()).unwrap();
    assert!(window(&r) <= 1e-6 * r.analytic.abs(), "{r:?}");
    assert!(r.decreases_until(1e-6), "{r:?}");
}
