//! Single calibrations: method dispatch, the FEMU balance protocol and
//! per-iteration logs.

use std::time::Instant;

use fvcal_core::fem::FeModel;
use fvcal_core::femu::{tune_balance_factor, FemuProblem, FemuValue};
use fvcal_core::optimize::{minimize, normalized_error, Bounds, OptOptions, OptResult, Termination};
use fvcal_core::params::ParamSpace;
use fvcal_core::synth::MeasurementSet;
use fvcal_core::vfm::{VfmProblem, VirtualField};

use crate::config::{InverseConfig, Method};
use crate::output::{num, nums, Table};
use crate::Result;

/// Everything a calibration needs besides the method and start point.
pub struct Problem<'a> {
    pub model: &'a FeModel,
    pub data: &'a MeasurementSet,
    pub space: ParamSpace,
    pub bounds: Bounds,
    pub fields: Vec<VirtualField>,
    pub alpha: f64,
    pub fd_step: f64,
    pub opts: OptOptions,
}

impl<'a> Problem<'a> {
    pub fn new(
        model: &'a FeModel,
        data: &'a MeasurementSet,
        inv: &InverseConfig,
        truth: &fvcal_core::constitutive::Material<f64>,
    ) -> Result<Self> {
        let fields = vec![VirtualField::generate(model.mesh(), inv.field_generator()?)?];
        Ok(Self {
            model,
            data,
            space: inv.space(truth)?,
            bounds: inv.bounds()?,
            fields,
            alpha: inv.alpha,
            fd_step: inv.fd_step,
            opts: inv.options(),
        })
    }

    pub fn femu(&self, alpha: f64) -> Result<FemuProblem<'a>> {
        Ok(FemuProblem::new(self.model, self.data, self.space.clone(), alpha)?)
    }

    pub fn vfm(&self) -> Result<VfmProblem<'a>> {
        Ok(VfmProblem::new(self.model, self.data, self.fields.clone(), self.space.clone())?)
    }
}

/// One accepted optimizer iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    /// Optimizer run within the calibration (FEMU runs twice).
    pub run: usize,
    pub iter: usize,
    pub value: f64,
    /// FEMU displacement and (weighted) load terms.
    pub terms: Option<(f64, f64)>,
    pub grad_inf: f64,
    pub p: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub method: Method,
    pub start: Vec<f64>,
    pub p: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// FEMU: forward solves. VFM: constitutive sweeps over the measured
    /// kinematics.
    pub model_evaluations: usize,
    pub termination: Termination,
    pub active_bounds: Vec<usize>,
    /// Final FEMU balance factor and the objective terms at `p`.
    pub alpha: Option<f64>,
    pub femu_terms: Option<FemuValue>,
    pub wall_time: f64,
    pub log: Vec<LogRow>,
}

impl Calibration {
    pub fn errors(&self, truth: &[f64]) -> Vec<f64> {
        normalized_error(&self.p, truth)
    }

    /// Per-iteration log in the method's column layout.
    pub fn log_table(&self, names: &[&str]) -> Table {
        let femu = self.method.is_femu();
        let mut header: Vec<String> = vec!["run".into(), "iter".into()];
        if femu {
            header.extend(["J", "J_disp", "J_load"].map(String::from));
        } else {
            header.push("V".into());
        }
        header.push("grad_inf".into());
        header.extend(names.iter().map(|s| s.to_string()));
        let mut t = Table::new(&header);
        for r in &self.log {
            let mut row = vec![r.run.to_string(), r.iter.to_string(), num(r.value)];
            if femu {
                let (d, l) = r.terms.unwrap_or((f64::NAN, f64::NAN));
                row.extend([num(d), num(l)]);
            }
            row.push(num(r.grad_inf));
            row.extend(nums(&r.p));
            t.push(row);
        }
        t
    }
}

struct Eval {
    p: Vec<f64>,
    terms: Option<(f64, f64)>,
    grad_inf: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Matches accepted iterates to the evaluations that produced them.
fn log_rows(run: usize, res: &OptResult, evals: &[Eval]) -> Vec<LogRow> {
    res.history
        .iter()
        .map(|h| {
            let e = evals.iter().rev().find(|e| e.p == h.p);
            LogRow {
                run,
                iter: h.iter,
                value: h.f,
                terms: e.and_then(|e| e.terms),
                grad_inf: e.map_or(f64::NAN, |e| e.grad_inf),
                p: h.p.clone(),
            }
        })
        .collect()
}

struct RunOutcome {
    res: OptResult,
    log: Vec<LogRow>,
    solves: usize,
}

fn femu_run(pb: &Problem, fem: &FemuProblem, fd: bool, start: &[f64], run: usize) -> Result<RunOutcome> {
    let mut evals = Vec::new();
    let mut solves = 0;
    let res = minimize(
        |p| {
            let (v, g) = if fd {
                let v = fem.objective(p)?;
                let (g, n) = fem.gradient_fd(p, pb.fd_step)?;
                solves += 1 + n;
                (v, g)
            } else {
                solves += 1;
                fem.objective_and_gradient(p)?
            };
            evals.push(Eval { p: p.to_vec(), terms: Some((v.disp, v.load)), grad_inf: inf_norm(&g) });
            Ok((v.total, g))
        },
        start,
        &pb.bounds,
        &pb.opts,
    )?;
    let log = log_rows(run, &res, &evals);
    Ok(RunOutcome { res, log, solves })
}

fn vfm_run(pb: &Problem, method: Method, start: &[f64]) -> Result<RunOutcome> {
    let vfm = pb.vfm()?;
    let mut evals = Vec::new();
    let mut sweeps = 0;
    let n = pb.space.len();
    let res = minimize(
        |p| {
            let (v, g) = match method {
                Method::VfmFs => vfm.gradient_forward(p)?,
                Method::VfmAdjoint => vfm.gradient_adjoint(p)?,
                _ => {
                    let v = vfm.objective(p)?;
                    (v, vfm.gradient_fd(p, pb.fd_step)?)
                }
            };
            sweeps += if method == Method::VfmFd { 1 + 2 * n } else { 1 };
            evals.push(Eval { p: p.to_vec(), terms: None, grad_inf: inf_norm(&g) });
            Ok((v, g))
        },
        start,
        &pb.bounds,
        &pb.opts,
    )?;
    let log = log_rows(0, &res, &evals);
    Ok(RunOutcome { res, log, solves: sweeps })
}

/// Calibrates from `start`.
///
/// FEMU follows the two-run balance protocol: the factor is rescaled so the
/// displacement and load terms match at the start point, the problem is
/// solved, the factor is rescaled again at that optimum and a second run
/// continues from it.
pub fn calibrate(pb: &Problem, method: Method, start: &[f64]) -> Result<Calibration> {
    let t0 = Instant::now();
    let (res, log, solves, alpha, femu_terms, iterations, evaluations) = if method.is_femu() {
        let fd = method == Method::FemuFd;
        let mut fem = pb.femu(pb.alpha)?;
        let v0 = fem.objective(start)?;
        fem.alpha = tune_balance_factor(fem.alpha, v0.disp, v0.load);
        let first = femu_run(pb, &fem, fd, start, 0)?;
        let v1 = fem.objective(&first.res.p)?;
        fem.alpha = tune_balance_factor(fem.alpha, v1.disp, v1.load);
        let second = femu_run(pb, &fem, fd, &first.res.p, 1)?;
        let terms = fem.objective(&second.res.p)?;
        let mut log = first.log;
        log.extend(second.log);
        let solves = 3 + first.solves + second.solves;
        let iterations = first.res.iterations + second.res.iterations;
        let evaluations = first.res.evaluations + second.res.evaluations;
        (second.res, log, solves, Some(fem.alpha), Some(terms), iterations, evaluations)
    } else {
        let out = vfm_run(pb, method, start)?;
        let (it, ev) = (out.res.iterations, out.res.evaluations);
        (out.res, out.log, out.solves, None, None, it, ev)
    };
    Ok(Calibration {
        method,
        start: start.to_vec(),
        p: res.p,
        objective: res.f,
        iterations,
        evaluations,
        model_evaluations: solves,
        termination: res.reason,
        active_bounds: res.active_bounds,
        alpha,
        femu_terms,
        wall_time: t0.elapsed().as_secs_f64(),
        log,
    })
}
