//! The commands: forward runs, data synthesis, calibration studies,
//! gradient checks, timing, hardening misspecification and mesh mismatch.

use std::collections::BTreeMap;
use std::path::Path;

use fvcal_core::constitutive::{Hardening, Material};
use fvcal_core::fem::FeModel;
use fvcal_core::femu::FemuProblem;
use fvcal_core::gradcheck::{default_steps, run_gradcheck, GradCheckReport, GradMethod};
use fvcal_core::mesh::build_notched_plate;
use fvcal_core::optimize::{normalized_error, sample_starts, Bounds};
use fvcal_core::synth::{self, MeasurementSet, MlsSpec, NoiseSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{InverseConfig, Method, RunConfig};
use crate::output::{num, nums, write_file, write_toml, Table};
use crate::runner::{self, Calibration, Problem};
use crate::{CliError, Result};

pub fn build_model(cfg: &RunConfig, edge_length: f64) -> Result<FeModel> {
    let mesh = build_notched_plate(&cfg.plate.spec(edge_length))?;
    Ok(FeModel::new(mesh, cfg.plate.thickness, cfg.schedule.build()?)?)
}

/// Noiseless data: read from `cfg.data` or synthesized from the truth.
pub fn clean_data(cfg: &RunConfig, model: &FeModel) -> Result<MeasurementSet> {
    match &cfg.data {
        Some(path) => {
            let dir = path.parent().unwrap_or(Path::new("."));
            let stem = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
            let ms = MeasurementSet::read(dir, stem)?;
            ms.check_against(model.mesh(), &model.schedule().times)?;
            Ok(ms)
        }
        None => Ok(synth::generate(model, &cfg.truth_material())?),
    }
}

/// One variant of the measurement data in a study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataCase {
    /// Displacement noise scale factor; `None` for noiseless data.
    pub disp_scale: Option<f64>,
    pub filtered: bool,
}

impl DataCase {
    pub const CLEAN: DataCase = DataCase { disp_scale: None, filtered: false };

    pub fn label(&self) -> String {
        match self.disp_scale {
            None => "clean".into(),
            Some(s) if self.filtered => format!("dnsf{s}-filtered"),
            Some(s) => format!("dnsf{s}"),
        }
    }
}

pub fn data_cases(cfg: &RunConfig) -> Vec<DataCase> {
    match &cfg.noise {
        None => vec![DataCase::CLEAN],
        Some(n) => n
            .filter
            .iter()
            .flat_map(|&filtered| n.disp_scales.iter().map(move |&s| DataCase { disp_scale: Some(s), filtered }))
            .collect(),
    }
}

/// Applies the noise and filter of `case` to clean data.
pub fn case_data(cfg: &RunConfig, model: &FeModel, clean: &MeasurementSet, case: DataCase) -> Result<MeasurementSet> {
    let (Some(ds), Some(n)) = (case.disp_scale, &cfg.noise) else {
        return Ok(clean.clone());
    };
    let spec = NoiseSpec::new(ds, n.load_scale, cfg.plate.height, cfg.seed);
    let noisy = synth::add_noise(clean, &spec)?;
    if !case.filtered {
        return Ok(noisy);
    }
    let mls = MlsSpec { order: n.filter_order, radius: n.filter_radius * model.mesh().nominal_edge_length };
    Ok(synth::filter(&noisy, model.mesh(), &mls)?)
}

/// The configured start, or uniform random starts drawn with the run seed.
pub fn starts(cfg: &RunConfig, inv: &InverseConfig, bounds: &Bounds) -> Vec<Vec<f64>> {
    match (&inv.start, inv.starts) {
        (Some(p), _) => vec![p.clone()],
        (None, Some(k)) => sample_starts(k, bounds, cfg.seed),
        (None, None) => Vec::new(),
    }
}

// ---- forward -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForwardSummary {
    pub nodes: usize,
    pub elements: usize,
    pub steps: usize,
    pub final_load: f64,
    pub max_plastic_strain: f64,
    pub load_increasing: bool,
    pub newton_iterations: Vec<usize>,
}

pub fn forward(cfg: &RunConfig, out: &Path) -> Result<ForwardSummary> {
    let model = build_model(cfg, cfg.plate.edge_length)?;
    let traj = model.solve(&cfg.truth_material())?;
    traj.write(&out.join("trajectory.bin"))?;
    write_file(&out.join("loads.csv"), traj.loads_csv())?;
    write_file(&out.join("displacements.csv"), traj.displacements_csv())?;
    model.mesh().write(&out.join("mesh.txt"))?;
    let n = traj.num_steps();
    let summary = ForwardSummary {
        nodes: model.mesh().num_nodes(),
        elements: model.num_elements(),
        steps: n,
        final_load: traj.loads[n],
        max_plastic_strain: traj.max_alpha(n),
        load_increasing: traj.loads.windows(2).all(|w| w[1] > w[0]),
        newton_iterations: traj.newton_iterations.clone(),
    };
    write_toml(&out.join("summary.toml"), &summary)?;
    Ok(summary)
}

// ---- synth ---------------------------------------------------------------

/// Writes the clean data and every configured noise/filter case.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Vec<(String, MeasurementSet)>> {
    let model = build_model(cfg, cfg.plate.edge_length)?;
    let clean = clean_data(cfg, &model)?;
    let mut sets = vec![("clean".to_string(), clean.clone())];
    if cfg.noise.is_some() {
        for case in data_cases(cfg) {
            sets.push((case.label(), case_data(cfg, &model, &clean, case)?));
        }
    }
    for (stem, ms) in &sets {
        ms.write(out, stem)?;
    }
    Ok(sets)
}

// ---- calibrate -----------------------------------------------------------

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub inverse: String,
    pub case: String,
    pub start_index: usize,
    pub outcome: std::result::Result<Calibration, String>,
}

/// Aggregate over the starts of one (inverse, data case, method) group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupSummary {
    pub inverse: String,
    pub case: String,
    pub method: String,
    pub names: Vec<String>,
    pub runs: usize,
    pub failed: usize,
    pub mean: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_error_percent: Option<Vec<f64>>,
    /// Per parameter, how many runs ended on a bound.
    pub bound_hits: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_alpha: Option<f64>,
    pub failures: Vec<String>,
}

impl GroupSummary {
    pub fn at_bound(&self) -> Vec<&str> {
        self.names.iter().zip(&self.bound_hits).filter(|(_, &k)| k > 0).map(|(n, _)| n.as_str()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct CalibrateReport {
    pub records: Vec<RunRecord>,
    pub groups: Vec<GroupSummary>,
}

impl CalibrateReport {
    pub fn group(&self, inverse: &str, case: &str, method: Method) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.inverse == inverse && g.case == case && g.method == method.as_str())
    }
}

/// Runs every method from every start; runs are independent and execute
/// concurrently, results come back in job order.
pub fn run_starts(pb: &Problem, methods: &[Method], starts: &[Vec<f64>]) -> Vec<(Method, usize, Result<Calibration>)> {
    let jobs: Vec<(Method, usize)> = methods.iter().flat_map(|&m| (0..starts.len()).map(move |k| (m, k))).collect();
    jobs.into_par_iter().map(|(m, k)| (m, k, runner::calibrate(pb, m, &starts[k]))).collect()
}

fn mean(rows: &[&Vec<f64>]) -> Vec<f64> {
    let n = rows.first().map_or(0, |r| r.len());
    let mut m = vec![0.0; n];
    for r in rows {
        m.iter_mut().zip(r.iter()).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|v| *v /= rows.len() as f64);
    m
}

fn summarize(inv: &str, case: &str, method: Method, names: &[&str], truth: Option<&[f64]>, runs: &[&RunRecord]) -> GroupSummary {
    let ok: Vec<&Calibration> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let failures: Vec<String> =
        runs.iter().filter_map(|r| r.outcome.as_ref().err().map(|e| format!("start {}: {e}", r.start_index))).collect();
    let ps: Vec<&Vec<f64>> = ok.iter().map(|c| &c.p).collect();
    let m = mean(&ps);
    let mut bound_hits = vec![0; names.len()];
    for c in &ok {
        c.active_bounds.iter().for_each(|&i| bound_hits[i] += 1);
    }
    let alphas: Vec<f64> = ok.iter().filter_map(|c| c.alpha).collect();
    GroupSummary {
        inverse: inv.into(),
        case: case.into(),
        method: method.as_str().into(),
        names: names.iter().map(|s| s.to_string()).collect(),
        runs: runs.len(),
        failed: failures.len(),
        mean_error_percent: truth.filter(|_| !ok.is_empty()).map(|t| normalized_error(&m, t)),
        mean: m,
        bound_hits,
        mean_alpha: (!alphas.is_empty()).then(|| alphas.iter().sum::<f64>() / alphas.len() as f64),
        failures,
    }
}

fn runs_table(names: &[&str], truth: Option<&[f64]>, records: &[&RunRecord]) -> Table {
    let mut header: Vec<String> = vec!["case".into(), "method".into(), "start".into()];
    header.extend(names.iter().map(|n| format!("start_{n}")));
    header.extend(names.iter().map(|n| n.to_string()));
    if truth.is_some() {
        header.extend(names.iter().map(|n| format!("err_{n}")));
    }
    header.extend(
        ["objective", "iterations", "evaluations", "model_evaluations", "termination", "at_bound", "alpha"].map(String::from),
    );
    let mut t = Table::new(&header);
    for r in records {
        let Ok(c) = &r.outcome else { continue };
        let mut row = vec![r.case.clone(), c.method.to_string(), r.start_index.to_string()];
        row.extend(nums(&c.start));
        row.extend(nums(&c.p));
        if let Some(t) = truth {
            row.extend(nums(&c.errors(t)));
        }
        let at: Vec<&str> = c.active_bounds.iter().map(|&i| names[i]).collect();
        row.extend([
            num(c.objective),
            c.iterations.to_string(),
            c.evaluations.to_string(),
            c.model_evaluations.to_string(),
            c.termination.as_str().to_string(),
            at.join(" "),
            c.alpha.map(num).unwrap_or_default(),
        ]);
        t.push(row);
    }
    t
}

fn wall_time_table(records: &[RunRecord]) -> Table {
    let mut t = Table::new(&["inverse", "case", "method", "start", "wall_time_s"]);
    for r in records {
        if let Ok(c) = &r.outcome {
            t.push(vec![r.inverse.clone(), r.case.clone(), c.method.to_string(), r.start_index.to_string(), num(c.wall_time)]);
        }
    }
    t
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    group: &'a [GroupSummary],
}

/// Calibrates every `[[inverse]]` block against every data case.
pub fn calibrate(cfg: &RunConfig, out: &Path) -> Result<CalibrateReport> {
    if cfg.inverse.is_empty() {
        return Err(CliError::Config("calibrate needs at least one [[inverse]] block".into()));
    }
    let model = build_model(cfg, cfg.plate.edge_length)?;
    let clean = clean_data(cfg, &model)?;
    let truth = cfg.truth_material();
    let mut records = Vec::new();
    let mut groups = Vec::new();
    for case in data_cases(cfg) {
        let data = case_data(cfg, &model, &clean, case)?;
        let label = case.label();
        for inv in &cfg.inverse {
            let pb = Problem::new(&model, &data, inv, &truth)?;
            let st = starts(cfg, inv, &pb.bounds);
            let names = pb.space.names();
            let t = inv.truth_values(&truth);
            let first = records.len();
            for (m, k, res) in run_starts(&pb, &inv.methods, &st) {
                if let Ok(c) = &res {
                    let dir = out.join(&inv.name).join(&label).join(m.as_str());
                    c.log_table(&names).write(&dir.join(format!("history_{k}.csv")))?;
                }
                records.push(RunRecord {
                    inverse: inv.name.clone(),
                    case: label.clone(),
                    start_index: k,
                    outcome: res.map_err(|e| e.to_string()),
                });
            }
            for &m in &inv.methods {
                let runs: Vec<&RunRecord> =
                    records[first..].iter().filter(|r| r.outcome.as_ref().map_or(true, |c| c.method == m)).collect();
                // failed runs carry no method; attribute them by job order
                let runs: Vec<&RunRecord> = if runs.iter().any(|r| r.outcome.is_err()) {
                    let k = st.len();
                    let idx = inv.methods.iter().position(|x| *x == m).unwrap();
                    records[first + idx * k..first + (idx + 1) * k].iter().collect()
                } else {
                    runs
                };
                groups.push(summarize(&inv.name, &label, m, &names, t.as_deref(), &runs));
            }
        }
    }
    for inv in &cfg.inverse {
        let names = inv.space(&truth)?.names();
        let recs: Vec<&RunRecord> = records.iter().filter(|r| r.inverse == inv.name).collect();
        runs_table(&names, inv.truth_values(&truth).as_deref(), &recs).write(&out.join(&inv.name).join("runs.csv"))?;
    }
    write_toml(&out.join("summary.toml"), &SummaryFile { group: &groups })?;
    wall_time_table(&records).write(&out.join("wall_times.csv"))?;
    if let Some(g) = groups.iter().find(|g| g.failed == g.runs) {
        return Err(CliError::AllFailed(format!("{}/{}/{}: {}", g.inverse, g.case, g.method, g.failures.join("; "))));
    }
    Ok(CalibrateReport { records, groups })
}

// ---- gradcheck -----------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckSummary {
    pub method: String,
    pub analytic: f64,
    pub min_error: f64,
    pub min_step: f64,
    /// Smallest error over steps in `[1e-6, 1e-3]`.
    pub window_min_error: f64,
    pub decreases_to_1e_6: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckOutcome {
    pub point: Vec<f64>,
    pub reports: Vec<GradCheckReport>,
    pub summaries: Vec<GradcheckSummary>,
    /// Largest componentwise `|g_fs - g_adj| / |g_adj|`.
    pub vfm_fs_adjoint_rel: f64,
}

pub fn window_min(r: &GradCheckReport, lo: f64, hi: f64) -> f64 {
    r.steps
        .iter()
        .zip(&r.errors)
        .filter(|(h, _)| (lo..=hi).contains(*h))
        .filter_map(|(_, e)| *e)
        .fold(f64::INFINITY, f64::min)
}

/// FD checks of the FEMU adjoint and both VFM gradients at the start of the
/// first `[[inverse]]` block.
pub fn gradcheck(cfg: &RunConfig, out: &Path) -> Result<GradcheckOutcome> {
    let inv = cfg.inverse.first().ok_or_else(|| CliError::Config("gradcheck needs an [[inverse]] block".into()))?;
    let model = build_model(cfg, cfg.plate.edge_length)?;
    let data = clean_data(cfg, &model)?;
    let truth = cfg.truth_material();
    let pb = Problem::new(&model, &data, inv, &truth)?;
    let p = starts(cfg, inv, &pb.bounds).remove(0);
    let n = pb.space.len();
    let (dir, steps) = match &cfg.gradcheck {
        Some(g) => (g.direction.clone(), g.steps.clone().unwrap_or_else(default_steps)),
        None => (vec![0.1; n], default_steps()),
    };
    if dir.len() != n {
        return Err(CliError::Config(format!("gradcheck direction needs {n} entries")));
    }
    let fem = pb.femu(pb.alpha)?;
    let vfm = pb.vfm()?;
    let (_, g_femu) = fem.objective_and_gradient(&p)?;
    let (_, g_fs) = vfm.gradient_forward(&p)?;
    let (_, g_adj) = vfm.gradient_adjoint(&p)?;
    let rel = g_fs.iter().zip(&g_adj).fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / b.abs()));
    let reports = vec![
        run_gradcheck(GradMethod::FemuAdjoint, |q| fem.objective(q).map(|v| v.total), &p, &g_femu, &pb.bounds, &dir, &steps)?,
        run_gradcheck(GradMethod::VfmForward, |q| vfm.objective(q), &p, &g_fs, &pb.bounds, &dir, &steps)?,
        run_gradcheck(GradMethod::VfmAdjoint, |q| vfm.objective(q), &p, &g_adj, &pb.bounds, &dir, &steps)?,
    ];
    let mut summaries = Vec::new();
    for r in &reports {
        let stem = r.method.as_str().to_lowercase();
        r.write_csv(&out.join(format!("gradcheck_{stem}.csv")))?;
        write_file(&out.join(format!("gradcheck_{stem}.svg")), r.to_svg())?;
        let (min_step, min_error) = r.minimum().unwrap_or((f64::NAN, f64::NAN));
        summaries.push(GradcheckSummary {
            method: r.method.as_str().into(),
            analytic: r.analytic,
            min_error,
            min_step,
            window_min_error: window_min(r, 1e-6, 1e-3),
            decreases_to_1e_6: r.decreases_until(1e-6),
        });
    }
    #[derive(Serialize)]
    struct File<'a> {
        point: &'a [f64],
        vfm_fs_adjoint_max_rel_diff: f64,
        check: &'a [GradcheckSummary],
    }
    write_toml(&out.join("summary.toml"), &File { point: &p, vfm_fs_adjoint_max_rel_diff: rel, check: &summaries })?;
    Ok(GradcheckOutcome { point: p, reports, summaries, vfm_fs_adjoint_rel: rel })
}

// ---- timing --------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct TimingOutcome {
    pub runs: Vec<Calibration>,
    /// Methods sorted by wall time.
    pub order: Vec<Method>,
}

impl TimingOutcome {
    pub fn time(&self, m: Method) -> Option<f64> {
        self.runs.iter().find(|c| c.method == m).map(|c| c.wall_time)
    }
}

/// Times each method of the first `[[inverse]]` block on the same data,
/// one run at a time.
pub fn timing(cfg: &RunConfig, out: &Path) -> Result<TimingOutcome> {
    let inv = cfg.inverse.first().ok_or_else(|| CliError::Config("timing needs an [[inverse]] block".into()))?;
    let model = build_model(cfg, cfg.plate.edge_length)?;
    let data = clean_data(cfg, &model)?;
    let truth = cfg.truth_material();
    let pb = Problem::new(&model, &data, inv, &truth)?;
    let p0 = starts(cfg, inv, &pb.bounds).remove(0);
    let names = pb.space.names();
    let t = inv.truth_values(&truth);
    let mut runs = Vec::new();
    for &m in &inv.methods {
        runs.push(runner::calibrate(&pb, m, &p0)?);
    }
    let mut header: Vec<String> =
        ["method", "wall_time_s", "iterations", "evaluations", "model_evaluations"].map(String::from).to_vec();
    header.extend(names.iter().map(|n| n.to_string()));
    if t.is_some() {
        header.extend(names.iter().map(|n| format!("err_{n}")));
    }
    let mut table = Table::new(&header);
    for c in &runs {
        let mut row = vec![
            c.method.to_string(),
            num(c.wall_time),
            c.iterations.to_string(),
            c.evaluations.to_string(),
            c.model_evaluations.to_string(),
        ];
        row.extend(nums(&c.p));
        if let Some(t) = &t {
            row.extend(nums(&c.errors(t)));
        }
        table.push(row);
    }
    table.write(&out.join("timing.csv"))?;
    let mut order: Vec<&Calibration> = runs.iter().collect();
    order.sort_by(|a, b| a.wall_time.total_cmp(&b.wall_time));
    let order: Vec<Method> = order.iter().map(|c| c.method).collect();
    #[derive(Serialize)]
    struct File {
        fastest_to_slowest: Vec<String>,
    }
    write_toml(&out.join("summary.toml"), &File { fastest_to_slowest: order.iter().map(|m| m.to_string()).collect() })?;
    Ok(TimingOutcome { runs, order })
}

// ---- hardening misspecification -------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRow {
    pub label: String,
    pub inverse: String,
    pub method: String,
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// Displacement term of the FEMU objective at the mean parameters [mm^2].
    pub disp_error: f64,
    /// Load term with unit balance factor [N^2].
    pub load_error: f64,
    pub runs: usize,
    pub failed: usize,
    pub failures: Vec<String>,
}

fn fit_errors(model: &FeModel, data: &MeasurementSet, inv: &InverseConfig, truth: &Material<f64>, p: &[f64]) -> Result<(f64, f64)> {
    let space = inv.space(truth)?;
    let v = FemuProblem::new(model, data, space, 1.0)?.objective(p)?;
    Ok((v.disp, v.load))
}

/// Mean over starts per method, then the objective terms at that mean.
fn error_rows(
    cfg: &RunConfig,
    model: &FeModel,
    data: &MeasurementSet,
    label: &str,
    out: &Path,
) -> Result<(Vec<ErrorRow>, Vec<Hardening<f64>>)> {
    let truth = cfg.truth_material();
    let mut rows = Vec::new();
    let mut laws = Vec::new();
    for inv in &cfg.inverse {
        let pb = Problem::new(model, data, inv, &truth)?;
        let st = starts(cfg, inv, &pb.bounds);
        let names = pb.space.names();
        let results = run_starts(&pb, &inv.methods, &st);
        for &m in &inv.methods {
            let mine: Vec<&(Method, usize, Result<Calibration>)> = results.iter().filter(|r| r.0 == m).collect();
            let ok: Vec<&Calibration> = mine.iter().filter_map(|r| r.2.as_ref().ok()).collect();
            for (_, k, r) in &mine {
                if let Ok(c) = r {
                    c.log_table(&names).write(&out.join(label).join(&inv.name).join(m.as_str()).join(format!("history_{k}.csv")))?;
                }
            }
            let why: Vec<String> =
                mine.iter().filter_map(|r| r.2.as_ref().err().map(|e| format!("start {}: {e}", r.1))).collect();
            if ok.is_empty() {
                return Err(CliError::AllFailed(format!("{label}/{}/{m}: {}", inv.name, why.join("; "))));
            }
            let ps: Vec<&Vec<f64>> = ok.iter().map(|c| &c.p).collect();
            let mp = mean(&ps);
            let (d, l) = fit_errors(model, data, inv, &truth, &mp)?;
            laws.push(pb.space.hardening(&mp));
            rows.push(ErrorRow {
                label: label.into(),
                inverse: inv.name.clone(),
                method: m.as_str().into(),
                names: names.iter().map(|s| s.to_string()).collect(),
                mean: mp,
                disp_error: d,
                load_error: l,
                runs: mine.len(),
                failed: mine.len() - ok.len(),
                failures: why,
            });
        }
    }
    Ok((rows, laws))
}

fn error_table(rows: &[ErrorRow]) -> Table {
    let mut all: Vec<&str> = Vec::new();
    for r in rows {
        for n in &r.names {
            if !all.contains(&n.as_str()) {
                all.push(n);
            }
        }
    }
    let mut header: Vec<String> = vec!["data".into(), "inverse".into(), "method".into()];
    header.extend(all.iter().map(|s| s.to_string()));
    header.extend(["disp_error_mm2", "load_error_N2"].map(String::from));
    let mut t = Table::new(&header);
    for r in rows {
        let mut row = vec![r.label.clone(), r.inverse.clone(), r.method.clone()];
        for n in &all {
            row.push(r.names.iter().position(|x| x == n).map(|k| num(r.mean[k])).unwrap_or_else(|| "-".into()));
        }
        row.extend([num(r.disp_error), num(r.load_error)]);
        t.push(row);
    }
    t
}

#[derive(Clone, Debug)]
pub struct E4Outcome {
    pub rows: Vec<ErrorRow>,
    pub curves: Table,
}

impl E4Outcome {
    pub fn row(&self, inverse: &str, method: Method) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.inverse == inverse && r.method == method.as_str())
    }
}

/// Fits each inverse hardening law to data from the truth law and reports
/// the fit errors and hardening curves.
pub fn e4(cfg: &RunConfig, out: &Path) -> Result<E4Outcome> {
    if cfg.inverse.is_empty() {
        return Err(CliError::Config("e4 needs [[inverse]] blocks".into()));
    }
    let model = build_model(cfg, cfg.plate.edge_length)?;
    let data = clean_data(cfg, &model)?;
    let (rows, laws) = error_rows(cfg, &model, &data, "forward", out)?;
    let curve = cfg.curves.clone().unwrap_or_default();
    let truth = cfg.truth_material().hardening;
    let mut header = vec!["alpha".to_string(), "truth".to_string()];
    header.extend(rows.iter().map(|r| format!("{}/{}", r.inverse, r.method)));
    let mut curves = Table::new(&header);
    for k in 0..curve.samples {
        let a = curve.alpha_max * k as f64 / (curve.samples - 1) as f64;
        let mut row = vec![num(a), num(truth.eval(a))];
        row.extend(laws.iter().map(|l| num(l.eval(a))));
        curves.push(row);
    }
    curves.write(&out.join("hardening_curves.csv"))?;
    error_table(&rows).write(&out.join("errors.csv"))?;
    #[derive(Serialize)]
    struct File<'a> {
        fit: &'a [ErrorRow],
    }
    write_toml(&out.join("summary.toml"), &File { fit: &rows })?;
    Ok(E4Outcome { rows, curves })
}

// ---- mesh mismatch -------------------------------------------------------

#[derive(Clone, Debug)]
pub struct E5Outcome {
    pub rows: Vec<ErrorRow>,
    pub edge_lengths: Vec<f64>,
}

impl E5Outcome {
    pub fn row(&self, edge_length: f64, inverse: &str, method: Method) -> Option<&ErrorRow> {
        let label = mesh_label(edge_length);
        self.rows.iter().find(|r| r.label == label && r.inverse == inverse && r.method == method.as_str())
    }
}

fn mesh_label(h: f64) -> String {
    format!("h{h}")
}

/// Generates data on the fine mesh, remaps them onto each inversion mesh
/// and calibrates there.
pub fn e5(cfg: &RunConfig, out: &Path) -> Result<E5Outcome> {
    let r = cfg.remap.as_ref().ok_or_else(|| CliError::Config("e5 needs a [remap] section".into()))?;
    let fine = build_model(cfg, r.data_edge_length)?;
    let fine_data = clean_data(cfg, &fine)?;
    fine_data.write(out, "data_fine")?;
    let mut rows = Vec::new();
    for &h in &r.inversion_edge_lengths {
        let coarse = build_model(cfg, h)?;
        let spec = MlsSpec {
            order: r.order,
            radius: r.radius * fine.mesh().nominal_edge_length.min(coarse.mesh().nominal_edge_length),
        };
        let data = synth::remap(&fine_data, fine.mesh(), coarse.mesh(), &spec)?;
        let label = mesh_label(h);
        data.write(out, &format!("data_{label}"))?;
        rows.extend(error_rows(cfg, &coarse, &data, &label, out)?.0);
    }
    error_table(&rows).write(&out.join("errors.csv"))?;
    #[derive(Serialize)]
    struct File<'a> {
        fit: &'a [ErrorRow],
    }
    write_toml(&out.join("summary.toml"), &File { fit: &rows })?;
    Ok(E5Outcome { rows, edge_lengths: r.inversion_edge_lengths.clone() })
}

/// Normalized errors of a row against the truth, if the laws match.
pub fn row_errors(cfg: &RunConfig, row: &ErrorRow) -> Option<Vec<f64>> {
    let t = cfg.inverse(&row.inverse).ok()?.truth_values(&cfg.truth_material())?;
    Some(normalized_error(&row.mean, &t))
}

/// Named values for summaries.
pub fn named(names: &[String], values: &[f64]) -> BTreeMap<String, f64> {
    names.iter().cloned().zip(values.iter().copied()).collect()
}
