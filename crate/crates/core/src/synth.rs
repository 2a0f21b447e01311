//! Synthetic measurement sets: noiseless data from the forward model,
//! additive Gaussian noise, MLS smoothing and transfer between meshes.
//!
//! On disk a set is three files sharing a stem: `<stem>_displacements.csv`
//! (`step,node,ux,uy`), `<stem>_loads.csv` (`step,F`) and `<stem>.toml`
//! holding the provenance record, which includes the step times.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constitutive::Material;
use crate::error::{Error, Result};
use crate::fem::{FeModel, Trajectory};
use crate::mesh::Mesh;
use crate::mls::MlsOperator;
use crate::params::{flatten, HardeningKind};

/// Image-noise standard deviation of 0.01 px on a 2048 px sensor that
/// spans the specimen height over 80 % of its extent.
pub fn base_displacement_noise(height: f64) -> f64 {
    0.01 * height / (0.8 * 2048.0)
}

/// Load-cell noise standard deviation [N].
pub const BASE_LOAD_NOISE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub disp_scale: f64,
    pub load_scale: f64,
    pub disp_base: f64,
    pub load_base: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// Base levels for a specimen of the given height.
    pub fn new(disp_scale: f64, load_scale: f64, height: f64, seed: u64) -> Self {
        Self { disp_scale, load_scale, disp_base: base_displacement_noise(height), load_base: BASE_LOAD_NOISE, seed }
    }

    pub fn disp_sigma(&self) -> f64 {
        self.disp_scale * self.disp_base
    }

    pub fn load_sigma(&self) -> f64 {
        self.load_scale * self.load_base
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.disp_scale) && ok(self.load_scale) && ok(self.disp_base) && ok(self.load_base) {
            Ok(())
        } else {
            Err(Error::Domain(format!("noise scales and base levels must be nonnegative: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlsSpec {
    pub order: usize,
    /// Support radius [mm].
    pub radius: f64,
}

impl MlsSpec {
    /// Support of three nominal edge lengths of the denser mesh.
    pub fn for_meshes(order: usize, a: &Mesh, b: &Mesh) -> Self {
        Self { order, radius: 3.0 * a.nominal_edge_length.min(b.nominal_edge_length) }
    }

    /// Quadratic fit over four nominal edge lengths, the smoothing default.
    pub fn for_filter(mesh: &Mesh) -> Self {
        Self { order: 2, radius: 4.0 * mesh.nominal_edge_length }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemapRecord {
    pub source_mesh_id: String,
    pub source_num_nodes: usize,
    pub mls: MlsSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub hardening: String,
    pub params: BTreeMap<String, f64>,
    pub mesh_id: String,
    pub num_nodes: usize,
    pub thickness: f64,
    pub top_rate: f64,
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<MlsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remap: Option<RemapRecord>,
}

/// Measured nodal displacements and axial load per step, step 0 included.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub times: Vec<f64>,
    /// Per step, interleaved `[ux_0, uy_0, ux_1, ...]`.
    pub displacements: Vec<Vec<f64>>,
    pub loads: Vec<f64>,
    pub provenance: Provenance,
}

impl MeasurementSet {
    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.displacements[0].len() / 2
    }

    pub fn dt(&self, n: usize) -> f64 {
        self.times[n] - self.times[n - 1]
    }

    pub fn total_time(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Checks that the set fits `mesh` and `times`.
    pub fn check_against(&self, mesh: &Mesh, times: &[f64]) -> Result<()> {
        if self.num_nodes() != mesh.num_nodes() {
            return Err(Error::Domain(format!(
                "measurement set has {} nodes, mesh has {}",
                self.num_nodes(),
                mesh.num_nodes()
            )));
        }
        if self.times.len() != times.len() || self.times.iter().zip(times).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::Domain("measurement steps do not match the load schedule".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n < 2 || self.displacements.len() != n || self.loads.len() != n {
            return Err(Error::Domain("measurement set needs matching times, displacements and loads".into()));
        }
        let nd = self.displacements[0].len();
        if nd == 0 || nd % 2 != 0 || self.displacements.iter().any(|u| u.len() != nd) {
            return Err(Error::Domain("inconsistent displacement vectors".into()));
        }
        if self.displacements.iter().flatten().chain(&self.loads).any(|v| !v.is_finite()) {
            return Err(Error::Domain("measurement set has non-finite entries".into()));
        }
        Ok(())
    }

    fn paths(dir: &Path, stem: &str) -> [PathBuf; 3] {
        [
            dir.join(format!("{stem}_displacements.csv")),
            dir.join(format!("{stem}_loads.csv")),
            dir.join(format!("{stem}.toml")),
        ]
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let [dp, lp, pp] = Self::paths(dir, stem);
        let mut w = csv::Writer::from_path(&dp).map_err(csv_err)?;
        for (n, u) in self.displacements.iter().enumerate() {
            for k in 0..u.len() / 2 {
                w.serialize(DispRow { step: n, node: k, ux: u[2 * k], uy: u[2 * k + 1] }).map_err(csv_err)?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(&lp).map_err(csv_err)?;
        for (n, &f) in self.loads.iter().enumerate() {
            w.serialize(LoadRow { step: n, F: f }).map_err(csv_err)?;
        }
        w.flush()?;
        let text = toml::to_string(&self.provenance).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(pp, text)?;
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let [dp, lp, pp] = Self::paths(dir, stem);
        let provenance: Provenance =
            toml::from_str(&std::fs::read_to_string(&pp)?).map_err(|e| Error::Parse(format!("{}: {e}", pp.display())))?;
        let steps = provenance.times.len();
        let nn = provenance.num_nodes;
        let mut displacements = vec![vec![f64::NAN; 2 * nn]; steps];
        for row in csv::Reader::from_path(&dp).map_err(csv_err)?.deserialize() {
            let r: DispRow = row.map_err(csv_err)?;
            if r.step >= steps || r.node >= nn {
                return Err(Error::Parse(format!("{}: row out of range (step {}, node {})", dp.display(), r.step, r.node)));
            }
            displacements[r.step][2 * r.node] = r.ux;
            displacements[r.step][2 * r.node + 1] = r.uy;
        }
        let mut loads = vec![f64::NAN; steps];
        for row in csv::Reader::from_path(&lp).map_err(csv_err)?.deserialize() {
            let r: LoadRow = row.map_err(csv_err)?;
            if r.step >= steps {
                return Err(Error::Parse(format!("{}: step {} out of range", lp.display(), r.step)));
            }
            loads[r.step] = r.F;
        }
        let ms = Self { times: provenance.times.clone(), displacements, loads, provenance };
        ms.validate().map_err(|e| Error::Parse(format!("{}: {e}", dp.display())))?;
        Ok(ms)
    }
}

#[derive(Serialize, Deserialize)]
struct DispRow {
    step: usize,
    node: usize,
    ux: f64,
    uy: f64,
}

#[allow(non_snake_case)]
#[derive(Serialize, Deserialize)]
struct LoadRow {
    step: usize,
    F: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Named material entries in calibration-vector order.
pub fn material_record(mat: &Material<f64>) -> BTreeMap<String, f64> {
    let kind = HardeningKind::of(&mat.hardening);
    let names = ["E", "nu"].into_iter().chain(kind.coefficient_names().iter().copied());
    names.map(String::from).zip(flatten(mat)).collect()
}

/// Noiseless data taken directly from a converged trajectory.
pub fn from_trajectory(model: &FeModel, mat: &Material<f64>, traj: &Trajectory) -> MeasurementSet {
    MeasurementSet {
        times: traj.times.clone(),
        displacements: traj.displacements.clone(),
        loads: traj.loads.clone(),
        provenance: Provenance {
            hardening: format!("{:?}", HardeningKind::of(&mat.hardening)),
            params: material_record(mat),
            mesh_id: model.mesh().fingerprint(),
            num_nodes: model.mesh().num_nodes(),
            thickness: model.thickness(),
            top_rate: model.schedule().top_rate,
            times: traj.times.clone(),
            noise: None,
            filter: None,
            remap: None,
        },
    }
}

/// Runs the forward model and records its displacements and loads.
pub fn generate(model: &FeModel, mat: &Material<f64>) -> Result<MeasurementSet> {
    let traj = model.solve(mat)?;
    Ok(from_trajectory(model, mat, &traj))
}

/// Adds independent normal perturbations to every displacement component
/// and load of steps 1 onward.
pub fn add_noise(ms: &MeasurementSet, spec: &NoiseSpec) -> Result<MeasurementSet> {
    spec.validate()?;
    let mut out = ms.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (su, sf) = (spec.disp_sigma(), spec.load_sigma());
    for u in out.displacements.iter_mut().skip(1) {
        for v in u.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            if su > 0.0 {
                *v += z * su;
            }
        }
    }
    for f in out.loads.iter_mut().skip(1) {
        let z: f64 = StandardNormal.sample(&mut rng);
        if sf > 0.0 {
            *f += z * sf;
        }
    }
    out.provenance.noise = Some(*spec);
    Ok(out)
}

fn apply_componentwise(op: &MlsOperator, u: &[f64]) -> Vec<f64> {
    let nx: Vec<f64> = u.iter().step_by(2).copied().collect();
    let ny: Vec<f64> = u.iter().skip(1).step_by(2).copied().collect();
    let (fx, fy) = (op.apply(&nx), op.apply(&ny));
    fx.iter().zip(&fy).flat_map(|(&a, &b)| [a, b]).collect()
}

/// MLS smoothing of the displacement fields; loads are left alone.
pub fn filter(ms: &MeasurementSet, mesh: &Mesh, spec: &MlsSpec) -> Result<MeasurementSet> {
    if ms.num_nodes() != mesh.num_nodes() {
        return Err(Error::Domain("filter mesh does not match the measurement set".into()));
    }
    let op = MlsOperator::new(&mesh.nodes, &mesh.nodes, spec.order, spec.radius)?;
    let mut out = ms.clone();
    out.displacements = ms.displacements.iter().map(|u| apply_componentwise(&op, u)).collect();
    out.provenance.filter = Some(*spec);
    Ok(out)
}

/// Transfers displacement fields from `source` nodes to `target` nodes.
pub fn remap(ms: &MeasurementSet, source: &Mesh, target: &Mesh, spec: &MlsSpec) -> Result<MeasurementSet> {
    if ms.num_nodes() != source.num_nodes() {
        return Err(Error::Domain("source mesh does not match the measurement set".into()));
    }
    let op = MlsOperator::new(&source.nodes, &target.nodes, spec.order, spec.radius)?;
    let mut out = ms.clone();
    out.displacements = ms.displacements.iter().map(|u| apply_componentwise(&op, u)).collect();
    out.provenance.remap = Some(RemapRecord {
        source_mesh_id: ms.provenance.mesh_id.clone(),
        source_num_nodes: ms.num_nodes(),
        mls: *spec,
    });
    out.provenance.mesh_id = target.fingerprint();
    out.provenance.num_nodes = target.num_nodes();
    Ok(out)
}
