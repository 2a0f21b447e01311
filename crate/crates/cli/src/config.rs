//! Study configuration files.
//!
//! A config is TOML: top-level `seed` and `output`, then `[plate]`,
//! `[schedule]`, `[truth]`, any number of `[[inverse]]` blocks and the
//! optional `[noise]`, `[remap]`, `[curves]` and `[gradcheck]` sections.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fvcal_core::constitutive::{Elastic, Hardening, Material};
use fvcal_core::fem::Schedule;
use fvcal_core::mesh::{Notch, NotchedPlateSpec};
use fvcal_core::optimize::{Bounds, OptOptions};
use fvcal_core::params::{flatten, HardeningKind, ParamSpace};
use fvcal_core::vfm::FieldGenerator;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub plate: PlateConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub truth: MaterialConfig,
    /// Measurement set `<dir>/<stem>` to calibrate against instead of
    /// synthesizing data from `truth`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inverse: Vec<InverseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remap: Option<RemapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<CurveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradcheck: Option<GradcheckConfig>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    #[default]
    Notched,
    Rectangle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateConfig {
    #[serde(default)]
    pub shape: Shape,
    pub edge_length: f64,
    #[serde(default = "default_thickness")]
    pub thickness: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_height")]
    pub height: f64,
    /// `[center_y, radius]` of the left and right notches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_notch: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_notch: Option<[f64; 2]>,
}

fn default_thickness() -> f64 {
    0.02
}

fn default_width() -> f64 {
    0.84
}

fn default_height() -> f64 {
    1.0
}

impl PlateConfig {
    pub fn spec(&self, edge_length: f64) -> NotchedPlateSpec {
        match self.shape {
            Shape::Rectangle => NotchedPlateSpec::rectangle(self.width, self.height, edge_length),
            Shape::Notched => {
                let mut s = NotchedPlateSpec { width: self.width, height: self.height, ..Default::default() };
                if let Some([c, r]) = self.left_notch {
                    s.left = Notch { center_y: c, radius: r };
                }
                if let Some([c, r]) = self.right_notch {
                    s.right = Notch { center_y: c, radius: r };
                }
                s.with_edge_length(edge_length)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub times: Vec<f64>,
    /// Top displacement per unit time [mm].
    pub rate: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = Schedule::nominal();
        Self { times: s.times, rate: s.top_rate }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<Schedule> {
        Ok(Schedule::new(self.times.clone(), self.rate)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HardeningConfig {
    Voce {
        #[serde(rename = "Y")]
        y: f64,
        #[serde(rename = "S")]
        s: f64,
        #[serde(rename = "D")]
        d: f64,
    },
    LinearVoce {
        #[serde(rename = "Y")]
        y: f64,
        #[serde(rename = "K")]
        k: f64,
        #[serde(rename = "S")]
        s: f64,
        #[serde(rename = "D")]
        d: f64,
    },
    Power {
        #[serde(rename = "Y")]
        y: f64,
        #[serde(rename = "A")]
        a: f64,
        n: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    #[serde(rename = "E")]
    pub e: f64,
    pub nu: f64,
    pub hardening: HardeningConfig,
}

impl MaterialConfig {
    pub fn material(&self) -> Material<f64> {
        let hardening = match self.hardening {
            HardeningConfig::Voce { y, s, d } => Hardening::Voce { y, s, d },
            HardeningConfig::LinearVoce { y, k, s, d } => Hardening::LinearVoce { y, k, s, d },
            HardeningConfig::Power { y, a, n } => Hardening::Power { y, a, n },
        };
        Material { elastic: Elastic { e: self.e, nu: self.nu }, hardening }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FemuAdjoint,
    FemuFd,
    VfmFs,
    VfmAdjoint,
    VfmFd,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::FemuAdjoint, Method::FemuFd, Method::VfmFs, Method::VfmAdjoint, Method::VfmFd];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FemuAdjoint => "femu-adjoint",
            Method::FemuFd => "femu-fd",
            Method::VfmFs => "vfm-fs",
            Method::VfmAdjoint => "vfm-adjoint",
            Method::VfmFd => "vfm-fd",
        }
    }

    pub fn is_femu(self) -> bool {
        matches!(self, Method::FemuAdjoint | Method::FemuFd)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| CliError::Config(format!("unknown method '{s}'")))
    }
}

/// One inverse problem: which law and parameters to fit, bounds, starts
/// and the methods to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseConfig {
    pub name: String,
    /// Hardening law of the inverse model; the truth law when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<String>,
    /// Values of parameters that are neither free nor shared with the truth.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fixed: BTreeMap<String, f64>,
    pub free: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    /// Number of uniform random starts; used when `start` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<usize>,
    pub methods: Vec<Method>,
    #[serde(default = "default_field")]
    pub virtual_field: String,
    /// Initial FEMU balance factor.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Relative central-difference step of the FD methods.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
}

fn default_field() -> String {
    "cos-quadratic".into()
}

fn default_alpha() -> f64 {
    1.0
}

fn default_fd_step() -> f64 {
    1e-6
}

fn default_iterations() -> usize {
    OptOptions::default().max_iter
}

fn parse_law(s: &str) -> Result<HardeningKind> {
    match s {
        "voce" => Ok(HardeningKind::Voce),
        "linear-voce" => Ok(HardeningKind::LinearVoce),
        "power" => Ok(HardeningKind::Power),
        _ => Err(CliError::Config(format!("unknown hardening law '{s}'"))),
    }
}

impl InverseConfig {
    pub fn bounds(&self) -> Result<Bounds> {
        Ok(Bounds::new(self.lower.clone(), self.upper.clone())?)
    }

    pub fn field_generator(&self) -> Result<FieldGenerator> {
        Ok(FieldGenerator::parse(&self.virtual_field)?)
    }

    pub fn options(&self) -> OptOptions {
        OptOptions { max_iter: self.max_iterations, ..OptOptions::default() }
    }

    /// Parameter space of the inverse model. Entries that are not free take
    /// their value from `fixed`, else from the truth when the laws match.
    pub fn space(&self, truth: &Material<f64>) -> Result<ParamSpace> {
        let kind = match &self.law {
            Some(l) => parse_law(l)?,
            None => HardeningKind::of(&truth.hardening),
        };
        let names: Vec<&str> = ["E", "nu"].into_iter().chain(kind.coefficient_names().iter().copied()).collect();
        let same_law = kind == HardeningKind::of(&truth.hardening);
        let truth_values = flatten(truth);
        for key in self.fixed.keys() {
            if !names.contains(&key.as_str()) {
                return Err(CliError::Config(format!("[{}] fixed parameter '{key}' is not part of the law", self.name)));
            }
        }
        let mut values = Vec::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            let v = if let Some(v) = self.fixed.get(*n) {
                *v
            } else if let Some(k) = self.free.iter().position(|f| f == n) {
                // placeholder inside the box; the calibration vector overrides it
                0.5 * (self.lower[k] + self.upper[k])
            } else if i < 2 || same_law {
                truth_values[i]
            } else {
                return Err(CliError::Config(format!("[{}] parameter '{n}' needs a value in `fixed`", self.name)));
            };
            values.push(v);
        }
        let base = Material { elastic: Elastic { e: values[0], nu: values[1] }, hardening: kind.build(&values[2..]) };
        let free: Vec<&str> = self.free.iter().map(String::as_str).collect();
        Ok(ParamSpace::new(&base, &free)?)
    }

    /// Truth values of the free parameters, when the inverse law matches.
    pub fn truth_values(&self, truth: &Material<f64>) -> Option<Vec<f64>> {
        let space = self.space(truth).ok()?;
        if space.kind() != HardeningKind::of(&truth.hardening) {
            return None;
        }
        let all = flatten(truth);
        let names: Vec<&str> = ["E", "nu"].into_iter().chain(space.kind().coefficient_names().iter().copied()).collect();
        Some(self.free.iter().map(|f| all[names.iter().position(|n| n == f).unwrap()]).collect())
    }

    pub fn validate(&self, truth: &Material<f64>) -> Result<()> {
        let err = |m: String| Err(CliError::Config(format!("[{}] {m}", self.name)));
        let n = self.free.len();
        if self.lower.len() != n || self.upper.len() != n {
            return err(format!("bounds need {n} entries"));
        }
        let b = self.bounds()?;
        match (&self.start, self.starts) {
            (Some(p), None) => {
                if p.len() != n || !b.contains(p) {
                    return err(format!("start {p:?} must have {n} entries inside the bounds"));
                }
            }
            (None, Some(k)) if k > 0 => {}
            _ => return err("give exactly one of `start` or `starts` (> 0)".into()),
        }
        if self.methods.is_empty() {
            return err("no methods".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return err("alpha must be positive".into());
        }
        if !(self.fd_step > 0.0 && self.fd_step < 1.0) {
            return err("fd_step must lie in (0, 1)".into());
        }
        self.field_generator()?;
        self.space(truth)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Displacement noise scale factors (DNSF).
    pub disp_scales: Vec<f64>,
    pub load_scale: f64,
    /// Which of unfiltered (`false`) and MLS-filtered (`true`) data to use.
    #[serde(default = "default_filter")]
    pub filter: Vec<bool>,
    #[serde(default = "default_filter_order")]
    pub filter_order: usize,
    /// Filter support radius in nominal edge lengths.
    #[serde(default = "default_filter_radius")]
    pub filter_radius: f64,
}

fn default_filter() -> Vec<bool> {
    vec![false]
}

fn default_filter_order() -> usize {
    2
}

fn default_filter_radius() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemapConfig {
    /// Mesh on which the data are generated.
    pub data_edge_length: f64,
    /// Meshes used for the inversion.
    pub inversion_edge_lengths: Vec<f64>,
    #[serde(default = "default_remap_order")]
    pub order: usize,
    /// Support radius in nominal edge lengths of the denser mesh.
    #[serde(default = "default_remap_radius")]
    pub radius: f64,
}

fn default_remap_order() -> usize {
    1
}

fn default_remap_radius() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    pub alpha_max: f64,
    pub samples: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self { alpha_max: 0.35, samples: 36 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Direction in normalized coordinates, one entry per free parameter.
    pub direction: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // relative data paths are taken from the config's directory
        if let (Some(d), Some(dir)) = (&cfg.data, path.parent()) {
            if d.is_relative() {
                cfg.data = Some(dir.join(d));
            }
        }
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn truth_material(&self) -> Material<f64> {
        self.truth.material()
    }

    pub fn inverse(&self, name: &str) -> Result<&InverseConfig> {
        self.inverse
            .iter()
            .find(|i| i.name == name)
            .ok_or_else(|| CliError::Config(format!("no [[inverse]] named '{name}'")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        let p = &self.plate;
        if !(p.edge_length > 0.0 && p.thickness > 0.0 && p.width > 0.0 && p.height > 0.0) {
            return bad("plate dimensions and edge length must be positive");
        }
        self.plate.spec(p.edge_length).validate()?;
        self.schedule.build()?;
        let truth = self.truth_material();
        truth.validate()?;
        let mut names: Vec<&str> = self.inverse.iter().map(|i| i.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("[[inverse]] names must be unique");
        }
        for inv in &self.inverse {
            inv.validate(&truth)?;
        }
        if let Some(n) = &self.noise {
            if n.disp_scales.is_empty() || n.filter.is_empty() {
                return bad("[noise] needs disp_scales and filter entries");
            }
            if n.disp_scales.iter().chain([&n.load_scale]).any(|s| !(s.is_finite() && *s >= 0.0)) {
                return bad("[noise] scales must be nonnegative");
            }
            if n.filter_radius <= 0.0 {
                return bad("[noise] filter_radius must be positive");
            }
        }
        if let Some(r) = &self.remap {
            if r.data_edge_length <= 0.0 || r.inversion_edge_lengths.iter().any(|h| *h <= 0.0) || r.radius <= 0.0 {
                return bad("[remap] edge lengths and radius must be positive");
            }
        }
        if let Some(c) = &self.curves {
            if c.samples < 2 || c.alpha_max <= 0.0 {
                return bad("[curves] needs alpha_max > 0 and at least two samples");
            }
        }
        Ok(())
    }

    fn check_files(&self) -> Result<()> {
        if let Some(d) = &self.data {
            let dir = d.parent().unwrap_or(Path::new("."));
            let stem = d.file_name().and_then(|s| s.to_str()).unwrap_or_default();
            for suffix in ["_displacements.csv", "_loads.csv", ".toml"] {
                let f = dir.join(format!("{stem}{suffix}"));
                if !f.exists() {
                    return Err(CliError::Config(format!("data file {} does not exist", f.display())));
                }
            }
        }
        Ok(())
    }
}
