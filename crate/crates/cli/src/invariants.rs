//! Invariant checks of the local constitutive update along a prescribed
//! deformation path.

use fvcal_core::constitutive::{
    det2, kirchhoff_stress, mul2, solve_local, Branch, LocalState, Material, LOCAL_MAX_ITER, LOCAL_TOL,
};

use crate::{CliError, Result};

pub const PLANE_STRESS_TOL: f64 = 1e-8;
pub const ISOCHORIC_TOL: f64 = 1e-9;
pub const OBJECTIVITY_TOL: f64 = 1e-10;
pub const ROUND_TRIP_TOL: f64 = 1e-10;

const I2: [f64; 4] = [1.0, 0.0, 0.0, 1.0];

/// Worst deviations seen along one loading program.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProgramCheck {
    /// `|tau_33| / max(Y, |tau|)`.
    pub plane_stress: f64,
    /// `|det(zeta + ie I) - 1|` over plastic steps.
    pub isochoric: f64,
    pub alpha_monotone: bool,
    /// Largest change of `alpha`, `ie`, `F33` or `|zeta|` under a superposed
    /// rotation; infinite if the branch sequence changed.
    pub objectivity: f64,
    pub plastic_steps: usize,
}

impl ProgramCheck {
    pub fn passes(&self) -> bool {
        self.plane_stress <= PLANE_STRESS_TOL
            && self.isochoric <= ISOCHORIC_TOL
            && self.alpha_monotone
            && self.objectivity <= OBJECTIVITY_TOL
    }
}

/// Deformation gradients starting at the identity, one per increment.
pub fn program(incs: &[[f64; 4]], scale: f64) -> Vec<[f64; 4]> {
    let mut f = I2;
    let mut out = vec![f];
    for d in incs {
        for k in 0..4 {
            f[k] += scale * d[k];
        }
        out.push(f);
    }
    out
}

fn run(path: &[[f64; 4]], mat: &Material<f64>) -> Result<Vec<(LocalState, Branch)>> {
    let mut xi = LocalState::VIRGIN;
    let mut out = vec![(xi, Branch::Elastic)];
    for w in path.windows(2) {
        let sol = solve_local(&xi, &w[1], &w[0], mat, LOCAL_TOL, LOCAL_MAX_ITER)?;
        xi = sol.state;
        out.push((xi, sol.branch));
    }
    Ok(out)
}

fn rotation(theta: f64) -> [f64; 4] {
    let (s, c) = theta.sin_cos();
    [c, -s, s, c]
}

/// Runs `path` and its rotated copy `Q(theta) F` through the local update.
pub fn check_program(path: &[[f64; 4]], theta: f64, mat: &Material<f64>) -> Result<ProgramCheck> {
    if path.iter().any(|f| det2(f) <= 0.0) {
        return Err(CliError::Config("loading program inverts the material".into()));
    }
    let hist = run(path, mat)?;
    let y = mat.hardening.yield_stress();
    let mut c = ProgramCheck { alpha_monotone: true, ..Default::default() };
    for (k, (xi, br)) in hist.iter().enumerate().skip(1) {
        let st = kirchhoff_stress(xi, det2(&path[k]), &mat.elastic)?;
        c.plane_stress = c.plane_stress.max(st.tau[3].abs() / st.tau_norm().max(y));
        if *br == Branch::Plastic {
            c.plastic_steps += 1;
            c.isochoric = c.isochoric.max((xi.isochoric_det() - 1.0).abs());
        }
        c.alpha_monotone &= xi.alpha >= hist[k - 1].0.alpha;
    }
    let q = rotation(theta);
    let rotated: Vec<[f64; 4]> = path.iter().map(|f| mul2(&q, f)).collect();
    let other = run(&rotated, mat)?;
    for ((a, ba), (b, bb)) in hist.iter().zip(&other) {
        if ba != bb {
            c.objectivity = f64::INFINITY;
            break;
        }
        let d = [a.alpha - b.alpha, a.ie - b.ie, a.f33 - b.f33, a.zeta_norm() - b.zeta_norm()];
        c.objectivity = d.iter().fold(c.objectivity, |m, v| m.max(v.abs()));
    }
    Ok(c)
}

/// Largest state deviation after loading along `f` and unloading back to
/// the identity; the excursion must stay elastic.
pub fn round_trip(f: [f64; 4], mat: &Material<f64>) -> Result<f64> {
    let hist = run(&[I2, f, I2], mat)?;
    if hist.iter().any(|(_, b)| *b != Branch::Elastic) {
        return Err(CliError::Config("round-trip excursion yielded".into()));
    }
    let back = hist[2].0.to_array();
    let virgin = LocalState::VIRGIN.to_array();
    Ok(back.iter().zip(&virgin).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}
