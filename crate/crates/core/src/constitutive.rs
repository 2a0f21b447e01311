//! Plane-stress finite-deformation J2 plasticity with isotropic hardening.
//!
//! Tensors that live in the plane are stored as 2x2 row-major arrays
//! `[a11, a12, a21, a22]`; the out-of-plane direction only ever carries a
//! diagonal `zz` entry, so full 3D quantities are the pair (2x2 block, zz).
//!
//! The local state at an integration point is
//! `[zeta11, zeta12, zeta22, ie, alpha, f33]` where `zeta` is the deviatoric
//! part of the isochoric elastic left Cauchy-Green tensor, `ie` one third of
//! its trace, `alpha` the hardening variable and `f33` the out-of-plane
//! stretch. `zeta33 = -(zeta11 + zeta22)` is implied.

use nalgebra::{SMatrix, SVector};

use crate::ad::{Dual, Scalar};
use crate::error::{Error, Result};

const SQRT_2_3: f64 = 0.816_496_580_927_726;
const SQRT_6: f64 = 2.449_489_742_783_178;

/// Local residual convergence tolerance (infinity norm).
pub const LOCAL_TOL: f64 = 1e-12;
pub const LOCAL_MAX_ITER: usize = 50;

/// Relative margin on the trial yield function below which a step is
/// treated as elastic. Keeps roundoff on an already-converged yield surface
/// from triggering a zero-length plastic correction.
const YIELD_MARGIN: f64 = 1e-12;

/// Which part of the return mapping produced a local state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Branch {
    #[default]
    Elastic,
    Plastic,
}

/// Isotropic hardening function H(alpha), generic so material parameters can
/// be seeded for differentiation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Hardening<T> {
    /// `Y + S (1 - exp(-D alpha))`
    Voce { y: T, s: T, d: T },
    /// `Y + K alpha + S (1 - exp(-D alpha))`
    LinearVoce { y: T, k: T, s: T, d: T },
    /// `Y + A alpha^n`
    Power { y: T, a: T, n: T },
}

pub type HardeningLaw = Hardening<f64>;

impl<T: Scalar> Hardening<T> {
    pub fn eval(&self, alpha: T) -> T {
        match *self {
            Hardening::Voce { y, s, d } => y + s * (T::one() - (-(d * alpha)).exp()),
            Hardening::LinearVoce { y, k, s, d } => {
                y + k * alpha + s * (T::one() - (-(d * alpha)).exp())
            }
            Hardening::Power { y, a, n } => {
                if alpha.value() <= 0.0 {
                    y + a * alpha * 0.0
                } else {
                    y + a * alpha.pow(n)
                }
            }
        }
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Hardening<U> {
        match *self {
            Hardening::Voce { y, s, d } => Hardening::Voce { y: f(y), s: f(s), d: f(d) },
            Hardening::LinearVoce { y, k, s, d } => Hardening::LinearVoce { y: f(y), k: f(k), s: f(s), d: f(d) },
            Hardening::Power { y, a, n } => Hardening::Power { y: f(y), a: f(a), n: f(n) },
        }
    }

    pub fn yield_stress(&self) -> T {
        match *self {
            Hardening::Voce { y, .. } | Hardening::LinearVoce { y, .. } | Hardening::Power { y, .. } => y,
        }
    }
}

impl HardeningLaw {
    /// Checks the parameter invariants of each variant.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Hardening::Voce { y, s, d } => y > 0.0 && s >= 0.0 && d >= 0.0,
            Hardening::LinearVoce { y, k, s, d } => y > 0.0 && k >= 0.0 && s >= 0.0 && d >= 0.0,
            Hardening::Power { y, a, n } => y > 0.0 && a >= 0.0 && n > 0.0 && n <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("hardening parameters out of range: {self:?}")))
        }
    }

    /// Slope dH/dalpha; infinite for a power law with n < 1 at alpha = 0.
    pub fn slope(&self, alpha: f64) -> f64 {
        if let Hardening::Power { a, n, .. } = *self {
            if alpha <= 0.0 {
                return if n < 1.0 && a > 0.0 { f64::INFINITY } else { a };
            }
        }
        self.map(Dual::<1>::constant).eval(Dual::variable(alpha, 0)).d[0]
    }
}

/// H(alpha) with a domain check on alpha.
pub fn hardening(law: &HardeningLaw, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::Domain(format!("negative hardening variable {alpha}")));
    }
    Ok(law.eval(alpha))
}

/// Young's modulus and Poisson ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Elastic<T> {
    pub e: T,
    pub nu: T,
}

pub type ElasticConstants = Elastic<f64>;

impl<T: Scalar> Elastic<T> {
    pub fn mu(&self) -> T {
        self.e / ((self.nu + 1.0) * 2.0)
    }

    pub fn kappa(&self) -> T {
        self.e / ((T::one() - self.nu * 2.0) * 3.0)
    }
}

impl ElasticConstants {
    pub fn validate(&self) -> Result<()> {
        if self.e > 0.0 && self.nu > -1.0 && self.nu < 0.5 {
            Ok(())
        } else {
            Err(Error::Domain(format!("elastic constants out of range: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material<T> {
    pub elastic: Elastic<T>,
    pub hardening: Hardening<T>,
}

impl Material<f64> {
    pub fn validate(&self) -> Result<()> {
        self.elastic.validate()?;
        self.hardening.validate()
    }
}

/// Internal variables at one integration point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalState {
    pub zeta11: f64,
    pub zeta12: f64,
    pub zeta22: f64,
    pub ie: f64,
    pub alpha: f64,
    pub f33: f64,
}

impl Default for LocalState {
    fn default() -> Self {
        Self::VIRGIN
    }
}

impl LocalState {
    /// Undeformed material with no plastic history.
    pub const VIRGIN: LocalState = LocalState {
        zeta11: 0.0,
        zeta12: 0.0,
        zeta22: 0.0,
        ie: 1.0,
        alpha: 0.0,
        f33: 1.0,
    };

    pub fn to_array(self) -> [f64; 6] {
        [self.zeta11, self.zeta12, self.zeta22, self.ie, self.alpha, self.f33]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            zeta11: a[0],
            zeta12: a[1],
            zeta22: a[2],
            ie: a[3],
            alpha: a[4],
            f33: a[5],
        }
    }

    pub fn zeta33(&self) -> f64 {
        -(self.zeta11 + self.zeta22)
    }

    /// Frobenius norm of the full 3D deviator.
    pub fn zeta_norm(&self) -> f64 {
        zeta_norm(&self.to_array())
    }

    /// det[zeta + ie I] with the full 3D tensor.
    pub fn isochoric_det(&self) -> f64 {
        isochoric_det(&self.to_array())
    }
}

/// Kirchhoff stress decomposition. Tensor entries are `[11, 12, 22, 33]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StressState {
    pub tau: [f64; 4],
    pub s: [f64; 4],
    pub p: f64,
    pub j: f64,
}

impl StressState {
    pub fn tau_norm(&self) -> f64 {
        let t = &self.tau;
        (t[0] * t[0] + 2.0 * t[1] * t[1] + t[2] * t[2] + t[3] * t[3]).sqrt()
    }

    pub fn s_norm(&self) -> f64 {
        let s = &self.s;
        (s[0] * s[0] + 2.0 * s[1] * s[1] + s[2] * s[2] + s[3] * s[3]).sqrt()
    }
}

// ---- small 2x2 helpers -------------------------------------------------

#[inline]
pub fn det2<T: Scalar>(a: &[T; 4]) -> T {
    a[0] * a[3] - a[1] * a[2]
}

#[inline]
pub fn inv2<T: Scalar>(a: &[T; 4]) -> [T; 4] {
    let d = det2(a);
    [a[3] / d, -a[1] / d, -a[2] / d, a[0] / d]
}

#[inline]
pub fn mul2<T: Scalar>(a: &[T; 4], b: &[T; 4]) -> [T; 4] {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

#[inline]
fn transpose2<T: Scalar>(a: &[T; 4]) -> [T; 4] {
    [a[0], a[2], a[1], a[3]]
}

#[inline]
fn zeta_norm<T: Scalar>(xi: &[T; 6]) -> T {
    let z33 = -(xi[0] + xi[2]);
    (xi[0] * xi[0] + xi[1] * xi[1] * 2.0 + xi[2] * xi[2] + z33 * z33).sqrt()
}

#[inline]
fn isochoric_det<T: Scalar>(xi: &[T; 6]) -> T {
    let ie = xi[3];
    let b11 = xi[0] + ie;
    let b22 = xi[2] + ie;
    let b33 = ie - xi[0] - xi[2];
    (b11 * b22 - xi[1] * xi[1]) * b33
}

// ---- constitutive relations ----------------------------------------------

/// Out-of-plane stretch that makes tau33 vanish for the given in-plane
/// elastic deviator and in-plane Jacobian.
pub fn f33_closure<T: Scalar>(zeta11: T, zeta22: T, j2d: T, elastic: &Elastic<T>) -> T {
    let ratio = elastic.mu() / elastic.kappa();
    ((ratio * (zeta11 + zeta22) * 2.0 + 1.0) / (j2d * j2d)).sqrt()
}

/// Checked scalar closure.
pub fn f33_closure_checked(zeta11: f64, zeta22: f64, j2d: f64, elastic: &ElasticConstants) -> Result<f64> {
    let ratio = elastic.mu() / elastic.kappa();
    let rad = (1.0 + 2.0 * ratio * (zeta11 + zeta22)) / (j2d * j2d);
    if !(rad > 0.0) {
        return Err(Error::Domain(format!("plane-stress closure radicand {rad:.3e} is not positive")));
    }
    Ok(rad.sqrt())
}

/// In-plane Kirchhoff stress `[t11, t12, t21, t22]`.
#[inline]
pub fn kirchhoff_inplane<T: Scalar>(xi: &[T; 6], j2d: T, elastic: &Elastic<T>) -> [T; 4] {
    let mu = elastic.mu();
    let j = j2d * xi[5];
    let vol = elastic.kappa() * (j * j - 1.0) * 0.5;
    [mu * xi[0] + vol, mu * xi[1], mu * xi[1], mu * xi[2] + vol]
}

/// First Piola-Kirchhoff stress restricted to the plane, `tau F^{-T}`.
#[inline]
pub fn piola_inplane<T: Scalar>(xi: &[T; 6], f: &[T; 4], elastic: &Elastic<T>) -> [T; 4] {
    let tau = kirchhoff_inplane(xi, det2(f), elastic);
    mul2(&tau, &transpose2(&inv2(f)))
}

/// Full stress decomposition at a local state.
pub fn kirchhoff_stress(xi: &LocalState, j2d: f64, elastic: &ElasticConstants) -> Result<StressState> {
    let j = j2d * xi.f33;
    if !(j > 0.0) {
        return Err(Error::Domain(format!("nonpositive Jacobian {j:.3e}")));
    }
    let mu = elastic.mu();
    let neg_p = 0.5 * elastic.kappa() * (j * j - 1.0) / j;
    let s = [mu * xi.zeta11, mu * xi.zeta12, mu * xi.zeta22, mu * xi.zeta33()];
    let jp = -j * neg_p;
    Ok(StressState {
        tau: [s[0] - jp, s[1], s[2] - jp, s[3] - jp],
        s,
        p: -neg_p,
        j,
    })
}

/// Trial state for given current and previous out-of-plane stretch.
///
/// Returns `[zeta11, zeta12, zeta22, ie]` of the elastic predictor.
#[inline]
pub fn trial_kinematics<T: Scalar>(
    xi_prev: &[T; 6],
    f_n: &[T; 4],
    f_prev: &[T; 4],
    f33_n: T,
) -> [T; 4] {
    let rel = mul2(f_n, &inv2(f_prev));
    let rel_z = f33_n / xi_prev[5];
    let c = (det2(&rel) * rel_z).powf(-1.0 / 3.0);
    let fb = [rel[0] * c, rel[1] * c, rel[2] * c, rel[3] * c];
    let fz = rel_z * c;

    let ie = xi_prev[3];
    let b_prev = [xi_prev[0] + ie, xi_prev[1], xi_prev[1], xi_prev[2] + ie];
    let bzz_prev = ie - xi_prev[0] - xi_prev[2];

    let b = mul2(&mul2(&fb, &b_prev), &transpose2(&fb));
    let bzz = fz * fz * bzz_prev;
    let ie_tr = (b[0] + b[3] + bzz) / 3.0;
    [b[0] - ie_tr, (b[1] + b[2]) * 0.5, b[3] - ie_tr, ie_tr]
}

/// Discrete local residual for a frozen branch.
///
/// Rows: three deviator rows, the `ie` row (trial match or isochoric
/// constraint), the hardening row (trial match or consistency scaled by
/// 1/mu), and the plane-stress closure.
pub fn local_residual<T: Scalar>(
    xi: &[T; 6],
    xi_prev: &[T; 6],
    f_n: &[T; 4],
    f_prev: &[T; 4],
    mat: &Material<T>,
    branch: Branch,
) -> [T; 6] {
    let tr = trial_kinematics(xi_prev, f_n, f_prev, xi[5]);
    let closure = xi[5] - f33_closure(xi[0], xi[2], det2(f_n), &mat.elastic);
    match branch {
        Branch::Elastic => [
            xi[0] - tr[0],
            xi[1] - tr[1],
            xi[2] - tr[2],
            xi[3] - tr[3],
            xi[4] - xi_prev[4],
            closure,
        ],
        Branch::Plastic => {
            let norm = zeta_norm(xi);
            let flow = (xi[4] - xi_prev[4]) * xi[3] * SQRT_6 / norm;
            let h = mat.hardening.eval(xi[4]);
            [
                xi[0] - tr[0] + flow * xi[0],
                xi[1] - tr[1] + flow * xi[1],
                xi[2] - tr[2] + flow * xi[2],
                isochoric_det(xi) - 1.0,
                norm - h * SQRT_2_3 / mat.elastic.mu(),
                closure,
            ]
        }
    }
}

/// Yield function `||s|| - sqrt(2/3) H(alpha)` at a local state.
pub fn yield_function(xi: &LocalState, mat: &Material<f64>) -> f64 {
    mat.elastic.mu() * xi.zeta_norm() - SQRT_2_3 * mat.hardening.eval(xi.alpha)
}

/// Outcome of a local solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalSolution {
    pub state: LocalState,
    pub branch: Branch,
    pub iterations: usize,
}

type Mat6 = SMatrix<f64, 6, 6>;
type Vec6 = SVector<f64, 6>;

/// Residual and its Jacobian with respect to the current state.
pub fn local_residual_and_jacobian(
    xi: &[f64; 6],
    xi_prev: &[f64; 6],
    f_n: &[f64; 4],
    f_prev: &[f64; 4],
    mat: &Material<f64>,
    branch: Branch,
) -> ([f64; 6], Mat6) {
    let xd = crate::ad::seed_all(xi);
    let cst = |a: &[f64; 6]| a.map(Dual::<6>::constant);
    let c = local_residual(
        &xd,
        &cst(xi_prev),
        &f_n.map(Dual::constant),
        &f_prev.map(Dual::constant),
        &lift_material(mat),
        branch,
    );
    let mut jac = Mat6::zeros();
    for (r, cr) in c.iter().enumerate() {
        for k in 0..6 {
            jac[(r, k)] = cr.d[k];
        }
    }
    (c.map(|v| v.v), jac)
}

/// Lifts a material to duals with no seeded parameter.
pub fn lift_material<const N: usize>(mat: &Material<f64>) -> Material<Dual<N>> {
    let c = Dual::<N>::constant;
    Material {
        elastic: Elastic { e: c(mat.elastic.e), nu: c(mat.elastic.nu) },
        hardening: mat.hardening.map(c),
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn admissible(xi: &[f64; 6], xi_prev: &[f64; 6], branch: Branch) -> bool {
    let finite = xi.iter().all(|v| v.is_finite());
    let base = finite && xi[3] > 0.0 && xi[5] > 0.0;
    match branch {
        Branch::Elastic => base,
        Branch::Plastic => base && xi[4] > xi_prev[4] && zeta_norm(xi) > 0.0,
    }
}

/// Damped Newton on the frozen-branch residual.
fn newton_local(
    mut xi: [f64; 6],
    xi_prev: &[f64; 6],
    f_n: &[f64; 4],
    f_prev: &[f64; 4],
    mat: &Material<f64>,
    branch: Branch,
    tol: f64,
    max_iter: usize,
) -> std::result::Result<([f64; 6], usize), String> {
    let (mut c, mut jac) = local_residual_and_jacobian(&xi, xi_prev, f_n, f_prev, mat, branch);
    let mut norm = inf_norm(&c);
    for it in 0..max_iter {
        if norm <= tol {
            return Ok((xi, it));
        }
        let lu = jac.lu();
        let dx = lu
            .solve(&Vec6::from_column_slice(&c))
            .ok_or_else(|| "singular local Jacobian".to_string())?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = xi;
            for k in 0..6 {
                trial[k] -= step * dx[k];
            }
            if admissible(&trial, xi_prev, branch) {
                let (ct, jt) = local_residual_and_jacobian(&trial, xi_prev, f_n, f_prev, mat, branch);
                let nt = inf_norm(&ct);
                if nt.is_finite() && (nt < norm || nt <= tol) {
                    xi = trial;
                    c = ct;
                    jac = jt;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // roundoff floor: no admissible step lowers the residual further
            if norm <= 1e3 * tol {
                return Ok((xi, it));
            }
            return Err(format!("line search failed at residual {norm:.3e}"));
        }
    }
    if norm <= tol {
        Ok((xi, max_iter))
    } else {
        Err(format!("no convergence in {max_iter} iterations (residual {norm:.3e})"))
    }
}

/// Elastic predictor with the out-of-plane stretch solved consistently.
/// Returns the trial state and the trial deviatoric Kirchhoff stress
/// `[11, 12, 22, 33]`.
pub fn trial_state(
    xi_prev: &LocalState,
    f_n: &[f64; 4],
    f_prev: &[f64; 4],
    mat: &Material<f64>,
) -> Result<(LocalState, [f64; 4])> {
    if !(det2(f_n) > 0.0) || !(det2(f_prev) > 0.0) {
        return Err(Error::Domain("nonpositive in-plane Jacobian".into()));
    }
    let prev = xi_prev.to_array();
    let (xi, _) = newton_local(prev, &prev, f_n, f_prev, mat, Branch::Elastic, LOCAL_TOL, LOCAL_MAX_ITER)
        .map_err(|reason| Error::LocalSolve { element: usize::MAX, reason })?;
    let st = LocalState::from_array(xi);
    let mu = mat.elastic.mu();
    Ok((st, [mu * st.zeta11, mu * st.zeta12, mu * st.zeta22, mu * st.zeta33()]))
}

/// Radial-return estimate of the plastic multiplier, used to start the
/// plastic Newton iteration. Solves the scalar consistency condition with
/// `ie` frozen at its trial value by safeguarded Newton/bisection.
fn radial_return_guess(trial: &[f64; 6], alpha_prev: f64, mat: &Material<f64>) -> [f64; 6] {
    let mu = mat.elastic.mu();
    let norm_tr = zeta_norm(trial);
    let ie = trial[3];
    let g = |da: f64| mu * (norm_tr - SQRT_6 * da * ie) - SQRT_2_3 * mat.hardening.eval(alpha_prev + da);
    let mut lo = 0.0;
    let mut hi = norm_tr / (SQRT_6 * ie);
    let mut da = 0.5 * hi;
    for _ in 0..100 {
        let gv = g(da);
        if gv > 0.0 {
            lo = da;
        } else {
            hi = da;
        }
        let slope = -mu * SQRT_6 * ie - SQRT_2_3 * mat.hardening.slope(alpha_prev + da);
        let mut next = da - gv / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - da).abs() <= 1e-15 * (1.0 + da) {
            da = next;
            break;
        }
        da = next;
    }
    let da = da.max(1e-14 * (1.0 + alpha_prev)).min(hi);
    let shrink = 1.0 - SQRT_6 * da * ie / norm_tr;
    let mut xi = *trial;
    xi[0] *= shrink;
    xi[1] *= shrink;
    xi[2] *= shrink;
    xi[4] = alpha_prev + da;
    xi
}

/// Return mapping: elastic predictor, branch selection, plastic corrector.
pub fn solve_local(
    xi_prev: &LocalState,
    f_n: &[f64; 4],
    f_prev: &[f64; 4],
    mat: &Material<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<LocalSolution> {
    let fail = |reason: String| Error::LocalSolve { element: usize::MAX, reason };
    if !(det2(f_n) > 0.0) {
        return Err(fail(format!("inverted kinematics (det F = {:.3e})", det2(f_n))));
    }
    let prev = xi_prev.to_array();
    let (trial, it_e) = newton_local(prev, &prev, f_n, f_prev, mat, Branch::Elastic, tol, max_iter).map_err(fail)?;
    let trial_state = LocalState::from_array(trial);
    let h = mat.hardening.eval(xi_prev.alpha);
    let f_trial = yield_function(&trial_state, mat);
    if f_trial <= YIELD_MARGIN * SQRT_2_3 * h {
        return Ok(LocalSolution { state: trial_state, branch: Branch::Elastic, iterations: it_e });
    }
    let start = radial_return_guess(&trial, xi_prev.alpha, mat);
    let (xi, it_p) =
        newton_local(start, &prev, f_n, f_prev, mat, Branch::Plastic, tol, max_iter).map_err(fail)?;
    Ok(LocalSolution {
        state: LocalState::from_array(xi),
        branch: Branch::Plastic,
        iterations: it_e + it_p,
    })
}
