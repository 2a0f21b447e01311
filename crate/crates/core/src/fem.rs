//! Plane-stress finite-element forward model.
//!
//! Linear triangles with one integration point carry one local state each.
//! The global Newton iteration works on the condensed tangent in which each
//! element's local state has been eliminated through its local residual.

use nalgebra::Matrix6;
use rayon::prelude::*;

use crate::ad::{seed_all, Dual, Scalar, SEEDS};
use crate::constitutive::{
    det2, lift_material, local_residual, local_residual_and_jacobian, piola_inplane, solve_local, Branch,
    LocalState, Material, LOCAL_MAX_ITER, LOCAL_TOL,
};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, BOTTOM, TOP};
use crate::sparse::{CscMatrix, LuFactor, LuSolver};

pub type Mat6 = Matrix6<f64>;

const NONE: usize = usize::MAX;

/// Load schedule: bottom edge clamped, top edge moved vertically by
/// `top_rate * t` with its horizontal motion suppressed.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    /// Step times including the initial time.
    pub times: Vec<f64>,
    pub top_rate: f64,
}

impl Schedule {
    pub fn new(times: Vec<f64>, top_rate: f64) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Domain("schedule needs at least one load step".into()));
        }
        if !times.iter().all(|t| t.is_finite()) || !top_rate.is_finite() {
            return Err(Error::Domain("schedule values must be finite".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("schedule times must be strictly increasing".into()));
        }
        Ok(Self { times, top_rate })
    }

    /// Eight steps up to t = 7 at 0.01 mm per unit time.
    pub fn nominal() -> Self {
        Self::new(vec![0.0, 0.1, 0.15, 0.2, 0.5, 1.0, 3.0, 5.0, 7.0], 0.01).unwrap()
    }

    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, n: usize) -> f64 {
        self.times[n] - self.times[n - 1]
    }

    pub fn total_time(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn top_displacement(&self, n: usize) -> f64 {
        self.top_rate * (self.times[n] - self.times[0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    /// Convergence when `|R_free|_inf <= rtol * max(1, force scale)`.
    pub rtol: f64,
    pub max_iter: usize,
    /// Keep iterating past the tolerance while the residual still drops by
    /// an order of magnitude, so stored states sit at the roundoff floor.
    pub polish: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, max_iter: 25, polish: true }
    }
}

#[derive(Clone, Copy, Debug)]
struct ElementGeom {
    area: f64,
    grads: [[f64; 2]; 3],
    dofs: [usize; 6],
}

/// Element states, residual and (optionally) condensed tangents at one
/// displacement iterate.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub states: Vec<LocalState>,
    pub branches: Vec<Branch>,
    /// Unconstrained residual over all DOFs.
    pub residual: Vec<f64>,
    pub tangents: Vec<Mat6>,
}

/// Converged load-step history.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub displacements: Vec<Vec<f64>>,
    pub loads: Vec<f64>,
    pub states: Vec<Vec<LocalState>>,
    pub branches: Vec<Vec<Branch>>,
    pub newton_iterations: Vec<usize>,
}

impl Trajectory {
    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, n: usize) -> f64 {
        self.times[n] - self.times[n - 1]
    }

    pub fn total_time(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn max_alpha(&self, n: usize) -> f64 {
        self.states[n].iter().fold(0.0f64, |m, s| m.max(s.alpha))
    }

    /// Binary record file: the magic `FVTRAJ01`, then three little-endian
    /// `u64` counts (records, DOFs, elements), then per record the time and
    /// load (`f64`), the Newton iteration count (`u64`), the displacements
    /// (`f64` each) and per element six `f64` state entries followed by a
    /// branch byte (0 elastic, 1 plastic).
    pub fn to_bytes(&self) -> Vec<u8> {
        let (nr, nd, ne) = (self.times.len(), self.displacements[0].len(), self.states[0].len());
        let mut b = Vec::with_capacity(32 + nr * (24 + 8 * nd + 49 * ne));
        b.extend_from_slice(TRAJ_MAGIC);
        for c in [nr, nd, ne] {
            b.extend_from_slice(&(c as u64).to_le_bytes());
        }
        for n in 0..nr {
            b.extend_from_slice(&self.times[n].to_le_bytes());
            b.extend_from_slice(&self.loads[n].to_le_bytes());
            b.extend_from_slice(&(self.newton_iterations[n] as u64).to_le_bytes());
            for v in &self.displacements[n] {
                b.extend_from_slice(&v.to_le_bytes());
            }
            for (st, br) in self.states[n].iter().zip(&self.branches[n]) {
                for v in st.to_array() {
                    b.extend_from_slice(&v.to_le_bytes());
                }
                b.push(matches!(br, Branch::Plastic) as u8);
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Parse(format!("trajectory file: {what}"));
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8).ok_or_else(|| bad("truncated header"))? != TRAJ_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut count = || r.u64().map(|v| v as usize).ok_or_else(|| bad("truncated header"));
        let (nr, nd, ne) = (count()?, count()?, count()?);
        let expect = 32 + nr * (24 + 8 * nd + 49 * ne);
        if nr == 0 || bytes.len() != expect {
            return Err(bad(&format!("expected {expect} bytes, found {}", bytes.len())));
        }
        let mut t = Trajectory {
            times: Vec::with_capacity(nr),
            displacements: Vec::with_capacity(nr),
            loads: Vec::with_capacity(nr),
            states: Vec::with_capacity(nr),
            branches: Vec::with_capacity(nr),
            newton_iterations: Vec::with_capacity(nr),
        };
        for _ in 0..nr {
            t.times.push(r.f64().unwrap());
            t.loads.push(r.f64().unwrap());
            t.newton_iterations.push(r.u64().unwrap() as usize);
            t.displacements.push((0..nd).map(|_| r.f64().unwrap()).collect());
            let mut st = Vec::with_capacity(ne);
            let mut br = Vec::with_capacity(ne);
            for _ in 0..ne {
                st.push(LocalState::from_array(std::array::from_fn(|_| r.f64().unwrap())));
                br.push(match r.take(1).unwrap()[0] {
                    0 => Branch::Elastic,
                    1 => Branch::Plastic,
                    _ => return Err(bad("invalid branch byte")),
                });
            }
            t.states.push(st);
            t.branches.push(br);
        }
        Ok(t)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// `step,time,F` rows.
    pub fn loads_csv(&self) -> String {
        let mut s = String::from("step,time,F\n");
        for n in 0..self.times.len() {
            s.push_str(&format!("{n},{},{}\n", self.times[n], self.loads[n]));
        }
        s
    }

    /// `step,node,ux,uy` rows.
    pub fn displacements_csv(&self) -> String {
        let mut s = String::from("step,node,ux,uy\n");
        for (n, u) in self.displacements.iter().enumerate() {
            for k in 0..u.len() / 2 {
                s.push_str(&format!("{n},{k},{},{}\n", u[2 * k], u[2 * k + 1]));
            }
        }
        s
    }
}

const TRAJ_MAGIC: &[u8; 8] = b"FVTRAJ01";

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|s| f64::from_le_bytes(s.try_into().unwrap()))
    }
}

/// Partial derivatives of one element's local and global residuals at a
/// converged point. Parameter blocks use the first `n_params` columns.
#[derive(Clone, Debug, Default)]
pub struct ElementJacobians {
    pub dc_dxi: Mat6,
    pub dc_dxi_prev: Mat6,
    pub dc_dp: Mat6,
    pub dc_du: Mat6,
    pub dc_du_prev: Mat6,
    pub dr_du: Mat6,
    pub dr_dxi: Mat6,
    pub dr_dp: Mat6,
}

#[inline]
pub fn deformation_gradient<T: Scalar>(grads: &[[f64; 2]; 3], u: &[T; 6]) -> [T; 4] {
    let mut f = [T::one(), T::zero(), T::zero(), T::one()];
    for a in 0..3 {
        for i in 0..2 {
            for j in 0..2 {
                f[2 * i + j] += u[2 * a + i] * grads[a][j];
            }
        }
    }
    f
}

fn to_mat<const N: usize>(rows: &[Dual<N>; 6]) -> Mat6 {
    let mut m = Mat6::zeros();
    for r in 0..6 {
        for k in 0..N.min(6) {
            m[(r, k)] = rows[r].d[k];
        }
    }
    m
}

fn inf_norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub struct FeModel {
    mesh: Mesh,
    thickness: f64,
    schedule: Schedule,
    geom: Vec<ElementGeom>,
    free_of: Vec<usize>,
    free_dofs: Vec<usize>,
    top_y: Vec<usize>,
    bottom_y: Vec<usize>,
    kff: CscMatrix,
    scatter: Vec<[usize; 36]>,
    lu: LuSolver,
    pub newton: NewtonOptions,
}

impl FeModel {
    pub fn new(mesh: Mesh, thickness: f64, schedule: Schedule) -> Result<Self> {
        mesh.validate()?;
        if !(thickness > 0.0) {
            return Err(Error::Domain(format!("thickness {thickness} must be positive")));
        }
        let geom: Vec<ElementGeom> = (0..mesh.num_elements())
            .map(|e| {
                let t = mesh.elements[e];
                ElementGeom {
                    area: mesh.element_area(e),
                    grads: mesh.shape_gradients(e),
                    dofs: [2 * t[0], 2 * t[0] + 1, 2 * t[1], 2 * t[1] + 1, 2 * t[2], 2 * t[2] + 1],
                }
            })
            .collect();
        let ndof = mesh.num_dofs();
        let mut fixed = vec![false; ndof];
        for &n in mesh.set(BOTTOM)?.iter().chain(mesh.set(TOP)?) {
            fixed[2 * n] = true;
            fixed[2 * n + 1] = true;
        }
        let mut free_of = vec![NONE; ndof];
        let mut free_dofs = Vec::new();
        for d in 0..ndof {
            if !fixed[d] {
                free_of[d] = free_dofs.len();
                free_dofs.push(d);
            }
        }
        let top_y = mesh.set(TOP)?.iter().map(|n| 2 * n + 1).collect();
        let bottom_y = mesh.set(BOTTOM)?.iter().map(|n| 2 * n + 1).collect();

        let kff = CscMatrix::from_pattern(
            free_dofs.len(),
            geom.iter().flat_map(|g| {
                let f: Vec<usize> = g.dofs.iter().map(|&d| free_of[d]).filter(|&d| d != NONE).collect();
                f.iter().flat_map(|&r| f.iter().map(move |&c| (r, c))).collect::<Vec<_>>()
            }),
        );
        let scatter = geom
            .iter()
            .map(|g| {
                let mut s = [NONE; 36];
                for i in 0..6 {
                    for j in 0..6 {
                        let (r, c) = (free_of[g.dofs[i]], free_of[g.dofs[j]]);
                        if r != NONE && c != NONE {
                            s[6 * i + j] = kff.position(r, c).expect("pattern covers element");
                        }
                    }
                }
                s
            })
            .collect();
        let lu = LuSolver::new(&kff)?;
        Ok(Self {
            mesh,
            thickness,
            schedule,
            geom,
            free_of,
            free_dofs,
            top_y,
            bottom_y,
            kff,
            scatter,
            lu,
            newton: NewtonOptions::default(),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_dofs()
    }

    pub fn num_elements(&self) -> usize {
        self.geom.len()
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    /// Free-DOF index of a global DOF, if it is unconstrained.
    pub fn free_index(&self, dof: usize) -> Option<usize> {
        let f = self.free_of[dof];
        (f != NONE).then_some(f)
    }

    /// Vertical DOFs of the top edge, where the reaction load is collected.
    pub fn top_y_dofs(&self) -> &[usize] {
        &self.top_y
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 6] {
        self.geom[e].dofs
    }

    pub fn element_area(&self, e: usize) -> f64 {
        self.geom[e].area
    }

    /// Full displacement vector with every constrained DOF at its step-`n`
    /// value and free DOFs taken from `u`.
    fn apply_dirichlet(&self, u: &mut [f64], n: usize) {
        for d in 0..u.len() {
            if self.free_of[d] == NONE {
                u[d] = 0.0;
            }
        }
        let v = self.schedule.top_displacement(n);
        for &d in &self.top_y {
            u[d] = v;
        }
    }

    pub fn gather(&self, e: usize, u: &[f64]) -> [f64; 6] {
        self.geom[e].dofs.map(|d| u[d])
    }

    pub fn element_deformation(&self, e: usize, u: &[f64]) -> [f64; 4] {
        deformation_gradient(&self.geom[e].grads, &self.gather(e, u))
    }

    /// Element internal force vector, ordered like [`Self::element_dofs`].
    pub fn element_residual<T: Scalar>(&self, e: usize, u_e: &[T; 6], xi: &[T; 6], mat: &Material<T>) -> [T; 6] {
        let g = &self.geom[e];
        let f = deformation_gradient(&g.grads, u_e);
        let p = piola_inplane(xi, &f, &mat.elastic);
        let w = g.area * self.thickness;
        let mut r = [T::zero(); 6];
        for a in 0..3 {
            for i in 0..2 {
                r[2 * a + i] = (p[2 * i] * g.grads[a][0] + p[2 * i + 1] * g.grads[a][1]) * w;
            }
        }
        r
    }

    /// Local residual of element `e` expressed through nodal displacements.
    #[allow(clippy::too_many_arguments)]
    pub fn element_local_residual<T: Scalar>(
        &self,
        e: usize,
        xi: &[T; 6],
        xi_prev: &[T; 6],
        u_e: &[T; 6],
        u_e_prev: &[T; 6],
        mat: &Material<T>,
        branch: Branch,
    ) -> [T; 6] {
        let g = &self.geom[e];
        let f = deformation_gradient(&g.grads, u_e);
        let fp = deformation_gradient(&g.grads, u_e_prev);
        local_residual(xi, xi_prev, &f, &fp, mat, branch)
    }

    /// Return mapping of one element for the displacement increment
    /// `u_prev -> u`.
    pub fn local_update(
        &self,
        e: usize,
        u: &[f64],
        u_prev: &[f64],
        xi_prev: &LocalState,
        mat: &Material<f64>,
    ) -> Result<(LocalState, Branch)> {
        let f = self.element_deformation(e, u);
        let det = det2(&f);
        if !(det > 0.0) {
            return Err(Error::Inverted { element: e, det });
        }
        let fp = self.element_deformation(e, u_prev);
        let sol = solve_local(xi_prev, &f, &fp, mat, LOCAL_TOL, LOCAL_MAX_ITER).map_err(|err| match err {
            Error::LocalSolve { reason, .. } => Error::LocalSolve { element: e, reason },
            other => other,
        })?;
        Ok((sol.state, sol.branch))
    }

    /// Condensed element tangent `dR/du + dR/dxi Z` with
    /// `Z = -(dC/dxi)^{-1} dC/du`.
    fn condensed_tangent(
        &self,
        e: usize,
        u_e: &[f64; 6],
        u_e_prev: &[f64; 6],
        xi: &[f64; 6],
        xi_prev: &[f64; 6],
        mat: &Material<f64>,
        branch: Branch,
    ) -> Result<Mat6> {
        let md = lift_material::<SEEDS>(mat);
        let c = |v: &[f64; 6]| v.map(Dual::<SEEDS>::constant);
        let g = &self.geom[e];
        let f = deformation_gradient(&g.grads, u_e);
        let fp = deformation_gradient(&g.grads, u_e_prev);
        let (_, dc_dxi) = local_residual_and_jacobian(xi, xi_prev, &f, &fp, mat, branch);
        let ud = seed_all(u_e);
        let dc_du = to_mat(&self.element_local_residual(e, &c(xi), &c(xi_prev), &ud, &c(u_e_prev), &md, branch));
        let dr_du = to_mat(&self.element_residual(e, &ud, &c(xi), &md));
        let dr_dxi = to_mat(&self.element_residual(e, &c(u_e), &seed_all(xi), &md));
        let z = dc_dxi
            .lu()
            .solve(&dc_du)
            .ok_or_else(|| Error::Singular(format!("local Jacobian of element {e}")))?;
        Ok(dr_du - dr_dxi * z)
    }

    /// Local updates, unconstrained residual and optionally the condensed
    /// tangents at displacement `u`.
    pub fn evaluate(
        &self,
        u: &[f64],
        u_prev: &[f64],
        xi_prev: &[LocalState],
        mat: &Material<f64>,
        tangent: bool,
    ) -> Result<Evaluation> {
        let per_element: Vec<Result<(LocalState, Branch, [f64; 6], Option<Mat6>)>> = (0..self.geom.len())
            .into_par_iter()
            .map(|e| {
                let (st, br) = self.local_update(e, u, u_prev, &xi_prev[e], mat)?;
                let u_e = self.gather(e, u);
                let xi = st.to_array();
                let r = self.element_residual(e, &u_e, &xi, mat);
                let k = if tangent {
                    let u_e_prev = self.gather(e, u_prev);
                    Some(self.condensed_tangent(e, &u_e, &u_e_prev, &xi, &xi_prev[e].to_array(), mat, br)?)
                } else {
                    None
                };
                Ok((st, br, r, k))
            })
            .collect();
        let mut ev = Evaluation {
            states: Vec::with_capacity(self.geom.len()),
            branches: Vec::with_capacity(self.geom.len()),
            residual: vec![0.0; self.num_dofs()],
            tangents: Vec::with_capacity(if tangent { self.geom.len() } else { 0 }),
        };
        for (e, item) in per_element.into_iter().enumerate() {
            let (st, br, r, k) = item?;
            for (i, &d) in self.geom[e].dofs.iter().enumerate() {
                ev.residual[d] += r[i];
            }
            ev.states.push(st);
            ev.branches.push(br);
            if let Some(k) = k {
                ev.tangents.push(k);
            }
        }
        Ok(ev)
    }

    /// Unconstrained global residual for given displacements and states
    /// (no local solves).
    pub fn global_residual(&self, u: &[f64], states: &[LocalState], mat: &Material<f64>) -> Vec<f64> {
        let mut r = vec![0.0; self.num_dofs()];
        for e in 0..self.geom.len() {
            let re = self.element_residual(e, &self.gather(e, u), &states[e].to_array(), mat);
            for (i, &d) in self.geom[e].dofs.iter().enumerate() {
                r[d] += re[i];
            }
        }
        r
    }

    /// Sum of vertical residual components over the top edge.
    pub fn reaction_load(&self, residual: &[f64]) -> f64 {
        self.top_y.iter().map(|&d| residual[d]).sum()
    }

    /// Sum of vertical residual components over the bottom edge.
    pub fn bottom_reaction(&self, residual: &[f64]) -> f64 {
        self.bottom_y.iter().map(|&d| residual[d]).sum()
    }

    /// Assembles the free-free block of the condensed tangent.
    pub fn assemble_kff(&self, tangents: &[Mat6]) -> CscMatrix {
        let mut k = self.kff.clone();
        self.assemble_into(&mut k, tangents);
        k
    }

    fn assemble_into(&self, k: &mut CscMatrix, tangents: &[Mat6]) {
        k.clear();
        for (e, ke) in tangents.iter().enumerate() {
            let s = &self.scatter[e];
            for i in 0..6 {
                for j in 0..6 {
                    let pos = s[6 * i + j];
                    if pos != NONE {
                        k.values[pos] += ke[(i, j)];
                    }
                }
            }
        }
    }

    pub fn factor(&self, k: &CscMatrix) -> Result<LuFactor> {
        self.lu.factor(k)
    }

    fn free_norm(&self, r: &[f64]) -> f64 {
        inf_norm(self.free_dofs.iter().map(|&d| r[d]))
    }

    /// Backtracking along `du` on the Euclidean norm of the free residual
    /// (sufficient decrease relative to `merit0`). Failed local updates count
    /// as infinite merit. Falls back to the best trial if no step satisfies
    /// the decrease condition.
    fn line_search(
        &self,
        base: &[f64],
        du: &[f64],
        merit0: f64,
        u_prev: &[f64],
        xi_prev: &[LocalState],
        mat: &Material<f64>,
    ) -> Result<(Vec<f64>, Evaluation, f64, f64)> {
        let mut s = 1.0;
        let mut best: Option<(Vec<f64>, Evaluation, f64, f64)> = None;
        let mut last_err = None;
        for _ in 0..12 {
            let mut u = base.to_vec();
            for (f, &d) in self.free_dofs.iter().enumerate() {
                u[d] += s * du[f];
            }
            match self.evaluate(&u, u_prev, xi_prev, mat, true) {
                Ok(ev) => {
                    let merit = self.free_dofs.iter().map(|&d| ev.residual[d].powi(2)).sum::<f64>().sqrt();
                    if merit.is_finite() {
                        let norm = self.free_norm(&ev.residual);
                        if merit <= (1.0 - 1e-4 * s) * merit0 || !merit0.is_finite() {
                            return Ok((u, ev, norm, merit));
                        }
                        if best.as_ref().is_none_or(|b| merit < b.3) {
                            best = Some((u, ev, norm, merit));
                        }
                    }
                }
                Err(err) => last_err = Some(err),
            }
            s *= 0.5;
        }
        best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Evaluation("line search produced no finite residual".into())))
    }

    /// Solves load step `n` starting from the converged step `n - 1`. With
    /// the step `n - 2` displacements available the initial guess
    /// extrapolates the previous increment; otherwise it comes from a
    /// linearization about step `n - 1`.
    pub fn solve_step(
        &self,
        n: usize,
        u_prev: &[f64],
        u_prev2: Option<&[f64]>,
        xi_prev: &[LocalState],
        mat: &Material<f64>,
    ) -> Result<(Vec<f64>, Evaluation, usize)> {
        let opts = self.newton;
        let nf = self.free_dofs.len();
        let mut k = self.kff.clone();
        let fail = |iterations: usize, history: Vec<f64>| Error::GlobalSolve { step: n, iterations, history };

        let mut target = u_prev.to_vec();
        self.apply_dirichlet(&mut target, n);
        let (mut base, mut du) = match u_prev2 {
            // extrapolate the previous increment; Newton starts right there
            Some(u2) if n >= 2 => {
                let ratio = self.schedule.dt(n) / self.schedule.dt(n - 1);
                let du: Vec<f64> = self.free_dofs.iter().map(|&d| ratio * (u_prev[d] - u2[d])).collect();
                (target, du)
            }
            // linearize about the previous state and move the constrained
            // DOFs to their new values
            _ => {
                let ev0 = self.evaluate(u_prev, u_prev, xi_prev, mat, true)?;
                let mut rhs: Vec<f64> = self.free_dofs.iter().map(|&d| -ev0.residual[d]).collect();
                for (e, ke) in ev0.tangents.iter().enumerate() {
                    let dofs = self.geom[e].dofs;
                    for i in 0..6 {
                        let fi = self.free_of[dofs[i]];
                        if fi == NONE {
                            continue;
                        }
                        for j in 0..6 {
                            if self.free_of[dofs[j]] == NONE {
                                rhs[fi] -= ke[(i, j)] * (target[dofs[j]] - u_prev[dofs[j]]);
                            }
                        }
                    }
                }
                self.assemble_into(&mut k, &ev0.tangents);
                self.lu.factor(&k)?.solve(&mut rhs)?;
                (target, rhs)
            }
        };

        let mut history = Vec::new();
        let mut best: Option<(Vec<f64>, Evaluation, f64)> = None;
        let mut prev_norm = f64::INFINITY;
        let mut merit0 = f64::INFINITY;
        let mut polished = 0;
        for it in 0..opts.max_iter {
            let (u, ev, norm, merit) = self.line_search(&base, &du, merit0, u_prev, xi_prev, mat).map_err(|err| {
                history.push(f64::NAN);
                match err {
                    Error::LocalSolve { .. } | Error::Inverted { .. } => fail(it + 1, history.clone()),
                    other => other,
                }
            })?;
            history.push(norm);
            let scale = inf_norm(ev.residual.iter().copied()).max(1e-300);
            let tol = opts.rtol * scale.max(1.0);
            let improved = best.as_ref().is_none_or(|b| norm < b.2);
            let ratio = norm / prev_norm;
            if norm <= tol {
                let done = !opts.polish || norm <= 1e-12 * scale.max(1.0) || !(ratio < 0.1) || polished >= 1;
                if done {
                    if improved {
                        return Ok((u, ev, it + 1));
                    }
                    let (u, ev, _) = best.unwrap();
                    return Ok((u, ev, it + 1));
                }
                polished += 1;
            }

            let mut rhs: Vec<f64> = self.free_dofs.iter().map(|&d| -ev.residual[d]).collect();
            self.assemble_into(&mut k, &ev.tangents);
            if self.lu.factor(&k).and_then(|lu| lu.solve(&mut rhs)).is_err() {
                return Err(fail(it + 1, history));
            }
            debug_assert_eq!(rhs.len(), nf);
            base = u.clone();
            du = rhs;
            prev_norm = norm;
            merit0 = merit;
            if improved {
                best = Some((u, ev, norm));
            }
        }
        // accept a stalled iteration that already meets the tolerance
        if let Some((u, ev, norm)) = best {
            let scale = inf_norm(ev.residual.iter().copied()).max(1.0);
            if norm <= opts.rtol * scale {
                return Ok((u, ev, opts.max_iter));
            }
        }
        Err(fail(opts.max_iter, history))
    }

    /// Runs the whole schedule from the undeformed virgin state.
    pub fn solve(&self, mat: &Material<f64>) -> Result<Trajectory> {
        mat.validate()?;
        let ne = self.geom.len();
        let mut traj = Trajectory {
            times: self.schedule.times.clone(),
            displacements: vec![vec![0.0; self.num_dofs()]],
            loads: vec![0.0],
            states: vec![vec![LocalState::VIRGIN; ne]],
            branches: vec![vec![Branch::Elastic; ne]],
            newton_iterations: vec![0],
        };
        for n in 1..=self.schedule.num_steps() {
            let u2 = (n >= 2).then(|| traj.displacements[n - 2].as_slice());
            let (u, ev, its) = self.solve_step(n, &traj.displacements[n - 1], u2, &traj.states[n - 1], mat)?;
            traj.loads.push(self.reaction_load(&ev.residual));
            traj.displacements.push(u);
            traj.states.push(ev.states);
            traj.branches.push(ev.branches);
            traj.newton_iterations.push(its);
        }
        Ok(traj)
    }

    /// All residual partials of element `e` at step `n` of a trajectory-like
    /// history. `mat_p` must carry the parameter seeds. Displacement blocks
    /// are skipped unless `with_displacement` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn element_jacobians(
        &self,
        e: usize,
        u: &[f64],
        u_prev: &[f64],
        xi: &LocalState,
        xi_prev: &LocalState,
        branch: Branch,
        mat_p: &Material<Dual<SEEDS>>,
        with_displacement: bool,
    ) -> ElementJacobians {
        let mat = mat_p_values(mat_p);
        let md = lift_material::<SEEDS>(&mat);
        let c = |v: &[f64; 6]| v.map(Dual::<SEEDS>::constant);
        let (u_e, u_ep) = (self.gather(e, u), self.gather(e, u_prev));
        let (x, xp) = (xi.to_array(), xi_prev.to_array());
        let local = |xi: &[Dual<SEEDS>; 6], xip: &[Dual<SEEDS>; 6], ue: &[Dual<SEEDS>; 6], uep: &[Dual<SEEDS>; 6], m: &Material<Dual<SEEDS>>| {
            to_mat(&self.element_local_residual(e, xi, xip, ue, uep, m, branch))
        };
        let mut j = ElementJacobians {
            dc_dxi: local(&seed_all(&x), &c(&xp), &c(&u_e), &c(&u_ep), &md),
            dc_dxi_prev: local(&c(&x), &seed_all(&xp), &c(&u_e), &c(&u_ep), &md),
            dc_dp: local(&c(&x), &c(&xp), &c(&u_e), &c(&u_ep), mat_p),
            dr_dxi: to_mat(&self.element_residual(e, &c(&u_e), &seed_all(&x), &md)),
            dr_dp: to_mat(&self.element_residual(e, &c(&u_e), &c(&x), mat_p)),
            ..Default::default()
        };
        if with_displacement {
            j.dc_du = local(&c(&x), &c(&xp), &seed_all(&u_e), &c(&u_ep), &md);
            j.dc_du_prev = local(&c(&x), &c(&xp), &c(&u_e), &seed_all(&u_ep), &md);
            j.dr_du = to_mat(&self.element_residual(e, &seed_all(&u_e), &c(&x), &md));
        }
        j
    }
}

/// Strips derivative information from a seeded material.
pub fn mat_p_values(m: &Material<Dual<SEEDS>>) -> Material<f64> {
    Material {
        elastic: crate::constitutive::Elastic { e: m.elastic.e.v, nu: m.elastic.nu.v },
        hardening: m.hardening.map(|v| v.v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{Elastic, Hardening};
    use crate::mesh::{build_notched_plate, NotchedPlateSpec};

    fn steel() -> Material<f64> {
        Material {
            elastic: Elastic { e: 200_000.0, nu: 0.3 },
            hardening: Hardening::Voce { y: 330.0, s: 1000.0, d: 10.0 },
        }
    }

    fn small_model() -> FeModel {
        let mesh = build_notched_plate(&NotchedPlateSpec::default().with_edge_length(0.1)).unwrap();
        FeModel::new(mesh, 0.02, Schedule::nominal()).unwrap()
    }

    #[test]
    fn virgin_state_has_zero_residual() {
        let m = small_model();
        let u = vec![0.0; m.num_dofs()];
        let r = m.global_residual(&u, &vec![LocalState::VIRGIN; m.num_elements()], &steel());
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::new(vec![0.0, 1.0, 1.0], 0.01).is_err());
        assert!(Schedule::new(vec![0.0], 0.01).is_err());
        let s = Schedule::nominal();
        assert_eq!(s.num_steps(), 8);
        assert_eq!(s.total_time(), 7.0);
        assert!((s.top_displacement(1) - 0.001).abs() < 1e-18);
    }

    #[test]
    fn condensed_tangent_matches_finite_differences_of_condensed_residual() {
        let m = small_model();
        let mat = steel();
        let e = 3;
        let u_prev = [0.0; 6];
        let mut u_e = [0.0; 6];
        // a plastic increment
        u_e[1] = 0.0;
        u_e[3] = 0.001;
        u_e[5] = 0.004;
        let g = m.geom[e];
        let xi_prev = LocalState::VIRGIN;
        let resid = |ue: &[f64; 6]| {
            let f = deformation_gradient(&g.grads, ue);
            let sol = solve_local(&xi_prev, &f, &[1.0, 0.0, 0.0, 1.0], &mat, 1e-14, 50).unwrap();
            (m.element_residual(e, ue, &sol.state.to_array(), &mat), sol)
        };
        let (_, sol) = resid(&u_e);
        let k = m
            .condensed_tangent(e, &u_e, &u_prev, &sol.state.to_array(), &xi_prev.to_array(), &mat, sol.branch)
            .unwrap();
        for c in 0..6 {
            let h = 1e-8;
            let mut up = u_e;
            up[c] += h;
            let mut um = u_e;
            um[c] -= h;
            let (rp, sp) = resid(&up);
            let (rm, sm) = resid(&um);
            assert_eq!(sp.branch, sol.branch);
            assert_eq!(sm.branch, sol.branch);
            for r in 0..6 {
                let fd = (rp[r] - rm[r]) / (2.0 * h);
                let scale = k.abs().max();
                assert!((fd - k[(r, c)]).abs() < 1e-5 * scale, "({r},{c}) fd {fd} ad {}", k[(r, c)]);
            }
        }
    }
}
