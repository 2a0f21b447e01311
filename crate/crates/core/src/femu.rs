//! Finite element model updating.
//!
//! The objective compares predicted and measured nodal displacements through
//! the mass-matrix inner product and predicted and measured axial loads:
//!
//! `J = 1/(2TA) sum_n dt_n |u_n - u~_n|_M^2 + alpha/(2T) sum_n dt_n (F_n - F~_n)^2`
//!
//! Step 0 is excluded. The gradient comes from a backward adjoint sweep over
//! the load steps in which the local states are eliminated element by
//! element, so its cost does not grow with the number of parameters beyond
//! small dense products.

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;

use crate::constitutive::Material;
use crate::error::{Error, Result};
use crate::fem::{ElementJacobians, FeModel, Trajectory};
use crate::mesh::assemble_mass_matrix;
use crate::params::ParamSpace;
use crate::sparse::CscMatrix;
use crate::synth::MeasurementSet;

/// Objective value split into its two terms; `load` already carries the
/// balance factor.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FemuValue {
    pub total: f64,
    pub disp: f64,
    pub load: f64,
}

/// `alpha * J_disp / J_load`, or `alpha` unchanged when either term
/// vanishes (a zero factor would drop the load term entirely).
pub fn tune_balance_factor(alpha: f64, j_disp: f64, j_load: f64) -> f64 {
    if j_load > 0.0 && j_disp > 0.0 && j_disp.is_finite() && j_load.is_finite() {
        alpha * j_disp / j_load
    } else {
        alpha
    }
}

pub struct FemuProblem<'a> {
    model: &'a FeModel,
    data: &'a MeasurementSet,
    space: ParamSpace,
    mass: CscMatrix,
    area: f64,
    pub alpha: f64,
}

/// Per-element quantities of one step needed twice in the backward sweep.
struct ElementAdjoint {
    j: ElementJacobians,
}

impl<'a> FemuProblem<'a> {
    pub fn new(model: &'a FeModel, data: &'a MeasurementSet, space: ParamSpace, alpha: f64) -> Result<Self> {
        data.check_against(model.mesh(), &model.schedule().times)?;
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("balance factor {alpha} must be positive")));
        }
        let mass = assemble_mass_matrix(model.mesh());
        let area = model.mesh().total_area();
        Ok(Self { model, data, space, mass, area, alpha })
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn model(&self) -> &FeModel {
        self.model
    }

    pub fn material(&self, p: &[f64]) -> Material<f64> {
        self.space.material(p)
    }

    fn split(u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (u.iter().step_by(2).copied().collect(), u.iter().skip(1).step_by(2).copied().collect())
    }

    fn mismatch(&self, traj: &Trajectory, n: usize) -> (Vec<f64>, Vec<f64>) {
        let d: Vec<f64> = traj.displacements[n].iter().zip(&self.data.displacements[n]).map(|(a, b)| a - b).collect();
        Self::split(&d)
    }

    /// Objective terms for a solved trajectory.
    pub fn value_of(&self, traj: &Trajectory) -> FemuValue {
        let t = traj.total_time();
        let mut disp = 0.0;
        let mut load = 0.0;
        for n in 1..=traj.num_steps() {
            let dt = traj.dt(n);
            let (dx, dy) = self.mismatch(traj, n);
            disp += dt * (self.mass.quad_form(&dx) + self.mass.quad_form(&dy));
            load += dt * (traj.loads[n] - self.data.loads[n]).powi(2);
        }
        let disp = disp / (2.0 * t * self.area);
        let load = self.alpha * load / (2.0 * t);
        FemuValue { total: disp + load, disp, load }
    }

    pub fn objective(&self, p: &[f64]) -> Result<FemuValue> {
        let traj = self.model.solve(&self.material(p))?;
        Ok(self.value_of(&traj))
    }

    /// Objective and adjoint gradient (one forward solve plus one backward
    /// sweep).
    pub fn objective_and_gradient(&self, p: &[f64]) -> Result<(FemuValue, Vec<f64>)> {
        let traj = self.model.solve(&self.material(p))?;
        let g = self.adjoint_gradient(&traj, p)?;
        Ok((self.value_of(&traj), g))
    }

    /// Adjoint gradient for a trajectory solved at `p`.
    pub fn adjoint_gradient(&self, traj: &Trajectory, p: &[f64]) -> Result<Vec<f64>> {
        let model = self.model;
        let np = self.space.len();
        let ne = model.num_elements();
        let ndof = model.num_dofs();
        let mat_p = self.space.seeded(p);
        let t = traj.total_time();
        let top = model.top_y_dofs();
        let mut is_top = vec![false; ndof];
        top.iter().for_each(|&d| is_top[d] = true);

        let mut grad = vec![0.0; np];
        // carried from step n + 1: (dC^{n+1}/dxi^n)^T psi^{n+1} per element
        // and (dC^{n+1}/du^n)^T psi^{n+1} scattered to DOFs
        let mut a_next = vec![Vector6::<f64>::zeros(); ne];
        let mut b_next = vec![0.0; ndof];

        for n in (1..=traj.num_steps()).rev() {
            let dt = traj.dt(n);
            let c_n = self.alpha / t * dt * (traj.loads[n] - self.data.loads[n]);
            let (u, u_prev) = (&traj.displacements[n], &traj.displacements[n - 1]);

            let elems: Vec<Result<(ElementAdjoint, Matrix6<f64>, [f64; 6])>> = (0..ne)
                .into_par_iter()
                .map(|e| {
                    let j = model.element_jacobians(
                        e,
                        u,
                        u_prev,
                        &traj.states[n][e],
                        &traj.states[n - 1][e],
                        traj.branches[n][e],
                        &mat_p,
                        true,
                    );
                    let z = j
                        .dc_dxi
                        .lu()
                        .solve(&j.dc_du)
                        .ok_or_else(|| Error::Singular(format!("local Jacobian of element {e} at step {n}")))?;
                    let z = -z;
                    let k = j.dr_du + j.dr_dxi * z;
                    // element part of c K^T w + Z^T a
                    let dofs = model.element_dofs(e);
                    let mut w = Vector6::zeros();
                    for i in 0..6 {
                        if is_top[dofs[i]] {
                            w[i] = 1.0;
                        }
                    }
                    let contrib = k.transpose() * w * c_n + z.transpose() * a_next[e];
                    Ok((ElementAdjoint { j }, k, contrib.into()))
                })
                .collect();

            let mut store = Vec::with_capacity(ne);
            let mut tangents = Vec::with_capacity(ne);
            let mut rhs_full = b_next.clone();
            for (e, item) in elems.into_iter().enumerate() {
                let (ea, k, contrib) = item?;
                for (i, &d) in model.element_dofs(e).iter().enumerate() {
                    rhs_full[d] += contrib[i];
                }
                store.push(ea);
                tangents.push(k);
            }
            // displacement mismatch gradient
            let (dx, dy) = self.mismatch(traj, n);
            let (mx, my) = (self.mass.mul_vec(&dx), self.mass.mul_vec(&dy));
            let s = dt / (t * self.area);
            for k in 0..mx.len() {
                rhs_full[2 * k] += s * mx[k];
                rhs_full[2 * k + 1] += s * my[k];
            }

            let mut lam: Vec<f64> = model.free_dofs().iter().map(|&d| -rhs_full[d]).collect();
            let kff = model.assemble_kff(&tangents);
            model.factor(&kff)?.solve_transpose(&mut lam)?;
            let mut mu = vec![0.0; ndof];
            for (f, &d) in model.free_dofs().iter().enumerate() {
                mu[d] = lam[f];
            }
            for &d in top {
                mu[d] = c_n;
            }

            let per: Vec<Result<(Vec<f64>, Vector6<f64>, [f64; 6])>> = store
                .par_iter()
                .enumerate()
                .map(|(e, ea)| {
                    let mu_e = Vector6::from(model.element_dofs(e).map(|d| mu[d]));
                    let rhs = -(ea.j.dr_dxi.transpose() * mu_e + a_next[e]);
                    let psi = ea
                        .j
                        .dc_dxi
                        .transpose()
                        .lu()
                        .solve(&rhs)
                        .ok_or_else(|| Error::Singular(format!("adjoint local system of element {e} at step {n}")))?;
                    let g: Vec<f64> = (0..np)
                        .map(|k| mu_e.dot(&ea.j.dr_dp.column(k)) + psi.dot(&ea.j.dc_dp.column(k)))
                        .collect();
                    let a = ea.j.dc_dxi_prev.transpose() * psi;
                    let b = ea.j.dc_du_prev.transpose() * psi;
                    Ok((g, a, b.into()))
                })
                .collect();
            b_next.iter_mut().for_each(|v| *v = 0.0);
            for (e, item) in per.into_iter().enumerate() {
                let (g, a, b) = item?;
                grad.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                a_next[e] = a;
                for (i, &d) in model.element_dofs(e).iter().enumerate() {
                    b_next[d] += b[i];
                }
            }
        }
        Ok(grad)
    }

    /// Central differences with steps `rel_step * |p_i|`; returns the
    /// gradient and the number of forward solves spent.
    pub fn gradient_fd(&self, p: &[f64], rel_step: f64) -> Result<(Vec<f64>, usize)> {
        let mut g = vec![0.0; p.len()];
        for i in 0..p.len() {
            let h = rel_step * p[i].abs().max(f64::MIN_POSITIVE);
            let mut pp = p.to_vec();
            pp[i] += h;
            let fp = self.objective(&pp)?.total;
            pp[i] = p[i] - h;
            let fm = self.objective(&pp)?.total;
            g[i] = (fp - fm) / (2.0 * h);
        }
        Ok((g, 2 * p.len()))
    }
}
