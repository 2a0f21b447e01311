//! Virtual fields method.
//!
//! Local states are driven directly by the measured displacements (no
//! global solve). For each virtual field `v` and step `n` the internal
//! virtual work `W_n = v . R_n(u~_n, xi_n)` is compared with the measured
//! load, which stands in for the external virtual work because `v_y = 1` on
//! the loaded edge and the virtual field vanishes on the clamped one:
//!
//! `V = 1/(2T) sum_n dt_n (W_n - F~_n)^2`,  `Vbar_n = (W_n - F~_n) dt_n / T`
//!
//! so that `dV/dp = sum_n Vbar_n dW_n/dp`. The gradient is available by
//! forward propagation of the local-state sensitivities or by a backward
//! adjoint recursion per element; both use the same exact AD partials.

use std::f64::consts::PI;

use nalgebra::{Matrix6xX, Vector6};
use rayon::prelude::*;

use crate::constitutive::{Branch, LocalState};
use crate::error::{Error, Result};
use crate::fem::FeModel;
use crate::mesh::{Mesh, BOTTOM, TOP};
use crate::params::ParamSpace;
use crate::synth::MeasurementSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldGenerator {
    /// `v_x = cos(pi (eta - 1/2))`, `v_y = eta^2`.
    CosQuadratic,
    /// `v_x = cos(pi (eta - 1/2))`, `v_y = eta`.
    CosLinear,
    Custom,
}

impl FieldGenerator {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cos-quadratic" => Ok(Self::CosQuadratic),
            "cos-linear" => Ok(Self::CosLinear),
            "custom" => Ok(Self::Custom),
            other => Err(Error::Domain(format!("unknown virtual field generator '{other}'"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CosQuadratic => "cos-quadratic",
            Self::CosLinear => "cos-linear",
            Self::Custom => "custom",
        }
    }
}

/// Nodal virtual displacements, interleaved like the DOF vector.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualField {
    pub coeffs: Vec<f64>,
    pub generator: FieldGenerator,
}

impl VirtualField {
    /// Samples an analytic field at the nodes with `eta = (y - y_min) / H`.
    /// Top and bottom nodes get the admissible values exactly.
    pub fn generate(mesh: &Mesh, generator: FieldGenerator) -> Result<Self> {
        let [_, y0, _, y1] = mesh.bounds();
        let h = y1 - y0;
        let mut coeffs = Vec::with_capacity(mesh.num_dofs());
        for p in &mesh.nodes {
            let eta = (p[1] - y0) / h;
            let vy = match generator {
                FieldGenerator::CosQuadratic => eta * eta,
                FieldGenerator::CosLinear => eta,
                FieldGenerator::Custom => {
                    return Err(Error::Domain("custom virtual fields are built from coefficients".into()))
                }
            };
            coeffs.push((PI * (eta - 0.5)).cos());
            coeffs.push(vy);
        }
        apply_mask(mesh, &mut coeffs)?;
        Ok(Self { coeffs, generator })
    }

    /// A user-supplied field; it must already satisfy the boundary values.
    pub fn custom(mesh: &Mesh, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != mesh.num_dofs() {
            return Err(Error::Domain(format!("virtual field has {} entries, mesh has {} DOFs", coeffs.len(), mesh.num_dofs())));
        }
        let mut masked = coeffs.clone();
        apply_mask(mesh, &mut masked)?;
        if masked != coeffs {
            return Err(Error::Domain(
                "virtual field must vanish on the bottom edge, have v_x = 0 and v_y = 1 on the top edge".into(),
            ));
        }
        Ok(Self { coeffs, generator: FieldGenerator::Custom })
    }

    pub fn element(&self, dofs: &[usize; 6]) -> Vector6<f64> {
        Vector6::from(dofs.map(|d| self.coeffs[d]))
    }
}

fn apply_mask(mesh: &Mesh, v: &mut [f64]) -> Result<()> {
    for &n in mesh.set(BOTTOM)? {
        v[2 * n] = 0.0;
        v[2 * n + 1] = 0.0;
    }
    for &n in mesh.set(TOP)? {
        v[2 * n] = 0.0;
        v[2 * n + 1] = 1.0;
    }
    Ok(())
}

/// Internal virtual work and scaled mismatch, indexed `[field][step]`
/// with step 0 included (and zero).
#[derive(Clone, Debug, PartialEq)]
pub struct VfmState {
    pub internal_work: Vec<Vec<f64>>,
    pub scaled_mismatch: Vec<Vec<f64>>,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VfmGradient {
    Forward,
    Adjoint,
}

/// Local-state history of one element under the measured kinematics.
struct ElementHistory {
    states: Vec<LocalState>,
    branches: Vec<Branch>,
    /// `[field][step]` contributions to the internal virtual work.
    work: Vec<Vec<f64>>,
    /// `[field][step][param]` contributions to its derivative (forward mode).
    dwork: Vec<Vec<Vec<f64>>>,
}

pub struct VfmProblem<'a> {
    model: &'a FeModel,
    data: &'a MeasurementSet,
    fields: Vec<VirtualField>,
    space: ParamSpace,
}

impl<'a> VfmProblem<'a> {
    pub fn new(model: &'a FeModel, data: &'a MeasurementSet, fields: Vec<VirtualField>, space: ParamSpace) -> Result<Self> {
        data.check_against(model.mesh(), &model.schedule().times)?;
        if fields.is_empty() {
            return Err(Error::Domain("at least one virtual field is required".into()));
        }
        if fields.iter().any(|f| f.coeffs.len() != model.num_dofs()) {
            return Err(Error::Domain("virtual field size does not match the mesh".into()));
        }
        Ok(Self { model, data, fields, space })
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn fields(&self) -> &[VirtualField] {
        &self.fields
    }

    fn element_history(&self, e: usize, p: &[f64], forward: bool) -> Result<ElementHistory> {
        let model = self.model;
        let mat = self.space.material::<f64>(p);
        let mat_p = self.space.seeded(p);
        let np = self.space.len();
        let steps = self.data.num_steps();
        let nf = self.fields.len();
        let dofs = model.element_dofs(e);
        let vs: Vec<Vector6<f64>> = self.fields.iter().map(|f| f.element(&dofs)).collect();
        let mut h = ElementHistory {
            states: vec![LocalState::VIRGIN],
            branches: vec![Branch::Elastic],
            work: vec![vec![0.0; steps + 1]; nf],
            dwork: if forward { vec![vec![vec![0.0; np]; steps + 1]; nf] } else { Vec::new() },
        };
        let mut dxi = Matrix6xX::<f64>::zeros(np);
        for n in 1..=steps {
            let (u, u_prev) = (&self.data.displacements[n], &self.data.displacements[n - 1]);
            let (xi, br) = model.local_update(e, u, u_prev, &h.states[n - 1], &mat)?;
            let r = Vector6::from(model.element_residual(e, &model.gather(e, u), &xi.to_array(), &mat));
            for k in 0..nf {
                h.work[k][n] = vs[k].dot(&r);
            }
            if forward {
                let j = model.element_jacobians(e, u, u_prev, &xi, &h.states[n - 1], br, &mat_p, false);
                let rhs = -(j.dc_dp.columns(0, np) + j.dc_dxi_prev * &dxi);
                dxi = j
                    .dc_dxi
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Singular(format!("local Jacobian of element {e} at step {n}")))?;
                let dr = j.dr_dp.columns(0, np) + j.dr_dxi * &dxi;
                for k in 0..nf {
                    for c in 0..np {
                        h.dwork[k][n][c] = vs[k].dot(&dr.column(c));
                    }
                }
            }
            h.states.push(xi);
            h.branches.push(br);
        }
        Ok(h)
    }

    fn histories(&self, p: &[f64], forward: bool) -> Result<Vec<ElementHistory>> {
        (0..self.model.num_elements()).into_par_iter().map(|e| self.element_history(e, p, forward)).collect()
    }

    fn reduce_state(&self, hist: &[ElementHistory]) -> VfmState {
        let steps = self.data.num_steps();
        let t = self.data.total_time();
        let mut internal_work = vec![vec![0.0; steps + 1]; self.fields.len()];
        for h in hist {
            for (acc, w) in internal_work.iter_mut().zip(&h.work) {
                acc.iter_mut().zip(w).for_each(|(a, b)| *a += b);
            }
        }
        let mut value = 0.0;
        let scaled_mismatch = internal_work
            .iter()
            .map(|w| {
                let mut vb = vec![0.0; steps + 1];
                for n in 1..=steps {
                    let dt = self.data.dt(n);
                    let d = w[n] - self.data.loads[n];
                    value += d * d * dt / (2.0 * t);
                    vb[n] = d * dt / t;
                }
                vb
            })
            .collect();
        VfmState { internal_work, scaled_mismatch, value }
    }

    pub fn state(&self, p: &[f64]) -> Result<VfmState> {
        Ok(self.reduce_state(&self.histories(p, false)?))
    }

    pub fn objective(&self, p: &[f64]) -> Result<f64> {
        Ok(self.state(p)?.value)
    }

    pub fn objective_and_gradient(&self, p: &[f64], method: VfmGradient) -> Result<(f64, Vec<f64>)> {
        match method {
            VfmGradient::Forward => self.gradient_forward(p),
            VfmGradient::Adjoint => self.gradient_adjoint(p),
        }
    }

    /// Gradient by forward propagation of `dxi/dp`, computed in the same
    /// sweep as the local solves.
    pub fn gradient_forward(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let hist = self.histories(p, true)?;
        let st = self.reduce_state(&hist);
        let np = self.space.len();
        let mut g = vec![0.0; np];
        for h in &hist {
            for (k, vb) in st.scaled_mismatch.iter().enumerate() {
                for n in 1..vb.len() {
                    for c in 0..np {
                        g[c] += vb[n] * h.dwork[k][n][c];
                    }
                }
            }
        }
        Ok((st.value, g))
    }

    /// Gradient by a backward adjoint recursion per element over the stored
    /// local-state history.
    pub fn gradient_adjoint(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let hist = self.histories(p, false)?;
        let st = self.reduce_state(&hist);
        let np = self.space.len();
        let mat_p = self.space.seeded(p);
        let model = self.model;
        let steps = self.data.num_steps();
        let per: Vec<Result<Vec<f64>>> = hist
            .par_iter()
            .enumerate()
            .map(|(e, h)| {
                let dofs = model.element_dofs(e);
                let vs: Vec<Vector6<f64>> = self.fields.iter().map(|f| f.element(&dofs)).collect();
                let mut g = vec![0.0; np];
                let mut a = Vector6::<f64>::zeros();
                for n in (1..=steps).rev() {
                    let (u, u_prev) = (&self.data.displacements[n], &self.data.displacements[n - 1]);
                    let j = model.element_jacobians(e, u, u_prev, &h.states[n], &h.states[n - 1], h.branches[n], &mat_p, false);
                    let mut w = Vector6::<f64>::zeros();
                    for (k, v) in vs.iter().enumerate() {
                        w += v * st.scaled_mismatch[k][n];
                    }
                    let rhs = -(j.dr_dxi.transpose() * w + a);
                    let phi = j
                        .dc_dxi
                        .transpose()
                        .lu()
                        .solve(&rhs)
                        .ok_or_else(|| Error::Singular(format!("adjoint local system of element {e} at step {n}")))?;
                    for c in 0..np {
                        g[c] += w.dot(&j.dr_dp.column(c)) + phi.dot(&j.dc_dp.column(c));
                    }
                    a = j.dc_dxi_prev.transpose() * phi;
                }
                Ok(g)
            })
            .collect();
        let mut g = vec![0.0; np];
        for item in per {
            g.iter_mut().zip(&item?).for_each(|(x, y)| *x += y);
        }
        Ok((st.value, g))
    }

    /// Central differences with steps `rel_step * |p_i|`.
    pub fn gradient_fd(&self, p: &[f64], rel_step: f64) -> Result<Vec<f64>> {
        let mut g = vec![0.0; p.len()];
        for i in 0..p.len() {
            let h = rel_step * p[i].abs().max(f64::MIN_POSITIVE);
            let mut pp = p.to_vec();
            pp[i] += h;
            let fp = self.objective(&pp)?;
            pp[i] = p[i] - h;
            let fm = self.objective(&pp)?;
            g[i] = (fp - fm) / (2.0 * h);
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_notched_plate, NotchedPlateSpec};

    #[test]
    fn analytic_fields_respect_boundary_values() {
        let mesh = build_notched_plate(&NotchedPlateSpec::default().with_edge_length(0.1)).unwrap();
        for g in [FieldGenerator::CosQuadratic, FieldGenerator::CosLinear] {
            let v = VirtualField::generate(&mesh, g).unwrap();
            for &n in mesh.set(TOP).unwrap() {
                assert_eq!((v.coeffs[2 * n], v.coeffs[2 * n + 1]), (0.0, 1.0));
            }
            for &n in mesh.set(BOTTOM).unwrap() {
                assert_eq!((v.coeffs[2 * n], v.coeffs[2 * n + 1]), (0.0, 0.0));
            }
            for (k, p) in mesh.nodes.iter().enumerate() {
                if (p[1] - 0.5).abs() < 1e-12 {
                    assert!((v.coeffs[2 * k] - 1.0).abs() < 1e-15);
                }
            }
            assert!(VirtualField::custom(&mesh, v.coeffs.clone()).is_ok());
        }
    }

    #[test]
    fn custom_field_must_be_admissible() {
        let mesh = build_notched_plate(&NotchedPlateSpec::default().with_edge_length(0.1)).unwrap();
        let mut v = VirtualField::generate(&mesh, FieldGenerator::CosLinear).unwrap().coeffs;
        let t = mesh.set(TOP).unwrap()[0];
        v[2 * t] = 0.1;
        assert!(VirtualField::custom(&mesh, v).is_err());
        assert!(VirtualField::custom(&mesh, vec![0.0; 4]).is_err());
    }
}
