//! Mapping between the calibration vector and a full material description.
//!
//! A material is flattened as `[E, nu, hardening coefficients...]` with the
//! hardening coefficients in the variant's declaration order. A
//! [`ParamSpace`] picks which of those entries are free; everything else is
//! held at its base value.

use crate::ad::{Dual, Scalar, SEEDS};
use crate::constitutive::{Elastic, Hardening, HardeningLaw, Material};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HardeningKind {
    Voce,
    LinearVoce,
    Power,
}

impl HardeningKind {
    pub fn coefficient_names(self) -> &'static [&'static str] {
        match self {
            HardeningKind::Voce => &["Y", "S", "D"],
            HardeningKind::LinearVoce => &["Y", "K", "S", "D"],
            HardeningKind::Power => &["Y", "A", "n"],
        }
    }

    pub fn of<T>(law: &Hardening<T>) -> Self {
        match law {
            Hardening::Voce { .. } => HardeningKind::Voce,
            Hardening::LinearVoce { .. } => HardeningKind::LinearVoce,
            Hardening::Power { .. } => HardeningKind::Power,
        }
    }

    pub fn build<T: Copy>(self, c: &[T]) -> Hardening<T> {
        match self {
            HardeningKind::Voce => Hardening::Voce { y: c[0], s: c[1], d: c[2] },
            HardeningKind::LinearVoce => Hardening::LinearVoce { y: c[0], k: c[1], s: c[2], d: c[3] },
            HardeningKind::Power => Hardening::Power { y: c[0], a: c[1], n: c[2] },
        }
    }
}

/// Flattens a material to `[E, nu, coefficients...]`.
pub fn flatten(mat: &Material<f64>) -> Vec<f64> {
    let mut v = vec![mat.elastic.e, mat.elastic.nu];
    match mat.hardening {
        Hardening::Voce { y, s, d } => v.extend([y, s, d]),
        Hardening::LinearVoce { y, k, s, d } => v.extend([y, k, s, d]),
        Hardening::Power { y, a, n } => v.extend([y, a, n]),
    }
    v
}

/// Which material entries are being calibrated.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpace {
    kind: HardeningKind,
    base: Vec<f64>,
    free: Vec<usize>,
}

impl ParamSpace {
    /// `free` lists entry names (`E`, `nu`, or coefficient names of the law)
    /// in the order they appear in the calibration vector.
    pub fn new(base: &Material<f64>, free: &[&str]) -> Result<Self> {
        let kind = HardeningKind::of(&base.hardening);
        let names = Self::names_for(kind);
        let mut idx = Vec::with_capacity(free.len());
        for f in free {
            let i = names
                .iter()
                .position(|n| n == f)
                .ok_or_else(|| Error::Domain(format!("'{f}' is not a parameter of {kind:?} hardening")))?;
            if idx.contains(&i) {
                return Err(Error::Domain(format!("parameter '{f}' listed twice")));
            }
            idx.push(i);
        }
        if idx.is_empty() || idx.len() > SEEDS {
            return Err(Error::Domain(format!("need 1..={SEEDS} free parameters, got {}", idx.len())));
        }
        Ok(Self { kind, base: flatten(base), free: idx })
    }

    fn names_for(kind: HardeningKind) -> Vec<&'static str> {
        let mut n = vec!["E", "nu"];
        n.extend_from_slice(kind.coefficient_names());
        n
    }

    pub fn kind(&self) -> HardeningKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        let all = Self::names_for(self.kind);
        self.free.iter().map(|&i| all[i]).collect()
    }

    /// Calibration vector at the base material.
    pub fn base_values(&self) -> Vec<f64> {
        self.free.iter().map(|&i| self.base[i]).collect()
    }

    /// Material with the free entries replaced by `p`.
    pub fn material<T: Scalar>(&self, p: &[T]) -> Material<T> {
        assert_eq!(p.len(), self.free.len(), "calibration vector length");
        let mut full: Vec<T> = self.base.iter().map(|&v| T::cst(v)).collect();
        for (k, &i) in self.free.iter().enumerate() {
            full[i] = p[k];
        }
        Material {
            elastic: Elastic { e: full[0], nu: full[1] },
            hardening: self.kind.build(&full[2..]),
        }
    }

    /// Material with each free entry seeded in its own derivative slot.
    pub fn seeded(&self, p: &[f64]) -> Material<Dual<SEEDS>> {
        let d: Vec<Dual<SEEDS>> = p.iter().enumerate().map(|(k, &v)| Dual::variable(v, k)).collect();
        self.material(&d)
    }

    pub fn hardening(&self, p: &[f64]) -> HardeningLaw {
        self.material(p).hardening
    }
}
