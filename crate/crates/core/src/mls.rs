//! Moving least squares on scattered 2D points.
//!
//! An [`MlsOperator`] precomputes, for every evaluation point, the weights
//! that map source values to the local weighted polynomial fit evaluated at
//! that point. Applying it to many fields (steps, components) is then a
//! sparse dot product per point.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Wendland C2 weight with support radius `rho`.
pub fn wendland(r: f64, rho: f64) -> f64 {
    let q = r / rho;
    if q >= 1.0 {
        0.0
    } else {
        (1.0 - q).powi(4) * (4.0 * q + 1.0)
    }
}

/// Number of monomials of total degree at most `order` in two variables.
pub fn basis_size(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

fn basis(order: usize, dx: f64, dy: f64, out: &mut [f64]) {
    let mut k = 0;
    for deg in 0..=order {
        for j in 0..=deg {
            out[k] = dx.powi((deg - j) as i32) * dy.powi(j as i32);
            k += 1;
        }
    }
}

/// Uniform bucket grid for fixed-radius neighbor queries.
struct Grid {
    origin: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl Grid {
    fn new(points: &[[f64; 2]], cell: f64) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for i in 0..2 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let dims = [0, 1].map(|i| (((hi[i] - lo[i]) / cell).floor() as usize + 1).max(1));
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        let mut g = Self { origin: lo, cell, dims, buckets: Vec::new() };
        for (k, p) in points.iter().enumerate() {
            let (i, j) = g.cell_of(p);
            buckets[j * dims[0] + i].push(k);
        }
        g.buckets = buckets;
        g
    }

    fn cell_of(&self, p: &[f64; 2]) -> (usize, usize) {
        let c = |i: usize| (((p[i] - self.origin[i]) / self.cell).floor().max(0.0) as usize).min(self.dims[i] - 1);
        (c(0), c(1))
    }

    fn within(&self, points: &[[f64; 2]], q: &[f64; 2], r: f64, out: &mut Vec<usize>) {
        out.clear();
        let reach = (r / self.cell).ceil() as isize;
        let ci = ((q[0] - self.origin[0]) / self.cell).floor() as isize;
        let cj = ((q[1] - self.origin[1]) / self.cell).floor() as isize;
        for j in (cj - reach).max(0)..=(cj + reach).min(self.dims[1] as isize - 1) {
            for i in (ci - reach).max(0)..=(ci + reach).min(self.dims[0] as isize - 1) {
                for &k in &self.buckets[j as usize * self.dims[0] + i as usize] {
                    let p = points[k];
                    if (p[0] - q[0]).hypot(p[1] - q[1]) < r {
                        out.push(k);
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

/// Linear map from values on `sources` to MLS fits at `targets`.
#[derive(Clone, Debug)]
pub struct MlsOperator {
    num_sources: usize,
    rows: Vec<Vec<(usize, f64)>>,
    /// Support radius actually used per target (after any widening).
    pub radii: Vec<f64>,
}

impl MlsOperator {
    /// Builds the operator. A target whose local system is rank deficient
    /// gets its support widened by 1.5x once; if that still fails the
    /// construction fails.
    pub fn new(sources: &[[f64; 2]], targets: &[[f64; 2]], order: usize, radius: f64) -> Result<Self> {
        if order > 2 {
            return Err(Error::Domain(format!("MLS order {order} not supported (0..=2)")));
        }
        if !(radius > 0.0) {
            return Err(Error::Domain(format!("MLS radius {radius} must be positive")));
        }
        let grid = Grid::new(sources, radius);
        let built: Vec<Result<(Vec<(usize, f64)>, f64)>> = targets
            .par_iter()
            .enumerate()
            .map(|(t, q)| {
                let mut nb = Vec::new();
                for rho in [radius, 1.5 * radius] {
                    grid.within(sources, q, rho, &mut nb);
                    if let Some(row) = local_fit(sources, &nb, q, order, rho) {
                        return Ok((row, rho));
                    }
                }
                Err(Error::Domain(format!(
                    "MLS fit at point {t} ({:.6}, {:.6}) is rank deficient with {} neighbors",
                    q[0],
                    q[1],
                    nb.len()
                )))
            })
            .collect();
        let mut rows = Vec::with_capacity(targets.len());
        let mut radii = Vec::with_capacity(targets.len());
        for b in built {
            let (row, rho) = b?;
            rows.push(row);
            radii.push(rho);
        }
        Ok(Self { num_sources: sources.len(), rows, radii })
    }

    pub fn num_targets(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.num_sources, "MLS source field length");
        self.rows.iter().map(|row| row.iter().map(|&(k, w)| w * values[k]).sum()).collect()
    }
}

/// Weights `c` with `fit(q) = sum_k c_k f(x_k)`, or `None` when the local
/// moment matrix is (numerically) singular.
fn local_fit(points: &[[f64; 2]], nb: &[usize], q: &[f64; 2], order: usize, rho: f64) -> Option<Vec<(usize, f64)>> {
    let m = basis_size(order);
    if nb.len() < m {
        return None;
    }
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DMatrix::<f64>::zeros(m, nb.len());
    let mut phi = vec![0.0; m];
    for (c, &k) in nb.iter().enumerate() {
        let p = points[k];
        let (dx, dy) = ((p[0] - q[0]) / rho, (p[1] - q[1]) / rho);
        let w = wendland(dx.hypot(dy), 1.0);
        basis(order, dx, dy, &mut phi);
        for i in 0..m {
            b[(i, c)] = w * phi[i];
            for j in 0..m {
                a[(i, j)] += w * phi[i] * phi[j];
            }
        }
    }
    let eig = a.clone().symmetric_eigen();
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v.abs())));
    if !(lo > 1e-12 * hi) {
        return None;
    }
    // centered basis: the fit at q is the constant coefficient
    let mut e0 = DVector::<f64>::zeros(m);
    e0[0] = 1.0;
    let z = a.cholesky()?.solve(&e0);
    let c = b.transpose() * z;
    Some(nb.iter().zip(c.iter()).map(|(&k, &w)| (k, w)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn jittered_grid(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1.0 / (n - 1) as f64;
        let mut pts = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let jx = if i == 0 || i == n - 1 { 0.0 } else { rng.random_range(-0.2..0.2) * h };
                let jy = if j == 0 || j == n - 1 { 0.0 } else { rng.random_range(-0.2..0.2) * h };
                pts.push([i as f64 * h + jx, j as f64 * h + jy]);
            }
        }
        pts
    }

    #[test]
    fn wendland_profile() {
        assert_eq!(wendland(0.0, 2.0), 1.0);
        assert_eq!(wendland(2.0, 2.0), 0.0);
        assert_eq!(wendland(3.0, 2.0), 0.0);
        assert!((wendland(1.0, 2.0) - 0.0625 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn reproduces_polynomials_of_its_order() {
        let pts = jittered_grid(21, 3);
        let h = 0.05;
        for order in 0..=2 {
            let op = MlsOperator::new(&pts, &pts, order, 3.0 * h).unwrap();
            let f = |p: &[f64; 2]| match order {
                0 => 2.5,
                1 => 1.0 + 2.0 * p[0] - 3.0 * p[1],
                _ => 1.0 + p[0] - p[1] + 0.5 * p[0] * p[0] - 2.0 * p[0] * p[1] + 3.0 * p[1] * p[1],
            };
            let v: Vec<f64> = pts.iter().map(f).collect();
            let out = op.apply(&v);
            for (a, b) in out.iter().zip(&v) {
                assert!((a - b).abs() < 1e-10, "order {order}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn smoothing_reduces_noise_variance() {
        let pts = jittered_grid(31, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = pts.iter().map(|_| 1.0 + rng.random_range(-1.0..1.0)).collect();
        let op = MlsOperator::new(&pts, &pts, 2, 3.0 / 30.0).unwrap();
        let out = op.apply(&v);
        let var = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / x.len() as f64
        };
        assert!(var(&out) < 0.5 * var(&v));
    }

    #[test]
    fn remap_linear_field_between_clouds() {
        let fine = jittered_grid(41, 1);
        let coarse = jittered_grid(15, 2);
        let op = MlsOperator::new(&fine, &coarse, 1, 3.0 / 40.0).unwrap();
        let f = |p: &[f64; 2]| 0.3 - 1.5 * p[0] + 0.7 * p[1];
        let out = op.apply(&fine.iter().map(f).collect::<Vec<_>>());
        for (p, v) in coarse.iter().zip(&out) {
            assert!((f(p) - v).abs() < 1e-10);
        }
    }

    #[test]
    fn sparse_cloud_is_rejected() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(MlsOperator::new(&pts, &pts, 2, 0.5).is_err());
        // widening rescues a target whose nominal support is too small
        let pts: Vec<[f64; 2]> = (0..121).map(|k| [(k % 11) as f64 * 0.1, (k / 11) as f64 * 0.1]).collect();
        let op = MlsOperator::new(&pts, &[[0.55, 0.55]], 1, 0.06).unwrap();
        assert_eq!(op.radii[0], 1.5 * 0.06);
        assert!(MlsOperator::new(&pts, &[[0.55, 0.55]], 1, 0.04).is_err());
    }
}
