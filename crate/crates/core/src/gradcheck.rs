//! Finite-difference verification of analytic gradients.
//!
//! The directional derivative `g . D` of an analytic gradient is compared
//! with one-sided differences `(f(x + h D) - f(x)) / h` for a ladder of step
//! sizes `h = 1, 0.1, ..., 1e-12`, all in normalized parameter coordinates.
//! The error first falls with `h` (truncation) and then rises again once
//! round-off in the objective dominates.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::optimize::Bounds;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMethod {
    FemuAdjoint,
    VfmForward,
    VfmAdjoint,
}

impl GradMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            GradMethod::FemuAdjoint => "FEMU-Adjoint",
            GradMethod::VfmForward => "VFM-FS",
            GradMethod::VfmAdjoint => "VFM-Adjoint",
        }
    }
}

/// `1, 1e-1, ..., 1e-12`.
pub fn default_steps() -> Vec<f64> {
    (0..=12).map(|k| 10f64.powi(-k)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub method: GradMethod,
    /// Direction in normalized coordinates.
    pub direction: Vec<f64>,
    /// Analytic directional derivative in normalized coordinates.
    pub analytic: f64,
    pub steps: Vec<f64>,
    /// `None` where the perturbed objective could not be evaluated.
    pub errors: Vec<Option<f64>>,
}

impl GradCheckReport {
    /// Step with the smallest error.
    pub fn minimum(&self) -> Option<(f64, f64)> {
        self.steps
            .iter()
            .zip(&self.errors)
            .filter_map(|(&h, e)| e.map(|e| (h, e)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Errors fall monotonically from the largest step to `step_min` and do
    /// not keep falling after it by more than `slack` (factor).
    pub fn decreases_until(&self, step_min: f64) -> bool {
        let head: Vec<f64> = self
            .steps
            .iter()
            .zip(&self.errors)
            .take_while(|(h, _)| **h >= step_min * (1.0 - 1e-12))
            .filter_map(|(_, e)| *e)
            .collect();
        head.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,error\n");
        for (h, e) in self.steps.iter().zip(&self.errors) {
            match e {
                Some(e) => writeln!(s, "{h:e},{e:e}").unwrap(),
                None => writeln!(s, "{h:e},failed").unwrap(),
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Log-log plot of error against step as a standalone SVG document.
    pub fn to_svg(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .steps
            .iter()
            .zip(&self.errors)
            .filter_map(|(&h, e)| e.filter(|e| *e > 0.0).map(|e| (h.log10(), e.log10())))
            .collect();
        let (w, h, m) = (480.0, 360.0, 50.0);
        let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
        let sx = |x: f64| m + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * m);
        let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
        let mut s = String::new();
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#).unwrap();
        writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
        writeln!(
            s,
            r#"<path d="M{m},{m} V{} H{}" fill="none" stroke="black"/>"#,
            h - m,
            w - m
        )
        .unwrap();
        for k in (x0.round() as i32)..=(x1.round() as i32) {
            writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">1e{k}</text>"#, sx(k as f64), h - m + 15.0).unwrap();
        }
        for k in (y0 as i32)..=(y1 as i32) {
            writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{k}</text>"#, m - 4.0, sy(k as f64) + 4.0).unwrap();
        }
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y))).collect();
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, path.join(" ")).unwrap();
        for (x, y) in &pts {
            writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#, sx(*x), sy(*y)).unwrap();
        }
        writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{} finite-difference check</text>"#, w / 2.0, self.method.as_str())
            .unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">step size</text>"#, w / 2.0, h - 12.0).unwrap();
        s.push_str("</svg>\n");
        s
    }
}

/// Runs the check for objective `f` (physical coordinates) with analytic
/// gradient `grad` at `p`. Step evaluations that fail are recorded as
/// `None`.
pub fn run_gradcheck<F>(
    method: GradMethod,
    f: F,
    p: &[f64],
    grad: &[f64],
    bounds: &Bounds,
    direction: &[f64],
    steps: &[f64],
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let x = bounds.normalize(p);
    let scale: Vec<f64> = bounds.lower.iter().zip(&bounds.upper).map(|(l, u)| u - l).collect();
    let analytic: f64 = grad.iter().zip(&scale).zip(direction).map(|((g, s), d)| g * s * d).sum();
    let f0 = f(p)?;
    let errors = steps
        .iter()
        .map(|&h| {
            let pp: Vec<f64> = x
                .iter()
                .zip(direction)
                .enumerate()
                .map(|(i, (xi, di))| bounds.lower[i] + (xi + h * di) * scale[i])
                .collect();
            f(&pp).ok().map(|fp| ((fp - f0) / h - analytic).abs())
        })
        .collect();
    Ok(GradCheckReport { method, direction: direction.to_vec(), analytic, steps: steps.to_vec(), errors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_direction_gives_zero_errors() {
        let b = Bounds::new(vec![0.0, 0.0], vec![2.0, 4.0]).unwrap();
        let f = |p: &[f64]| Ok(p[0].powi(3) + p[1].sin());
        let p = [1.0, 1.0];
        let g = [3.0, 1f64.cos()];
        let r = run_gradcheck(GradMethod::VfmForward, f, &p, &g, &b, &[0.0, 0.0], &default_steps()).unwrap();
        assert!(r.errors.iter().all(|e| *e == Some(0.0)));
    }

    #[test]
    fn smooth_function_shows_v_curve() {
        let b = Bounds::new(vec![0.0, 0.0], vec![2.0, 4.0]).unwrap();
        let f = |p: &[f64]| Ok(p[0].powi(3) + p[1].sin());
        let p = [1.0, 1.0];
        let g = [3.0, 1f64.cos()];
        let r = run_gradcheck(GradMethod::VfmForward, f, &p, &g, &b, &[0.1, 0.1], &default_steps()).unwrap();
        let (h, e) = r.minimum().unwrap();
        assert!((1e-10..=1e-6).contains(&h), "minimum at {h}");
        assert!(e < 1e-6 * r.analytic.abs());
        assert!(r.decreases_until(1e-6));
        // the largest step is dominated by truncation error
        assert!(r.errors[0].unwrap() > 1e-3);
        assert!(r.to_csv().starts_with("step,error\n1e0,"));
        assert!(r.to_svg().contains("<polyline"));
    }

    #[test]
    fn failed_steps_are_marked() {
        let b = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let f = |p: &[f64]| if p[0] > 0.6 { Err(crate::Error::Evaluation("x".into())) } else { Ok(p[0] * p[0]) };
        let r = run_gradcheck(GradMethod::FemuAdjoint, f, &[0.5], &[1.0], &b, &[1.0], &[1.0, 0.01]).unwrap();
        assert_eq!(r.errors[0], None);
        assert!(r.errors[1].is_some());
        assert!(r.to_csv().contains("failed"));
    }
}
