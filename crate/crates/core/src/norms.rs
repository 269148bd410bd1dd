//! Boundary Sobolev norms by Fourier (circle parameter) or spherical-harmonic
//! multipliers.
//!
//! On a curve the samples are first multiplied by `√|z'|`, so that the `s = 0`
//! norm is exactly the arc-length quadrature norm; then
//! `‖f‖_s² = 2π Σ_n (1 + n²)^s |ĝ_n|²`. On the sphere
//! `‖f‖_s² = a² Σ_{ℓ,m} (1 + ℓ(ℓ+1))^s |f_{ℓm}|²`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::BoundaryGeometry;

/// A complex function sampled at the nodes of a boundary.
#[derive(Debug, Clone)]
pub struct BoundaryFunction {
    pub geometry: Arc<BoundaryGeometry>,
    pub values: Vec<Complex64>,
}

impl BoundaryFunction {
    pub fn new(geometry: Arc<BoundaryGeometry>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::Consistency(format!(
                "{} values for {} nodes",
                values.len(),
                geometry.len()
            )));
        }
        Ok(BoundaryFunction { geometry, values })
    }

    pub fn from_real(geometry: Arc<BoundaryGeometry>, values: &[f64]) -> Result<Self> {
        Self::new(
            geometry,
            values.iter().map(|v| Complex64::new(*v, 0.0)).collect(),
        )
    }

    /// Quadrature `(∫|f|²)^{1/2}`.
    pub fn l2_quadrature(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.geometry.weights)
            .map(|(v, w)| w * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Quadrature `∫ f ḡ`.
    pub fn inner(&self, other: &BoundaryFunction) -> Complex64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(&self.geometry.weights)
            .map(|((a, b), w)| a * b.conj() * *w)
            .sum()
    }

    /// `(multiplier index², |coefficient|²·scale)` pairs: `n²` on curves,
    /// `ℓ(ℓ+1)` on the sphere.
    pub fn spectrum(&self) -> Vec<(f64, f64)> {
        match &self.geometry.sphere {
            Some(grid) => sphere_spectrum(grid, &self.values),
            None => curve_spectrum(&self.geometry, &self.values),
        }
    }
}

fn curve_spectrum(geom: &BoundaryGeometry, values: &[Complex64]) -> Vec<(f64, f64)> {
    let n = values.len();
    let speed = match &geom.curve {
        Some(c) => c.speed.clone(),
        None => vec![1.0; n],
    };
    let mut g: Vec<Complex64> = values
        .iter()
        .zip(&speed)
        .map(|(v, s)| v * s.sqrt())
        .collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut g);
    g.iter()
        .enumerate()
        .map(|(q, c)| {
            let m = if q <= n / 2 { q as f64 } else { q as f64 - n as f64 };
            let c = c / n as f64;
            (m * m, 2.0 * PI * c.norm_sqr())
        })
        .collect()
}

/// Orthonormal associated Legendre functions `P̄_ℓ^m(x)`, `m ≤ ℓ ≤ lmax`,
/// with `2π ∫ P̄_ℓ^m P̄_{ℓ'}^m dx = δ_{ℓℓ'}`.
fn normalized_legendre(lmax: usize, m: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; lmax + 1];
    if m > lmax {
        return out;
    }
    let sx = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for k in 1..=m {
        pmm *= -((2 * k + 1) as f64 / (2 * k) as f64).sqrt() * sx;
    }
    out[m] = pmm;
    if m == lmax {
        return out;
    }
    out[m + 1] = ((2 * m + 3) as f64).sqrt() * x * pmm;
    let a = |l: usize| {
        let (l, m) = (l as f64, m as f64);
        ((4.0 * l * l - 1.0) / (l * l - m * m)).sqrt()
    };
    for l in m + 2..=lmax {
        out[l] = a(l) * (x * out[l - 1] - out[l - 2] / a(l - 1));
    }
    out
}

fn sphere_spectrum(grid: &crate::geometry::SphereGrid, values: &[Complex64]) -> Vec<(f64, f64)> {
    let nt = grid.n_theta;
    let np = grid.n_phi;
    let lmax = nt - 1;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(np);
    // azimuthal coefficients per latitude
    let rows: Vec<Vec<Complex64>> = (0..nt)
        .map(|i| {
            let mut row = values[i * np..(i + 1) * np].to_vec();
            fft.process(&mut row);
            row.iter().map(|c| c * (2.0 * PI / np as f64)).collect()
        })
        .collect();
    let legendre: Vec<Vec<Vec<f64>>> = (0..=lmax)
        .map(|m| {
            grid.cos_theta
                .iter()
                .map(|&x| normalized_legendre(lmax, m, x))
                .collect()
        })
        .collect();
    let a2 = grid.radius * grid.radius;
    let mut out = Vec::new();
    for mm in -(lmax as i64)..=(lmax as i64) {
        let m = mm.unsigned_abs() as usize;
        let slot = mm.rem_euclid(np as i64) as usize;
        for l in m..=lmax {
            let mut c = Complex64::new(0.0, 0.0);
            for i in 0..nt {
                c += rows[i][slot] * (grid.gl_weights[i] * legendre[m][i][l]);
            }
            out.push(((l * (l + 1)) as f64, a2 * c.norm_sqr()));
        }
    }
    out
}

/// `H^s` norm of a boundary function, `s ∈ [−1, 1]`.
pub fn sobolev_norm(f: &BoundaryFunction, s: f64) -> Result<f64> {
    if !(s.abs() <= 1.0) {
        return Err(Error::Unsupported(format!(
            "Sobolev order s = {s} outside [−1, 1]"
        )));
    }
    Ok(weighted_sum(&f.spectrum(), s).sqrt())
}

fn weighted_sum(spectrum: &[(f64, f64)], s: f64) -> f64 {
    spectrum
        .iter()
        .map(|(idx, c2)| (1.0 + idx).powf(s) * c2)
        .sum()
}

/// Norms at several orders from one transform.
pub fn sobolev_norms(f: &BoundaryFunction, orders: &[f64]) -> Result<Vec<f64>> {
    if let Some(s) = orders.iter().find(|s| !(s.abs() <= 1.0)) {
        return Err(Error::Unsupported(format!(
            "Sobolev order s = {s} outside [−1, 1]"
        )));
    }
    let spec = f.spectrum();
    Ok(orders.iter().map(|&s| weighted_sum(&spec, s).sqrt()).collect())
}

/// `(‖g‖_{L²}, ‖g‖_{H¹}^{1/3} ‖g‖_{H^{−1/2}}^{2/3})`.
pub fn interpolation_check(g: &BoundaryFunction) -> (f64, f64) {
    let spec = g.spectrum();
    let l2 = weighted_sum(&spec, 0.0).sqrt();
    let h1 = weighted_sum(&spec, 1.0).sqrt();
    let hm = weighted_sum(&spec, -0.5).sqrt();
    (l2, h1.powf(1.0 / 3.0) * hm.powf(2.0 / 3.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, GeometrySpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn circle(n: usize) -> Arc<BoundaryGeometry> {
        Arc::new(build_geometry(&GeometrySpec::Circle2d { radius: 1.0, n }).unwrap())
    }

    fn mode(g: &Arc<BoundaryGeometry>, m: f64) -> BoundaryFunction {
        let v = g
            .arc_params
            .iter()
            .map(|t| Complex64::from_polar(1.0, m * t))
            .collect();
        BoundaryFunction::new(g.clone(), v).unwrap()
    }

    #[test]
    fn single_modes() {
        let g = circle(64);
        let one = mode(&g, 0.0);
        for s in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            assert!((sobolev_norm(&one, s).unwrap() - (2.0 * PI).sqrt()).abs() < 1e-12);
        }
        let e1 = mode(&g, 1.0);
        assert!((sobolev_norm(&e1, 1.0).unwrap() - (4.0 * PI).sqrt()).abs() < 1e-12);
        let (l, r) = interpolation_check(&e1);
        assert!((l - (2.0 * PI).sqrt()).abs() < 1e-12 && (l - r).abs() < 1e-12);
        assert!(sobolev_norm(&e1, 1.5).is_err());
    }

    #[test]
    fn zero_function() {
        let g = circle(32);
        let z = BoundaryFunction::new(g, vec![Complex64::new(0.0, 0.0); 32]).unwrap();
        assert_eq!(interpolation_check(&z), (0.0, 0.0));
    }

    #[test]
    fn parseval_on_kite_and_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Arc::new(build_geometry(&GeometrySpec::Kite2d { n: 128 }).unwrap());
        let v: Vec<Complex64> = (0..128)
            .map(|_| Complex64::new(rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let f = BoundaryFunction::new(g, v).unwrap();
        let a = sobolev_norm(&f, 0.0).unwrap();
        assert!(((a - f.l2_quadrature()) / a).abs() < 1e-12);

        let s = Arc::new(build_geometry(&GeometrySpec::Sphere3d { radius: 2.0, n: 16 }).unwrap());
        // band-limited: degree ≤ 3 polynomial in the coordinates
        let v: Vec<Complex64> = s
            .nodes
            .iter()
            .map(|p| Complex64::new(1.0 + p[0] * p[1] - p[2].powi(3), p[1]))
            .collect();
        let f = BoundaryFunction::new(s, v).unwrap();
        let a = sobolev_norm(&f, 0.0).unwrap();
        assert!(((a - f.l2_quadrature()) / a).abs() < 1e-10, "{a} {}", f.l2_quadrature());
    }

    #[test]
    fn monotone_in_order_and_dual_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = circle(64);
        for _ in 0..20 {
            let coeffs: Vec<(f64, Complex64)> = (0..5)
                .map(|_| {
                    (
                        rng.random_range(-10..=10) as f64,
                        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
                    )
                })
                .collect();
            let make = |c: &[(f64, Complex64)]| {
                let v = g
                    .arc_params
                    .iter()
                    .map(|t| c.iter().map(|(m, a)| a * Complex64::from_polar(1.0, m * t)).sum())
                    .collect();
                BoundaryFunction::new(g.clone(), v).unwrap()
            };
            let f = make(&coeffs);
            let other: Vec<(f64, Complex64)> = coeffs
                .iter()
                .map(|(m, a)| (*m, a * Complex64::new(rng.random::<f64>(), 1.0)))
                .collect();
            let h = make(&other);
            let orders = [-1.0, -0.5, 0.0, 0.5, 1.0];
            let norms = sobolev_norms(&f, &orders).unwrap();
            assert!(norms.windows(2).all(|w| w[0] <= w[1] * (1.0 + 1e-14)));
            for s in [0.5, 1.0] {
                let lhs = f.inner(&h).norm();
                let rhs = sobolev_norm(&f, s).unwrap() * sobolev_norm(&h, -s).unwrap();
                assert!(lhs <= rhs * (1.0 + 1e-12));
            }
            let (l, r) = interpolation_check(&f);
            assert!(l <= r * (1.0 + 1e-12));
        }
    }
}
