//! Separation of variables on the circle and the sphere.
//!
//! With ν = −r̂ the boundary condition at `r = a` reads `−∂_r u + iλu = 0`.
//! For constant λ each mode decouples:
//!
//! ```text
//! c_n = −d_n (−k J_n'(ka) + iλ J_n(ka)) / (−k H_n'(ka) + iλ H_n(ka))
//! ```
//!
//! (`d_n` the incident coefficients; spherical functions on the sphere). For
//! variable λ the condition is projected onto the modes, which couples them
//! through the Fourier (circle) or Legendre-product (sphere) moments of λ.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::sync::Arc;

use super::{
    BoundaryTrace, ExteriorRepresentation, FieldSamples, ImpedanceField, ImpedanceRepr,
    IncidentWave, Solution, SolveDiagnostics,
};
use crate::error::{Error, Result};
use crate::geometry::{gauss_legendre, BoundaryGeometry, GeometrySpec};
use crate::linalg::{relative_residual, solve_checked};
use crate::special::{
    bessel_j_array, cyl_derivative, hankel_array, legendre_array, legendre_with_derivative,
    spherical_hankel_array, spherical_j_array, sph_derivative, MAX_ORDER,
};

const RESONANCE_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Default)]
pub struct ModalOptions {
    /// Highest mode kept; defaults to `⌈ka⌉ + 20`.
    pub truncation: Option<usize>,
}

/// `⌈ka⌉ + 20`.
pub fn default_truncation(k: f64, radius: f64) -> usize {
    (k * radius).ceil() as usize + 20
}

fn i_pow(n: i64) -> Complex64 {
    match n.rem_euclid(4) {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

fn sign(n: i64) -> f64 {
    if n.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Cylinder functions `J_n, J_n', H_n, H_n'` at `x` for `0 ≤ n ≤ nmax`.
pub(crate) struct CylValues {
    pub j: Vec<f64>,
    pub dj: Vec<f64>,
    pub h: Vec<Complex64>,
    pub dh: Vec<Complex64>,
}

impl CylValues {
    pub fn new(nmax: usize, x: f64) -> Self {
        let j = bessel_j_array(nmax + 1, x);
        let h = hankel_array(nmax + 1, x);
        let hr: Vec<f64> = h.iter().map(|z| z.re).collect();
        let hi: Vec<f64> = h.iter().map(|z| z.im).collect();
        let dj = (0..=nmax).map(|n| cyl_derivative(&j, n, x)).collect();
        let dh = (0..=nmax)
            .map(|n| Complex64::new(cyl_derivative(&hr, n, x), cyl_derivative(&hi, n, x)))
            .collect();
        CylValues {
            j: j[..=nmax].to_vec(),
            dj,
            h: h[..=nmax].to_vec(),
            dh,
        }
    }

    /// Values at signed order `n` via `C_{−n} = (−1)^n C_n`.
    pub fn at(&self, n: i64) -> (f64, f64, Complex64, Complex64) {
        let m = n.unsigned_abs() as usize;
        let s = if n < 0 { sign(n) } else { 1.0 };
        (s * self.j[m], s * self.dj[m], self.h[m] * s, self.dh[m] * s)
    }
}

struct SphValues {
    j: Vec<f64>,
    dj: Vec<f64>,
    h: Vec<Complex64>,
    dh: Vec<Complex64>,
}

impl SphValues {
    fn new(nmax: usize, x: f64) -> Self {
        let j = spherical_j_array(nmax + 1, x);
        let h = spherical_hankel_array(nmax + 1, x);
        let hr: Vec<f64> = h.iter().map(|z| z.re).collect();
        let hi: Vec<f64> = h.iter().map(|z| z.im).collect();
        let dj = (0..=nmax).map(|n| sph_derivative(&j, n, x)).collect();
        let dh = (0..=nmax)
            .map(|n| Complex64::new(sph_derivative(&hr, n, x), sph_derivative(&hi, n, x)))
            .collect();
        SphValues {
            j: j[..=nmax].to_vec(),
            dj,
            h: h[..=nmax].to_vec(),
            dh,
        }
    }
}

/// Modal solve on `circle2d` or `sphere3d`.
pub fn solve_modal(
    geom: &Arc<BoundaryGeometry>,
    wave: &IncidentWave,
    impedance: &ImpedanceField,
    opts: &ModalOptions,
) -> Result<Solution> {
    wave.validate(geom.dim())?;
    let radius = match geom.spec {
        GeometrySpec::Circle2d { radius, .. } | GeometrySpec::Sphere3d { radius, .. } => radius,
        _ => {
            return Err(Error::Unsupported(format!(
                "modal solver needs a circle or sphere, got {}",
                geom.spec.name()
            )))
        }
    };
    let ka = wave.k * radius;
    let min_n = default_truncation(wave.k, radius);
    let n = opts.truncation.unwrap_or(min_n);
    if (n as f64) < ka + 20.0 {
        return Err(Error::Domain(format!(
            "modal truncation {n} below ka + 20 = {:.3}",
            ka + 20.0
        )));
    }
    if n + 1 > MAX_ORDER {
        return Err(Error::Domain(format!(
            "modal truncation {n} exceeds the supported order range"
        )));
    }
    if geom.dim() == 2 {
        solve_circle(geom, wave, impedance, radius, n)
    } else {
        solve_sphere(geom, wave, impedance, radius, n)
    }
}

/// Two-sided Fourier coefficients `λ̂_p`, `p = −P..=P`, stored at `p + P`.
fn impedance_fourier_circle(
    geom: &BoundaryGeometry,
    impedance: &ImpedanceField,
) -> Result<Vec<Complex64>> {
    match &impedance.repr {
        ImpedanceRepr::Constant { value } => Ok(vec![Complex64::new(*value, 0.0)]),
        ImpedanceRepr::FourierOnParameter { cos, sin } => {
            let p = cos.len().max(sin.len()).max(1) - 1;
            let mut out = vec![Complex64::new(0.0, 0.0); 2 * p + 1];
            for q in 0..=p {
                let a = cos.get(q).copied().unwrap_or(0.0);
                let b = if q == 0 {
                    0.0
                } else {
                    sin.get(q).copied().unwrap_or(0.0)
                };
                if q == 0 {
                    out[p] = Complex64::new(a, 0.0);
                } else {
                    out[p + q] = Complex64::new(a, -b) * 0.5;
                    out[p - q] = Complex64::new(a, b) * 0.5;
                }
            }
            Ok(out)
        }
        ImpedanceRepr::SamplesAtNodes { values } => {
            let n = geom.len();
            if values.len() != n {
                return Err(Error::Consistency(format!(
                    "impedance has {} samples, geometry has {n} nodes",
                    values.len()
                )));
            }
            let p = n / 2 - 1;
            let mut out = vec![Complex64::new(0.0, 0.0); 2 * p + 1];
            for q in -(p as i64)..=(p as i64) {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, v) in values.iter().enumerate() {
                    let t = geom.arc_params[j];
                    acc += Complex64::from_polar(*v, -(q as f64) * t);
                }
                out[(q + p as i64) as usize] = acc / n as f64;
            }
            Ok(out)
        }
    }
}

fn solve_circle(
    geom: &Arc<BoundaryGeometry>,
    wave: &IncidentWave,
    impedance: &ImpedanceField,
    radius: f64,
    nmax: usize,
) -> Result<Solution> {
    let k = wave.k;
    let cyl = CylValues::new(nmax, k * radius);
    let theta_w = wave.angle();
    let big_n = nmax as i64;
    let dim = 2 * nmax + 1;
    let incident: Vec<Complex64> = (-big_n..=big_n)
        .map(|n| i_pow(n) * Complex64::from_polar(1.0, -(n as f64) * theta_w))
        .collect();
    let lam_hat = impedance_fourier_circle(geom, impedance)?;
    let p = (lam_hat.len() as i64 - 1) / 2;
    let i = Complex64::i();

    let mut diagnostics = SolveDiagnostics {
        truncation: Some(nmax),
        ..Default::default()
    };
    let coeffs: Vec<Complex64> = if p == 0 {
        let lam = lam_hat[0];
        (-big_n..=big_n)
            .map(|n| {
                let (j, dj, h, dh) = cyl.at(n);
                let den = -k * dh + i * lam * h;
                if den.norm() < RESONANCE_FLOOR {
                    return Err(Error::Resonance {
                        order: n,
                        modulus: den.norm(),
                    });
                }
                let d = incident[(n + big_n) as usize];
                Ok(-d * (-k * dj + i * lam * j) / den)
            })
            .collect::<Result<_>>()?
    } else {
        let lam_at = |q: i64| {
            if q.abs() <= p {
                lam_hat[(q + p) as usize]
            } else {
                Complex64::new(0.0, 0.0)
            }
        };
        // unknowns x_n = c_n H_n(ka) keep the columns balanced
        let mut a = DMatrix::<Complex64>::zeros(dim, dim);
        let mut b = DVector::<Complex64>::zeros(dim);
        for m in -big_n..=big_n {
            let row = (m + big_n) as usize;
            let (_, djm, hm, dhm) = cyl.at(m);
            a[(row, row)] += -k * dhm / hm;
            b[row] += k * incident[row] * djm;
            for n in (m - p).max(-big_n)..=(m + p).min(big_n) {
                let col = (n + big_n) as usize;
                let (jn, _, _, _) = cyl.at(n);
                let l = lam_at(m - n);
                a[(row, col)] += i * l;
                b[row] -= i * l * incident[col] * jn;
            }
        }
        let (x, cond) = solve_checked(&a, &b)?;
        diagnostics.condition = Some(cond);
        diagnostics.residual = relative_residual(&a, &x, &b);
        (-big_n..=big_n)
            .map(|n| x[(n + big_n) as usize] / cyl.at(n).2)
            .collect()
    };

    let mut u = Vec::with_capacity(geom.len());
    let mut dnu = Vec::with_capacity(geom.len());
    for node in &geom.nodes {
        let theta = node[1].atan2(node[0]);
        let mut uv = Complex64::new(0.0, 0.0);
        let mut dv = Complex64::new(0.0, 0.0);
        for n in -big_n..=big_n {
            let idx = (n + big_n) as usize;
            let (j, dj, h, dh) = cyl.at(n);
            let e = Complex64::from_polar(1.0, n as f64 * theta);
            uv += (incident[idx] * j + coeffs[idx] * h) * e;
            dv += (incident[idx] * dj + coeffs[idx] * dh) * e;
        }
        u.push(uv);
        dnu.push(-k * dv);
    }
    Ok(Solution {
        trace: BoundaryTrace {
            geometry: geom.spec.clone(),
            wave: wave.clone(),
            u,
            dnu,
        },
        representation: ExteriorRepresentation::Modal2d {
            wave: wave.clone(),
            radius,
            coeffs,
        },
        diagnostics,
    })
}

/// Legendre moments `G_{mn} = ∫_{−1}^{1} λ(arccos t) P_m(t) P_n(t) dt`.
fn legendre_moments(cos: &[f64], nmax: usize) -> DMatrix<f64> {
    let q = 2 * nmax + cos.len() + 2;
    let (t, w) = gauss_legendre(q);
    let mut g = DMatrix::<f64>::zeros(nmax + 1, nmax + 1);
    for (tk, wk) in t.iter().zip(&w) {
        let gamma = tk.clamp(-1.0, 1.0).acos();
        let lam: f64 = cos
            .iter()
            .enumerate()
            .map(|(p, c)| c * (p as f64 * gamma).cos())
            .sum();
        let pl = legendre_array(nmax, *tk);
        for m in 0..=nmax {
            let f = wk * lam * pl[m];
            for n in 0..=nmax {
                g[(m, n)] += f * pl[n];
            }
        }
    }
    g
}

fn solve_sphere(
    geom: &Arc<BoundaryGeometry>,
    wave: &IncidentWave,
    impedance: &ImpedanceField,
    radius: f64,
    nmax: usize,
) -> Result<Solution> {
    let k = wave.k;
    let sv = SphValues::new(nmax, k * radius);
    let i = Complex64::i();
    let incident: Vec<Complex64> = (0..=nmax)
        .map(|l| i_pow(l as i64) * (2 * l + 1) as f64)
        .collect();
    let mut diagnostics = SolveDiagnostics {
        truncation: Some(nmax),
        ..Default::default()
    };
    let coeffs: Vec<Complex64> = match &impedance.repr {
        ImpedanceRepr::Constant { value } => {
            let lam = *value;
            (0..=nmax)
                .map(|l| {
                    let den = -k * sv.dh[l] + i * lam * sv.h[l];
                    if den.norm() < RESONANCE_FLOOR {
                        return Err(Error::Resonance {
                            order: l as i64,
                            modulus: den.norm(),
                        });
                    }
                    Ok(-incident[l] * (-k * sv.dj[l] + i * lam * sv.j[l]) / den)
                })
                .collect::<Result<_>>()?
        }
        ImpedanceRepr::FourierOnParameter { cos, sin } => {
            if sin.iter().skip(1).any(|s| *s != 0.0) {
                return Err(Error::Unsupported(
                    "sphere impedance must be a cosine series in the angle from ω".into(),
                ));
            }
            let g = legendre_moments(cos, nmax);
            let dim = nmax + 1;
            let mut a = DMatrix::<Complex64>::zeros(dim, dim);
            let mut b = DVector::<Complex64>::zeros(dim);
            // unknowns x_ℓ = c_ℓ h_ℓ(ka), rows scaled by (2m+1)/2
            for m in 0..dim {
                let scale = (2 * m + 1) as f64 / 2.0;
                a[(m, m)] += -k * sv.dh[m] / sv.h[m];
                b[m] += k * incident[m] * sv.dj[m];
                for n in 0..dim {
                    a[(m, n)] += i * g[(m, n)] * scale;
                    b[m] -= i * g[(m, n)] * scale * incident[n] * sv.j[n];
                }
            }
            let (x, cond) = solve_checked(&a, &b)?;
            diagnostics.condition = Some(cond);
            diagnostics.residual = relative_residual(&a, &x, &b);
            x.iter().zip(&sv.h).map(|(x, h)| x / h).collect()
        }
        ImpedanceRepr::SamplesAtNodes { .. } => {
            return Err(Error::Unsupported(
                "sampled impedance is not supported by the sphere solver".into(),
            ))
        }
    };

    let mut u = Vec::with_capacity(geom.len());
    let mut dnu = Vec::with_capacity(geom.len());
    for node in &geom.nodes {
        let r = (node[0] * node[0] + node[1] * node[1] + node[2] * node[2]).sqrt();
        let t = (wave.dot(node) / r).clamp(-1.0, 1.0);
        let pl = legendre_array(nmax, t);
        let mut uv = Complex64::new(0.0, 0.0);
        let mut dv = Complex64::new(0.0, 0.0);
        for l in 0..=nmax {
            uv += (incident[l] * sv.j[l] + coeffs[l] * sv.h[l]) * pl[l];
            dv += (incident[l] * sv.dj[l] + coeffs[l] * sv.dh[l]) * pl[l];
        }
        u.push(uv);
        dnu.push(-k * dv);
    }
    Ok(Solution {
        trace: BoundaryTrace {
            geometry: geom.spec.clone(),
            wave: wave.clone(),
            u,
            dnu,
        },
        representation: ExteriorRepresentation::Modal3d {
            wave: wave.clone(),
            radius,
            coeffs,
        },
        diagnostics,
    })
}

fn check_outside(r: f64, radius: f64) -> Result<()> {
    // tolerate round-off for points placed exactly on the boundary
    if r < radius * (1.0 - 1e-12) {
        return Err(Error::Domain(format!(
            "point at |x| = {r} lies inside the representation radius {radius}"
        )));
    }
    Ok(())
}

pub(crate) fn evaluate_2d(
    k: f64,
    radius: f64,
    coeffs: &[Complex64],
    points: &[Vec<f64>],
    gradient: bool,
) -> Result<FieldSamples> {
    let big_n = ((coeffs.len() - 1) / 2) as i64;
    let mut values = Vec::with_capacity(points.len());
    let mut grads = Vec::new();
    for p in points {
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        check_outside(r, radius)?;
        let theta = p[1].atan2(p[0]);
        let cyl = CylValues::new(big_n as usize, k * r);
        let mut u = Complex64::new(0.0, 0.0);
        let mut ur = Complex64::new(0.0, 0.0);
        let mut ut = Complex64::new(0.0, 0.0);
        for n in -big_n..=big_n {
            let c = coeffs[(n + big_n) as usize];
            if c.norm() == 0.0 {
                continue;
            }
            let (_, _, h, dh) = cyl.at(n);
            let e = Complex64::from_polar(1.0, n as f64 * theta);
            u += c * h * e;
            if gradient {
                ur += c * k * dh * e;
                ut += c * h * e * Complex64::new(0.0, n as f64);
            }
        }
        values.push(u);
        if gradient {
            let (s, co) = theta.sin_cos();
            grads.push(vec![ur * co - ut * s / r, ur * s + ut * co / r]);
        }
    }
    Ok(FieldSamples {
        values,
        gradients: gradient.then_some(grads),
        warnings: Vec::new(),
    })
}

pub(crate) fn evaluate_3d(
    wave: &IncidentWave,
    radius: f64,
    coeffs: &[Complex64],
    points: &[Vec<f64>],
    gradient: bool,
) -> Result<FieldSamples> {
    let nmax = coeffs.len() - 1;
    let k = wave.k;
    let mut values = Vec::with_capacity(points.len());
    let mut grads = Vec::new();
    for p in points {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        check_outside(r, radius)?;
        let xh = [p[0] / r, p[1] / r, p[2] / r];
        let t = (wave.dot(&xh)).clamp(-1.0, 1.0);
        let sv = SphValues::new(nmax, k * r);
        let (pl, dpl) = legendre_with_derivative(nmax, t);
        let mut u = Complex64::new(0.0, 0.0);
        let mut ur = Complex64::new(0.0, 0.0);
        let mut ut = Complex64::new(0.0, 0.0);
        for l in 0..=nmax {
            u += coeffs[l] * sv.h[l] * pl[l];
            if gradient {
                ur += coeffs[l] * k * sv.dh[l] * pl[l];
                ut += coeffs[l] * sv.h[l] * dpl[l];
            }
        }
        values.push(u);
        if gradient {
            grads.push(
                (0..3)
                    .map(|c| ur * xh[c] + ut * (wave.omega[c] - t * xh[c]) / r)
                    .collect(),
            );
        }
    }
    Ok(FieldSamples {
        values,
        gradients: gradient.then_some(grads),
        warnings: Vec::new(),
    })
}
