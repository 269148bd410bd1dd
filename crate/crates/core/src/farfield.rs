//! Far-field patterns, far-to-near continuation and the modulus `α(t)`.
//!
//! Normalizations: `u^s(x) = e^{ikr}/√r · (u∞(x̂) + O(1/r))` in 2D and
//! `u^s(x) = e^{ikr}/r · (u∞(x̂) + O(1/r))` in 3D. Modal patterns are stored
//! through their coefficients `b_n` in `u∞(θ) = Σ b_n e^{inθ}` (2D) or
//! `u∞(x̂) = Σ b_ℓ P_ℓ(x̂·ω)` (3D).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

use crate::error::{Error, Result};
use crate::forward::{evaluate_field, EvalOptions, ExteriorRepresentation, IncidentWave};
use crate::geometry::gauss_legendre;
use crate::special::{hankel_array, legendre_array, spherical_hankel_array, MAX_ORDER};

/// Observation directions with quadrature weights on S¹ or S².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directions {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl Directions {
    /// `m` uniform directions on the circle.
    pub fn circle(m: usize) -> Self {
        let points = (0..m)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / m as f64;
                vec![t.cos(), t.sin()]
            })
            .collect();
        Directions {
            points,
            weights: vec![2.0 * PI / m as f64; m],
        }
    }

    /// Gauss–Legendre in `cos θ` times `2n` uniform azimuths.
    pub fn sphere(n: usize) -> Self {
        let (ct, w) = gauss_legendre(n);
        let nphi = 2 * n;
        let mut points = Vec::with_capacity(n * nphi);
        let mut weights = Vec::with_capacity(n * nphi);
        for (c, wc) in ct.iter().zip(&w) {
            let s = (1.0 - c * c).max(0.0).sqrt();
            for j in 0..nphi {
                let phi = 2.0 * PI * j as f64 / nphi as f64;
                points.push(vec![s * phi.cos(), s * phi.sin(), *c]);
                weights.push(wc * 2.0 * PI / nphi as f64);
            }
        }
        Directions { points, weights }
    }

    /// The standard set for a dimension: `m` points on S¹ or an `m`-point
    /// Gauss–Legendre product on S².
    pub fn standard(dim: usize, m: usize) -> Self {
        if dim == 2 {
            Directions::circle(m)
        } else {
            Directions::sphere(m)
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sampled far-field pattern, optionally with its modal coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarFieldPattern {
    pub dimension: usize,
    pub k: f64,
    /// Incident direction ω.
    pub omega: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub samples: Vec<Complex64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<Complex64>>,
}

fn i_pow(n: i64) -> Complex64 {
    match n.rem_euclid(4) {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// `b_n / c_n` for the 2D mode `c_n H_n(kr) e^{inθ}`.
fn modal_factor_2d(k: f64, n: i64) -> Complex64 {
    Complex64::from_polar((2.0 / (PI * k)).sqrt(), -PI / 4.0) * i_pow(-n)
}

/// `b_ℓ / c_ℓ` for the 3D mode `c_ℓ h_ℓ(kr) P_ℓ`.
fn modal_factor_3d(k: f64, l: usize) -> Complex64 {
    i_pow(-(l as i64) - 1) / k
}

impl FarFieldPattern {
    pub fn wave(&self) -> Result<IncidentWave> {
        IncidentWave::new(self.k, self.omega.clone())
    }

    /// `‖u∞‖_{L²}` by the direction quadrature.
    pub fn l2_norm(&self) -> f64 {
        self.samples
            .iter()
            .zip(&self.weights)
            .map(|(u, w)| w * u.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `‖u∞‖_{L²}` from the coefficients by Parseval.
    pub fn coefficient_norm(&self) -> Option<f64> {
        let c = self.coefficients.as_ref()?;
        let s: f64 = if self.dimension == 2 {
            2.0 * PI * c.iter().map(|b| b.norm_sqr()).sum::<f64>()
        } else {
            c.iter()
                .enumerate()
                .map(|(l, b)| 4.0 * PI / (2 * l + 1) as f64 * b.norm_sqr())
                .sum()
        };
        Some(s.sqrt())
    }

    /// Discrete L² distance between two patterns on the same directions.
    pub fn distance(&self, other: &FarFieldPattern) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .samples
            .iter()
            .zip(&other.samples)
            .zip(&self.weights)
            .map(|((a, b), w)| w * (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt())
    }

    pub fn check_compatible(&self, other: &FarFieldPattern) -> Result<()> {
        if self.dimension != other.dimension
            || self.samples.len() != other.samples.len()
            || self.directions != other.directions
        {
            return Err(Error::Consistency(
                "far-field patterns are sampled on different directions".into(),
            ));
        }
        Ok(())
    }

    /// Same pattern with new samples; coefficients are dropped.
    pub fn with_samples(&self, samples: Vec<Complex64>) -> FarFieldPattern {
        FarFieldPattern {
            samples,
            coefficients: None,
            ..self.clone()
        }
    }

    /// The pattern re-synthesized from its modes up to `order`.
    pub fn low_pass(&self, order: usize) -> FarFieldPattern {
        let b = self.modal_coefficients(order);
        let samples = self
            .directions
            .iter()
            .map(|d| evaluate_coefficients(self.dimension, &self.omega, &b, d))
            .collect();
        FarFieldPattern {
            samples,
            coefficients: Some(b),
            ..self.clone()
        }
    }

    /// Highest order the direction quadrature resolves.
    pub fn resolvable_order(&self) -> usize {
        let m = self.samples.len();
        let n = if self.dimension == 2 {
            (m / 2).saturating_sub(1)
        } else {
            // m = 2 n_θ², exact up to degree 2n_θ − 1 for products
            let nt = ((m / 2) as f64).sqrt().round() as usize;
            nt.saturating_sub(1)
        };
        n.min(MAX_ORDER - 1)
    }

    /// Coefficients `b_n`, `|n| ≤ order` (2D, stored at `n + order`), or
    /// `b_ℓ`, `ℓ ≤ order` (3D). Uses the stored coefficients when present.
    pub fn modal_coefficients(&self, order: usize) -> Vec<Complex64> {
        if let Some(c) = &self.coefficients {
            return truncate_coefficients(self.dimension, c, order);
        }
        if self.dimension == 2 {
            let ord = order as i64;
            (-ord..=ord)
                .map(|n| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for ((d, u), w) in self.directions.iter().zip(&self.samples).zip(&self.weights)
                    {
                        let theta = d[1].atan2(d[0]);
                        acc += u * Complex64::from_polar(*w, -(n as f64) * theta);
                    }
                    acc / (2.0 * PI)
                })
                .collect()
        } else {
            let mut out = vec![Complex64::new(0.0, 0.0); order + 1];
            for ((d, u), w) in self.directions.iter().zip(&self.samples).zip(&self.weights) {
                let t: f64 = d.iter().zip(&self.omega).map(|(a, b)| a * b).sum();
                let p = legendre_array(order, t.clamp(-1.0, 1.0));
                for l in 0..=order {
                    out[l] += u * (w * p[l]);
                }
            }
            for (l, v) in out.iter_mut().enumerate() {
                *v *= (2 * l + 1) as f64 / (4.0 * PI);
            }
            out
        }
    }
}

fn truncate_coefficients(dim: usize, c: &[Complex64], order: usize) -> Vec<Complex64> {
    let zero = Complex64::new(0.0, 0.0);
    if dim == 2 {
        let have = ((c.len() - 1) / 2) as i64;
        let ord = order as i64;
        (-ord..=ord)
            .map(|n| {
                if n.abs() <= have {
                    c[(n + have) as usize]
                } else {
                    zero
                }
            })
            .collect()
    } else {
        (0..=order).map(|l| c.get(l).copied().unwrap_or(zero)).collect()
    }
}

fn evaluate_coefficients(dim: usize, omega: &[f64], b: &[Complex64], d: &[f64]) -> Complex64 {
    if dim == 2 {
        let big_n = ((b.len() - 1) / 2) as i64;
        let theta = d[1].atan2(d[0]);
        (-big_n..=big_n)
            .map(|n| b[(n + big_n) as usize] * Complex64::from_polar(1.0, n as f64 * theta))
            .sum()
    } else {
        let t: f64 = d.iter().zip(omega).map(|(a, c)| a * c).sum();
        let p = legendre_array(b.len() - 1, t.clamp(-1.0, 1.0));
        b.iter().zip(&p).map(|(c, pl)| c * pl).sum()
    }
}

/// Far-field pattern of an exterior representation on `directions`.
pub fn compute_far_field(
    rep: &ExteriorRepresentation,
    directions: &Directions,
) -> Result<FarFieldPattern> {
    let dim = rep.dim();
    if directions.points.iter().any(|d| d.len() != dim) {
        return Err(Error::Domain(format!(
            "directions must have {dim} components"
        )));
    }
    let wave = rep.wave();
    let (samples, coefficients) = match rep {
        ExteriorRepresentation::Modal2d { coeffs, .. } => {
            let big_n = ((coeffs.len() - 1) / 2) as i64;
            let b: Vec<Complex64> = (-big_n..=big_n)
                .map(|n| coeffs[(n + big_n) as usize] * modal_factor_2d(wave.k, n))
                .collect();
            let s = directions
                .points
                .iter()
                .map(|d| evaluate_coefficients(2, &wave.omega, &b, d))
                .collect();
            (s, Some(b))
        }
        ExteriorRepresentation::Modal3d { coeffs, .. } => {
            let b: Vec<Complex64> = coeffs
                .iter()
                .enumerate()
                .map(|(l, c)| c * modal_factor_3d(wave.k, l))
                .collect();
            let s = directions
                .points
                .iter()
                .map(|d| evaluate_coefficients(3, &wave.omega, &b, d))
                .collect();
            (s, Some(b))
        }
        ExteriorRepresentation::LayerDensity(l) => (l.far_field(&directions.points), None),
    };
    Ok(FarFieldPattern {
        dimension: dim,
        k: wave.k,
        omega: wave.omega.clone(),
        directions: directions.points.clone(),
        weights: directions.weights.clone(),
        samples,
        coefficients,
    })
}

/// Result of [`far_to_near`].
#[derive(Debug, Clone)]
pub struct Continuation {
    pub representation: ExteriorRepresentation,
    /// Highest mode kept, `N(ε)`.
    pub truncation: usize,
    pub warnings: Vec<String>,
}

/// Amplification of noise in mode `n` when the far field is continued to
/// radius `R`: `|H_n(kR)|·√(πk/2)` in 2D, `|h_n(kR)|·k` in 3D.
pub fn mode_amplification(dim: usize, k: f64, radius: f64, nmax: usize) -> Vec<f64> {
    if dim == 2 {
        hankel_array(nmax, k * radius)
            .iter()
            .map(|h| h.norm() * (PI * k / 2.0).sqrt())
            .collect()
    } else {
        spherical_hankel_array(nmax, k * radius)
            .iter()
            .map(|h| h.norm() * k)
            .collect()
    }
}

/// Largest `N ≤ cap` with every mode `n ≤ N` amplified by at most
/// `max(1, ε^{−1/2})`.
pub fn truncation_order(dim: usize, k: f64, radius: f64, eps: f64, cap: usize) -> usize {
    if eps == 0.0 {
        return cap;
    }
    let limit = eps.powf(-0.5).max(1.0);
    let amp = mode_amplification(dim, k, radius, cap);
    let mut n = 0;
    while n < cap && amp[n + 1].is_finite() && amp[n + 1] <= limit {
        n += 1;
    }
    n
}

/// Continues a far-field pattern to a modal representation valid on
/// `|x| ≥ R`, truncated at `N(ε)`.
pub fn far_to_near(ffp: &FarFieldPattern, radius: f64, eps: f64) -> Result<Continuation> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Domain(format!(
            "continuation radius must be positive, got {radius}"
        )));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("noise level must be ≥ 0, got {eps}")));
    }
    let wave = ffp.wave()?;
    let cap = match &ffp.coefficients {
        Some(c) if ffp.dimension == 2 => (c.len() - 1) / 2,
        Some(c) => c.len() - 1,
        None => ffp.resolvable_order(),
    }
    .min(MAX_ORDER - 1);
    let n = truncation_order(ffp.dimension, ffp.k, radius, eps, cap);
    let b = ffp.modal_coefficients(n);
    let mut warnings = Vec::new();
    if n == cap {
        let peak = b.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        let tail = if ffp.dimension == 2 {
            b[0].norm().max(b[b.len() - 1].norm())
        } else {
            b[b.len() - 1].norm()
        };
        if peak > 0.0 && tail > 1e-12 * peak {
            warnings.push(format!(
                "far-to-near truncated at the cap N = {cap} with non-decaying tail \
                 (|b_N| / max|b| = {:.2e})",
                tail / peak
            ));
        }
    }
    let representation = if ffp.dimension == 2 {
        let ord = n as i64;
        let coeffs = (-ord..=ord)
            .map(|m| b[(m + ord) as usize] / modal_factor_2d(ffp.k, m))
            .collect();
        ExteriorRepresentation::Modal2d {
            wave,
            radius,
            coeffs,
        }
    } else {
        let coeffs = b
            .iter()
            .enumerate()
            .map(|(l, c)| c / modal_factor_3d(ffp.k, l))
            .collect();
        ExteriorRepresentation::Modal3d {
            wave,
            radius,
            coeffs,
        }
    };
    Ok(Continuation {
        representation,
        truncation: n,
        warnings,
    })
}

/// `α(t) = 1 / (1 + ln(ln(1/t) + e))` for `0 < t ≤ 1`.
pub fn alpha_of(t: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("α(t) needs 0 < t ≤ 1, got {t}")));
    }
    Ok(1.0 / (1.0 + ((1.0 / t).ln() + E).ln()))
}

/// `max_x̂ |r^p e^{−ikr} u^s(r x̂) − u∞(x̂)|` with `p = 1/2` (2D) or `1` (3D).
pub fn asymptotic_defect(
    rep: &ExteriorRepresentation,
    ffp: &FarFieldPattern,
    radius: f64,
) -> Result<f64> {
    let pts: Vec<Vec<f64>> = ffp
        .directions
        .iter()
        .map(|d| d.iter().map(|x| x * radius).collect())
        .collect();
    let f = evaluate_field(rep, &pts, EvalOptions::default())?;
    let scale = if ffp.dimension == 2 {
        radius.sqrt()
    } else {
        radius
    };
    let phase = Complex64::from_polar(scale, -ffp.k * radius);
    Ok(f.values
        .iter()
        .zip(&ffp.samples)
        .map(|(u, v)| (u * phase - v).norm())
        .fold(0.0, f64::max))
}
