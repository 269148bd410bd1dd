//! Combined layer potential `u^s = (D − iηS)φ` on a 2D curve.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use super::{FieldSamples, IncidentWave};
use crate::error::{Error, Result};
use crate::geometry::{build_geometry, refine_curve, BoundaryGeometry, GeometrySpec};
use crate::special::{bessel_jy01, hankel01};

/// Points closer than this many node spacings are evaluated on an
/// upsampled density.
const NEAR_SPACINGS: f64 = 5.0;
const MAX_UPSAMPLE: usize = 128;

/// Density of the combined potential, sampled at the geometry nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StoredLayer", into = "StoredLayer")]
pub struct LayerPotential {
    pub wave: IncidentWave,
    pub geometry: Arc<BoundaryGeometry>,
    /// Coupling η of the single layer.
    pub coupling: f64,
    pub density: Vec<Complex64>,
}

#[derive(Serialize, Deserialize, Clone)]
struct StoredLayer {
    wave: IncidentWave,
    geometry: GeometrySpec,
    coupling: f64,
    density: Vec<Complex64>,
}

impl From<LayerPotential> for StoredLayer {
    fn from(l: LayerPotential) -> Self {
        StoredLayer {
            wave: l.wave,
            geometry: l.geometry.spec.clone(),
            coupling: l.coupling,
            density: l.density,
        }
    }
}

impl TryFrom<StoredLayer> for LayerPotential {
    type Error = Error;

    fn try_from(s: StoredLayer) -> Result<Self> {
        let geometry = Arc::new(build_geometry(&s.geometry)?);
        if geometry.dim() != 2 || s.density.len() != geometry.len() {
            return Err(Error::Consistency(format!(
                "layer density has {} values for {} nodes",
                s.density.len(),
                geometry.len()
            )));
        }
        Ok(LayerPotential {
            wave: s.wave,
            geometry,
            coupling: s.coupling,
            density: s.density,
        })
    }
}

/// `e^{iπ/4} / √(8πk)`, the 2D far-field constant of `(i/4)H₀(k|x−y|)`.
pub(crate) fn farfield_constant_2d(k: f64) -> Complex64 {
    Complex64::from_polar(1.0, PI / 4.0) / (8.0 * PI * k).sqrt()
}

impl LayerPotential {
    /// `u∞(x̂)` for unit directions `x̂`.
    pub fn far_field(&self, directions: &[Vec<f64>]) -> Vec<Complex64> {
        let k = self.wave.k;
        let g = farfield_constant_2d(k);
        let geom = &self.geometry;
        directions
            .par_iter()
            .map(|d| {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..geom.len() {
                    let y = geom.node2(j);
                    let n = geom.outward2(j);
                    let phase = Complex64::from_polar(1.0, -k * (d[0] * y[0] + d[1] * y[1]));
                    let factor =
                        Complex64::new(0.0, -k * (d[0] * n[0] + d[1] * n[1]) - self.coupling);
                    acc += factor * phase * self.density[j] * geom.weights[j];
                }
                g * acc
            })
            .collect()
    }

    /// The same potential on a geometry with `factor` times as many nodes,
    /// density interpolated trigonometrically in the curve parameter.
    pub fn refined(&self, factor: usize) -> Result<LayerPotential> {
        if factor <= 1 {
            return Ok(self.clone());
        }
        let n = self.geometry.len();
        let fine = Arc::new(refine_curve(&self.geometry, n * factor)?);
        let coarse_offset = self.geometry.curve()?.offset;
        let fine_offset = fine.curve()?.offset;
        let density = upsample(&self.density, factor, fine_offset - coarse_offset);
        Ok(LayerPotential {
            wave: self.wave.clone(),
            geometry: fine,
            coupling: self.coupling,
            density,
        })
    }

    pub(crate) fn evaluate(&self, points: &[Vec<f64>], gradient: bool) -> Result<FieldSamples> {
        let geom = &self.geometry;
        let spacing = geom.max_spacing();
        let mut warnings = Vec::new();
        // group points by the upsampling they need
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            if geom.contains(p) {
                return Err(Error::Domain(format!(
                    "point ({}, {}) lies inside the obstacle",
                    p[0], p[1]
                )));
            }
            let dist = (0..geom.len())
                .map(|j| {
                    let y = geom.node2(j);
                    (p[0] - y[0]).hypot(p[1] - y[1])
                })
                .fold(f64::INFINITY, f64::min);
            if dist < 1e-12 * geom.diam {
                return Err(Error::Domain(format!(
                    "point ({}, {}) lies on the boundary",
                    p[0], p[1]
                )));
            }
            let need = NEAR_SPACINGS * spacing / dist;
            let factor = if need <= 1.0 {
                1
            } else {
                (need.ceil() as usize).next_power_of_two().min(MAX_UPSAMPLE)
            };
            if dist < 2.0 * spacing / factor as f64 {
                warnings.push(format!(
                    "point ({:.6}, {:.6}) at distance {dist:.3e} from the boundary: \
                     layer evaluation may be inaccurate",
                    p[0], p[1]
                ));
            }
            groups.entry(factor).or_default().push(i);
        }
        let mut values = vec![Complex64::new(0.0, 0.0); points.len()];
        let mut grads = vec![Vec::new(); if gradient { points.len() } else { 0 }];
        for (factor, idx) in groups {
            let layer = self.refined(factor)?;
            let out: Vec<(Complex64, Option<[Complex64; 2]>)> = idx
                .par_iter()
                .map(|&i| layer.point_value(&points[i], gradient))
                .collect();
            for (&i, (v, g)) in idx.iter().zip(out) {
                values[i] = v;
                if let Some(g) = g {
                    grads[i] = g.to_vec();
                }
            }
        }
        Ok(FieldSamples {
            values,
            gradients: gradient.then_some(grads),
            warnings,
        })
    }

    fn point_value(&self, x: &[f64], gradient: bool) -> (Complex64, Option<[Complex64; 2]>) {
        let k = self.wave.k;
        let eta = self.coupling;
        let geom = &self.geometry;
        let i = Complex64::i();
        let mut u = Complex64::new(0.0, 0.0);
        let mut g = [Complex64::new(0.0, 0.0); 2];
        for j in 0..geom.len() {
            let y = geom.node2(j);
            let n = geom.outward2(j);
            let d = [x[0] - y[0], x[1] - y[1]];
            let r = d[0].hypot(d[1]);
            let (h0, h1) = hankel01(k * r);
            let nd = n[0] * d[0] + n[1] * d[1];
            let w = self.density[j] * geom.weights[j];
            // ∂Φ/∂n_y − iηΦ
            let dl = i * k / 4.0 * h1 * nd / r;
            let sl = i / 4.0 * h0;
            u += (dl - i * eta * sl) * w;
            if gradient {
                let f = h1 / r;
                let df = (k * r * h0 - 2.0 * h1) / (r * r);
                for c in 0..2 {
                    let grad_sl = -i * k / 4.0 * h1 * d[c] / r;
                    let grad_dl = i * k / 4.0 * (df * d[c] / r * nd + f * n[c]);
                    g[c] += (grad_dl - i * eta * grad_sl) * w;
                }
            }
        }
        (u, gradient.then_some(g))
    }
}

/// Trigonometric interpolation of `f` (samples at `off + 2πj/n`) onto
/// `factor·n` points starting at `off + shift`.
pub(crate) fn upsample(f: &[Complex64], factor: usize, shift: f64) -> Vec<Complex64> {
    let n = f.len();
    let big = n * factor;
    let mut planner = FftPlanner::<f64>::new();
    let mut spec = f.to_vec();
    planner.plan_fft_forward(n).process(&mut spec);
    let mut out = vec![Complex64::new(0.0, 0.0); big];
    let half = n / 2;
    for (q, c) in spec.iter().enumerate() {
        let qs = if q < half { q as i64 } else { q as i64 - n as i64 };
        if n.is_multiple_of(2) && q == half {
            // split the Nyquist mode symmetrically
            let a = *c * 0.5;
            let h = half as i64;
            out[h as usize] += a * Complex64::from_polar(1.0, h as f64 * shift);
            out[big - half] += a * Complex64::from_polar(1.0, -(h as f64) * shift);
            continue;
        }
        let slot = qs.rem_euclid(big as i64) as usize;
        out[slot] += *c * Complex64::from_polar(1.0, qs as f64 * shift);
    }
    planner.plan_fft_inverse(big).process(&mut out);
    let scale = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// `(J₀, J₁, H₀, H₁)` at `x`, shared by the kernel assembly.
pub(crate) fn kernel_functions(x: f64) -> (f64, f64, Complex64, Complex64) {
    let (j0, j1, y0, y1) = bessel_jy01(x);
    (j0, j1, Complex64::new(j0, y0), Complex64::new(j1, y1))
}
