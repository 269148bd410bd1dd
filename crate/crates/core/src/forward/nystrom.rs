//! Nyström discretization of the combined-field equation on 2D curves.
//!
//! With `n` the normal pointing out of the obstacle the boundary condition is
//! `∂_n u − iλu = 0`. Writing `u^s = (D − iηS)φ` and using the exterior
//! jump relations gives
//!
//! ```text
//! Tφ − iη(K' − ½)φ − iλ(K + ½)φ − ληSφ = −(∂_n u^i − iλu^i).
//! ```
//!
//! The equation is multiplied by the parametric speed `|z'|`, which turns
//! the hypersingular part into `d/dt S₀ d/dt + k²|z'| S(n·n φ)` and keeps the
//! rows bounded on graded corner meshes. Logarithmic kernels use the
//! product quadrature of Kress; `d/dt` is trigonometric differentiation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

use super::layer::kernel_functions;
use super::{
    BoundaryTrace, ExteriorRepresentation, ImpedanceField, IncidentWave, LayerPotential, Solution,
    SolveDiagnostics,
};
use crate::error::{Error, Result};
use crate::geometry::BoundaryGeometry;
use crate::linalg::{relative_residual, solve_checked};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const MIN_NODES: usize = 64;
/// Nodes per corner panel below which grading is considered unresolved.
const MIN_NODES_PER_PANEL: usize = 16;

#[derive(Debug, Clone, Default)]
pub struct NystromOptions {
    /// Coupling η; defaults to `k`.
    pub coupling: Option<f64>,
}

/// Discretized boundary operators, all with the quadrature weights folded in.
pub(crate) struct Operators {
    /// Single layer without the speed of the source point.
    pub s0: DMatrix<Complex64>,
    /// `S0` with `n_i·n_j` and the source speed, for the Maue term.
    pub nn: DMatrix<Complex64>,
    pub k: DMatrix<Complex64>,
    pub kp: DMatrix<Complex64>,
    pub dm: DMatrix<Complex64>,
    pub speed: Vec<f64>,
}

impl Operators {
    pub fn single_layer(&self) -> DMatrix<Complex64> {
        let mut s = self.s0.clone();
        for (j, mut col) in s.column_iter_mut().enumerate() {
            col *= Complex64::new(self.speed[j], 0.0);
        }
        s
    }

    /// `|z'| T`.
    pub fn hypersingular_scaled(&self, wavenumber: f64) -> DMatrix<Complex64> {
        let mut t = &self.dm * &self.s0 * &self.dm;
        let k2 = wavenumber * wavenumber;
        for i in 0..t.nrows() {
            for j in 0..t.ncols() {
                t[(i, j)] += self.nn[(i, j)] * (k2 * self.speed[i]);
            }
        }
        t
    }
}

/// Kress weights `R(d)` for `∫ ln(4 sin²((t−τ)/2)) f(τ) dτ` on `n` points.
fn log_weights(n: usize) -> Vec<f64> {
    let m = n / 2;
    let h = 2.0 * PI / n as f64;
    (0..n)
        .map(|d| {
            let mut s = 0.0;
            for q in 1..m {
                s += (q as f64 * d as f64 * h).cos() / q as f64;
            }
            let alt = if d % 2 == 0 { 1.0 } else { -1.0 };
            -4.0 * PI / n as f64 * s - 4.0 * PI / (n * n) as f64 * alt
        })
        .collect()
}

/// Trigonometric differentiation matrix on `n` (even) equispaced points.
fn diff_matrix(n: usize) -> DMatrix<Complex64> {
    let h = 2.0 * PI / n as f64;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(0.0, 0.0)
        } else {
            let d = i as i64 - j as i64;
            let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            Complex64::new(0.5 * sign / (d as f64 * h / 2.0).tan(), 0.0)
        }
    })
}

pub(crate) fn assemble(geom: &BoundaryGeometry, k: f64) -> Result<Operators> {
    let curve = geom.curve()?;
    let n = geom.len();
    let h = 2.0 * PI / n as f64;
    let rw = log_weights(n);
    let dz = &curve.dz;
    let ddz = &curve.ddz;
    let sp = &curve.speed;
    let i_unit = Complex64::i();

    type Row = (
        Vec<Complex64>,
        Vec<Complex64>,
        Vec<Complex64>,
        Vec<Complex64>,
    );
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = geom.node2(i);
            let mut s0 = vec![Complex64::new(0.0, 0.0); n];
            let mut nn = vec![Complex64::new(0.0, 0.0); n];
            let mut kk = vec![Complex64::new(0.0, 0.0); n];
            let mut kp = vec![Complex64::new(0.0, 0.0); n];
            let ni = geom.outward2(i);
            for j in 0..n {
                let dij = (i as i64 - j as i64).rem_euclid(n as i64) as usize;
                if i == j {
                    let a1 = -1.0 / (4.0 * PI);
                    let a2 = Complex64::new(
                        -EULER_GAMMA / (2.0 * PI) - (k * sp[i] / 2.0).ln() / (2.0 * PI),
                        0.25,
                    );
                    s0[j] = a1 * rw[0] + h * a2;
                    nn[j] = s0[j] * sp[j];
                    let curv = (dz[i][1] * ddz[i][0] - dz[i][0] * ddz[i][1])
                        / (4.0 * PI * sp[i] * sp[i]);
                    kk[j] = Complex64::new(h * curv, 0.0);
                    kp[j] = kk[j];
                    continue;
                }
                let yj = geom.node2(j);
                let d = [xi[0] - yj[0], xi[1] - yj[1]];
                let r = d[0].hypot(d[1]);
                let (j0, j1, h0, h1) = kernel_functions(k * r);
                let ds = (i as f64 - j as f64) * h / 2.0;
                let lg = (4.0 * ds.sin().powi(2)).ln();

                let phi = i_unit / 4.0 * h0;
                let a1 = -j0 / (4.0 * PI);
                let a2 = phi - a1 * lg;
                s0[j] = a1 * rw[dij] + h * a2;
                let nj = geom.outward2(j);
                nn[j] = s0[j] * ((ni[0] * nj[0] + ni[1] * nj[1]) * sp[j]);

                // n_j·d·|z'_j| and n_i·d·|z'_j|
                let cross_j = dz[j][1] * d[0] - dz[j][0] * d[1];
                let cross_i = (ni[0] * d[0] + ni[1] * d[1]) * sp[j];
                let l = i_unit * k / 4.0 * h1 * cross_j / r;
                let l1 = -k / (4.0 * PI) * j1 * cross_j / r;
                kk[j] = l1 * rw[dij] + h * (l - l1 * lg);
                let lp = -i_unit * k / 4.0 * h1 * cross_i / r;
                let lp1 = k / (4.0 * PI) * j1 * cross_i / r;
                kp[j] = lp1 * rw[dij] + h * (lp - lp1 * lg);
            }
            (s0, nn, kk, kp)
        })
        .collect();

    let mut s0 = DMatrix::zeros(n, n);
    let mut nn = DMatrix::zeros(n, n);
    let mut kk = DMatrix::zeros(n, n);
    let mut kp = DMatrix::zeros(n, n);
    for (i, (a, b, c, d)) in rows.into_iter().enumerate() {
        for j in 0..n {
            s0[(i, j)] = a[j];
            nn[(i, j)] = b[j];
            kk[(i, j)] = c[j];
            kp[(i, j)] = d[j];
        }
    }
    let ops = Operators {
        s0,
        nn,
        k: kk,
        kp,
        dm: diff_matrix(n),
        speed: sp.clone(),
    };
    if ops.s0.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidGeometry(
            "non-finite kernel values: nodes coincide".into(),
        ));
    }
    Ok(ops)
}

/// `u^i` and `∂_n u^i` (outward normal) at the nodes.
fn incident_trace(geom: &BoundaryGeometry, wave: &IncidentWave) -> (Vec<Complex64>, Vec<Complex64>) {
    (0..geom.len())
        .map(|r| {
            let x = geom.node2(r);
            let nr = geom.outward2(r);
            let g = wave.gradient(&x);
            (wave.value(&x), g[0] * nr[0] + g[1] * nr[1])
        })
        .unzip()
}

/// Total field `u` and `∂_ν u` (ν inward) on the boundary for
/// `u^s = (D − iηS)φ`.
fn density_trace(
    geom: &BoundaryGeometry,
    wave: &IncidentWave,
    eta: f64,
    ops: &Operators,
    phi: &DVector<Complex64>,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let i = Complex64::i();
    let sp = &ops.speed;
    let (uinc, dn_uinc) = incident_trace(geom, wave);
    let k_phi = &ops.k * phi;
    let kp_phi = &ops.kp * phi;
    let s_phi = ops.single_layer() * phi;
    let t_phi = ops.hypersingular_scaled(wave.k) * phi;
    (0..geom.len())
        .map(|r| {
            let u = uinc[r] + k_phi[r] + phi[r] * 0.5 - i * eta * s_phi[r];
            let dn_scat = t_phi[r] / sp[r] - i * eta * (kp_phi[r] - phi[r] * 0.5);
            (u, -(dn_uinc[r] + dn_scat))
        })
        .unzip()
}

/// Combined-field Nyström solve on a 2D curve.
pub fn solve_nystrom_2d(
    geom: &Arc<BoundaryGeometry>,
    wave: &IncidentWave,
    impedance: &ImpedanceField,
    opts: &NystromOptions,
) -> Result<Solution> {
    if geom.dim() != 2 {
        return Err(Error::Unsupported(format!(
            "Nyström solver is two-dimensional, got {}",
            geom.spec.name()
        )));
    }
    wave.validate(2)?;
    let n = geom.len();
    if n < MIN_NODES {
        return Err(Error::Domain(format!(
            "Nyström solver needs n ≥ {MIN_NODES}, got {n}"
        )));
    }
    let k = wave.k;
    let eta = opts.coupling.unwrap_or(k);
    let lambda = impedance.sample(geom, wave)?;
    if lambda.iter().any(|l| !l.is_finite()) {
        return Err(Error::Validation("impedance has non-finite samples".into()));
    }
    let mut warnings = Vec::new();
    if !geom.corners.is_empty() && n / geom.corners.len() < MIN_NODES_PER_PANEL {
        warnings.push(format!(
            "corner grading unresolved: {} nodes per panel (want ≥ {MIN_NODES_PER_PANEL})",
            n / geom.corners.len()
        ));
    }

    let ops = assemble(geom, k)?;
    let sp = &ops.speed;
    let t_scaled = ops.hypersingular_scaled(k);
    let s = ops.single_layer();
    let i = Complex64::i();

    let mut a = t_scaled;
    for r in 0..n {
        let l = lambda[r];
        for c in 0..n {
            let v = -i * eta * ops.kp[(r, c)] - i * l * ops.k[(r, c)] - l * eta * s[(r, c)];
            a[(r, c)] += v * sp[r];
        }
        a[(r, r)] += (i * eta / 2.0 - i * l / 2.0) * sp[r];
    }
    let (uinc, dn_uinc) = incident_trace(geom, wave);
    let b = DVector::from_fn(n, |r, _| {
        -(dn_uinc[r] - i * lambda[r] * uinc[r]) * sp[r]
    });
    let (phi, cond) = solve_checked(&a, &b)?;
    let residual = relative_residual(&a, &phi, &b);

    let (u, dnu) = density_trace(geom, wave, eta, &ops, &phi);

    Ok(Solution {
        trace: BoundaryTrace {
            geometry: geom.spec.clone(),
            wave: wave.clone(),
            u,
            dnu,
        },
        representation: ExteriorRepresentation::LayerDensity(LayerPotential {
            wave: wave.clone(),
            geometry: geom.clone(),
            coupling: eta,
            density: phi.iter().copied().collect(),
        }),
        diagnostics: SolveDiagnostics {
            condition: Some(cond),
            residual,
            truncation: None,
            warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve_modal, ModalOptions};
    use crate::geometry::{build_geometry, GeometrySpec};

    fn far(rep: &ExteriorRepresentation, m: usize) -> Vec<Complex64> {
        let dirs = crate::farfield::Directions::circle(m);
        crate::farfield::compute_far_field(rep, &dirs).unwrap().samples
    }

    fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn log_weights_integrate_cosines() {
        // ∫ ln(4 sin²(τ/2)) cos(mτ) dτ = −2π/m
        let n = 32;
        let w = log_weights(n);
        for m in 1..8 {
            let s: f64 = (0..n)
                .map(|j| w[j] * (m as f64 * 2.0 * PI * j as f64 / n as f64).cos())
                .sum();
            assert!((s + 2.0 * PI / m as f64).abs() < 1e-12, "{m} {s}");
        }
    }

    #[test]
    fn circle_matches_modal() {
        let geom = Arc::new(build_geometry(&GeometrySpec::Circle2d { radius: 1.0, n: 128 }).unwrap());
        let wave = IncidentWave::new(2.0, vec![1.0, 0.0]).unwrap();
        let imp = ImpedanceField::constant(1.5);
        let a = solve_nystrom_2d(&geom, &wave, &imp, &NystromOptions::default()).unwrap();
        let b = solve_modal(&geom, &wave, &imp, &ModalOptions::default()).unwrap();
        let fa = far(&a.representation, 64);
        let fb = far(&b.representation, 64);
        assert!(rel_l2(&fa, &fb) < 1e-8, "{}", rel_l2(&fa, &fb));
        let lam = imp.sample(&geom, &wave).unwrap();
        assert!(a.trace.impedance_residual(&lam) < 1e-8);
        let du: f64 = a
            .trace
            .u
            .iter()
            .zip(&b.trace.u)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(du < 1e-8, "{du}");
    }

    #[test]
    fn circle_trace_is_mirror_symmetric() {
        let n = 128;
        let geom = Arc::new(build_geometry(&GeometrySpec::Circle2d { radius: 1.0, n }).unwrap());
        let wave = IncidentWave::new(1.0, vec![1.0, 0.0]).unwrap();
        let s = solve_nystrom_2d(&geom, &wave, &ImpedanceField::constant(1.0), &Default::default())
            .unwrap();
        let asym = (1..n)
            .map(|j| (s.trace.u[j] - s.trace.u[n - j]).norm())
            .fold(0.0, f64::max);
        assert!(asym < 1e-12, "{asym}");
    }

    #[test]
    fn star_polygon_converges() {
        let wave = IncidentWave::new(1.0, vec![1.0, 0.0]).unwrap();
        let imp = ImpedanceField::constant(1.0);
        let run = |n| {
            let g = Arc::new(
                build_geometry(&GeometrySpec::StarPolygon2d {
                    arms: 5,
                    amplitude: 0.3,
                    n,
                })
                .unwrap(),
            );
            let s = solve_nystrom_2d(&g, &wave, &imp, &Default::default()).unwrap();
            far(&s.representation, 32)
        };
        let a = run(160);
        let b = run(320);
        let c = run(640);
        let e1 = rel_l2(&a, &c);
        let e2 = rel_l2(&b, &c);
        assert!(e2 < 1e-3, "{e1} {e2}");
        assert!(e2 < e1, "{e1} {e2}");
    }

    #[test]
    fn rejects_coarse_and_spherical() {
        let wave = IncidentWave::new(1.0, vec![1.0, 0.0]).unwrap();
        let g = Arc::new(build_geometry(&GeometrySpec::Kite2d { n: 32 }).unwrap());
        assert!(solve_nystrom_2d(&g, &wave, &ImpedanceField::constant(1.0), &Default::default())
            .is_err());
    }
}
