//! Impedance recovery and the weighted interpolation estimate.
//!
//! Pointwise recovery uses `λ = (i/u) ∂u/∂ν` on the nodes where `|u|` is not
//! small. From far-field data the scattered field is first fitted by point
//! sources on the scaled boundary `q·∂D` (Tikhonov-regularized least squares,
//! parameter by the discrepancy principle), then differentiated on `∂D`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::farfield::{truncation_order, FarFieldPattern};
use crate::forward::{BoundaryTrace, IncidentWave};
use crate::geometry::BoundaryGeometry;
use crate::special::hankel01;

/// Recovered impedance on the mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceEstimate {
    /// `λ̂` at masked nodes, `None` elsewhere.
    pub values: Vec<Option<f64>>,
    pub mask: Vec<bool>,
    /// Relative threshold: the mask is `|u| ≥ threshold · max|u|`.
    pub threshold: f64,
    /// Largest discarded `|Im(i ∂_ν u / u)|` on the mask.
    pub imag_residue: f64,
    pub mask_fraction: f64,
    /// Set when the data carry no information and the prior midpoint is
    /// returned.
    #[serde(default)]
    pub full_uncertainty: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<FitDiagnostics>,
}

/// How the far-field fit went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub sources: usize,
    /// Tikhonov parameter α (in units of σ_max²).
    pub alpha: f64,
    /// `‖A a − b‖` in the far-field L² norm.
    pub residual: f64,
    pub data_norm: f64,
    /// Singular values above `√α`.
    pub effective_rank: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    /// Highest far-field mode kept before the fit.
    #[serde(default)]
    pub modes: Option<usize>,
}

impl ImpedanceEstimate {
    /// Fills `sup_error` and `l2_error` against reference nodal values; the
    /// L² error is integrated over the mask with the quadrature weights.
    pub fn compare(&mut self, reference: &[f64], weights: &[f64]) -> Result<()> {
        if reference.len() != self.values.len() || weights.len() != self.values.len() {
            return Err(Error::Consistency(format!(
                "reference has {} values, estimate {}",
                reference.len(),
                self.values.len()
            )));
        }
        let mut sup = 0.0_f64;
        let mut l2 = 0.0;
        for ((v, r), w) in self.values.iter().zip(reference).zip(weights) {
            if let Some(v) = v {
                let e = (v - r).abs();
                sup = sup.max(e);
                l2 += w * e * e;
            }
        }
        self.sup_error = Some(sup);
        self.l2_error = Some(l2.sqrt());
        Ok(())
    }

    fn constant(n: usize, value: f64, threshold: f64) -> Self {
        ImpedanceEstimate {
            values: vec![Some(value); n],
            mask: vec![true; n],
            threshold,
            imag_residue: 0.0,
            mask_fraction: 1.0,
            full_uncertainty: true,
            sup_error: None,
            l2_error: None,
            diagnostics: None,
        }
    }
}

/// `λ̂ = Re[i ∂_ν u / u]` on `{|u| ≥ threshold · max|u|}`.
pub fn impedance_from_trace(trace: &BoundaryTrace, threshold: f64) -> Result<ImpedanceEstimate> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::Domain(format!(
            "mask threshold must be positive, got {threshold}"
        )));
    }
    let peak = trace.u.iter().fold(0.0_f64, |m, u| m.max(u.norm()));
    let cut = threshold * peak;
    let mut values = Vec::with_capacity(trace.u.len());
    let mut mask = Vec::with_capacity(trace.u.len());
    let mut imag: f64 = 0.0;
    for (u, d) in trace.u.iter().zip(&trace.dnu) {
        if peak > 0.0 && u.norm() >= cut {
            let q = Complex64::i() * d / u;
            imag = imag.max(q.im.abs());
            values.push(Some(q.re));
            mask.push(true);
        } else {
            values.push(None);
            mask.push(false);
        }
    }
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::NoData(
            "no boundary node has |u| above the mask threshold".into(),
        ));
    }
    Ok(ImpedanceEstimate {
        mask_fraction: count as f64 / mask.len() as f64,
        values,
        mask,
        threshold,
        imag_residue: imag,
        full_uncertainty: false,
        sup_error: None,
        l2_error: None,
        diagnostics: None,
    })
}

/// Regularization settings for [`reconstruct_from_farfield`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    /// Sources sit on `q·∂D`.
    pub q: f64,
    /// Number of point sources; `None` picks `min(#nodes, 2·#directions)`.
    #[serde(default)]
    pub sources: Option<usize>,
    /// Target residual is `discrepancy · ε`.
    pub discrepancy: f64,
    /// Smallest admissible `α / σ_max²`, also the value used at `ε = 0`.
    pub alpha_floor: f64,
    pub mask_threshold: f64,
    /// A-priori bounds `λ₀`, `Λ`; their midpoint is the no-information answer.
    pub lambda0: f64,
    pub lambda_bound: f64,
}

impl Default for RegParams {
    fn default() -> Self {
        RegParams {
            q: 0.6,
            sources: None,
            discrepancy: 1.5,
            alpha_floor: 1e-28,
            mask_threshold: 0.1,
            lambda0: 0.1,
            lambda_bound: 10.0,
        }
    }
}

/// Free-space fundamental solution and its gradient in `x`.
fn fundamental(dim: usize, k: f64, x: &[f64], y: &[f64]) -> (Complex64, [Complex64; 3]) {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let i = Complex64::i();
    let mut g = [Complex64::new(0.0, 0.0); 3];
    if dim == 2 {
        let (h0, h1) = hankel01(k * r);
        let f = -i * k / 4.0 * h1 / r;
        for c in 0..2 {
            g[c] = f * d[c];
        }
        (i / 4.0 * h0, g)
    } else {
        let phi = Complex64::from_polar(1.0 / (4.0 * PI * r), k * r);
        let f = phi * (i * k - 1.0 / r) / r;
        for c in 0..3 {
            g[c] = f * d[c];
        }
        (phi, g)
    }
}

/// Far field of a unit point source at `y` in direction `x̂`.
fn source_far_field(dim: usize, k: f64, xhat: &[f64], y: &[f64]) -> Complex64 {
    let phase = Complex64::from_polar(1.0, -k * xhat.iter().zip(y).map(|(a, b)| a * b).sum::<f64>());
    if dim == 2 {
        crate::forward::farfield_constant_2d(k) * phase
    } else {
        phase / (4.0 * PI)
    }
}

/// Fits the far field by point sources on `q·∂D`, rebuilds `u` and `∂_ν u`
/// on the boundary and applies [`impedance_from_trace`].
pub fn reconstruct_from_farfield(
    ffp: &FarFieldPattern,
    geom: &Arc<BoundaryGeometry>,
    wave: &IncidentWave,
    eps: f64,
    reg: &RegParams,
) -> Result<ImpedanceEstimate> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("noise level must be ≥ 0, got {eps}")));
    }
    if !(reg.q > 0.0 && reg.q < 1.0) {
        return Err(Error::Domain(format!(
            "source scaling q must lie in (0, 1), got {}",
            reg.q
        )));
    }
    let dim = geom.dim();
    if ffp.dimension != dim || (ffp.k - wave.k).abs() > 1e-14 * wave.k {
        return Err(Error::Consistency(
            "far-field pattern does not match the geometry or wave".into(),
        ));
    }
    let k = wave.k;
    // drop modes whose noise the continuation to ∂D would amplify beyond ε^{1/2}
    let inner = geom
        .nodes
        .iter()
        .map(|p| p[..dim].iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min);
    let cap = ffp.resolvable_order();
    let modes = truncation_order(dim, k, inner, eps, cap);
    let filtered;
    let ffp = if modes < cap {
        filtered = ffp.low_pass(modes);
        &filtered
    } else {
        ffp
    };
    let m = ffp.samples.len();
    let n_nodes = geom.len();
    let n_src = reg.sources.unwrap_or((2 * m).min(n_nodes)).clamp(1, n_nodes);
    let sources: Vec<Vec<f64>> = (0..n_src)
        .map(|j| {
            let p = geom.nodes[j * n_nodes / n_src];
            p[..dim].iter().map(|x| reg.q * x).collect()
        })
        .collect();

    let sw: Vec<f64> = ffp.weights.iter().map(|w| w.sqrt()).collect();
    let b = DVector::from_fn(m, |i, _| ffp.samples[i] * sw[i]);
    let data_norm = b.norm();
    let target = reg.discrepancy * eps;
    if data_norm <= target {
        let mid = 0.5 * (reg.lambda0 + reg.lambda_bound);
        return Ok(ImpedanceEstimate::constant(n_nodes, mid, reg.mask_threshold));
    }

    let a = DMatrix::from_fn(m, n_src, |i, j| {
        source_far_field(dim, k, &ffp.directions[i], &sources[j]) * sw[i]
    });
    let svd = a.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => {
            return Err(Error::ReconstructionFailed(
                "singular value decomposition did not converge".into(),
            ))
        }
    };
    let sigma = svd.singular_values;
    let smax = sigma.iter().fold(0.0_f64, |a, b| a.max(*b));
    if !(smax > 0.0) {
        return Err(Error::ReconstructionFailed(format!(
            "far-field source matrix is zero ({m} directions, {n_src} sources)"
        )));
    }
    let beta = u.adjoint() * &b;
    let perp2 = (data_norm * data_norm - beta.norm_squared()).max(0.0);
    let residual = |alpha: f64| -> f64 {
        let s: f64 = sigma
            .iter()
            .zip(beta.iter())
            .map(|(s, bt)| (alpha / (s * s + alpha)).powi(2) * bt.norm_sqr())
            .sum();
        (s + perp2).sqrt()
    };
    let floor = reg.alpha_floor * smax * smax;
    let alpha = if eps == 0.0 || residual(floor) >= target {
        floor
    } else {
        // residual grows with α; bisect in log α
        let (mut lo, mut hi) = (floor.ln(), (smax * smax * 1e6).ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid.exp()) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo.exp()
    };
    let coef: DVector<Complex64> = {
        let mut c = DVector::zeros(n_src);
        for (idx, s) in sigma.iter().enumerate() {
            let f = s / (s * s + alpha);
            let row = vt.row(idx);
            for j in 0..n_src {
                c[j] += (beta[idx] * f) * row[j].conj();
            }
        }
        c
    };
    if coef.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::ReconstructionFailed(format!(
            "regularized solution is not finite (α = {alpha:e}, σ_max = {smax:e})"
        )));
    }
    let effective_rank = sigma.iter().filter(|s| **s * **s > alpha).count();
    let sigma_min = sigma.iter().fold(f64::INFINITY, |a, b| a.min(*b));

    let rows: Vec<(Complex64, Complex64)> = (0..n_nodes)
        .into_par_iter()
        .map(|i| {
            let x = &geom.nodes[i][..dim];
            let nu = &geom.normals[i][..dim];
            let mut us = Complex64::new(0.0, 0.0);
            let mut dn = Complex64::new(0.0, 0.0);
            for (y, c) in sources.iter().zip(coef.iter()) {
                let (phi, g) = fundamental(dim, k, x, y);
                us += c * phi;
                dn += c * (0..dim).map(|d| g[d] * nu[d]).sum::<Complex64>();
            }
            let gi = wave.gradient(x);
            let dn_inc: Complex64 = gi.iter().zip(nu).map(|(g, n)| g * n).sum();
            (us + wave.value(x), dn + dn_inc)
        })
        .collect();
    let trace = BoundaryTrace {
        geometry: geom.spec.clone(),
        wave: wave.clone(),
        u: rows.iter().map(|r| r.0).collect(),
        dnu: rows.iter().map(|r| r.1).collect(),
    };
    let mut est = impedance_from_trace(&trace, reg.mask_threshold)?;
    est.diagnostics = Some(FitDiagnostics {
        sources: n_src,
        alpha: alpha / (smax * smax),
        residual: residual(alpha),
        data_norm,
        effective_rank,
        sigma_max: smax,
        sigma_min,
        modes: Some(modes),
    });
    Ok(est)
}

/// Result of [`weighted_interpolation_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationBound {
    /// Minimum of `B(r)` over the grid.
    pub bound: f64,
    pub r_used: f64,
    /// `r* = (4K)^{1/K} |ln(ε/E)|^{−1/K}` when `ε < E` and `r* ∈ (0, r₁)`.
    pub paper_r: Option<f64>,
    pub paper_bound: Option<f64>,
}

/// `B(r) = M_w e^{2K r^{−K}} ε + E r^α`.
pub fn interpolation_bound_at(eps: f64, e: f64, m_w: f64, k: f64, alpha: f64, r: f64) -> f64 {
    let noise = if eps == 0.0 {
        0.0
    } else {
        m_w * (2.0 * k * r.powf(-k) + eps.ln()).exp()
    };
    noise + e * r.powf(alpha)
}

/// Number of grid points per decade of `r`.
const GRID_PER_DECADE: usize = 400;
const GRID_DECADES: usize = 12;

/// Minimum of `B(r)` over a logarithmic grid on `[r₁·10⁻¹², r₁]`; every grid
/// value is itself a valid bound.
pub fn weighted_interpolation_bound(
    eps: f64,
    e: f64,
    m_w: f64,
    k: f64,
    alpha: f64,
    r1: f64,
) -> Result<InterpolationBound> {
    weighted_interpolation_bound_grid(eps, e, m_w, k, alpha, r1, GRID_PER_DECADE * GRID_DECADES)
}

/// [`weighted_interpolation_bound`] with an explicit grid size.
pub fn weighted_interpolation_bound_grid(
    eps: f64,
    e: f64,
    m_w: f64,
    k: f64,
    alpha: f64,
    r1: f64,
    points: usize,
) -> Result<InterpolationBound> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("ε must be ≥ 0, got {eps}")));
    }
    for (name, v) in [("E", e), ("M_w", m_w), ("K", k), ("r1", r1)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("α must lie in (0, 1], got {alpha}")));
    }
    let points = points.max(2);
    let lo = (r1 * 10f64.powi(-(GRID_DECADES as i32))).ln();
    let hi = r1.ln();
    let mut best = (f64::INFINITY, r1);
    for j in 0..points {
        let r = (lo + (hi - lo) * j as f64 / (points - 1) as f64).exp();
        let b = interpolation_bound_at(eps, e, m_w, k, alpha, r);
        if b < best.0 {
            best = (b, r);
        }
    }
    let (paper_r, paper_bound) = if eps > 0.0 && eps < e {
        let r = (4.0 * k).powf(1.0 / k) * (eps / e).ln().abs().powf(-1.0 / k);
        if r > 0.0 && r < r1 {
            (Some(r), Some(interpolation_bound_at(eps, e, m_w, k, alpha, r)))
        } else {
            (None, None)
        }
    } else {
        (None, None)
    };
    Ok(InterpolationBound {
        bound: best.0,
        r_used: best.1,
        paper_r,
        paper_bound,
    })
}

/// `η(t) = C (ln 1/t)^{−θ}` for `0 < t < 1`.
pub fn eta(t: f64, c: f64, theta: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!("η(t) needs 0 < t < 1, got {t}")));
    }
    if !(c > 0.0 && theta > 0.0) {
        return Err(Error::Domain(format!(
            "η needs C > 0 and θ > 0, got C = {c}, θ = {theta}"
        )));
    }
    Ok(c * (1.0 / t).ln().powf(-theta))
}

/// `η(η(t))`; fails when `η(t) ∉ (0, 1)`.
pub fn eta_eta(t: f64, c: f64, theta: f64) -> Result<f64> {
    eta(eta(t, c, theta)?, c, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::farfield::{compute_far_field, Directions};
    use crate::forward::{solve_modal, ImpedanceField, ModalOptions};
    use crate::geometry::{build_geometry, GeometrySpec};
    use std::f64::consts::E;

    #[test]
    fn eta_examples() {
        assert!((eta(1.0 / E, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((eta(E.powi(-4), 1.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        let ee = eta_eta(E.powi(-4), 1.0, 1.0).unwrap();
        assert!((ee - 1.0 / 4f64.ln()).abs() < 1e-15);
        assert!((ee - 0.7213475).abs() < 1e-7);
        assert!(eta(1.0, 1.0, 1.0).is_err());
        // slower modulus for small t
        let t = 1e-20;
        assert!(eta_eta(t, 1.0, 1.0).unwrap() > eta(t, 1.0, 1.0).unwrap());
    }

    #[test]
    fn worked_interpolation_example() {
        let b = weighted_interpolation_bound(1e-6, 1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        let r = b.paper_r.unwrap();
        assert!((r - 4.0 / 1e6f64.ln()).abs() < 1e-12);
        assert!((b.paper_bound.unwrap() - 0.290529).abs() < 1e-5);
        assert!(b.bound <= b.paper_bound.unwrap());

        let c = weighted_interpolation_bound(1.0, 1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        assert!((c.r_used - 0.5).abs() < 1e-15);
        assert!((c.bound - (4f64.exp() + 0.5)).abs() < 1e-9);

        let coarse = weighted_interpolation_bound_grid(0.0, 1.0, 1.0, 1.0, 1.0, 0.5, 100).unwrap();
        let fine = weighted_interpolation_bound_grid(0.0, 1.0, 1.0, 1.0, 1.0, 0.5, 10000).unwrap();
        assert!(fine.bound <= coarse.bound && fine.bound < 1e-11);
    }

    fn circle_trace(lambda: f64) -> BoundaryTrace {
        let g = Arc::new(build_geometry(&GeometrySpec::Circle2d { radius: 1.0, n: 128 }).unwrap());
        let w = IncidentWave::new(1.0, vec![1.0, 0.0]).unwrap();
        solve_modal(&g, &w, &ImpedanceField::constant(lambda), &ModalOptions::default())
            .unwrap()
            .trace
    }

    #[test]
    fn pointwise_formula_on_modal_trace() {
        let t = circle_trace(1.5);
        let est = impedance_from_trace(&t, 0.1).unwrap();
        for v in est.values.iter().flatten() {
            assert!((v - 1.5).abs() < 1e-10);
        }
        let mut rotated = t.clone();
        let ph = Complex64::from_polar(1.0, 0.7);
        rotated.u.iter_mut().for_each(|u| *u *= ph);
        rotated.dnu.iter_mut().for_each(|u| *u *= ph);
        let est2 = impedance_from_trace(&rotated, 0.1).unwrap();
        for (a, b) in est.values.iter().zip(&est2.values) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
        }
        assert!(impedance_from_trace(&t, 0.0).is_err());
        let mut dead = t;
        dead.u.iter_mut().for_each(|u| *u = Complex64::new(0.0, 0.0));
        assert!(matches!(impedance_from_trace(&dead, 0.1), Err(Error::NoData(_))));
    }

    #[test]
    fn smaller_noise_does_not_hurt_on_average() {
        use crate::probes::add_noise;
        use rand::SeedableRng;
        let g = Arc::new(build_geometry(&GeometrySpec::Circle2d { radius: 1.0, n: 128 }).unwrap());
        let w = IncidentWave::new(1.0, vec![1.0, 0.0]).unwrap();
        let imp = ImpedanceField::fourier(vec![1.0, 0.5], vec![]);
        let s = solve_modal(&g, &w, &imp, &ModalOptions::default()).unwrap();
        let ffp = compute_far_field(&s.representation, &Directions::circle(64)).unwrap();
        let truth = imp.sample(&g, &w).unwrap();
        let mean = |eps: f64| -> f64 {
            (0..10u64)
                .map(|seed| {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                    let data = add_noise(&ffp, eps, &mut rng);
                    let mut est =
                        reconstruct_from_farfield(&data, &g, &w, eps, &RegParams::default()).unwrap();
                    est.compare(&truth, &g.weights).unwrap();
                    est.sup_error.unwrap()
                })
                .sum::<f64>()
                / 10.0
        };
        for (e1, e2) in [(1e-3, 1e-2), (1e-6, 1e-4), (1e-8, 1e-7)] {
            let (m1, m2) = (mean(e1), mean(e2));
            assert!(m1 <= 1.5 * m2, "ε = {e1}: {m1}, ε = {e2}: {m2}");
        }
    }

    #[test]
    fn noiseless_circle_reconstruction() {
        let g = Arc::new(build_geometry(&GeometrySpec::Circle2d { radius: 1.0, n: 128 }).unwrap());
        let w = IncidentWave::new(1.0, vec![1.0, 0.0]).unwrap();
        let s = solve_modal(&g, &w, &ImpedanceField::constant(1.0), &ModalOptions::default())
            .unwrap();
        let ffp = compute_far_field(&s.representation, &Directions::circle(64)).unwrap();
        let mut est = reconstruct_from_farfield(&ffp, &g, &w, 0.0, &RegParams::default()).unwrap();
        est.compare(&vec![1.0; 128], &g.weights).unwrap();
        assert!(est.sup_error.unwrap() < 1e-4, "{:?}", est);
    }

    #[test]
    fn no_information_returns_prior_midpoint() {
        let g = Arc::new(build_geometry(&GeometrySpec::Circle2d { radius: 1.0, n: 64 }).unwrap());
        let w = IncidentWave::new(1.0, vec![1.0, 0.0]).unwrap();
        let s = solve_modal(&g, &w, &ImpedanceField::constant(1.0), &ModalOptions::default())
            .unwrap();
        let ffp = compute_far_field(&s.representation, &Directions::circle(32)).unwrap();
        let reg = RegParams {
            lambda0: 0.5,
            lambda_bound: 3.5,
            ..Default::default()
        };
        let est = reconstruct_from_farfield(&ffp, &g, &w, 1e3, &reg).unwrap();
        assert!(est.full_uncertainty);
        assert!(est.values.iter().all(|v| *v == Some(2.0)));
    }
}

