//! Numerical probes of the boundary estimates and the stability sweep.
//!
//! Every probe returns a [`ProbeReport`]: a table of `(lhs, rhs, ratio)`
//! rows plus fitted constants. Ratios are what the analytic constants would
//! have to dominate; their spread across resolutions is the pass criterion.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::farfield::{compute_far_field, Directions, FarFieldPattern};
use crate::forward::{
    evaluate_field, radial_flux, solve, sphere_samples, BoundaryTrace, EvalOptions,
    ExteriorRepresentation, ImpedanceField, ImpedanceRepr, IncidentWave, SolverKind,
};
use crate::geometry::{boundary_patch, gauss_legendre, BoundaryGeometry};
use crate::norms::{sobolev_norm, BoundaryFunction};
use crate::reconstruction::{eta, eta_eta, reconstruct_from_farfield, RegParams};

/// One row of a probe table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCase {
    pub label: String,
    pub inputs: BTreeMap<String, f64>,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, absent when `rhs = 0`.
    pub ratio: Option<f64>,
}

impl ProbeCase {
    fn new(label: impl Into<String>, inputs: &[(&str, f64)], lhs: f64, rhs: f64) -> Self {
        ProbeCase {
            label: label.into(),
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            lhs,
            rhs,
            ratio: (rhs > 0.0).then(|| lhs / rhs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe: String,
    pub cases: Vec<ProbeCase>,
    pub worst_ratio: Option<f64>,
    /// Fitted constants (`K`, `k1`, `k2`, `R0`, ...).
    pub fitted: BTreeMap<String, f64>,
    pub tolerance: Option<f64>,
    pub pass: bool,
    pub notices: Vec<String>,
}

impl ProbeReport {
    fn new(probe: &str) -> Self {
        ProbeReport {
            probe: probe.into(),
            cases: Vec::new(),
            worst_ratio: None,
            fitted: BTreeMap::new(),
            tolerance: None,
            pass: false,
            notices: Vec::new(),
        }
    }

    fn finish_worst(&mut self) {
        self.worst_ratio = self
            .cases
            .iter()
            .filter_map(|c| c.ratio)
            .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
    }

    pub fn case(&self, label: &str) -> Option<&ProbeCase> {
        self.cases.iter().find(|c| c.label == label)
    }
}

/// Largest `max/min` of each labelled ratio over a resolution sequence.
/// Labels missing from some report, or without a ratio, are ignored.
pub fn ratio_spread(reports: &[ProbeReport]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    let Some(first) = reports.first() else {
        return out;
    };
    for case in &first.cases {
        let ratios: Option<Vec<f64>> = reports
            .iter()
            .map(|r| r.case(&case.label).and_then(|c| c.ratio))
            .collect();
        if let Some(rs) = ratios {
            let hi = rs.iter().cloned().fold(f64::MIN, f64::max);
            let lo = rs.iter().cloned().fold(f64::MAX, f64::min);
            if lo > 0.0 {
                out.insert(case.label.clone(), hi / lo);
            }
        }
    }
    out
}

// ---------------------------------------------------------------- vanishing rate

/// Candidate exponents `0.5, 1, …, 50`.
pub fn k_grid() -> Vec<f64> {
    (1..=100).map(|i| 0.5 * i as f64).collect()
}

/// `I(x₀, r) = Σ_{patch} |u|² w` against `exp(−K r^{−K})`; reports the
/// smallest feasible `K` on [`k_grid`] and a two-parameter fit
/// `exp(−k₁ r^{−k₂})`.
pub fn vanishing_rate_probe(
    trace: &BoundaryTrace,
    geom: &BoundaryGeometry,
    r_grid: &[f64],
    centers: &[usize],
) -> Result<ProbeReport> {
    trace.check_against(geom)?;
    let r1 = geom.r0.min(0.5);
    if r_grid.is_empty() || centers.is_empty() {
        return Err(Error::Domain("vanishing-rate probe needs radii and centers".into()));
    }
    if let Some(r) = r_grid.iter().find(|r| !(**r > 0.0 && **r <= r1)) {
        return Err(Error::Domain(format!(
            "radius {r} outside (0, r1] with r1 = min(r0, 1/2) = {r1}"
        )));
    }
    let mut report = ProbeReport::new("vanishing");
    let mut pairs = Vec::new();
    for &c in centers {
        for &r in r_grid {
            let patch = boundary_patch(geom, c, r)?;
            if patch.member_indices.is_empty() || patch.measure <= 0.0 {
                report.notices.push(format!("empty patch at node {c}, r = {r}; skipped"));
                continue;
            }
            let i: f64 = patch
                .member_indices
                .iter()
                .map(|&j| trace.u[j].norm_sqr() * geom.weights[j])
                .sum();
            pairs.push((c, r, i));
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoData("every patch was empty".into()));
    }
    let feasible = |k: f64| pairs.iter().all(|&(_, r, i)| i >= (-k * r.powf(-k)).exp());
    let kfit = k_grid().into_iter().find(|&k| feasible(k));
    match kfit {
        Some(k) => {
            report.fitted.insert("K".into(), k);
            report.pass = true;
        }
        None => report.notices.push("no K ≤ 50 satisfies every pair".into()),
    }
    // k1(k2) = max over pairs of ln(1/I)·r^{k2}; keep the k2 minimizing max(k1, k2)
    let mut best: Option<(f64, f64)> = None;
    for k2 in k_grid() {
        let k1 = pairs
            .iter()
            .map(|&(_, r, i)| -i.ln() * r.powf(k2))
            .fold(0.0_f64, f64::max);
        if best.is_none_or(|(b1, b2)| k1.max(k2) < b1.max(b2)) {
            best = Some((k1, k2));
        }
    }
    if let Some((k1, k2)) = best {
        report.fitted.insert("k1".into(), k1);
        report.fitted.insert("k2".into(), k2);
    }
    let k = kfit.unwrap_or(50.0);
    for &(c, r, i) in &pairs {
        let rhs = (-k * r.powf(-k)).exp();
        report.cases.push(ProbeCase::new(
            format!("t{:.6}_r{r}", geom.arc_params[c]),
            &[("center", c as f64), ("t", geom.arc_params[c]), ("r", r)],
            i,
            rhs,
        ));
    }
    report.finish_worst();
    Ok(report)
}

// ---------------------------------------------------------------- E_ρ samples

/// Samples of `u` in the tube `E_ρ` along outward normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeSamples {
    pub rho: f64,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub values: Vec<Complex64>,
    pub gradients: Vec<Vec<Complex64>>,
    pub warnings: Vec<String>,
}

impl TubeSamples {
    /// `‖u‖_{H¹(E_ρ)}²`.
    pub fn h1_squared(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.gradients)
            .zip(&self.weights)
            .map(|((v, g), w)| w * (v.norm_sqr() + g.iter().map(|c| c.norm_sqr()).sum::<f64>()))
            .sum()
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// `max_{E_ρ} |u − v|` on the same points.
    pub fn linf_gap(&self, other: &TubeSamples) -> Result<f64> {
        if self.points != other.points {
            return Err(Error::Consistency("tube samples at different points".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm())))
    }
}

/// Total field on a tensor grid `x + d·n(x)`, `d` at `layers` Gauss points
/// in `(0, ρ)`, `n` the outward normal. `ρ` defaults to `r0/2`.
pub fn sample_tube(
    rep: &ExteriorRepresentation,
    geom: &BoundaryGeometry,
    rho: Option<f64>,
    layers: usize,
) -> Result<TubeSamples> {
    let rho = rho.unwrap_or(0.5 * geom.r0);
    if !(rho > 0.0) || layers == 0 {
        return Err(Error::Domain(format!(
            "tube needs ρ > 0 and at least one layer, got ρ = {rho}, {layers} layers"
        )));
    }
    let dim = geom.dim();
    if rep.dim() != dim {
        return Err(Error::Consistency("representation and geometry dimensions differ".into()));
    }
    let (gx, gw) = gauss_legendre(layers);
    let curvature: Vec<f64> = match &geom.curve {
        Some(c) => (0..geom.len())
            .map(|i| {
                let (d1, d2) = (c.dz[i], c.ddz[i]);
                (d1[0] * d2[1] - d1[1] * d2[0]) / c.speed[i].powi(3)
            })
            .collect(),
        None => vec![0.0; geom.len()],
    };
    let radius = geom.sphere.as_ref().map(|s| s.radius);
    let mut points = Vec::with_capacity(geom.len() * layers);
    let mut weights = Vec::with_capacity(geom.len() * layers);
    for i in 0..geom.len() {
        let x = &geom.nodes[i];
        let n = &geom.normals[i];
        for (t, wt) in gx.iter().zip(&gw) {
            let d = 0.5 * rho * (t + 1.0);
            // inward normals are stored; step outward
            points.push((0..dim).map(|c| x[c] - d * n[c]).collect::<Vec<f64>>());
            let jac = match radius {
                Some(a) => ((a + d) / a).powi(2),
                None => (1.0 + curvature[i] * d).max(0.0),
            };
            weights.push(geom.weights[i] * 0.5 * rho * wt * jac);
        }
    }
    let f = evaluate_field(
        rep,
        &points,
        EvalOptions {
            total: true,
            gradient: true,
        },
    )?;
    Ok(TubeSamples {
        rho,
        points,
        weights,
        values: f.values,
        gradients: f.gradients.expect("gradients requested"),
        warnings: f.warnings,
    })
}

// ---------------------------------------------------------------- Rellich probes

/// `du/ds` along a curve by trigonometric differentiation in the parameter.
pub fn tangential_derivative(geom: &BoundaryGeometry, values: &[Complex64]) -> Result<Vec<Complex64>> {
    let curve = geom.curve()?;
    let n = values.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut c = values.to_vec();
    planner.plan_fft_forward(n).process(&mut c);
    for (q, v) in c.iter_mut().enumerate() {
        let m = if q < n / 2 {
            q as f64
        } else if q == n / 2 && n.is_multiple_of(2) {
            0.0
        } else {
            q as f64 - n as f64
        };
        *v *= Complex64::new(0.0, m / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut c);
    Ok(c.iter().zip(&curve.speed).map(|(d, s)| d / s).collect())
}

fn l2_squared(geom: &BoundaryGeometry, f: &[Complex64]) -> f64 {
    f.iter().zip(&geom.weights).map(|(v, w)| w * v.norm_sqr()).sum()
}

/// Lhs and rhs of the Rellich-type inequalities, the `H¹` trace bound, the
/// dual `H⁻¹` estimate and, for every auxiliary solution, the `H⁻¹` and
/// `H^{−1/2}` gap bounds. Curves only.
pub fn rellich_trace_probes(
    trace: &BoundaryTrace,
    geom: &Arc<BoundaryGeometry>,
    tube: Option<&TubeSamples>,
    aux: &[(BoundaryTrace, TubeSamples)],
) -> Result<ProbeReport> {
    trace.check_against(geom)?;
    if geom.dim() != 2 {
        return Err(Error::Unsupported(
            "Rellich probes need a tangential derivative; curves only".into(),
        ));
    }
    let mut report = ProbeReport::new("rellich");
    let du = tangential_derivative(geom, &trace.u)?;
    let grad_t2 = l2_squared(geom, &du);
    let dn2 = l2_squared(geom, &trace.dnu);
    let u_fn = BoundaryFunction::new(geom.clone(), trace.u.clone())?;
    let dn_fn = BoundaryFunction::new(geom.clone(), trace.dnu.clone())?;

    report.cases.push(ProbeCase::new(
        "h1_trace",
        &[],
        sobolev_norm(&u_fn, 1.0)?,
        1.0,
    ));
    match tube {
        Some(t) => {
            let vol = t.h1_squared();
            report
                .cases
                .push(ProbeCase::new("normal", &[("rho", t.rho)], dn2, grad_t2 + vol));
            report
                .cases
                .push(ProbeCase::new("tangential", &[("rho", t.rho)], grad_t2, dn2 + vol));
            report.cases.push(ProbeCase::new(
                "dual",
                &[("rho", t.rho)],
                sobolev_norm(&dn_fn, -1.0)?,
                t.linf(),
            ));
        }
        None => report
            .notices
            .push("no E_ρ samples: normal, tangential and dual cases skipped".into()),
    }
    for (idx, (other, other_tube)) in aux.iter().enumerate() {
        other.check_against(geom)?;
        let Some(t) = tube else {
            report.notices.push(format!("gap case {idx} skipped: no E_ρ samples"));
            continue;
        };
        let gap = t.linf_gap(other_tube)?;
        let diff: Vec<Complex64> = trace.dnu.iter().zip(&other.dnu).map(|(a, b)| a - b).collect();
        let diff = BoundaryFunction::new(geom.clone(), diff)?;
        report.cases.push(ProbeCase::new(
            format!("gap_hm1_{idx}"),
            &[("rho", t.rho)],
            sobolev_norm(&diff, -1.0)?,
            gap,
        ));
        report.cases.push(ProbeCase::new(
            format!("gap_hmhalf_{idx}"),
            &[("rho", t.rho)],
            sobolev_norm(&diff, -0.5)?,
            gap,
        ));
    }
    report.finish_worst();
    report.pass = report
        .cases
        .iter()
        .all(|c| c.lhs.is_finite() && c.rhs.is_finite() && c.ratio.is_none_or(f64::is_finite));
    Ok(report)
}

// ---------------------------------------------------------------- lower bound

/// `min_{|x| = R} |u|` for each `R`; the empirical `R₀` is the smallest grid
/// radius beyond which every tested minimum exceeds 1/2. The radial flux at
/// each radius is recorded as an input.
pub fn far_lower_bound_probe(
    rep: &ExteriorRepresentation,
    r_grid: &[f64],
    samples: usize,
) -> Result<ProbeReport> {
    let mut radii = r_grid.to_vec();
    radii.sort_by(|a, b| a.total_cmp(b));
    if radii.is_empty() || !(radii[0] > 0.0) {
        return Err(Error::Domain("lower-bound probe needs positive radii".into()));
    }
    let dim = rep.dim();
    let mut report = ProbeReport::new("lowerbound");
    let mut minima = Vec::with_capacity(radii.len());
    for &r in &radii {
        let (points, _, _) = sphere_samples(dim, r, samples);
        let f = evaluate_field(
            rep,
            &points,
            EvalOptions {
                total: true,
                gradient: false,
            },
        )?;
        report.notices.extend(f.warnings);
        let m = f.values.iter().fold(f64::INFINITY, |m, v| m.min(v.norm()));
        let flux = radial_flux(rep, r, samples)?;
        minima.push(m);
        report
            .cases
            .push(ProbeCase::new(format!("R{r}"), &[("R", r), ("flux", flux)], m, 0.5));
    }
    let mut r0 = None;
    for (i, &r) in radii.iter().enumerate().rev() {
        if minima[i] > 0.5 {
            r0 = Some(r);
        } else {
            break;
        }
    }
    match r0 {
        Some(r) => {
            report.fitted.insert("R0".into(), r);
            report.pass = true;
        }
        None => report
            .notices
            .push("min |u| ≤ 1/2 at the largest tested radius".into()),
    }
    report.finish_worst();
    Ok(report)
}

// ---------------------------------------------------------------- stability sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    #[default]
    Noise,
    Pair,
}

impl std::str::FromStr for SweepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(SweepMode::Noise),
            "pair" => Ok(SweepMode::Pair),
            _ => Err(Error::Validation(format!("unknown sweep mode '{s}' (noise|pair)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub eps: f64,
    pub seed: u64,
    pub farfield_gap: f64,
    pub err_linf: f64,
    pub err_l2: f64,
    pub mask_fraction: f64,
}

/// The forward problem a sweep perturbs.
#[derive(Debug, Clone)]
pub struct SweepSetup {
    pub geometry: Arc<BoundaryGeometry>,
    pub wave: IncidentWave,
    pub impedance: ImpedanceField,
    pub solver: SolverKind,
    /// Far-field directions (points on S¹, or the Gauss–Legendre order on S²).
    pub directions: usize,
    pub reg: RegParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub mode: SweepMode,
    /// Noise levels, decreasing (noise mode).
    pub eps_grid: Vec<f64>,
    /// Seeds per noise level, or the number of perturbations (pair mode).
    pub trials: usize,
    pub seed: u64,
    /// Highest Fourier order of pair-mode perturbations.
    pub perturbation_order: usize,
    /// Largest and smallest sup-norm of pair-mode perturbations.
    pub perturbation_range: (f64, f64),
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            mode: SweepMode::Noise,
            eps_grid: (1..=8).map(|p| 10f64.powi(-p)).collect(),
            trials: 10,
            seed: 0,
            perturbation_order: 3,
            perturbation_range: (0.3, 1e-6),
        }
    }
}

/// A modulus `C·(ln 1/t)^{−θ}` or its composition fitted as the tightest
/// upper envelope of an error-vs-gap cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusFit {
    pub model: String,
    pub c: f64,
    pub theta: f64,
    /// RMS of `ln(model(gap)) − ln(err)` over the fitted points.
    pub log_residual: f64,
    pub fraction_below: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub mode: SweepMode,
    pub records: Vec<SweepRecord>,
    /// Records excluded from fits, with the reason.
    pub flagged: Vec<(u64, String)>,
    pub eta_fit: Option<ModulusFit>,
    pub eta_eta_fit: Option<ModulusFit>,
    /// `(x, median err_linf)`: x is ε in noise mode, the bin's median gap in
    /// pair mode; ordered by decreasing x.
    pub medians: Vec<(f64, f64)>,
    /// Largest ratio `median(smaller x) / median(larger x)`.
    pub monotonicity: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn monotonicity(medians: &[(f64, f64)]) -> f64 {
    medians
        .windows(2)
        .map(|w| if w[0].1 > 0.0 { w[1].1 / w[0].1 } else if w[1].1 > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(0.0, f64::max)
}

/// Complex Gaussian noise rescaled to weighted L² norm exactly `eps`.
pub fn add_noise(ffp: &FarFieldPattern, eps: f64, rng: &mut impl Rng) -> FarFieldPattern {
    if eps == 0.0 {
        return ffp.clone();
    }
    let noise: Vec<Complex64> = (0..ffp.samples.len())
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm: f64 = noise
        .iter()
        .zip(&ffp.weights)
        .map(|(z, w)| w * z.norm_sqr())
        .sum::<f64>()
        .sqrt();
    let samples = ffp
        .samples
        .iter()
        .zip(&noise)
        .map(|(u, z)| u + z * (eps / norm))
        .collect();
    ffp.with_samples(samples)
}

fn impedance_plus(base: &ImpedanceField, cos: &[f64], sin: &[f64], nodes: Option<&[f64]>) -> ImpedanceField {
    let pad = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let n = a.len().max(b.len());
        (0..n)
            .map(|i| a.get(i).copied().unwrap_or(0.0) + b.get(i).copied().unwrap_or(0.0))
            .collect()
    };
    let repr = match (&base.repr, nodes) {
        (ImpedanceRepr::Constant { value }, _) => ImpedanceRepr::FourierOnParameter {
            cos: pad(&[*value], cos),
            sin: sin.to_vec(),
        },
        (ImpedanceRepr::FourierOnParameter { cos: c0, sin: s0 }, _) => {
            ImpedanceRepr::FourierOnParameter {
                cos: pad(c0, cos),
                sin: pad(s0, sin),
            }
        }
        (ImpedanceRepr::SamplesAtNodes { values }, Some(params)) => {
            let d = ImpedanceField::fourier(cos.to_vec(), sin.to_vec());
            ImpedanceRepr::SamplesAtNodes {
                values: values
                    .iter()
                    .zip(params)
                    .map(|(v, t)| v + d.at_parameter(*t).unwrap_or(0.0))
                    .collect(),
            }
        }
        (ImpedanceRepr::SamplesAtNodes { values }, None) => ImpedanceRepr::SamplesAtNodes {
            values: values.clone(),
        },
    };
    ImpedanceField {
        repr,
        lambda0: base.lambda0,
        lambda_bound: base.lambda_bound,
    }
}

/// Random low-order perturbation with sup-norm bound `amp` (coefficient sum).
fn draw_perturbation(order: usize, amp: f64, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let mut cos: Vec<f64> = (0..=order).map(|_| rng.sample(StandardNormal)).collect();
    let mut sin: Vec<f64> = (0..=order).map(|_| rng.sample(StandardNormal)).collect();
    sin[0] = 0.0;
    let total: f64 = cos.iter().chain(&sin).map(|c| c.abs()).sum();
    for c in cos.iter_mut().chain(sin.iter_mut()) {
        *c *= amp / total;
    }
    (cos, sin)
}

/// Noise mode perturbs the far field of `setup` and reconstructs; pair mode
/// solves a second forward problem per perturbation δλ and records the
/// pair `(‖u₁∞ − u₂∞‖, ‖λ₁ − λ₂‖_∞)`. Records are ordered by
/// (ε-index, trial) whatever the scheduling.
pub fn stability_sweep(setup: &SweepSetup, opts: &SweepOptions) -> Result<SweepResult> {
    if opts.trials == 0 {
        return Err(Error::Domain("sweep needs at least one trial".into()));
    }
    let geom = &setup.geometry;
    let wave = &setup.wave;
    setup.impedance.validate(geom, wave)?;
    let lambda1 = setup.impedance.sample(geom, wave)?;
    let base = solve(geom, wave, &setup.impedance, setup.solver)?;
    let dirs = Directions::standard(geom.dim(), setup.directions);
    let ff1 = compute_far_field(&base.representation, &dirs)?;

    let outcomes: Vec<(u64, Result<SweepRecord>)> = match opts.mode {
        SweepMode::Noise => {
            if opts.eps_grid.is_empty() {
                return Err(Error::Domain("noise sweep needs a nonempty ε grid".into()));
            }
            if opts.eps_grid.windows(2).any(|w| !(w[1] < w[0])) || opts.eps_grid.iter().any(|e| !(*e >= 0.0)) {
                return Err(Error::Validation("ε grid must be nonnegative and strictly decreasing".into()));
            }
            let tasks: Vec<(usize, usize)> = (0..opts.eps_grid.len())
                .flat_map(|e| (0..opts.trials).map(move |t| (e, t)))
                .collect();
            tasks
                .par_iter()
                .map(|&(e, t)| {
                    let seed = opts.seed.wrapping_add((e * opts.trials + t) as u64);
                    let eps = opts.eps_grid[e];
                    let run = || -> Result<SweepRecord> {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let noisy = add_noise(&ff1, eps, &mut rng);
                        let gap = noisy.distance(&ff1)?;
                        let mut est = reconstruct_from_farfield(&noisy, geom, wave, eps, &setup.reg)?;
                        est.compare(&lambda1, &geom.weights)?;
                        Ok(SweepRecord {
                            eps,
                            seed,
                            farfield_gap: gap,
                            err_linf: est.sup_error.unwrap_or(f64::NAN),
                            err_l2: est.l2_error.unwrap_or(f64::NAN),
                            mask_fraction: est.mask_fraction,
                        })
                    };
                    (seed, run())
                })
                .collect()
        }
        SweepMode::Pair => {
            let (hi, lo) = opts.perturbation_range;
            if !(hi >= lo && lo >= 0.0) {
                return Err(Error::Domain(format!(
                    "perturbation range must satisfy max ≥ min ≥ 0, got ({hi}, {lo})"
                )));
            }
            let params = crate::forward::node_parameters(geom, wave);
            (0..opts.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = opts.seed.wrapping_add(t as u64);
                    let run = || -> Result<SweepRecord> {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let amp = if opts.trials == 1 || lo == 0.0 {
                            hi * (opts.trials - 1 - t) as f64 / (opts.trials.max(2) - 1) as f64
                        } else {
                            hi * (lo / hi).powf(t as f64 / (opts.trials - 1) as f64)
                        };
                        let (c, s) = draw_perturbation(opts.perturbation_order, amp, &mut rng);
                        let imp2 = impedance_plus(&setup.impedance, &c, &s, Some(&params));
                        imp2.validate(geom, wave)?;
                        let lambda2 = imp2.sample(geom, wave)?;
                        let sol2 = solve(geom, wave, &imp2, setup.solver)?;
                        let ff2 = compute_far_field(&sol2.representation, &dirs)?;
                        let gap = ff2.distance(&ff1)?;
                        let mut sup = 0.0_f64;
                        let mut l2 = 0.0;
                        for ((a, b), w) in lambda1.iter().zip(&lambda2).zip(&geom.weights) {
                            sup = sup.max((a - b).abs());
                            l2 += w * (a - b).powi(2);
                        }
                        Ok(SweepRecord {
                            eps: amp,
                            seed,
                            farfield_gap: gap,
                            err_linf: sup,
                            err_l2: l2.sqrt(),
                            mask_fraction: 1.0,
                        })
                    };
                    (seed, run())
                })
                .collect()
        }
    };

    let mut records = Vec::new();
    let mut flagged = Vec::new();
    for (seed, r) in outcomes {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => flagged.push((seed, e.to_string())),
        }
    }

    let medians: Vec<(f64, f64)> = match opts.mode {
        SweepMode::Noise => opts
            .eps_grid
            .iter()
            .filter_map(|&eps| {
                let mut v: Vec<f64> = records
                    .iter()
                    .filter(|r| r.eps == eps)
                    .map(|r| r.err_linf)
                    .collect();
                (!v.is_empty()).then(|| (eps, median(&mut v)))
            })
            .collect(),
        SweepMode::Pair => {
            let mut pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| r.farfield_gap > 0.0)
                .map(|r| (r.farfield_gap, r.err_linf))
                .collect();
            pts.sort_by(|a, b| b.0.total_cmp(&a.0));
            let bins = (pts.len() / 10).max(1);
            let size = pts.len().div_ceil(bins).max(1);
            pts.chunks(size)
                .map(|c| {
                    let mut g: Vec<f64> = c.iter().map(|p| p.0).collect();
                    let mut e: Vec<f64> = c.iter().map(|p| p.1).collect();
                    (median(&mut g), median(&mut e))
                })
                .collect()
        }
    };
    let cloud: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.farfield_gap > 0.0 && r.farfield_gap < 1.0 && r.err_linf > 0.0)
        .map(|r| (r.farfield_gap, r.err_linf))
        .collect();
    Ok(SweepResult {
        mode: opts.mode,
        eta_fit: fit_modulus(&cloud, false),
        eta_eta_fit: fit_modulus(&cloud, true),
        monotonicity: monotonicity(&medians),
        medians,
        records,
        flagged,
    })
}

/// Tightest upper envelope `err ≤ model(gap)` over `θ ∈ {0.05, 0.1, …, 5}`;
/// for each θ the smallest admissible C, and θ minimizing the log residual.
pub fn fit_modulus(points: &[(f64, f64)], composed: bool) -> Option<ModulusFit> {
    if points.is_empty() {
        return None;
    }
    let model = |t: f64, c: f64, th: f64| -> Option<f64> {
        if composed {
            eta_eta(t, c, th).ok()
        } else {
            eta(t, c, th).ok()
        }
    };
    let mut best: Option<ModulusFit> = None;
    for i in 1..=100 {
        let theta = 0.05 * i as f64;
        // η(t) < 1 for every t is needed for the composition
        let c_max = if composed {
            points
                .iter()
                .map(|(t, _)| (1.0 / t).ln().powf(theta))
                .fold(f64::INFINITY, f64::min)
        } else {
            f64::INFINITY
        };
        let mut c_needed: f64 = 0.0;
        let mut ok = true;
        for &(t, e) in points {
            // model increases with C
            let (mut lo, mut hi) = (1e-300_f64, c_max.min(1e300));
            if model(t, hi * (1.0 - 1e-12), theta).is_none_or(|v| v < e) {
                ok = false;
                break;
            }
            for _ in 0..200 {
                let mid = (lo * hi).sqrt();
                if model(t, mid, theta).is_some_and(|v| v >= e) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            c_needed = c_needed.max(hi);
        }
        if !ok || c_needed >= c_max {
            continue;
        }
        let mut below = 0usize;
        let mut res = 0.0;
        let mut valid = true;
        for &(t, e) in points {
            match model(t, c_needed, theta) {
                Some(v) => {
                    if e <= v * (1.0 + 1e-9) {
                        below += 1;
                    }
                    res += (v.ln() - e.ln()).powi(2);
                }
                None => valid = false,
            }
        }
        if !valid {
            continue;
        }
        let fit = ModulusFit {
            model: if composed { "eta_eta" } else { "eta" }.into(),
            c: c_needed,
            theta,
            log_residual: (res / points.len() as f64).sqrt(),
            fraction_below: below as f64 / points.len() as f64,
        };
        if best.as_ref().is_none_or(|b| fit.log_residual < b.log_residual) {
            best = Some(fit);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve_modal, ModalOptions};
    use crate::geometry::{build_geometry, GeometrySpec};
    use crate::special::{bessel_j_array, cyl_derivative};
    use std::f64::consts::PI;

    fn circle(n: usize) -> Arc<BoundaryGeometry> {
        Arc::new(build_geometry(&GeometrySpec::Circle2d { radius: 1.0, n }).unwrap())
    }

    fn trace_of(g: &BoundaryGeometry, u: Vec<Complex64>) -> BoundaryTrace {
        let n = u.len();
        BoundaryTrace {
            geometry: g.spec.clone(),
            wave: IncidentWave::new(1.0, vec![1.0, 0.0]).unwrap(),
            u,
            dnu: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    #[test]
    fn vanishing_rate_constant_trace() {
        let n = 4096;
        let g = circle(n);
        let tr = trace_of(&g, vec![Complex64::new(1.0, 0.0); n]);
        let radii = [0.05, 0.1, 0.2, 0.3, 0.5];
        let rep = vanishing_rate_probe(&tr, &g, &radii, &[0, 1000, 3000]).unwrap();
        // I(r) is the patch measure ≈ 4 asin(r/2)
        for c in &rep.cases {
            let r = c.inputs["r"];
            assert!((c.lhs - 4.0 * (r / 2.0).asin()).abs() < 2.0 * 2.0 * PI / n as f64);
            assert!(c.lhs > 0.0);
        }
        // K = 0.5 misses r = 0.05 (exp(−0.5/√0.05) ≈ 0.107 > 0.1); K = 1 holds
        assert_eq!(rep.fitted["K"], 1.0);
        assert!(rep.pass);
    }

    #[test]
    fn vanishing_rate_simple_zero() {
        let g = circle(1024);
        let theta0 = g.arc_params[0];
        let u = g
            .arc_params
            .iter()
            .map(|t| Complex64::new(((t - theta0) / 2.0).sin(), 0.0))
            .collect();
        let tr = trace_of(&g, u);
        let radii = [0.02, 0.05, 0.1, 0.2, 0.5];
        let rep = vanishing_rate_probe(&tr, &g, &radii, &[0]).unwrap();
        // I(r) ~ r³/6 near the zero
        let c = rep.case("t0.000000_r0.1").unwrap();
        assert!((c.lhs / (0.1f64.powi(3) / 6.0) - 1.0).abs() < 0.1, "{}", c.lhs);
        let k = rep.fitted["K"];
        assert!(k <= 2.0, "K = {k}");
        assert!(rep.fitted["k1"].is_finite());
    }

    #[test]
    fn vanishing_rate_rejects_large_radius() {
        let g = circle(64);
        let tr = trace_of(&g, vec![Complex64::new(1.0, 0.0); 64]);
        assert!(vanishing_rate_probe(&tr, &g, &[0.6], &[0]).is_err());
    }

    #[test]
    fn vanishing_rate_solver_trace_stable() {
        let wave = IncidentWave::new(1.0, vec![1.0, 0.0]).unwrap();
        let imp = ImpedanceField::constant(1.0);
        let radii: Vec<f64> = (0..10).map(|i| 0.02 * (25.0f64).powf(i as f64 / 9.0)).collect();
        let mut ks = Vec::new();
        for n in [256, 512] {
            let g = circle(n);
            let sol = solve_modal(&g, &wave, &imp, &ModalOptions::default()).unwrap();
            let centers: Vec<usize> = (0..16).map(|i| i * n / 16).collect();
            let rep = vanishing_rate_probe(&sol.trace, &g, &radii, &centers).unwrap();
            assert!(rep.cases.iter().all(|c| c.lhs > 0.0));
            ks.push(rep.fitted["K"]);
        }
        assert!((ks[0] - ks[1]).abs() <= 0.5, "{ks:?}");
    }

    #[test]
    fn zero_trace_ratios_not_applicable() {
        let g = circle(128);
        let tr = trace_of(&g, vec![Complex64::new(0.0, 0.0); 128]);
        let tube = TubeSamples {
            rho: 0.25,
            points: vec![vec![1.1, 0.0]],
            weights: vec![1.0],
            values: vec![Complex64::new(0.0, 0.0)],
            gradients: vec![vec![Complex64::new(0.0, 0.0); 2]],
            warnings: vec![],
        };
        let rep = rellich_trace_probes(&tr, &g, Some(&tube), &[]).unwrap();
        for c in &rep.cases {
            assert_eq!(c.lhs, 0.0);
            if c.label != "h1_trace" {
                assert_eq!(c.rhs, 0.0);
                assert!(c.ratio.is_none());
            }
        }
    }

    #[test]
    fn plane_wave_norms_match_jacobi_anger() {
        // u = e^{ik a cos θ} on |x| = a: coefficients i^n J_n(ka)
        let (k, a, n) = (2.0, 1.5, 256);
        let g = Arc::new(build_geometry(&GeometrySpec::Circle2d { radius: a, n }).unwrap());
        let wave = IncidentWave::new(k, vec![1.0, 0.0]).unwrap();
        let u: Vec<Complex64> = g.nodes.iter().map(|p| wave.value(&p[..2])).collect();
        let dnu: Vec<Complex64> = g
            .nodes
            .iter()
            .zip(&g.normals)
            .map(|(p, nv)| {
                let gr = wave.gradient(&p[..2]);
                gr[0] * nv[0] + gr[1] * nv[1]
            })
            .collect();
        let tr = BoundaryTrace {
            geometry: g.spec.clone(),
            wave: wave.clone(),
            u,
            dnu,
        };
        let rep = rellich_trace_probes(&tr, &g, None, &[]).unwrap();
        let nmax = 60;
        let j = bessel_j_array(nmax + 1, k * a);
        let mut h1 = 0.0;
        let mut grad = 0.0;
        let mut dn = 0.0;
        for m in 0..=nmax {
            let mult = if m == 0 { 1.0 } else { 2.0 };
            let m2 = (m * m) as f64;
            h1 += mult * (1.0 + m2) * j[m].powi(2);
            grad += mult * m2 * j[m].powi(2);
            let dj = cyl_derivative(&j, m, k * a);
            dn += mult * (k * dj).powi(2) / (1.0 + m2);
        }
        let h1 = (2.0 * PI * a * h1).sqrt();
        let h1_case = rep.case("h1_trace").unwrap();
        assert!((h1_case.lhs - h1).abs() < 1e-10 * h1, "{} {h1}", h1_case.lhs);
        let du = tangential_derivative(&g, &tr.u).unwrap();
        let grad = 2.0 * PI / a * grad;
        assert!((l2_squared(&g, &du) - grad).abs() < 1e-10 * grad);
        let dn_fn = BoundaryFunction::new(g.clone(), tr.dnu.clone()).unwrap();
        let dn = (2.0 * PI * a * dn).sqrt();
        assert!((sobolev_norm(&dn_fn, -1.0).unwrap() - dn).abs() < 1e-10 * dn);
    }

    #[test]
    fn rellich_ratios_stable_under_refinement() {
        let wave = IncidentWave::new(2.0, vec![1.0, 0.0]).unwrap();
        let imp = ImpedanceField::constant(1.5);
        let imp2 = ImpedanceField::constant(1.6);
        let mut reports = Vec::new();
        for n in [128, 256, 512] {
            let g = circle(n);
            let s1 = solve_modal(&g, &wave, &imp, &ModalOptions::default()).unwrap();
            let s2 = solve_modal(&g, &wave, &imp2, &ModalOptions::default()).unwrap();
            let t1 = sample_tube(&s1.representation, &g, None, 6).unwrap();
            let t2 = sample_tube(&s2.representation, &g, None, 6).unwrap();
            let rep = rellich_trace_probes(&s1.trace, &g, Some(&t1), &[(s2.trace, t2)]).unwrap();
            assert!(rep.pass);
            assert_eq!(rep.cases.len(), 6);
            reports.push(rep);
        }
        for (label, s) in ratio_spread(&reports) {
            assert!(s < 2.0, "{label}: {s}");
        }
    }

    #[test]
    fn lower_bound_zero_scattered_field() {
        let wave = IncidentWave::new(1.0, vec![1.0, 0.0]).unwrap();
        let rep = ExteriorRepresentation::Modal2d {
            wave,
            radius: 1.0,
            coeffs: vec![Complex64::new(0.0, 0.0); 5],
        };
        let r = far_lower_bound_probe(&rep, &[3.0, 1.5, 6.0], 64).unwrap();
        assert_eq!(r.fitted["R0"], 1.5);
        assert!(r.cases.iter().all(|c| (c.lhs - 1.0).abs() < 1e-14));
    }

    #[test]
    fn lower_bound_sphere_increases() {
        let g = Arc::new(build_geometry(&GeometrySpec::Sphere3d { radius: 1.0, n: 16 }).unwrap());
        let wave = IncidentWave::new(1.0, vec![0.0, 0.0, 1.0]).unwrap();
        let sol = solve_modal(&g, &wave, &ImpedanceField::constant(1.0), &ModalOptions::default()).unwrap();
        let radii: Vec<f64> = (0..12).map(|i| 1.2 * 1.5f64.powi(i)).collect();
        let r = far_lower_bound_probe(&sol.representation, &radii, 16).unwrap();
        assert!(r.pass);
        let last = r.cases.last().unwrap().lhs;
        assert!(last > 0.9 && last <= 1.1, "{last}");
        let f0 = r.cases[0].inputs["flux"];
        for c in &r.cases {
            assert!((c.inputs["flux"] - f0).abs() < 1e-8 * f0.abs().max(1.0));
        }
    }

    #[test]
    fn noise_is_rescaled_exactly() {
        let wave = IncidentWave::new(1.0, vec![1.0, 0.0]).unwrap();
        let g = circle(64);
        let sol = solve_modal(&g, &wave, &ImpedanceField::constant(1.0), &ModalOptions::default()).unwrap();
        let ff = compute_far_field(&sol.representation, &Directions::circle(32)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noisy = add_noise(&ff, 1e-3, &mut rng);
        assert!((noisy.distance(&ff).unwrap() - 1e-3).abs() < 1e-3 * 1e-10);
    }

    fn circle_setup(n: usize) -> SweepSetup {
        SweepSetup {
            geometry: circle(n),
            wave: IncidentWave::new(1.0, vec![1.0, 0.0]).unwrap(),
            impedance: ImpedanceField::constant(1.0).with_bounds(0.2, 20.0),
            solver: SolverKind::Modal,
            directions: 64,
            reg: RegParams::default(),
        }
    }

    #[test]
    fn zero_perturbation_pair() {
        let setup = circle_setup(128);
        let opts = SweepOptions {
            mode: SweepMode::Pair,
            trials: 1,
            perturbation_range: (0.0, 0.0),
            ..SweepOptions::default()
        };
        let res = stability_sweep(&setup, &opts).unwrap();
        let r = &res.records[0];
        assert!(r.farfield_gap < 1e-12 && r.err_linf < 1e-12, "{r:?}");
    }

    #[test]
    fn noiseless_sweep_hits_discretization_floor() {
        let setup = circle_setup(256);
        let opts = SweepOptions {
            eps_grid: vec![0.0],
            trials: 2,
            ..SweepOptions::default()
        };
        let res = stability_sweep(&setup, &opts).unwrap();
        for r in &res.records {
            assert!(r.err_linf < 1e-4, "{r:?}");
            assert_eq!(r.farfield_gap, 0.0);
        }
    }

    #[test]
    fn sweep_is_schedule_independent() {
        let setup = circle_setup(128);
        let opts = SweepOptions {
            eps_grid: vec![1e-2, 1e-4],
            trials: 3,
            seed: 11,
            ..SweepOptions::default()
        };
        let a = stability_sweep(&setup, &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| stability_sweep(&setup, &opts).unwrap());
        assert_eq!(a.records, b.records);
        assert!(stability_sweep(
            &setup,
            &SweepOptions {
                eps_grid: vec![1e-4, 1e-2],
                ..opts
            }
        )
        .is_err());
    }

    #[test]
    fn envelope_fit_bounds_every_point() {
        let pts: Vec<(f64, f64)> = (1..30)
            .map(|i| {
                let t = 10f64.powf(-(i as f64) / 4.0);
                (t, 0.3 * t.powf(0.5))
            })
            .collect();
        for composed in [false, true] {
            let f = fit_modulus(&pts, composed).unwrap();
            assert_eq!(f.fraction_below, 1.0);
            assert!(f.log_residual.is_finite());
        }
    }
}
