//! Exterior Helmholtz problem with impedance boundary condition.
//!
//! The total field `u = u^s + exp(ik x·ω)` satisfies `Δu + k²u = 0` outside
//! the obstacle, `∂u/∂ν + iλu = 0` on the boundary (ν pointing into the
//! obstacle) and `u^s` radiates. Two solvers are provided:
//!
//! * [`solve_modal`]: separation of variables on circles and spheres, exact
//!   per mode for constant λ and Galerkin-coupled for variable λ;
//! * [`solve_nystrom_2d`]: a combined-field boundary integral equation on any
//!   2D family, including graded corner curves.

mod layer;
mod modal;
mod nystrom;

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{dist3, BoundaryGeometry, GeometrySpec};

pub use layer::LayerPotential;
pub(crate) use layer::farfield_constant_2d;
pub use modal::{default_truncation, solve_modal, ModalOptions};
pub use nystrom::{solve_nystrom_2d, NystromOptions};

/// Incident plane wave `exp(ik x·ω)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentWave {
    pub k: f64,
    pub omega: Vec<f64>,
}

impl IncidentWave {
    pub fn new(k: f64, omega: Vec<f64>) -> Result<Self> {
        let w = IncidentWave { k, omega };
        w.validate(w.omega.len())?;
        Ok(w)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::Validation(format!(
                "wavenumber must satisfy k > 0, got {}",
                self.k
            )));
        }
        if self.omega.len() != dim {
            return Err(Error::Validation(format!(
                "incident direction has {} components, geometry is {dim}D",
                self.omega.len()
            )));
        }
        let norm: f64 = self.omega.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "incident direction must be a unit vector, |ω| = {norm}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    fn dot(&self, x: &[f64]) -> f64 {
        self.omega.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `exp(ik x·ω)`.
    pub fn value(&self, x: &[f64]) -> Complex64 {
        Complex64::new(0.0, self.k * self.dot(x)).exp()
    }

    /// `∇ exp(ik x·ω)`.
    pub fn gradient(&self, x: &[f64]) -> Vec<Complex64> {
        let v = self.value(x) * Complex64::new(0.0, self.k);
        self.omega.iter().map(|&w| v * w).collect()
    }

    /// Polar angle of ω (2D).
    pub fn angle(&self) -> f64 {
        self.omega[1].atan2(self.omega[0])
    }
}

/// How λ is represented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "representation", rename_all = "snake_case")]
pub enum ImpedanceRepr {
    Constant {
        value: f64,
    },
    /// `λ(t) = Σ_p cos[p]·cos(pt) + Σ_p sin[p]·sin(pt)` in the boundary
    /// parameter (polar angle from ω on the sphere); `sin[0]` is ignored.
    FourierOnParameter {
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
    SamplesAtNodes {
        values: Vec<f64>,
    },
}

/// The real surface impedance with its a-priori bounds `λ₀` and `Λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceField {
    #[serde(flatten)]
    pub repr: ImpedanceRepr,
    pub lambda0: f64,
    #[serde(rename = "Lambda")]
    pub lambda_bound: f64,
}

impl ImpedanceField {
    pub fn constant(value: f64) -> Self {
        ImpedanceField {
            repr: ImpedanceRepr::Constant { value },
            lambda0: value.min(1.0) * 0.5,
            lambda_bound: value.abs() * 2.0 + 10.0,
        }
    }

    /// Fourier impedance with loose default bounds; tighten with
    /// [`ImpedanceField::with_bounds`].
    pub fn fourier(cos: Vec<f64>, sin: Vec<f64>) -> Self {
        let weighted: f64 = cos
            .iter()
            .enumerate()
            .chain(sin.iter().enumerate().skip(1))
            .map(|(p, c)| (1.0 + p as f64) * c.abs())
            .sum();
        ImpedanceField {
            repr: ImpedanceRepr::FourierOnParameter { cos, sin },
            lambda0: 1e-3,
            lambda_bound: 10.0 * (1.0 + weighted),
        }
    }

    pub fn with_bounds(mut self, lambda0: f64, lambda_bound: f64) -> Self {
        self.lambda0 = lambda0;
        self.lambda_bound = lambda_bound;
        self
    }

    /// Value at a boundary parameter.
    pub fn at_parameter(&self, t: f64) -> Option<f64> {
        match &self.repr {
            ImpedanceRepr::Constant { value } => Some(*value),
            ImpedanceRepr::FourierOnParameter { cos, sin } => {
                let mut v = 0.0;
                for (p, c) in cos.iter().enumerate() {
                    v += c * (p as f64 * t).cos();
                }
                for (p, s) in sin.iter().enumerate().skip(1) {
                    v += s * (p as f64 * t).sin();
                }
                Some(v)
            }
            ImpedanceRepr::SamplesAtNodes { .. } => None,
        }
    }

    /// λ at every node. On the sphere the parameter is the angle from ω.
    pub fn sample(&self, geom: &BoundaryGeometry, wave: &IncidentWave) -> Result<Vec<f64>> {
        if let ImpedanceRepr::SamplesAtNodes { values } = &self.repr {
            if values.len() != geom.len() {
                return Err(Error::Consistency(format!(
                    "impedance has {} samples, geometry has {} nodes",
                    values.len(),
                    geom.len()
                )));
            }
            return Ok(values.clone());
        }
        let params = node_parameters(geom, wave);
        Ok(params
            .iter()
            .map(|&t| self.at_parameter(t).unwrap_or(f64::NAN))
            .collect())
    }

    /// Checks `λ ≥ λ₀ > 0` and `sup|λ| + Lip(λ) ≤ Λ` on the nodes.
    pub fn validate(&self, geom: &BoundaryGeometry, wave: &IncidentWave) -> Result<()> {
        if !(self.lambda0 > 0.0) {
            return Err(Error::Validation(format!(
                "impedance lower bound must be positive (λ ≥ λ₀ > 0), got λ₀ = {}",
                self.lambda0
            )));
        }
        let values = self.sample(geom, wave)?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= self.lambda0))
        {
            return Err(Error::Validation(format!(
                "impedance {v} at node {i} violates the lower bound λ ≥ λ₀ = {}",
                self.lambda0
            )));
        }
        let norm = lipschitz_norm(geom, &values);
        if norm > self.lambda_bound {
            return Err(Error::Validation(format!(
                "impedance C^{{0,1}} norm {norm} exceeds the bound Λ = {}",
                self.lambda_bound
            )));
        }
        Ok(())
    }
}

/// Sampled `sup|f| + sup_{i≠j} |f_i − f_j| / |x_i − x_j|`.
pub fn lipschitz_norm(geom: &BoundaryGeometry, values: &[f64]) -> f64 {
    let sup = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut lip = 0.0_f64;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            let d = dist3(&geom.nodes[i], &geom.nodes[j]);
            if d > 0.0 {
                lip = lip.max((values[i] - values[j]).abs() / d);
            }
        }
    }
    sup + lip
}

/// Parameter at which λ is evaluated: the curve parameter in 2D, the angle
/// between `x̂` and ω on the sphere.
pub fn node_parameters(geom: &BoundaryGeometry, wave: &IncidentWave) -> Vec<f64> {
    if geom.dim() == 3 {
        geom.nodes
            .iter()
            .map(|p| {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                (wave.dot(p) / r).clamp(-1.0, 1.0).acos()
            })
            .collect()
    } else {
        geom.arc_params.clone()
    }
}

/// Total field and its normal derivative (ν into the obstacle) at the nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub geometry: GeometrySpec,
    pub wave: IncidentWave,
    pub u: Vec<Complex64>,
    pub dnu: Vec<Complex64>,
}

impl BoundaryTrace {
    /// `max_j |∂_ν u + iλu|`.
    pub fn impedance_residual(&self, lambda: &[f64]) -> f64 {
        self.u
            .iter()
            .zip(&self.dnu)
            .zip(lambda)
            .map(|((u, d), l)| (d + Complex64::new(0.0, *l) * u).norm())
            .fold(0.0, f64::max)
    }

    pub fn check_against(&self, geom: &BoundaryGeometry) -> Result<()> {
        if self.u.len() != geom.len() || self.dnu.len() != geom.len() {
            return Err(Error::Consistency(format!(
                "trace has {} / {} values but geometry {} has {} nodes",
                self.u.len(),
                self.dnu.len(),
                geom.spec.name(),
                geom.len()
            )));
        }
        if self.geometry != geom.spec {
            return Err(Error::Consistency(format!(
                "trace was computed on {:?}, not on {:?}",
                self.geometry, geom.spec
            )));
        }
        Ok(())
    }
}

/// Representation of the scattered field outside the obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExteriorRepresentation {
    /// `u^s = Σ_{|n|≤N} c_n H^{(1)}_n(kr) e^{inθ}`, `coeffs[n + N] = c_n`,
    /// valid for `|x| ≥ radius`.
    Modal2d {
        wave: IncidentWave,
        radius: f64,
        coeffs: Vec<Complex64>,
    },
    /// `u^s = Σ_ℓ c_ℓ h^{(1)}_ℓ(kr) P_ℓ(x̂·ω)`, valid for `|x| ≥ radius`.
    Modal3d {
        wave: IncidentWave,
        radius: f64,
        coeffs: Vec<Complex64>,
    },
    /// `u^s = (D − iηS)φ` on a 2D boundary.
    LayerDensity(LayerPotential),
}

impl ExteriorRepresentation {
    pub fn wave(&self) -> &IncidentWave {
        match self {
            ExteriorRepresentation::Modal2d { wave, .. }
            | ExteriorRepresentation::Modal3d { wave, .. } => wave,
            ExteriorRepresentation::LayerDensity(l) => &l.wave,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ExteriorRepresentation::Modal3d { .. } => 3,
            _ => 2,
        }
    }

    /// Highest modal order N (modal kinds only).
    pub fn modal_order(&self) -> Option<usize> {
        match self {
            ExteriorRepresentation::Modal2d { coeffs, .. } => Some((coeffs.len() - 1) / 2),
            ExteriorRepresentation::Modal3d { coeffs, .. } => Some(coeffs.len() - 1),
            ExteriorRepresentation::LayerDensity(_) => None,
        }
    }

    /// Radius of the smallest origin-centred ball outside which the
    /// representation is valid.
    pub fn inner_radius(&self) -> f64 {
        match self {
            ExteriorRepresentation::LayerDensity(l) => l.geometry.circumradius(),
            ExteriorRepresentation::Modal2d { radius, .. }
            | ExteriorRepresentation::Modal3d { radius, .. } => *radius,
        }
    }
}

/// Which forward solver to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Modal on spheres, Nyström on curves.
    #[default]
    Auto,
    Modal,
    Nystrom,
}

/// Output of a forward solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub trace: BoundaryTrace,
    pub representation: ExteriorRepresentation,
    pub diagnostics: SolveDiagnostics,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct SolveDiagnostics {
    /// 1-norm condition number of the linear system, when one was solved.
    pub condition: Option<f64>,
    /// Relative residual of the linear system.
    pub residual: f64,
    pub truncation: Option<usize>,
    pub warnings: Vec<String>,
}

/// Dispatches to the modal or Nyström solver.
pub fn solve(
    geom: &Arc<BoundaryGeometry>,
    wave: &IncidentWave,
    impedance: &ImpedanceField,
    kind: SolverKind,
) -> Result<Solution> {
    let modal = match kind {
        SolverKind::Modal => true,
        SolverKind::Nystrom => false,
        SolverKind::Auto => geom.dim() == 3,
    };
    if modal {
        solve_modal(geom, wave, impedance, &ModalOptions::default())
    } else {
        solve_nystrom_2d(geom, wave, impedance, &NystromOptions::default())
    }
}

/// Field values (and optionally gradients) at exterior points.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSamples {
    pub values: Vec<Complex64>,
    pub gradients: Option<Vec<Vec<Complex64>>>,
    pub warnings: Vec<String>,
}

/// What [`evaluate_field`] should return.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Add the incident wave.
    pub total: bool,
    pub gradient: bool,
}

/// Evaluates `u^s` (or `u`) at exterior points.
pub fn evaluate_field(
    rep: &ExteriorRepresentation,
    points: &[Vec<f64>],
    opts: EvalOptions,
) -> Result<FieldSamples> {
    let dim = rep.dim();
    for p in points {
        if p.len() != dim {
            return Err(Error::Domain(format!(
                "evaluation point has {} components, representation is {dim}D",
                p.len()
            )));
        }
    }
    let mut out = match rep {
        ExteriorRepresentation::Modal2d {
            wave,
            radius,
            coeffs,
        } => modal::evaluate_2d(wave.k, *radius, coeffs, points, opts.gradient)?,
        ExteriorRepresentation::Modal3d {
            wave,
            radius,
            coeffs,
        } => modal::evaluate_3d(wave, *radius, coeffs, points, opts.gradient)?,
        ExteriorRepresentation::LayerDensity(l) => l.evaluate(points, opts.gradient)?,
    };
    if opts.total {
        let wave = rep.wave();
        for (i, p) in points.iter().enumerate() {
            out.values[i] += wave.value(p);
            if let Some(g) = out.gradients.as_mut() {
                for (a, b) in g[i].iter_mut().zip(wave.gradient(p)) {
                    *a += b;
                }
            }
        }
    }
    Ok(out)
}

/// `Im ∫_{|x|=R} conj(u^s) ∂_r u^s dS`, which is independent of `R` for
/// radiating solutions.
pub fn radial_flux(rep: &ExteriorRepresentation, radius: f64, samples: usize) -> Result<f64> {
    let dim = rep.dim();
    let (points, weights, radial_dirs) = sphere_samples(dim, radius, samples);
    let f = evaluate_field(
        rep,
        &points,
        EvalOptions {
            total: false,
            gradient: true,
        },
    )?;
    let grads = f.gradients.expect("gradients requested");
    let mut acc = 0.0;
    for i in 0..points.len() {
        let dr: Complex64 = grads[i]
            .iter()
            .zip(&radial_dirs[i])
            .map(|(g, d)| g * d)
            .sum();
        acc += weights[i] * (f.values[i].conj() * dr).im;
    }
    Ok(acc)
}

/// Quadrature points on the circle / sphere of radius `radius`, with weights
/// and unit radial directions. In 3D `samples` is the Gauss–Legendre count.
pub(crate) fn sphere_samples(
    dim: usize,
    radius: f64,
    samples: usize,
) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let mut pts = Vec::new();
    let mut w = Vec::new();
    let mut dirs = Vec::new();
    if dim == 2 {
        for j in 0..samples {
            let t = 2.0 * PI * j as f64 / samples as f64;
            let d = vec![t.cos(), t.sin()];
            pts.push(vec![radius * d[0], radius * d[1]]);
            w.push(2.0 * PI * radius / samples as f64);
            dirs.push(d);
        }
    } else {
        let (ct, gw) = crate::geometry::gauss_legendre(samples);
        let nphi = 2 * samples;
        for (c, wc) in ct.iter().zip(&gw) {
            let s = (1.0 - c * c).sqrt();
            for j in 0..nphi {
                let phi = 2.0 * PI * j as f64 / nphi as f64;
                let d = vec![s * phi.cos(), s * phi.sin(), *c];
                pts.push(d.iter().map(|x| radius * x).collect());
                w.push(radius * radius * wc * 2.0 * PI / nphi as f64);
                dirs.push(d);
            }
        }
    }
    (pts, w, dirs)
}
