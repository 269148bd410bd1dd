//! Obstacle boundaries and their quadratures.
//!
//! Every 2D boundary is a closed counter-clockwise curve `z(s)`, `s ∈ [0, 2π)`,
//! sampled at `n` equispaced parameter nodes so the periodic trapezoidal rule
//! (and the logarithmic product rule of the Nyström solver) applies. Curves
//! with corners are reparameterized panel by panel with a polynomial grading
//! of exponent 3, which clusters nodes at the corners and makes `z'` vanish
//! there; the node grid is shifted by half a step so no node sits on a
//! corner.
//!
//! The sphere uses Gauss–Legendre nodes in `cos θ` times a uniform azimuth.
//!
//! Normals stored on the geometry point INTO the obstacle.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Grading exponent used at corners.
pub const GRADING_EXPONENT: f64 = 3.0;

const KITE_A: f64 = 0.65;
const KITE_B: f64 = 1.5;

/// Shape family and resolution, exactly as read from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeometrySpec {
    Circle2d { radius: f64, n: usize },
    Kite2d { n: usize },
    StarPolygon2d { arms: usize, amplitude: f64, n: usize },
    Sphere3d { radius: f64, n: usize },
}

impl GeometrySpec {
    pub fn resolution(&self) -> usize {
        match *self {
            GeometrySpec::Circle2d { n, .. }
            | GeometrySpec::Kite2d { n }
            | GeometrySpec::StarPolygon2d { n, .. }
            | GeometrySpec::Sphere3d { n, .. } => n,
        }
    }

    /// Same family at a different resolution.
    pub fn with_resolution(&self, n: usize) -> GeometrySpec {
        let mut out = self.clone();
        match &mut out {
            GeometrySpec::Circle2d { n: m, .. }
            | GeometrySpec::Kite2d { n: m }
            | GeometrySpec::StarPolygon2d { n: m, .. }
            | GeometrySpec::Sphere3d { n: m, .. } => *m = n,
        }
        out
    }

    pub fn dimension(&self) -> usize {
        match self {
            GeometrySpec::Sphere3d { .. } => 3,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeometrySpec::Circle2d { .. } => "circle2d",
            GeometrySpec::Kite2d { .. } => "kite2d",
            GeometrySpec::StarPolygon2d { .. } => "star_polygon2d",
            GeometrySpec::Sphere3d { .. } => "sphere3d",
        }
    }
}

/// Parameter-space data of a 2D boundary, per node.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveData {
    /// Node `j` sits at `s_j = offset + 2πj/n`.
    pub offset: f64,
    /// `dz/ds`.
    pub dz: Vec<[f64; 2]>,
    /// `d²z/ds²`.
    pub ddz: Vec<[f64; 2]>,
    /// `|dz/ds|`.
    pub speed: Vec<f64>,
    pub graded: bool,
}

/// Product grid of the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrid {
    pub radius: f64,
    pub n_theta: usize,
    pub n_phi: usize,
    /// Gauss–Legendre nodes in `cos θ`, ascending.
    pub cos_theta: Vec<f64>,
    pub gl_weights: Vec<f64>,
}

/// A discretized obstacle boundary with its Lipschitz character.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGeometry {
    pub spec: GeometrySpec,
    pub nodes: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// Unit normals pointing into the obstacle.
    pub normals: Vec<[f64; 3]>,
    /// Original (ungraded) parameter per node: the curve parameter in 2D, the
    /// polar angle in 3D.
    pub arc_params: Vec<f64>,
    /// Nodes adjacent to a corner.
    pub corner_flags: Vec<bool>,
    pub corners: Vec<[f64; 2]>,
    pub r0: f64,
    pub lipschitz_m: f64,
    pub diam: f64,
    pub curve: Option<CurveData>,
    pub sphere: Option<SphereGrid>,
}

impl BoundaryGeometry {
    pub fn dim(&self) -> usize {
        self.spec.dimension()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Perimeter (2D) or area (3D) by quadrature.
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn node2(&self, i: usize) -> [f64; 2] {
        [self.nodes[i][0], self.nodes[i][1]]
    }

    /// Outward (into the exterior domain) unit normal, 2D.
    pub fn outward2(&self, i: usize) -> [f64; 2] {
        [-self.normals[i][0], -self.normals[i][1]]
    }

    pub fn circumradius(&self) -> f64 {
        self.nodes.iter().map(norm3).fold(0.0, f64::max)
    }

    pub fn curve(&self) -> Result<&CurveData> {
        self.curve
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("{} is not a 2D curve", self.spec.name())))
    }

    /// Largest distance between neighbouring nodes.
    pub fn max_spacing(&self) -> f64 {
        match &self.sphere {
            Some(g) => {
                let dphi = 2.0 * PI / g.n_phi as f64;
                g.radius * dphi.max(PI / g.n_theta as f64)
            }
            None => {
                let n = self.len();
                (0..n)
                    .map(|i| dist3(&self.nodes[i], &self.nodes[(i + 1) % n]))
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Winding-number test (2D) or radial test (sphere).
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.sphere {
            Some(g) => {
                let r = (x[0] * x[0] + x[1] * x[1] + x.get(2).map_or(0.0, |z| z * z)).sqrt();
                r < g.radius
            }
            None => winding_number(&self.nodes, [x[0], x[1]]).abs() > 0.5,
        }
    }
}

/// Builds the boundary discretization for a family and resolution.
pub fn build_geometry(spec: &GeometrySpec) -> Result<BoundaryGeometry> {
    let n = spec.resolution();
    if n < 16 {
        return Err(Error::InvalidGeometry(format!(
            "resolution n = {n} below the minimum of 16"
        )));
    }
    match *spec {
        GeometrySpec::Sphere3d { radius, n } => build_sphere(spec.clone(), radius, n),
        _ => {
            if !n.is_multiple_of(2) {
                return Err(Error::InvalidGeometry(format!(
                    "curve resolution must be even, got {n}"
                )));
            }
            let curve = Curve::from_spec(spec)?;
            build_curve(spec.clone(), &curve, n, None)
        }
    }
}

/// A finer discretization of a curve that keeps the Lipschitz character of
/// `coarse` instead of recomputing it.
pub(crate) fn refine_curve(coarse: &BoundaryGeometry, n: usize) -> Result<BoundaryGeometry> {
    let spec = coarse.spec.with_resolution(n);
    let curve = Curve::from_spec(&spec)?;
    build_curve(spec, &curve, n, Some((coarse.r0, coarse.lipschitz_m, coarse.diam)))
}

/// Analytic 2D boundary families, before grading.
#[derive(Debug, Clone)]
pub(crate) enum Curve {
    Circle(f64),
    Kite,
    Star { vertices: Vec<[f64; 2]> },
}

impl Curve {
    pub(crate) fn from_spec(spec: &GeometrySpec) -> Result<Curve> {
        match *spec {
            GeometrySpec::Circle2d { radius, .. } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidGeometry(format!(
                        "circle radius must be positive, got {radius}"
                    )));
                }
                Ok(Curve::Circle(radius))
            }
            GeometrySpec::Kite2d { .. } => Ok(Curve::Kite),
            GeometrySpec::StarPolygon2d {
                arms, amplitude, ..
            } => {
                if arms < 2 {
                    return Err(Error::InvalidGeometry(format!(
                        "star polygon needs at least 2 arms, got {arms}"
                    )));
                }
                if !(0.0..1.0).contains(&amplitude) {
                    // amplitude ≥ 1 pushes inner vertices through the origin
                    return Err(Error::InvalidGeometry(format!(
                        "star amplitude {amplitude} outside [0, 1): curve would self-intersect"
                    )));
                }
                let m = 2 * arms;
                let vertices = (0..m)
                    .map(|j| {
                        let rho = if j % 2 == 0 {
                            1.0 + amplitude
                        } else {
                            1.0 - amplitude
                        };
                        let a = 2.0 * PI * j as f64 / m as f64;
                        [rho * a.cos(), rho * a.sin()]
                    })
                    .collect();
                Ok(Curve::Star { vertices })
            }
            GeometrySpec::Sphere3d { .. } => Err(Error::Unsupported("sphere is not a curve".into())),
        }
    }

    fn panels(&self) -> usize {
        match self {
            Curve::Star { vertices } => vertices.len(),
            _ => 0,
        }
    }

    /// `(Z, Z', Z'')` at the original parameter `t`.
    fn eval(&self, t: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        match self {
            Curve::Circle(a) => {
                let (s, c) = t.sin_cos();
                ([a * c, a * s], [-a * s, a * c], [-a * c, -a * s])
            }
            Curve::Kite => {
                let (s, c) = t.sin_cos();
                let (s2, c2) = (2.0 * t).sin_cos();
                (
                    [c + KITE_A * c2 - KITE_A, KITE_B * s],
                    [-s - 2.0 * KITE_A * s2, KITE_B * c],
                    [-c - 4.0 * KITE_A * c2, -KITE_B * s],
                )
            }
            Curve::Star { vertices } => {
                let m = vertices.len();
                let h = 2.0 * PI / m as f64;
                let tt = t.rem_euclid(2.0 * PI);
                let j = ((tt / h).floor() as usize).min(m - 1);
                let a = vertices[j];
                let b = vertices[(j + 1) % m];
                let u = (tt - j as f64 * h) / h;
                let d = [(b[0] - a[0]) / h, (b[1] - a[1]) / h];
                ([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])], d, [0.0, 0.0])
            }
        }
    }

    /// `(Z, Z', Z'', t)` at the graded parameter `s`.
    pub(crate) fn eval_graded(&self, s: f64) -> ([f64; 2], [f64; 2], [f64; 2], f64) {
        let m = self.panels();
        if m == 0 {
            let (z, dz, ddz) = self.eval(s);
            return (z, dz, ddz, s);
        }
        let h = 2.0 * PI / m as f64;
        let ss = s.rem_euclid(2.0 * PI);
        let j = ((ss / h).floor() as usize).min(m - 1);
        let sigma = (ss - j as f64 * h) * (2.0 * PI / h);
        let (w, dw, ddw) = grading(sigma);
        let t = j as f64 * h + w * h / (2.0 * PI);
        let dt = dw;
        let ddt = ddw * (2.0 * PI / h);
        let (z, dz, ddz) = self.eval(t);
        (
            z,
            [dz[0] * dt, dz[1] * dt],
            [ddz[0] * dt * dt + dz[0] * ddt, ddz[1] * dt * dt + dz[1] * ddt],
            t,
        )
    }

    fn corners(&self) -> Vec<[f64; 2]> {
        match self {
            Curve::Star { vertices } => vertices.clone(),
            _ => Vec::new(),
        }
    }
}

/// Sigmoidal grading `w: [0, 2π] → [0, 2π]` with `w^{(k)}(0) = w^{(k)}(2π) = 0`
/// for `k < p`; returns `(w, w', w'')`.
pub(crate) fn grading(s: f64) -> (f64, f64, f64) {
    let p = GRADING_EXPONENT;
    let c = 1.0 / p - 0.5;
    let v = |x: f64| c * ((PI - x) / PI).powi(3) + (x - PI) / (p * PI) + 0.5;
    let dv = |x: f64| -3.0 * c * (PI - x).powi(2) / PI.powi(3) + 1.0 / (p * PI);
    let ddv = |x: f64| 6.0 * c * (PI - x) / PI.powi(3);
    // g(x) = v(x)^p and its derivatives
    let g = |x: f64| v(x).powf(p);
    let dg = |x: f64| p * v(x).powf(p - 1.0) * dv(x);
    let ddg = |x: f64| {
        p * (p - 1.0) * v(x).powf(p - 2.0) * dv(x).powi(2) + p * v(x).powf(p - 1.0) * ddv(x)
    };
    let q = 2.0 * PI - s;
    let a = g(s);
    let b = g(q);
    let da = dg(s);
    let db = -dg(q);
    let dda = ddg(s);
    let ddb = ddg(q);
    let sum = a + b;
    let dsum = da + db;
    let num = da * b - a * db;
    let dnum = dda * b - a * ddb;
    let w = 2.0 * PI * a / sum;
    let dw = 2.0 * PI * num / (sum * sum);
    let ddw = 2.0 * PI * (dnum * sum - 2.0 * num * dsum) / sum.powi(3);
    (w, dw, ddw)
}

fn build_curve(
    spec: GeometrySpec,
    curve: &Curve,
    n: usize,
    character: Option<(f64, f64, f64)>,
) -> Result<BoundaryGeometry> {
    let graded = curve.panels() > 0;
    let offset = if graded { PI / n as f64 } else { 0.0 };
    let h = 2.0 * PI / n as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut dzs = Vec::with_capacity(n);
    let mut ddzs = Vec::with_capacity(n);
    let mut speed = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    for j in 0..n {
        let s = offset + h * j as f64;
        let (z, dz, ddz, t) = curve.eval_graded(s);
        let sp = (dz[0] * dz[0] + dz[1] * dz[1]).sqrt();
        if !(sp > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "degenerate tangent at node {j}"
            )));
        }
        nodes.push([z[0], z[1], 0.0]);
        // counter-clockwise: the left normal points inside
        normals.push([-dz[1] / sp, dz[0] / sp, 0.0]);
        dzs.push(dz);
        ddzs.push(ddz);
        speed.push(sp);
        params.push(t);
    }
    let weights: Vec<f64> = speed.iter().map(|s| s * h).collect();

    let corners = curve.corners();
    let mut corner_flags = vec![false; n];
    if graded {
        let m = curve.panels();
        let hp = 2.0 * PI / m as f64;
        for c in 0..m {
            // first node after and last node before the corner at s = c·hp
            let sc = c as f64 * hp;
            let after = (((sc - offset) / h).ceil() as i64).rem_euclid(n as i64) as usize;
            let before = (after + n - 1) % n;
            corner_flags[after] = true;
            corner_flags[before] = true;
        }
    }

    let mut geom = BoundaryGeometry {
        spec,
        nodes,
        weights,
        normals,
        arc_params: params,
        corner_flags,
        corners,
        r0: 0.0,
        lipschitz_m: 0.0,
        diam: 0.0,
        curve: Some(CurveData {
            offset,
            dz: dzs,
            ddz: ddzs,
            speed,
            graded,
        }),
        sphere: None,
    };
    if let Some((r0, m, diam)) = character {
        geom.r0 = r0;
        geom.lipschitz_m = m;
        geom.diam = diam;
        return Ok(geom);
    }
    geom.diam = diameter(&geom.nodes);
    if winding_number(&geom.nodes, [0.0, 0.0]).abs() < 0.5 {
        return Err(Error::InvalidGeometry("origin is not inside the obstacle".into()));
    }
    let (r0, m) = lipschitz_character_2d(&geom.nodes, geom.diam)?;
    geom.r0 = r0;
    geom.lipschitz_m = m;
    Ok(geom)
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = z;
            for k in 1..n {
                let p2 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p0) / (k + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn build_sphere(spec: GeometrySpec, radius: f64, n_theta: usize) -> Result<BoundaryGeometry> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidGeometry(format!(
            "sphere radius must be positive, got {radius}"
        )));
    }
    let n_phi = 2 * n_theta;
    let (ct, gw) = gauss_legendre(n_theta);
    let dphi = 2.0 * PI / n_phi as f64;
    let mut nodes = Vec::with_capacity(n_theta * n_phi);
    let mut normals = Vec::with_capacity(n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_theta * n_phi);
    let mut params = Vec::with_capacity(n_theta * n_phi);
    for (i, &c) in ct.iter().enumerate() {
        let st = (1.0 - c * c).sqrt();
        for j in 0..n_phi {
            let phi = dphi * j as f64;
            let u = [st * phi.cos(), st * phi.sin(), c];
            nodes.push([radius * u[0], radius * u[1], radius * u[2]]);
            normals.push([-u[0], -u[1], -u[2]]);
            weights.push(radius * radius * gw[i] * dphi);
            params.push(c.acos());
        }
    }
    let count = nodes.len();
    // ball of radius r0 = a/2 meets the sphere in a cap of polar half-angle
    // 2·asin(1/4); over its tangent plane the cap is a graph of slope tan of that
    let r0 = 0.5 * radius;
    let cap = 2.0 * (r0 / (2.0 * radius)).asin();
    Ok(BoundaryGeometry {
        spec,
        nodes,
        weights,
        normals,
        arc_params: params,
        corner_flags: vec![false; count],
        corners: Vec::new(),
        r0,
        lipschitz_m: cap.tan(),
        diam: 2.0 * radius,
        curve: None,
        sphere: Some(SphereGrid {
            radius,
            n_theta,
            n_phi,
            cos_theta: ct,
            gl_weights: gw,
        }),
    })
}

fn norm3(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

pub(crate) fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn diameter(nodes: &[[f64; 3]]) -> f64 {
    let mut d = 0.0_f64;
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            d = d.max(dist3(a, b));
        }
    }
    d
}

fn winding_number(nodes: &[[f64; 3]], p: [f64; 2]) -> f64 {
    let n = nodes.len();
    let mut total = 0.0;
    for i in 0..n {
        let a = nodes[i];
        let b = nodes[(i + 1) % n];
        let a0 = (a[1] - p[1]).atan2(a[0] - p[0]);
        let b0 = (b[1] - p[1]).atan2(b[0] - p[0]);
        let mut d = b0 - a0;
        while d > PI {
            d -= 2.0 * PI;
        }
        while d < -PI {
            d += 2.0 * PI;
        }
        total += d;
    }
    total / (2.0 * PI)
}

const MAX_GRAPH_SLOPE: f64 = 5.0;

/// Largest tested radius `r0` at which every ball `B_{r0}(x)` cuts the curve
/// in a single arc that is a graph over its chord, and the largest chord
/// slope `M` seen at that radius.
fn lipschitz_character_2d(nodes: &[[f64; 3]], diam: f64) -> Result<(f64, f64)> {
    let n = nodes.len();
    let min_step = (0..n)
        .map(|i| dist3(&nodes[i], &nodes[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min);
    let mut r = diam / 4.0;
    while r > 2.0 * min_step {
        if let Some(m) = graph_slope_at(nodes, r) {
            if m <= MAX_GRAPH_SLOPE {
                return Ok((r, m));
            }
        }
        r *= 0.5;
    }
    Err(Error::InvalidGeometry(
        "no radius found at which the boundary is locally a Lipschitz graph".into(),
    ))
}

fn graph_slope_at(nodes: &[[f64; 3]], r: f64) -> Option<f64> {
    let n = nodes.len();
    let mut worst = 0.0_f64;
    for i in 0..n {
        let x0 = nodes[i];
        // contiguous arc through x0 inside the ball
        let mut lo = 0usize;
        while lo + 1 < n && dist3(&nodes[(i + n - lo - 1) % n], &x0) < r {
            lo += 1;
        }
        let mut hi = 0usize;
        while hi + 1 < n && dist3(&nodes[(i + hi + 1) % n], &x0) < r {
            hi += 1;
        }
        if lo + hi + 1 >= n {
            return None;
        }
        let inside = nodes.iter().filter(|p| dist3(p, &x0) < r).count();
        if inside != lo + hi + 1 {
            return None;
        }
        let first = nodes[(i + n - lo) % n];
        let last = nodes[(i + hi) % n];
        let mut axis = [last[0] - first[0], last[1] - first[1]];
        let len = (axis[0] * axis[0] + axis[1] * axis[1]).sqrt();
        if len == 0.0 {
            continue;
        }
        axis = [axis[0] / len, axis[1] / len];
        for k in 0..(lo + hi) {
            let a = nodes[(i + n - lo + k) % n];
            let b = nodes[(i + n - lo + k + 1) % n];
            let d = [b[0] - a[0], b[1] - a[1]];
            let along = d[0] * axis[0] + d[1] * axis[1];
            let across = d[0] * axis[1] - d[1] * axis[0];
            if along <= 0.0 {
                return None;
            }
            worst = worst.max(across.abs() / along);
        }
    }
    Some(worst)
}

/// The boundary patch `Δ_r(x₀) = B_r(x₀) ∩ ∂D` at node resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPatch {
    pub center_index: usize,
    pub radius: f64,
    pub member_indices: Vec<usize>,
    pub measure: f64,
}

/// All nodes strictly inside the ambient ball `B_r(x₀)`, `x₀` the node at
/// `center_index`. Radii at or beyond the diameter return the whole boundary.
pub fn boundary_patch(geom: &BoundaryGeometry, center_index: usize, r: f64) -> Result<BoundaryPatch> {
    if center_index >= geom.len() {
        return Err(Error::Domain(format!(
            "center index {center_index} out of range (n = {})",
            geom.len()
        )));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("patch radius must be positive, got {r}")));
    }
    let x0 = geom.nodes[center_index];
    let member_indices: Vec<usize> = (0..geom.len())
        .filter(|&j| dist3(&geom.nodes[j], &x0) < r)
        .collect();
    let measure = member_indices.iter().map(|&j| geom.weights[j]).sum();
    Ok(BoundaryPatch {
        center_index,
        radius: r,
        member_indices,
        measure,
    })
}

/// JSON echo of a geometry: nodes, weights and normals as plain arrays.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeometryEcho {
    pub spec: GeometrySpec,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub normals: Vec<Vec<f64>>,
    pub arc_params: Vec<f64>,
    pub corner_flags: Vec<bool>,
    pub r0: f64,
    pub lipschitz_m: f64,
    pub diam: f64,
}

impl From<&BoundaryGeometry> for GeometryEcho {
    fn from(g: &BoundaryGeometry) -> Self {
        let d = g.dim();
        GeometryEcho {
            spec: g.spec.clone(),
            nodes: g.nodes.iter().map(|p| p[..d].to_vec()).collect(),
            weights: g.weights.clone(),
            normals: g.normals.iter().map(|p| p[..d].to_vec()).collect(),
            arc_params: g.arc_params.clone(),
            corner_flags: g.corner_flags.clone(),
            r0: g.r0,
            lipschitz_m: g.lipschitz_m,
            diam: g.diam,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(n: usize) -> BoundaryGeometry {
        build_geometry(&GeometrySpec::Circle2d { radius: 1.0, n }).unwrap()
    }

    #[test]
    fn circle_weights_sum_to_perimeter() {
        let g = circle(64);
        assert!((g.measure() - 2.0 * PI).abs() < 1e-12);
        for (p, nu) in g.nodes.iter().zip(&g.normals) {
            let r = norm3(p);
            for c in 0..2 {
                assert!((nu[c] + p[c] / r).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sphere_weights_sum_to_area() {
        let g = build_geometry(&GeometrySpec::Sphere3d { radius: 1.0, n: 16 }).unwrap();
        assert!((g.measure() - 4.0 * PI).abs() < 1e-12);
        for (p, nu) in g.nodes.iter().zip(&g.normals) {
            for c in 0..3 {
                assert!((nu[c] + p[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn kite_perimeter_self_converges() {
        let a = build_geometry(&GeometrySpec::Kite2d { n: 128 }).unwrap().measure();
        let b = build_geometry(&GeometrySpec::Kite2d { n: 256 }).unwrap().measure();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn star_polygon_perimeter_converges_under_grading() {
        let spec = GeometrySpec::StarPolygon2d {
            arms: 5,
            amplitude: 0.3,
            n: 80,
        };
        let g = build_geometry(&spec).unwrap();
        let exact: f64 = {
            let c = Curve::from_spec(&spec).unwrap();
            let v = c.corners();
            (0..v.len())
                .map(|j| {
                    let a = v[j];
                    let b = v[(j + 1) % v.len()];
                    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
                })
                .sum()
        };
        let e1 = (g.measure() - exact).abs();
        let g2 = build_geometry(&spec.with_resolution(160)).unwrap();
        let e2 = (g2.measure() - exact).abs();
        assert!(e2 < e1 / 4.0 || e2 < 1e-12, "e1={e1} e2={e2}");
        assert_eq!(g.corner_flags.iter().filter(|&&f| f).count(), 20);
        assert!(g.lipschitz_m > 0.0 && g.r0 > 0.0);
    }

    #[test]
    fn grading_derivatives_match_finite_differences() {
        for &s in &[0.3, 1.0, 2.5, 4.0, 6.0] {
            let h = 1e-5;
            let (wp, dwp, _) = grading(s + h);
            let (wm, dwm, _) = grading(s - h);
            let (_, dw, ddw) = grading(s);
            assert!(((wp - wm) / (2.0 * h) - dw).abs() < 1e-7);
            assert!(((dwp - dwm) / (2.0 * h) - ddw).abs() < 1e-6);
        }
        let (w0, dw0, _) = grading(0.0);
        assert!(w0.abs() < 1e-15 && dw0.abs() < 1e-15);
        let (w1, _, _) = grading(2.0 * PI);
        assert!((w1 - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn invalid_families_rejected() {
        assert!(build_geometry(&GeometrySpec::StarPolygon2d {
            arms: 4,
            amplitude: 1.2,
            n: 64
        })
        .is_err());
        assert!(build_geometry(&GeometrySpec::Circle2d { radius: 1.0, n: 8 }).is_err());
        assert!(build_geometry(&GeometrySpec::Circle2d { radius: -1.0, n: 32 }).is_err());
    }

    #[test]
    fn circle_patch_matches_chord_relation() {
        let g = circle(4096);
        let p = boundary_patch(&g, 0, 0.5).unwrap();
        let exact = 4.0 * (0.25f64).asin();
        assert!((exact - 1.010_721_9).abs() < 1e-6);
        assert!((p.measure - exact).abs() <= 2.0 * 2.0 * PI / 4096.0);
        for &j in &p.member_indices {
            assert!(dist3(&g.nodes[j], &g.nodes[0]) < 0.5);
        }
    }

    #[test]
    fn degenerate_and_full_patches() {
        let g = circle(64);
        let tiny = boundary_patch(&g, 3, 1e-3).unwrap();
        assert_eq!(tiny.member_indices, vec![3]);
        assert!((tiny.measure - g.weights[3]).abs() < 1e-15);
        let full = boundary_patch(&g, 3, g.diam * 1.01).unwrap();
        assert_eq!(full.member_indices.len(), 64);
        assert!(boundary_patch(&g, 3, 0.0).is_err());
    }

    #[test]
    fn lipschitz_character_of_circle() {
        let g = circle(256);
        assert!(g.r0 > 0.2 && g.r0 <= 0.5 + 1e-12);
        // a window of chord radius r0 has slope at most tan(asin(r0/2)·2)
        assert!(g.lipschitz_m < (2.0 * (g.r0 / 2.0).asin()).tan() + 1e-9);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((i - 2.0 / 13.0).abs() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn patch_measure_nondecreasing(center in 0usize..96, r1 in 0.01f64..2.0, dr in 0.0f64..1.0) {
                let g = build_geometry(&GeometrySpec::Kite2d { n: 96 }).unwrap();
                let a = boundary_patch(&g, center, r1).unwrap();
                let b = boundary_patch(&g, center, r1 + dr).unwrap();
                prop_assert!(b.measure >= a.measure);
                prop_assert!(b.measure <= g.measure() + 1e-12);
            }
        }
    }
}
