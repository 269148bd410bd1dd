//! Cylindrical and spherical wave functions.
//!
//! Bessel functions of the first kind are computed by Miller's backward
//! recurrence, normalized with the Neumann sum rules
//!
//! ```text
//! J_0(x) + 2 Σ_{k≥1} J_{2k}(x) = 1,        Σ_{n≥0} (2n+1) j_n(x)² = 1,
//! ```
//!
//! and the second-kind functions by forward recurrence from `Y_0, Y_1`
//! (Neumann series in the `J_{2k}`) or from the closed forms of `y_0, y_1`.
//! Forward recurrence is stable for `Y`/`y` and unstable for `J`/`j` once the
//! order exceeds the argument, hence the split.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Largest supported order.
pub const MAX_ORDER: usize = 200;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const RESCALE_ABOVE: f64 = 1e200;

/// Which function family to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveKind {
    CylJ,
    CylY,
    CylH1,
    SphJ,
    SphY,
    SphH1,
    LegendreP,
}

/// A single evaluated wave function, kept together with its arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveFunctionValue {
    pub kind: WaveKind,
    pub order: usize,
    pub argument: f64,
    pub value: Complex64,
}

impl WaveFunctionValue {
    pub fn new(kind: WaveKind, order: usize, argument: f64, derivative: bool) -> Result<Self> {
        let value = eval_wave_function(kind, order, argument, derivative)?;
        Ok(Self {
            kind,
            order,
            argument,
            value,
        })
    }
}

/// Evaluates one wave function (or its derivative when `derivative` is set).
///
/// `J` and `j` accept the closure point `x = 0`; the other radial kinds
/// require `x > 0`. Legendre polynomials take `x ∈ [−1, 1]`.
pub fn eval_wave_function(
    kind: WaveKind,
    order: usize,
    x: f64,
    derivative: bool,
) -> Result<Complex64> {
    if order > MAX_ORDER {
        return Err(Error::Domain(format!(
            "order {order} outside supported range 0..={MAX_ORDER}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::Domain(format!("non-finite argument {x}")));
    }
    let value = match kind {
        WaveKind::LegendreP => {
            if !(-1.0..=1.0).contains(&x) {
                return Err(Error::Domain(format!(
                    "Legendre argument {x} outside [-1, 1]"
                )));
            }
            let (p, dp) = legendre_with_derivative(order, x);
            Complex64::new(if derivative { dp[order] } else { p[order] }, 0.0)
        }
        WaveKind::CylJ | WaveKind::SphJ if x == 0.0 => {
            Complex64::new(first_kind_at_zero(kind, order, derivative), 0.0)
        }
        _ => {
            if x <= 0.0 {
                return Err(Error::Domain(format!(
                    "radial wave functions need a positive argument, got {x}"
                )));
            }
            let v = radial(kind, order, x, derivative);
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::Domain(format!(
                    "{kind:?} of order {order} at {x} is not representable in double precision"
                )));
            }
            v
        }
    };
    Ok(value)
}

fn first_kind_at_zero(kind: WaveKind, order: usize, derivative: bool) -> f64 {
    match (kind, order, derivative) {
        (_, 0, false) => 1.0,
        (WaveKind::CylJ, 1, true) => 0.5,
        (WaveKind::SphJ, 1, true) => 1.0 / 3.0,
        _ => 0.0,
    }
}

fn radial(kind: WaveKind, order: usize, x: f64, derivative: bool) -> Complex64 {
    // derivatives need order + 1 through the recurrence f'_n = f_{n-1} - c f_n
    let top = order + 1;
    match kind {
        WaveKind::CylJ | WaveKind::CylY | WaveKind::CylH1 => {
            let j = bessel_j_array(top, x);
            let y = if kind == WaveKind::CylJ {
                vec![0.0; top + 1]
            } else {
                bessel_y_array(top, x)
            };
            let pick = |f: &[f64]| {
                if derivative {
                    cyl_derivative(f, order, x)
                } else {
                    f[order]
                }
            };
            match kind {
                WaveKind::CylJ => Complex64::new(pick(&j), 0.0),
                WaveKind::CylY => Complex64::new(pick(&y), 0.0),
                _ => Complex64::new(pick(&j), pick(&y)),
            }
        }
        _ => {
            let j = spherical_j_array(top, x);
            let y = if kind == WaveKind::SphJ {
                vec![0.0; top + 1]
            } else {
                spherical_y_array(top, x)
            };
            let pick = |f: &[f64]| {
                if derivative {
                    sph_derivative(f, order, x)
                } else {
                    f[order]
                }
            };
            match kind {
                WaveKind::SphJ => Complex64::new(pick(&j), 0.0),
                WaveKind::SphY => Complex64::new(pick(&y), 0.0),
                _ => Complex64::new(pick(&j), pick(&y)),
            }
        }
    }
}

/// `C'_n = C_{n-1} − (n/x) C_n`, with `C'_0 = −C_1`.
pub fn cyl_derivative(f: &[f64], n: usize, x: f64) -> f64 {
    if n == 0 {
        -f[1]
    } else {
        f[n - 1] - n as f64 / x * f[n]
    }
}

/// `f'_n = f_{n-1} − ((n+1)/x) f_n`, with `f'_0 = −f_1`.
pub fn sph_derivative(f: &[f64], n: usize, x: f64) -> f64 {
    if n == 0 {
        -f[1]
    } else {
        f[n - 1] - (n + 1) as f64 / x * f[n]
    }
}

fn miller_start(nmax: usize, x: f64) -> usize {
    let big = (nmax as f64).max(x);
    let m = big + (40.0 * big.max(1.0)).sqrt() + 20.0;
    // even start keeps the J_{2k} bookkeeping simple
    let m = m.ceil() as usize;
    m + (m % 2)
}

/// `J_0(x), …, J_nmax(x)` for `x > 0`.
pub fn bessel_j_array(nmax: usize, x: f64) -> Vec<f64> {
    debug_assert!(x > 0.0);
    let m = miller_start(nmax, x);
    let mut out = vec![0.0; nmax + 1];
    let mut next = 0.0; // f_{n+1}
    let mut cur = 1e-300_f64.max(f64::MIN_POSITIVE * 1e10); // f_n
    let mut norm = 0.0;
    for n in (0..=m).rev() {
        if n <= nmax {
            out[n] = cur;
        }
        if n % 2 == 0 {
            norm += if n == 0 { cur } else { 2.0 * cur };
        }
        if n == 0 {
            break;
        }
        let prev = 2.0 * n as f64 / x * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > RESCALE_ABOVE {
            let s = 1.0 / RESCALE_ABOVE;
            cur *= s;
            next *= s;
            norm *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// `Y_0(x), …, Y_nmax(x)` for `x > 0`.
pub fn bessel_y_array(nmax: usize, x: f64) -> Vec<f64> {
    let top = miller_start(1, x);
    let j = bessel_j_array(top.max(2), x);
    let (y0, y1) = y01_from_j(&j, x);
    let mut out = vec![0.0; nmax + 1];
    out[0] = y0;
    if nmax >= 1 {
        out[1] = y1;
    }
    for n in 1..nmax {
        out[n + 1] = 2.0 * n as f64 / x * out[n] - out[n - 1];
    }
    out
}

/// Neumann series for `Y_0` and its term-by-term derivative for `Y_1`.
fn y01_from_j(j: &[f64], x: f64) -> (f64, f64) {
    let log_term = (0.5 * x).ln() + EULER_GAMMA;
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut k = 1;
    while 2 * k + 1 < j.len() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        s0 += sign * j[2 * k] / k as f64;
        s1 += sign * (j[2 * k - 1] - j[2 * k + 1]) / k as f64;
        k += 1;
    }
    let y0 = 2.0 / PI * log_term * j[0] - 4.0 / PI * s0;
    let y1 = 2.0 / PI * log_term * j[1] - 2.0 / PI * j[0] / x + 2.0 / PI * s1;
    (y0, y1)
}

/// `(J_0, J_1, Y_0, Y_1)` at one argument; the inner loop of kernel assembly.
pub fn bessel_jy01(x: f64) -> (f64, f64, f64, f64) {
    if x >= ASYMPTOTIC_X {
        let (j0, y0) = hankel_asymptotic(0.0, x);
        let (j1, y1) = hankel_asymptotic(1.0, x);
        return (j0, j1, y0, y1);
    }
    let top = miller_start(1, x).max(2);
    let j = bessel_j_array(top, x);
    let (y0, y1) = y01_from_j(&j, x);
    (j[0], j[1], y0, y1)
}

const ASYMPTOTIC_X: f64 = 30.0;

/// `(J_ν(x), Y_ν(x))` from the large-argument Hankel expansion.
fn hankel_asymptotic(nu: f64, x: f64) -> (f64, f64) {
    let mu = 4.0 * nu * nu;
    let (mut p, mut q) = (1.0, 0.0);
    let mut term = 1.0_f64;
    for k in 1..60 {
        let next = term * (mu - ((2 * k - 1) * (2 * k - 1)) as f64) / (8.0 * k as f64 * x);
        if next.abs() >= term.abs() || next == 0.0 {
            break;
        }
        term = next;
        let signed = if (k / 2) % 2 == 0 { term } else { -term };
        if k % 2 == 0 {
            p += signed;
        } else {
            q += signed;
        }
        if term.abs() < 1e-17 {
            break;
        }
    }
    let chi = x - (0.5 * nu + 0.25) * PI;
    let (s, c) = chi.sin_cos();
    let amp = (2.0 / (PI * x)).sqrt();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

/// `H^{(1)}_0(x), H^{(1)}_1(x)`.
pub fn hankel01(x: f64) -> (Complex64, Complex64) {
    let (j0, j1, y0, y1) = bessel_jy01(x);
    (Complex64::new(j0, y0), Complex64::new(j1, y1))
}

/// `H^{(1)}_0, …, H^{(1)}_nmax` at `x > 0`.
pub fn hankel_array(nmax: usize, x: f64) -> Vec<Complex64> {
    let j = bessel_j_array(nmax, x);
    let y = bessel_y_array(nmax, x);
    j.iter()
        .zip(&y)
        .map(|(&a, &b)| Complex64::new(a, b))
        .collect()
}

/// `j_0(x), …, j_nmax(x)` for `x > 0`.
pub fn spherical_j_array(nmax: usize, x: f64) -> Vec<f64> {
    debug_assert!(x > 0.0);
    let mut out = spherical_j_unsigned(nmax.max(1), x);
    out.truncate(nmax + 1);
    out
}

fn spherical_j_unsigned(nmax: usize, x: f64) -> Vec<f64> {
    let m = miller_start(nmax, x);
    let mut out = vec![0.0; nmax + 1];
    let mut next = 0.0;
    // squared in the sum rule, so start well above the underflow range
    let mut cur = 1e-100_f64;
    let mut norm = 0.0;
    for n in (0..=m).rev() {
        if n <= nmax {
            out[n] = cur;
        }
        norm += (2 * n + 1) as f64 * cur * cur;
        if n == 0 {
            break;
        }
        let prev = (2 * n + 1) as f64 / x * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > 1e100 {
            let s = 1e-100;
            cur *= s;
            next *= s;
            norm *= s * s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    // the sum rule fixes |scale|; j_0 or j_1 fixes the sign
    let mut scale = 1.0 / norm.sqrt();
    let j0 = x.sin() / x;
    let j1 = x.sin() / (x * x) - x.cos() / x;
    let reference = if j0.abs() > j1.abs() {
        (j0, out[0])
    } else {
        (j1, out[1])
    };
    if reference.0 * reference.1 < 0.0 {
        scale = -scale;
    }
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}

/// `y_0(x), …, y_nmax(x)` for `x > 0`.
pub fn spherical_y_array(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    out[0] = -x.cos() / x;
    if nmax >= 1 {
        out[1] = -x.cos() / (x * x) - x.sin() / x;
    }
    for n in 1..nmax {
        out[n + 1] = (2 * n + 1) as f64 / x * out[n] - out[n - 1];
    }
    out
}

/// `h^{(1)}_0, …, h^{(1)}_nmax` at `x > 0`.
pub fn spherical_hankel_array(nmax: usize, x: f64) -> Vec<Complex64> {
    let j = spherical_j_array(nmax, x);
    let y = spherical_y_array(nmax, x);
    j.iter()
        .zip(&y)
        .map(|(&a, &b)| Complex64::new(a, b))
        .collect()
}

/// Legendre polynomials `P_0..P_nmax` and their derivatives at `t ∈ [−1, 1]`.
pub fn legendre_with_derivative(nmax: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; nmax + 1];
    let mut dp = vec![0.0; nmax + 1];
    p[0] = 1.0;
    if nmax >= 1 {
        p[1] = t;
        dp[1] = 1.0;
    }
    for n in 1..nmax {
        let nf = n as f64;
        p[n + 1] = ((2.0 * nf + 1.0) * t * p[n] - nf * p[n - 1]) / (nf + 1.0);
        // P'_{n+1} = P'_{n-1} + (2n+1) P_n
        dp[n + 1] = dp[n - 1] + (2.0 * nf + 1.0) * p[n];
    }
    (p, dp)
}

/// Legendre polynomials `P_0..P_nmax` at `t`.
pub fn legendre_array(nmax: usize, t: f64) -> Vec<f64> {
    legendre_with_derivative(nmax, t).0
}

/// Which Wronskian identity to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Cylindrical,
    Spherical,
}

/// Residual of the Wronskian identity and the identity value itself.
///
/// Cylindrical: `J_n Y_n' − J_n' Y_n = 2/(πx)`; spherical:
/// `j_n y_n' − j_n' y_n = 1/x²`.
pub fn wronskian_residual(family: Family, order: usize, x: f64) -> Result<(f64, f64)> {
    if x <= 0.0 || !x.is_finite() {
        return Err(Error::Domain(format!("Wronskian needs x > 0, got {x}")));
    }
    if order > MAX_ORDER {
        return Err(Error::Domain(format!(
            "order {order} outside supported range 0..={MAX_ORDER}"
        )));
    }
    let (lhs, identity) = match family {
        Family::Cylindrical => {
            let j = bessel_j_array(order + 1, x);
            let y = bessel_y_array(order + 1, x);
            let lhs = j[order] * cyl_derivative(&y, order, x) - cyl_derivative(&j, order, x) * y[order];
            (lhs, 2.0 / (PI * x))
        }
        Family::Spherical => {
            let j = spherical_j_array(order + 1, x);
            let y = spherical_y_array(order + 1, x);
            let lhs = j[order] * sph_derivative(&y, order, x) - sph_derivative(&j, order, x) * y[order];
            (lhs, 1.0 / (x * x))
        }
    };
    if !lhs.is_finite() {
        return Err(Error::Domain(format!(
            "Wronskian at order {order}, x = {x} overflows"
        )));
    }
    Ok(((lhs - identity).abs(), identity))
}

/// Worst relative three-term recurrence residual
/// `|f_{n−1} + f_{n+1} − (2n/x) f_n| / max term` over `1 ≤ n < nmax`,
/// for both `J` and `Y`.
pub fn recurrence_residual(nmax: usize, x: f64) -> f64 {
    let j = bessel_j_array(nmax, x);
    let y = bessel_y_array(nmax, x);
    let mut worst = 0.0_f64;
    for f in [&j, &y] {
        for n in 1..nmax {
            let c = 2.0 * n as f64 / x * f[n];
            let scale = f[n - 1].abs().max(f[n + 1].abs()).max(c.abs());
            if scale > 0.0 {
                worst = worst.max((f[n - 1] + f[n + 1] - c).abs() / scale);
            }
        }
    }
    worst
}
