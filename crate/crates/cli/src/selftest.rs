use std::sync::Arc;

use impedance_core::forward::{EvalOptions, SolverKind};
use impedance_core::special::{recurrence_residual, wronskian_residual, Family};
use impedance_core::{
    build_geometry, compute_far_field, evaluate_field, far_to_near, solve, Directions,
    GeometrySpec, ImpedanceField, IncidentWave, Result, Solution,
};

fn check(name: &str, value: Result<f64>, tol: f64) -> bool {
    let (ok, shown) = match value {
        Ok(v) => (v < tol, format!("{v:.3e}")),
        Err(e) => (false, e.to_string()),
    };
    println!("{} {name}: {shown} (tolerance {tol:.0e})", if ok { "PASS" } else { "FAIL" });
    ok
}

fn wronskians() -> Result<f64> {
    let mut worst = 0.0_f64;
    for family in [Family::Cylindrical, Family::Spherical] {
        for order in 0..=50 {
            for x in [0.5, 1.0, 10.0, 50.0] {
                let (res, w) = wronskian_residual(family, order, x)?;
                worst = worst.max(res / w.abs());
            }
        }
    }
    Ok(worst)
}

fn circle_solution(kind: SolverKind) -> Result<Solution> {
    let geom = Arc::new(build_geometry(&GeometrySpec::Circle2d { radius: 1.0, n: 256 })?);
    let wave = IncidentWave::new(2.0, vec![1.0, 0.0])?;
    solve(&geom, &wave, &ImpedanceField::constant(1.5), kind)
}

fn modal_vs_nystrom() -> Result<f64> {
    let a = circle_solution(SolverKind::Modal)?;
    let b = circle_solution(SolverKind::Nystrom)?;
    let scale = a.trace.u.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let diff = a
        .trace
        .u
        .iter()
        .zip(&b.trace.u)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    Ok(diff / scale)
}

fn farfield_round_trip() -> Result<f64> {
    let sol = circle_solution(SolverKind::Modal)?;
    let ffp = compute_far_field(&sol.representation, &Directions::circle(64))?;
    let cont = far_to_near(&ffp, 2.0, 0.0)?;
    let pts: Vec<Vec<f64>> = (0..32)
        .map(|j| {
            let t = std::f64::consts::TAU * j as f64 / 32.0;
            vec![2.0 * t.cos(), 2.0 * t.sin()]
        })
        .collect();
    let direct = evaluate_field(&sol.representation, &pts, EvalOptions::default())?;
    let back = evaluate_field(&cont.representation, &pts, EvalOptions::default())?;
    let scale = direct.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let diff = direct
        .values
        .iter()
        .zip(&back.values)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    Ok(diff / scale)
}

fn json_round_trip() -> Result<f64> {
    let sol = circle_solution(SolverKind::Nystrom)?;
    let text = serde_json::to_string(&sol).map_err(|e| impedance_core::Error::Consistency(e.to_string()))?;
    let back: Solution =
        serde_json::from_str(&text).map_err(|e| impedance_core::Error::Consistency(e.to_string()))?;
    Ok(if back == sol { 0.0 } else { 1.0 })
}

/// Runs every check, printing one line each; true when all pass.
pub fn run() -> bool {
    let results = [
        check("wronskian orders 0..=50", wronskians(), 1e-10),
        check("bessel recurrence", Ok(recurrence_residual(50, 10.0)), 1e-10),
        check("modal vs nystrom on the unit circle", modal_vs_nystrom(), 1e-8),
        check("far field continuation to r = 2", farfield_round_trip(), 1e-8),
        check("solution json round trip", json_round_trip(), 0.5),
    ];
    results.iter().all(|&ok| ok)
}
