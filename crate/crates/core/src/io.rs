//! Run configuration, persistence and plot-data files.
//!
//! JSON artifacts are wrapped as `{"metadata": …, "data": …}`; complex
//! numbers are `[re, im]` pairs and floats use the shortest representation
//! that parses back to the same bits. Sweep tables are CSV with 17
//! significant digits; metadata goes in leading `#` lines of CSV and plot
//! files.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::farfield::Directions;
use crate::forward::{
    solve_modal, solve_nystrom_2d, BoundaryTrace, ImpedanceField, IncidentWave, ModalOptions,
    NystromOptions, Solution, SolverKind,
};
use crate::geometry::{build_geometry, BoundaryGeometry, GeometrySpec};
use crate::probes::{SweepMode, SweepOptions, SweepRecord, SweepSetup};
use crate::reconstruction::RegParams;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    #[serde(default)]
    pub solver: SolverKind,
    /// Modal truncation order.
    #[serde(default)]
    pub truncation: Option<usize>,
    /// Nyström coupling η.
    #[serde(default)]
    pub coupling: Option<f64>,
    /// Far-field directions: points on S¹, Gauss–Legendre order on S².
    #[serde(default)]
    pub directions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub mode: SweepMode,
    pub eps_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Noise level for `reconstruct`.
    pub eps: f64,
    pub q: f64,
    pub mask_threshold: f64,
    pub perturbation_order: usize,
    pub perturbation_max: f64,
    pub perturbation_min: f64,
    /// Probe radii; defaults depend on the probe.
    pub r_grid: Vec<f64>,
}

impl Default for Experiment {
    fn default() -> Self {
        let s = SweepOptions::default();
        let r = RegParams::default();
        Experiment {
            mode: s.mode,
            eps_grid: s.eps_grid,
            trials: s.trials,
            seed: s.seed,
            eps: 0.0,
            q: r.q,
            mask_threshold: r.mask_threshold,
            perturbation_order: s.perturbation_order,
            perturbation_max: s.perturbation_range.0,
            perturbation_min: s.perturbation_range.1,
            r_grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub dir: PathBuf,
}

impl Default for Output {
    fn default() -> Self {
        Output { dir: "out".into() }
    }
}

/// A complete experiment definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySpec,
    pub wave: IncidentWave,
    pub impedance: ImpedanceField,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub experiment: Experiment,
    #[serde(default)]
    pub output: Output,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, col)
}

impl RunConfig {
    /// Parses TOML text; `origin` names the source in error locations.
    pub fn from_toml(text: &str, origin: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => {
                    let (l, c) = line_col(text, span.start);
                    format!("{origin}:{l}:{c}")
                }
                None => origin.to_string(),
            };
            Error::Parse {
                location,
                message: e.message().to_string(),
            }
        })
    }

    /// Reads, parses and validates a configuration file; also returns the
    /// SHA-256 of its bytes.
    pub fn load(path: &Path) -> Result<(RunConfig, String)> {
        let text = fs::read_to_string(path)?;
        let cfg = RunConfig::from_toml(&text, &path.display().to_string())?;
        cfg.validate()?;
        Ok((cfg, sha256_hex(text.as_bytes())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(format!("config not serializable: {e}")))
    }

    pub fn build_geometry(&self) -> Result<Arc<BoundaryGeometry>> {
        Ok(Arc::new(build_geometry(&self.geometry)?))
    }

    /// Checks the a-priori class: `k > 0`, `|ω| = 1`, `0 ∈ D`,
    /// `λ ≥ λ₀ > 0`, `‖λ‖_{C^{0,1}} ≤ Λ`, plus the experiment settings.
    pub fn validate(&self) -> Result<()> {
        let geom = build_geometry(&self.geometry)?;
        self.wave.validate(geom.dim())?;
        let origin = vec![0.0; geom.dim()];
        if !geom.contains(&origin) {
            return Err(Error::Validation(
                "the origin must lie inside the obstacle (0 ∈ D)".into(),
            ));
        }
        self.impedance.validate(&geom, &self.wave)?;
        let e = &self.experiment;
        if e.trials == 0 {
            return Err(Error::Validation("experiment.trials must be at least 1".into()));
        }
        if !(e.eps >= 0.0 && e.eps.is_finite()) {
            return Err(Error::Validation(format!("experiment.eps must be ≥ 0, got {}", e.eps)));
        }
        if e.eps_grid.iter().any(|x| !(*x >= 0.0)) || e.eps_grid.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Validation(
                "experiment.eps_grid must be nonnegative and strictly decreasing".into(),
            ));
        }
        if !(e.q > 0.0 && e.q < 1.0) {
            return Err(Error::Validation(format!("experiment.q must lie in (0, 1), got {}", e.q)));
        }
        if !(e.mask_threshold > 0.0 && e.mask_threshold < 1.0) {
            return Err(Error::Validation(format!(
                "experiment.mask_threshold must lie in (0, 1), got {}",
                e.mask_threshold
            )));
        }
        if let Some(d) = self.discretization.directions {
            if d < 4 {
                return Err(Error::Validation(format!(
                    "discretization.directions must be at least 4, got {d}"
                )));
            }
        }
        Ok(())
    }

    /// Configured direction count, 64 on S¹ and order 16 on S² by default.
    pub fn direction_count(&self) -> usize {
        let dim = self.geometry.dimension();
        self.discretization
            .directions
            .unwrap_or(if dim == 2 { 64 } else { 16 })
    }

    pub fn directions(&self) -> Directions {
        Directions::standard(self.geometry.dimension(), self.direction_count())
    }

    pub fn reg_params(&self) -> RegParams {
        RegParams {
            q: self.experiment.q,
            mask_threshold: self.experiment.mask_threshold,
            lambda0: self.impedance.lambda0,
            lambda_bound: self.impedance.lambda_bound,
            ..RegParams::default()
        }
    }

    /// Forward solve with the configured solver and options.
    pub fn solve(&self, geom: &Arc<BoundaryGeometry>) -> Result<Solution> {
        let modal = match self.discretization.solver {
            SolverKind::Modal => true,
            SolverKind::Nystrom => false,
            SolverKind::Auto => geom.dim() == 3,
        };
        if modal {
            solve_modal(
                geom,
                &self.wave,
                &self.impedance,
                &ModalOptions {
                    truncation: self.discretization.truncation,
                },
            )
        } else {
            solve_nystrom_2d(
                geom,
                &self.wave,
                &self.impedance,
                &NystromOptions {
                    coupling: self.discretization.coupling,
                },
            )
        }
    }

    pub fn sweep_setup(&self, geom: Arc<BoundaryGeometry>) -> SweepSetup {
        SweepSetup {
            geometry: geom,
            wave: self.wave.clone(),
            impedance: self.impedance.clone(),
            solver: self.discretization.solver,
            directions: self.direction_count(),
            reg: self.reg_params(),
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        let e = &self.experiment;
        SweepOptions {
            mode: e.mode,
            eps_grid: e.eps_grid.clone(),
            trials: e.trials,
            seed: e.seed,
            perturbation_order: e.perturbation_order,
            perturbation_range: (e.perturbation_max, e.perturbation_min),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Provenance carried by every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub command: String,
    #[serde(default)]
    pub config_sha256: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Metadata {
    pub fn new(command: &str, config_sha256: Option<String>, seed: Option<u64>) -> Self {
        Metadata {
            version: VERSION.to_string(),
            command: command.to_string(),
            config_sha256,
            seed,
        }
    }

    fn comment_lines(&self) -> String {
        let mut s = format!("# version {}\n# command {}\n", self.version, self.command);
        if let Some(h) = &self.config_sha256 {
            let _ = writeln!(s, "# config_sha256 {h}");
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "# seed {seed}");
        }
        s
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    metadata: Metadata,
    data: T,
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            fs::create_dir_all(p)?;
        }
    }
    Ok(())
}

/// Writes `value` as pretty JSON with a metadata block.
pub fn persist<T: Serialize>(value: &T, path: &Path, metadata: &Metadata) -> Result<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(&Envelope {
        metadata: metadata.clone(),
        data: value,
    })
    .map_err(|e| Error::Validation(format!("cannot serialize {}: {e}", path.display())))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Reads a file written by [`persist`].
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<(T, Metadata)> {
    let text = fs::read_to_string(path)?;
    let env: Envelope<T> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
        message: e.to_string(),
    })?;
    Ok((env.data, env.metadata))
}

/// Loads a boundary trace and checks it against a geometry.
pub fn load_trace(path: &Path, geom: &BoundaryGeometry) -> Result<BoundaryTrace> {
    let (trace, _): (BoundaryTrace, _) = load(path)?;
    if trace.geometry.name() != geom.spec.name() {
        return Err(Error::Consistency(format!(
            "trace is for {}, configuration describes {}",
            trace.geometry.name(),
            geom.spec.name()
        )));
    }
    trace.check_against(geom)?;
    Ok(trace)
}

pub const SWEEP_HEADER: &str = "eps,seed,farfield_gap,err_linf,err_l2,mask_fraction";

pub fn sweep_csv(records: &[SweepRecord], metadata: &Metadata) -> String {
    let mut s = metadata.comment_lines();
    s.push_str(SWEEP_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.eps, r.seed, r.farfield_gap, r.err_linf, r.err_l2, r.mask_fraction
        );
    }
    s
}

pub fn write_sweep_csv(records: &[SweepRecord], path: &Path, metadata: &Metadata) -> Result<()> {
    create_parent(path)?;
    fs::write(path, sweep_csv(records, metadata))?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != SWEEP_HEADER {
        return Err(Error::Parse {
            location: format!("{}: header", path.display()),
            message: format!("expected '{SWEEP_HEADER}', found '{header}'"),
        });
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<SweepRecord>() {
        out.push(row.map_err(|e| {
            let location = match e.position() {
                Some(p) => format!("{}:{}", path.display(), p.line()),
                None => path.display().to_string(),
            };
            Error::Parse {
                location,
                message: e.to_string(),
            }
        })?);
    }
    Ok(out)
}

/// Two whitespace-separated columns `x y`, one point per line.
pub fn write_plot(path: &Path, points: &[(f64, f64)], metadata: &Metadata) -> Result<()> {
    create_parent(path)?;
    let mut s = metadata.comment_lines();
    for (x, y) in points {
        let _ = writeln!(s, "{x:.16e} {y:.16e}");
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_plot(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: String| Error::Parse {
            location: format!("{}:{}", path.display(), i + 1),
            message: m,
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 2 {
            return Err(bad(format!("expected 2 columns, found {}", cols.len())));
        }
        let x = cols[0].parse().map_err(|e| bad(format!("{e}")))?;
        let y = cols[1].parse().map_err(|e| bad(format!("{e}")))?;
        out.push((x, y));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CIRCLE: &str = r#"
[geometry]
family = "circle2d"
radius = 1.0
n = 128

[wave]
k = 1.0
omega = [1.0, 0.0]

[impedance]
representation = "fourier_on_parameter"
cos = [1.0, 0.5]
lambda0 = 0.2
Lambda = 10.0

[experiment]
eps_grid = [1e-1, 1e-2]
trials = 2
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = RunConfig::from_toml(CIRCLE, "circle.toml").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.experiment.q, 0.6);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap(), "echo").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parse_error_has_location() {
        let bad = CIRCLE.replace("n = 128", "n = \"many\"");
        match RunConfig::from_toml(&bad, "bad.toml") {
            Err(Error::Parse { location, .. }) => assert!(location.starts_with("bad.toml:"), "{location}"),
            other => panic!("{other:?}"),
        }
        let unknown = CIRCLE.replace("trials = 2", "trails = 2");
        assert!(matches!(RunConfig::from_toml(&unknown, "u"), Err(Error::Parse { .. })));
    }

    #[test]
    fn a_priori_violations() {
        let zero = CIRCLE.replace("lambda0 = 0.2", "lambda0 = 0.0");
        let err = RunConfig::from_toml(&zero, "z").unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("λ₀ > 0"), "{err}");
        let big = CIRCLE.replace("Lambda = 10.0", "Lambda = 1.0");
        assert!(RunConfig::from_toml(&big, "b").unwrap().validate().is_err());
        let omega = CIRCLE.replace("omega = [1.0, 0.0]", "omega = [1.0, 1.0]");
        assert!(RunConfig::from_toml(&omega, "o").unwrap().validate().is_err());
        let grid = CIRCLE.replace("[1e-1, 1e-2]", "[1e-2, 1e-1]");
        assert!(RunConfig::from_toml(&grid, "g").unwrap().validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            SweepRecord {
                eps: 0.1,
                seed: 3,
                farfield_gap: 0.1 + 1e-17,
                err_linf: std::f64::consts::PI,
                err_l2: 1.0 / 3.0,
                mask_fraction: 1.0,
            },
            SweepRecord {
                eps: 1e-300,
                seed: u64::MAX,
                farfield_gap: 5e-324,
                err_linf: 0.0,
                err_l2: 2.0f64.sqrt(),
                mask_fraction: 0.7,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_sweep_csv(&recs, &p, &Metadata::new("sweep", None, Some(1))).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.lines().any(|l| l == SWEEP_HEADER));
        assert_eq!(read_sweep_csv(&p).unwrap(), recs);
    }

    #[test]
    fn plot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.dat");
        let pts = vec![(1.0, 2.5), (1e-8, -3.0 / 7.0)];
        write_plot(&p, &pts, &Metadata::new("probe", None, None)).unwrap();
        assert_eq!(read_plot(&p).unwrap(), pts);
    }
}
