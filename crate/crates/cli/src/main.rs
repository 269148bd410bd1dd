use clap::{Parser, Subcommand};
use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use impedance_core::farfield::FarFieldPattern;
use impedance_core::geometry::GeometryEcho;
use impedance_core::io::{persist, load, write_plot, write_sweep_csv, Metadata, RunConfig};
use impedance_core::probes::{
    add_noise, far_lower_bound_probe, rellich_trace_probes, sample_tube, stability_sweep,
    vanishing_rate_probe, SweepMode,
};
use impedance_core::{
    compute_far_field, reconstruct_from_farfield, Error, ImpedanceField, Solution,
};

mod selftest;

#[derive(Parser)]
#[command(name = "impedance-lab", version, about = "Impedance scattering laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Forward solve; writes solution.json, trace.json and geometry.json.
    Solve(Common),
    /// Far field of a stored solution; writes farfield.json.
    Farfield {
        #[command(flatten)]
        common: Common,
        /// Solution file; defaults to <out>/solution.json.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Impedance from a stored far field; writes estimate.json.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Far-field file; defaults to <out>/farfield.json.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Noise level added to the far field before reconstructing.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Stability sweep; writes sweep.csv and sweep.json.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["noise", "pair"])]
        mode: Option<String>,
    },
    /// Numerical probes of the boundary estimates.
    Probe {
        #[arg(value_parser = ["vanishing", "rellich", "lowerbound"])]
        which: String,
        #[command(flatten)]
        common: Common,
    },
    /// Runs the built-in oracle checks.
    Selftest,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    meta: Metadata,
}

fn context(common: &Common, command: &str) -> Result<Ctx, Error> {
    let (mut cfg, hash) = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.experiment.seed = s;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let meta = Metadata::new(command, Some(hash), Some(cfg.experiment.seed));
    Ok(Ctx { cfg, out, meta })
}

fn report_warnings(ws: &[String]) {
    for w in ws {
        warn!("{w}");
    }
}

fn solve_cmd(c: &Ctx) -> Result<Solution, Error> {
    let geom = c.cfg.build_geometry()?;
    let sol = c.cfg.solve(&geom)?;
    report_warnings(&sol.diagnostics.warnings);
    persist(&sol, &c.out.join("solution.json"), &c.meta)?;
    persist(&sol.trace, &c.out.join("trace.json"), &c.meta)?;
    persist(&GeometryEcho::from(geom.as_ref()), &c.out.join("geometry.json"), &c.meta)?;
    println!(
        "solved {} with {} nodes: residual {:.3e}",
        geom.spec.name(),
        geom.len(),
        sol.diagnostics.residual
    );
    Ok(sol)
}

fn farfield_cmd(c: &Ctx, input: Option<&Path>) -> Result<(), Error> {
    let path = input.map_or_else(|| c.out.join("solution.json"), Path::to_path_buf);
    let (sol, _): (Solution, _) = load(&path)?;
    if sol.trace.geometry != c.cfg.geometry {
        return Err(Error::Consistency(format!(
            "{} was computed on a different geometry than the configuration",
            path.display()
        )));
    }
    let ffp = compute_far_field(&sol.representation, &c.cfg.directions())?;
    persist(&ffp, &c.out.join("farfield.json"), &c.meta)?;
    if ffp.dimension == 2 {
        let pts: Vec<(f64, f64)> = ffp
            .directions
            .iter()
            .zip(&ffp.samples)
            .map(|(d, u)| (d[1].atan2(d[0]), u.norm()))
            .collect();
        write_plot(&c.out.join("farfield_abs.dat"), &pts, &c.meta)?;
    }
    println!("far field on {} directions: L2 norm {:.6e}", ffp.samples.len(), ffp.l2_norm());
    Ok(())
}

fn reconstruct_cmd(c: &Ctx, input: Option<&Path>, eps: Option<f64>) -> Result<(), Error> {
    let path = input.map_or_else(|| c.out.join("farfield.json"), Path::to_path_buf);
    let (ffp, _): (FarFieldPattern, _) = load(&path)?;
    let eps = eps.unwrap_or(c.cfg.experiment.eps);
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Validation(format!("--eps must be ≥ 0, got {eps}")));
    }
    let geom = c.cfg.build_geometry()?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.cfg.experiment.seed);
    let data = add_noise(&ffp, eps, &mut rng);
    let mut est = reconstruct_from_farfield(&data, &geom, &c.cfg.wave, eps, &c.cfg.reg_params())?;
    let truth = c.cfg.impedance.sample(&geom, &c.cfg.wave)?;
    est.compare(&truth, &geom.weights)?;
    persist(&est, &c.out.join("estimate.json"), &c.meta)?;
    let pts: Vec<(f64, f64)> = geom
        .arc_params
        .iter()
        .zip(&est.values)
        .filter_map(|(t, v)| v.map(|v| (*t, v)))
        .collect();
    write_plot(&c.out.join("lambda.dat"), &pts, &c.meta)?;
    println!(
        "reconstructed on {:.1}% of the boundary: sup error {:.3e}",
        100.0 * est.mask_fraction,
        est.sup_error.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn sweep_cmd(c: &Ctx, mode: Option<&str>) -> Result<(), Error> {
    let geom = c.cfg.build_geometry()?;
    let mut opts = c.cfg.sweep_options();
    if let Some(m) = mode {
        opts.mode = m.parse()?;
    }
    let res = stability_sweep(&c.cfg.sweep_setup(geom), &opts)?;
    for (seed, why) in &res.flagged {
        warn!("record with seed {seed} excluded: {why}");
    }
    write_sweep_csv(&res.records, &c.out.join("sweep.csv"), &c.meta)?;
    persist(&res, &c.out.join("sweep.json"), &c.meta)?;
    write_plot(&c.out.join("sweep_median.dat"), &res.medians, &c.meta)?;
    let cloud: Vec<(f64, f64)> = res.records.iter().map(|r| (r.farfield_gap, r.err_linf)).collect();
    write_plot(&c.out.join("sweep_cloud.dat"), &cloud, &c.meta)?;
    let mode = if opts.mode == SweepMode::Noise { "noise" } else { "pair" };
    println!(
        "{mode} sweep: {} records, {} flagged, median monotonicity {:.3}",
        res.records.len(),
        res.flagged.len(),
        res.monotonicity
    );
    if let Some(f) = &res.eta_eta_fit {
        println!(
            "eta_eta fit: C = {:.4e}, theta = {:.2}, {:.1}% below",
            f.c,
            f.theta,
            100.0 * f.fraction_below
        );
    }
    Ok(())
}

fn probe_cmd(c: &Ctx, which: &str) -> Result<bool, Error> {
    let geom = c.cfg.build_geometry()?;
    let sol = c.cfg.solve(&geom)?;
    report_warnings(&sol.diagnostics.warnings);
    let grid = &c.cfg.experiment.r_grid;
    let report = match which {
        "vanishing" => {
            let r1 = geom.r0.min(0.5);
            let radii = if grid.is_empty() {
                (0..10).map(|i| 0.02 * (r1 / 0.02).powf(i as f64 / 9.0)).collect()
            } else {
                grid.clone()
            };
            let centers: Vec<usize> = (0..16).map(|i| i * geom.len() / 16).collect();
            vanishing_rate_probe(&sol.trace, &geom, &radii, &centers)?
        }
        "rellich" => {
            let tube = sample_tube(&sol.representation, &geom, None, 6)?;
            report_warnings(&tube.warnings);
            let shifted = shifted_impedance(&c.cfg.impedance, 0.1);
            let aux = c.cfg.clone_with_impedance(shifted).solve(&geom)?;
            let aux_tube = sample_tube(&aux.representation, &geom, None, 6)?;
            rellich_trace_probes(&sol.trace, &geom, Some(&tube), &[(aux.trace, aux_tube)])?
        }
        _ => {
            let a = geom.circumradius();
            let radii = if grid.is_empty() {
                (0..24).map(|i| 1.1 * a * (1000.0f64 / 1.1).powf(i as f64 / 23.0)).collect()
            } else {
                grid.clone()
            };
            let samples = if geom.dim() == 2 { 256 } else { 16 };
            far_lower_bound_probe(&sol.representation, &radii, samples)?
        }
    };
    report_warnings(&report.notices);
    persist(&report, &c.out.join(format!("probe_{which}.json")), &c.meta)?;
    for (k, v) in &report.fitted {
        println!("{which}: {k} = {v}");
    }
    if let Some(w) = report.worst_ratio {
        println!("{which}: worst ratio {w:.4e}");
    }
    println!("{which}: {}", if report.pass { "pass" } else { "fail" });
    Ok(report.pass)
}

fn shifted_impedance(imp: &ImpedanceField, delta: f64) -> ImpedanceField {
    use impedance_core::forward::ImpedanceRepr;
    let mut out = imp.clone();
    match &mut out.repr {
        ImpedanceRepr::Constant { value } => *value += delta,
        ImpedanceRepr::FourierOnParameter { cos, .. } => {
            if cos.is_empty() {
                cos.push(0.0);
            }
            cos[0] += delta;
        }
        ImpedanceRepr::SamplesAtNodes { values } => values.iter_mut().for_each(|v| *v += delta),
    }
    out
}

trait WithImpedance {
    fn clone_with_impedance(&self, imp: ImpedanceField) -> RunConfig;
}

impl WithImpedance for RunConfig {
    fn clone_with_impedance(&self, imp: ImpedanceField) -> RunConfig {
        RunConfig {
            impedance: imp,
            ..self.clone()
        }
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Solve(common) => solve_cmd(&context(&common, "solve")?).map(|_| true),
        Command::Farfield { common, input } => {
            farfield_cmd(&context(&common, "farfield")?, input.as_deref()).map(|_| true)
        }
        Command::Reconstruct { common, input, eps } => {
            reconstruct_cmd(&context(&common, "reconstruct")?, input.as_deref(), eps).map(|_| true)
        }
        Command::Sweep { common, mode } => {
            sweep_cmd(&context(&common, "sweep")?, mode.as_deref()).map(|_| true)
        }
        Command::Probe { which, common } => {
            probe_cmd(&context(&common, &format!("probe {which}"))?, &which)
        }
        Command::Selftest => Ok(selftest::run()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
