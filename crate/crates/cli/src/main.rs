use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use seatkit::angle_chart::Chart;
use seatkit::averaged_flow::{predict_pseudo_phase, FlowConfig};
use seatkit::averaging_kernel::hat_coefficients;
use seatkit::direct_sim::Simulator;
use seatkit::experiments::{
    cmd_capture_prob_anosov, cmd_capture_prob_arnold, cmd_phase_compare, cmd_scaling, cmd_selftest, phase_rows_csv, ExperimentConfig,
    Manifest,
};
use seatkit::separatrix::{check_theta, trace_loops, DEFAULT_DELTA_SAD};
use seatkit::system_model::{Params, PhasePoint};
use seatkit::{Error, Result};

#[derive(Parser)]
#[command(name = "seatkit", version, about = "Pseudo-phase prediction and capture experiments near separatrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV/JSON outputs; nothing is written when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Θ₁, Θ₂, Θ₃ at the configured parameter value.
    Theta {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        w: Option<f64>,
    },
    /// Averaged-system coefficients at (h, w).
    Coeffs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        h: f64,
        #[arg(long)]
        w: Option<f64>,
    },
    /// Predicted pseudo-phase for one start.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        h0: f64,
        #[arg(long, default_value_t = 0.0)]
        phi0: f64,
        #[arg(long)]
        w0: Option<f64>,
        #[arg(long)]
        h_cut_scale: Option<f64>,
    },
    /// Direct integration to capture, with the measured pseudo-phase.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        q0: f64,
        #[arg(long)]
        p0: f64,
        #[arg(long)]
        z0: Option<f64>,
    },
    /// Predicted against measured pseudo-phase over the ε grid.
    PhaseCompare {
        #[command(flatten)]
        common: Common,
    },
    /// Capture probability into G₁ against Θ₁/Θ₃.
    CaptureProb {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Definition::Both)]
        definition: Definition,
    },
    /// Period, kernel and cutoff scaling fits.
    Scaling {
        #[command(flatten)]
        common: Common,
    },
    /// Reduced invariant suites; exit code 1 if any fails.
    Selftest {
        #[command(flatten)]
        common: Common,
        /// Multiplies every threshold (0.1 tightens tenfold).
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Definition {
    Anosov,
    Arnold,
    Both,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Writes to stdout, ignoring a closed pipe.
fn say(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn write_file(out: &Option<PathBuf>, name: &str, contents: &str) -> Result<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

fn record<T: Serialize>(manifest: &Manifest, result: &T) -> String {
    #[derive(Serialize)]
    struct Record<'a, T> {
        manifest: &'a Manifest,
        result: &'a T,
    }
    serde_json::to_string_pretty(&Record { manifest, result }).expect("serializable record")
}

/// Prints the JSON record and writes it to `<out>/<name>.json`.
fn emit<T: Serialize>(common: &Common, cfg: &ExperimentConfig, name: &str, result: &T) -> Result<()> {
    let text = record(&Manifest::new(name, cfg), result);
    say(&format!("{text}\n"));
    write_file(&common.out, &format!("{name}.json"), &text)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Theta { common, w } => {
            let cfg = load(&common)?;
            let chart = Chart::new(cfg.build_system()?);
            let w = w.map_or_else(|| cfg.w0(chart.system()), |w| Params::from_slice(&[w]));
            let set = trace_loops(&chart, &w, DEFAULT_DELTA_SAD)?;
            check_theta(set.theta1, set.theta2)?;
            #[derive(Serialize)]
            struct Theta {
                w: Vec<f64>,
                theta1: f64,
                theta2: f64,
                theta3: f64,
                lambda: f64,
            }
            let t = Theta { w: w.to_vec(), theta1: set.theta1, theta2: set.theta2, theta3: set.theta3, lambda: set.saddle.lambda };
            emit(&common, &cfg, "theta", &t)?;
        }
        Command::Coeffs { common, h, w } => {
            let cfg = load(&common)?;
            let chart = Chart::new(cfg.build_system()?);
            let w = w.map_or_else(|| cfg.w0(chart.system()), |w| Params::from_slice(&[w]));
            emit(&common, &cfg, "coeffs", &hat_coefficients(&chart, h, &w)?)?;
        }
        Command::Predict { common, eps, h0, phi0, w0, h_cut_scale } => {
            let cfg = load(&common)?;
            if !(eps > 0.0) {
                return Err(Error::Config(format!("eps must be positive, got {eps}")));
            }
            let chart = Chart::new(cfg.build_system()?);
            let w0 = w0.map_or_else(|| cfg.w0(chart.system()), |w| Params::from_slice(&[w]));
            let flow = FlowConfig { h_cut_scale: h_cut_scale.unwrap_or(cfg.flow.h_cut_scale), ..cfg.flow };
            let pred = predict_pseudo_phase(&chart, &flow, h0, &w0, phi0, eps)?;
            emit(&common, &cfg, "predict", &pred)?;
        }
        Command::Simulate { common, eps, q0, p0, z0 } => {
            let cfg = load(&common)?;
            if !(eps > 0.0) {
                return Err(Error::Config(format!("eps must be positive, got {eps}")));
            }
            let chart = Chart::new(cfg.build_system()?);
            let z0 = z0.map_or_else(|| cfg.w0(chart.system()), |z| Params::from_slice(&[z]));
            let sim = Simulator::new(&chart, cfg.sim);
            let res = sim.measure_pseudo_phase(&PhasePoint::new(q0, p0, &z0), eps)?;
            emit(&common, &cfg, "simulate", &res)?;
        }
        Command::PhaseCompare { common } => {
            let cfg = load(&common)?;
            let report = cmd_phase_compare(&cfg)?;
            let manifest = Manifest::new("phase-compare", &cfg);
            write_file(&common.out, "phase_compare.csv", &phase_rows_csv(&manifest, &report.rows))?;
            write_file(&common.out, "phase_compare_summary.json", &record(&manifest, &report.summaries))?;
            let mut s = String::from("eps        used guard failed  median     q75        max        domain_agree\n");
            for m in &report.summaries {
                let _ = writeln!(
                    s,
                    "{:<10.3e} {:>4} {:>5} {:>6}  {:<10.4} {:<10.4} {:<10.4} {:.3}",
                    m.eps, m.n_used, m.n_guard, m.n_failed, m.median, m.q75, m.max, m.domain_agreement
                );
            }
            let _ = writeln!(s, "median strictly decreasing in eps: {}", report.median_decreasing);
            say(&s);
            for r in report.rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("eps={:e} trial={}: {}", r.eps, r.trial, r.error.as_deref().unwrap_or(""));
            }
        }
        Command::CaptureProb { common, definition } => {
            let cfg = load(&common)?;
            let mut out = Vec::new();
            if matches!(definition, Definition::Anosov | Definition::Both) {
                out.push(cmd_capture_prob_anosov(&cfg)?);
            }
            if matches!(definition, Definition::Arnold | Definition::Both) {
                out.push(cmd_capture_prob_arnold(&cfg)?);
            }
            emit(&common, &cfg, "capture_prob", &out)?;
        }
        Command::Scaling { common } => {
            let cfg = load(&common)?;
            let report = cmd_scaling(&cfg)?;
            let manifest = Manifest::new("scaling", &cfg);
            let mut csv = manifest.header_lines();
            csv.push_str("h,period,log_inv_h,max_u_h,max_u_phi,u_phi_scaled,omega1,omega1_scaled\n");
            for e in &report.entries {
                let _ = writeln!(
                    csv,
                    "{:e},{:.15},{:.15},{:.15},{:.15},{:.15},{:.15e},{:.15e}",
                    e.h, e.period, e.log_inv_h, e.max_u_h, e.max_u_phi, e.u_phi_scaled, e.omega1, e.omega1_scaled
                );
            }
            write_file(&common.out, "scaling.csv", &csv)?;
            emit(&common, &cfg, "scaling", &report)?;
        }
        Command::Selftest { common, tol_scale } => {
            let cfg = load(&common)?;
            let report = cmd_selftest(&cfg, tol_scale)?;
            for c in &report.checks {
                say(&format!(
                    "{} {:<32} {:.3e} (threshold {:.1e}) {}\n",
                    if c.pass { "pass" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold,
                    c.detail
                ));
            }
            write_file(&common.out, "selftest.json", &record(&Manifest::new("selftest", &cfg), &report))?;
            return Ok(report.pass);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
