use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use convlab::grid::make_grids;
use convlab::harness::{
    self, parse_grid, CutoffChoice, EstimateOptions, HarnessError, ModelId, ModelSpec,
};
use convlab::io::{self, IoError};
use convlab::moments::ecf_noise_scale;
use convlab::regularization::{check_phi_class, classify_smoothness};
use convlab::solvers::Variant;
use convlab::C64;

#[derive(Parser)]
#[command(
    name = "convlab",
    version,
    about = "Frequency-domain solvers for measurement-error models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic sample and its latent truth
    Simulate {
        #[arg(long)]
        model: ModelId,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the unknown functions from a sample directory
    Estimate {
        #[arg(long)]
        model: ModelId,
        #[arg(long = "in")]
        input: PathBuf,
        /// N:s_max
        #[arg(long)]
        grid: String,
        #[arg(long)]
        variant: Option<Variant>,
        /// lemma2:<k>, heuristic or none
        #[arg(long, default_value = "none")]
        cutoff: CutoffChoice,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Smoothness class and weighted-integral table of the error CF
    Diagnose {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run a replication sweep described by a config file
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|source| {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

fn report_value(dir: &Path, key: &str) -> Option<String> {
    let entries = io::read_report(&dir.join("report.txt"))
        .or_else(|_| io::read_report(&dir.join("run.txt")))
        .ok()?;
    entries.into_iter().find(|(k, _)| k == key).map(|(_, v)| v)
}

fn simulate(
    model: ModelId,
    spec: &Path,
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<(), HarnessError> {
    let spec = ModelSpec::parse(&read_text(spec)?, Some(model))?;
    let g = harness::generate(&spec, n, seed)?;
    harness::write_simulation(out, &spec, &g, n, seed)?;
    println!("wrote {} rows to {}", n, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn estimate(
    model: ModelId,
    input: &Path,
    grid: &str,
    variant: Option<Variant>,
    cutoff: CutoffChoice,
    bandwidth: Option<f64>,
    out: &Path,
) -> Result<(), HarnessError> {
    let (n_points, s_max) =
        parse_grid(grid).map_err(|msg| HarnessError::Config { line: None, msg })?;
    if let Some(h) = bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            return Err(HarnessError::Config {
                line: None,
                msg: format!("bandwidth must be positive, got {h}"),
            });
        }
    }
    let sample = io::read_sample(&input.join("sample.csv"))?;
    let spec_path = input.join("spec.txt");
    let spec = if spec_path.exists() {
        ModelSpec::parse(&read_text(&spec_path)?, Some(model))?
    } else {
        let mut s = ModelSpec::new(model);
        s.d = sample.dim();
        s
    };
    let opts = EstimateOptions {
        n_points,
        s_max,
        variant,
        cutoff,
        bandwidth,
        ..Default::default()
    };
    let mut report = harness::estimate(&spec, &sample, &opts)?;
    report.seed = report_value(input, "seed").and_then(|s| s.parse().ok());
    report.write(out)?;
    for (k, v) in report.entries() {
        println!("{k}: {v}");
    }
    Ok(())
}

fn diagnose(input: &Path) -> Result<(), HarnessError> {
    let estimated = input.join("phi_u.csv");
    let (phi_u, floor, source) = if estimated.exists() {
        let f = io::read_gridfn(&estimated)?;
        let known = report_value(input, "phi_u_source").as_deref() == Some("known");
        let floor = report_value(input, "n")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|_| !known)
            .map_or(0.0, |n| ecf_noise_scale(n, f.grid().len()));
        (f, floor, "phi_u.csv")
    } else {
        let spec = ModelSpec::parse(&read_text(&input.join("spec.txt"))?, None)?;
        let u = spec
            .u
            .as_ref()
            .ok_or_else(|| HarnessError::Spec("spec has no error law `u`".into()))?;
        let (fg, _) = make_grids(spec.d, 1024, 20.0)?;
        (harness::true_cf(u, &fg), 0.0, "spec.txt")
    };
    let d = phi_u.grid().dim();
    let class = classify_smoothness(&phi_u, floor);
    let mut entries = vec![
        ("source".to_string(), source.to_string()),
        ("noise_floor".into(), floor.to_string()),
        ("smoothness_kind".into(), class.kind.name().into()),
        ("p_or_k".into(), class.kind.parameter().to_string()),
        ("fit_residual".into(), class.fit_residual.to_string()),
    ];
    if let convlab::regularization::SmoothnessKind::Supersmooth { c, .. } = class.kind {
        entries.push(("scale_c".into(), c.to_string()));
    }
    let inv = phi_u.map(|v| {
        if v.norm() > 0.0 {
            v.inv()
        } else {
            C64::new(f64::INFINITY, 0.0)
        }
    });
    let v = 1e6;
    println!(
        "{}",
        entries
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    );
    println!("function,m,value,member");
    for (name, f) in [("phi_u", &phi_u), ("inv_phi_u", &inv)] {
        for m in 0..=2u32 {
            let r = check_phi_class(f, &vec![m; d], v)?;
            println!("{name},{m},{},{}", r.value, r.member);
            entries.push((
                format!("phi_class_{name}_m{m}"),
                format!("{} {}", r.value, r.member),
            ));
        }
    }
    io::write_report(&input.join("diagnose.txt"), &entries)?;
    Ok(())
}

fn sweep(config: &Path, jobs: usize) -> Result<(), HarnessError> {
    let (cfg, rows) = harness::run_experiment(config, jobs)?;
    let failed = rows.iter().filter(|r| r.status != 0).count();
    println!(
        "{} replications ({} failed); wrote {}",
        rows.len(),
        failed,
        cfg.out.join("metrics.csv").display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate {
            model,
            spec,
            n,
            seed,
            out,
        } => simulate(*model, spec, *n, *seed, out),
        Command::Estimate {
            model,
            input,
            grid,
            variant,
            cutoff,
            bandwidth,
            out,
        } => estimate(*model, input, grid, *variant, *cutoff, *bandwidth, out),
        Command::Diagnose { input } => diagnose(input),
        Command::Sweep { config, jobs } => sweep(config, *jobs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
