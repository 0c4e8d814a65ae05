//! Command-line entry point: scenario runs, re-verification of stored
//! trajectories, singular-set content estimation, and plot regeneration.

use clap::{Parser, Subcommand};
use rdtf::checkpoint::{read_trajectory, write_trajectory};
use rdtf::config::{CheckName, Config};
use rdtf::error::{Error, Result};
use rdtf::harness::{
    check_beta_weak, check_ck_bounds, check_derivative_decay, check_global_nnsc,
    check_max_principle, check_pairing, check_spatial_lower_bound, GridTol, ScalarSource,
    C_LADDER_DEFAULT,
};
use rdtf::lattice::{Lattice, MAX_N};
use rdtf::report::{CheckRecord, EnvInfo, EstimateReport, Plot, Series};
use rdtf::singular::{anchors, minkowski_content, SingularKind};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "rdtf", about = "Lattice Ricci-DeTurck flow laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a configured scenario and emit its report and artifacts.
    Run {
        /// Scenario configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the report and artifacts.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Omit wall-clock data so reruns are byte-identical.
        #[arg(long)]
        deterministic: bool,
        /// Override the configured noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the stored slices as a checkpoint under out-dir.
        #[arg(long)]
        save_trajectory: bool,
    },
    /// Re-run checks against a stored trajectory checkpoint.
    Verify {
        /// Trajectory manifest written by a checkpointed run.
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated check names.
        #[arg(long)]
        checks: String,
        /// CSV of singular anchor coordinates (header row optional).
        #[arg(long)]
        anchors: Option<PathBuf>,
        /// Ball-growth exponent for the liminf proxy.
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        /// Curvature threshold kappa0.
        #[arg(long, default_value_t = 0.0)]
        kappa0: f64,
        /// Shell-gate exponent; defaults to (1 - 2 beta)/2.
        #[arg(long)]
        eta: Option<f64>,
        /// Derivative order for the boundedness check.
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Backward-kernel base time for the pairing check.
        #[arg(long)]
        kernel_t1: Option<f64>,
    },
    /// Estimate the Minkowski content and box dimension of a singular set.
    Content {
        /// Built-in set: point, segment, or dust.
        #[arg(long, conflicts_with = "points")]
        kind: Option<String>,
        /// CSV of coordinates for a custom set.
        #[arg(long)]
        points: Option<PathBuf>,
        /// Content dimension m.
        #[arg(long)]
        m: f64,
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// The dyadic radius ladder [2 dx, L/8] needs res >= 256 for its
        /// five rungs.
        #[arg(long, default_value_t = 256)]
        res: usize,
        #[arg(long, default_value_t = 1.0)]
        extent: f64,
        /// Recursion depth for the dust set.
        #[arg(long, default_value_t = 3)]
        depth: usize,
    },
    /// Regenerate SVG plots from the CSV tables in a run directory.
    Plot {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            out_dir,
            deterministic,
            seed,
            save_trajectory,
        } => {
            let cfg = Config::from_path(&config)?;
            let out = rdtf::harness::run_scenario(&cfg, &out_dir, deterministic, seed)?;
            print!("{}", out.text);
            if save_trajectory {
                let manifest = write_trajectory(&out_dir.join("trajectory"), &out.trajectory)?;
                println!("trajectory manifest: {}", manifest.display());
            }
            if !out.report.passed() {
                std::process::exit(2);
            }
            Ok(())
        }
        Command::Verify {
            manifest,
            checks,
            anchors,
            beta,
            kappa0,
            eta,
            order,
            kernel_t1,
        } => {
            let traj = read_trajectory(&manifest)?;
            let sing = match &anchors {
                Some(path) => read_points_csv(path, traj.lat().n())?,
                None => Vec::new(),
            };
            let lat = traj.lat();
            let gtol = GridTol::floor(lat.dx() * lat.dx() + traj.dt0);
            let eta = eta.unwrap_or((1.0 - 2.0 * beta) / 2.0);
            let source = ScalarSource::Metric;
            let mut records = Vec::new();
            for raw in checks.split(',') {
                let name = CheckName::parse(raw.trim()).ok_or_else(|| {
                    Error::invalid("verify", format!("unknown check {:?}", raw.trim()))
                })?;
                let rec = match name {
                    CheckName::MaxPrinciple => check_max_principle(&traj, &source, &gtol)?,
                    CheckName::GlobalNnsc => check_global_nnsc(&traj, None, &source, &gtol)?,
                    CheckName::BetaWeak => check_beta_weak(
                        &traj,
                        &sing,
                        beta,
                        kappa0,
                        &C_LADDER_DEFAULT,
                        None,
                        &source,
                        &gtol,
                    )?,
                    CheckName::SpatialLowerBound => {
                        check_spatial_lower_bound(&traj, &sing, beta, kappa0, eta, &source, &gtol)?
                    }
                    CheckName::CkBounds => check_ck_bounds(&traj, &sing, order, &gtol)?,
                    CheckName::DerivativeDecay => check_derivative_decay(&traj, &gtol)?,
                    CheckName::Pairing => {
                        let t1 = kernel_t1.ok_or_else(|| {
                            Error::invalid("verify", "pairing needs --kernel-t1")
                        })?;
                        check_pairing(&traj, t1, &gtol)?
                    }
                };
                records.push(rec);
            }
            let report = verify_report(&traj, records);
            print!("{}", report.render()?);
            if !report.passed() {
                std::process::exit(2);
            }
            Ok(())
        }
        Command::Content {
            kind,
            points,
            m,
            n,
            res,
            extent,
            depth,
        } => {
            let lat = Lattice::new(n, res, extent)?;
            let pts = match (kind, points) {
                (Some(k), None) => {
                    let kind = parse_kind(&k, depth)?;
                    anchors(&kind, extent, lat.dx())
                }
                (None, Some(path)) => read_points_csv(&path, n)?,
                _ => {
                    return Err(Error::invalid(
                        "content",
                        "give exactly one of --kind or --points",
                    ))
                }
            };
            let est = minkowski_content(&pts, m, lat)?;
            print!("{}", est.csv());
            println!("content: {:.6e}", est.content);
            println!("dimension: {:.6}", est.dimension);
            Ok(())
        }
        Command::Plot { run_dir } => plot_run_dir(&run_dir),
    }
}

fn parse_kind(name: &str, depth: usize) -> Result<SingularKind> {
    match name {
        "point" => Ok(SingularKind::Point),
        "segment" => Ok(SingularKind::Segment),
        "dust" => Ok(SingularKind::Dust { depth }),
        other => Err(Error::invalid(
            "content",
            format!("unknown kind {other:?}; expected point, segment, or dust"),
        )),
    }
}

fn verify_report(traj: &rdtf::flow::Trajectory, checks: Vec<CheckRecord>) -> EstimateReport {
    let lat = traj.lat();
    EstimateReport {
        scenario: "verify".into(),
        env: EnvInfo {
            n: lat.n(),
            res: lat.res(),
            extent: lat.extent(),
            dx: lat.dx(),
            dt0: traj.dt0,
            steps: traj.steps,
            horizon: traj.horizon(),
            seed: None,
            deterministic: true,
            extras: vec![(
                "tolerance_model".into(),
                "stored trajectory; scheme-order unit floor".into(),
            )],
        },
        checks,
        runtime_seconds: None,
    }
}

/// Rows of coordinates, one point per line; a leading non-numeric header
/// row is skipped.
fn read_points_csv(path: &Path, n: usize) -> Result<Vec<[f64; MAX_N]>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if ln == 0 && cells.iter().any(|c| c.trim().parse::<f64>().is_err()) {
            continue;
        }
        if cells.len() < n {
            return Err(Error::invalid(
                "points csv",
                format!("line {}: expected {n} coordinates, got {}", ln + 1, cells.len()),
            ));
        }
        let mut p = [0.0; MAX_N];
        for (a, cell) in cells.iter().enumerate().take(n) {
            p[a] = cell.trim().parse::<f64>().map_err(|_| {
                Error::invalid("points csv", format!("line {}: bad number {cell:?}", ln + 1))
            })?;
        }
        out.push(p);
    }
    Ok(out)
}

/// Parse a numeric CSV table written by the scenario runner: a header row
/// of labels followed by rows of floats.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap_or("")
        .split(',')
        .map(|s| s.trim().trim_matches('"').to_string())
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match row {
            Ok(r) => rows.push(r),
            Err(_) => {
                return Err(Error::invalid(
                    "plot",
                    format!("{}: non-numeric data row", path.display()),
                ))
            }
        }
    }
    Ok((header, rows))
}

fn column_series(header: &[String], rows: &[Vec<f64>], col: usize) -> Series {
    Series {
        label: header.get(col).cloned().unwrap_or_else(|| format!("col{col}")),
        points: rows
            .iter()
            .filter(|r| r.len() > col)
            .map(|r| (r[0], r[col]))
            .collect(),
    }
}

fn plot_run_dir(dir: &Path) -> Result<()> {
    let mut wrote = 0usize;
    let min_r = dir.join("min_r.csv");
    if min_r.is_file() {
        let (header, rows) = read_table(&min_r)?;
        let plot = Plot {
            title: "scalar floor along the flow".into(),
            x_label: "t".into(),
            y_label: "min R".into(),
            series: (1..header.len().min(3))
                .map(|c| column_series(&header, &rows, c))
                .collect(),
        };
        std::fs::write(dir.join("min_r.svg"), plot.svg())?;
        wrote += 1;
    }
    let deriv = dir.join("derivative_decay.csv");
    if deriv.is_file() {
        let (header, rows) = read_table(&deriv)?;
        let plot = Plot {
            title: "derivative sups along the flow".into(),
            x_label: "t".into(),
            y_label: "sup".into(),
            series: (1..header.len()).map(|c| column_series(&header, &rows, c)).collect(),
        };
        std::fs::write(dir.join("derivative_decay.svg"), plot.svg())?;
        wrote += 1;
    }
    let deficit = dir.join("deficit.csv");
    if deficit.is_file() {
        let (_, rows) = read_table(&deficit)?;
        let mut shells: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        shells.sort_by(|a, b| a.partial_cmp(b).unwrap());
        shells.dedup();
        let series = shells
            .iter()
            .map(|&rho| Series {
                label: format!("rho = {rho:.3e}"),
                points: rows
                    .iter()
                    .filter(|r| r[0] == rho && r.len() >= 3)
                    .map(|r| (r[1], r[2]))
                    .collect(),
            })
            .collect();
        let plot = Plot {
            title: "shell deficit vs time".into(),
            x_label: "t".into(),
            y_label: "deficit".into(),
            series,
        };
        std::fs::write(dir.join("deficit.svg"), plot.svg())?;
        wrote += 1;
    }
    let pairing = dir.join("pairing.csv");
    if pairing.is_file() {
        let (header, rows) = read_table(&pairing)?;
        let plot = Plot {
            title: "kernel pairing along the flow".into(),
            x_label: "t".into(),
            y_label: "integral of R u dg".into(),
            series: vec![column_series(&header, &rows, 1)],
        };
        std::fs::write(dir.join("pairing.svg"), plot.svg())?;
        wrote += 1;
    }
    if wrote == 0 {
        return Err(Error::invalid(
            "plot",
            format!("no known CSV tables under {}", dir.display()),
        ));
    }
    println!("plots written: {wrote}");
    Ok(())
}
