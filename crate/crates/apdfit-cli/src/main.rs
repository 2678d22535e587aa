//! Pipeline driver: synthetic ground truth, fitting, rasterization,
//! evaluation and slice export.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver
//! failure.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use apdfit::diagram::DiagramParams;
use apdfit::dilpm;
use apdfit::metrics;
use apdfit::stats;
use apdfit::support;
use apdfit::synth;
use apdfit::transport;
use apdfit::volume::{self, Axis};

use config::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "apdfit",
    about = "Fit anisotropic power diagrams to labeled voxel volumes",
    version
)]
struct Cli {
    /// Worker threads for the parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic scan with its ground-truth diagram.
    Synth {
        #[arg(long)]
        k: usize,
        /// Comma-separated voxel counts, e.g. 64,64,64.
        #[arg(long)]
        dims: String,
        /// Comma-separated physical voxel edge lengths.
        #[arg(long, default_value = "1,1,1")]
        spacing: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-grain statistics of a scan as JSON.
    Stats {
        #[arg(long)]
        header: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a fitting pipeline from a config file.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rasterize a diagram file into a scan.
    Rasterize {
        #[arg(long)]
        diagram: PathBuf,
        #[arg(long)]
        dims: String,
        #[arg(long, default_value = "1,1,1")]
        spacing: String,
        /// Absolute tie tolerance (default: relative to the diagram scale).
        #[arg(long)]
        tie_tol: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a predicted labeling against the ground truth.
    Eval {
        #[arg(long)]
        truth_header: PathBuf,
        #[arg(long)]
        truth_data: PathBuf,
        #[arg(long)]
        pred_header: PathBuf,
        #[arg(long)]
        pred_data: PathBuf,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export one slice of a scan as a PPM image.
    Slice {
        #[arg(long)]
        header: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// x, y or z.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_SOLVER: u8 = 4;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn data(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.to_string(),
        }
    }

    fn solver(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_SOLVER,
            message: message.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn parse_triple<T: std::str::FromStr>(text: &str, what: &str) -> Result<(T, T, T), Failure> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(Failure::config(format!(
            "{what} needs three comma-separated values, got {text:?}"
        )));
    }
    let parse = |p: &str| {
        p.trim()
            .parse::<T>()
            .map_err(|_| Failure::config(format!("cannot parse {p:?} in {what}")))
    };
    Ok((parse(parts[0])?, parse(parts[1])?, parse(parts[2])?))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth {
            k,
            dims,
            spacing,
            seed,
            out,
        } => cmd_synth(k, parse_triple(&dims, "--dims")?, parse_triple(&spacing, "--spacing")?, seed, &out),
        Command::Stats { header, data, out } => cmd_stats(&header, &data, out.as_deref()),
        Command::Fit { config, out } => cmd_fit(&config, out),
        Command::Rasterize {
            diagram,
            dims,
            spacing,
            tie_tol,
            out,
        } => cmd_rasterize(
            &diagram,
            parse_triple(&dims, "--dims")?,
            parse_triple(&spacing, "--spacing")?,
            tie_tol,
            &out,
        ),
        Command::Eval {
            truth_header,
            truth_data,
            pred_header,
            pred_data,
            out,
        } => cmd_eval(&truth_header, &truth_data, &pred_header, &pred_data, out.as_deref()),
        Command::Slice {
            header,
            data,
            axis,
            index,
            out,
        } => cmd_slice(&header, &data, &axis, index, &out),
    }
}

fn ensure_dir(dir: &std::path::Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_synth(
    k: usize,
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    seed: u64,
    out: &std::path::Path,
) -> Result<(), Failure> {
    ensure_dir(out)?;
    let (scan, truth) =
        synth::synth_scan(k, dims, spacing, seed).map_err(Failure::solver)?;
    volume::save_scan(&scan, &out.join("scan.json"), &out.join("scan.raw"))
        .map_err(Failure::data)?;
    truth
        .save(&out.join("truth_diagram.json"))
        .map_err(Failure::data)?;
    println!(
        "synth: k={k} dims={}x{}x{} seed={seed} -> {}",
        dims.0,
        dims.1,
        dims.2,
        out.display()
    );
    Ok(())
}

fn cmd_stats(
    header: &std::path::Path,
    data: &std::path::Path,
    out: Option<&std::path::Path>,
) -> Result<(), Failure> {
    let scan = volume::load_scan(header, data).map_err(Failure::data)?;
    let stats = stats::compute_stats(&scan);
    let json = stats.to_json();
    match out {
        Some(path) => std::fs::write(path, json)
            .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))?,
        None => println!("{json}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct StageTimings {
    load_s: f64,
    stats_s: f64,
    support_s: f64,
    solve_s: f64,
    rasterize_s: f64,
    metrics_s: f64,
    support_points: usize,
}

fn cmd_fit(config_path: &std::path::Path, out_override: Option<PathBuf>) -> Result<(), Failure> {
    let mut config = PipelineConfig::load(config_path).map_err(Failure::config)?;
    if let Some(out) = out_override {
        config.out_dir = out;
    }
    ensure_dir(&config.out_dir)?;

    let t = Instant::now();
    let scan =
        volume::load_scan(&config.input.header, &config.input.data).map_err(Failure::data)?;
    let load_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let grain_stats = stats::compute_stats(&scan);
    let field = stats::compute_boundary_distance(&scan);
    let stats_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (strategy, interior) = config
        .strategy(scan.dims(), scan.k() as usize)
        .map_err(Failure::config)?;
    let sup = support::combined_support(&scan, &grain_stats, &field, strategy, interior)
        .map_err(Failure::data)?;
    let support_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let diagram = match config.method.as_str() {
        "sgbpd" => {
            let model = transport::SiteModel::from_stats(&grain_stats);
            let targets =
                transport::TargetWeights::from_counts(&grain_stats.kappa, sup.total_weight())
                    .map_err(Failure::solver)?;
            let sol =
                transport::solve_wcaa(&sup, &model, &targets, config.sgbpd.candidates_per_point)
                    .map_err(Failure::solver)?;
            let gap = (sol.report.objective - sol.report.dual_objective).abs()
                / sol.report.objective.abs().max(1.0);
            println!(
                "sgbpd: objective {:.6e}, gap {:.2e}, pivots {}, escalations {}",
                sol.report.objective, gap, sol.report.pivots, sol.report.escalations
            );
            transport::diagram_from_duals(&model, &sol.duals).map_err(Failure::solver)?
        }
        "dilpm" => {
            let graph = stats::compute_neighbors(&scan);
            let ring = config.dilpm.ring.map(|[lo, hi]| (lo, hi));
            let (diagram, report) = dilpm::fit_dilpm(
                &sup,
                &graph,
                config.dilpm.delta,
                ring,
                config.dilpm.margin,
                None,
            )
            .map_err(Failure::solver)?;
            println!(
                "dilpm: objective {:.6e}, stage {:?}, rounds {}, beta {:.3e}",
                report.objective, report.stage, report.rounds, report.beta
            );
            if !report.empty_strict_grains.is_empty() {
                eprintln!(
                    "warning: grains without strict points: {:?}",
                    report.empty_strict_grains
                );
            }
            diagram
        }
        other => return Err(Failure::config(format!("unknown method {other:?}"))),
    };
    let solve_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let tie_tol = config
        .tie_tol
        .unwrap_or_else(|| diagram.default_tie_tol(scan.dims(), scan.spacing()));
    let predicted = diagram.rasterize(scan.dims(), scan.spacing(), tie_tol);
    let rasterize_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let report = metrics::fit_report(&scan, &predicted).map_err(Failure::data)?;
    let metrics_s = t.elapsed().as_secs_f64();

    let out = &config.out_dir;
    diagram.save(&out.join("diagram.json")).map_err(Failure::data)?;
    volume::save_scan(
        &predicted,
        &out.join("predicted.json"),
        &out.join("predicted.raw"),
    )
    .map_err(Failure::data)?;
    std::fs::write(out.join("report.json"), report.to_json())
        .map_err(|e| Failure::data(format!("cannot write report: {e}")))?;
    std::fs::write(out.join("report.txt"), report.to_table())
        .map_err(|e| Failure::data(format!("cannot write report: {e}")))?;
    let mid = scan.dims().2 / 2;
    volume::export_slice(&scan, Axis::Z, mid, &out.join("truth_slice.ppm"))
        .map_err(Failure::data)?;
    volume::export_slice(&predicted, Axis::Z, mid, &out.join("predicted_slice.ppm"))
        .map_err(Failure::data)?;
    let timings = StageTimings {
        load_s,
        stats_s,
        support_s,
        solve_s,
        rasterize_s,
        metrics_s,
        support_points: sup.len(),
    };
    std::fs::write(
        out.join("timings.json"),
        serde_json::to_string_pretty(&timings).expect("timings serialize"),
    )
    .map_err(|e| Failure::data(format!("cannot write timings: {e}")))?;

    print!("{}", report.to_table());
    println!(
        "stages: load {load_s:.2}s stats {stats_s:.2}s support {support_s:.2}s ({} pts) solve {solve_s:.2}s rasterize {rasterize_s:.2}s metrics {metrics_s:.2}s",
        sup.len()
    );
    Ok(())
}

fn cmd_rasterize(
    diagram_path: &std::path::Path,
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    tie_tol: Option<f64>,
    out: &std::path::Path,
) -> Result<(), Failure> {
    ensure_dir(out)?;
    let diagram = DiagramParams::load(diagram_path).map_err(Failure::data)?;
    let tie = tie_tol.unwrap_or_else(|| diagram.default_tie_tol(dims, spacing));
    let predicted = diagram.rasterize(dims, spacing, tie);
    volume::save_scan(
        &predicted,
        &out.join("predicted.json"),
        &out.join("predicted.raw"),
    )
    .map_err(Failure::data)?;
    println!("rasterized {} cells -> {}", diagram.k(), out.display());
    Ok(())
}

fn cmd_eval(
    truth_header: &std::path::Path,
    truth_data: &std::path::Path,
    pred_header: &std::path::Path,
    pred_data: &std::path::Path,
    out: Option<&std::path::Path>,
) -> Result<(), Failure> {
    let truth = volume::load_scan(truth_header, truth_data).map_err(Failure::data)?;
    let predicted = volume::load_prediction(pred_header, pred_data).map_err(Failure::data)?;
    let report = metrics::fit_report(&truth, &predicted).map_err(Failure::data)?;
    print!("{}", report.to_table());
    if let Some(path) = out {
        std::fs::write(path, report.to_json())
            .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_slice(
    header: &std::path::Path,
    data: &std::path::Path,
    axis: &str,
    index: usize,
    out: &std::path::Path,
) -> Result<(), Failure> {
    let scan = volume::load_prediction(header, data).map_err(Failure::data)?;
    let axis = match axis {
        "x" => Axis::X,
        "y" => Axis::Y,
        "z" => Axis::Z,
        other => return Err(Failure::config(format!("axis must be x, y or z, got {other:?}"))),
    };
    volume::export_slice(&scan, axis, index, out).map_err(Failure::data)?;
    println!("wrote {}", out.display());
    Ok(())
}
