//! `rcme` command line: estimate the relative camera motion of one
//! correspondence file, run deterministic synthetic benchmarks, or generate
//! synthetic correspondence files.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rcme::engine::{DetectFailReason, EngineConfig, Variant};
use rcme::io;
use rcme::synth;
use rcme::types::NoiseModel;

use rcme_cli::bench::{self, SceneSpec, SuiteConfig};
use rcme_cli::pipeline::{estimate_motion, PipelineConfig, PipelineOutcome};

#[derive(Parser)]
#[command(
    name = "rcme",
    about = "Robust two-view camera motion estimation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct EngineArgs {
    /// Estimator variant: standard | prcme | rcme
    #[arg(long, default_value = "rcme")]
    variant: Variant,
    /// Master RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum iteration count N
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Significance level of all hypothesis tests
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Entropy threshold of the inlier quality test (nats)
    #[arg(long, default_value_t = -3.53)]
    mu: f64,
    /// Conservative coefficient of the size condition, in [0.5, 1]
    #[arg(long, default_value_t = 0.7)]
    lambda: f64,
    /// Prior inlier ratio
    #[arg(long, default_value_t = 0.5)]
    omega_prior: f64,
    /// Early-termination entropy threshold (disabled when absent)
    #[arg(long)]
    early_term: Option<f64>,
}

impl EngineArgs {
    fn to_config(&self) -> EngineConfig<f64> {
        let mut config = EngineConfig::new(self.variant);
        config.max_iters = self.iters;
        config.alpha = self.alpha;
        config.mu = self.mu;
        config.lambda = self.lambda;
        config.omega_prior = self.omega_prior;
        config.early_term_entropy = self.early_term;
        config.rng_seed = self.seed;
        config
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the camera motion of one correspondence file.
    Estimate {
        /// Correspondence file (see README for the format)
        file: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
        /// Override the noise sigma from the file header
        #[arg(long)]
        sigma: Option<f64>,
        /// Failure-metric ratio threshold
        #[arg(long, default_value_t = 0.5)]
        kappa: f64,
        /// Write the motion JSON here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a benchmark suite and write CSV + JSON reports.
    Bench {
        /// Suite configuration (JSON)
        #[arg(long)]
        suite: PathBuf,
        /// Output base path; writes <out>.json and <out>.csv
        #[arg(long)]
        out: PathBuf,
        /// Override the suite's master seed
        #[arg(long)]
        seed: Option<u64>,
        /// Print per-config mean wall-clock to stderr
        #[arg(long)]
        timing: bool,
    },
    /// Generate a synthetic correspondence file.
    Synth {
        /// Output correspondence file
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        outlier_ratio: f64,
        /// Generation noise sigma in pixels (also written to the header)
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ground-truth rotation angle in degrees
        #[arg(long, default_value_t = 5.0)]
        rot_deg: f64,
        /// Number of feature clusters (0 = uniform coverage)
        #[arg(long, default_value_t = 0)]
        clusters: usize,
        /// Cluster spread in pixels
        #[arg(long, default_value_t = 40.0)]
        cluster_sigma: f64,
        /// Write the ground-truth motion JSON here
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct MotionReport {
    variant: String,
    outcome: String,
    q: Option<[f64; 4]>,
    t: Option<[f64; 3]>,
    n_inliers: usize,
    candidate_count: usize,
    n_consistent_before: usize,
    n_consistent_after: usize,
    metric_failed: Option<bool>,
    inlier_indices: Vec<usize>,
}

fn cmd_estimate(
    file: PathBuf,
    engine: EngineArgs,
    sigma: Option<f64>,
    kappa: f64,
    out: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let loaded = match io::load_correspondences::<f64>(&file) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    if loaded.sigma_defaulted && sigma.is_none() {
        eprintln!(
            "note: no sigma header in {}; assuming sigma = {}",
            file.display(),
            io::DEFAULT_SIGMA
        );
    }
    let noise = match sigma {
        Some(s) => NoiseModel::new(s).map_err(|e| anyhow::anyhow!("{e}"))?,
        None => loaded.noise,
    };
    let mut config = PipelineConfig::new(engine.to_config());
    config.kappa = kappa;

    let outcome = estimate_motion(
        &loaded.correspondences,
        &loaded.intrinsics,
        &noise,
        &config,
    )?;
    let (report, code) = match outcome {
        PipelineOutcome::DetectFail { reason } => (
            MotionReport {
                variant: engine.variant.name().into(),
                outcome: match reason {
                    DetectFailReason::EmptyCandidateSet => "detect_fail_empty_candidate_set",
                    DetectFailReason::TooFewCorrespondences => "detect_fail_too_few_correspondences",
                }
                .into(),
                q: None,
                t: None,
                n_inliers: 0,
                candidate_count: 0,
                n_consistent_before: 0,
                n_consistent_after: 0,
                metric_failed: None,
                inlier_indices: vec![],
            },
            ExitCode::from(1),
        ),
        PipelineOutcome::Success {
            motion,
            inlier_indices,
            candidate_count,
            n_before,
            n_after,
            metric_failed,
            ..
        } => (
            MotionReport {
                variant: engine.variant.name().into(),
                outcome: "success".into(),
                q: Some([motion.q[0], motion.q[1], motion.q[2], motion.q[3]]),
                t: Some([motion.t[0], motion.t[1], motion.t[2]]),
                n_inliers: inlier_indices.len(),
                candidate_count,
                n_consistent_before: n_before,
                n_consistent_after: n_after,
                metric_failed: Some(metric_failed),
                inlier_indices,
            },
            ExitCode::SUCCESS,
        ),
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match out {
        Some(path) => std::fs::write(&path, json)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(code)
}

fn cmd_bench(
    suite_path: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    timing: bool,
) -> anyhow::Result<ExitCode> {
    let text = match std::fs::read_to_string(&suite_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {}: {e}", suite_path.display());
            return Ok(ExitCode::from(2));
        }
    };
    let suite: SuiteConfig = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: parsing {}: {e}", suite_path.display());
            return Ok(ExitCode::from(2));
        }
    };
    let report = bench::run_benchmark(&suite, seed)?;
    if timing {
        for entry in &suite.configs {
            let per: Vec<&bench::TrialReport> = report
                .trials
                .iter()
                .filter(|t| t.label == entry.label)
                .collect();
            if !per.is_empty() {
                let mean = per.iter().map(|t| t.wall_ms).sum::<f64>() / per.len() as f64;
                eprintln!("{}: mean {:.1} ms/run over {} runs", entry.label, mean, per.len());
            }
        }
    }
    let json_path = out.with_extension("json");
    let csv_path = out.with_extension("csv");
    std::fs::write(&json_path, bench::to_json(&report)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    std::fs::write(&csv_path, bench::to_csv(&report)?)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    eprintln!(
        "wrote {} and {}",
        json_path.display(),
        csv_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    out: PathBuf,
    n: usize,
    outlier_ratio: f64,
    sigma: f64,
    seed: u64,
    rot_deg: f64,
    clusters: usize,
    cluster_sigma: f64,
    truth_out: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let spec = SceneSpec {
        n_points: n,
        outlier_ratio,
        sigma,
        rot_deg,
        clusters,
        cluster_sigma_px: cluster_sigma,
        ..SceneSpec::default()
    };
    let config = spec.to_config(seed)?;
    let scene = match synth::generate(&config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let sigma_header = (sigma > 0.0).then_some(sigma);
    io::write_correspondences(&out, &scene.correspondences, &config.intrinsics, sigma_header)
        .with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = truth_out {
        #[derive(Serialize)]
        struct Truth {
            q: [f64; 4],
            t: [f64; 3],
            inlier_labels: Vec<bool>,
        }
        let truth = Truth {
            q: [
                scene.motion.q[0],
                scene.motion.q[1],
                scene.motion.q[2],
                scene.motion.q[3],
            ],
            t: [scene.motion.t[0], scene.motion.t[1], scene.motion.t[2]],
            inlier_labels: scene.inlier_labels.clone(),
        };
        std::fs::write(&path, serde_json::to_string_pretty(&truth)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("wrote {} correspondences to {}", n, out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate {
            file,
            engine,
            sigma,
            kappa,
            out,
        } => cmd_estimate(file, engine, sigma, kappa, out),
        Command::Bench {
            suite,
            out,
            seed,
            timing,
        } => cmd_bench(suite, out, seed, timing),
        Command::Synth {
            out,
            n,
            outlier_ratio,
            sigma,
            seed,
            rot_deg,
            clusters,
            cluster_sigma,
            truth_out,
        } => cmd_synth(
            out,
            n,
            outlier_ratio,
            sigma,
            seed,
            rot_deg,
            clusters,
            cluster_sigma,
            truth_out,
        ),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
