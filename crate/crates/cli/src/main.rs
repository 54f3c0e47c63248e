//! `argp`: experiment runner for adaptive-resolution GP terrain mapping.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use argp::baselines::build_mapper;
use argp::bench::{
    planning_summary, rmse, run_planning_experiment, run_table1, summarize, write_planning_csv,
    write_summary_json, write_trials_csv,
};
use argp::config::ExperimentConfig;
use argp::io::write_json;
use argp::planner::{lawnmower_plan, TimingMode};
use argp::world::sidecar_path;
use argp::{generate_grf, Error, GroundTruthField, Mapper, Method, NdTree};

#[derive(Parser, Debug)]
#[command(
    name = "argp",
    version,
    about = "Adaptive-resolution GP terrain mapping experiments"
)]
struct Cli {
    /// JSON experiment configuration. Flags override it; it overrides the
    /// built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for trial pools [default: available parallelism].
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ground-truth fields.
    #[command(subcommand)]
    World(WorldCmd),
    /// Single mapping runs and map snapshots.
    #[command(subcommand)]
    Map(MapCmd),
    /// Benchmark harnesses.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Informative planning missions.
    #[command(subcommand)]
    Plan(PlanCmd),
}

#[derive(Subcommand, Debug)]
enum WorldCmd {
    /// Generate a seeded Gaussian random field and write it as CSV plus a
    /// metadata sidecar.
    Gen {
        #[command(flatten)]
        seed: SeedArg,
        /// Output CSV; the metadata goes to the same path with a .json
        /// extension.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SeedArg {
    /// Random seed [default: config seeds.base, 0].
    #[arg(long, env = "ARGP_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct MapArgs {
    /// Mapping method: argp, fr, gpr or indep [default: config method, argp].
    #[arg(long)]
    method: Option<Method>,
    #[command(flatten)]
    seed: SeedArg,
    /// Ground-truth CSV; a seeded random field is generated when absent.
    #[arg(long)]
    field: Option<PathBuf>,
    /// Leaves per axis of the full-resolution map [default: 32].
    #[arg(long)]
    size: Option<usize>,
    /// Skip the lawnmower survey and keep the prior.
    #[arg(long)]
    prior_only: bool,
}

#[derive(Subcommand, Debug)]
enum MapCmd {
    /// Survey a field with the lawnmower pattern and print error metrics.
    Run {
        #[command(flatten)]
        map: MapArgs,
        /// Write the final map snapshot as JSON.
        #[arg(long)]
        dump_map: Option<PathBuf>,
        /// Include the full covariance in the snapshot.
        #[arg(long)]
        full_cov: bool,
    },
    /// Write a map snapshot (after the survey unless --prior-only).
    Dump {
        #[command(flatten)]
        map: MapArgs,
        #[arg(long)]
        out: PathBuf,
        /// Include the full covariance in the snapshot.
        #[arg(long)]
        full_cov: bool,
    },
}

#[derive(Subcommand, Debug)]
enum BenchCmd {
    /// Compare mapping methods over seeded random fields.
    Table1 {
        /// Leaves per axis [default: 16,32,64].
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Methods [default: argp,fr,gpr,indep].
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Trials per (size, method) [default: config seeds.trials, 30].
        #[arg(long)]
        trials: Option<usize>,
        /// Seed of the first trial; trial i uses seed + i.
        #[command(flatten)]
        seed: SeedArg,
        /// Per-trial results CSV.
        #[arg(long, default_value = "table1.csv")]
        out: PathBuf,
        /// Mean and standard deviation per (size, method) as JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Charge a fixed 0.2 s per map update instead of measured time,
        /// making the output bitwise reproducible.
        #[arg(long)]
        synthetic_time: bool,
        /// Also run batch GP regression on 64x64 maps.
        #[arg(long)]
        slow: bool,
    },
}

#[derive(Subcommand, Debug)]
enum PlanCmd {
    /// Greedy hotspot-uncertainty missions under a time budget.
    Greedy {
        /// Map backends: argp and/or fr [default: argp,fr].
        #[arg(long, value_delimiter = ',')]
        map: Option<Vec<Method>>,
        /// Mission budget in seconds [default: 100].
        #[arg(long)]
        budget: Option<f64>,
        /// Missions per backend [default: 10].
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
        /// Directory for per-mission CSVs, the time series and its summary.
        #[arg(long, default_value = "missions")]
        out_dir: PathBuf,
        /// Charge fixed planning (0.5 s) and mapping (0.2 s) times per step.
        #[arg(long)]
        synthetic_time: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if matches!(e, Error::Config { .. }) {
                2
            } else {
                1
            };
            let kind = match &e {
                Error::Config { .. } => "config",
                Error::Io { .. } => "io",
                Error::CsvParse { .. } => "csv",
                Error::Json { .. } => "json",
                _ => "runtime",
            };
            let report = serde_json::json!({ "error": kind, "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> argp::Result<()> {
    if let Some(n) = cli.jobs {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::World(WorldCmd::Gen { seed, out }) => {
            let seed = seed.seed.unwrap_or(cfg.seeds.base);
            let field = generate_grf(seed, cfg.extent()?, cfg.resolution_m, &cfg.hyper())?;
            field.save_csv(&out)?;
            println!(
                "wrote {} and {}",
                out.display(),
                sidecar_path(&out).display()
            );
        }
        Command::Map(MapCmd::Run {
            map,
            dump_map,
            full_cov,
        }) => {
            let (field, m) = run_map(&cfg, &map)?;
            let mean = m.mean();
            let report = serde_json::json!({
                "method": m.method(),
                "leaf_count": m.tree().leaf_count(),
                "rmse": rmse(&mean, m.tree(), &field, false)?,
                "rmse_hotspots": rmse(&mean, m.tree(), &field, true).ok(),
                "memory_scalars": m.memory_scalars(),
            });
            println!("{report}");
            if let Some(p) = dump_map {
                write_json(&p, &snapshot(m.as_ref(), full_cov))?;
            }
        }
        Command::Map(MapCmd::Dump { map, out, full_cov }) => {
            let (_, m) = run_map(&cfg, &map)?;
            write_json(&out, &snapshot(m.as_ref(), full_cov))?;
            println!("wrote {}", out.display());
        }
        Command::Bench(BenchCmd::Table1 {
            sizes,
            methods,
            trials,
            seed,
            out,
            summary,
            synthetic_time,
            slow,
        }) => {
            let mut t = cfg.table1(
                sizes.unwrap_or_else(|| vec![16, 32, 64]),
                methods.unwrap_or_else(|| Method::ALL.to_vec()),
            )?;
            if let Some(n) = trials {
                t.trials = n;
            }
            if let Some(s) = seed.seed {
                t.base_seed = s;
            }
            if synthetic_time {
                t.timing = TimingMode::SYNTHETIC_DEFAULT;
            }
            t.slow = slow;
            let results = run_table1(&t)?;
            write_trials_csv(&results, &out)?;
            let rows = summarize(&results);
            if let Some(p) = summary {
                write_summary_json(&rows, &p)?;
            }
            for r in &rows {
                println!(
                    "{:>3} {:<12} rmse {:.4}±{:.4}  hotspots {:.4}±{:.4}  time {:.1} ms  memory {:.4}  leaves {:.0}",
                    r.map_size,
                    r.method,
                    r.rmse.mean,
                    r.rmse.std,
                    r.rmse_hotspots.mean,
                    r.rmse_hotspots.std,
                    r.mapping_time_ms.mean,
                    r.memory_ratio.mean,
                    r.leaf_count.mean
                );
            }
        }
        Command::Plan(PlanCmd::Greedy {
            map,
            budget,
            trials,
            seed,
            out_dir,
            synthetic_time,
        }) => {
            let mut p = cfg.planning(map.unwrap_or_else(|| vec![Method::Argp, Method::Fr]))?;
            p.trials = trials.unwrap_or(10);
            if let Some(b) = budget {
                p.mission.budget_s = b;
            }
            if let Some(s) = seed.seed {
                p.base_seed = s;
            }
            if synthetic_time {
                p.mission.timing = TimingMode::SYNTHETIC_DEFAULT;
            }
            let runs = run_planning_experiment(&p)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            for r in &runs {
                r.log
                    .write_csv(&out_dir.join(format!("mission_{}_{}.csv", r.method, r.seed)))?;
            }
            write_planning_csv(&runs, &out_dir.join("hs_trace.csv"))?;
            let summary = planning_summary(&runs, p.mission.budget_s, 1.0);
            write_json(&out_dir.join("hs_trace_summary.json"), &summary)?;
            for m in &p.methods {
                let mine: Vec<_> = runs.iter().filter(|r| r.method == *m).collect();
                let steps: usize = mine.iter().map(|r| r.log.steps.len()).sum();
                let last = summary.iter().rfind(|s| s.method == *m);
                println!(
                    "{:<4} {} missions, {:.1} measurements each, final hotspot trace {:.4}±{:.4}",
                    m,
                    mine.len(),
                    steps as f64 / mine.len().max(1) as f64,
                    last.map_or(f64::NAN, |s| s.hs_trace.mean),
                    last.map_or(f64::NAN, |s| s.hs_trace.std),
                );
            }
        }
    }
    Ok(())
}

fn snapshot(m: &dyn Mapper, full_cov: bool) -> serde_json::Value {
    match m.belief() {
        Some(b) => serde_json::to_value(b.snapshot(full_cov)).expect("snapshot serializes"),
        None => serde_json::json!({
            "leaves": m.tree().leaf_rects(),
            "mean": m.mean(),
            "covariance": { "kind": "diagonal", "values": m.variances() },
        }),
    }
}

fn load_or_generate(
    cfg: &ExperimentConfig,
    field: Option<&Path>,
    seed: u64,
) -> argp::Result<GroundTruthField> {
    match field {
        Some(p) => GroundTruthField::load_csv(p, true),
        None => generate_grf(seed, cfg.extent()?, cfg.resolution_m, &cfg.hyper()),
    }
}

/// Surveys a field with one method, or only builds the prior.
fn run_map(
    cfg: &ExperimentConfig,
    args: &MapArgs,
) -> argp::Result<(GroundTruthField, Box<dyn Mapper>)> {
    let method = args.method.unwrap_or(cfg.method);
    let seed = args.seed.seed.unwrap_or(cfg.seeds.base);
    let field = load_or_generate(cfg, args.field.as_deref(), seed)?;
    let mut c = cfg.clone();
    c.extent_m = [field.extent().width(), field.extent().height()];
    if let Some(n) = args.size {
        c.tree.depth = None;
        c.tree.leaves_per_axis = Some(n);
    }
    let tree = NdTree::build_uniform(c.tree_config()?)?;
    let mut mapper = build_mapper(method, tree, c.hyper(), c.prior_mean, c.merge)?;
    if !args.prior_only {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        for pose in lawnmower_plan(&field.extent(), c.survey_altitude_m, &c.sensor)? {
            let readings = c.sensor.observe(&field, mapper.tree(), &pose, &mut rng)?;
            mapper.update(&readings)?;
        }
    }
    Ok((field, mapper))
}
