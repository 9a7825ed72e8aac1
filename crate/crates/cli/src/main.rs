//! Command-line driver for the occupancy pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use daocc_core::bench::bench_latency;
use daocc_core::config::{load_config, write_config};
use daocc_core::error::Result;
use daocc_core::harness::{
    checkpoint_bytes, run_ablation, run_grid_sweep, run_train_toy, scene_distribution, RunConfig,
};
use daocc_core::metrics::save_occupancy;
use daocc_core::model::{build_view_indices, DaOccModel};
use daocc_core::scene::{generate_scene, sample_scene_spec, save_scene};
use daocc_core::suite::{all_passed, gradcheck_suite, oracle_suite, render_results};
use daocc_core::threads::configure_threads;

#[derive(Parser)]
#[command(
    name = "daocc",
    version,
    about = "Directional-attention occupancy prediction pipeline"
)]
struct Cli {
    /// Cap worker threads (overrides the DAOCC_THREADS environment variable)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration file (flat key = value); defaults apply otherwise
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the training step count
    #[arg(long)]
    steps: Option<usize>,
    /// Override the training scene count
    #[arg(long)]
    scenes: Option<usize>,
    /// Override the scene-set seed
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut run = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(steps) = self.steps {
            run.train.steps = steps;
        }
        if let Some(scenes) = self.scenes {
            run.scenes.train_scenes = scenes;
        }
        if let Some(seed) = self.seed {
            run.scenes.seed = seed;
        }
        Ok(run)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the central-difference gradient-check matrix over every op and
    /// the end-to-end miniature model
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Run every brute-force oracle comparison
    OracleSuite,
    /// Train the toy model on generated scenes and write a checkpoint
    TrainToy {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint output directory
        #[arg(long, default_value = "checkpoint")]
        out: PathBuf,
        /// Disable the decoder height attention
        #[arg(long)]
        no_dha: bool,
        /// Disable the decoder BEV attention
        #[arg(long)]
        no_dba: bool,
        /// Print the loss every N steps (0 silences progress)
        #[arg(long, default_value_t = 50)]
        log_every: usize,
    },
    /// Evaluate a checkpoint on freshly generated evaluation scenes
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint directory written by train-toy
        #[arg(long, default_value = "checkpoint")]
        checkpoint: PathBuf,
        /// Score all voxels instead of only camera-visible ones
        #[arg(long)]
        no_mask: bool,
        /// Class ids to leave out of the mIoU mean
        #[arg(long)]
        exclude_class: Vec<u8>,
    },
    /// Measure single-batch forward latency
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 30)]
        iterations: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
    /// Train and evaluate the DHA/DBA on-off matrix; optionally sweep
    /// height-grid resolutions as well
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also sweep height grids 16/8/4 x 32 x 32
        #[arg(long)]
        grids: bool,
    },
    /// Generate a scene and write its ground-truth voxel grid (DAOV)
    Export {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output voxel file
        #[arg(long, default_value = "scene.daov")]
        out: PathBuf,
        /// Also write the full scene file (cameras + points + grid)
        #[arg(long)]
        scene: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads(cli.threads);
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gradcheck { tolerance, eps } => {
            let results = gradcheck_suite(eps, tolerance);
            print!("{}", render_results(&results));
            let ok = all_passed(&results);
            println!(
                "{}",
                if ok {
                    "all gradient checks passed"
                } else {
                    "GRADIENT CHECKS FAILED"
                }
            );
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::OracleSuite => {
            let results = oracle_suite();
            print!("{}", render_results(&results));
            let ok = all_passed(&results);
            println!(
                "{}",
                if ok {
                    "all oracle comparisons passed"
                } else {
                    "ORACLE COMPARISONS FAILED"
                }
            );
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::TrainToy {
            cfg,
            out,
            no_dha,
            no_dba,
            log_every,
        } => {
            let mut run = cfg.resolve()?;
            if no_dha {
                run.model.use_dha = false;
            }
            if no_dba {
                run.model.use_dba = false;
            }
            println!("training configuration:\n{}", write_config(&run));
            let result = run_train_toy(&run, Some(&out), |step, loss| {
                if log_every > 0 && (step % log_every == 0) {
                    println!("step {step:5}  loss {loss:.6}");
                }
            })?;
            println!("final loss {:.6}", result.outcome.final_loss);
            println!(
                "eval on {} scenes:\n{}",
                run.scenes.eval_scenes,
                result.eval.to_text()
            );
            println!("checkpoint written to {}", out.display());
            let digest_len = checkpoint_bytes(&out)?.len();
            println!("checkpoint payload {digest_len} bytes");
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            cfg,
            checkpoint,
            no_mask,
            exclude_class,
        } => {
            // Prefer the configuration stored next to the checkpoint so the
            // parameter shapes always match.
            let stored = checkpoint.join("config.txt");
            let mut run = if cfg.config.is_none() && stored.exists() {
                load_config(&stored)?
            } else {
                cfg.resolve()?
            };
            if let Some(seed) = cfg.seed {
                run.scenes.seed = seed;
            }
            let dataset = daocc_core::harness::build_dataset(&run.model, &run.scenes)?;
            let indices = build_view_indices(&run.model, &dataset.rigs)?;
            let mut model = DaOccModel::new(run.model.clone())?;
            model.params.load(&checkpoint.join("params"))?;
            let report = daocc_core::harness::evaluate_model(
                &model,
                &indices,
                &dataset.eval,
                !no_mask,
                &exclude_class,
            )?;
            print!("{}", report.to_text());
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench {
            cfg,
            iterations,
            warmup,
        } => {
            let run = cfg.resolve()?;
            let stats = bench_latency(&run.model, iterations, warmup)?;
            print!("{}", stats.to_text());
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate { cfg, grids } => {
            let mut run = cfg.resolve()?;
            // The sweep trains several configurations; the bare-invocation
            // defaults are trimmed so the whole table lands in minutes.
            // Pass --steps/--scenes (or a config file) for the full sweep.
            if cfg.steps.is_none() && cfg.config.is_none() {
                run.train.steps = 250;
            }
            if cfg.scenes.is_none() && cfg.config.is_none() {
                run.scenes.train_scenes = 24;
            }
            println!(
                "ablation over {} training steps, {} scenes",
                run.train.steps, run.scenes.train_scenes
            );
            let rows = run_ablation(&run, |msg| println!("  {msg}"))?;
            println!("\nDHA   DBA   mIoU(%)   median_ms   GMACs");
            for r in &rows {
                println!(
                    "{:<5} {:<5} {:>7.2}   {:>9.2}   {:>6.3}",
                    if r.dha { "on" } else { "-" },
                    if r.dba { "on" } else { "-" },
                    100.0 * r.miou,
                    r.median_ms,
                    r.gmacs
                );
            }
            if grids {
                let sweep = run_grid_sweep(&run, &[16, 8, 4], |msg| println!("  {msg}"))?;
                println!("\nheight grid Z   mIoU(%)   median_ms   GMACs");
                for r in &sweep {
                    println!(
                        "{:>13}   {:>7.2}   {:>9.2}   {:>6.3}",
                        r.z,
                        100.0 * r.miou,
                        r.median_ms,
                        r.gmacs
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Export { cfg, out, scene } => {
            let run = cfg.resolve()?;
            let dist = scene_distribution(&run.model, &run.scenes);
            let spec = sample_scene_spec(&dist, run.scenes.seed);
            let generated = generate_scene(&spec)?;
            save_occupancy(&out, &generated.gt)?;
            println!(
                "wrote {} ({} voxels, {} classes)",
                out.display(),
                generated.gt.labels.len(),
                generated.gt.classes
            );
            if let Some(scene_path) = scene {
                save_scene(Path::new(&scene_path), &generated)?;
                println!(
                    "wrote {} ({} LiDAR points, {} cameras)",
                    scene_path.display(),
                    generated.cloud.points.len(),
                    generated.rigs.len()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
