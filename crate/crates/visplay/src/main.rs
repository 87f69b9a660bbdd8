//! Command-line entry points: run, eval, audit, export-metrics, inspect.
//!
//! Exit codes: 0 success, 2 config/usage validation failure, 3 runtime abort.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use visplay::config::RunConfig;
use visplay::error::VisplayError;
use visplay::persist::{self, audit::audit_path, RunReport, TranscriptRecord};
use visplay::policy::load_checkpoint;
use visplay::selfplay::{build_probe_set, evaluate_reasoner, make_eval_scenes};
use visplay::vocab::Vocab;

/// Environment variable naming the default parent directory for run output.
const OUT_ROOT_ENV: &str = "VISPLAY_OUT_ROOT";

#[derive(Parser)]
#[command(name = "visplay", about = "Self-evolving questioner/reasoner training on a grid microworld")]
struct Cli {
    /// Worker threads for rollout generation (default: all cores). Results
    /// are identical for any worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a full self-play run into an output directory.
    Run {
        /// TOML config; defaults apply for missing fields or a missing flag.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: $VISPLAY_OUT_ROOT/run-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a reasoner checkpoint on the held-out probe set.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute all rewards/advantages from transcripts and report
    /// discrepancies. PATH is a transcript file or a run directory.
    Audit { path: PathBuf },
    /// Re-derive the metrics CSV from a run's report.json.
    ExportMetrics {
        run_dir: PathBuf,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Pretty-print one transcript line.
    Inspect {
        path: PathBuf,
        /// 1-based line number.
        #[arg(long, default_value_t = 1)]
        line: usize,
    },
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig, VisplayError> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), VisplayError> {
    match cli.cmd {
        Cmd::Run { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let out_dir = out.unwrap_or_else(|| {
                let root = std::env::var(OUT_ROOT_ENV).unwrap_or_else(|_| ".".into());
                PathBuf::from(root).join(format!("run-seed{}", cfg.seed))
            });
            let report = visplay::selfplay::run(&cfg, &out_dir)?;
            println!("run complete: {}", out_dir.display());
            for it in &report.iterations {
                println!(
                    "iter {}: difficulty {:.4}, validity {:.3}, curated {}, probe accuracy {:.4}",
                    it.iteration,
                    it.questioner.mean_difficulty,
                    it.questioner.validity_rate,
                    it.curation.retained,
                    it.eval.accuracy,
                );
            }
            Ok(())
        }
        Cmd::Eval { ckpt, config, seed } => {
            let cfg = load_config(&config, seed)?;
            let (params, meta) = load_checkpoint(&ckpt)?;
            let spec = cfg.scenes.gen_spec();
            let vocab = Vocab::build(&spec);
            let grammar = visplay::microworld::Grammar::new(spec.grid_w, spec.grid_h);
            let scenes = make_eval_scenes(&cfg)?;
            let probes = build_probe_set(&scenes, &vocab, &grammar, cfg.eval.probe_per_scene, cfg.seed)?;
            let report = evaluate_reasoner(&params, &scenes, &probes, &vocab);
            println!("checkpoint: role={} step={}", meta.role, meta.step);
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Cmd::Audit { path } => {
            let report = audit_path(&path)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.clean() {
                println!(
                    "audit clean: {} records ({} questioner groups, {} reasoner groups)",
                    report.records, report.questioner_groups, report.reasoner_groups
                );
                Ok(())
            } else {
                Err(VisplayError::Domain(format!(
                    "audit found {} discrepancies",
                    report.discrepancies.len()
                )))
            }
        }
        Cmd::ExportMetrics { run_dir, out, format } => {
            if format != "csv" {
                return Err(VisplayError::ConfigValidation(vec![format!(
                    "format: unsupported value {format:?} (only \"csv\")"
                )]));
            }
            let report: RunReport = persist::read_json(&run_dir.join("report.json"))?;
            let csv = persist::metrics_csv(&report);
            match out {
                Some(p) => std::fs::write(p, csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Cmd::Inspect { path, line } => {
            let records: Vec<TranscriptRecord> = persist::read_jsonl(&path)?;
            let rec = records.get(line.saturating_sub(1)).ok_or_else(|| {
                VisplayError::Domain(format!("line {line} out of range (1..={})", records.len()))
            })?;
            println!("{}", serde_json::to_string_pretty(rec)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.workers {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build();
            match pool {
                Ok(pool) => pool.install(|| dispatch(cli)),
                Err(e) => Err(VisplayError::Domain(format!("thread pool: {e}"))),
            }
        }
        _ => dispatch(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ VisplayError::ConfigValidation(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
