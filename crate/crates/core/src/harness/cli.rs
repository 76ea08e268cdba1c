use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::RunConfig;
use super::metrics::{write_metrics, MetricRow, Report};
use super::run::{classifier_for, evaluate_checkpoint, inference_gate, run_ablation, train_run};
use super::viz::viz_matches;
use super::{HarnessError, Result};
use crate::contrastive::Objective;
use crate::scenegen::{generate_dataset, load_dataset, Dataset};

pub const USAGE: &str = "\
usage: dope <gen|train|eval|ablate|viz> [--config <file.json>] [--<dotted.key> <value> ...]

  gen     render the dataset to paths.data
  train   train on the base split, write a checkpoint to paths.checkpoint
  eval    score the checkpoint on eval.splits for every eval.settings entry
  ablate  train and score every entry of the ablation matrix
  viz     write correspondence colorings and similarity heatmaps

Config sections: seed, objective, dataset, model, train, split, eval,
ablation, viz, paths. Any leaf can be overridden, e.g.
  --train.temperature 0.07 --eval.episodes 100 --paths.data /tmp/toy

Environment: DOPE_SEED overrides seed; DOPE_THREADS caps worker threads.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
";

struct Invocation {
    command: String,
    config: Option<PathBuf>,
    overrides: Vec<(String, Value)>,
}

fn parse(argv: &[String]) -> Result<Invocation> {
    let usage = |m: String| HarnessError::Config(m);
    let command = argv.get(1).cloned().ok_or_else(|| usage("missing subcommand".into()))?;
    if !["gen", "train", "eval", "ablate", "viz"].contains(&command.as_str()) {
        return Err(usage(format!("unknown subcommand `{command}`")));
    }
    let mut config = None;
    let mut overrides = Vec::new();
    let mut it = argv[2..].iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| usage(format!("expected a --flag, got `{flag}`")))?;
        let value = it.next().ok_or_else(|| usage(format!("flag `{flag}` needs a value")))?;
        if key == "config" {
            config = Some(PathBuf::from(value));
        } else {
            overrides.push((key.to_string(), Value::String(value.clone())));
        }
    }
    Ok(Invocation {
        command,
        config,
        overrides,
    })
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("DOPE_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| HarnessError::Config(format!("DOPE_SEED `{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn apply_threads() -> Result<()> {
    if let Ok(s) = std::env::var("DOPE_THREADS") {
        let n: usize = s
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| HarnessError::Config(format!("DOPE_THREADS `{s}` is not a positive integer")))?;
        // Fails only if a pool already exists, in which case it stays.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("{what} `{}` does not exist", path.display())))
    }
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    require(&cfg.paths.data, "paths.data")?;
    Ok(load_dataset(&cfg.paths.data)?)
}

fn print_rows(rows: &[MetricRow]) {
    println!("{:<32} {:>5} {:>5} {:>6} {:>9} {:>8}", "config", "split", "way", "shot", "accuracy", "ci95");
    for r in rows {
        println!(
            "{:<32} {:>5} {:>5} {:>6} {:>9.4} {:>8.4}",
            r.config,
            format!("{:?}", r.split).to_lowercase(),
            r.n_way,
            r.k_shot,
            r.accuracy,
            r.ci95
        );
    }
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    std::fs::create_dir_all(&cfg.paths.checkpoint)?;
    let mut log = File::create(cfg.paths.checkpoint.join("train_log.jsonl"))?;
    let mut io_err = None;
    let out = train_run(cfg, &ds, cfg.objective, |e| {
        let mut rec = serde_json::to_value(e).unwrap_or_default();
        rec["seed"] = json!(cfg.seed);
        println!("{rec}");
        if let Err(err) = writeln!(log, "{rec}") {
            io_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    save_checkpoint(&cfg.paths.checkpoint, &out.params, cfg, out.steps as u64)?;
    println!("checkpoint written to {}", cfg.paths.checkpoint.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    require(&cfg.paths.checkpoint, "paths.checkpoint")?;
    let ck = load_checkpoint(&cfg.paths.checkpoint, &cfg.model)?;
    let mut cfg = cfg.clone();
    cfg.train.predict_mask = ck.config.train.predict_mask;
    // A globally trained checkpoint has no meaningful local descriptors.
    let classifier = match ck.config.objective {
        Objective::Global => classifier_for(Objective::Global),
        Objective::Dope => cfg.eval.classifier,
    };
    let rows = evaluate_checkpoint(&ck.params.online, &cfg, &ds, classifier, "eval")?;
    print_rows(&rows);
    let report = cfg.paths.report.clone();
    let (j, c) = write_metrics(&Report { config: cfg, rows }, &report)?;
    println!("report written to {} and {}", j.display(), c.display());
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let root = cfg.paths.checkpoint.join("ablation");
    let rows = run_ablation(cfg, &ds, |name, vcfg, out, rows| {
        let dir = root.join(name.replace(['/', '\\'], "_"));
        save_checkpoint(&dir, &out.params, vcfg, out.steps as u64)?;
        for r in rows {
            println!("{name}: {:?} {}-way {}-shot {:.4} ± {:.4}", r.split, r.n_way, r.k_shot, r.accuracy, r.ci95);
        }
        Ok(())
    })?;
    print_rows(&rows);
    let mut stem = cfg.paths.report.clone().into_os_string();
    stem.push("_ablation");
    let (j, c) = write_metrics(&Report { config: cfg.clone(), rows }, Path::new(&stem))?;
    println!("report written to {} and {}", j.display(), c.display());
    Ok(())
}

fn cmd_viz(cfg: &RunConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    require(&cfg.paths.checkpoint, "paths.checkpoint")?;
    let ck = load_checkpoint(&cfg.paths.checkpoint, &cfg.model)?;
    let files = viz_matches(&ck.params.online, &cfg.model, &ds, &cfg.viz, inference_gate(&ck.config.train))?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn execute(argv: &[String]) -> Result<()> {
    let inv = parse(argv)?;
    let base = match &inv.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.resolve(&inv.overrides, env_seed()?)?;
    apply_threads()?;
    match inv.command.as_str() {
        "gen" => {
            let m = generate_dataset(&cfg.dataset, &cfg.paths.data)?;
            println!("{} views written to {}", m.views.len(), cfg.paths.data.display());
            Ok(())
        }
        "train" => cmd_train(&cfg),
        "eval" => cmd_eval(&cfg),
        "ablate" => cmd_ablate(&cfg),
        "viz" => cmd_viz(&cfg),
        _ => unreachable!("validated in parse"),
    }
}

/// Runs one command line and returns the process exit code.
pub fn dispatch(argv: &[String]) -> i32 {
    match execute(argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 2 {
                eprint!("\n{USAGE}");
            }
            e.exit_code()
        }
    }
}
