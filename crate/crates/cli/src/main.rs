//! `zsel`: world generation, training, alignment, transfer and evaluation
//! runs, and trajectory plots.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};
use zsel_core::eval::{
    build_alignment_data, build_episode_sets, build_worlds, render_trajectory_plot, run_alignment, run_eval, run_finetune, run_source_training,
    run_task_expert, run_zsel, EpisodeLog, ExperimentConfig, TrajectoryOverlay,
};

/// Config keys with a dedicated global flag.
const GLOBAL_KEYS: [&str; 4] = ["seed", "workers", "resolution", "noisy_actuation"];

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn cli() -> Command {
    let mut cmd = Command::new("zsel")
        .about("Zero-shot experience learning for goal-conditioned navigation")
        .subcommand_required(true)
        .arg(Arg::new("config").long("config").global(true).value_name("PATH").help("`key = value` config file; flags override it"))
        .arg(Arg::new("out").long("out").global(true).value_name("DIR").default_value("runs/out").help("Output directory"))
        .arg(Arg::new("seed").long("seed").global(true).value_name("N").help("Run seed"))
        .arg(Arg::new("workers").long("workers").global(true).value_name("N").help("Parallel environments"))
        .arg(Arg::new("resolution").long("resolution").global(true).value_name("PX").help("Render resolution"))
        .arg(Arg::new("noisy-actuation").long("noisy-actuation").global(true).action(ArgAction::SetTrue).help("Enable actuation noise"));
    for key in ExperimentConfig::KEYS.iter().filter(|k| !GLOBAL_KEYS.contains(k)) {
        let name = flag_name(key);
        cmd = cmd.arg(Arg::new(name.clone()).long(name).global(true).value_name("VALUE").hide_short_help(true).help(format!("Config key `{key}`")));
    }
    cmd.subcommand(Command::new("worldgen").about("Generate the training and evaluation floor plans as text files"))
        .subcommand(Command::new("train-source").about("Train an image-goal agent from scratch"))
        .subcommand(Command::new("align-goals").about("Align a goal encoder of another modality to the image-goal encoder"))
        .subcommand(Command::new("zsel-eval").about("Evaluate a transferred assembly without target-task updates"))
        .subcommand(Command::new("finetune").about("Fine-tune a transferred assembly on the target task"))
        .subcommand(Command::new("train-expert").about("Train a task expert from scratch"))
        .subcommand(
            Command::new("eval")
                .about("Evaluate an assembly checkpoint")
                .arg(Arg::new("checkpoint").long("checkpoint").required(true).value_name("PATH")),
        )
        .subcommand(
            Command::new("plot")
                .about("Draw SVG trajectory plots from an evaluation run directory")
                .arg(Arg::new("from").long("from").required(true).value_name("DIR").help("Directory written by `eval`"))
                .arg(Arg::new("limit").long("limit").value_name("N").default_value("20").value_parser(clap::value_parser!(usize))),
        )
        .subcommand(
            Command::new("dataset")
                .about("Dataset tools")
                .subcommand_required(true)
                .subcommand(Command::new("build-pairs").about("Build the goal-image pair dataset for the configured modality")),
        )
}

/// Defaults, then the config file, then command-line flags.
fn load_config(m: &ArgMatches) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {path}"))?;
        cfg.apply_text(&text).with_context(|| format!("in config {path}"))?;
    }
    for key in ExperimentConfig::KEYS {
        if key == "noisy_actuation" {
            if m.get_flag("noisy-actuation") {
                cfg.set(key, "true").map_err(anyhow::Error::msg)?;
            }
            continue;
        }
        if let Some(v) = m.get_one::<String>(&flag_name(key)) {
            cfg.set(key, v).map_err(|e| anyhow::anyhow!("--{}: {e}", flag_name(key)))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn worldgen(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let worlds = build_worlds(cfg)?;
    for (split, plans) in [("train", &worlds.train), ("eval", &worlds.eval)] {
        let dir = out.join(split);
        std::fs::create_dir_all(&dir)?;
        for p in plans {
            std::fs::write(dir.join(format!("plan_{}.txt", p.seed())), p.to_text()?)?;
        }
    }
    std::fs::write(out.join("config.echo"), cfg.echo())?;
    println!("wrote {} training and {} evaluation plans to {}", worlds.train.len(), worlds.eval.len(), out.display());
    Ok(())
}

fn plot(from: &Path, limit: usize, out: &Path) -> Result<()> {
    let echo = std::fs::read_to_string(from.join("config.echo")).with_context(|| format!("reading {}/config.echo", from.display()))?;
    let cfg = ExperimentConfig::parse_text(&echo)?;
    let worlds = build_worlds(&cfg)?;
    let sets = build_episode_sets(&cfg, &worlds)?;
    let file = std::fs::File::open(from.join("episodes.jsonl")).with_context(|| format!("reading {}/episodes.jsonl", from.display()))?;
    let dir = out.join("plots");
    std::fs::create_dir_all(&dir)?;
    let mut written = 0;
    for line in std::io::BufReader::new(file).lines() {
        if written == limit {
            break;
        }
        let log: EpisodeLog = serde_json::from_str(&line?)?;
        let Some(trajectory) = &log.trajectory else { bail!("episode logs carry no trajectories; write them with `zsel eval`") };
        let ep = sets.eval.iter().find(|e| e.id == log.result.episode_id).context("episode not in the configured evaluation set")?;
        let plan = worlds.eval.iter().find(|p| p.seed() == ep.plan_id).context("plan not in the configured evaluation worlds")?;
        let overlay = TrajectoryOverlay { episode: Some(ep), trajectory, success: log.result.success, success_radius: ep.success_radius };
        render_trajectory_plot(plan, &overlay, dir.join(format!("ep_{}_seed_{}.svg", ep.id, log.seed)))?;
        written += 1;
    }
    println!("wrote {written} plots to {}", dir.display());
    Ok(())
}

fn build_pairs(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let worlds = build_worlds(cfg)?;
    let (ds, probes) = build_alignment_data(cfg, &worlds)?;
    std::fs::create_dir_all(out)?;
    ds.save(out)?;
    std::fs::write(out.join("config.echo"), cfg.echo())?;
    println!("wrote {} pairs to {} ({} retrieval probes built on the evaluation worlds)", ds.entries.len(), out.display(), probes.len());
    Ok(())
}

fn summary_line(results: &zsel_core::eval::RunResults) -> String {
    match &results.final_eval {
        Some(r) => format!(
            "succ {:.3} ± {:.3}, spl {:.3} ± {:.3} over {} seeds",
            r.summary.succ.mean,
            r.summary.succ.std,
            r.summary.spl.mean,
            r.summary.spl.std,
            r.per_seed.len()
        ),
        None => "no evaluation".to_string(),
    }
}

fn main() -> Result<()> {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cfg = load_config(sub)?;
    let out = PathBuf::from(sub.get_one::<String>("out").expect("has default"));
    match name {
        "worldgen" => worldgen(&cfg, &out)?,
        "train-source" => println!("{}", summary_line(&run_source_training(&cfg, &out)?.results)),
        "align-goals" => {
            let a = run_alignment(&cfg, &out)?;
            let last = a.report.epochs.iter().rev().find_map(|e| e.retrieval_accuracy);
            println!("wrote {}; best epoch {}, retrieval {:?}", a.encoder_path.display(), a.report.best_epoch, last);
        }
        "zsel-eval" => println!("{}", summary_line(&run_zsel(&cfg, &out)?)),
        "finetune" => println!("{}", summary_line(&run_finetune(&cfg, &out)?.results)),
        "train-expert" => println!("{}", summary_line(&run_task_expert(&cfg, &out)?.results)),
        "eval" => {
            let ckpt = PathBuf::from(sub.get_one::<String>("checkpoint").expect("required"));
            println!("{}", summary_line(&run_eval(&cfg, &ckpt, &out)?));
        }
        "plot" => {
            let from = PathBuf::from(sub.get_one::<String>("from").expect("required"));
            plot(&from, *sub.get_one::<usize>("limit").expect("has default"), &out)?;
        }
        "dataset" => match sub.subcommand() {
            Some(("build-pairs", _)) => build_pairs(&cfg, &out)?,
            _ => unreachable!("subcommand required"),
        },
        _ => unreachable!("unknown subcommand"),
    }
    Ok(())
}
