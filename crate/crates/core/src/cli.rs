//! Command-line entry points. Every command resolves a [`RunConfig`] from an
//! optional file plus `--key=value` overrides, writes it to the output
//! directory, then does its work.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use crate::adaptive_bc::{resolve_target, AlphaController};
use crate::agent::{Agent, AlphaRecord};
use crate::config::{AlphaMode, RunConfig, SweepKind};
use crate::dataset::{load_dataset, normalize_return, save_dataset, OfflineDataset};
use crate::error::{Error, Result};
use crate::forge::{forge_datasets, Forged};
use crate::rng::{self, Stream};
use crate::train::{
    evaluate_policy, finetune_online, pretrain_offline, AlphaSchedule, EvalResult, LearningCurve,
    OnlineOutcome, TrainRngs,
};

#[derive(Parser, Debug)]
#[command(name = "adaptbc", version, about = "Offline-to-online actor-critic training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an expert and write all five dataset tiers
    GenData(CommonArgs),
    /// Offline pre-training on `dataset.path`
    Pretrain(CommonArgs),
    /// Online fine-tuning from `checkpoint`
    Finetune(CommonArgs),
    /// Deterministic evaluation of `checkpoint`
    Evaluate(CommonArgs),
    /// Fine-tuning grid over fixed α (`sweep.kind = alpha`) or controller gains
    Sweep(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Config file of `key = value` lines
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides, e.g. --seed=7 --agent.n_critics=4
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
    overrides: Vec<String>,
}

pub const RESOLVED_CONFIG: &str = "resolved_config.txt";

fn resolve(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::UnknownEnv(_) => 2,
        Error::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code: 0 success, 1 runtime failure, 2 usage.
pub fn run_cli<S: AsRef<str>>(argv: &[S]) -> i32 {
    let cli = match Cli::try_parse_from(argv.iter().map(|s| s.as_ref())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = (|| -> Result<()> {
        let (args, run): (&CommonArgs, fn(&RunConfig) -> Result<()>) = match &cli.command {
            Command::GenData(a) => (a, gen_data),
            Command::Pretrain(a) => (a, pretrain),
            Command::Finetune(a) => (a, finetune),
            Command::Evaluate(a) => (a, evaluate),
            Command::Sweep(a) => (a, sweep),
        };
        let cfg = resolve(args)?;
        prepare_output(&cfg)?;
        run(&cfg)
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn prepare_output(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    write_file(&dir.join(RESOLVED_CONFIG), cfg.resolved_text().as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

fn write_curve(path: &Path, curve: &LearningCurve) -> Result<()> {
    let mut bytes = Vec::new();
    curve.write_csv(&mut bytes)?;
    write_file(path, &bytes)
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("key `{key}` is required for this command")))
}

fn require_existing(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::file(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

pub fn dataset_file_name(ds: &OfflineDataset) -> String {
    format!("{}_{}.dataset", ds.env, ds.tier)
}

pub fn load_run_dataset(cfg: &RunConfig) -> Result<OfflineDataset> {
    let path = required(&cfg.dataset.path, "dataset.path")?;
    require_existing(path)?;
    let ds = load_dataset(path)?;
    if ds.env != cfg.env {
        return Err(Error::InvalidConfig(format!(
            "dataset `{}` is for `{}` but env is `{}`",
            path.display(),
            ds.env,
            cfg.env
        )));
    }
    Ok(ds)
}

pub fn read_agent(path: &Path) -> Result<(Agent<f32>, AlphaRecord)> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    Agent::read_checkpoint(&mut BufReader::new(file))
}

pub fn write_agent(path: &Path, agent: &Agent<f32>, alphas: AlphaRecord) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    agent.write_checkpoint(alphas, &mut w)?;
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn run_gen_data(cfg: &RunConfig) -> Result<Forged> {
    forge_datasets(cfg.env, cfg.dataset.size, cfg.seed, &cfg.forge_config())
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    let forged = run_gen_data(cfg)?;
    write_curve(&cfg.output_dir.join("curve_forge.csv"), &forged.curve)?;
    println!(
        "references: R_random = {:.3}, R_expert = {:.3} (expert snapshot at step {}, medium at step {})",
        forged.refs.r_random, forged.refs.r_expert, forged.expert_step, forged.medium_step
    );
    for ds in &forged.datasets {
        let path = cfg.output_dir.join(dataset_file_name(ds));
        save_dataset(ds, &path)?;
        println!(
            "{:<14} {:>7} transitions  mean normalized return {:.3}  -> {}",
            ds.tier.as_str(),
            ds.len(),
            ds.mean_normalized_return(),
            path.display()
        );
    }
    Ok(())
}

/// Builds a fresh agent and pre-trains it; returns the agent and its curve.
pub fn run_pretrain(cfg: &RunConfig, ds: &OfflineDataset) -> Result<(Agent<f32>, LearningCurve)> {
    let init_seed = rng::stream(cfg.seed, Stream::Init).random();
    let mut agent = Agent::<f32>::new(cfg.agent.clone(), &cfg.env.spec(), init_seed)?;
    let curve = pretrain_offline(
        &mut agent,
        ds,
        cfg.offline.steps,
        cfg.offline.alpha,
        &cfg.offline_eval(),
        cfg.seed,
        cfg.wall_clock,
    )?;
    Ok((agent, curve))
}

fn pretrain(cfg: &RunConfig) -> Result<()> {
    let ds = load_run_dataset(cfg)?;
    let (agent, curve) = run_pretrain(cfg, &ds)?;
    let alphas = AlphaRecord {
        alpha_offline: cfg.offline.alpha,
        alpha_online: cfg.offline.alpha,
    };
    write_agent(&cfg.output_dir.join("pretrained.ckpt"), &agent, alphas)?;
    write_curve(&cfg.output_dir.join("curve_offline.csv"), &curve)?;
    if let Some(last) = curve.eval_rows().last() {
        println!("final eval normalized return {:.3}", last.eval_mean.unwrap_or(f64::NAN));
    }
    Ok(())
}

/// α source for fine-tuning. `alpha_offline` is the clamp recorded with the
/// pre-trained agent.
pub fn schedule_for(cfg: &RunConfig, ds: &OfflineDataset, alpha_offline: f64) -> Result<AlphaSchedule> {
    Ok(match cfg.alpha.mode {
        AlphaMode::Fixed => AlphaSchedule::Fixed(cfg.alpha.fixed),
        AlphaMode::Adaptive => {
            let mut c = cfg.controller()?;
            c.alpha_offline = alpha_offline;
            c.r_target = resolve_target(cfg.alpha.target_mode, &ds.refs);
            AlphaSchedule::Adaptive(AlphaController::new(c)?)
        }
    })
}

pub fn run_finetune(
    cfg: &RunConfig,
    ds: &OfflineDataset,
    mut agent: Agent<f32>,
    alpha_offline: f64,
) -> Result<(Agent<f32>, OnlineOutcome, AlphaSchedule)> {
    let mut schedule = schedule_for(cfg, ds, alpha_offline)?;
    let out = finetune_online(&mut agent, ds, &mut schedule, &cfg.finetune_settings(), cfg.seed)?;
    Ok((agent, out, schedule))
}

fn load_checkpoint(cfg: &RunConfig) -> Result<(Agent<f32>, AlphaRecord)> {
    let path = required(&cfg.checkpoint, "checkpoint")?;
    require_existing(path)?;
    read_agent(path)
}

fn finetune(cfg: &RunConfig) -> Result<()> {
    let (agent, alphas) = load_checkpoint(cfg)?;
    let ds = load_run_dataset(cfg)?;
    let (agent, out, schedule) = run_finetune(cfg, &ds, agent, alphas.alpha_offline)?;
    let record = AlphaRecord {
        alpha_offline: alphas.alpha_offline,
        alpha_online: schedule.current(),
    };
    write_agent(&cfg.output_dir.join("finetuned.ckpt"), &agent, record)?;
    write_curve(&cfg.output_dir.join("curve_online.csv"), &out.curve)?;
    println!(
        "{} episodes, final alpha_online {:.4}, final eval normalized return {:.3}",
        out.episodes,
        schedule.current(),
        out.curve.eval_rows().last().and_then(|r| r.eval_mean).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn evaluate(cfg: &RunConfig) -> Result<()> {
    let (agent, _) = load_checkpoint(cfg)?;
    let refs = match &cfg.dataset.path {
        Some(_) => Some(load_run_dataset(cfg)?.refs),
        None => None,
    };
    let spec = cfg.env.spec();
    if agent.obs_dim != spec.obs_dim || agent.bounds.dim() != spec.act_dim {
        return Err(Error::InvalidConfig(format!("checkpoint does not fit env `{}`", cfg.env)));
    }
    let res: EvalResult = evaluate_policy(&agent.actor, &spec, cfg.eval.episodes, TrainRngs::new(cfg.seed).eval_seed)?;
    let mut csv = String::from("episode,return,normalized_return\n");
    for (i, r) in res.returns.iter().enumerate() {
        let n = refs.map(|refs| normalize_return(*r, &refs).to_string()).unwrap_or_default();
        csv.push_str(&format!("{i},{r},{n}\n"));
    }
    write_file(&cfg.output_dir.join("eval_returns.csv"), csv.as_bytes())?;
    print!("mean return {:.3} (std {:.3}) over {} episodes", res.mean, res.std, res.returns.len());
    match refs {
        Some(refs) => println!(", normalized {:.3}", normalize_return(res.mean, &refs)),
        None => println!(),
    }
    Ok(())
}

/// One sweep member: a label for file names and its config.
pub fn sweep_members(cfg: &RunConfig) -> Vec<(String, RunConfig)> {
    let mut out = Vec::new();
    match cfg.sweep.kind {
        SweepKind::Alpha => {
            for &a in &cfg.sweep.alphas {
                let mut c = cfg.clone();
                c.alpha.mode = AlphaMode::Fixed;
                c.alpha.fixed = a;
                out.push((format!("alpha_{a}"), c));
            }
        }
        SweepKind::Gains => {
            for &kp in &cfg.sweep.kp {
                for &kd in &cfg.sweep.kd {
                    let mut c = cfg.clone();
                    c.alpha.mode = AlphaMode::Adaptive;
                    c.alpha.kp = kp;
                    c.alpha.kd = kd;
                    out.push((format!("kp_{kp}_kd_{kd}"), c));
                }
            }
        }
    }
    out
}

fn sweep(cfg: &RunConfig) -> Result<()> {
    let (agent, alphas) = load_checkpoint(cfg)?;
    let ds = load_run_dataset(cfg)?;
    let members = sweep_members(cfg);
    if members.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    let mut summary = String::from("member,final_eval,min_eval,mean_eval\n");
    for (label, c) in members {
        c.validate()?;
        let (_, out, _) = run_finetune(&c, &ds, agent.clone(), alphas.alpha_offline)?;
        write_curve(&cfg.output_dir.join(format!("curve_{label}.csv")), &out.curve)?;
        let evals: Vec<f64> = out.curve.eval_rows().filter_map(|r| r.eval_mean).collect();
        let last = evals.last().copied().unwrap_or(f64::NAN);
        let min = evals.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = evals.iter().sum::<f64>() / evals.len().max(1) as f64;
        summary.push_str(&format!("{label},{last},{min},{mean}\n"));
        println!("{label:<24} final {last:.3}  min {min:.3}  mean {mean:.3}");
    }
    write_file(&cfg.output_dir.join("sweep_summary.csv"), summary.as_bytes())
}
