use std::collections::VecDeque;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use gridtalk_core::agent::Architecture;
use gridtalk_core::trainer::{EpisodeLog, RewardMode, TrainConfig, Trainer};
use serde::Serialize;

use crate::{load_scenes, manifest_beside, usage, write_json, CmdResult, Manifest, SplitArg};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ArchArg {
    Lstm,
    Dnn,
    Cnn,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RewardArg {
    Base,
    Shaped,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Scenes to train on.
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    split: SplitArg,
    /// TOML training config; flags below override it.
    #[arg(long, conflicts_with = "resume")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with = "resume")]
    arch: Option<ArchArg>,
    #[arg(long, value_enum, conflicts_with = "resume")]
    curriculum: Option<OnOff>,
    #[arg(long, value_enum, conflicts_with = "resume")]
    reward: Option<RewardArg>,
    /// Total episode budget (also the budget to extend to when resuming).
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long, env = "GRIDTALK_SEED", conflicts_with = "resume")]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Progress line every this many episodes; 0 for none.
    #[arg(long, default_value_t = 1000)]
    log_every: u64,
}

#[derive(Serialize)]
struct TrainInputs<'a> {
    data: &'a std::path::Path,
    split: &'static str,
    scenes: usize,
    resumed_from: Option<&'a std::path::Path>,
    train: &'a TrainConfig,
}

fn resolve(a: &TrainArgs) -> Result<TrainConfig, crate::Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
            TrainConfig::from_toml(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(arch) = a.arch {
        cfg.architecture = match arch {
            ArchArg::Lstm => Architecture::Lstm,
            ArchArg::Dnn => Architecture::Dnn,
            ArchArg::Cnn => Architecture::Cnn,
        };
    }
    if let Some(c) = a.curriculum {
        cfg.curriculum.enabled = matches!(c, OnOff::On);
    }
    if let Some(r) = a.reward {
        cfg.reward.mode = match r {
            RewardArg::Base => RewardMode::Base,
            RewardArg::Shaped => RewardMode::Shaped,
        };
    }
    if let Some(n) = a.episodes {
        cfg.episodes = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Rolling success and reward over the last `window` episodes.
struct Progress {
    every: u64,
    window: VecDeque<(f64, bool)>,
}

impl Progress {
    fn observe(&mut self, log: &EpisodeLog) {
        if self.window.len() == 1000 {
            self.window.pop_front();
        }
        self.window.push_back((log.reward, log.success));
        if self.every > 0 && (log.episode + 1).is_multiple_of(self.every) {
            let n = self.window.len() as f64;
            let reward = self.window.iter().map(|w| w.0).sum::<f64>() / n;
            let success = self.window.iter().filter(|w| w.1).count() as f64 / n;
            eprintln!(
                "episode {:>8}  stage {}  eps {:.4}  reward {:>7.2}  success {:.3}",
                log.episode + 1,
                log.stage,
                log.epsilon,
                reward,
                success
            );
        }
    }
}

pub fn train(a: TrainArgs) -> CmdResult {
    let records = load_scenes(&a.data, a.split)?;
    let mut trainer = match &a.resume {
        Some(ckpt) => {
            let mut t = Trainer::resume(&records, ckpt)?;
            if let Some(n) = a.episodes {
                if n < t.episode() {
                    return Err(usage(format!(
                        "--episodes {n} is below the checkpoint's {}",
                        t.episode()
                    )));
                }
                t.set_episode_budget(n);
            }
            t
        }
        None => Trainer::new(&records, resolve(&a)?)?,
    };
    let config = trainer.config().clone();
    std::fs::create_dir_all(&a.out_dir)?;
    gridtalk_core::write_atomic(&a.out_dir.join("config.toml"), config.to_toml().as_bytes())?;
    let manifest = Manifest::new(
        "train",
        config.seed,
        TrainInputs {
            data: &a.data,
            split: match a.split.split() {
                Some(s) => s.as_str(),
                None => "all",
            },
            scenes: records.len(),
            resumed_from: a.resume.as_deref(),
            train: &config,
        },
    );
    write_json(&manifest_beside(&a.out_dir.join("train.json")), &manifest)?;
    eprintln!(
        "training {} on {} scenes from episode {} to {}",
        config.architecture,
        records.len(),
        trainer.episode(),
        config.episodes
    );
    let mut progress = Progress {
        every: a.log_every,
        window: VecDeque::new(),
    };
    let final_path = trainer.run(&a.out_dir, |log| progress.observe(log))?;
    eprintln!("wrote {}", final_path.display());
    Ok(())
}
