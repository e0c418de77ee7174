use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use gridtalk_core::dialogue::TranscriptRecord;
use gridtalk_core::evalsuite::{
    aggregate, evaluate, load_network, EpisodeResult, EvalConfig, GreedyPolicy, Policy,
    RandomPolicy, ScriptedPolicy,
};
use gridtalk_core::grid::{EpisodeStatus, DEFAULT_TURN_LIMIT};
use gridtalk_core::trainer::{EpisodeLog, METRICS_HEADER};
use gridtalk_core::AtomicFile;
use serde::Serialize;

use crate::{load_scenes, manifest_beside, usage, write_json, CmdResult, Manifest, SplitArg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum PolicyArg {
    /// Greedy rollouts of a trained checkpoint.
    Greedy,
    /// Uniformly random utterances.
    Random,
    /// Optimal moves read off the scene (an upper bound, not an agent).
    Oracle,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Trained checkpoint; required for the greedy policy.
    #[arg(long, required_if_eq("policy", "greedy"))]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Probability that the user flips a relational answer.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Report file (JSON: every run, their mean and the best run).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Greedy)]
    policy: PolicyArg,
    /// Base seed; runs use consecutive seeds from here.
    #[arg(long, env = "GRIDTALK_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    runs: u64,
    /// Turn limit for the random and oracle policies (checkpoints carry their own).
    #[arg(long)]
    turn_limit: Option<usize>,
    /// Per-episode rows in the trainer's metrics CSV layout.
    #[arg(long)]
    episodes_csv: Option<PathBuf>,
    /// Per-episode transcripts as JSON lines.
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalInputs<'a> {
    policy: PolicyArg,
    checkpoint: Option<&'a Path>,
    data: &'a Path,
    split: SplitArg,
    scenes: usize,
    run_seeds: Vec<u64>,
    eval: EvalConfig,
}

impl Serialize for SplitArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match self.split() {
            Some(sp) => sp.as_str(),
            None => "all",
        })
    }
}

#[derive(Serialize)]
struct SeededTranscript {
    seed: u64,
    #[serde(flatten)]
    transcript: TranscriptRecord,
}

fn episode_row(index: u64, r: &EpisodeResult) -> EpisodeLog {
    let questions = r.turns.iter().filter(|t| t.agent.is_question()).count();
    EpisodeLog {
        episode: index,
        stage: 0,
        epsilon: 0.0,
        reward: r.reward,
        turns: r.turns.len(),
        success: r.status == EpisodeStatus::Success,
        questions,
        moves: r.turns.len() - questions,
        trap_questions: r
            .turns
            .iter()
            .filter(|t| t.agent == gridtalk_core::dialogue::AgentUtterance::TrapQuestion)
            .count(),
        loss_mean: None,
    }
}

fn write_episodes_csv(path: &Path, runs: &[Vec<EpisodeResult>]) -> anyhow::Result<()> {
    let mut out = AtomicFile::create(path)?;
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(&mut out);
        w.write_record(METRICS_HEADER.split(','))?;
        let mut i = 0;
        for run in runs {
            for r in run {
                w.serialize(episode_row(i, r))?;
                i += 1;
            }
        }
        w.flush()?;
    }
    out.finish()?;
    Ok(())
}

pub fn eval(a: EvalArgs) -> CmdResult {
    if !(0.0..=1.0).contains(&a.noise) {
        return Err(usage(format!(
            "--noise must lie in [0, 1], got {}",
            a.noise
        )));
    }
    if a.runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let scenes = load_scenes(&a.data, a.split)?;
    let network = match (&a.checkpoint, a.policy) {
        (Some(p), PolicyArg::Greedy) => Some(load_network(p, None)?),
        _ => None,
    };
    let turn_limit = match &network {
        Some(n) => {
            let own = n.config().turn_limit;
            if let Some(t) = a.turn_limit.filter(|t| *t != own) {
                return Err(usage(format!(
                    "the checkpoint was trained with turn limit {own}, not {t}"
                )));
            }
            own
        }
        None => a.turn_limit.unwrap_or(DEFAULT_TURN_LIMIT),
    };
    let seeds: Vec<u64> = (0..a.runs).map(|i| a.seed.wrapping_add(i)).collect();
    let mut reports = Vec::new();
    let mut results = Vec::new();
    for &seed in &seeds {
        let cfg = EvalConfig {
            turn_limit,
            noise: a.noise,
            seed,
            ..EvalConfig::default()
        };
        let mut policy: Box<dyn Policy + '_> = match (a.policy, &network) {
            (PolicyArg::Greedy, Some(net)) => Box::new(GreedyPolicy { network: net }),
            (PolicyArg::Greedy, None) => return Err(usage("--policy greedy needs --checkpoint")),
            (PolicyArg::Random, _) => Box::new(RandomPolicy::new(seed)),
            (PolicyArg::Oracle, _) => Box::new(ScriptedPolicy::default()),
        };
        let (report, run) = evaluate(policy.as_mut(), &scenes, &cfg)?;
        eprintln!(
            "seed {seed}: success {:.3}  reward {:.2}  turns {:.2}",
            report.success_rate, report.avg_reward, report.avg_turns
        );
        reports.push(report);
        results.push(run);
    }
    let agg = aggregate(reports);
    eprintln!(
        "mean of {} runs: success {:.3}  reward {:.2}; best run: success {:.3}",
        agg.runs.len(),
        agg.mean.success_rate,
        agg.mean.avg_reward,
        agg.best.success_rate
    );
    write_json(&a.out, &agg)?;
    let inputs = EvalInputs {
        policy: a.policy,
        checkpoint: a.checkpoint.as_deref(),
        data: &a.data,
        split: a.split,
        scenes: scenes.len(),
        run_seeds: seeds.clone(),
        eval: EvalConfig {
            turn_limit,
            noise: a.noise,
            seed: a.seed,
            ..EvalConfig::default()
        },
    };
    write_json(
        &manifest_beside(&a.out),
        &Manifest::new("eval", a.seed, inputs),
    )?;
    if let Some(p) = &a.episodes_csv {
        write_episodes_csv(p, &results)?;
    }
    if let Some(p) = &a.transcripts {
        let mut out = AtomicFile::create(p)?;
        for (seed, run) in seeds.iter().zip(&results) {
            for r in run {
                serde_json::to_writer(
                    &mut out,
                    &SeededTranscript {
                        seed: *seed,
                        transcript: r.transcript(),
                    },
                )?;
                out.write_all(b"\n")?;
            }
        }
        out.finish()?;
    }
    Ok(())
}
