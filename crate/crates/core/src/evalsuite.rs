//! Policy evaluation on held-out scenes and learning-curve helpers.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, Architecture, QNetwork};
use crate::dialogue::{
    AgentUtterance, Conversation, DialogueError, NoiseConfig, SimulatedUser, TranscriptRecord,
    Turn, UserUtterance,
};
use crate::grid::{oracle_path, Direction, EpisodeConfig, EpisodeStatus, GridError, Scene};
use crate::neural::{Checkpoint, NeuralError};
use crate::scenegen::{Difficulty, SceneRecord};
use crate::trainer::{step_reward, Distances, RewardConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no scenes to evaluate")]
    NoScenes,
    #[error("checkpoint holds a {found} network, expected {expected}")]
    ArchitectureMismatch {
        expected: Architecture,
        found: Architecture,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Chooses the agent's next utterance from the dialogue so far.
pub trait Policy {
    /// Called before each episode. Only scripted baselines look at the scene.
    fn begin(&mut self, _scene: &Scene) -> Result<(), EvalError> {
        Ok(())
    }

    fn act(&mut self, turns: &[Turn]) -> Result<AgentUtterance, EvalError>;
}

/// ε = 0 rollouts of a trained network.
pub struct GreedyPolicy<'a> {
    pub network: &'a QNetwork,
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, turns: &[Turn]) -> Result<AgentUtterance, EvalError> {
        let q = self.network.q_values(&self.network.encode(turns)?)?;
        Ok(AgentUtterance::ALL[crate::agent::argmax(&q[..AgentUtterance::COUNT])])
    }
}

/// Uniform over the vocabulary.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _turns: &[Turn]) -> Result<AgentUtterance, EvalError> {
        Ok(AgentUtterance::ALL[self.rng.gen_range(0..AgentUtterance::COUNT)])
    }
}

/// Follows an optimal path read off the scene, repeating a move while stuck.
#[derive(Default)]
pub struct ScriptedPolicy {
    plan: VecDeque<Direction>,
}

impl Policy for ScriptedPolicy {
    fn begin(&mut self, scene: &Scene) -> Result<(), EvalError> {
        self.plan = oracle_path(scene)?.1.into();
        Ok(())
    }

    fn act(&mut self, turns: &[Turn]) -> Result<AgentUtterance, EvalError> {
        if let Some(Turn {
            agent,
            user: UserUtterance::StuckInTrap,
        }) = turns.last()
        {
            return Ok(*agent);
        }
        let dir = self.plan.pop_front().unwrap_or(Direction::Up);
        Ok(AgentUtterance::MoveCommand(dir))
    }
}

/// Always the same utterance, the behaviour of a network with constant Q.
pub struct ConstantPolicy(pub AgentUtterance);

impl Policy for ConstantPolicy {
    fn act(&mut self, _turns: &[Turn]) -> Result<AgentUtterance, EvalError> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub turn_limit: usize,
    pub noise: f64,
    pub seed: u64,
    pub blocked_move_consumes_trap_lock: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            turn_limit: crate::grid::DEFAULT_TURN_LIMIT,
            noise: 0.0,
            seed: 0,
            blocked_move_consumes_trap_lock: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyStats {
    pub episodes: usize,
    pub success_rate: f64,
    pub avg_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub avg_reward: f64,
    /// `None` when no episode succeeded.
    pub avg_reward_successful: Option<f64>,
    pub avg_turns: f64,
    pub fraction_moves: f64,
    pub fraction_questions: f64,
    /// Share of questions that asked about traps; `None` without questions.
    pub fraction_trap_questions: Option<f64>,
    pub per_difficulty: BTreeMap<Difficulty, DifficultyStats>,
}

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub scene_id: String,
    pub difficulty: Difficulty,
    pub status: EpisodeStatus,
    pub reward: f64,
    pub turns: Vec<Turn>,
}

impl EpisodeResult {
    pub fn transcript(&self) -> TranscriptRecord {
        TranscriptRecord::new(&self.scene_id, &self.turns, self.status, self.reward)
    }
}

/// Plays one episode with base rewards.
pub fn play_episode<P: Policy + ?Sized, R: Rng + ?Sized>(
    policy: &mut P,
    scene: Arc<Scene>,
    config: &EvalConfig,
    rng: &mut R,
) -> Result<(EpisodeStatus, f64, Vec<Turn>), EvalError> {
    policy.begin(&scene)?;
    let user = SimulatedUser {
        noise: NoiseConfig {
            relational_flip: config.noise,
        },
        distinct_stuck_response: true,
    };
    let mut conv = Conversation::new(
        scene,
        EpisodeConfig {
            turn_limit: config.turn_limit,
            blocked_move_consumes_trap_lock: config.blocked_move_consumes_trap_lock,
        },
        user,
    );
    let base = RewardConfig::base();
    let mut reward = 0.0;
    while !conv.status().is_terminal() {
        let utterance = policy.act(conv.turns())?;
        let ex = conv.step(utterance, rng)?;
        reward += step_reward(&ex, &base, Distances::None);
    }
    Ok((conv.status(), reward, conv.turns().to_vec()))
}

/// Runs `policy` once on every scene. The user's noise for scene `i` comes
/// from its own RNG stream, so results do not depend on evaluation order.
pub fn evaluate<P: Policy + ?Sized>(
    policy: &mut P,
    scenes: &[SceneRecord],
    config: &EvalConfig,
) -> Result<(EvalReport, Vec<EpisodeResult>), EvalError> {
    if scenes.is_empty() {
        return Err(EvalError::NoScenes);
    }
    let mut results = Vec::with_capacity(scenes.len());
    for (i, rec) in scenes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        let (status, reward, turns) =
            play_episode(policy, Arc::new(rec.scene.clone()), config, &mut rng)?;
        results.push(EpisodeResult {
            scene_id: rec.id.clone(),
            difficulty: rec.difficulty,
            status,
            reward,
            turns,
        });
    }
    Ok((summarize(&results), results))
}

pub fn summarize(results: &[EpisodeResult]) -> EvalReport {
    let n = results.len();
    let success: Vec<&EpisodeResult> = results
        .iter()
        .filter(|r| r.status == EpisodeStatus::Success)
        .collect();
    let (mut moves, mut questions, mut trap_questions, mut turns) =
        (0usize, 0usize, 0usize, 0usize);
    for r in results {
        turns += r.turns.len();
        for t in &r.turns {
            match t.agent {
                AgentUtterance::MoveCommand(_) => moves += 1,
                AgentUtterance::TrapQuestion => {
                    questions += 1;
                    trap_questions += 1;
                }
                AgentUtterance::RelationalQuestion(_) => questions += 1,
            }
        }
    }
    let mean = |xs: &mut dyn Iterator<Item = f64>, count: usize| xs.sum::<f64>() / count as f64;
    let mut per_difficulty = BTreeMap::new();
    for d in Difficulty::ALL {
        let group: Vec<&EpisodeResult> = results.iter().filter(|r| r.difficulty == d).collect();
        if group.is_empty() {
            continue;
        }
        let wins = group
            .iter()
            .filter(|r| r.status == EpisodeStatus::Success)
            .count();
        per_difficulty.insert(
            d,
            DifficultyStats {
                episodes: group.len(),
                success_rate: wins as f64 / group.len() as f64,
                avg_reward: mean(&mut group.iter().map(|r| r.reward), group.len()),
            },
        );
    }
    EvalReport {
        episodes: n,
        success_rate: success.len() as f64 / n as f64,
        avg_reward: mean(&mut results.iter().map(|r| r.reward), n),
        avg_reward_successful: (!success.is_empty())
            .then(|| mean(&mut success.iter().map(|r| r.reward), success.len())),
        avg_turns: turns as f64 / n as f64,
        fraction_moves: if turns == 0 {
            0.0
        } else {
            moves as f64 / turns as f64
        },
        fraction_questions: if turns == 0 {
            0.0
        } else {
            questions as f64 / turns as f64
        },
        fraction_trap_questions: (questions > 0).then(|| trap_questions as f64 / questions as f64),
        per_difficulty,
    }
}

/// Field-wise mean over several runs, and the run with the best success rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: Vec<EvalReport>,
    pub mean: EvalReport,
    pub best: EvalReport,
}

pub fn aggregate(runs: Vec<EvalReport>) -> Aggregate {
    assert!(!runs.is_empty(), "aggregate needs at least one run");
    let k = runs.len() as f64;
    let avg = |f: &dyn Fn(&EvalReport) -> f64| runs.iter().map(f).sum::<f64>() / k;
    let avg_opt = |f: &dyn Fn(&EvalReport) -> Option<f64>| {
        let xs: Vec<f64> = runs.iter().filter_map(f).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    let mut per_difficulty = BTreeMap::new();
    for d in Difficulty::ALL {
        let stats: Vec<&DifficultyStats> = runs
            .iter()
            .filter_map(|r| r.per_difficulty.get(&d))
            .collect();
        if stats.is_empty() {
            continue;
        }
        let m = stats.len() as f64;
        per_difficulty.insert(
            d,
            DifficultyStats {
                episodes: stats[0].episodes,
                success_rate: stats.iter().map(|s| s.success_rate).sum::<f64>() / m,
                avg_reward: stats.iter().map(|s| s.avg_reward).sum::<f64>() / m,
            },
        );
    }
    let mean = EvalReport {
        episodes: runs[0].episodes,
        success_rate: avg(&|r| r.success_rate),
        avg_reward: avg(&|r| r.avg_reward),
        avg_reward_successful: avg_opt(&|r| r.avg_reward_successful),
        avg_turns: avg(&|r| r.avg_turns),
        fraction_moves: avg(&|r| r.fraction_moves),
        fraction_questions: avg(&|r| r.fraction_questions),
        fraction_trap_questions: avg_opt(&|r| r.fraction_trap_questions),
        per_difficulty,
    };
    let mut best = &runs[0];
    for r in &runs[1..] {
        if (r.success_rate, r.avg_reward) > (best.success_rate, best.avg_reward) {
            best = r;
        }
    }
    let best = best.clone();
    Aggregate { runs, mean, best }
}

/// Loads a checkpoint as a Q-network, optionally insisting on its architecture.
pub fn load_network(path: &Path, expected: Option<Architecture>) -> Result<QNetwork, EvalError> {
    let ckpt = Checkpoint::load(path)?;
    let net = QNetwork::from_checkpoint_parts(ckpt.network, &ckpt.meta.extra)?;
    if let Some(expected) = expected {
        let found = net.config().architecture;
        if found != expected {
            return Err(EvalError::ArchitectureMismatch { expected, found });
        }
    }
    Ok(net)
}

/// Trailing mean over `window` values, emitted once the window is full.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    if series.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(series.len() + 1 - window);
    let mut sum: f64 = series[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..series.len() {
        sum += series[i] - series[i - window];
        out.push(sum / window as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Position;
    use crate::scenegen::{build_dataset, GenConfig, Split};

    fn record(scene: Scene) -> SceneRecord {
        let len = crate::grid::oracle_solve_length(&scene).unwrap();
        SceneRecord {
            id: "t".into(),
            scene,
            solve_length: len,
            difficulty: Difficulty::from_solve_length(len),
            split: Split::Test,
        }
    }

    #[test]
    fn scripted_policy_on_three_move_scene() {
        let scene = Scene::new(6, 6, Position::new(0, 0), Position::new(0, 3), [], []).unwrap();
        let (report, results) = evaluate(
            &mut ScriptedPolicy::default(),
            &[record(scene)],
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(report.success_rate, 1.0);
        assert_eq!(report.avg_reward, 58.0);
        assert_eq!(report.avg_reward_successful, Some(58.0));
        assert_eq!(report.fraction_moves, 1.0);
        assert_eq!(report.fraction_trap_questions, None);
        assert_eq!(results[0].transcript().outcome, "success");
    }

    #[test]
    fn scripted_policy_solves_every_dataset_scene_optimally() {
        let (records, _) = build_dataset(200, 2, &GenConfig::default()).unwrap();
        let cfg = EvalConfig::default();
        let (_, results) = evaluate(&mut ScriptedPolicy::default(), &records, &cfg).unwrap();
        for (r, rec) in results.iter().zip(&records) {
            assert_eq!(r.status, EpisodeStatus::Success, "{}", rec.id);
            assert_eq!(r.turns.len() as u32, rec.solve_length, "{}", rec.id);
            assert_eq!(r.reward, 61.0 - rec.solve_length as f64);
        }
    }

    #[test]
    fn constant_policy_matches_direct_simulation() {
        let (records, _) = build_dataset(100, 8, &GenConfig::default()).unwrap();
        let always_above = AgentUtterance::ALL[0];
        let (report, _) = evaluate(
            &mut ConstantPolicy(always_above),
            &records,
            &EvalConfig::default(),
        )
        .unwrap();
        // asking forever never completes: every episode is a 30-turn failure
        assert_eq!(report.success_rate, 0.0);
        assert_eq!(report.avg_reward, -60.0);
        assert_eq!(report.avg_turns, 30.0);
        assert_eq!(report.fraction_questions, 1.0);
        assert_eq!(report.fraction_trap_questions, Some(0.0));
        assert_eq!(report.avg_reward_successful, None);
    }

    #[test]
    fn random_baseline_is_seeded() {
        let (records, _) = build_dataset(100, 8, &GenConfig::default()).unwrap();
        let cfg = EvalConfig::default();
        let a = evaluate(&mut RandomPolicy::new(1), &records, &cfg)
            .unwrap()
            .0;
        let b = evaluate(&mut RandomPolicy::new(1), &records, &cfg)
            .unwrap()
            .0;
        assert_eq!(a, b);
        assert!((a.fraction_moves + a.fraction_questions - 1.0).abs() < 1e-12);
        let total: usize = a.per_difficulty.values().map(|s| s.episodes).sum();
        assert_eq!(total, a.episodes);
        if a.success_rate < 1.0 && a.success_rate > 0.0 {
            assert!(a.avg_reward_successful.unwrap() >= a.avg_reward);
        }
    }

    #[test]
    fn aggregation() {
        let (records, _) = build_dataset(50, 8, &GenConfig::default()).unwrap();
        let cfg = EvalConfig::default();
        let runs: Vec<EvalReport> = (0..3)
            .map(|s| {
                evaluate(&mut RandomPolicy::new(s), &records, &cfg)
                    .unwrap()
                    .0
            })
            .collect();
        let agg = aggregate(runs.clone());
        let mean_success = runs.iter().map(|r| r.success_rate).sum::<f64>() / 3.0;
        assert!((agg.mean.success_rate - mean_success).abs() < 1e-15);
        assert!(runs.iter().all(|r| r.success_rate <= agg.best.success_rate));
    }

    #[test]
    fn empty_scene_list_is_an_error() {
        assert!(matches!(
            evaluate(&mut ScriptedPolicy::default(), &[], &EvalConfig::default()),
            Err(EvalError::NoScenes)
        ));
    }

    #[test]
    fn moving_average_cases() {
        assert_eq!(moving_average(&[3.0; 10], 4), vec![3.0; 7]);
        let s = [1.0, 5.0, 2.0];
        assert_eq!(moving_average(&s, 1), s.to_vec());
        assert!(moving_average(&s, 5).is_empty());
        let k = 8;
        let w = 4;
        let step: Vec<f64> = (0..20).map(|i| if i >= k { 1.0 } else { 0.0 }).collect();
        let ma = moving_average(&step, w);
        // output j covers inputs j..j+w
        for (j, v) in ma.iter().enumerate() {
            let ones = (j + w).saturating_sub(k).min(w);
            assert_eq!(*v, ones as f64 / w as f64, "at {j}");
        }
    }
}
