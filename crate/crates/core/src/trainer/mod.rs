//! Double-DQN training: rewards, targets, exploration schedule, curriculum,
//! replay memory and the training loop.

mod replay;
mod run;
mod state;

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{argmax, AgentError, Architecture};
use crate::dialogue::{AgentUtterance, DialogueError, Exchange};
use crate::grid::{DistanceMap, EpisodeStatus, MoveOutcome, Scene};
use crate::neural::{NeuralError, Precision};
use crate::scenegen::Difficulty;

pub use replay::{ReplayBuffer, Transition};
pub use run::{checkpoint_name, read_metrics, state_path, EpisodeLog, Trainer, METRICS_HEADER};

pub const COMPLETION_REWARD: f64 = 60.0;
pub const STEP_REWARD: f64 = -1.0;
pub const TIMEOUT_PENALTY: f64 = -30.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training scenes")]
    NoScenes,
    #[error("curriculum needs short, medium and long scenes; the dataset has none for: {0}")]
    MissingDifficulties(String),
    #[error("non-finite {what} at episode {episode}, gradient step {step}; diagnostic checkpoint at {checkpoint}")]
    NonFinite {
        what: String,
        episode: u64,
        step: u64,
        checkpoint: PathBuf,
    },
    #[error("resume state {path}: {reason}")]
    State { path: PathBuf, reason: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("metrics: {0}")]
    Csv(#[from] csv::Error),
}

impl TrainError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
        move |source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Base,
    Shaped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    /// Trap-aware shortest-path cost to the circle.
    Oracle,
    Manhattan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub mode: RewardMode,
    pub question_bonus: f64,
    pub approach_bonus: f64,
    pub approach_metric: DistanceMetric,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            mode: RewardMode::Base,
            question_bonus: 0.2,
            approach_bonus: 0.5,
            approach_metric: DistanceMetric::Oracle,
        }
    }
}

impl RewardConfig {
    pub fn base() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub enabled: bool,
    pub window: usize,
    pub threshold: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window: 500,
            threshold: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateCadence {
    /// One gradient step after every agent action.
    PerAction,
    /// One gradient step at the end of every episode.
    PerEpisode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub episodes: u64,
    pub architecture: Architecture,
    pub action_slots: usize,
    pub turn_limit: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub anneal_episodes: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    pub target_sync_steps: u64,
    pub update_cadence: UpdateCadence,
    pub grad_clip: Option<f64>,
    pub checkpoint_every: u64,
    pub checkpoint_precision: Precision,
    pub blocked_move_consumes_trap_lock: bool,
    pub user_noise: f64,
    pub embedding_table: Option<PathBuf>,
    pub reward: RewardConfig,
    pub curriculum: CurriculumConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 1_150_000,
            architecture: Architecture::Lstm,
            action_slots: AgentUtterance::COUNT,
            turn_limit: crate::grid::DEFAULT_TURN_LIMIT,
            gamma: 0.9,
            epsilon_start: 0.2,
            epsilon_end: 0.01,
            anneal_episodes: 1_150_000,
            batch_size: 512,
            learning_rate: 1e-4,
            replay_capacity: 51_200,
            target_sync_steps: 1_000,
            update_cadence: UpdateCadence::PerAction,
            grad_clip: Some(10.0),
            checkpoint_every: 10_000,
            checkpoint_precision: Precision::F64,
            blocked_move_consumes_trap_lock: true,
            user_noise: 0.0,
            embedding_table: None,
            reward: RewardConfig::default(),
            curriculum: CurriculumConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<TrainConfig, TrainError> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.epsilon_end > self.epsilon_start {
            return bad("epsilon_end exceeds epsilon_start".into());
        }
        for (name, v) in [
            ("question_bonus", self.reward.question_bonus),
            ("approach_bonus", self.reward.approach_bonus),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.user_noise) {
            return bad(format!(
                "user_noise must lie in [0, 1], got {}",
                self.user_noise
            ));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad(format!(
                "need 0 < batch_size <= replay_capacity, got {} and {}",
                self.batch_size, self.replay_capacity
            ));
        }
        if self.turn_limit == 0 || self.target_sync_steps == 0 || self.checkpoint_every == 0 {
            return bad(
                "turn_limit, target_sync_steps and checkpoint_every must be positive".into(),
            );
        }
        if self.curriculum.window == 0 {
            return bad("curriculum window must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if self.action_slots < AgentUtterance::COUNT {
            return bad(format!(
                "action_slots must be at least {}",
                AgentUtterance::COUNT
            ));
        }
        Ok(())
    }
}

/// Distances the shaped reward compares before and after a move.
pub enum Distances<'a> {
    Oracle(&'a DistanceMap),
    Manhattan(&'a Scene),
    None,
}

/// Reward for one agent utterance given what it led to.
pub fn step_reward(exchange: &Exchange, reward: &RewardConfig, distances: Distances<'_>) -> f64 {
    if exchange.status == EpisodeStatus::Success {
        return COMPLETION_REWARD;
    }
    let mut r = STEP_REWARD;
    if exchange.status == EpisodeStatus::Failure {
        r += TIMEOUT_PENALTY;
    }
    if reward.mode == RewardMode::Shaped {
        if exchange.turn.agent.is_question() {
            r += reward.question_bonus;
        }
        if exchange.outcome == Some(MoveOutcome::Moved) {
            let closer = match distances {
                Distances::Oracle(d) => {
                    match (d.get(exchange.square_after), d.get(exchange.square_before)) {
                        (Some(after), Some(before)) => after < before,
                        _ => false,
                    }
                }
                Distances::Manhattan(scene) => {
                    exchange.square_after.manhattan(scene.circle())
                        < exchange.square_before.manhattan(scene.circle())
                }
                Distances::None => false,
            };
            if closer {
                r += reward.approach_bonus;
            }
        }
    }
    r
}

/// `r` when terminal, else `r + γ Q_target(s', argmax_a Q_online(s', a))`.
pub fn double_dqn_target(
    reward: f64,
    terminal: bool,
    q_online_next: &[f64],
    q_target_next: &[f64],
    gamma: f64,
) -> f64 {
    if terminal {
        return reward;
    }
    reward + gamma * q_target_next[argmax(q_online_next)]
}

/// Linear from `epsilon_start` at episode 0 to `epsilon_end` at
/// `anneal_episodes`, constant afterwards.
pub fn epsilon_at(episode: u64, config: &TrainConfig) -> f64 {
    let (s, e, n) = (
        config.epsilon_start,
        config.epsilon_end,
        config.anneal_episodes,
    );
    if episode == 0 {
        return s;
    }
    if episode >= n {
        return e;
    }
    (s * (n - episode) as f64 + e * episode as f64) / n as f64
}

/// Stage 1 admits short scenes, stage 2 adds medium, stage 3 adds long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    config: CurriculumConfig,
    stage: u8,
    recent: VecDeque<f64>,
}

impl Curriculum {
    pub const FINAL_STAGE: u8 = 3;

    pub fn new(config: CurriculumConfig) -> Self {
        Self {
            config,
            stage: if config.enabled { 1 } else { Self::FINAL_STAGE },
            recent: VecDeque::with_capacity(config.window),
        }
    }

    pub fn stage(&self) -> u8 {
        self.stage
    }

    pub fn admits(&self, difficulty: Difficulty) -> bool {
        match difficulty {
            Difficulty::Short => true,
            Difficulty::Medium => self.stage >= 2,
            Difficulty::Long => self.stage >= 3,
        }
    }

    /// Records a finished episode's reward; returns the new stage on advancement.
    pub fn record(&mut self, reward: f64) -> Option<u8> {
        if self.stage >= Self::FINAL_STAGE {
            return None;
        }
        if self.recent.len() == self.config.window {
            self.recent.pop_front();
        }
        self.recent.push_back(reward);
        if self.recent.len() < self.config.window {
            return None;
        }
        let mean = self.recent.iter().sum::<f64>() / self.config.window as f64;
        if mean > self.config.threshold {
            self.stage += 1;
            self.recent.clear();
            return Some(self.stage);
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{Turn, UserUtterance};
    use crate::grid::{Direction, Position, Relation};

    fn exchange(
        agent: AgentUtterance,
        outcome: Option<MoveOutcome>,
        status: EpisodeStatus,
    ) -> Exchange {
        Exchange {
            turn: Turn {
                agent,
                user: UserUtterance::No,
            },
            outcome,
            square_before: Position::new(0, 0),
            square_after: Position::new(0, 1),
            status,
        }
    }

    #[test]
    fn base_rewards() {
        let base = RewardConfig::base();
        let q = AgentUtterance::TrapQuestion;
        let m = AgentUtterance::MoveCommand(Direction::Up);
        assert_eq!(
            step_reward(
                &exchange(q, None, EpisodeStatus::Ongoing),
                &base,
                Distances::None
            ),
            -1.0
        );
        assert_eq!(
            step_reward(
                &exchange(q, None, EpisodeStatus::Failure),
                &base,
                Distances::None
            ),
            -31.0
        );
        assert_eq!(
            step_reward(
                &exchange(m, Some(MoveOutcome::Completed), EpisodeStatus::Success),
                &base,
                Distances::None
            ),
            60.0
        );
        // 15 prior actions then completion
        let total = 15.0 * STEP_REWARD + COMPLETION_REWARD;
        assert_eq!(total, 45.0);
    }

    #[test]
    fn shaped_rewards() {
        let shaped = RewardConfig {
            mode: RewardMode::Shaped,
            ..RewardConfig::default()
        };
        let scene = Scene::new(3, 3, Position::new(0, 0), Position::new(0, 2), [], []).unwrap();
        let d = DistanceMap::to_circle(&scene);
        let q = exchange(
            AgentUtterance::RelationalQuestion(Relation::Above),
            None,
            EpisodeStatus::Ongoing,
        );
        assert_eq!(step_reward(&q, &shaped, Distances::Oracle(&d)), -0.8);
        let up = exchange(
            AgentUtterance::MoveCommand(Direction::Up),
            Some(MoveOutcome::Moved),
            EpisodeStatus::Ongoing,
        );
        assert_eq!(step_reward(&up, &shaped, Distances::Oracle(&d)), -0.5);
        assert_eq!(
            step_reward(&up, &shaped, Distances::Manhattan(&scene)),
            -0.5
        );
        let mut away = up;
        away.square_before = Position::new(0, 1);
        away.square_after = Position::new(0, 0);
        assert_eq!(step_reward(&away, &shaped, Distances::Oracle(&d)), -1.0);
        let mut blocked = up;
        blocked.outcome = Some(MoveOutcome::Blocked);
        assert_eq!(step_reward(&blocked, &shaped, Distances::Oracle(&d)), -1.0);
    }

    #[test]
    fn double_dqn_examples() {
        assert_eq!(
            double_dqn_target(60.0, true, &[1.0, 2.0], &[5.0, 3.0], 0.9),
            60.0
        );
        let t = double_dqn_target(-1.0, false, &[1.0, 2.0], &[5.0, 3.0], 0.9);
        assert!((t - 1.7).abs() < 1e-12, "{t}");
        assert_eq!(t, -1.0 + 0.9 * 3.0);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(epsilon_at(0, &cfg), 0.2);
        assert_eq!(epsilon_at(cfg.anneal_episodes, &cfg), 0.01);
        assert_eq!(epsilon_at(cfg.anneal_episodes / 2, &cfg), 0.105);
        assert_eq!(epsilon_at(cfg.anneal_episodes * 3, &cfg), 0.01);
        for n in [10u64, 1000, 5000, 7] {
            let c = TrainConfig {
                anneal_episodes: n,
                ..TrainConfig::default()
            };
            let mut last = f64::INFINITY;
            for e in 0..=n {
                let v = epsilon_at(e, &c);
                assert!(v <= last && (0.01..=0.2).contains(&v));
                last = v;
            }
        }
        let never = TrainConfig {
            anneal_episodes: 0,
            ..TrainConfig::default()
        };
        assert_eq!(epsilon_at(0, &never), 0.2);
        assert_eq!(epsilon_at(1, &never), 0.01);
    }

    #[test]
    fn curriculum_needs_full_window_and_strict_mean() {
        let mut c = Curriculum::new(CurriculumConfig::default());
        for _ in 0..499 {
            assert_eq!(c.record(60.0), None);
        }
        assert_eq!(c.record(60.0), Some(2));

        let mut c = Curriculum::new(CurriculumConfig::default());
        for _ in 0..2000 {
            assert_eq!(c.record(10.0), None);
        }
        assert_eq!(c.stage(), 1);
    }

    #[test]
    fn curriculum_off_admits_everything() {
        let c = Curriculum::new(CurriculumConfig {
            enabled: false,
            ..CurriculumConfig::default()
        });
        assert_eq!(c.stage(), 3);
        assert!(Difficulty::ALL.iter().all(|&d| c.admits(d)));
    }

    #[test]
    fn config_validation_and_toml() {
        let cfg = TrainConfig::default();
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let partial =
            TrainConfig::from_toml("batch_size = 32\n[reward]\nmode = \"shaped\"\n").unwrap();
        assert_eq!(partial.batch_size, 32);
        assert_eq!(partial.reward.mode, RewardMode::Shaped);
        assert_eq!(partial.gamma, 0.9);
        assert!(TrainConfig::from_toml("gamma = 1.0").is_err());
        assert!(TrainConfig::from_toml("[reward]\nquestion_bonus = 1.5").is_err());
        assert!(TrainConfig::from_toml("epsilon_end = 0.5").is_err());
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
    }
}
