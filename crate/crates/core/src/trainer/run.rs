use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::state::{self, ResumeState};
use super::{
    double_dqn_target, epsilon_at, step_reward, Curriculum, DistanceMetric, Distances,
    ReplayBuffer, RewardMode, TrainConfig, TrainError, Transition, UpdateCadence,
};
use crate::agent::{select_action, EmbeddingTable, QNetConfig, QNetwork, TurnEncoder};
use crate::dialogue::{AgentUtterance, Conversation, NoiseConfig, SimulatedUser};
use crate::grid::{DistanceMap, EpisodeConfig, EpisodeStatus, Scene};
use crate::neural::{
    clip_global_norm, Adam, AdamConfig, Checkpoint, CheckpointMeta, Network, NeuralError,
};
use crate::scenegen::{Difficulty, SceneRecord};
use crate::AtomicFile;

pub const METRICS_HEADER: &str =
    "episode,stage,epsilon,reward,turns,success,questions,moves,trap_questions,loss_mean";

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub stage: u8,
    pub epsilon: f64,
    pub reward: f64,
    pub turns: usize,
    pub success: bool,
    pub questions: usize,
    pub moves: usize,
    pub trap_questions: usize,
    pub loss_mean: Option<f64>,
}

struct SceneEntry {
    scene: Arc<Scene>,
    difficulty: Difficulty,
    distances: Option<Arc<DistanceMap>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Rngs {
    pub scenes: ChaCha8Rng,
    pub explore: ChaCha8Rng,
    pub user: ChaCha8Rng,
    pub replay: ChaCha8Rng,
}

impl Rngs {
    fn new(seed: u64) -> Self {
        let stream = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            scenes: stream(1),
            explore: stream(2),
            user: stream(3),
            replay: stream(4),
        }
    }

    fn init(seed: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(0);
        r
    }
}

pub struct Trainer {
    config: TrainConfig,
    scenes: Vec<SceneEntry>,
    pool: Vec<usize>,
    online: QNetwork,
    target: Network,
    adam: Adam,
    buffer: ReplayBuffer,
    curriculum: Curriculum,
    rngs: Rngs,
    episode: u64,
    gradient_steps: u64,
    pending: Vec<EpisodeLog>,
}

impl Trainer {
    /// Fresh trainer over `records`, all of which are eligible for sampling.
    pub fn new(records: &[SceneRecord], config: TrainConfig) -> Result<Trainer, TrainError> {
        config.validate()?;
        let scenes = Self::scene_entries(records, &config)?;
        let encoder = match &config.embedding_table {
            Some(p) => TurnEncoder::Table(EmbeddingTable::load(p)?),
            None => TurnEncoder::Template,
        };
        let online = QNetwork::new(
            Self::qnet_config(&config),
            encoder,
            &mut Rngs::init(config.seed),
        )?;
        let target = online.network().clone();
        let adam = Adam::new(Self::adam_config(&config), online.network().param_count());
        let mut t = Trainer {
            buffer: ReplayBuffer::new(config.replay_capacity),
            curriculum: Curriculum::new(config.curriculum),
            rngs: Rngs::new(config.seed),
            config,
            scenes,
            pool: Vec::new(),
            online,
            target,
            adam,
            episode: 0,
            gradient_steps: 0,
            pending: Vec::new(),
        };
        t.rebuild_pool();
        Ok(t)
    }

    /// Restores a trainer from a checkpoint and its `.state` sidecar.
    pub fn resume(records: &[SceneRecord], checkpoint: &Path) -> Result<Trainer, TrainError> {
        let ckpt = Checkpoint::load(checkpoint)?;
        let meta_err = |reason: String| TrainError::State {
            path: checkpoint.to_path_buf(),
            reason,
        };
        let config: TrainConfig = serde_json::from_value(
            ckpt.meta
                .extra
                .get("train_config")
                .cloned()
                .ok_or_else(|| meta_err("checkpoint carries no training config".into()))?,
        )
        .map_err(|e| meta_err(e.to_string()))?;
        config.validate()?;
        let scenes = Self::scene_entries(records, &config)?;
        let online = QNetwork::from_checkpoint_parts(ckpt.network, &ckpt.meta.extra)?;
        let adam = ckpt
            .adam
            .ok_or_else(|| meta_err("checkpoint carries no optimizer state".into()))?;
        let state_path = state_path(checkpoint);
        let s: ResumeState = state::read(&state_path)?;
        if s.episode != ckpt.meta.episodes || s.gradient_steps != ckpt.meta.gradient_steps {
            return Err(meta_err(format!(
                "sidecar is at episode {} but the checkpoint is at {}",
                s.episode, ckpt.meta.episodes
            )));
        }
        if s.scene_count != scenes.len() {
            return Err(meta_err(format!(
                "trained on {} scenes but {} were supplied",
                s.scene_count,
                scenes.len()
            )));
        }
        let target = Network::from_params(online.network().spec().clone(), s.target_params)?;
        let mut t = Trainer {
            buffer: ReplayBuffer::from_raw_parts(
                config.replay_capacity,
                s.transitions,
                s.replay_next,
            )
            .ok_or_else(|| meta_err("replay memory does not fit the configured capacity".into()))?,
            curriculum: s.curriculum,
            rngs: s.rngs,
            config,
            scenes,
            pool: Vec::new(),
            online,
            target,
            adam,
            episode: s.episode,
            gradient_steps: s.gradient_steps,
            pending: Vec::new(),
        };
        t.rebuild_pool();
        Ok(t)
    }

    fn qnet_config(config: &TrainConfig) -> QNetConfig {
        QNetConfig {
            architecture: config.architecture,
            turn_limit: config.turn_limit,
            action_slots: config.action_slots,
        }
    }

    fn adam_config(config: &TrainConfig) -> AdamConfig {
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        }
    }

    fn scene_entries(
        records: &[SceneRecord],
        config: &TrainConfig,
    ) -> Result<Vec<SceneEntry>, TrainError> {
        if records.is_empty() {
            return Err(TrainError::NoScenes);
        }
        if config.curriculum.enabled {
            let missing: Vec<&str> = Difficulty::ALL
                .iter()
                .filter(|d| !records.iter().any(|r| r.difficulty == **d))
                .map(|d| d.as_str())
                .collect();
            if !missing.is_empty() {
                return Err(TrainError::MissingDifficulties(missing.join(", ")));
            }
        }
        Ok(records
            .iter()
            .map(|r| SceneEntry {
                scene: Arc::new(r.scene.clone()),
                difficulty: r.difficulty,
                distances: None,
            })
            .collect())
    }

    fn rebuild_pool(&mut self) {
        self.pool = (0..self.scenes.len())
            .filter(|&i| self.curriculum.admits(self.scenes[i].difficulty))
            .collect();
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn gradient_steps(&self) -> u64 {
        self.gradient_steps
    }

    pub fn stage(&self) -> u8 {
        self.curriculum.stage()
    }

    pub fn q_network(&self) -> &QNetwork {
        &self.online
    }

    pub fn target_network(&self) -> &Network {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Changes the total number of episodes `run` trains for.
    pub fn set_episode_budget(&mut self, episodes: u64) {
        self.config.episodes = episodes;
    }

    /// Plays and learns from one episode.
    pub fn run_episode(&mut self) -> Result<EpisodeLog, TrainError> {
        let epsilon = epsilon_at(self.episode, &self.config);
        let stage = self.curriculum.stage();
        let idx = self.pool[self.rngs.scenes.gen_range(0..self.pool.len())];
        let shaped = self.config.reward.mode == RewardMode::Shaped;
        if shaped && self.config.reward.approach_metric == DistanceMetric::Oracle {
            let entry = &mut self.scenes[idx];
            if entry.distances.is_none() {
                entry.distances = Some(Arc::new(DistanceMap::to_circle(&entry.scene)));
            }
        }
        let scene = self.scenes[idx].scene.clone();
        let distances = self.scenes[idx].distances.clone();

        let user = SimulatedUser {
            noise: NoiseConfig {
                relational_flip: self.config.user_noise,
            },
            distinct_stuck_response: true,
        };
        let episode_cfg = EpisodeConfig {
            turn_limit: self.config.turn_limit,
            blocked_move_consumes_trap_lock: self.config.blocked_move_consumes_trap_lock,
        };
        let mut conv = Conversation::new(scene.clone(), episode_cfg, user);
        let mut log = EpisodeLog {
            episode: self.episode,
            stage,
            epsilon,
            reward: 0.0,
            turns: 0,
            success: false,
            questions: 0,
            moves: 0,
            trap_questions: 0,
            loss_mean: None,
        };
        let mut losses = Vec::new();
        while !conv.status().is_terminal() {
            let q = self.online.q_values(&self.online.encode(conv.turns())?)?;
            let action =
                select_action(&q[..AgentUtterance::COUNT], epsilon, &mut self.rngs.explore)?;
            let utterance = AgentUtterance::ALL[action];
            let ex = conv.step(utterance, &mut self.rngs.user)?;
            let dist = match (&distances, self.config.reward.approach_metric) {
                (Some(d), DistanceMetric::Oracle) => Distances::Oracle(d),
                (_, DistanceMetric::Manhattan) => Distances::Manhattan(&scene),
                _ => Distances::None,
            };
            let r = step_reward(&ex, &self.config.reward, dist);
            log.reward += r;
            log.turns += 1;
            match utterance {
                AgentUtterance::MoveCommand(_) => log.moves += 1,
                AgentUtterance::TrapQuestion => {
                    log.questions += 1;
                    log.trap_questions += 1;
                }
                AgentUtterance::RelationalQuestion(_) => log.questions += 1,
            }
            self.buffer.push(Transition {
                turns: Arc::from(conv.turns()),
                action,
                reward: r,
                terminal: ex.status.is_terminal(),
            });
            if self.config.update_cadence == UpdateCadence::PerAction
                && self.buffer.len() >= self.config.batch_size
            {
                losses.push(self.learn()?);
            }
        }
        if self.config.update_cadence == UpdateCadence::PerEpisode
            && self.buffer.len() >= self.config.batch_size
        {
            losses.push(self.learn()?);
        }
        log.success = conv.status() == EpisodeStatus::Success;
        if !losses.is_empty() {
            log.loss_mean = Some(losses.iter().sum::<f64>() / losses.len() as f64);
        }
        if self.curriculum.record(log.reward).is_some() {
            self.rebuild_pool();
        }
        self.episode += 1;
        Ok(log)
    }

    /// One minibatch regression toward double-DQN targets. Returns the mean
    /// squared error over the batch.
    fn learn(&mut self) -> Result<f64, TrainError> {
        let Trainer {
            config,
            online,
            target,
            adam,
            buffer,
            rngs,
            ..
        } = self;
        let n = online.network().param_count();
        let slots = config.action_slots;
        let vocab = AgentUtterance::COUNT;
        let batch = buffer.sample(&mut rngs.replay, config.batch_size);
        let scale = 1.0 / batch.len() as f64;
        let mut grads = vec![0.0; n];
        let mut grad_out = vec![0.0; slots];
        let mut loss = 0.0;
        for t in batch {
            let y = if t.terminal {
                t.reward
            } else {
                let next = online.encode(t.next_state())?;
                let input = online.input(&next)?;
                let q_online = online.network().predict(&input, &next.aux)?;
                let q_target = target.predict(&input, &next.aux)?;
                double_dqn_target(
                    t.reward,
                    false,
                    &q_online[..vocab],
                    &q_target[..vocab],
                    config.gamma,
                )
            };
            let state = online.encode(t.state())?;
            let (q, cache) = online
                .network()
                .forward(&online.input(&state)?, &state.aux)?;
            let diff = q[t.action] - y;
            loss += diff * diff;
            grad_out.iter_mut().for_each(|g| *g = 0.0);
            grad_out[t.action] = 2.0 * diff * scale;
            online.network().backward(&cache, &grad_out, &mut grads)?;
        }
        loss *= scale;
        let step = self.gradient_steps;
        let halt = |what: String| TrainError::NonFinite {
            what,
            episode: self.episode,
            step,
            checkpoint: PathBuf::new(),
        };
        if !loss.is_finite() {
            return Err(halt(format!("loss {loss}")));
        }
        if let Some(c) = config.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        match adam.step(online.network_mut(), &grads) {
            Ok(()) => {}
            Err(NeuralError::NonFiniteGradient { block, index }) => {
                return Err(halt(format!("gradient in {block}[{index}]")))
            }
            Err(e) => return Err(e.into()),
        }
        self.gradient_steps += 1;
        if self
            .gradient_steps
            .is_multiple_of(self.config.target_sync_steps)
        {
            self.target.copy_from(self.online.network())?;
        }
        Ok(loss)
    }

    /// Trains until `config.episodes` episodes have run, writing metrics and
    /// checkpoints under `out_dir`. Returns the final checkpoint path.
    pub fn run(
        &mut self,
        out_dir: &Path,
        mut progress: impl FnMut(&EpisodeLog),
    ) -> Result<PathBuf, TrainError> {
        std::fs::create_dir_all(out_dir).map_err(TrainError::io(out_dir))?;
        truncate_metrics(&out_dir.join("metrics.csv"), self.episode)?;
        while self.episode < self.config.episodes {
            let log = match self.run_episode() {
                Ok(log) => log,
                Err(TrainError::NonFinite {
                    what,
                    episode,
                    step,
                    ..
                }) => {
                    let path = out_dir.join("diagnostic.ckpt");
                    self.checkpoint()
                        .save(&path, self.config.checkpoint_precision)?;
                    return Err(TrainError::NonFinite {
                        what,
                        episode,
                        step,
                        checkpoint: path,
                    });
                }
                Err(e) => return Err(e),
            };
            progress(&log);
            self.pending.push(log);
            if self.episode.is_multiple_of(self.config.checkpoint_every) {
                self.save(out_dir, &checkpoint_name(self.episode))?;
            }
        }
        let final_path = out_dir.join("final.ckpt");
        self.save_at(out_dir, &final_path)?;
        Ok(final_path)
    }

    fn save(&mut self, out_dir: &Path, name: &str) -> Result<PathBuf, TrainError> {
        let path = out_dir.join("checkpoints").join(name);
        self.save_at(out_dir, &path)?;
        Ok(path)
    }

    /// Flushes metrics, then writes the checkpoint and its resume sidecar.
    fn save_at(&mut self, out_dir: &Path, path: &Path) -> Result<(), TrainError> {
        flush_metrics(&out_dir.join("metrics.csv"), &self.pending)?;
        self.pending.clear();
        self.checkpoint()
            .save(path, self.config.checkpoint_precision)?;
        let s = ResumeState {
            episode: self.episode,
            gradient_steps: self.gradient_steps,
            scene_count: self.scenes.len(),
            curriculum: self.curriculum.clone(),
            rngs: self.rngs.clone(),
            target_params: self.target.params().to_vec(),
            transitions: self.buffer.raw_parts().0.to_vec(),
            replay_next: self.buffer.raw_parts().1,
        };
        state::write(&state_path(path), &s)
    }

    /// The online network, optimizer state and training settings.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut extra = self.online.checkpoint_extra();
        extra["train_config"] = serde_json::to_value(&self.config).expect("config serializes");
        Checkpoint {
            network: self.online.network().clone(),
            adam: Some(self.adam.clone()),
            meta: CheckpointMeta {
                episodes: self.episode,
                gradient_steps: self.gradient_steps,
                rng: None,
                extra,
            },
        }
    }
}

pub fn checkpoint_name(episode: u64) -> String {
    format!("ep{episode:09}.ckpt")
}

/// `run.ckpt` -> `run.state`.
pub fn state_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("state")
}

fn flush_metrics(path: &Path, rows: &[EpisodeLog]) -> Result<(), TrainError> {
    let io = TrainError::io(path);
    let existing = match std::fs::read(path) {
        Ok(b) => Some(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(io(e)),
    };
    let mut out = AtomicFile::create(path).map_err(TrainError::io(path))?;
    match existing {
        Some(b) => out.write_all(&b),
        None => writeln!(out, "{METRICS_HEADER}"),
    }
    .map_err(TrainError::io(path))?;
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(&mut out);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(TrainError::io(path))?;
    }
    out.finish().map_err(TrainError::io(path))
}

/// Keeps only rows for episodes before `episode`.
fn truncate_metrics(path: &Path, episode: u64) -> Result<(), TrainError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(TrainError::io(path)(e)),
    };
    if episode == 0 {
        return std::fs::remove_file(path).map_err(TrainError::io(path));
    }
    let mut kept = format!("{METRICS_HEADER}\n");
    for line in text.lines().skip(1) {
        let ep: u64 = line
            .split(',')
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| TrainError::State {
                path: path.to_path_buf(),
                reason: format!("unreadable metrics row {line:?}"),
            })?;
        if ep < episode {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    crate::write_atomic(path, kept.as_bytes()).map_err(TrainError::io(path))
}

/// Reads a metrics CSV written by [`Trainer::run`].
pub fn read_metrics(path: &Path) -> Result<Vec<EpisodeLog>, TrainError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(TrainError::from))
        .collect()
}
