use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use gridtalk_core::dialogue::{
    AgentUtterance, Conversation, DialogueError, SimulatedUser, TranscriptRecord,
};
use gridtalk_core::grid::{EpisodeConfig, EpisodeStatus, Scene};
use gridtalk_core::trainer::{step_reward, Distances, RewardConfig, STEP_REWARD, TIMEOUT_PENALTY};
use gridtalk_protocol::{ActResponse, SessionStatus, SessionView};
use rand_chacha::ChaCha8Rng;

use crate::store::StoredEpisode;

pub(crate) struct Session {
    pub id: String,
    /// Index into the loaded dataset.
    pub scene: usize,
    pub reward: f64,
    pub last_active: Instant,
    conv: Conversation,
    rng: ChaCha8Rng,
    expired: bool,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Session {
    pub fn new(
        id: String,
        scene_index: usize,
        scene: Arc<Scene>,
        config: EpisodeConfig,
        user: SimulatedUser,
        rng: ChaCha8Rng,
        now: Instant,
    ) -> Self {
        Self {
            id,
            scene: scene_index,
            reward: 0.0,
            last_active: now,
            conv: Conversation::new(scene, config, user),
            rng,
            expired: false,
        }
    }

    pub fn status(&self) -> SessionStatus {
        if self.expired {
            return SessionStatus::Failure;
        }
        match self.conv.status() {
            EpisodeStatus::Ongoing => SessionStatus::Ongoing,
            EpisodeStatus::Success => SessionStatus::Success,
            EpisodeStatus::Failure => SessionStatus::Failure,
        }
    }

    pub fn status_str(&self) -> &'static str {
        match self.status() {
            SessionStatus::Ongoing => "ongoing",
            SessionStatus::Success => "success",
            SessionStatus::Failure => "failure",
        }
    }

    pub fn turn(&self) -> usize {
        self.conv.turns().len()
    }

    pub fn moves(&self) -> usize {
        self.conv
            .turns()
            .iter()
            .filter(|t| !t.agent.is_question())
            .count()
    }

    fn finished(&self, scene_id: &str) -> StoredEpisode {
        let outcome = match self.status() {
            SessionStatus::Success => EpisodeStatus::Success,
            _ => EpisodeStatus::Failure,
        };
        StoredEpisode {
            session_id: self.id.clone(),
            transcript: TranscriptRecord::new(scene_id, self.conv.turns(), outcome, self.reward),
            expired: self.expired,
            finished_at: unix_now(),
        }
    }

    /// Plays one utterance. Returns the finished-session record when this
    /// action ended the episode.
    pub fn act(
        &mut self,
        utterance: AgentUtterance,
        now: Instant,
        scene_id: &str,
    ) -> Result<(ActResponse, Option<StoredEpisode>), DialogueError> {
        let ex = self.conv.step(utterance, &mut self.rng)?;
        let delta = step_reward(&ex, &RewardConfig::base(), Distances::None);
        self.reward += delta;
        self.last_active = now;
        let response = ActResponse {
            response_text: ex.turn.user.render(),
            turn: self.turn(),
            reward_delta: delta,
            cumulative_reward: self.reward,
            status: self.status(),
        };
        let done = self.status().is_terminal().then(|| self.finished(scene_id));
        Ok((response, done))
    }

    /// Closes an ongoing session idle for longer than `ttl` as a failure.
    /// It is charged as if every remaining turn had been spent without
    /// reaching the circle, so an untouched session scores like a timeout.
    pub fn expire_if_idle(
        &mut self,
        now: Instant,
        ttl: Duration,
        scene_id: &str,
    ) -> Option<StoredEpisode> {
        if self.status().is_terminal() || now.saturating_duration_since(self.last_active) <= ttl {
            return None;
        }
        let remaining = self
            .conv
            .state()
            .config()
            .turn_limit
            .saturating_sub(self.turn());
        self.reward += remaining as f64 * STEP_REWARD + TIMEOUT_PENALTY;
        self.expired = true;
        self.last_active = now;
        Some(self.finished(scene_id))
    }

    pub fn view(&self, choices: Vec<String>) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            choices,
            transcript: self
                .conv
                .turns()
                .iter()
                .map(|t| (t.agent.render().to_string(), t.user.render()))
                .collect(),
            turn: self.turn(),
            turn_limit: self.conv.state().config().turn_limit,
            cumulative_reward: self.reward,
            status: self.status(),
        }
    }
}
