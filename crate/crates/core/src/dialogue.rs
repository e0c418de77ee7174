//! The closed dialogue vocabulary, the rules-based simulated user, and
//! transcript records.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    Direction, EpisodeConfig, EpisodeState, EpisodeStatus, GridError, MoveOutcome, Position,
    Relation, Scene, TrapAnswer,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DialogueError {
    #[error("unrecognised utterance: {0:?}")]
    UnknownUtterance(String),
    #[error("action index {index} outside the {size}-utterance vocabulary")]
    ActionOutOfRange { index: usize, size: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Everything the agent can say.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentUtterance {
    RelationalQuestion(Relation),
    TrapQuestion,
    MoveCommand(Direction),
}

impl AgentUtterance {
    pub const COUNT: usize = 9;

    /// Vocabulary order; the position of each entry is its action index.
    pub const ALL: [AgentUtterance; Self::COUNT] = [
        AgentUtterance::RelationalQuestion(Relation::Above),
        AgentUtterance::RelationalQuestion(Relation::Below),
        AgentUtterance::RelationalQuestion(Relation::Right),
        AgentUtterance::RelationalQuestion(Relation::Left),
        AgentUtterance::TrapQuestion,
        AgentUtterance::MoveCommand(Direction::Up),
        AgentUtterance::MoveCommand(Direction::Down),
        AgentUtterance::MoveCommand(Direction::Left),
        AgentUtterance::MoveCommand(Direction::Right),
    ];

    pub fn index(self) -> usize {
        Self::ALL
            .iter()
            .position(|u| *u == self)
            .expect("every utterance is in the vocabulary")
    }

    pub fn from_index(index: usize) -> Result<AgentUtterance, DialogueError> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or(DialogueError::ActionOutOfRange {
                index,
                size: Self::COUNT,
            })
    }

    pub fn is_question(self) -> bool {
        !matches!(self, AgentUtterance::MoveCommand(_))
    }

    pub fn render(self) -> &'static str {
        match self {
            AgentUtterance::RelationalQuestion(Relation::Above) => {
                "Is the square above the circle?"
            }
            AgentUtterance::RelationalQuestion(Relation::Below) => {
                "Is the square below the circle?"
            }
            AgentUtterance::RelationalQuestion(Relation::Right) => {
                "Is the square to the right of the circle?"
            }
            AgentUtterance::RelationalQuestion(Relation::Left) => {
                "Is the square to the left of the circle?"
            }
            AgentUtterance::TrapQuestion => "Where is the nearest trap?",
            AgentUtterance::MoveCommand(Direction::Up) => "Move the square up",
            AgentUtterance::MoveCommand(Direction::Down) => "Move the square down",
            AgentUtterance::MoveCommand(Direction::Left) => "Move the square to the left",
            AgentUtterance::MoveCommand(Direction::Right) => "Move the square to the right",
        }
    }

    /// Parses a canonical string. Also accepts the short forms seen in
    /// recorded conversations ("left of", "Move the square left") and a
    /// trailing full stop.
    pub fn parse(text: &str) -> Result<AgentUtterance, DialogueError> {
        let t = text.trim();
        let t = t.strip_suffix('.').unwrap_or(t).trim_end();
        if let Some(u) = Self::ALL.into_iter().find(|u| u.render() == t) {
            return Ok(u);
        }
        let alias = match t {
            "Is the square left of the circle?" => {
                AgentUtterance::RelationalQuestion(Relation::Left)
            }
            "Is the square right of the circle?" => {
                AgentUtterance::RelationalQuestion(Relation::Right)
            }
            "Move the square left" => AgentUtterance::MoveCommand(Direction::Left),
            "Move the square right" => AgentUtterance::MoveCommand(Direction::Right),
            _ => return Err(DialogueError::UnknownUtterance(text.to_string())),
        };
        Ok(alias)
    }
}

impl fmt::Display for AgentUtterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.render())
    }
}

/// `count` cells in `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Steps {
    pub count: u32,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UserUtterance {
    Yes,
    No,
    Complete,
    StuckInTrap,
    NoTraps,
    InOne,
    TrapOffset { first: Steps, second: Option<Steps> },
}

/// Response categories used by the state encoder. `None` marks padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResponseKind {
    Yes,
    No,
    Complete,
    StuckInTrap,
    NoTraps,
    InOne,
    TrapOffset,
    None,
}

impl ResponseKind {
    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        self as usize
    }
}

impl UserUtterance {
    pub fn kind(&self) -> ResponseKind {
        match self {
            UserUtterance::Yes => ResponseKind::Yes,
            UserUtterance::No => ResponseKind::No,
            UserUtterance::Complete => ResponseKind::Complete,
            UserUtterance::StuckInTrap => ResponseKind::StuckInTrap,
            UserUtterance::NoTraps => ResponseKind::NoTraps,
            UserUtterance::InOne => ResponseKind::InOne,
            UserUtterance::TrapOffset { .. } => ResponseKind::TrapOffset,
        }
    }

    /// Builds the trap answer for a signed offset, horizontal part first.
    pub fn from_offset(dx: i32, dy: i32) -> Option<UserUtterance> {
        let h = (dx != 0).then(|| Steps {
            count: dx.unsigned_abs(),
            direction: if dx < 0 {
                Direction::Left
            } else {
                Direction::Right
            },
        });
        let v = (dy != 0).then(|| Steps {
            count: dy.unsigned_abs(),
            direction: if dy < 0 {
                Direction::Down
            } else {
                Direction::Up
            },
        });
        match (h, v) {
            (Some(first), second) => Some(UserUtterance::TrapOffset { first, second }),
            (None, Some(first)) => Some(UserUtterance::TrapOffset {
                first,
                second: None,
            }),
            (None, None) => None,
        }
    }

    /// Signed `(dx, dy)` of a trap answer.
    pub fn offset(&self) -> Option<(i32, i32)> {
        let UserUtterance::TrapOffset { first, second } = self else {
            return None;
        };
        let (mut dx, mut dy) = (0, 0);
        for s in std::iter::once(first).chain(second.as_ref()) {
            let (ux, uy) = s.direction.delta();
            dx += ux * s.count as i32;
            dy += uy * s.count as i32;
        }
        Some((dx, dy))
    }

    pub fn render(&self) -> String {
        match self {
            UserUtterance::Yes => "Yes".into(),
            UserUtterance::No => "No".into(),
            UserUtterance::Complete => "Complete".into(),
            UserUtterance::StuckInTrap => "No - you are stuck in a trap".into(),
            UserUtterance::NoTraps => "There are no traps in the scene".into(),
            UserUtterance::InOne => "You're in one!".into(),
            UserUtterance::TrapOffset { first, second } => match second {
                None => format!("It is {} moves {}", first.count, first.direction),
                Some(s) => format!(
                    "It is {} moves {} and {} moves {}",
                    first.count, first.direction, s.count, s.direction
                ),
            },
        }
    }

    pub fn parse(text: &str) -> Result<UserUtterance, DialogueError> {
        let unknown = || DialogueError::UnknownUtterance(text.to_string());
        let t = text.trim();
        let fixed = [
            UserUtterance::Yes,
            UserUtterance::No,
            UserUtterance::Complete,
            UserUtterance::StuckInTrap,
            UserUtterance::NoTraps,
            UserUtterance::InOne,
        ];
        if let Some(u) = fixed.into_iter().find(|u| u.render() == t) {
            return Ok(u);
        }
        let rest = t.strip_prefix("It is ").ok_or_else(unknown)?;
        let parse_steps = |s: &str| -> Option<Steps> {
            let (n, dir) = s.split_once(" moves ")?;
            let count: u32 = n.parse().ok()?;
            if count == 0 || n.starts_with('0') || n.starts_with('+') {
                return None;
            }
            Some(Steps {
                count,
                direction: Direction::from_name(dir)?,
            })
        };
        let (first, second) = match rest.split_once(" and ") {
            Some((a, b)) => (
                parse_steps(a).ok_or_else(unknown)?,
                Some(parse_steps(b).ok_or_else(unknown)?),
            ),
            None => (parse_steps(rest).ok_or_else(unknown)?, None),
        };
        if let Some(s) = second {
            if s.direction.is_horizontal() == first.direction.is_horizontal() {
                return Err(unknown());
            }
        }
        Ok(UserUtterance::TrapOffset { first, second })
    }
}

impl fmt::Display for UserUtterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Turn {
    pub agent: AgentUtterance,
    pub user: UserUtterance,
}

/// Answer corruption applied by the simulated user.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Probability of flipping a relational Yes/No answer.
    pub relational_flip: f64,
}

/// Rules-based stand-in for a visual question-answering user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedUser {
    pub noise: NoiseConfig,
    /// Report trap lock-in as its own response rather than a plain "No".
    pub distinct_stuck_response: bool,
}

impl Default for SimulatedUser {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            distinct_stuck_response: true,
        }
    }
}

impl SimulatedUser {
    pub fn with_noise(relational_flip: f64) -> Self {
        Self {
            noise: NoiseConfig { relational_flip },
            ..Self::default()
        }
    }

    /// Answers a question or carries out a command. Every call uses one turn.
    ///
    /// The rng is only consulted for relational answers under a nonzero
    /// noise rate.
    pub fn respond<R: Rng + ?Sized>(
        &self,
        state: &mut EpisodeState,
        utterance: AgentUtterance,
        rng: &mut R,
    ) -> Result<UserUtterance, DialogueError> {
        Ok(self.respond_detailed(state, utterance, rng)?.0)
    }

    /// Like [`respond`](Self::respond), also returning the move outcome for commands.
    pub fn respond_detailed<R: Rng + ?Sized>(
        &self,
        state: &mut EpisodeState,
        utterance: AgentUtterance,
        rng: &mut R,
    ) -> Result<(UserUtterance, Option<MoveOutcome>), DialogueError> {
        match utterance {
            AgentUtterance::RelationalQuestion(rel) => {
                let mut answer = state.relational_answer(rel);
                state.record_question()?;
                let p = self.noise.relational_flip;
                if p > 0.0 && rng.gen::<f64>() < p {
                    answer = !answer;
                }
                let u = if answer {
                    UserUtterance::Yes
                } else {
                    UserUtterance::No
                };
                Ok((u, None))
            }
            AgentUtterance::TrapQuestion => {
                let answer = state.nearest_trap_answer();
                state.record_question()?;
                let u = match answer {
                    TrapAnswer::NoTraps => UserUtterance::NoTraps,
                    TrapAnswer::InOne => UserUtterance::InOne,
                    TrapAnswer::Offset { dx, dy } => UserUtterance::from_offset(dx, dy)
                        .expect("nearest trap is not under the square"),
                };
                Ok((u, None))
            }
            AgentUtterance::MoveCommand(dir) => {
                let outcome = state.apply_move(dir)?;
                let u = match outcome {
                    MoveOutcome::Moved => UserUtterance::Yes,
                    MoveOutcome::Blocked => UserUtterance::No,
                    MoveOutcome::StuckInTrap if self.distinct_stuck_response => {
                        UserUtterance::StuckInTrap
                    }
                    MoveOutcome::StuckInTrap => UserUtterance::No,
                    MoveOutcome::Completed => UserUtterance::Complete,
                };
                Ok((u, Some(outcome)))
            }
        }
    }
}

/// Result of one agent utterance inside a [`Conversation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exchange {
    pub turn: Turn,
    pub outcome: Option<MoveOutcome>,
    pub square_before: Position,
    pub square_after: Position,
    pub status: EpisodeStatus,
}

/// An episode together with its transcript and the user that answers it.
#[derive(Debug, Clone)]
pub struct Conversation {
    state: EpisodeState,
    user: SimulatedUser,
    turns: Vec<Turn>,
}

impl Conversation {
    pub fn new(scene: Arc<Scene>, config: EpisodeConfig, user: SimulatedUser) -> Self {
        Self {
            state: EpisodeState::new(scene, config),
            user,
            turns: Vec::with_capacity(config.turn_limit),
        }
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn status(&self) -> EpisodeStatus {
        self.state.status()
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        utterance: AgentUtterance,
        rng: &mut R,
    ) -> Result<Exchange, DialogueError> {
        let square_before = self.state.square();
        let (user, outcome) = self
            .user
            .respond_detailed(&mut self.state, utterance, rng)?;
        let turn = Turn {
            agent: utterance,
            user,
        };
        self.turns.push(turn);
        Ok(Exchange {
            turn,
            outcome,
            square_before,
            square_after: self.state.square(),
            status: self.state.status(),
        })
    }
}

/// One serialized episode: `{"scene_id", "turns": [[agent, user], ...], "outcome", "reward"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub scene_id: String,
    pub turns: Vec<(String, String)>,
    pub outcome: String,
    pub reward: f64,
}

impl TranscriptRecord {
    pub fn new(scene_id: &str, turns: &[Turn], outcome: EpisodeStatus, reward: f64) -> Self {
        Self {
            scene_id: scene_id.to_string(),
            turns: turns
                .iter()
                .map(|t| (t.agent.render().to_string(), t.user.render()))
                .collect(),
            outcome: outcome.as_str().to_string(),
            reward,
        }
    }

    /// Parses the text turns back into the vocabulary.
    pub fn parsed_turns(&self) -> Result<Vec<Turn>, DialogueError> {
        self.turns
            .iter()
            .map(|(a, u)| {
                Ok(Turn {
                    agent: AgentUtterance::parse(a)?,
                    user: UserUtterance::parse(u)?,
                })
            })
            .collect()
    }
}
