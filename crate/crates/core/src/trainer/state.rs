//! Resume sidecar written next to each training checkpoint.
//!
//! ```text
//! "GTSTATE1"
//! u64 LE   header length
//! header   JSON: counters, curriculum, RNG states, section sizes
//! target   f64 LE target-network parameters
//! replay   transitions in ring-slot order
//! ```
//!
//! A transition is `action u8, terminal u8, reward f64, turn count u16`
//! followed by its turns; a turn is `agent u8, response kind u8` and, for
//! trap offsets, `count u32, direction u8, has_second u8[, count u32, direction u8]`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::replay::Transition;
use super::run::Rngs;
use super::{Curriculum, TrainError};
use crate::dialogue::{AgentUtterance, ResponseKind, Steps, Turn, UserUtterance};
use crate::grid::Direction;

const MAGIC: &[u8; 8] = b"GTSTATE1";
const FORMAT: u32 = 1;

pub(crate) struct ResumeState {
    pub episode: u64,
    pub gradient_steps: u64,
    pub scene_count: usize,
    pub curriculum: Curriculum,
    pub rngs: Rngs,
    pub target_params: Vec<f64>,
    /// Replay storage in slot order.
    pub transitions: Vec<Transition>,
    pub replay_next: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    episode: u64,
    gradient_steps: u64,
    scene_count: usize,
    curriculum: Curriculum,
    rngs: Rngs,
    target_params: usize,
    transitions: usize,
    replay_next: usize,
}

const KINDS: [ResponseKind; 7] = [
    ResponseKind::Yes,
    ResponseKind::No,
    ResponseKind::Complete,
    ResponseKind::StuckInTrap,
    ResponseKind::NoTraps,
    ResponseKind::InOne,
    ResponseKind::TrapOffset,
];

fn dir_index(d: Direction) -> u8 {
    Direction::ALL.iter().position(|x| *x == d).unwrap() as u8
}

fn put_steps(out: &mut Vec<u8>, s: Steps) {
    out.extend_from_slice(&s.count.to_le_bytes());
    out.push(dir_index(s.direction));
}

pub(crate) fn write(path: &Path, s: &ResumeState) -> Result<(), TrainError> {
    let header = Header {
        format: FORMAT,
        episode: s.episode,
        gradient_steps: s.gradient_steps,
        scene_count: s.scene_count,
        curriculum: s.curriculum.clone(),
        rngs: s.rngs.clone(),
        target_params: s.target_params.len(),
        transitions: s.transitions.len(),
        replay_next: s.replay_next,
    };
    let json = serde_json::to_vec(&header).expect("state header serializes");
    let mut out =
        Vec::with_capacity(json.len() + 8 * s.target_params.len() + 64 * s.transitions.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &s.target_params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for t in &s.transitions {
        out.push(t.action as u8);
        out.push(t.terminal as u8);
        out.extend_from_slice(&t.reward.to_le_bytes());
        out.extend_from_slice(&(t.turns.len() as u16).to_le_bytes());
        for turn in t.turns.iter() {
            out.push(turn.agent.index() as u8);
            out.push(turn.user.kind().index() as u8);
            if let UserUtterance::TrapOffset { first, second } = turn.user {
                put_steps(&mut out, first);
                match second {
                    Some(s) => {
                        out.push(1);
                        put_steps(&mut out, s);
                    }
                    None => out.push(0),
                }
            }
        }
    }
    crate::write_atomic(path, &out).map_err(TrainError::io(path))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> TrainError {
        TrainError::State {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.bytes.len() - self.at < n {
            return Err(self.fail(format!("truncated at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TrainError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TrainError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, TrainError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn steps(&mut self) -> Result<Steps, TrainError> {
        let count = self.u32()?;
        let d = self.u8()?;
        let direction = *Direction::ALL
            .get(d as usize)
            .ok_or_else(|| self.fail(format!("bad direction {d}")))?;
        Ok(Steps { count, direction })
    }

    fn turn(&mut self) -> Result<Turn, TrainError> {
        let a = self.u8()?;
        let agent = AgentUtterance::from_index(a as usize).map_err(|e| self.fail(e.to_string()))?;
        let k = self.u8()?;
        let kind = *KINDS
            .get(k as usize)
            .ok_or_else(|| self.fail(format!("bad response kind {k}")))?;
        let user = match kind {
            ResponseKind::Yes => UserUtterance::Yes,
            ResponseKind::No => UserUtterance::No,
            ResponseKind::Complete => UserUtterance::Complete,
            ResponseKind::StuckInTrap => UserUtterance::StuckInTrap,
            ResponseKind::NoTraps => UserUtterance::NoTraps,
            ResponseKind::InOne => UserUtterance::InOne,
            ResponseKind::TrapOffset | ResponseKind::None => {
                let first = self.steps()?;
                let second = match self.u8()? {
                    0 => None,
                    _ => Some(self.steps()?),
                };
                UserUtterance::TrapOffset { first, second }
            }
        };
        Ok(Turn { agent, user })
    }
}

pub(crate) fn read(path: &Path) -> Result<ResumeState, TrainError> {
    let bytes = std::fs::read(path).map_err(TrainError::io(path))?;
    let mut r = Reader {
        bytes: &bytes,
        at: 0,
        path,
    };
    if r.take(8)? != MAGIC {
        return Err(r.fail("not a training state file"));
    }
    let len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)
        .map_err(|e| r.fail(format!("malformed header: {e}")))?;
    if header.format != FORMAT {
        return Err(r.fail(format!("unsupported format version {}", header.format)));
    }
    let target_params = (0..header.target_params)
        .map(|_| r.f64())
        .collect::<Result<Vec<_>, _>>()?;
    let mut transitions = Vec::with_capacity(header.transitions);
    for _ in 0..header.transitions {
        let action = r.u8()? as usize;
        let terminal = r.u8()? != 0;
        let reward = r.f64()?;
        let n = r.u16()? as usize;
        if n == 0 {
            return Err(r.fail("transition without turns"));
        }
        let turns = (0..n).map(|_| r.turn()).collect::<Result<Vec<_>, _>>()?;
        transitions.push(Transition {
            turns: Arc::from(turns),
            action,
            reward,
            terminal,
        });
    }
    if r.at != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(ResumeState {
        episode: header.episode,
        gradient_steps: header.gradient_steps,
        scene_count: header.scene_count,
        curriculum: header.curriculum,
        rngs: header.rngs,
        target_params,
        transitions,
        replay_next: header.replay_next,
    })
}
