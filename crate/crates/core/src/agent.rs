//! Conversation-state encoding, the Q-network variants, and action selection.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{AgentUtterance, ResponseKind, Turn};
use crate::neural::{Activation, LayerSpec, Network, NetworkSpec, NeuralError, Tensor};

/// Agent one-hot, response one-hot, trap offset `(dx/5, dy/5)`.
pub const TURN_WIDTH: usize = AgentUtterance::COUNT + ResponseKind::COUNT + 2;
pub const OFFSET_SCALE: f64 = 5.0;
/// Action slots when padding to the larger vocabulary size.
pub const PADDED_ACTION_SLOTS: usize = 14;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("transcript has {len} turns but the turn limit is {limit}")]
    TranscriptTooLong { len: usize, limit: usize },
    #[error("cannot select an action from an empty Q vector")]
    EmptyQ,
    #[error("epsilon {0} outside [0, 1]")]
    EpsilonOutOfRange(f64),
    #[error("action slots {0} smaller than the vocabulary")]
    TooFewSlots(usize),
    #[error("unknown architecture {0:?} (expected lstm, dnn or cnn)")]
    UnknownArchitecture(String),
    #[error("embedding table {path}:{line}: {reason}")]
    EmbeddingTable {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("embedding table has no entry for {0:?}")]
    MissingEmbedding(String),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub fn encode_turn(turn: &Turn) -> [f64; TURN_WIDTH] {
    let mut v = [0.0; TURN_WIDTH];
    v[turn.agent.index()] = 1.0;
    v[AgentUtterance::COUNT + turn.user.kind().index()] = 1.0;
    if let Some((dx, dy)) = turn.user.offset() {
        v[TURN_WIDTH - 2] = dx as f64 / OFFSET_SCALE;
        v[TURN_WIDTH - 1] = dy as f64 / OFFSET_SCALE;
    }
    v
}

/// Row used to pad fixed-length histories: only the `None` response slot.
pub fn padding_turn() -> [f64; TURN_WIDTH] {
    let mut v = [0.0; TURN_WIDTH];
    v[AgentUtterance::COUNT + ResponseKind::None.index()] = 1.0;
    v
}

/// One-hot turn counter over `0..=turn_limit` plus the scalar `turn / turn_limit`.
pub fn aux_width(turn_limit: usize) -> usize {
    turn_limit + 2
}

fn aux_features(turn: usize, turn_limit: usize) -> Vec<f64> {
    let mut aux = vec![0.0; aux_width(turn_limit)];
    aux[turn] = 1.0;
    aux[turn_limit + 1] = turn as f64 / turn_limit as f64;
    aux
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoding {
    pub rows: Vec<Vec<f64>>,
    pub width: usize,
    pub aux: Vec<f64>,
}

impl StateEncoding {
    pub fn turn(&self) -> usize {
        self.rows.len()
    }
}

pub fn encode_state(turns: &[Turn], turn_limit: usize) -> Result<StateEncoding, AgentError> {
    TurnEncoder::Template.encode_state(turns, turn_limit)
}

/// Utterance text to vector table, one `text<TAB>f1 f2 ...` per line.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    path: PathBuf,
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn load(path: &Path) -> Result<EmbeddingTable, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|source| AgentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<EmbeddingTable, AgentError> {
        let err = |line: usize, reason: String| AgentError::EmbeddingTable {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (key, nums) = line
                .split_once('\t')
                .ok_or_else(|| err(n, "missing tab separator".into()))?;
            let v = nums
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| err(n, format!("bad number {t:?}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if v.is_empty() {
                return Err(err(n, "empty vector".into()));
            }
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(err(
                        n,
                        format!("vector has {} values, expected {d}", v.len()),
                    ))
                }
                _ => {}
            }
            if vectors.insert(key.to_string(), v).is_some() {
                return Err(err(n, format!("duplicate entry {key:?}")));
            }
        }
        let dim = dim.ok_or_else(|| err(0, "no entries".into()))?;
        Ok(EmbeddingTable {
            path: path.to_path_buf(),
            dim,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, text: &str) -> Result<&[f64], AgentError> {
        self.vectors
            .get(text)
            .map(Vec::as_slice)
            .ok_or_else(|| AgentError::MissingEmbedding(text.to_string()))
    }
}

/// How a turn becomes a row of the history matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum TurnEncoder {
    #[default]
    Template,
    /// Agent text vector followed by user text vector.
    Table(EmbeddingTable),
}

impl TurnEncoder {
    pub fn width(&self) -> usize {
        match self {
            TurnEncoder::Template => TURN_WIDTH,
            TurnEncoder::Table(t) => 2 * t.dim,
        }
    }

    pub fn encode_turn(&self, turn: &Turn) -> Result<Vec<f64>, AgentError> {
        match self {
            TurnEncoder::Template => Ok(encode_turn(turn).to_vec()),
            TurnEncoder::Table(t) => {
                let mut v = t.get(turn.agent.render())?.to_vec();
                v.extend_from_slice(t.get(&turn.user.render())?);
                Ok(v)
            }
        }
    }

    pub fn padding(&self) -> Vec<f64> {
        match self {
            TurnEncoder::Template => padding_turn().to_vec(),
            TurnEncoder::Table(t) => vec![0.0; 2 * t.dim],
        }
    }

    pub fn encode_state(
        &self,
        turns: &[Turn],
        turn_limit: usize,
    ) -> Result<StateEncoding, AgentError> {
        if turns.len() > turn_limit {
            return Err(AgentError::TranscriptTooLong {
                len: turns.len(),
                limit: turn_limit,
            });
        }
        Ok(StateEncoding {
            rows: turns
                .iter()
                .map(|t| self.encode_turn(t))
                .collect::<Result<_, _>>()?,
            width: self.width(),
            aux: aux_features(turns.len(), turn_limit),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Lstm,
    Dnn,
    Cnn,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Lstm, Architecture::Dnn, Architecture::Cnn];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Lstm => "lstm",
            Architecture::Dnn => "dnn",
            Architecture::Cnn => "cnn",
        }
    }

    /// Whether the history is padded to a fixed `turn_limit` rows.
    pub fn fixed_length(self) -> bool {
        !matches!(self, Architecture::Lstm)
    }

    pub fn network_spec(self, turn_width: usize, turn_limit: usize, actions: usize) -> NetworkSpec {
        let aux = aux_width(turn_limit);
        let dense = |input, output, activation| LayerSpec::Dense {
            input,
            output,
            activation,
        };
        let (input_len, mut layers, encoded) = match self {
            Architecture::Lstm => (
                None,
                vec![LayerSpec::Lstm {
                    input: turn_width,
                    hidden: 64,
                }],
                64,
            ),
            Architecture::Dnn => (
                Some(turn_limit),
                vec![
                    LayerSpec::Flatten,
                    dense(turn_limit * turn_width, 64, Activation::Relu),
                ],
                64,
            ),
            Architecture::Cnn => {
                let after_first = (turn_limit.saturating_sub(2)) / 2;
                let after_second = after_first.saturating_sub(2) / 2;
                (
                    Some(turn_limit),
                    vec![
                        LayerSpec::Conv1d {
                            in_channels: turn_width,
                            filters: 64,
                            kernel: 3,
                            activation: Activation::Relu,
                        },
                        LayerSpec::MaxPool1d { pool: 2 },
                        LayerSpec::Conv1d {
                            in_channels: 64,
                            filters: 32,
                            kernel: 3,
                            activation: Activation::Relu,
                        },
                        LayerSpec::MaxPool1d { pool: 2 },
                        LayerSpec::Flatten,
                    ],
                    after_second * 32,
                )
            }
        };
        layers.extend([
            LayerSpec::Concat { aux_width: aux },
            dense(encoded + aux, 32, Activation::Relu),
            dense(32, 32, Activation::Relu),
            dense(32, actions, Activation::Identity),
        ]);
        NetworkSpec {
            input_width: turn_width,
            input_len,
            aux_width: aux,
            layers,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| AgentError::UnknownArchitecture(s.to_string()))
    }
}

/// Settings that fix a Q-network's input and output shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QNetConfig {
    pub architecture: Architecture,
    pub turn_limit: usize,
    pub action_slots: usize,
}

impl Default for QNetConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Lstm,
            turn_limit: crate::grid::DEFAULT_TURN_LIMIT,
            action_slots: AgentUtterance::COUNT,
        }
    }
}

/// A Q-network together with the encoder that feeds it.
#[derive(Debug, Clone)]
pub struct QNetwork {
    config: QNetConfig,
    encoder: TurnEncoder,
    network: Network,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(
        config: QNetConfig,
        encoder: TurnEncoder,
        rng: &mut R,
    ) -> Result<QNetwork, AgentError> {
        let spec = Self::spec_for(&config, &encoder)?;
        Ok(QNetwork {
            config,
            encoder,
            network: Network::new(spec, rng)?,
        })
    }

    pub fn zeros(config: QNetConfig, encoder: TurnEncoder) -> Result<QNetwork, AgentError> {
        let spec = Self::spec_for(&config, &encoder)?;
        Ok(QNetwork {
            config,
            encoder,
            network: Network::zeros(spec)?,
        })
    }

    pub fn from_network(
        config: QNetConfig,
        encoder: TurnEncoder,
        network: Network,
    ) -> Result<QNetwork, AgentError> {
        let spec = Self::spec_for(&config, &encoder)?;
        if *network.spec() != spec {
            return Err(NeuralError::Shape(format!(
                "network does not match the {} architecture for turn limit {}",
                config.architecture, config.turn_limit
            ))
            .into());
        }
        Ok(QNetwork {
            config,
            encoder,
            network,
        })
    }

    pub fn spec_for(config: &QNetConfig, encoder: &TurnEncoder) -> Result<NetworkSpec, AgentError> {
        if config.action_slots < AgentUtterance::COUNT {
            return Err(AgentError::TooFewSlots(config.action_slots));
        }
        Ok(config.architecture.network_spec(
            encoder.width(),
            config.turn_limit,
            config.action_slots,
        ))
    }

    pub fn config(&self) -> &QNetConfig {
        &self.config
    }

    pub fn encoder(&self) -> &TurnEncoder {
        &self.encoder
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn encode(&self, turns: &[Turn]) -> Result<StateEncoding, AgentError> {
        self.encoder.encode_state(turns, self.config.turn_limit)
    }

    /// Network input for an encoding, padded for the fixed-length variants.
    pub fn input(&self, state: &StateEncoding) -> Result<Tensor, AgentError> {
        let mut rows = state.rows.clone();
        if self.config.architecture.fixed_length() {
            rows.resize(self.config.turn_limit, self.encoder.padding());
        }
        Ok(Tensor::from_rows(&rows, state.width)?)
    }

    /// Scores over all action slots; slots past the vocabulary are inert.
    pub fn q_values(&self, state: &StateEncoding) -> Result<Vec<f64>, AgentError> {
        Ok(self.network.predict(&self.input(state)?, &state.aux)?)
    }

    /// ε-greedy over the real vocabulary only.
    pub fn act<R: Rng + ?Sized>(
        &self,
        turns: &[Turn],
        epsilon: f64,
        rng: &mut R,
    ) -> Result<AgentUtterance, AgentError> {
        let q = self.q_values(&self.encode(turns)?)?;
        let index = select_action(&q[..AgentUtterance::COUNT], epsilon, rng)?;
        Ok(AgentUtterance::ALL[index])
    }

    /// Metadata stored alongside the weights in a checkpoint.
    pub fn checkpoint_extra(&self) -> serde_json::Value {
        let encoder = match &self.encoder {
            TurnEncoder::Template => serde_json::Value::String("template".into()),
            TurnEncoder::Table(t) => {
                serde_json::json!({ "embedding_table": t.path().display().to_string() })
            }
        };
        serde_json::json!({ "qnet": self.config, "encoder": encoder })
    }

    pub fn from_checkpoint_parts(
        network: Network,
        extra: &serde_json::Value,
    ) -> Result<QNetwork, AgentError> {
        let config: QNetConfig = serde_json::from_value(
            extra
                .get("qnet")
                .cloned()
                .ok_or_else(|| AgentError::Metadata("missing qnet settings".into()))?,
        )
        .map_err(|e| AgentError::Metadata(e.to_string()))?;
        let encoder = match extra.get("encoder") {
            None => TurnEncoder::Template,
            Some(serde_json::Value::String(s)) if s == "template" => TurnEncoder::Template,
            Some(v) => match v.get("embedding_table").and_then(|p| p.as_str()) {
                Some(p) => TurnEncoder::Table(EmbeddingTable::load(Path::new(p))?),
                None => return Err(AgentError::Metadata(format!("unknown encoder {v}"))),
            },
        };
        QNetwork::from_network(config, encoder, network)
    }
}

/// ε-greedy choice; the greedy branch breaks ties toward the lowest index.
/// The RNG is left untouched when ε is zero.
pub fn select_action<R: Rng + ?Sized>(
    q: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, AgentError> {
    if q.is_empty() {
        return Err(AgentError::EmptyQ);
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(AgentError::EpsilonOutOfRange(epsilon));
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..q.len()));
    }
    Ok(argmax(q))
}

pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}
