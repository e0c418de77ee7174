//! Request and response bodies for the human-play HTTP API.
//!
//! All bodies are UTF-8 JSON. Errors are `{"error": "..."}` with a non-2xx
//! status code.

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Ongoing,
    Success,
    Failure,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        self != SessionStatus::Ongoing
    }
}

/// `POST /api/sessions`
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
    /// The nine agent utterances, indexed by action.
    pub choices: Vec<String>,
    pub turn: usize,
    /// Echoed only when the caller asked for a specific scene.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
}

/// `POST /api/sessions/{id}/act`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActRequest {
    pub action_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActResponse {
    pub response_text: String,
    pub turn: usize,
    pub reward_delta: f64,
    pub cumulative_reward: f64,
    pub status: SessionStatus,
}

/// `GET /api/sessions/{id}`: everything the player has seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub choices: Vec<String>,
    /// `(agent text, user text)` pairs.
    pub transcript: Vec<(String, String)>,
    pub turn: usize,
    pub turn_limit: usize,
    pub cumulative_reward: f64,
    pub status: SessionStatus,
}

/// `GET /api/sessions/{id}/reveal`, available once the session is terminal.
#[derive(Debug, Serialize, Deserialize)]
pub struct RevealResponse {
    /// The dataset record exactly as stored in the scene file.
    pub record: Box<RawValue>,
    pub solve_length: u32,
    /// Movement commands the player issued.
    pub moves_taken: usize,
    pub status: SessionStatus,
    pub cumulative_reward: f64,
}

/// `GET /api/stats`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub episodes: usize,
    pub success_rate: Option<f64>,
    pub avg_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
