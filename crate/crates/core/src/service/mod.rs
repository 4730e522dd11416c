//! Line-delimited JSON endpoint for a [`QueryOracle`](crate::victim::QueryOracle).
//!
//! Request: `{"id":<int>,"inputs":[[...],...]}`. Success:
//! `{"id":<int>,"labels":[[...],...],"remaining":<int>}`, where hard-mode
//! labels are class indices. Failure:
//! `{"id":<int|null>,"error":{"code":<string>,"remaining":<int?>}}`.
//! Every message is one UTF-8 line terminated by `\n`. An empty `inputs`
//! list is a valid request and reports the remaining budget for free.

mod client;
mod server;

pub use client::{RemoteOptions, RemoteOracle};
pub use server::{serve, ServerHandle};

use serde::{Deserialize, Serialize};

/// Largest accepted `inputs` list.
pub const MAX_BATCH: usize = 256;

pub const CODE_BAD_REQUEST: &str = "bad_request";
pub const CODE_BUDGET_EXHAUSTED: &str = "budget_exhausted";
pub const CODE_INTERNAL: &str = "internal";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub id: i64,
    pub inputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireLabels {
    Soft(Vec<Vec<f64>>),
    Hard(Vec<usize>),
}

impl WireLabels {
    pub fn len(&self) -> usize {
        match self {
            WireLabels::Soft(v) => v.len(),
            WireLabels::Hard(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireResponse {
    Ok { id: i64, labels: WireLabels, remaining: u64 },
    Err { id: Option<i64>, error: WireError },
}

impl WireResponse {
    pub fn id(&self) -> Option<i64> {
        match self {
            WireResponse::Ok { id, .. } => Some(*id),
            WireResponse::Err { id, .. } => *id,
        }
    }
}
