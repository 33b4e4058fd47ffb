//! Cycle-history containers shared by simulation, inference, and evaluation.

use crate::error::{ModelError, Result};
use serde::{Deserialize, Serialize};

/// One user's ordered observed cycle lengths, with optional ground-truth
/// skip counts (populated by the simulator only).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleHistory {
    pub user_id: String,
    /// Observed cycle lengths in days; every entry is at least 1.
    pub cycles: Vec<u32>,
    /// Number of skipped (untracked) cycles inside each observed cycle.
    pub true_skips: Option<Vec<u32>>,
}

impl CycleHistory {
    pub fn new(user_id: impl Into<String>, cycles: Vec<u32>) -> Result<Self> {
        let history = CycleHistory {
            user_id: user_id.into(),
            cycles,
            true_skips: None,
        };
        history.validate()?;
        Ok(history)
    }

    pub fn with_skips(
        user_id: impl Into<String>,
        cycles: Vec<u32>,
        true_skips: Vec<u32>,
    ) -> Result<Self> {
        let history = CycleHistory {
            user_id: user_id.into(),
            cycles,
            true_skips: Some(true_skips),
        };
        history.validate()?;
        Ok(history)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&bad) = self.cycles.iter().find(|&&d| d < 1) {
            return Err(ModelError::InvalidData(format!(
                "user {}: cycle length {} is below 1 day",
                self.user_id, bad
            )));
        }
        if let Some(skips) = &self.true_skips {
            if skips.len() != self.cycles.len() {
                return Err(ModelError::InvalidData(format!(
                    "user {}: {} skip entries for {} cycles",
                    self.user_id,
                    skips.len(),
                    self.cycles.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// Whether any of the first `prefix` cycles contains a skip.
    /// Returns None when ground-truth skips are absent.
    pub fn ever_skipped(&self, prefix: usize) -> Option<bool> {
        self.true_skips
            .as_ref()
            .map(|skips| skips.iter().take(prefix).any(|&s| s >= 1))
    }
}

/// A collection of per-user cycle histories.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub users: Vec<CycleHistory>,
}

impl Dataset {
    pub fn new(users: Vec<CycleHistory>) -> Self {
        Dataset { users }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn has_true_skips(&self) -> bool {
        !self.users.is_empty() && self.users.iter().all(|u| u.true_skips.is_some())
    }
}
