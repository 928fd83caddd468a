use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ActionId, PatientId, Timestamp};

/// What caused an action item to be opened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionTrigger {
    OrangeFlag,
    RedFlag,
    NonResponder,
    PatientInitiated,
    /// Enrollment notice could not be addressed; someone must reach the GP by hand.
    MissingGpContact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Review,
    Call,
    IntensifyMonitoring,
    DispatchAssistance,
    Hospitalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Open,
    Acknowledged,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("cannot {attempted} an action that is {from:?}")]
    IllegalTransition { from: ActionStatus, attempted: &'static str },
    #[error("resolving an action requires a non-empty note")]
    MissingNote,
}

/// Work item for Command Centre clinicians.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionItem {
    pub action_id: ActionId,
    pub patient_id: PatientId,
    pub created_at: Timestamp,
    pub trigger: ActionTrigger,
    pub kind: ActionKind,
    pub status: ActionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_kind: Option<ActionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_note: Option<String>,
}

impl ActionItem {
    pub fn open(
        action_id: ActionId,
        patient_id: PatientId,
        created_at: Timestamp,
        trigger: ActionTrigger,
        kind: ActionKind,
    ) -> Self {
        ActionItem {
            action_id,
            patient_id,
            created_at,
            trigger,
            kind,
            status: ActionStatus::Open,
            resolution_kind: None,
            resolution_note: None,
        }
    }

    pub fn is_open(&self) -> bool {
        self.status != ActionStatus::Resolved
    }

    pub fn acknowledge(&mut self) -> Result<(), ActionError> {
        if self.status != ActionStatus::Open {
            return Err(ActionError::IllegalTransition { from: self.status, attempted: "acknowledge" });
        }
        self.status = ActionStatus::Acknowledged;
        Ok(())
    }

    /// Open → Acknowledged → Resolved only; a note is mandatory.
    pub fn resolve(&mut self, kind: ActionKind, note: &str) -> Result<(), ActionError> {
        if self.status != ActionStatus::Acknowledged {
            return Err(ActionError::IllegalTransition { from: self.status, attempted: "resolve" });
        }
        if note.trim().is_empty() {
            return Err(ActionError::MissingNote);
        }
        self.status = ActionStatus::Resolved;
        self.resolution_kind = Some(kind);
        self.resolution_note = Some(note.to_owned());
        Ok(())
    }
}
