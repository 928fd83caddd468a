//! Secret, single-use, 24-hour questionnaire links.
//!
//! A token is 256 bits from the OS RNG, base64url encoded. Only its SHA-256
//! digest is stored; the raw value exists in the outbound message alone.

use std::collections::HashMap;
use std::sync::Mutex;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::Duration;
use rand::rngs::OsRng;
use rand::TryRngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{DispatchId, PatientId, PatientStatus, Timestamp};

pub const TOKEN_TTL_HOURS: i64 = 24;
const TOKEN_BYTES: usize = 32;

pub fn token_ttl() -> Duration {
    Duration::hours(TOKEN_TTL_HOURS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("unknown link")]
    Unknown,
    #[error("link has expired")]
    Expired,
    #[error("questionnaire already submitted")]
    Consumed,
    #[error("patient is not under monitoring")]
    PatientNotMonitoring,
}

impl TokenError {
    pub fn code(self) -> &'static str {
        match self {
            TokenError::Unknown => "token_unknown",
            TokenError::Expired => "token_expired",
            TokenError::Consumed => "token_consumed",
            TokenError::PatientNotMonitoring => "patient_not_monitoring",
        }
    }
}

/// A freshly issued token. `token` is the raw secret and is never persisted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessToken {
    pub token: String,
    pub patient_id: PatientId,
    pub dispatch_id: DispatchId,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub consumed: bool,
}

impl AccessToken {
    pub fn record(&self) -> TokenRecord {
        TokenRecord {
            token_hash: hash_token(&self.token),
            patient_id: self.patient_id.clone(),
            dispatch_id: self.dispatch_id.clone(),
            issued_at: self.issued_at,
            expires_at: self.expires_at,
            consumed: self.consumed,
        }
    }
}

/// What is kept at rest for each token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token_hash: String,
    pub patient_id: PatientId,
    pub dispatch_id: DispatchId,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub consumed: bool,
}

impl TokenRecord {
    /// Redeemable at `now`? Expiry is inclusive: exactly `expires_at` still works.
    pub fn check(&self, now: Timestamp) -> Result<(), TokenError> {
        if self.consumed {
            Err(TokenError::Consumed)
        } else if now > self.expires_at {
            Err(TokenError::Expired)
        } else {
            Ok(())
        }
    }
}

pub fn generate_secret() -> String {
    let mut bytes = [0u8; TOKEN_BYTES];
    OsRng.try_fill_bytes(&mut bytes).expect("OS random source available");
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn hash_token(raw: &str) -> String {
    let digest = Sha256::digest(raw.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn new_token(patient_id: &PatientId, dispatch_id: &DispatchId, now: Timestamp) -> AccessToken {
    AccessToken {
        token: generate_secret(),
        patient_id: patient_id.clone(),
        dispatch_id: dispatch_id.clone(),
        issued_at: now,
        expires_at: now + token_ttl(),
        consumed: false,
    }
}

/// `{base_url}/q/{token}`
pub fn link(base_url: &str, token: &str) -> String {
    format!("{}/q/{}", base_url.trim_end_matches('/'), token)
}

/// Extracts the token from a link produced by [`link`].
pub fn token_from_link(link: &str) -> Option<&str> {
    link.rsplit_once("/q/").map(|(_, t)| t).filter(|t| !t.is_empty())
}

/// Thread-safe token registry with linearizable redemption.
#[derive(Debug, Default)]
pub struct TokenStore {
    records: Mutex<HashMap<String, TokenRecord>>,
}

impl TokenStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn issue(
        &self,
        patient_id: &PatientId,
        dispatch_id: &DispatchId,
        status: PatientStatus,
        now: Timestamp,
    ) -> Result<AccessToken, TokenError> {
        if status != PatientStatus::Monitoring {
            return Err(TokenError::PatientNotMonitoring);
        }
        let mut records = self.records.lock().expect("token store poisoned");
        loop {
            let token = new_token(patient_id, dispatch_id, now);
            let record = token.record();
            if records.contains_key(&record.token_hash) {
                continue;
            }
            records.insert(record.token_hash.clone(), record);
            return Ok(token);
        }
    }

    /// Checks a token without consuming it.
    pub fn verify(&self, raw: &str, now: Timestamp) -> Result<(PatientId, DispatchId), TokenError> {
        let records = self.records.lock().expect("token store poisoned");
        let r = records.get(&hash_token(raw)).ok_or(TokenError::Unknown)?;
        r.check(now)?;
        Ok((r.patient_id.clone(), r.dispatch_id.clone()))
    }

    /// Single-use redemption: test and set under one lock.
    pub fn redeem(&self, raw: &str, now: Timestamp) -> Result<(PatientId, DispatchId), TokenError> {
        let hash = hash_token(raw);
        let mut records = self.records.lock().expect("token store poisoned");
        let r = records.get_mut(&hash).ok_or(TokenError::Unknown)?;
        r.check(now)?;
        r.consumed = true;
        Ok((r.patient_id.clone(), r.dispatch_id.clone()))
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("token store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
