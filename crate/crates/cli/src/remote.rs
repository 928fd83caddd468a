//! Simulator handle that drives a running server over HTTP.

use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use homewatch_core::centre::query::CentreStats;
use homewatch_core::centre::{EnrollmentForm, SubmitOutcome, TickOutcome};
use homewatch_core::model::{PatientId, RawAnswers, Timestamp};
use homewatch_core::sim::{CentreHandle, SimError};
use homewatch_server::{ErrorBody, SharedState, OPERATOR_HEADER};

pub struct Remote {
    base: String,
    token: String,
    client: Client,
    clock: Option<Timestamp>,
    /// Set when the server runs in this process, so its log can be replayed.
    local: Option<SharedState>,
}

impl Remote {
    /// The server must run on a manual clock that has not passed the simulation start.
    pub fn new(base: &str, operator_token: &str) -> Self {
        Remote {
            base: base.trim_end_matches('/').to_owned(),
            token: operator_token.to_owned(),
            client: Client::new(),
            clock: None,
            local: None,
        }
    }

    pub fn with_local(mut self, state: SharedState) -> Self {
        self.local = Some(state);
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn finish<T: DeserializeOwned>(op: &'static str, resp: reqwest::Result<Response>) -> Result<T, SimError> {
        let resp = resp.map_err(|e| SimError::ServiceUnreachable(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return resp
                .json()
                .map_err(|e| SimError::Service { op, code: "bad_response".into(), message: e.to_string() });
        }
        let text = resp.text().unwrap_or_default();
        let (code, message) = match serde_json::from_str::<ErrorBody>(&text) {
            Ok(b) => (b.code, b.message),
            Err(_) => (status.as_u16().to_string(), text),
        };
        Err(SimError::Service { op, code, message })
    }

    fn post<T: DeserializeOwned>(&self, op: &'static str, path: &str, body: &impl Serialize) -> Result<T, SimError> {
        Self::finish(op, self.client.post(self.url(path)).header(OPERATOR_HEADER, &self.token).json(body).send())
    }

    fn set_clock(&mut self, now: Timestamp) -> Result<(), SimError> {
        if self.clock != Some(now) {
            let _: serde_json::Value = self.post("set_clock", "/sim/clock", &json!({ "now": now }))?;
            self.clock = Some(now);
        }
        Ok(())
    }
}

#[derive(serde::Deserialize)]
struct Enrolled {
    patient_id: PatientId,
}

impl CentreHandle for Remote {
    fn enroll(&mut self, form: &EnrollmentForm, now: Timestamp) -> Result<PatientId, SimError> {
        self.set_clock(now)?;
        let e: Enrolled = self.post("enroll", "/patients", form)?;
        Ok(e.patient_id)
    }

    fn tick(&mut self, now: Timestamp) -> Result<TickOutcome, SimError> {
        let out = self.post("tick", "/sim/tick", &json!({ "now": now }))?;
        self.clock = Some(now);
        Ok(out)
    }

    fn submit(&mut self, token: &str, answers: &RawAnswers, now: Timestamp) -> Result<SubmitOutcome, SimError> {
        self.set_clock(now)?;
        Self::finish("submit", self.client.post(self.url(&format!("/q/{token}"))).json(answers).send())
    }

    fn contact(&mut self, id: &PatientId, now: Timestamp) -> Result<(), SimError> {
        self.set_clock(now)?;
        let path = format!("/patients/{id}/contact");
        let _: serde_json::Value = Self::finish("contact", self.client.post(self.url(&path)).send())?;
        Ok(())
    }

    fn stats(&mut self) -> Result<CentreStats, SimError> {
        Self::finish("stats", self.client.get(self.url("/stats")).header(OPERATOR_HEADER, &self.token).send())
    }

    fn verify_replay(&mut self) -> Option<Result<bool, String>> {
        let state = self.local.as_ref()?;
        Some(state.centre().verify_replay().map_err(|e| e.to_string()))
    }
}
