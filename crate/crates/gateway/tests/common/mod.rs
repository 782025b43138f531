#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use chatroom_core::backend::CompletionBackend;
use chatroom_core::model::SessionId;
use chatroom_core::{Clock, ManualClock};
use chatroom_gateway::config::ExperimentConfig;
use chatroom_gateway::hub::{sequential_ids, HubSettings, SessionHub};
use chatroom_gateway::simulate::{load_transcript, ParticipantScript};
use chatroom_gateway::wire::{ServerFrame, SERVER_FRAME_SCHEMA};
use serde_json::{json, Value};

pub const START_MS: i64 = 1_700_000_000_000;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn reference_config() -> ExperimentConfig {
    ExperimentConfig::load(&fixtures_dir().join("reference.toml")).unwrap()
}

pub fn reference_participant() -> ParticipantScript {
    load_transcript(&fixtures_dir().join("reference.transcript.json")).unwrap().remove(0)
}

pub fn backend(config: &ExperimentConfig) -> Arc<dyn CompletionBackend> {
    config.build_backend().unwrap()
}

/// A hub without a log directory, on a manual clock, with `t-0001` style ids.
pub fn memory_hub(config: &ExperimentConfig) -> (Arc<SessionHub>, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(START_MS));
    let mut settings = HubSettings::from(config);
    settings.log_dir = None;
    let hub = SessionHub::new(
        settings,
        backend(config),
        config.orchestrator.clone(),
        clock.clone() as Arc<dyn Clock>,
        sequential_ids("t"),
    );
    (Arc::new(hub), clock)
}

pub fn demographics() -> Value {
    json!({"sex": "Male", "age": 31, "us_born": "no", "ethnicity": "Asian", "education": "College graduate or above"})
}

pub fn donation() -> Value {
    json!({"choice": "Save the Children", "amount": 25})
}

pub fn post_survey() -> Value {
    json!({"likert": {
        "stc_personal": 3, "stc_convincing": 4, "stc_persuasive": 4, "stc_compelling": 5,
        "unicef_personal": 2, "unicef_convincing": 3, "unicef_persuasive": 3, "unicef_compelling": 2
    }})
}

/// Creates a session and submits demographics; the session is in `ChatIntro`.
pub async fn session_in_chat_intro(hub: &SessionHub) -> SessionId {
    use chatroom_core::analysis::SurveyKind;
    let id = hub.create_session().await.unwrap().session_id;
    hub.submit_survey(&id, SurveyKind::Demographics, &demographics()).await.unwrap();
    id
}

pub fn server_schema() -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(SERVER_FRAME_SCHEMA).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

pub fn assert_schema_valid(validator: &jsonschema::Validator, frame: &Value) {
    let errors: Vec<String> = validator.iter_errors(frame).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "frame {frame} violates the schema: {errors:?}");
}

pub fn frame_value(frame: &ServerFrame) -> Value {
    serde_json::to_value(frame).unwrap()
}
