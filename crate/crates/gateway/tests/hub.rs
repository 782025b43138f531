mod common;

use std::sync::Arc;

use chatroom_core::analysis::{SurveyError, SurveyKind};
use chatroom_core::model::{EventPayload, Session, SessionPhase, TurnPattern};
use chatroom_core::persistence::{replay_file, EventLog, ExportFormat};
use chatroom_core::{Clock, ManualClock};
use chatroom_gateway::hub::{seconds_remaining, sequential_ids, tick_timer, HubError, HubSettings, SessionHub};
use chatroom_gateway::wire::{ClientFrame, ServerFrame, WireBotMessage};
use common::*;
use serde_json::json;

fn user(text: &str) -> ClientFrame {
    ClientFrame::UserMessage { text: text.into() }
}

fn phase_of(frame: &ServerFrame) -> Option<SessionPhase> {
    match frame {
        ServerFrame::Phase { phase, .. } => Some(*phase),
        _ => None,
    }
}

async fn chat_active(hub: &SessionHub) -> chatroom_core::model::SessionId {
    let id = session_in_chat_intro(hub).await;
    hub.open_chat(&id).await.unwrap();
    id
}

#[tokio::test]
async fn created_sessions_start_in_pre_survey_with_distinct_ids() {
    let (hub, _) = memory_hub(&reference_config());
    let a = hub.create_session().await.unwrap();
    let b = hub.create_session().await.unwrap();
    assert_ne!(a.session_id, b.session_id);
    match &a.frame {
        ServerFrame::Phase { phase, form, .. } => {
            assert_eq!(*phase, SessionPhase::PreSurvey);
            assert_eq!(form.as_ref().unwrap().survey, SurveyKind::Demographics);
        }
        other => panic!("expected a phase frame, got {other:?}"),
    }
}

#[tokio::test]
async fn created_session_replays_to_pre_survey() {
    let dir = tempfile::tempdir().unwrap();
    let config = reference_config();
    let mut settings = HubSettings::from(&config);
    settings.log_dir = Some(dir.path().to_owned());
    let hub = SessionHub::new(
        settings,
        backend(&config),
        config.orchestrator.clone(),
        Arc::new(ManualClock::new(START_MS)) as Arc<dyn Clock>,
        sequential_ids("r"),
    );
    let id = hub.create_session().await.unwrap().session_id;
    let replayed = replay_file(&EventLog::session_path(dir.path(), &id), &id).unwrap();
    assert_eq!(replayed.phase, SessionPhase::PreSurvey);
    assert_eq!(replayed, hub.session(&id).await.unwrap());
}

#[tokio::test]
async fn capacity_counts_unfinished_sessions() {
    let mut config = reference_config();
    config.capacity = 2;
    let (hub, _) = memory_hub(&config);
    let first = hub.create_session().await.unwrap().session_id;
    hub.create_session().await.unwrap();
    assert!(matches!(hub.create_session().await, Err(HubError::CapacityExceeded(2))));

    hub.abort(&first, "participant left").await.unwrap();
    assert_eq!(hub.session(&first).await.unwrap().phase, SessionPhase::Aborted);
    assert_eq!(hub.active_sessions().len(), 1);
    hub.create_session().await.unwrap();
}

#[tokio::test]
async fn survey_errors_are_typed() {
    let (hub, _) = memory_hub(&reference_config());
    let id = hub.create_session().await.unwrap().session_id;

    let wrong = hub.submit_survey(&id, SurveyKind::Donation, &donation()).await;
    assert!(matches!(wrong, Err(HubError::Survey(SurveyError::WrongPhase { .. }))));

    let mut payload = demographics();
    payload["shoe_size"] = json!(9);
    let unknown = hub.submit_survey(&id, SurveyKind::Demographics, &payload).await;
    assert!(matches!(unknown, Err(HubError::Survey(SurveyError::UnknownField(f))) if f == "shoe_size"));

    let missing = chatroom_core::model::SessionId::new("nope");
    assert!(matches!(
        hub.submit_survey(&missing, SurveyKind::Demographics, &demographics()).await,
        Err(HubError::NotFound(_))
    ));
    assert_eq!(hub.session(&id).await.unwrap().phase, SessionPhase::PreSurvey);
}

#[tokio::test]
async fn demographics_lead_to_chat_intro_with_instructions() {
    let config = reference_config();
    let (hub, _) = memory_hub(&config);
    let id = hub.create_session().await.unwrap().session_id;
    let frame = hub.submit_survey(&id, SurveyKind::Demographics, &demographics()).await.unwrap();
    assert_eq!(
        frame,
        ServerFrame::Phase {
            phase: SessionPhase::ChatIntro,
            form: None,
            instruction_text: Some(config.instruction_text.clone()),
        }
    );
}

#[tokio::test]
async fn opening_the_chat_runs_the_intro_once() {
    let (hub, _) = memory_hub(&reference_config());
    let id = session_in_chat_intro(&hub).await;
    let frames = hub.open_chat(&id).await.unwrap();
    assert_eq!(phase_of(&frames[0]), Some(SessionPhase::ChatActive));
    match &frames[1] {
        ServerFrame::Turn { turn_index, pattern, messages } => {
            assert_eq!((*turn_index, pattern.as_str()), (0, "intro"));
            let ids: Vec<&str> = messages.iter().map(|m| m.bot_id.as_str()).collect();
            assert_eq!(ids, ["stc", "unicef"]);
        }
        other => panic!("expected the intro turn, got {other:?}"),
    }
    assert_eq!(frames.len(), 2);

    hub.handle_client_frame(&id, user("How do I make donations to UNICEF?")).await.unwrap();
    // Reconnect: same phase, every committed turn resent, no new intro.
    let again = hub.open_chat(&id).await.unwrap();
    assert_eq!(again.len(), 3);
    assert_eq!(hub.session(&id).await.unwrap().turns.len(), 2);
}

#[tokio::test]
async fn unicef_question_gets_a_single_unicef_turn() {
    let config = reference_config();
    let (hub, _) = memory_hub(&config);
    let id = chat_active(&hub).await;
    let frames = hub.handle_client_frame(&id, user("How do I donate to UNICEF?")).await.unwrap();
    assert_eq!(frames.len(), 1);
    let unicef = config.roster.persona(&"unicef".into()).unwrap();
    assert_eq!(
        frames[0],
        ServerFrame::Turn {
            turn_index: 1,
            pattern: "single".into(),
            messages: vec![WireBotMessage {
                bot_id: unicef.bot_id.clone(),
                organization_name: "UNICEF".into(),
                display_color: unicef.display_color.clone(),
                text: "You can donate to UNICEF online at unicefusa.org with a one-time or monthly gift. Every dollar goes toward vaccines, clean water, nutrition, and education for children in need.".into(),
            }],
        }
    );
}

#[tokio::test]
async fn next_moves_the_chat_to_donation_choice() {
    let (hub, _) = memory_hub(&reference_config());
    let id = chat_active(&hub).await;
    let frames = hub.handle_client_frame(&id, ClientFrame::Next).await.unwrap();
    match &frames[..] {
        [ServerFrame::Phase { phase, form: Some(form), instruction_text: None }] => {
            assert_eq!(*phase, SessionPhase::DonationChoice);
            assert_eq!(form.survey, SurveyKind::Donation);
        }
        other => panic!("unexpected frames {other:?}"),
    }
    let events = hub.events(&id).await.unwrap();
    assert!(matches!(
        events.last().unwrap().payload,
        EventPayload::PhaseAdvanced { cause: chatroom_core::model::AdvanceCause::ParticipantNext, .. }
    ));
}

#[tokio::test]
async fn frames_outside_the_chat_are_phase_errors() {
    let (hub, _) = memory_hub(&reference_config());
    let id = hub.create_session().await.unwrap().session_id;
    for frame in [ClientFrame::Next, user("hello")] {
        let out = hub.handle_client_frame(&id, frame).await.unwrap();
        assert!(matches!(&out[..], [ServerFrame::PhaseError { .. }]), "{out:?}");
    }
    assert_eq!(hub.events(&id).await.unwrap().len(), 1);

    let id = chat_active(&hub).await;
    hub.handle_client_frame(&id, ClientFrame::Next).await.unwrap();
    let out = hub.handle_client_frame(&id, user("one more thing")).await.unwrap();
    assert!(matches!(&out[..], [ServerFrame::PhaseError { .. }]));
}

#[tokio::test]
async fn blank_text_that_reaches_the_hub_is_a_protocol_error() {
    let (hub, _) = memory_hub(&reference_config());
    let id = chat_active(&hub).await;
    let before = hub.events(&id).await.unwrap().len();
    let out = hub.handle_client_frame(&id, user("   ")).await.unwrap();
    assert!(matches!(&out[..], [ServerFrame::ProtocolError { .. }]));
    assert_eq!(hub.events(&id).await.unwrap().len(), before);
}

#[tokio::test]
async fn heartbeat_reports_whole_seconds_left() {
    let (hub, clock) = memory_hub(&reference_config());
    let id = chat_active(&hub).await;
    let out = hub.handle_client_frame(&id, ClientFrame::Heartbeat).await.unwrap();
    assert_eq!(out, [ServerFrame::Timer { seconds_remaining: 600 }]);
    clock.advance_ms(1);
    let out = hub.handle_client_frame(&id, ClientFrame::Heartbeat).await.unwrap();
    assert_eq!(out, [ServerFrame::Timer { seconds_remaining: 600 }]);
    clock.advance_ms(598_999);
    let out = hub.handle_client_frame(&id, ClientFrame::Heartbeat).await.unwrap();
    assert_eq!(out, [ServerFrame::Timer { seconds_remaining: 1 }]);
    clock.advance_ms(1_000);
    let out = hub.handle_client_frame(&id, ClientFrame::Heartbeat).await.unwrap();
    assert_eq!(phase_of(&out[0]), Some(SessionPhase::DonationChoice));
}

#[tokio::test]
async fn timer_fires_at_the_deadline_exactly_once() {
    let (hub, clock) = memory_hub(&reference_config());
    let id = chat_active(&hub).await;
    let deadline = hub.session(&id).await.unwrap().timer_deadline_ms.unwrap();
    assert_eq!(deadline, START_MS + 600_000);

    clock.set(deadline - 1);
    assert_eq!(hub.tick(&id).await.unwrap(), None);
    clock.set(deadline);
    let fired = hub.tick(&id).await.unwrap().unwrap();
    assert_eq!(phase_of(&fired), Some(SessionPhase::DonationChoice));
    clock.set(deadline + 5_000);
    assert_eq!(hub.tick(&id).await.unwrap(), None);

    let expiries = hub
        .events(&id)
        .await
        .unwrap()
        .iter()
        .filter(|e| matches!(e.payload, EventPayload::TimerExpired { .. }))
        .count();
    assert_eq!(expiries, 1);
}

#[tokio::test]
async fn tick_timer_on_a_recorder() {
    use chatroom_core::model::SessionRecorder;
    use chatroom_core::persistence::NullSink;

    let config = reference_config();
    let clock = Arc::new(ManualClock::new(START_MS));
    let mut rec = SessionRecorder::create(
        "tick".into(),
        config.roster.clone(),
        config.settings,
        config.survey_items.clone(),
        clock.clone(),
        Box::new(NullSink),
    )
    .unwrap();
    // Outside the chat there is no deadline to hit.
    assert_eq!(tick_timer(&mut rec, i64::MAX).unwrap(), None);

    let orchestrator = chatroom_core::Orchestrator::new(backend(&config), config.orchestrator.clone());
    rec.record(EventPayload::SurveySubmitted {
        delta: chatroom_core::model::MeasureDelta::Demographics(serde_json::from_value(demographics_typed()).unwrap()),
    })
    .unwrap();
    orchestrator.run_intro(&mut rec).await.unwrap();
    let deadline = rec.session().timer_deadline_ms.unwrap();
    assert_eq!(seconds_remaining(rec.session(), deadline - 1_500), 2);
    assert_eq!(tick_timer(&mut rec, deadline - 1).unwrap(), None);
    assert_eq!(tick_timer(&mut rec, deadline).unwrap(), Some(deadline));
    assert_eq!(tick_timer(&mut rec, deadline + 1).unwrap(), None);
    assert_eq!(rec.session().phase, SessionPhase::DonationChoice);
    assert_eq!(seconds_remaining(rec.session(), deadline - 1_500), 0);
}

fn demographics_typed() -> serde_json::Value {
    json!({"sex": "Male", "age": 31, "us_born": false, "ethnicity": "Asian", "education": "College graduate or above"})
}

#[tokio::test]
async fn message_after_the_deadline_closes_the_chat_instead() {
    let (hub, clock) = memory_hub(&reference_config());
    let id = chat_active(&hub).await;
    clock.advance_ms(600_000);
    let out = hub.handle_client_frame(&id, user("How do I donate to UNICEF?")).await.unwrap();
    assert_eq!(phase_of(&out[0]), Some(SessionPhase::DonationChoice));
    let session = hub.session(&id).await.unwrap();
    assert_eq!(session.turns.len(), 1);
}

#[tokio::test]
async fn next_beats_a_due_timer() {
    let (hub, clock) = memory_hub(&reference_config());
    let id = chat_active(&hub).await;
    clock.advance_ms(700_000);
    hub.handle_client_frame(&id, ClientFrame::Next).await.unwrap();
    let events = hub.events(&id).await.unwrap();
    assert!(events.iter().all(|e| !matches!(e.payload, EventPayload::TimerExpired { .. })));
    assert_eq!(hub.tick(&id).await.unwrap(), None);
}

#[tokio::test]
async fn the_last_allowed_turn_closes_the_chat() {
    let mut config = reference_config();
    config.settings.max_turns = 2;
    let (hub, _) = memory_hub(&config);
    let id = chat_active(&hub).await;
    let out = hub.handle_client_frame(&id, user("How do I donate to UNICEF?")).await.unwrap();
    assert_eq!(out.len(), 1);
    let out = hub.handle_client_frame(&id, user("Tell me about the history of Save the Children")).await.unwrap();
    assert!(matches!(out[0], ServerFrame::Turn { turn_index: 2, .. }));
    assert_eq!(phase_of(&out[1]), Some(SessionPhase::DonationChoice));
}

#[tokio::test]
async fn concurrent_frames_for_one_session_are_serialized() {
    let mut config = reference_config();
    config.settings.max_turns = 100;
    let (hub, _) = memory_hub(&config);
    let id = chat_active(&hub).await;
    let mut tasks = Vec::new();
    for i in 0..24 {
        let hub = hub.clone();
        let id = id.clone();
        tasks.push(tokio::spawn(async move {
            let frame = if i % 3 == 0 { ClientFrame::Heartbeat } else { user("How do I donate to UNICEF?") };
            hub.handle_client_frame(&id, frame).await.unwrap()
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let session = hub.session(&id).await.unwrap();
    assert_eq!(session.turns.len(), 1 + 16);
    let indices: Vec<u32> = session.turns.iter().map(|t| t.turn_index).collect();
    assert_eq!(indices, (0..17).collect::<Vec<_>>());
    assert_eq!(Session::replay(&hub.events(&id).await.unwrap()).unwrap(), session);
}

#[tokio::test]
async fn single_chat_connection_per_session() {
    let (hub, _) = memory_hub(&reference_config());
    let id = hub.create_session().await.unwrap().session_id;
    let first = hub.attach(&id).unwrap();
    assert!(matches!(hub.attach(&id), Err(HubError::AlreadyAttached(_))));
    drop(first);
    let _again = hub.attach(&id).unwrap();
    assert!(matches!(hub.attach(&"missing".into()), Err(HubError::NotFound(_))));
}

#[tokio::test]
async fn completed_session_exports_one_row() {
    let (hub, _) = memory_hub(&reference_config());
    let id = chat_active(&hub).await;
    hub.handle_client_frame(&id, user("How do I donate to UNICEF?")).await.unwrap();
    hub.handle_client_frame(&id, ClientFrame::Next).await.unwrap();
    hub.submit_survey(&id, SurveyKind::Donation, &donation()).await.unwrap();
    let before = hub.export(&id, ExportFormat::Csv).await.unwrap();
    let rows: Vec<&str> = before.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1, "header only until completed");
    assert!(before.contains("# summary"));
    let done = hub.submit_survey(&id, SurveyKind::PostSurvey, &post_survey()).await.unwrap();
    assert_eq!(phase_of(&done), Some(SessionPhase::Completed));
    let csv = hub.export(&id, ExportFormat::Csv).await.unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.starts_with(&format!("{id},Male,31,No,Asian,College graduate or above,Save the Children,25")));
    assert!(hub.active_sessions().is_empty());

    let session = hub.session(&id).await.unwrap();
    assert_eq!(
        session.turns.iter().map(|t| t.pattern.clone()).collect::<Vec<_>>(),
        [TurnPattern::Intro, TurnPattern::Single("unicef".into())]
    );
}
