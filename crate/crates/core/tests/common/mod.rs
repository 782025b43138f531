#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use chatroom_core::analysis::LikertItem;
use chatroom_core::model::{
    derive_pattern, AdvanceCause, ChatMessage, Demographics, EventPayload, MeasureDelta, Roster, SessionPhase,
    SessionRecorder, SessionSettings, Speaker, SuppressionReason, TurnPattern,
};
use chatroom_core::persistence::{EventSink, NullSink};
use chatroom_core::{Clock, ManualClock};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn demographics() -> Demographics {
    Demographics {
        sex: "M".into(),
        age: 31,
        us_born: false,
        ethnicity: "Asian".into(),
        education: "College graduate or above".into(),
    }
}

pub fn full_likert(items: &[LikertItem], mut score: impl FnMut(usize) -> u8) -> BTreeMap<String, u8> {
    items
        .iter()
        .enumerate()
        .map(|(i, item)| (item.item_id.clone(), score(i)))
        .collect()
}

pub fn new_recorder(settings: SessionSettings, sink: Box<dyn EventSink>, clock: Arc<dyn Clock>, id: &str) -> SessionRecorder {
    let roster = Roster::charity_default();
    let items = LikertItem::default_set(&roster);
    SessionRecorder::create(id.into(), roster, settings, items, clock, sink).unwrap()
}

/// Records a random but valid walk through a session, directly as events.
/// Stops in a terminal phase or after `max_steps`.
pub fn random_walk(seed: u64, max_steps: usize) -> SessionRecorder {
    let mut rng = StdRng::seed_from_u64(seed);
    let clock = Arc::new(ManualClock::new(1_700_000_000_000));
    let settings = SessionSettings {
        max_turns: rng.random_range(1..=6),
        chat_seconds: rng.random_range(30..=600),
    };
    let mut rec = new_recorder(settings, Box::new(NullSink), clock.clone(), &format!("walk-{seed}"));

    for _ in 0..max_steps {
        clock.advance_ms(rng.random_range(0..5_000));
        let session = rec.session();
        let phase = session.phase;
        if phase.is_terminal() {
            break;
        }
        if rng.random_ratio(1, 25) {
            rec.record(EventPayload::PhaseAdvanced {
                from: phase,
                to: SessionPhase::Aborted,
                cause: AdvanceCause::Abort,
                detail: Some("walk abort".into()),
            })
            .unwrap();
            continue;
        }
        match phase {
            SessionPhase::PreSurvey => {
                rec.record(EventPayload::SurveySubmitted {
                    delta: MeasureDelta::Demographics(demographics()),
                })
                .unwrap();
            }
            SessionPhase::ChatIntro => walk_turn(&mut rec, &mut rng, true),
            SessionPhase::ChatActive => match rng.random_range(0..10) {
                0 => {
                    let deadline = rec.session().timer_deadline_ms.unwrap();
                    rec.record(EventPayload::TimerExpired { deadline_ms: deadline }).unwrap();
                }
                1 => {
                    rec.record(EventPayload::PhaseAdvanced {
                        from: phase,
                        to: SessionPhase::DonationChoice,
                        cause: AdvanceCause::ParticipantNext,
                        detail: None,
                    })
                    .unwrap();
                }
                _ => walk_turn(&mut rec, &mut rng, false),
            },
            SessionPhase::DonationChoice => {
                let orgs = rec.session().roster.organizations();
                let organization = orgs[rng.random_range(0..orgs.len())].clone();
                rec.record(EventPayload::SurveySubmitted {
                    delta: MeasureDelta::Donation {
                        organization,
                        amount: f64::from(rng.random_range(0..5_000u32)),
                    },
                })
                .unwrap();
            }
            SessionPhase::PostSurvey => {
                let likert = full_likert(&rec.session().survey_items, |_| rng.random_range(1..=5));
                rec.record(EventPayload::SurveySubmitted {
                    delta: MeasureDelta::PostSurvey {
                        likert,
                        free_feedback: rng.random_bool(0.5).then(|| "fine".to_owned()),
                    },
                })
                .unwrap();
            }
            SessionPhase::Created | SessionPhase::Completed | SessionPhase::Aborted => unreachable!(),
        }
    }
    rec
}

fn walk_turn(rec: &mut SessionRecorder, rng: &mut StdRng, intro: bool) {
    let turn_index = rec.session().next_turn_index();
    let now = rec.clock().now_ms();
    if !intro {
        let message = ChatMessage::new(
            rec.session().next_message_id(),
            Speaker::Human,
            format!("question {turn_index}"),
            turn_index,
            now,
        )
        .unwrap();
        rec.record(EventPayload::UserMessagePosted { message }).unwrap();
    }
    let bots = rec.session().roster.bot_ids();
    let mut answered = 0;
    for (i, bot) in bots.iter().enumerate() {
        let must_answer = intro && i + 1 == bots.len() && answered == 0;
        if must_answer || rng.random_bool(0.6) {
            let message = ChatMessage::new(
                rec.session().next_message_id(),
                Speaker::Bot(bot.clone()),
                format!("{bot} says something about turn {turn_index}"),
                turn_index,
                now,
            )
            .unwrap();
            rec.record(EventPayload::BotResponseRecorded {
                message,
                latency_ms: rng.random_range(0..500),
                word_limit_violated: false,
            })
            .unwrap();
            answered += 1;
        } else {
            let reason = [SuppressionReason::Blank, SuppressionReason::TimedOut][rng.random_range(0..2)];
            rec.record(EventPayload::BotResponseSuppressed {
                bot_id: bot.clone(),
                turn_index,
                reason,
                raw_text: String::new(),
                latency_ms: 0,
            })
            .unwrap();
            if reason == SuppressionReason::TimedOut {
                rec.record(EventPayload::BackendError {
                    bot_id: bot.clone(),
                    turn_index,
                    detail: "timed out".into(),
                })
                .unwrap();
            }
        }
    }
    let pattern = if intro {
        TurnPattern::Intro
    } else {
        let pending = rec.session().pending_turn().unwrap();
        derive_pattern(&pending.bot_messages, &rec.session().roster).unwrap()
    };
    rec.record(EventPayload::TurnCommitted { turn_index, pattern }).unwrap();
    let session = rec.session();
    if !intro && session.chat_turn_count() >= session.max_turns() as usize {
        rec.record(EventPayload::PhaseAdvanced {
            from: SessionPhase::ChatActive,
            to: SessionPhase::DonationChoice,
            cause: AdvanceCause::MaxTurnsReached,
            detail: None,
        })
        .unwrap();
    }
}

pub const REFERENCE_MESSAGES: [&str; 5] = [
    "I'd like to learn about donating to children's charities",
    "Tell me about the history of Save the Children",
    "How do I make donations to UNICEF?",
    "What about Good Neighbors USA?",
    "How are you guys better than each other?",
];

pub fn reference_backend() -> chatroom_core::backend::ScriptedBackend {
    let script = chatroom_core::backend::load_script(&fixtures_dir().join("reference.script")).unwrap();
    chatroom_core::backend::ScriptedBackend::new(script)
}

/// The reference flow: a full session driven by the orchestrator against
/// the reference script, one simulated second per step.
pub async fn reference_flow(sink: Box<dyn EventSink>, clock: Arc<ManualClock>, id: &str) -> SessionRecorder {
    use chatroom_core::{Orchestrator, OrchestratorConfig};

    let orchestrator = Orchestrator::new(Arc::new(reference_backend()), OrchestratorConfig::default());
    let mut rec = new_recorder(SessionSettings::default(), sink, clock.clone(), id);
    clock.advance_ms(1000);
    rec.record(EventPayload::SurveySubmitted {
        delta: MeasureDelta::Demographics(demographics()),
    })
    .unwrap();
    clock.advance_ms(1000);
    orchestrator.run_intro(&mut rec).await.unwrap();
    for text in REFERENCE_MESSAGES {
        clock.advance_ms(1000);
        orchestrator.run_turn(&mut rec, text).await.unwrap();
    }
    clock.advance_ms(1000);
    rec.record(EventPayload::PhaseAdvanced {
        from: SessionPhase::ChatActive,
        to: SessionPhase::DonationChoice,
        cause: AdvanceCause::ParticipantNext,
        detail: None,
    })
    .unwrap();
    clock.advance_ms(1000);
    rec.record(EventPayload::SurveySubmitted {
        delta: MeasureDelta::Donation {
            organization: "UNICEF".into(),
            amount: 50.0,
        },
    })
    .unwrap();
    clock.advance_ms(1000);
    let likert = full_likert(&rec.session().survey_items, |i| [4, 4, 3, 4, 5, 5, 4, 5][i % 8]);
    rec.record(EventPayload::SurveySubmitted {
        delta: MeasureDelta::PostSurvey {
            likert,
            free_feedback: Some("Both bots were helpful.".into()),
        },
    })
    .unwrap();
    rec
}
