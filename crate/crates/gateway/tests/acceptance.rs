//! Headline checks, one PASS/FAIL line each. Runs without network access,
//! API credentials or a browser client.

mod common;

use std::collections::HashMap;
use std::fs;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, ensure, Context, Result};
use chatroom_core::analysis::{analyze, analyze_sessions, mean_sd, preference_proportions, SdEstimator, SurveyKind};
use chatroom_core::backend::{load_script, DelayedBackend, ScriptedBackend};
use chatroom_core::model::{
    derive_pattern, BotId, Demographics, EventPayload, MeasureDelta, PhaseTrigger, Roster, Session, SessionPhase,
    SessionRecorder, SessionSettings, TurnPattern,
};
use chatroom_core::orchestrator::{is_blank, OutcomeStatus};
use chatroom_core::persistence::{
    export_table, load_sessions, parse_events, read_complete_events, scores_from_csv, EventLog, ExportFormat, NullSink,
};
use chatroom_core::prompt::{build_system_prompt, PromptPolicy};
use chatroom_core::{Clock, ManualClock, Orchestrator, OrchestratorConfig};
use chatroom_gateway::hub::{sequential_ids, HubSettings, SessionHub};
use chatroom_gateway::simulate::{load_transcript, simulate, SimulationReport};
use chatroom_gateway::wire::{ClientFrame, ServerFrame};
use common::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use PhaseTrigger as T;
use SessionPhase as P;

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap()
}

/// Virtual time: sleeps complete instantly once every task is idle.
fn paused_runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .start_paused(true)
        .build()
        .unwrap()
}

fn reference_script_backend() -> ScriptedBackend {
    ScriptedBackend::new(load_script(&fixtures_dir().join("reference.script")).unwrap())
}

fn bot_order(messages: &[chatroom_core::model::ChatMessage]) -> Vec<BotId> {
    messages.iter().filter_map(|m| m.speaker.bot_id().cloned()).collect()
}

// Pattern fidelity

fn pattern_fidelity() -> Result<()> {
    let config = reference_config();
    let run = |cfg: &chatroom_gateway::config::ExperimentConfig| -> Result<SimulationReport> {
        Ok(runtime().block_on(simulate(cfg, backend(cfg), &[reference_participant()], None))?)
    };
    let report = run(&config)?;
    let session = &report.runs[0].session;
    let expected = vec![
        TurnPattern::Intro,
        TurnPattern::Both,
        TurnPattern::Single("stc".into()),
        TurnPattern::Single("unicef".into()),
        TurnPattern::Neither,
        TurnPattern::Both,
    ];
    ensure!(report.runs[0].patterns == expected, "patterns {:?}", report.runs[0].patterns);
    let ranked: Vec<BotId> = vec!["stc".into(), "unicef".into()];
    for turn in session.turns.iter().filter(|t| matches!(t.pattern, TurnPattern::Both | TurnPattern::Intro)) {
        ensure!(bot_order(&turn.bot_messages) == ranked, "turn {} out of order", turn.turn_index);
    }
    let again = run(&config)?;
    ensure!(again.frames_jsonl() == report.frames_jsonl(), "second run differs");
    Ok(())
}

// Ordering invariance

fn ordering_invariance() -> Result<()> {
    paused_runtime().block_on(async {
        let config = reference_config();
        let ranked = config.roster.bot_ids();
        for trial in 0..100u64 {
            let mut rng = StdRng::seed_from_u64(trial);
            let delays: HashMap<String, Duration> = ranked
                .iter()
                .map(|b| (b.to_string(), Duration::from_millis(rng.random_range(0..=500))))
                .collect();
            let backend = DelayedBackend::new(reference_script_backend(), move |r| delays[r.bot_id.as_str()]);
            let mut settings = HubSettings::from(&config);
            settings.log_dir = None;
            let hub = SessionHub::new(
                settings,
                Arc::new(backend),
                config.orchestrator.clone(),
                Arc::new(ManualClock::new(START_MS)) as Arc<dyn Clock>,
                sequential_ids("order"),
            );
            let id = session_in_chat_intro(&hub).await;
            hub.open_chat(&id).await?;
            for text in [
                "I'd like to learn about donating to children's charities",
                "How are you guys better than each other?",
            ] {
                hub.handle_client_frame(&id, ClientFrame::UserMessage { text: text.into() }).await?;
            }
            let session = hub.session(&id).await?;
            ensure!(session.turns.len() == 3, "trial {trial}: {} turns", session.turns.len());
            for turn in &session.turns {
                let order = bot_order(&turn.bot_messages);
                ensure!(order == ranked, "trial {trial} turn {}: {order:?}", turn.turn_index);
            }
        }
        Ok(())
    })
}

// Gating soundness

fn gating_soundness() -> Result<()> {
    runtime().block_on(async {
        let orchestrator = Orchestrator::new(Arc::new(reference_script_backend()), OrchestratorConfig::default());
        let roster = Roster::charity_default();
        let items = chatroom_core::analysis::LikertItem::default_set(&roster);
        let settings = SessionSettings {
            max_turns: 1_000,
            chat_seconds: 600,
        };
        let mut rec = SessionRecorder::create(
            "gating".into(),
            roster.clone(),
            settings,
            items,
            Arc::new(ManualClock::new(START_MS)),
            Box::new(NullSink),
        )?;
        rec.record(EventPayload::SurveySubmitted {
            delta: MeasureDelta::Demographics(Demographics {
                sex: "Female".into(),
                age: 40,
                us_born: true,
                ethnicity: "White".into(),
                education: "Some college".into(),
            }),
        })?;
        orchestrator.run_intro(&mut rec).await?;

        let words = [
            "unicef", "UNICEF", "save", "the", "children", "history", "donate", "donating", "good", "neighbors",
            "weather", "how", "are", "you", "better", "than", "each", "other", "charities", "children's", "null",
            "n/a", "(blank)", "?", "!", "...", "\t", "é",
        ];
        let mut rng = StdRng::seed_from_u64(1_000);
        let mut blank_outcomes = 0;
        for i in 0..1_000 {
            let len = rng.random_range(1..9);
            let mut text: Vec<&str> = (0..len).map(|_| words[rng.random_range(0..words.len())]).collect();
            text.push("q");
            let report = orchestrator
                .run_turn(&mut rec, &text.join(" "))
                .await
                .with_context(|| format!("message {i}"))?;
            let derived = derive_pattern(&report.turn.bot_messages, &roster)?;
            ensure!(derived == report.turn.pattern, "message {i}: pattern disagrees with derive_pattern");
            let responded = report.outcomes.iter().filter(|o| o.status == OutcomeStatus::Responded).count();
            if report.outcomes.iter().any(|o| o.status == OutcomeStatus::Blank) {
                blank_outcomes += 1;
                let expected = match responded {
                    0 => matches!(report.turn.pattern, TurnPattern::Neither),
                    1 => matches!(report.turn.pattern, TurnPattern::Single(_)),
                    _ => false,
                };
                ensure!(expected, "message {i}: blank outcome but pattern {:?}", report.turn.pattern);
            }
        }
        let committed = rec.session().turns.iter().flat_map(|t| &t.bot_messages);
        let mut count = 0;
        for message in committed {
            ensure!(!is_blank(&message.text), "blank message committed: {:?}", message.text);
            count += 1;
        }
        ensure!(blank_outcomes >= 100, "fuzz too tame: {blank_outcomes} blank outcomes");
        ensure!(count > 0, "nothing committed");
        Ok(())
    })
}

// State-machine exhaustiveness

const EDGES: &[(SessionPhase, PhaseTrigger, SessionPhase)] = &[
    (P::Created, T::SessionCreated, P::PreSurvey),
    (P::Created, T::Abort, P::Aborted),
    (P::PreSurvey, T::DemographicsSubmitted, P::ChatIntro),
    (P::PreSurvey, T::Abort, P::Aborted),
    (P::ChatIntro, T::BotResponseRecorded, P::ChatIntro),
    (P::ChatIntro, T::BotResponseSuppressed, P::ChatIntro),
    (P::ChatIntro, T::BackendError, P::ChatIntro),
    (P::ChatIntro, T::IntroCommitted, P::ChatActive),
    (P::ChatIntro, T::Abort, P::Aborted),
    (P::ChatActive, T::UserMessagePosted, P::ChatActive),
    (P::ChatActive, T::BotResponseRecorded, P::ChatActive),
    (P::ChatActive, T::BotResponseSuppressed, P::ChatActive),
    (P::ChatActive, T::BackendError, P::ChatActive),
    (P::ChatActive, T::TurnCommitted, P::ChatActive),
    (P::ChatActive, T::TimerExpired, P::DonationChoice),
    (P::ChatActive, T::MaxTurnsReached, P::DonationChoice),
    (P::ChatActive, T::ParticipantNext, P::DonationChoice),
    (P::ChatActive, T::Abort, P::Aborted),
    (P::DonationChoice, T::DonationSubmitted, P::PostSurvey),
    (P::DonationChoice, T::Abort, P::Aborted),
    (P::PostSurvey, T::PostSurveySubmitted, P::Completed),
    (P::PostSurvey, T::Abort, P::Aborted),
];

fn edge(phase: SessionPhase, trigger: PhaseTrigger) -> Option<SessionPhase> {
    EDGES.iter().find(|(p, t, _)| *p == phase && *t == trigger).map(|(_, _, to)| *to)
}

/// Drives one session through the hub with random participant actions.
async fn random_walk(hub: &SessionHub, clock: &ManualClock, rng: &mut StdRng) -> Result<chatroom_core::model::SessionId> {
    let messages = [
        "How do I donate to UNICEF?",
        "Tell me about the history of Save the Children",
        "What about Good Neighbors USA?",
        "How are you guys better than each other?",
        "I'd like to learn about donating to children's charities",
        "hmm",
    ];
    let id = hub.create_session().await?.session_id;
    for _ in 0..rng.random_range(1..40) {
        clock.advance_ms(rng.random_range(0..120_000));
        let phase = hub.session(&id).await?.phase;
        if phase.is_terminal() {
            break;
        }
        match rng.random_range(0..100) {
            0..2 => hub.abort(&id, "walk").await?,
            2..8 => {
                let kind = [SurveyKind::Demographics, SurveyKind::Donation, SurveyKind::PostSurvey][rng.random_range(0..3)];
                let _ = hub.submit_survey(&id, kind, &demographics()).await;
            }
            8..20 => {
                hub.open_chat(&id).await?;
            }
            20..25 => {
                hub.handle_client_frame(&id, ClientFrame::Next).await?;
            }
            25..30 => {
                hub.handle_client_frame(&id, ClientFrame::Heartbeat).await?;
            }
            30..60 => {
                let text = messages[rng.random_range(0..messages.len())];
                hub.handle_client_frame(&id, ClientFrame::UserMessage { text: text.into() }).await?;
            }
            _ => {
                let payload = match phase {
                    P::PreSurvey => Some((SurveyKind::Demographics, demographics())),
                    P::DonationChoice => Some((SurveyKind::Donation, donation())),
                    P::PostSurvey => Some((SurveyKind::PostSurvey, post_survey())),
                    _ => None,
                };
                if let Some((kind, payload)) = payload {
                    hub.submit_survey(&id, kind, &payload).await?;
                } else if phase == P::ChatIntro {
                    hub.open_chat(&id).await?;
                }
            }
        }
    }
    Ok(id)
}

fn state_machine() -> Result<()> {
    let mut accepted = 0;
    for phase in SessionPhase::ALL {
        for trigger in PhaseTrigger::ALL {
            let actual = chatroom_core::model::transition(phase, trigger).ok();
            ensure!(actual == edge(phase, trigger), "({phase:?}, {trigger:?}) gives {actual:?}");
            accepted += usize::from(actual.is_some());
        }
    }
    ensure!(accepted == EDGES.len(), "{accepted} edges accepted");

    runtime().block_on(async {
        let mut config = reference_config();
        config.settings.max_turns = 4;
        config.capacity = 1_000;
        let (hub, clock) = memory_hub(&config);
        let mut rng = StdRng::seed_from_u64(200);
        let mut phases = std::collections::BTreeSet::new();
        for walk in 0..200 {
            let id = random_walk(&hub, &clock, &mut rng).await?;
            let live = hub.session(&id).await?;
            let events = hub.events(&id).await?;

            let mut phase = P::Created;
            for event in &events {
                phase = edge(phase, event.payload.trigger())
                    .ok_or_else(|| anyhow!("walk {walk}: {} not allowed in {phase:?}", event.payload.kind()))?;
            }
            ensure!(phase == live.phase, "walk {walk}: table walk ends in {phase:?}, session in {:?}", live.phase);

            let text: String = events.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
            let replayed = Session::replay(&parse_events(&text)?)?;
            ensure!(replayed == live, "walk {walk}: replay differs");
            ensure!(Session::replay(&events)? == replayed, "walk {walk}: replay not deterministic");
            phases.insert(live.phase.as_str());
        }
        ensure!(phases.len() >= 4, "walks too shallow: {phases:?}");
        Ok(())
    })
}

// Statistics oracle

fn two_pass(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let squares: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, Some((squares / (n - 1.0)).sqrt()))
}

/// Sample statistics of the 20-participant cohort, computed independently
/// with Python's `statistics` module: (mean, stdev) per bot.
const COHORT_RELEVANCE: [(&str, f64, f64); 2] = [("stc", 3.5, 1.1920791213585393), ("unicef", 2.9, 1.2523661815266247)];
const COHORT_COMPOSITE: [(&str, f64, f64); 2] = [
    ("stc", 3.1333333333333333, 0.6613825674938789),
    ("unicef", 2.8166666666666664, 0.7759167375599851),
];

fn statistics() -> Result<()> {
    let mut rng = StdRng::seed_from_u64(0x0dd5);
    for i in 0..1_000 {
        let len = rng.random_range(1..300);
        let values: Vec<f64> = (0..len).map(|_| rng.random_range(-1e4..1e4)).collect();
        let summary = mean_sd(&values)?;
        let (mean, sd) = two_pass(&values);
        ensure!((summary.mean - mean).abs() <= 1e-9, "vector {i}: mean");
        match (summary.sd, sd) {
            (Some(a), Some(b)) => ensure!((a - b).abs() <= 1e-9, "vector {i}: sd {a} vs {b}"),
            (None, None) => {}
            other => return Err(anyhow!("vector {i}: sd presence {other:?}")),
        }

        let orgs = ["A", "B", "C"];
        let choices: Vec<&str> = (0..len).map(|_| orgs[rng.random_range(0..3)]).collect();
        let shares = preference_proportions::<f64, _, _>(&choices, &orgs)?;
        let total: f64 = shares.iter().map(|(_, _, p)| p).sum();
        ensure!((total - 1.0).abs() <= 1e-12, "vector {i}: proportions sum to {total}");
    }

    let config = reference_config();
    let participants = load_transcript(&fixtures_dir().join("cohort20.transcript.json"))?;
    let report = runtime().block_on(simulate(&config, backend(&config), &participants, None))?;
    let analysis = analyze_sessions(&report.sessions(), SdEstimator::Sample)?;
    ensure!(analysis.participants == 20, "{} participants", analysis.participants);
    let shares: Vec<(&str, usize, f64)> = analysis
        .preferences
        .iter()
        .map(|p| (p.organization.as_str(), p.count, p.proportion))
        .collect();
    ensure!(shares.len() == 2, "{shares:?}");
    ensure!(shares[0].0 == "Save the Children" && shares[0].1 == 6 && (shares[0].2 - 0.30).abs() < 1e-12, "{shares:?}");
    ensure!(shares[1].0 == "UNICEF" && shares[1].1 == 14 && (shares[1].2 - 0.70).abs() < 1e-12, "{shares:?}");
    let ranges: Vec<(&str, Option<(f64, f64)>)> = analysis
        .donation_ranges
        .iter()
        .map(|r| (r.organization.as_str(), r.range))
        .collect();
    ensure!(
        ranges == [("Save the Children", Some((5.0, 1000.0))), ("UNICEF", Some((0.0, 5000.0)))],
        "{ranges:?}"
    );
    for bot in &analysis.bots {
        for (table, summary) in [(COHORT_RELEVANCE, &bot.relevance), (COHORT_COMPOSITE, &bot.composite)] {
            let (_, mean, sd) = table.iter().find(|(b, _, _)| *b == bot.bot_id.as_str()).context("bot")?;
            let s = summary.as_ref().context("summary")?;
            ensure!((s.mean - mean).abs() <= 1e-9, "{}: mean {} vs {mean}", bot.bot_id, s.mean);
            ensure!((s.sd.context("sd")? - sd).abs() <= 1e-9, "{}: sd", bot.bot_id);
        }
    }
    Ok(())
}

// Prompt checklist

/// The stock prompt for the Save the Children bot, line by line.
const PROMPT_LINES: [&str; 9] = [
    "You are a highly reliable and excellent representative from the Save the Children organization. Your primary goal is to persuade and make the person that talks to you to donate to your organization, Save the Children.",
    "There are a total of 3 agents in a chat room: one is you, one is another representative chatbot from UNICEF, and one is a human user who could be a potential donor. Your goal is to persuade the human user to donate to your organization. On average, you are expected to chat with the human user for 10 turns.",
    "During the chat, please follow the instructions:",
    "- Limit the response to 50 words.",
    "- Wait for the user's response before moving on.",
    "- When you initiate the conversation, introduce yourself as a representative of Save the Children.",
    "- Whenever necessary, use the following appeals to promote donation to Save the Children: 1) talking about the history of Save the Children charity, 2) talk about the mission of Save the Children, 3) talk about ways to donate to the Save the Children charity. Feel free to use statistics, narratives, as well as emotional appeals.",
    "- If the user's question is not relevant to Save the Children charity, respond with null/blank. For example, if the user asks about how to make donations to UNICEF, do not respond because it is not relevant to Save the Children charity.",
    "There are a total of 3 agents in a chat room",
];

fn prompt_checklist() -> Result<()> {
    let roster = Roster::charity_default();
    let policy = PromptPolicy::default();
    for persona in roster.personas() {
        let prompt = build_system_prompt(persona, &roster, &policy)?;
        let lines: Vec<&str> = prompt.lines().collect();
        for expected in PROMPT_LINES {
            // The UNICEF prompt is the same text with the organizations swapped.
            let expected = if persona.bot_id.as_str() == "unicef" {
                expected
                    .replace("Save the Children", "\u{0}")
                    .replace("UNICEF", "Save the Children")
                    .replace('\u{0}', "UNICEF")
            } else {
                expected.to_owned()
            };
            let present = lines.contains(&expected.as_str()) || prompt.contains(&expected);
            ensure!(present, "{} prompt lacks {expected:?}", persona.bot_id);
        }
        ensure!(lines.contains(&"- Limit the response to 50 words."), "word limit line");
    }
    Ok(())
}

// Wire conformance

fn wire_conformance() -> Result<()> {
    let validator = server_schema();
    let config = reference_config();
    let reference = runtime().block_on(simulate(&config, backend(&config), &[reference_participant()], None))?;
    let golden = fs::read_to_string(fixtures_dir().join("golden/reference.frames.jsonl"))?;
    ensure!(reference.frames_jsonl() == golden, "frame transcript differs from the golden file");

    let participants = load_transcript(&fixtures_dir().join("cohort20.transcript.json"))?;
    let cohort = runtime().block_on(simulate(&config, backend(&config), &participants, None))?;
    let mut checked = 0;
    for frame in reference.runs.iter().chain(&cohort.runs).flat_map(|r| &r.frames) {
        let value: Value = serde_json::to_value(frame)?;
        let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
        ensure!(errors.is_empty(), "{value} violates the schema: {errors:?}");
        let back: ServerFrame = serde_json::from_value(value)?;
        ensure!(&back == frame, "frame does not round-trip");
        checked += 1;
    }
    ensure!(checked > 100, "only {checked} frames checked");
    Ok(())
}

// Persistence

fn persistence() -> Result<()> {
    let out = tempfile::tempdir()?;
    let config = reference_config();
    let participants = load_transcript(&fixtures_dir().join("cohort20.transcript.json"))?;
    runtime().block_on(simulate(&config, backend(&config), &participants, Some(out.path())))?;

    let loaded = load_sessions(out.path())?;
    ensure!(loaded.sessions.len() == 20 && loaded.skipped.is_empty(), "loaded {}", loaded.sessions.len());
    let via_replay = analyze_sessions(&loaded.sessions, SdEstimator::Sample)?;
    let csv = export_table(&loaded.sessions, ExportFormat::Csv);
    let (bots, rows) = scores_from_csv(&csv)?;
    let orgs = config.roster.organizations();
    let via_export = analyze(&rows, &bots, &orgs, SdEstimator::Sample)?;
    ensure!(via_export == via_replay, "export->analyze differs from replay->analyze");

    let id = loaded.sessions[0].session_id.clone();
    let path = EventLog::session_path(out.path(), &id);
    let full = fs::read_to_string(&path)?;
    let records = full.lines().count();
    let cut = full.len() - full.lines().last().unwrap().len() / 2 - 1;
    fs::write(&path, &full[..cut])?;
    let (events, torn) = read_complete_events(&path)?;
    ensure!(torn.is_some(), "torn tail not reported");
    ensure!(events.len() == records - 1, "recovered {} of {} complete records", events.len(), records - 1);
    let all = parse_events(&full)?;
    ensure!(events[..] == all[..records - 1], "recovered records differ");
    let prefix = Session::replay(&events)?;
    ensure!(prefix == Session::replay(&all[..records - 1])?, "prefix replay differs");
    let reloaded = load_sessions(out.path())?;
    ensure!(reloaded.sessions.len() == 20, "torn log dropped a session");
    Ok(())
}

type Check = fn() -> Result<()>;

fn main() -> ExitCode {
    let checks: [(&str, Duration, Check); 8] = [
        ("pattern fidelity", Duration::from_secs(1), pattern_fidelity),
        ("ordering invariance", Duration::from_secs(10), ordering_invariance),
        ("gating soundness", Duration::from_secs(10), gating_soundness),
        ("state-machine exhaustiveness", Duration::from_secs(5), state_machine),
        ("statistics oracle", Duration::from_secs(5), statistics),
        ("prompt checklist", Duration::from_secs(1), prompt_checklist),
        ("wire conformance", Duration::from_secs(5), wire_conformance),
        ("persistence", Duration::from_secs(5), persistence),
    ];
    let mut failed = 0;
    for (name, budget, check) in checks {
        let started = Instant::now();
        let result = check();
        let elapsed = started.elapsed();
        let verdict = match result {
            Ok(()) if elapsed <= budget => Ok(()),
            Ok(()) => Err(format!("took {elapsed:.2?}, budget {budget:?}")),
            Err(e) => Err(format!("{e:#}")),
        };
        match verdict {
            Ok(()) => println!("PASS {name} ({elapsed:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
