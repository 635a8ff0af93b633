use std::time::Duration;

use steerlab_core::dynamics::DriverCommand;
use steerlab_core::ControlMode;
use steerlab_harness::record::RecordStatus;
use steerlab_harness::rollout::run_with_driver;
use steerlab_harness::{InputSource, ReplayDriver, ScenarioConfig, TrajectoryRecord};
use steerlab_session::{
    host_session, ClientIo, ClientMessage, ErrorCode, InputRange, ServerMessage, SessionError, SessionIo,
    SessionOptions, PROTOCOL_VERSION,
};
use tokio::time::Instant;

const RANGE: InputRange = InputRange { steering: 1.0, accel: 1.0, rate_hz: Some(60.0) };

fn hello() -> ClientMessage {
    ClientMessage::Hello { version: PROTOCOL_VERSION, client: Some("script".into()), input_range: RANGE }
}

fn input(seq: u64, steering: f64, accel: f64) -> ClientMessage {
    ClientMessage::Input { seq, client_time_ms: None, steering, accel }
}

fn script(n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|k| (0.02 * (k as f64 * 0.05).sin(), 0.05 * (k as f64 * 0.02).cos())).collect()
}

/// Sends the input for step k+1 as soon as the frame for step k arrives.
async fn scripted_client(mut io: ClientIo, inputs: Vec<(f64, f64)>) -> Vec<(Instant, ServerMessage)> {
    io.tx.send(hello()).await.unwrap();
    io.tx.send(input(0, inputs[0].0, inputs[0].1)).await.unwrap();
    let mut seen = Vec::new();
    while let Some(msg) = io.rx.recv().await {
        if let ServerMessage::StateFrame(f) = &msg {
            if let Some((s, a)) = inputs.get(f.step + 1) {
                io.tx.send(input(f.step as u64 + 1, *s, *a)).await.unwrap();
            }
        }
        let done = matches!(msg, ServerMessage::Summary(_));
        seen.push((Instant::now(), msg));
        if done {
            break;
        }
    }
    seen
}

fn frames(msgs: &[(Instant, ServerMessage)]) -> Vec<(Instant, steerlab_session::StateFrame)> {
    msgs.iter()
        .filter_map(|(t, m)| match m {
            ServerMessage::StateFrame(f) => Some((*t, f.clone())),
            _ => None,
        })
        .collect()
}

async fn run(config: &ScenarioConfig, inputs: Vec<(f64, f64)>) -> (TrajectoryRecord, Vec<(Instant, ServerMessage)>) {
    let (io, client) = SessionIo::pair();
    let options = SessionOptions::new("test", config);
    let (outcome, msgs) = tokio::join!(host_session(config, io, options), scripted_client(client, inputs));
    (outcome.unwrap().record, msgs)
}

fn offline(config: &ScenarioConfig, inputs: &[(f64, f64)]) -> TrajectoryRecord {
    let commands = inputs.iter().map(|(s, a)| RANGE.normalize(*s, *a, &config.vehicle)).collect();
    let mut record = run_with_driver(config, &mut ReplayDriver::new(commands)).unwrap();
    record.header.trajectory_id = "test".into();
    record
}

#[tokio::test(start_paused = true)]
async fn human_session_matches_offline_rollout() {
    let config = ScenarioConfig::default();
    let inputs = script(300);
    let (record, msgs) = run(&config, inputs.clone()).await;
    assert_eq!(frames(&msgs).len(), 300);
    assert_eq!(record.header.status, RecordStatus::Complete);
    assert!(record.rows.iter().all(|r| !r.stale));
    assert_eq!(record, offline(&config, &inputs));
}

#[tokio::test(start_paused = true)]
async fn autonomy_session_never_applies_driver_input() {
    let config = ScenarioConfig::default().with_mode(ControlMode::AutonomyInControl).with_seed(3);
    let inputs = script(300);
    let (record, msgs) = run(&config, inputs.clone()).await;
    let frames = frames(&msgs);
    assert_eq!(frames.len(), 300);
    for (_, f) in &frames {
        assert_eq!(f.source, InputSource::Autonomy);
        assert_eq!(f.mode, ControlMode::AutonomyInControl);
        assert!(f.weights.is_some());
    }
    assert!(record.rows.iter().all(|r| r.source == InputSource::Autonomy));
    assert!(record.rows.iter().filter(|r| r.applied != r.driver).count() > 290);
    assert_eq!(record, offline(&config, &inputs));
    match &msgs.last().unwrap().1 {
        ServerMessage::Summary(s) => assert_eq!(s.mode, ControlMode::AutonomyInControl),
        other => panic!("expected summary, got {other:?}"),
    }
}

#[tokio::test(start_paused = true)]
async fn frames_follow_the_tick_schedule() {
    let config = ScenarioConfig { duration: 5.0, ..Default::default() };
    let (_, msgs) = run(&config, script(50)).await;
    let frames = frames(&msgs);
    for (k, pair) in frames.windows(2).enumerate() {
        assert_eq!(pair[1].0 - pair[0].0, Duration::from_millis(100), "gap after frame {k}");
        assert_eq!(pair[1].1.step, pair[0].1.step + 1);
    }
}

#[tokio::test(start_paused = true)]
async fn silent_client_gets_zero_hold_and_stale_flags() {
    let config = ScenarioConfig { duration: 2.0, ..Default::default() };
    let (io, mut client) = SessionIo::pair();
    client.tx.send(hello()).await.unwrap();
    let outcome = host_session(&config, io, SessionOptions::new("quiet", &config)).await.unwrap();
    let record = outcome.record;
    assert_eq!(record.len(), 20);
    assert!(record.rows.iter().all(|r| r.driver == DriverCommand::zero() && r.applied == DriverCommand::zero()));
    let stale: Vec<bool> = record.rows.iter().map(|r| r.stale).collect();
    assert!(!stale[5] && stale[6] && stale[19]);
    assert_eq!(outcome.summary.stale_steps, 14);
    // Zero steering from an offset start keeps the offset.
    assert!((record.rows[19].pose.y - record.rows[0].pose.y).abs() < 1e-9);
    drop(client.tx);
    while client.rx.recv().await.is_some() {}
}

#[tokio::test(start_paused = true)]
async fn held_input_goes_stale_after_limit() {
    let config = ScenarioConfig { duration: 2.0, ..Default::default() };
    let (io, client) = SessionIo::pair();
    let tx = client.tx.clone();
    let driver = tokio::spawn(async move {
        tx.send(hello()).await.unwrap();
        tx.send(input(0, 0.01, 0.0)).await.unwrap();
        tx
    });
    let outcome = host_session(&config, io, SessionOptions::new("hold", &config)).await.unwrap();
    let _tx = driver.await.unwrap();
    let rows = &outcome.record.rows;
    assert!(rows.iter().all(|r| r.driver.delta == 0.01 * config.vehicle.delta_max));
    assert!(!rows[5].stale && rows[6].stale);
}

#[tokio::test(start_paused = true)]
async fn full_deflection_reaches_steering_limit() {
    let config = ScenarioConfig { duration: 0.3, ..Default::default() };
    let range = InputRange { steering: 32767.0, accel: 255.0, rate_hz: None };
    let (io, client) = SessionIo::pair();
    let ClientIo { tx, mut rx } = client;
    tx.send(ClientMessage::Hello { version: PROTOCOL_VERSION, client: None, input_range: range }).await.unwrap();
    tx.send(input(0, 32767.0, 255.0)).await.unwrap();
    let client = tokio::spawn(async move {
        while let Some(msg) = rx.recv().await {
            if let ServerMessage::StateFrame(f) = msg {
                let next = if f.step == 0 { -32767.0 } else { 0.0 };
                let _ = tx.send(input(f.step as u64 + 1, next, -255.0)).await;
            }
        }
    });
    let outcome = host_session(&config, io, SessionOptions::new("full", &config)).await.unwrap();
    client.abort();
    let rows = &outcome.record.rows;
    let p = config.vehicle;
    assert_eq!(rows[0].driver, DriverCommand::new(p.delta_max, p.a_max));
    assert_eq!(rows[1].driver, DriverCommand::new(-p.delta_max, -p.a_max));
    assert_eq!(rows[0].applied, rows[0].driver);
    assert!(!rows[0].saturated);
}

#[tokio::test(start_paused = true)]
async fn mode_change_is_a_protocol_error() {
    let config = ScenarioConfig { duration: 1.0, ..Default::default() };
    let (io, client) = SessionIo::pair();
    let ClientIo { tx, mut rx } = client;
    tx.send(hello()).await.unwrap();
    let client = tokio::spawn(async move {
        let mut got = Vec::new();
        while let Some(msg) = rx.recv().await {
            if let ServerMessage::StateFrame(f) = &msg {
                if f.step == 2 {
                    tx.send(ClientMessage::SetMode { mode: ControlMode::AutonomyInControl }).await.unwrap();
                }
            }
            let done = matches!(msg, ServerMessage::Summary(_));
            got.push(msg);
            if done {
                break;
            }
        }
        got
    });
    let outcome = host_session(&config, io, SessionOptions::new("lock", &config)).await.unwrap();
    let got = client.await.unwrap();
    assert!(got.iter().any(|m| matches!(m, ServerMessage::Error { code: ErrorCode::ModeLocked, .. })));
    assert_eq!(outcome.record.mode(), ControlMode::HumanInControl);
    assert_eq!(outcome.record.len(), 10);
    assert!(outcome.record.rows.iter().all(|r| r.source == InputSource::Human && r.weights.is_none()));
}

#[tokio::test(start_paused = true)]
async fn disconnect_aborts_with_partial_record() {
    let config = ScenarioConfig::default();
    let (io, client) = SessionIo::pair();
    let ClientIo { tx, mut rx } = client;
    tx.send(hello()).await.unwrap();
    let client = tokio::spawn(async move {
        while let Some(msg) = rx.recv().await {
            if let ServerMessage::StateFrame(f) = msg {
                if f.step == 49 {
                    drop(tx);
                    break;
                }
            }
        }
    });
    let outcome = host_session(&config, io, SessionOptions::new("gone", &config)).await.unwrap();
    client.await.unwrap();
    assert_eq!(outcome.record.header.status, RecordStatus::Aborted);
    assert_eq!(outcome.summary.status, RecordStatus::Aborted);
    assert_eq!(outcome.record.len(), 50);
    outcome.record.check_invariants().unwrap();
}

#[tokio::test(start_paused = true)]
async fn version_mismatch_is_rejected() {
    let config = ScenarioConfig::default();
    let (io, mut client) = SessionIo::pair();
    client.tx.send(ClientMessage::Hello { version: 99, client: None, input_range: RANGE }).await.unwrap();
    let err = host_session(&config, io, SessionOptions::new("v", &config)).await.unwrap_err();
    assert!(matches!(err, SessionError::Version { found: 99, .. }));
    assert!(matches!(client.rx.recv().await, Some(ServerMessage::Error { code: ErrorCode::Version, .. })));
}

#[tokio::test(start_paused = true)]
async fn input_before_hello_is_rejected() {
    let config = ScenarioConfig::default();
    let (io, mut client) = SessionIo::pair();
    client.tx.send(input(0, 0.0, 0.0)).await.unwrap();
    let err = host_session(&config, io, SessionOptions::new("h", &config)).await.unwrap_err();
    assert!(matches!(err, SessionError::Handshake(_)));
    assert!(matches!(client.rx.recv().await, Some(ServerMessage::Error { code: ErrorCode::Handshake, .. })));
}

#[tokio::test(start_paused = true)]
async fn missing_hello_times_out() {
    let config = ScenarioConfig::default();
    let (io, _client) = SessionIo::pair();
    let err = host_session(&config, io, SessionOptions::new("t", &config)).await.unwrap_err();
    assert!(matches!(err, SessionError::HelloTimeout(_)));
}

#[tokio::test(start_paused = true)]
async fn sequential_sessions_are_independent() {
    let dir = tempfile::tempdir().unwrap();
    let mut ids = Vec::new();
    for (name, mode) in [("first", ControlMode::HumanInControl), ("second", ControlMode::AutonomyInControl)] {
        let config = ScenarioConfig { duration: 1.0, ..ScenarioConfig::default().with_mode(mode) };
        let (io, client) = SessionIo::pair();
        let mut options = SessionOptions::new(name, &config);
        options.record_dir = Some(dir.path().to_path_buf());
        let (outcome, _) = tokio::join!(host_session(&config, io, options), scripted_client(client, script(10)));
        let outcome = outcome.unwrap();
        assert_eq!(outcome.summary.mode, mode);
        let saved = TrajectoryRecord::load(outcome.summary.record_path.as_ref().unwrap()).unwrap().record;
        assert_eq!(saved, outcome.record);
        ids.push(saved.header.trajectory_id);
    }
    assert_eq!(ids, ["first", "second"]);
}
