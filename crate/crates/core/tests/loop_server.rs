// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use dcrab::dynamics::{build_model, ModelSpec, QuantumState};
use dcrab::loop_server::{
    decode, encode, fom_file, pulse_file, ready_file, run_exchange_dir_client, run_tcp_client,
    serve_exchange_dir, write_new_atomic, ExchangeManifest, LoopMessage, SessionConfig, TcpServer,
    Transport,
};
use dcrab::objectives::{Constraint, ObjectiveKind, ObjectiveSpec};
use dcrab::optimizer::{
    run, Algorithm, FomEvaluator, OptimizationRecord, Problem, SearchConfig, SimulatedFom,
    Termination,
};
use dcrab::pulses::{Pulse, TimeGrid};
use dcrab::Error;

fn simulator() -> SimulatedFom {
    let model = build_model(&ModelSpec::TwoLevel { delta_omega: 1.0 }).unwrap();
    let obj = ObjectiveSpec::new(ObjectiveKind::StateFidelity {
        target: QuantumState::basis(2, 1).unwrap(),
    });
    SimulatedFom::new(model, QuantumState::basis(2, 0).unwrap().into(), obj)
}

fn config(algorithm: Algorithm, evals: usize) -> SessionConfig {
    let mut search = SearchConfig::new(3);
    search.max_super_iterations = 3;
    search.max_evals_per_super_iteration = evals;
    SessionConfig {
        search,
        algorithm,
        seed: 21,
        guess: vec![Pulse::constant(TimeGrid::new(4.0, 41).unwrap(), 0.4).unwrap()],
        constraint: Constraint::HardWall { f_max: 2.0 },
        transport: Transport::Tcp {
            addr: "127.0.0.1:0".into(),
        },
        timeout: 10.0,
    }
}

fn direct(config: &SessionConfig) -> OptimizationRecord {
    let problem = Problem::new(config.guess.clone(), config.constraint);
    run(
        config.algorithm,
        &problem,
        &config.search,
        config.seed,
        &mut simulator(),
    )
    .unwrap()
}

fn assert_same_trajectory(a: &OptimizationRecord, b: &OptimizationRecord) {
    assert_eq!(a.evaluations.len(), b.evaluations.len());
    for (x, y) in a.evaluations.iter().zip(&b.evaluations) {
        assert_eq!(x.coefficients, y.coefficients);
        assert_eq!(x.j, y.j);
    }
    assert_eq!(a.final_pulses, b.final_pulses);
    assert_eq!(a.termination, b.termination);
}

fn spawn_client(addr: SocketAddr) -> thread::JoinHandle<dcrab::loop_server::ClientSummary> {
    thread::spawn(move || {
        let mut fom = simulator();
        run_tcp_client(addr, move |iter, pulses| {
            Ok((fom.evaluate(iter, pulses)?.j, None))
        })
        .unwrap()
    })
}

/// Minimal hand-driven client for misbehaving-peer tests.
struct RawClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl RawClient {
    fn connect(addr: SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        stream
            .set_read_timeout(Some(Duration::from_secs(20)))
            .unwrap();
        Self {
            writer: stream.try_clone().unwrap(),
            reader: BufReader::new(stream),
        }
    }

    fn recv(&mut self) -> Option<LoopMessage> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(decode(&line).unwrap()),
        }
    }

    fn send_raw(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
    }

    fn reply(&mut self, session: &str, iter: usize, j: f64) {
        let line = encode(&LoopMessage::FomReply {
            session: session.into(),
            iter,
            j,
            err: None,
        })
        .unwrap();
        self.send_raw(&line);
    }

    /// Drains messages until the server closes; returns their kinds.
    fn drain(&mut self) -> Vec<&'static str> {
        std::iter::from_fn(|| self.recv())
            .map(|m| m.kind())
            .collect()
    }
}

#[test]
fn crab_over_tcp_matches_direct_run() {
    let cfg = config(Algorithm::Crab, 80);
    let server = TcpServer::bind("127.0.0.1:0").unwrap();
    let client = spawn_client(server.local_addr().unwrap());
    let outcome = server.accept_session(&cfg).unwrap();
    let summary = client.join().unwrap();
    assert_same_trajectory(&direct(&cfg), &outcome.record);
    assert_eq!(summary.session, outcome.session);
    assert_eq!(summary.evaluations, outcome.record.total_evaluations);
    assert_eq!(summary.best_j, Some(outcome.record.final_j));
    assert_eq!(summary.close_reason, outcome.record.termination.to_string());
    assert!(summary.errors.is_empty());
}

#[test]
fn zero_budget_session_closes_with_the_guess() {
    let cfg = config(Algorithm::Dcrab, 0);
    let server = TcpServer::bind("127.0.0.1:0").unwrap();
    let client = spawn_client(server.local_addr().unwrap());
    let outcome = server.accept_session(&cfg).unwrap();
    let summary = client.join().unwrap();
    assert_eq!(outcome.record.final_pulses, cfg.guess);
    assert_eq!(summary.evaluations, outcome.record.total_evaluations);
    assert!(outcome
        .record
        .evaluations
        .iter()
        .all(|e| e.coefficients.is_empty() || e.iter == 0));
    assert_same_trajectory(&direct(&cfg), &outcome.record);
}

#[test]
fn non_finite_reply_aborts_the_session() {
    let cfg = config(Algorithm::Dcrab, 50);
    let server = TcpServer::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let client = thread::spawn(move || {
        let mut c = RawClient::connect(addr);
        let Some(LoopMessage::SessionOpen { session, .. }) = c.recv() else {
            panic!("no session_open")
        };
        let Some(LoopMessage::PulseRequest { iter, .. }) = c.recv() else {
            panic!("no pulse_request")
        };
        c.send_raw(&format!(
            r#"{{"type":"fom_reply","session":"{session}","iter":{iter},"J":null}}"#
        ));
        c.drain()
    });
    let outcome = server.accept_session(&cfg).unwrap();
    let tail = client.join().unwrap();
    assert!(matches!(
        outcome.record.termination,
        Termination::Aborted(_)
    ));
    assert_eq!(tail, ["error", "session_close"]);
}

#[test]
fn silent_client_gets_one_resend_then_times_out() {
    let mut cfg = config(Algorithm::Dcrab, 50);
    cfg.timeout = 0.2;
    let server = TcpServer::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let client = thread::spawn(move || {
        let mut c = RawClient::connect(addr);
        c.drain()
    });
    let start = Instant::now();
    let outcome = server.accept_session(&cfg).unwrap();
    let kinds = client.join().unwrap();
    assert!(start.elapsed() >= Duration::from_millis(400));
    match &outcome.record.termination {
        Termination::Aborted(why) => assert!(why.contains("retry"), "{why}"),
        other => panic!("expected abort, got {other:?}"),
    }
    assert_eq!(
        kinds,
        [
            "session_open",
            "pulse_request",
            "pulse_request",
            "error",
            "session_close"
        ]
    );
}

#[test]
fn resent_request_can_be_answered() {
    let mut cfg = config(Algorithm::Dcrab, 20);
    cfg.timeout = 0.2;
    let server = TcpServer::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let client = thread::spawn(move || {
        let mut c = RawClient::connect(addr);
        let mut fom = simulator();
        let mut ignored_first = false;
        while let Some(msg) = c.recv() {
            match msg {
                LoopMessage::PulseRequest {
                    session,
                    iter,
                    pulses,
                } => {
                    if !ignored_first {
                        ignored_first = true;
                        continue;
                    }
                    let pulses: Vec<Pulse> = pulses.iter().map(|p| p.to_pulse().unwrap()).collect();
                    // a stale duplicate first, which the server must skip
                    if iter > 0 {
                        c.reply(&session, iter - 1, 0.0);
                    }
                    c.reply(&session, iter, fom.evaluate(iter, &pulses).unwrap().j);
                }
                LoopMessage::SessionClose { reason, .. } => return reason,
                _ => {}
            }
        }
        panic!("server hung up without session_close");
    });
    let outcome = server.accept_session(&cfg).unwrap();
    let reason = client.join().unwrap();
    assert!(outcome.record.termination.is_clean());
    assert_eq!(reason, outcome.record.termination.to_string());
    assert_same_trajectory(&direct(&cfg), &outcome.record);
}

#[test]
fn concurrent_sessions_are_independent() {
    let cfg = config(Algorithm::Dcrab, 40);
    let server = TcpServer::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let clients: Vec<_> = (0..3).map(|_| spawn_client(addr)).collect();
    let outcomes = server.serve_sessions(&cfg, 3).unwrap();
    let summaries: Vec<_> = clients.into_iter().map(|c| c.join().unwrap()).collect();
    let reference = direct(&cfg);
    let mut ids: Vec<String> = Vec::new();
    for outcome in outcomes {
        let outcome = outcome.unwrap();
        assert_same_trajectory(&reference, &outcome.record);
        ids.push(outcome.session);
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 3);
    for s in summaries {
        assert!(ids.contains(&s.session));
    }
}

fn exchange_config(dir: &Path, timeout: f64) -> SessionConfig {
    let mut cfg = config(Algorithm::Dcrab, 25);
    cfg.transport = Transport::ExchangeDir {
        dir: dir.to_path_buf(),
    };
    cfg.timeout = timeout;
    cfg
}

#[test]
fn exchange_directory_matches_direct_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("xchg");
    let cfg = exchange_config(&dir, 10.0);
    let server = {
        let (dir, cfg) = (dir.clone(), cfg.clone());
        thread::spawn(move || serve_exchange_dir(&dir, &cfg).unwrap())
    };
    let mut fom = simulator();
    let summary = run_exchange_dir_client(&dir, Duration::from_secs(10), |iter, pulses| {
        Ok((fom.evaluate(iter, pulses)?.j, None))
    })
    .unwrap();
    let outcome = server.join().unwrap();
    assert_same_trajectory(&direct(&cfg), &outcome.record);
    assert_eq!(summary.session, outcome.session);
    assert_eq!(summary.evaluations, outcome.record.total_evaluations);
    for iter in 0..summary.evaluations {
        assert!(pulse_file(&dir, iter, 0).exists());
        assert!(ready_file(&dir, iter).exists());
        assert!(fom_file(&dir, iter).exists());
    }
    // a second session refuses the used directory
    assert!(matches!(
        serve_exchange_dir(&dir, &cfg),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn client_waits_for_the_ready_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let manifest = ExchangeManifest {
        session: "s".into(),
        controls: 1,
    };
    write_new_atomic(
        &dir.join("session.json"),
        serde_json::to_string(&manifest).unwrap().as_bytes(),
    )
    .unwrap();
    let pulse = Pulse::constant(TimeGrid::new(1.0, 5).unwrap(), 0.1).unwrap();
    write_new_atomic(&pulse_file(dir, 0, 0), pulse.to_csv().as_bytes()).unwrap();
    let mut calls = 0;
    let out = run_exchange_dir_client(dir, Duration::from_millis(100), |_, _| {
        calls += 1;
        Ok((0.5, None))
    });
    assert!(matches!(out, Err(Error::Timeout(_))));
    assert_eq!(calls, 0);
    assert!(!fom_file(dir, 0).exists());
}

#[test]
fn reply_for_the_wrong_iteration_aborts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    let cfg = exchange_config(&dir, 5.0);
    let server = {
        let (dir, cfg) = (dir.clone(), cfg.clone());
        thread::spawn(move || serve_exchange_dir(&dir, &cfg).unwrap())
    };
    while !ready_file(&dir, 0).exists() {
        thread::sleep(Duration::from_millis(2));
    }
    let manifest: ExchangeManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("session.json")).unwrap()).unwrap();
    let wrong = LoopMessage::FomReply {
        session: manifest.session.clone(),
        iter: 1,
        j: 0.5,
        err: None,
    };
    write_new_atomic(&fom_file(&dir, 0), encode(&wrong).unwrap().as_bytes()).unwrap();
    let outcome = server.join().unwrap();
    assert!(matches!(
        outcome.record.termination,
        Termination::Aborted(_)
    ));
    let close = decode(&std::fs::read_to_string(dir.join("session_close.json")).unwrap()).unwrap();
    assert!(
        matches!(close, LoopMessage::SessionClose { session, .. } if session == manifest.session)
    );
}

#[test]
fn stale_exchange_directory_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("fom_3.json"), "{}").unwrap();
    let cfg = exchange_config(tmp.path(), 1.0);
    match serve_exchange_dir(tmp.path(), &cfg) {
        Err(Error::Protocol(msg)) => assert!(msg.contains("fom_3.json"), "{msg}"),
        other => panic!("expected a protocol error, got {other:?}"),
    }
}

#[test]
fn silent_exchange_client_times_out_after_second_wait() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = exchange_config(tmp.path(), 0.1);
    let start = Instant::now();
    let outcome = serve_exchange_dir(tmp.path(), &cfg).unwrap();
    assert!(start.elapsed() >= Duration::from_millis(200));
    assert!(matches!(
        outcome.record.termination,
        Termination::Aborted(_)
    ));
    assert!(tmp.path().join("session_close.json").exists());
}
