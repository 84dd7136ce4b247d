mod common;

use std::sync::{Arc, RwLock};

use advice_loop::advice::{Advice, AdviceForm, AdviceKind};
use advice_loop::distill::AnnotationSet;
use advice_loop::ledger::{AdviceLedger, SupervisionEvent, SupervisionKind};
use advice_loop::task::Task;
use advice_loop::trajectory::{Pathway, TrajectoryRecord, TrajectoryStep};
use advice_loop_service::protocol::parse_client;
use advice_loop_service::session::EpisodeStore;
use advice_loop_service::{ClientMsg, Mode, ServerMsg, Session, SessionConfig, SessionStatus};
use common::*;
use serde_json::json;
use tokio::sync::mpsc;

fn live(form: AdviceForm, wait: bool) -> (Session, mpsc::UnboundedReceiver<ServerMsg>) {
    let env = grid_env();
    let cfg = SessionConfig {
        mode: Mode::LiveCoach,
        env: env.clone(),
        form,
        step_ms: 1,
        wait_for_advice: wait,
        seed: 3,
    };
    let mut s = Session::new("t".into(), cfg, Some(surrogate(&env, 1)), EpisodeStore::default(), None).unwrap();
    let (tx, rx) = mpsc::unbounded_channel();
    s.subscribe(tx);
    (s, rx)
}

fn msg(v: serde_json::Value) -> ClientMsg {
    parse_client(&v.to_string()).unwrap()
}

fn control(action: &str) -> ClientMsg {
    msg(json!({"type": "control", "action": action}))
}

fn action_event(a: usize, step: u64) -> ClientMsg {
    msg(json!({"type": "advice_event", "form": "action", "payload": {"action_index": a}, "client_step": step}))
}

fn frames(rx: &mut mpsc::UnboundedReceiver<ServerMsg>) -> Vec<ServerMsg> {
    let mut v = Vec::new();
    while let Ok(m) = rx.try_recv() {
        v.push(m);
    }
    v
}

fn is_ack(replies: &[ServerMsg]) -> bool {
    matches!(replies.first(), Some(ServerMsg::Ack { .. }))
}

#[test]
fn without_advice_the_surrogate_runs_on_zeros_and_frames_stream() {
    let (mut s, mut rx) = live(AdviceForm::Action, false);
    assert_eq!(s.status(), SessionStatus::Idle);
    assert!(!s.tick().unwrap(), "idle sessions do not step");
    assert!(is_ack(&s.handle(control("start"))));
    for _ in 0..4 {
        assert!(s.tick().unwrap());
    }
    let got = frames(&mut rx);
    // One frame at reset, one per step.
    assert_eq!(got.len(), 5);
    for (i, f) in got.iter().enumerate() {
        match f {
            ServerMsg::Frame(f) => {
                assert_eq!(f.step as usize, i);
                assert_eq!(f.last_advice, None);
                assert!(!f.render.is_null());
            }
            other => panic!("expected a frame, got {other:?}"),
        }
    }
}

#[test]
fn advice_persists_and_ages_until_replaced() {
    let (mut s, mut rx) = live(AdviceForm::Action, false);
    s.handle(control("start"));
    for _ in 0..5 {
        s.tick().unwrap();
    }
    assert!(is_ack(&s.handle(action_event(2, 5))));
    for _ in 0..4 {
        s.tick().unwrap();
    }
    s.handle(action_event(1, 9));
    s.tick().unwrap();
    let advice: Vec<Option<Advice>> = frames(&mut rx)
        .into_iter()
        .filter_map(|m| match m {
            ServerMsg::Frame(f) => Some(f.last_advice),
            _ => None,
        })
        .collect();
    // Frames report the advice aged to the post-step index.
    let a2 = Advice::new(AdviceKind::Action { action_index: 2 });
    for (i, a) in advice.iter().enumerate().take(6) {
        assert_eq!(a, &None, "frame {i}");
    }
    for (k, a) in advice[6..10].iter().enumerate() {
        assert_eq!(a.as_ref(), Some(&a2.aged(k as u32 + 1)));
    }
    let a1 = Advice::new(AdviceKind::Action { action_index: 1 });
    assert_eq!(advice[10].as_ref(), Some(&a1.aged(1)));
    assert_eq!(s.ledger().total_units, 2);
}

#[test]
fn superseded_events_are_charged_but_only_the_newest_applies() {
    let (mut s, mut rx) = live(AdviceForm::Action, false);
    s.handle(control("start"));
    for a in [0, 1, 3] {
        s.handle(action_event(a, 0));
    }
    s.tick().unwrap();
    let last = frames(&mut rx).into_iter().rev().find_map(|m| match m {
        ServerMsg::Frame(f) => f.last_advice,
        _ => None,
    });
    assert_eq!(last.unwrap().kind, AdviceKind::Action { action_index: 3 });
    let l = s.ledger();
    assert_eq!(l.count(SupervisionKind::Action), 3);
    assert_eq!(l.total_units, 3);
    assert_eq!(s.info().advice_events, 3);
}

#[test]
fn form_mismatch_pauses_and_is_not_charged() {
    let (mut s, _rx) = live(AdviceForm::Action, false);
    s.handle(control("start"));
    let r = s.handle(msg(json!({"type": "advice_event", "form": "subgoal", "payload": {"verb": "goto", "color": "red", "object": "ball"}})));
    match &r[0] {
        ServerMsg::Error { code, .. } => assert_eq!(code, "form_mismatch"),
        other => panic!("{other:?}"),
    }
    assert_eq!(s.status(), SessionStatus::Paused);
    assert_eq!(s.ledger().total_units, 0);
    assert!(!s.tick().unwrap());
    s.handle(control("resume"));
    assert!(s.tick().unwrap());
}

#[test]
fn invalid_payload_is_rejected() {
    let (mut s, _rx) = live(AdviceForm::Action, false);
    s.handle(control("start"));
    for bad in [json!({"action_index": 99}), json!("left"), json!({"dx": 1})] {
        let r = s.handle(msg(json!({"type": "advice_event", "form": "action", "payload": bad})));
        assert!(matches!(&r[0], ServerMsg::Error { code, .. } if code == "bad_advice"), "{r:?}");
    }
    assert_eq!(s.ledger().total_units, 0);
    assert_eq!(s.status(), SessionStatus::Running);
}

#[test]
fn malformed_messages_become_errors() {
    match parse_client("{not json") {
        Err(ServerMsg::Error { code, .. }) => assert_eq!(code, "bad_json"),
        other => panic!("{other:?}"),
    }
    match parse_client(r#"{"type": "teleport"}"#) {
        Err(ServerMsg::Error { code, .. }) => assert_eq!(code, "bad_message"),
        other => panic!("{other:?}"),
    }
    let m = parse_client(r#"{"type": "control", "action": "pause", "extra": [1, 2]}"#).unwrap();
    assert_eq!(m, control("pause"));
}

#[test]
fn wait_for_advice_steps_once_per_event() {
    let (mut s, _rx) = live(AdviceForm::Action, true);
    s.handle(control("start"));
    assert!(!s.tick().unwrap());
    s.handle(action_event(0, 0));
    assert!(s.tick().unwrap());
    assert!(!s.tick().unwrap());
}

#[test]
fn pause_resume_and_episode_end() {
    let (mut s, mut rx) = live(AdviceForm::Action, false);
    s.handle(control("start"));
    s.handle(control("pause"));
    assert!(!s.tick().unwrap());
    s.handle(control("resume"));
    let mut steps = 0;
    while s.tick().unwrap() {
        steps += 1;
    }
    assert_eq!(s.status(), SessionStatus::EpisodeDone);
    let end = frames(&mut rx).into_iter().find_map(|m| match m {
        ServerMsg::EpisodeEnd { steps, episode_id, .. } => Some((steps, episode_id)),
        _ => None,
    });
    let (n, id) = end.expect("episode end sent");
    assert_eq!(n, steps);
    assert_eq!(s.episodes(), &[id]);
    assert!(is_ack(&s.handle(control("start"))));
    assert_eq!(s.status(), SessionStatus::Running);
}

#[test]
fn closed_session_answers_session_closed() {
    let (mut s, _rx) = live(AdviceForm::Action, false);
    assert!(is_ack(&s.handle(control("end_session"))));
    let r = s.handle(control("start"));
    assert!(matches!(&r[0], ServerMsg::Error { code, .. } if code == "session_closed"));
}

fn recorded(id: &str, len: u32) -> TrajectoryRecord {
    TrajectoryRecord {
        episode_id: id.into(),
        task: Task::pointmaze((1.5, 1.5)),
        env: advice_loop::task::EnvKind::Pointmaze,
        seed: 1,
        success: false,
        pathway: Pathway::Relabel,
        steps: (0..len)
            .map(|t| TrajectoryStep {
                t,
                obs: vec![0.0],
                state: serde_json::Value::Null,
                action: 0,
                reward: 0.0,
                advice_low: None,
                advice_high: None,
                done: t + 1 == len,
            })
            .collect(),
    }
}

fn hindsight(dir: &std::path::Path) -> Session {
    let store: EpisodeStore = Arc::new(RwLock::new(Default::default()));
    store.write().unwrap().insert("ep".into(), recorded("ep", 30));
    let cfg = SessionConfig {
        mode: Mode::HindsightAnnotate,
        env: point_env(),
        form: AdviceForm::OffsetWaypoint,
        step_ms: 1,
        wait_for_advice: false,
        seed: 0,
    };
    Session::new("h".into(), cfg, None, store, Some(dir.to_path_buf())).unwrap()
}

fn annotate(step: u32, dx: f64) -> ClientMsg {
    msg(json!({"type": "annotate_event", "episode_id": "ep", "step": step, "advice": {"form": "offset_waypoint", "dx": dx, "dy": 0.0}}))
}

#[test]
fn hindsight_annotations_define_governing_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = hindsight(dir.path());
    for (step, dx) in [(0, 1.0), (7, 2.0), (20, 3.0)] {
        assert!(is_ack(&s.handle(annotate(step, dx))));
    }
    let r = s.handle(msg(json!({"type": "control", "action": "submit", "episode_id": "ep"})));
    assert!(matches!(&r[1], ServerMsg::AnnotationSaved { annotations: 3, .. }), "{r:?}");
    let set = AnnotationSet::read(&dir.path().join("annotations").join("ep.json")).unwrap();
    let dx_at = |t: u32| match set.governing(t).unwrap().kind {
        AdviceKind::OffsetWaypoint { dx, .. } => dx,
        _ => unreachable!(),
    };
    for t in 0..7 {
        assert_eq!(dx_at(t), 1.0);
    }
    for t in 7..20 {
        assert_eq!(dx_at(t), 2.0);
    }
    for t in 20..30 {
        assert_eq!(dx_at(t), 3.0);
    }
    let expected = AdviceLedger::new().recorded(SupervisionEvent::human(AdviceForm::OffsetWaypoint, 0).with_count(3));
    assert_eq!(s.ledger(), &expected);
}

#[test]
fn out_of_order_and_out_of_range_annotations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = hindsight(dir.path());
    s.handle(annotate(5, 1.0));
    let r = s.handle(annotate(5, 1.0));
    assert!(matches!(&r[0], ServerMsg::Error { code, .. } if code == "out_of_order"));
    let r = s.handle(annotate(2, 1.0));
    assert!(matches!(&r[0], ServerMsg::Error { code, .. } if code == "out_of_order"));
    let r = s.handle(annotate(30, 1.0));
    assert!(matches!(&r[0], ServerMsg::Error { code, .. } if code == "step_out_of_range"));
    let r = s.handle(msg(json!({"type": "annotate_event", "episode_id": "other", "step": 0, "advice": {"form": "offset_waypoint", "dx": 0.0, "dy": 0.0}})));
    assert!(matches!(&r[0], ServerMsg::Error { code, .. } if code == "unknown_episode"));
    assert_eq!(s.ledger().total_units, 1);
}

#[test]
fn empty_submission_is_valid_and_free() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = hindsight(dir.path());
    let r = s.handle(msg(json!({"type": "control", "action": "submit", "episode_id": "ep"})));
    assert!(matches!(&r[1], ServerMsg::AnnotationSaved { annotations: 0, .. }));
    let set = AnnotationSet::read(&dir.path().join("annotations").join("ep.json")).unwrap();
    assert!(set.annotations.is_empty());
    assert_eq!(s.ledger(), &AdviceLedger::new());
}

#[test]
fn modes_gate_their_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = hindsight(dir.path());
    for m in [control("start"), action_event(0, 0)] {
        let r = h.handle(m);
        assert!(matches!(&r[0], ServerMsg::Error { code, .. } if code == "wrong_mode"));
    }
    let (mut l, _rx) = live(AdviceForm::Action, false);
    let r = l.handle(msg(json!({"type": "annotate_event", "episode_id": "ep", "step": 0, "advice": {"form": "action", "action_index": 0}})));
    assert!(matches!(&r[0], ServerMsg::Error { code, .. } if code == "wrong_mode"));
}
