mod common;

use advice_loop::trajectory::{read_trajectories, verify_replay, TrajectoryRecord};
use advice_loop_service::{Created, ServerMsg, ServiceConfig};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const TARGET_STEPS: u64 = 6000;

// A scripted coach drives one live session for 6000 environment steps.
// The server steps every millisecond rather than at human pace.
#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_client_soak() {
    let dir = tempfile::tempdir().unwrap();
    let env = grid_env();
    let n_actions = env.n_actions();
    let server = start(ServiceConfig {
        surrogate: Some(surrogate(&env, 11)),
        step_ms: 1,
        out_dir: Some(dir.path().to_path_buf()),
        seed: 5,
        ..ServiceConfig::new(env.clone())
    })
    .await;
    let http = reqwest::Client::new();
    let created: Created = http
        .post(format!("{}/sessions", server.base))
        .json(&json!({"mode": "live_coach", "form": "action"}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let mut ws = connect(&server, &created.ws_url).await;
    send(&mut ws, json!({"type": "control", "action": "start"})).await;

    let mut starts = 1u64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut steps = 0u64;
    let mut steps_in_episode = 0u64;
    let mut frames_seen = 0u64;
    let mut sent = 0u64;
    let mut acks = 0u64;
    let mut errors = Vec::new();
    let mut ended: Vec<(String, u32)> = Vec::new();
    let mut closing = false;
    while let Some(msg) = recv(&mut ws).await {
        match msg {
            ServerMsg::Frame(f) => {
                if f.step > 0 {
                    steps += 1;
                    steps_in_episode += 1;
                }
                frames_seen += 1;
                if closing {
                    continue;
                }
                if steps >= TARGET_STEPS {
                    send(&mut ws, json!({"type": "control", "action": "end_session"})).await;
                    closing = true;
                } else if frames_seen.is_multiple_of(10) {
                    let a = rng.random_range(0..n_actions);
                    send(
                        &mut ws,
                        json!({"type": "advice_event", "form": "action", "payload": {"action_index": a}, "client_step": steps}),
                    )
                    .await;
                    sent += 1;
                }
            }
            ServerMsg::EpisodeEnd { episode_id, steps: n, .. } => {
                assert_eq!(n as u64, steps_in_episode);
                steps_in_episode = 0;
                ended.push((episode_id, n));
                if !closing {
                    send(&mut ws, json!({"type": "control", "action": "start"})).await;
                    starts += 1;
                }
            }
            ServerMsg::Ack { of, status, .. } => {
                acks += 1;
                if of == "control" && status == advice_loop_service::SessionStatus::Closed {
                    break;
                }
            }
            e @ ServerMsg::Error { .. } => errors.push(e),
            other => panic!("unexpected message {other:?}"),
        }
    }
    assert!(errors.is_empty(), "protocol errors: {errors:?}");
    assert!(steps >= TARGET_STEPS, "only {steps} steps");
    assert!(ended.len() > 10, "only {} episodes", ended.len());
    // Every advice event, start and the final end_session got an Ack.
    assert_eq!(acks, sent + starts + 1);

    let info: Value = http
        .get(format!("{}/sessions/{}", server.base, created.id))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(info["status"], "closed");
    assert_eq!(info["advice_events"], sent);
    assert_eq!(info["ledger"]["total_units"], sent);
    assert_eq!(info["ledger"]["counts"]["action"], sent);
    assert_eq!(info["ledger"]["env_steps"], steps);

    let records = read_trajectories(&dir.path().join("sessions").join(&created.id).join("trajectories.jsonl")).unwrap();
    assert_eq!(records.len(), ended.len());
    let mut recorded_steps = 0u64;
    for (rec, (id, n)) in records.iter().zip(&ended) {
        assert_eq!(&rec.episode_id, id);
        assert_eq!(rec.steps.len(), *n as usize);
        verify_replay(&env, rec).unwrap_or_else(|e| panic!("episode {id} does not replay: {e}"));
        let served: TrajectoryRecord = http
            .get(format!("{}/episodes/{}", server.base, id))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(&served, rec);
        recorded_steps += rec.steps.len() as u64;
    }
    assert_eq!(recorded_steps + steps_in_episode, steps);

    let ledger: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("sessions").join(&created.id).join("ledger.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(ledger["total_units"], sent);
}
