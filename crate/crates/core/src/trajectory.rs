//! Episode logs as JSON Lines.
//!
//! Each episode is a header object followed by one object per step:
//!
//! ```text
//! {"version":"1","episode":"e0","task":{...},"env":"pointmaze","seed":3,"success":true,"pathway":"improvement"}
//! {"t":0,"obs":[...],"action":2,"reward":0.0,"advice_low":{...},"advice_high":null,"done":false}
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::advice::Advice;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::task::{EnvKind, Task};

pub const TRAJECTORY_VERSION: &str = "1";

/// How an episode's action labels came about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pathway {
    #[default]
    Grounding,
    Bootstrap,
    Improvement,
    Relabel,
    Live,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: u32,
    pub obs: Vec<f64>,
    /// Env-specific state record (optional in files).
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub state: Value,
    pub action: usize,
    pub reward: f64,
    pub advice_low: Option<Advice>,
    pub advice_high: Option<Advice>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode_id: String,
    pub task: Task,
    pub env: EnvKind,
    pub seed: u64,
    pub success: bool,
    pub pathway: Pathway,
    pub steps: Vec<TrajectoryStep>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: String,
    episode: String,
    task: Task,
    env: EnvKind,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    success: bool,
    #[serde(default)]
    pathway: Pathway,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Exactly one `done` step, and it is the last; `t` counts from 0.
    pub fn validate(&self) -> Result<()> {
        let n = self.steps.len();
        if n == 0 {
            return Err(Error::Parse {
                line: 0,
                msg: format!("episode {} has no steps", self.episode_id),
            });
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.t as usize != i {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("episode {}: step {i} has t={}", self.episode_id, s.t),
                });
            }
            if s.done != (i + 1 == n) {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("episode {}: done flag must be set on the last step only", self.episode_id),
                });
            }
        }
        Ok(())
    }

    fn header(&self) -> Header {
        Header {
            version: TRAJECTORY_VERSION.into(),
            episode: self.episode_id.clone(),
            task: self.task.clone(),
            env: self.env,
            seed: self.seed,
            success: self.success,
            pathway: self.pathway,
        }
    }
}

/// Re-runs the recorded actions from the episode seed and checks every
/// logged observation, reward and done flag.
pub fn verify_replay(env: &EnvConfig, rec: &TrajectoryRecord) -> Result<()> {
    if env.kind != rec.env {
        return Err(Error::Env(format!("episode {} was recorded on {:?}, not {:?}", rec.episode_id, rec.env, env.kind)));
    }
    let mut state = env.reset(rec.seed)?;
    let mut success = false;
    for s in &rec.steps {
        if state.obs() != s.obs {
            return Err(Error::Env(format!("episode {}: observation diverged at step {}", rec.episode_id, s.t)));
        }
        let out = state.step(s.action)?;
        if out.reward != s.reward || out.done() != s.done {
            return Err(Error::Env(format!("episode {}: outcome diverged at step {}", rec.episode_id, s.t)));
        }
        success |= out.success;
    }
    if success != rec.success {
        return Err(Error::Env(format!("episode {}: replayed success is {success}", rec.episode_id)));
    }
    Ok(())
}

pub fn write_record(w: &mut impl Write, rec: &TrajectoryRecord) -> Result<()> {
    rec.validate()?;
    serde_json::to_writer(&mut *w, &rec.header())?;
    w.write_all(b"\n")?;
    for s in &rec.steps {
        serde_json::to_writer(&mut *w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn encode_trajectories(records: &[TrajectoryRecord]) -> Result<String> {
    let mut buf = Vec::new();
    for r in records {
        write_record(&mut buf, r)?;
    }
    Ok(String::from_utf8(buf).expect("json is utf-8"))
}

pub fn write_trajectories(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        write_record(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    decode_trajectories(&fs::read_to_string(path)?)
}

/// Parses a JSONL log. Errors carry 1-based line numbers.
pub fn decode_trajectories(text: &str) -> Result<Vec<TrajectoryRecord>> {
    let mut out: Vec<TrajectoryRecord> = Vec::new();
    let mut open = false;
    let mut header_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse { line, msg };
        let v: Value = serde_json::from_str(raw).map_err(|e| perr(e.to_string()))?;
        if v.get("episode").is_some() {
            if open {
                return Err(perr("episode header before the previous episode finished".into()));
            }
            let found = v.get("version").and_then(Value::as_str).unwrap_or("<missing>");
            if found != TRAJECTORY_VERSION {
                return Err(Error::Version {
                    found: found.into(),
                    expected: TRAJECTORY_VERSION.into(),
                });
            }
            let h: Header = serde_json::from_value(v).map_err(|e| perr(e.to_string()))?;
            out.push(TrajectoryRecord {
                episode_id: h.episode,
                task: h.task,
                env: h.env,
                seed: h.seed,
                success: h.success,
                pathway: h.pathway,
                steps: Vec::new(),
            });
            open = true;
            header_line = line;
        } else {
            if !open {
                return Err(perr("step line outside an episode".into()));
            }
            let rec = out.last_mut().expect("open episode");
            let s: TrajectoryStep = serde_json::from_value(v).map_err(|e| perr(e.to_string()))?;
            if s.t as usize != rec.steps.len() {
                return Err(perr(format!("expected t={}, found t={}", rec.steps.len(), s.t)));
            }
            open = !s.done;
            rec.steps.push(s);
        }
    }
    if open {
        return Err(Error::Parse {
            line: header_line,
            msg: "episode ends without a done step".into(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advice::{AdviceKind, Cardinal};
    use crate::task::{Color, ObjectKind, Verb};
    use proptest::prelude::*;

    fn five_steps() -> TrajectoryRecord {
        let steps = (0..5)
            .map(|t| TrajectoryStep {
                t,
                obs: vec![0.1 * t as f64, 1.0 / 3.0, -2.5e-17],
                state: if t == 0 { serde_json::json!({"pos": [1.5, 2.5]}) } else { Value::Null },
                action: t as usize % 3,
                reward: if t == 4 { 5.0 } else { 0.1 },
                advice_low: Some(Advice::new(AdviceKind::Cardinal { dir: Cardinal::E }).aged(t)),
                advice_high: (t % 2 == 0).then(|| Advice::new(AdviceKind::Waypoint { x: 2.5, y: 3.5 })),
                done: t == 4,
            })
            .collect();
        TrajectoryRecord {
            episode_id: "ep-7".into(),
            task: Task::pointmaze((4.5, 1.5)),
            env: EnvKind::Pointmaze,
            seed: 7,
            success: true,
            pathway: Pathway::Improvement,
            steps,
        }
    }

    #[test]
    fn round_trip_five_steps() {
        let rec = five_steps();
        let text = encode_trajectories(std::slice::from_ref(&rec)).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().next().unwrap().contains("\"episode\":\"ep-7\""));
        let back = decode_trajectories(&text).unwrap();
        assert_eq!(back, vec![rec.clone()]);
        for (a, b) in back[0].steps.iter().zip(&rec.steps) {
            for (x, y) in a.obs.iter().zip(&b.obs) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let mut other = five_steps();
        other.episode_id = "ep-8".into();
        other.task = Task::gridworld(Verb::Pickup, Color::Blue, ObjectKind::Key).unwrap();
        other.env = EnvKind::Gridworld;
        let recs = vec![five_steps(), other];
        write_trajectories(&p, &recs).unwrap();
        assert_eq!(read_trajectories(&p).unwrap(), recs);
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(decode_trajectories("").unwrap().is_empty());
    }

    #[test]
    fn truncated_last_line_names_it() {
        let text = encode_trajectories(&[five_steps()]).unwrap();
        let cut = &text[..text.len() - 10];
        match decode_trajectories(cut) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_refused() {
        let text = encode_trajectories(&[five_steps()]).unwrap().replacen("\"version\":\"1\"", "\"version\":\"0\"", 1);
        match decode_trajectories(&text) {
            Err(Error::Version { found, expected }) => assert_eq!((found.as_str(), expected.as_str()), ("0", "1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        let text = encode_trajectories(&[five_steps()]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        // step without header
        assert!(matches!(decode_trajectories(lines[1]), Err(Error::Parse { line: 1, .. })));
        // missing done
        let no_end = lines[..5].join("\n");
        assert!(matches!(decode_trajectories(&no_end), Err(Error::Parse { line: 1, .. })));
        // skipped t
        let skipped = [lines[0], lines[1], lines[3]].join("\n");
        assert!(matches!(decode_trajectories(&skipped), Err(Error::Parse { line: 3, .. })));
        // invalid record refused on write
        let mut bad = five_steps();
        bad.steps[2].done = true;
        assert!(encode_trajectories(&[bad]).is_err());
    }

    fn arb_advice() -> impl Strategy<Value = Option<Advice>> {
        let kind = prop_oneof![
            (0usize..9).prop_map(|action_index| AdviceKind::Action { action_index }),
            (-3.0f64..3.0).prop_map(|a| AdviceKind::Direction { dx: a.cos(), dy: a.sin() }),
            (0usize..4).prop_map(|i| AdviceKind::Cardinal { dir: [Cardinal::N, Cardinal::S, Cardinal::E, Cardinal::W][i] }),
            (-5.0f64..5.0, -5.0f64..5.0, any::<bool>()).prop_map(|(dx, dy, interact)| AdviceKind::OffsetWaypoint { dx, dy, interact }),
        ];
        proptest::option::of((kind, 0u32..40).prop_map(|(k, age)| Advice::new(k).aged(age)))
    }

    fn arb_record() -> impl Strategy<Value = TrajectoryRecord> {
        let step = (proptest::collection::vec(-1e6f64..1e6, 4), 0usize..9, -10.0f64..10.0, arb_advice(), arb_advice());
        (proptest::collection::vec(step, 1..12), any::<u64>(), any::<bool>(), "[a-z0-9-]{1,12}").prop_map(|(steps, seed, success, id)| {
            let n = steps.len();
            TrajectoryRecord {
                episode_id: id,
                task: Task::pointmaze((1.5, 2.5)),
                env: EnvKind::Pointmaze,
                seed,
                success,
                pathway: Pathway::Relabel,
                steps: steps
                    .into_iter()
                    .enumerate()
                    .map(|(t, (obs, action, reward, advice_low, advice_high))| TrajectoryStep {
                        t: t as u32,
                        obs,
                        state: Value::Null,
                        action,
                        reward,
                        advice_low,
                        advice_high,
                        done: t + 1 == n,
                    })
                    .collect(),
            }
        })
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(recs in proptest::collection::vec(arb_record(), 0..4)) {
            let text = encode_trajectories(&recs).unwrap();
            prop_assert_eq!(decode_trajectories(&text).unwrap(), recs);
        }
    }
}
