use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use advice_loop::advice::{encode_advice, Advice, AdviceForm};
use advice_loop::distill::{Annotation, AnnotationSet};
use advice_loop::env::{EnvConfig, EnvState};
use advice_loop::ledger::{AdviceLedger, SupervisionEvent};
use advice_loop::nnet::PolicyNet;
use advice_loop::trajectory::{write_record, Pathway, TrajectoryRecord, TrajectoryStep};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tokio::sync::mpsc::UnboundedSender;

use crate::protocol::{ClientMsg, ControlAction, Frame, Mode, ServerMsg, SessionStatus};
use crate::ServiceError;

/// Recorded episodes shared by all sessions, keyed by episode id.
pub type EpisodeStore = Arc<RwLock<HashMap<String, TrajectoryRecord>>>;

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub mode: Mode,
    pub env: EnvConfig,
    pub form: AdviceForm,
    pub step_ms: u64,
    /// Only step after a new advice event has arrived.
    pub wait_for_advice: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionInfo {
    pub id: String,
    pub mode: Mode,
    pub status: SessionStatus,
    pub form: AdviceForm,
    pub env: advice_loop::task::EnvKind,
    pub episodes: usize,
    pub advice_events: u64,
    pub annotations: u64,
    pub ledger: AdviceLedger,
}

pub struct Session {
    pub id: String,
    cfg: SessionConfig,
    status: SessionStatus,
    surrogate: Option<Arc<PolicyNet>>,
    env: Option<EnvState>,
    episode: u64,
    /// Current advice and the step it was applied at.
    current: Option<(Advice, u32)>,
    queue: VecDeque<Advice>,
    ledger: AdviceLedger,
    rec: Option<TrajectoryRecord>,
    log: Vec<String>,
    rng: ChaCha8Rng,
    subscribers: Vec<UnboundedSender<ServerMsg>>,
    pending: BTreeMap<String, Vec<Annotation>>,
    store: EpisodeStore,
    out_dir: Option<PathBuf>,
    advice_events: u64,
    annotations: u64,
}

impl Session {
    pub fn new(id: String, cfg: SessionConfig, surrogate: Option<Arc<PolicyNet>>, store: EpisodeStore, out_dir: Option<PathBuf>) -> Result<Session, ServiceError> {
        cfg.form
            .check_env(cfg.env.kind)
            .map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
        if cfg.mode == Mode::LiveCoach {
            let net = surrogate
                .as_ref()
                .ok_or_else(|| ServiceError::Unprocessable("live coaching needs a surrogate checkpoint".into()))?;
            let nc = net.config();
            let adv = encode_advice(None, cfg.env.n_actions())?.len();
            if nc.obs_dim != cfg.env.obs_len() || nc.advice_dim != adv || nc.n_actions != cfg.env.n_actions() {
                return Err(ServiceError::Unprocessable(format!(
                    "surrogate expects obs {} / advice {} / actions {}, env gives {} / {} / {}",
                    nc.obs_dim,
                    nc.advice_dim,
                    nc.n_actions,
                    cfg.env.obs_len(),
                    adv,
                    cfg.env.n_actions()
                )));
            }
        }
        if let Some(dir) = &out_dir {
            fs::create_dir_all(dir.join("sessions").join(&id))?;
            fs::create_dir_all(dir.join("annotations"))?;
        }
        Ok(Session {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            id,
            cfg,
            status: SessionStatus::Idle,
            surrogate,
            env: None,
            episode: 0,
            current: None,
            queue: VecDeque::new(),
            ledger: AdviceLedger::new(),
            rec: None,
            log: Vec::new(),
            subscribers: Vec::new(),
            pending: BTreeMap::new(),
            store,
            out_dir,
            advice_events: 0,
            annotations: 0,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn ledger(&self) -> &AdviceLedger {
        &self.ledger
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            id: self.id.clone(),
            mode: self.cfg.mode,
            status: self.status,
            form: self.cfg.form,
            env: self.cfg.env.kind,
            episodes: self.log.len(),
            advice_events: self.advice_events,
            annotations: self.annotations,
            ledger: self.ledger.clone(),
        }
    }

    /// Ids of the episodes this session recorded, oldest first.
    pub fn episodes(&self) -> &[String] {
        &self.log
    }

    pub fn subscribe(&mut self, tx: UnboundedSender<ServerMsg>) {
        self.subscribers.push(tx);
    }

    fn broadcast(&mut self, msg: ServerMsg) {
        self.subscribers.retain(|tx| tx.send(msg.clone()).is_ok());
    }

    pub fn close(&mut self) {
        self.status = SessionStatus::Closed;
        self.env = None;
        self.rec = None;
        self.queue.clear();
        let _ = self.persist_ledger();
        self.subscribers.clear();
    }

    fn aged_advice(&self) -> Option<Advice> {
        let step = self.env.as_ref().map_or(0, |e| e.steps());
        self.current.as_ref().map(|(a, at)| a.aged(step - at))
    }

    fn frame(&self) -> ServerMsg {
        ServerMsg::Frame(Box::new(Frame {
            session: self.id.clone(),
            episode: self.episode,
            step: self.env.as_ref().map_or(0, |e| e.steps()),
            render: self.env.as_ref().map_or(serde_json::Value::Null, |e| e.render()),
            last_advice: self.aged_advice(),
            ledger: self.ledger.clone(),
            status: self.status,
        }))
    }

    fn begin_episode(&mut self) -> Result<(), ServiceError> {
        let seed = self.rng.random::<u32>() as u64;
        let env = self.cfg.env.reset(seed)?;
        self.episode += 1;
        self.rec = Some(TrajectoryRecord {
            episode_id: format!("{}-e{}", self.id, self.episode),
            task: env.task(),
            env: self.cfg.env.kind,
            seed,
            success: false,
            pathway: Pathway::Live,
            steps: Vec::new(),
        });
        self.env = Some(env);
        self.current = None;
        self.queue.clear();
        self.status = SessionStatus::Running;
        let f = self.frame();
        self.broadcast(f);
        Ok(())
    }

    /// Handles one client message; the returned messages go to its sender
    /// only.
    pub fn handle(&mut self, msg: ClientMsg) -> Vec<ServerMsg> {
        if self.status == SessionStatus::Closed {
            return vec![ServerMsg::error("session_closed", format!("session {} is closed", self.id))];
        }
        let of = msg.kind().to_string();
        let mut client_step = None;
        let result = match msg {
            ClientMsg::AdviceEvent { form, payload, client_step: cs } => {
                client_step = cs;
                self.on_advice(form, &payload)
            }
            ClientMsg::Control { action, episode_id } => self.on_control(action, episode_id),
            ClientMsg::AnnotateEvent { episode_id, step, advice } => self.on_annotate(episode_id, step, advice),
        };
        match result {
            Ok(mut extra) => {
                let mut out = vec![ServerMsg::Ack {
                    of,
                    client_step,
                    status: self.status,
                }];
                out.append(&mut extra);
                out
            }
            Err(e) => vec![e],
        }
    }

    fn on_advice(&mut self, form: AdviceForm, payload: &serde_json::Value) -> Result<Vec<ServerMsg>, ServerMsg> {
        if self.cfg.mode != Mode::LiveCoach {
            return Err(ServerMsg::error("wrong_mode", "advice events need a live_coach session"));
        }
        if form != self.cfg.form {
            if self.status == SessionStatus::Running {
                self.status = SessionStatus::Paused;
            }
            return Err(ServerMsg::error(
                "form_mismatch",
                format!("session surrogate takes {} advice, got {form}; session paused", self.cfg.form),
            ));
        }
        let advice = crate::protocol::advice_from_event(form, payload)?;
        advice
            .validate(self.cfg.env.n_actions())
            .map_err(|e| ServerMsg::error("bad_advice", e.to_string()))?;
        self.ledger.record(SupervisionEvent::human(form, self.ledger.env_steps));
        self.advice_events += 1;
        self.queue.push_back(advice);
        Ok(Vec::new())
    }

    fn on_control(&mut self, action: ControlAction, episode_id: Option<String>) -> Result<Vec<ServerMsg>, ServerMsg> {
        let live = self.cfg.mode == Mode::LiveCoach;
        let wrong_mode = || ServerMsg::error("wrong_mode", format!("{action:?} is not available in this session's mode"));
        let internal = |e: ServiceError| ServerMsg::error("internal", e.to_string());
        match action {
            ControlAction::Start => {
                if !live {
                    return Err(wrong_mode());
                }
                match self.status {
                    SessionStatus::Idle | SessionStatus::EpisodeDone => self.begin_episode().map_err(internal)?,
                    SessionStatus::Paused => self.status = SessionStatus::Running,
                    _ => {}
                }
            }
            ControlAction::Reset => {
                if !live {
                    return Err(wrong_mode());
                }
                self.begin_episode().map_err(internal)?;
            }
            ControlAction::Pause => {
                if !live {
                    return Err(wrong_mode());
                }
                if self.status == SessionStatus::Running {
                    self.status = SessionStatus::Paused;
                }
            }
            ControlAction::Resume => {
                if !live {
                    return Err(wrong_mode());
                }
                if self.status == SessionStatus::Paused {
                    self.status = SessionStatus::Running;
                }
            }
            ControlAction::EndSession => self.close(),
            ControlAction::Submit => {
                if live {
                    return Err(wrong_mode());
                }
                let episode_id = episode_id.ok_or_else(|| ServerMsg::error("bad_message", "submit needs an episode_id"))?;
                self.known_episode_len(&episode_id)?;
                let set = AnnotationSet {
                    annotations: self.pending.remove(&episode_id).unwrap_or_default(),
                    episode_id,
                };
                self.save_annotations(&set).map_err(internal)?;
                return Ok(vec![ServerMsg::AnnotationSaved {
                    episode_id: set.episode_id,
                    annotations: set.annotations.len(),
                }]);
            }
        }
        Ok(Vec::new())
    }

    fn known_episode_len(&self, episode_id: &str) -> Result<usize, ServerMsg> {
        self.store
            .read()
            .expect("episode store lock")
            .get(episode_id)
            .map(|r| r.steps.len())
            .ok_or_else(|| ServerMsg::error("unknown_episode", format!("no recorded episode {episode_id}")))
    }

    fn check_annotation(&self, episode_id: &str, step: u32, advice: &Advice, prev: Option<u32>) -> Result<(), ServerMsg> {
        let len = self.known_episode_len(episode_id)?;
        if step as usize >= len {
            return Err(ServerMsg::error(
                "step_out_of_range",
                format!("step {step} is beyond episode {episode_id} ({len} steps)"),
            ));
        }
        if prev.is_some_and(|p| step <= p) {
            return Err(ServerMsg::error(
                "out_of_order",
                format!("annotation steps must increase strictly; got {step} after {}", prev.unwrap_or(0)),
            ));
        }
        if advice.form() != self.cfg.form {
            return Err(ServerMsg::error(
                "form_mismatch",
                format!("session annotates with {} advice, got {}", self.cfg.form, advice.form()),
            ));
        }
        advice
            .validate(self.cfg.env.n_actions())
            .map_err(|e| ServerMsg::error("bad_advice", e.to_string()))
    }

    fn on_annotate(&mut self, episode_id: String, step: u32, advice: Advice) -> Result<Vec<ServerMsg>, ServerMsg> {
        if self.cfg.mode != Mode::HindsightAnnotate {
            return Err(ServerMsg::error("wrong_mode", "annotate events need a hindsight_annotate session"));
        }
        let prev = self.pending.get(&episode_id).and_then(|v| v.last()).map(|a| a.step);
        self.check_annotation(&episode_id, step, &advice, prev)?;
        self.ledger.record(SupervisionEvent::human(advice.form(), self.ledger.env_steps));
        self.annotations += 1;
        self.pending.entry(episode_id).or_default().push(Annotation {
            step,
            advice: Advice { age: 0, ..advice },
        });
        Ok(Vec::new())
    }

    /// Whole-set submission (HTTP). Charges one unit per annotation.
    pub fn annotate_set(&mut self, set: AnnotationSet) -> Result<AnnotationSet, ServiceError> {
        if self.cfg.mode != Mode::HindsightAnnotate {
            return Err(ServiceError::Unprocessable("annotations need a hindsight_annotate session".into()));
        }
        if self.status == SessionStatus::Closed {
            return Err(ServiceError::Unprocessable(format!("session {} is closed", self.id)));
        }
        let mut prev = None;
        for a in &set.annotations {
            self.check_annotation(&set.episode_id, a.step, &a.advice, prev).map_err(|m| match m {
                ServerMsg::Error { code, text } if code == "unknown_episode" => ServiceError::NotFound(text),
                ServerMsg::Error { text, .. } => ServiceError::Unprocessable(text),
                _ => ServiceError::Unprocessable("invalid annotation".into()),
            })?;
            prev = Some(a.step);
        }
        if set.annotations.is_empty() {
            self.known_episode_len(&set.episode_id).map_err(|_| ServiceError::NotFound(format!("no recorded episode {}", set.episode_id)))?;
        }
        for a in &set.annotations {
            self.ledger.record(SupervisionEvent::human(a.advice.form(), self.ledger.env_steps));
            self.annotations += 1;
        }
        self.save_annotations(&set)?;
        Ok(set)
    }

    fn save_annotations(&self, set: &AnnotationSet) -> Result<(), ServiceError> {
        if let Some(dir) = &self.out_dir {
            set.write(&dir.join("annotations").join(format!("{}.json", set.episode_id)))?;
            self.persist_ledger()?;
        }
        Ok(())
    }

    fn persist_ledger(&self) -> Result<(), ServiceError> {
        if let Some(dir) = &self.out_dir {
            let path = dir.join("sessions").join(&self.id).join("ledger.json");
            fs::write(path, serde_json::to_string_pretty(&self.ledger).map_err(advice_loop::Error::from)?)?;
        }
        Ok(())
    }

    /// Whether the next tick would advance the environment.
    pub fn ready(&self) -> bool {
        self.status == SessionStatus::Running && self.env.is_some() && (!self.cfg.wait_for_advice || !self.queue.is_empty())
    }

    /// One environment step: apply the newest queued advice (older queued
    /// events are superseded), act with the surrogate, emit the frame.
    pub fn tick(&mut self) -> Result<bool, ServiceError> {
        if !self.ready() {
            return Ok(false);
        }
        let net = self.surrogate.clone().expect("live sessions hold a surrogate");
        let env = self.env.as_mut().expect("running sessions hold an env");
        let step = env.steps();
        if let Some(newest) = self.queue.pop_back() {
            self.queue.clear();
            self.current = Some((newest, step));
        }
        let advice = self.current.as_ref().map(|(a, at)| a.aged(step - at));
        let obs = env.obs();
        let state = env.snapshot();
        let enc = encode_advice(advice.as_ref(), self.cfg.env.n_actions())?;
        let action = net.forward(&obs, &enc)?.sample(&mut self.rng);
        let out = env.step(action)?;
        self.ledger.add_env_steps(1);
        let rec = self.rec.as_mut().expect("running sessions hold a record");
        rec.success |= out.success;
        rec.steps.push(TrajectoryStep {
            t: step,
            obs,
            state,
            action,
            reward: out.reward,
            advice_low: advice,
            advice_high: None,
            done: out.done(),
        });
        if out.done() {
            self.status = SessionStatus::EpisodeDone;
        }
        let f = self.frame();
        self.broadcast(f);
        if out.done() {
            self.finish_episode()?;
        }
        Ok(true)
    }

    fn finish_episode(&mut self) -> Result<(), ServiceError> {
        let rec = self.rec.take().expect("episode in flight");
        let msg = ServerMsg::EpisodeEnd {
            session: self.id.clone(),
            episode: self.episode,
            episode_id: rec.episode_id.clone(),
            success: rec.success,
            steps: rec.steps.len() as u32,
        };
        if let Some(dir) = &self.out_dir {
            let path = dir.join("sessions").join(&self.id).join("trajectories.jsonl");
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            let mut w = BufWriter::new(file);
            write_record(&mut w, &rec)?;
            w.flush()?;
            self.persist_ledger()?;
        }
        self.log.push(rec.episode_id.clone());
        self.store.write().expect("episode store lock").insert(rec.episode_id.clone(), rec);
        self.broadcast(msg);
        Ok(())
    }
}
