//! Advice forms and their fixed-width feature encoding.
//!
//! Every form encodes to the same width: a 6-slot form-tag one-hot followed
//! by the form's payload, zero-padded to the widest payload. The all-zero
//! vector is reserved for "no advice", which is also what the advice-free
//! policy sees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Color, EnvKind, ObjectKind, Verb};

/// Scale used to normalize advice age into `[0, 1]`.
pub const AGE_SCALE: f64 = 20.0;

pub const N_FORMS: usize = 6;
/// verb(4) + color(6) + object(4) + (x, y, has_coord).
const SUBGOAL_PAYLOAD: usize = 4 + 6 + 4 + 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdviceForm {
    Action,
    Direction,
    Cardinal,
    Waypoint,
    OffsetWaypoint,
    Subgoal,
}

impl AdviceForm {
    pub const ALL: [AdviceForm; N_FORMS] = [
        AdviceForm::Action,
        AdviceForm::Direction,
        AdviceForm::Cardinal,
        AdviceForm::Waypoint,
        AdviceForm::OffsetWaypoint,
        AdviceForm::Subgoal,
    ];

    pub fn tag(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AdviceForm::Action => "action",
            AdviceForm::Direction => "direction",
            AdviceForm::Cardinal => "cardinal",
            AdviceForm::Waypoint => "waypoint",
            AdviceForm::OffsetWaypoint => "offset_waypoint",
            AdviceForm::Subgoal => "subgoal",
        }
    }

    /// Forms a scripted coach can produce for an environment.
    pub fn valid_for(env: EnvKind) -> &'static [AdviceForm] {
        match env {
            EnvKind::Gridworld => &[AdviceForm::Action, AdviceForm::OffsetWaypoint, AdviceForm::Subgoal],
            EnvKind::Pointmaze => &[
                AdviceForm::Direction,
                AdviceForm::Cardinal,
                AdviceForm::Waypoint,
                AdviceForm::OffsetWaypoint,
            ],
        }
    }

    pub fn check_env(self, env: EnvKind) -> Result<()> {
        let valid = Self::valid_for(env);
        if valid.contains(&self) {
            Ok(())
        } else {
            let names: Vec<_> = valid.iter().map(|f| f.as_str()).collect();
            Err(Error::Config(format!(
                "advice form `{}` is not defined for {env}; valid forms: {}",
                self.as_str(),
                names.join(", ")
            )))
        }
    }
}

impl std::fmt::Display for AdviceForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AdviceForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AdviceForm::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Advice(format!("unknown advice form `{s}`")))
    }
}

/// Compass directions in encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cardinal {
    N,
    S,
    E,
    W,
}

impl Cardinal {
    pub const ALL: [Cardinal; 4] = [Cardinal::N, Cardinal::S, Cardinal::E, Cardinal::W];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Unit vector in grid coordinates (y grows downward, so north is -y).
    pub fn unit(self) -> (f64, f64) {
        match self {
            Cardinal::N => (0.0, -1.0),
            Cardinal::S => (0.0, 1.0),
            Cardinal::E => (1.0, 0.0),
            Cardinal::W => (-1.0, 0.0),
        }
    }

    /// The cardinal with the largest dot product against `(dx, dy)`; ties go
    /// to the earlier entry in N, S, E, W order.
    pub fn from_vector(dx: f64, dy: f64) -> Cardinal {
        let mut best = Cardinal::N;
        let mut best_dot = f64::NEG_INFINITY;
        for c in Cardinal::ALL {
            let (ux, uy) = c.unit();
            let d = ux * dx + uy * dy;
            if d > best_dot {
                best_dot = d;
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum AdviceKind {
    Action {
        action_index: usize,
    },
    Direction {
        dx: f64,
        dy: f64,
    },
    Cardinal {
        dir: Cardinal,
    },
    Waypoint {
        x: f64,
        y: f64,
    },
    OffsetWaypoint {
        dx: f64,
        dy: f64,
        #[serde(default)]
        interact: bool,
    },
    Subgoal {
        verb: Verb,
        color: Color,
        object: ObjectKind,
        #[serde(default)]
        coord: Option<(i32, i32)>,
    },
}

impl AdviceKind {
    pub fn form(&self) -> AdviceForm {
        match self {
            AdviceKind::Action { .. } => AdviceForm::Action,
            AdviceKind::Direction { .. } => AdviceForm::Direction,
            AdviceKind::Cardinal { .. } => AdviceForm::Cardinal,
            AdviceKind::Waypoint { .. } => AdviceForm::Waypoint,
            AdviceKind::OffsetWaypoint { .. } => AdviceForm::OffsetWaypoint,
            AdviceKind::Subgoal { .. } => AdviceForm::Subgoal,
        }
    }
}

/// One piece of coaching plus how many steps ago it was issued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    #[serde(flatten)]
    pub kind: AdviceKind,
    #[serde(default)]
    pub age: u32,
}

impl Advice {
    pub fn new(kind: AdviceKind) -> Advice {
        Advice { kind, age: 0 }
    }

    pub fn form(&self) -> AdviceForm {
        self.kind.form()
    }

    pub fn aged(&self, steps: u32) -> Advice {
        Advice {
            kind: self.kind.clone(),
            age: self.age + steps,
        }
    }

    pub fn age_normalized(&self) -> f64 {
        (self.age as f64 / AGE_SCALE).clamp(0.0, 1.0)
    }

    /// Checks the per-form invariants.
    pub fn validate(&self, n_actions: usize) -> Result<()> {
        match self.kind {
            AdviceKind::Action { action_index } if action_index >= n_actions => Err(Error::Advice(
                format!("action_index {action_index} out of range for {n_actions} actions"),
            )),
            AdviceKind::Direction { dx, dy } => {
                if !dx.is_finite() || !dy.is_finite() {
                    return Err(Error::Advice("non-finite direction".into()));
                }
                let n = dx.hypot(dy);
                if n != 0.0 && (n - 1.0).abs() > 1e-6 {
                    return Err(Error::Advice(format!("direction norm {n} is not 1")));
                }
                Ok(())
            }
            AdviceKind::Waypoint { x, y } | AdviceKind::OffsetWaypoint { dx: x, dy: y, .. }
                if !x.is_finite() || !y.is_finite() =>
            {
                Err(Error::Advice("non-finite waypoint".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Width of every encoded advice vector for an env with `n_actions` actions.
pub fn advice_width(n_actions: usize) -> usize {
    N_FORMS + n_actions.max(SUBGOAL_PAYLOAD)
}

/// Raw (pre-embedding) advice features; `None` encodes as all zeros.
pub fn encode_advice(advice: Option<&Advice>, n_actions: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; advice_width(n_actions)];
    if let Some(a) = advice {
        encode_into(a, n_actions, &mut out)?;
    }
    Ok(out)
}

/// Writes the encoding of `advice` into a zeroed slice of `advice_width` length.
pub fn encode_into(advice: &Advice, n_actions: usize, out: &mut [f64]) -> Result<()> {
    advice.validate(n_actions)?;
    if out.len() != advice_width(n_actions) {
        return Err(Error::Shape(format!(
            "advice buffer has {} slots, expected {}",
            out.len(),
            advice_width(n_actions)
        )));
    }
    out.fill(0.0);
    out[advice.form().tag()] = 1.0;
    let p = &mut out[N_FORMS..];
    match advice.kind {
        AdviceKind::Action { action_index } => p[action_index] = 1.0,
        AdviceKind::Direction { dx, dy } => {
            p[0] = dx;
            p[1] = dy;
        }
        AdviceKind::Cardinal { dir } => p[dir.index()] = 1.0,
        AdviceKind::Waypoint { x, y } => {
            p[0] = x;
            p[1] = y;
        }
        AdviceKind::OffsetWaypoint { dx, dy, interact } => {
            p[0] = dx;
            p[1] = dy;
            p[2] = if interact { 1.0 } else { 0.0 };
            p[3] = advice.age_normalized();
        }
        AdviceKind::Subgoal {
            verb,
            color,
            object,
            coord,
        } => {
            p[verb.index()] = 1.0;
            p[4 + color.index()] = 1.0;
            p[10 + object.index()] = 1.0;
            if let Some((x, y)) = coord {
                p[14] = x as f64;
                p[15] = y as f64;
                p[16] = 1.0;
            }
        }
    }
    Ok(())
}

/// Human-readable rendering, used by the UI and logs only.
pub fn describe(advice: &Advice) -> String {
    match &advice.kind {
        AdviceKind::Action { action_index } => format!("take action {action_index}"),
        AdviceKind::Direction { dx, dy } => format!("head ({dx:.2}, {dy:.2})"),
        AdviceKind::Cardinal { dir } => format!("go {dir:?}"),
        AdviceKind::Waypoint { x, y } => format!("move to ({x:.1}, {y:.1})"),
        AdviceKind::OffsetWaypoint { dx, dy, interact } => {
            format!("move by ({dx:.1}, {dy:.1}){}", if *interact { " and interact" } else { "" })
        }
        AdviceKind::Subgoal {
            verb,
            color,
            object,
            coord,
        } => {
            let mut s = format!("{} the {} {}", verb.name(), color.name(), object.name());
            if let Some((x, y)) = coord {
                s.push_str(&format!(" at [{x}, {y}]"));
            }
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(kind: AdviceKind, n: usize) -> Vec<f64> {
        encode_advice(Some(&Advice::new(kind)), n).unwrap()
    }

    #[test]
    fn action_advice_one_hot() {
        let v = enc(AdviceKind::Action { action_index: 2 }, 7);
        assert_eq!(v.len(), advice_width(7));
        assert_eq!(v[0], 1.0);
        assert_eq!(v[N_FORMS + 2], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn cardinal_east_payload() {
        let v = enc(AdviceKind::Cardinal { dir: Cardinal::E }, 7);
        assert_eq!(v[AdviceForm::Cardinal.tag()], 1.0);
        assert_eq!(&v[N_FORMS..N_FORMS + 4], &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn offset_waypoint_payload_copies_fields() {
        let v = enc(
            AdviceKind::OffsetWaypoint {
                dx: 2.0,
                dy: 3.0,
                interact: true,
            },
            7,
        );
        assert_eq!(&v[N_FORMS..N_FORMS + 4], &[2.0, 3.0, 1.0, 0.0]);
    }

    #[test]
    fn age_normalization_clamps() {
        let a = Advice {
            kind: AdviceKind::OffsetWaypoint {
                dx: 0.0,
                dy: 1.0,
                interact: false,
            },
            age: 10,
        };
        assert_eq!(a.age_normalized(), 0.5);
        assert_eq!(a.aged(100).age_normalized(), 1.0);
    }

    #[test]
    fn no_advice_is_zero_and_same_width() {
        let v = encode_advice(None, 9).unwrap();
        assert_eq!(v.len(), advice_width(9));
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn action_out_of_range_is_error() {
        let a = Advice::new(AdviceKind::Action { action_index: 7 });
        assert!(encode_advice(Some(&a), 7).is_err());
    }

    #[test]
    fn unknown_form_tag_is_error() {
        let r: std::result::Result<Advice, _> = serde_json::from_str(r#"{"form":"telepathy","age":0}"#);
        assert!(r.is_err());
        assert!("telepathy".parse::<AdviceForm>().is_err());
    }

    #[test]
    fn non_unit_direction_rejected() {
        let a = Advice::new(AdviceKind::Direction { dx: 0.5, dy: 0.5 });
        assert!(encode_advice(Some(&a), 9).is_err());
        let z = Advice::new(AdviceKind::Direction { dx: 0.0, dy: 0.0 });
        assert!(encode_advice(Some(&z), 9).is_ok());
    }

    #[test]
    fn cardinal_from_vector_and_ties() {
        assert_eq!(Cardinal::from_vector(0.9, 0.1), Cardinal::E);
        assert_eq!(Cardinal::from_vector(0.0, -1.0), Cardinal::N);
        // exact diagonal ties resolve in N, S, E, W order
        assert_eq!(Cardinal::from_vector(1.0, -1.0), Cardinal::N);
        assert_eq!(Cardinal::from_vector(1.0, 1.0), Cardinal::S);
    }

    #[test]
    fn json_shape() {
        let a = Advice {
            kind: AdviceKind::OffsetWaypoint {
                dx: 2.0,
                dy: -1.0,
                interact: false,
            },
            age: 3,
        };
        let s = serde_json::to_value(&a).unwrap();
        assert_eq!(s["form"], "offset_waypoint");
        assert_eq!(s["age"], 3);
        let back: Advice = serde_json::from_value(s).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn env_form_validation_names_valid_forms() {
        let err = AdviceForm::Direction.check_env(EnvKind::Gridworld).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("offset_waypoint") && msg.contains("subgoal"), "{msg}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn action_encoding_injective(a in 0usize..7, b in 0usize..7) {
                let ea = enc(AdviceKind::Action { action_index: a }, 7);
                let eb = enc(AdviceKind::Action { action_index: b }, 7);
                prop_assert_eq!(a == b, ea == eb);
                prop_assert!(ea.iter().any(|&x| x != 0.0));
            }

            #[test]
            fn cardinal_scale_invariant(dx in -5.0f64..5.0, dy in -5.0f64..5.0, k in 0.01f64..100.0) {
                prop_assert_eq!(Cardinal::from_vector(dx, dy), Cardinal::from_vector(dx * k, dy * k));
            }
        }
    }
}
