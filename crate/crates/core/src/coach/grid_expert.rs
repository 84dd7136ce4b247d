//! Scripted gridworld bot: shortest action plan to the next milestone,
//! interact on arrival.

use serde::{Deserialize, Serialize};

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::gridworld::{Cell, Dir, GridAction, GridState, Object};
use crate::search::NEIGHBORS;
use crate::task::{Color, ObjectKind, TaskSpec, Verb};

/// What the expert is currently working toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Milestone {
    GotoObject { obj: Object, at: (i32, i32) },
    PickupObject { obj: Object, at: (i32, i32) },
    GotoDoor { color: Color, at: (i32, i32) },
    OpenDoor { color: Color, at: (i32, i32) },
    DropCarried { obj: Object },
    Done,
}

impl Milestone {
    /// Whether `s` already satisfies this milestone.
    pub fn reached(&self, s: &GridState) -> bool {
        match *self {
            Milestone::GotoObject { obj, at } => s.agent.front() == at && s.get(at.0, at.1) == Cell::Object(obj),
            Milestone::PickupObject { obj, .. } => s.agent.carrying == Some(obj),
            Milestone::GotoDoor { at, .. } => s.agent.front() == at,
            Milestone::OpenDoor { at, .. } => matches!(s.get(at.0, at.1), Cell::Door { open: true, .. }),
            Milestone::DropCarried { obj } => s.agent.carrying != Some(obj),
            Milestone::Done => s.done,
        }
    }

    /// `(verb, color, object, cell)` of the matching subgoal template.
    pub fn template(&self) -> Option<(Verb, Color, ObjectKind, (i32, i32))> {
        match *self {
            Milestone::GotoObject { obj, at } => Some((Verb::Goto, obj.color, obj.kind, at)),
            Milestone::PickupObject { obj, at } => Some((Verb::Pickup, obj.color, obj.kind, at)),
            Milestone::GotoDoor { color, at } => Some((Verb::Goto, color, ObjectKind::Door, at)),
            Milestone::OpenDoor { color, at } => Some((Verb::Open, color, ObjectKind::Door, at)),
            Milestone::DropCarried { .. } | Milestone::Done => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpertStep {
    pub action: GridAction,
    pub milestone: Milestone,
}

fn turn_toward(s: &GridState, want: Dir) -> GridAction {
    if s.agent.dir.right() == want {
        GridAction::TurnRight
    } else {
        GridAction::TurnLeft
    }
}

/// Extra actions needed to step into `(x, y)`: 0 for open ground, 1 for a
/// door that must be toggled first, `None` if impassable.
fn entry_cost(s: &GridState, x: i32, y: i32) -> Option<u32> {
    match s.get(x, y) {
        Cell::Floor | Cell::Door { open: true, .. } => Some(0),
        Cell::Door { locked: false, .. } => Some(1),
        Cell::Door { color, locked: true, .. } if s.agent.carrying == Some(Object::new(ObjectKind::Key, color)) => Some(1),
        _ => None,
    }
}

type Pose = (i32, i32, Dir);

/// Cheapest action sequence that ends facing one of `targets`, searched over
/// (cell, heading) with unit action costs. Returns the actions and the pose
/// before each one.
fn navigate(s: &GridState, targets: &[(i32, i32)]) -> Option<(Vec<GridAction>, Vec<Pose>)> {
    let idx = |p: Pose| ((p.1 * s.width + p.0) as usize) * 4 + p.2.index();
    let n = (s.width * s.height) as usize * 4;
    let mut dist = vec![u32::MAX; n];
    let mut parent: Vec<Option<(Pose, &'static [GridAction])>> = vec![None; n];
    let start = (s.agent.x, s.agent.y, s.agent.dir);
    let facing = |p: Pose| {
        let (dx, dy) = p.2.delta();
        targets.contains(&(p.0 + dx, p.1 + dy))
    };
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    dist[idx(start)] = 0;
    heap.push(Reverse((0u32, seq, start.0, start.1, start.2.index())));
    let mut found = None;
    while let Some(Reverse((d, _, x, y, di))) = heap.pop() {
        let p = (x, y, Dir::from_index(di));
        if d > dist[idx(p)] {
            continue;
        }
        if facing(p) {
            found = Some(p);
            break;
        }
        let (dx, dy) = p.2.delta();
        let mut edges: Vec<(Pose, u32, &'static [GridAction])> = vec![
            ((x, y, p.2.left()), 1, &[GridAction::TurnLeft]),
            ((x, y, p.2.right()), 1, &[GridAction::TurnRight]),
        ];
        match entry_cost(s, x + dx, y + dy) {
            Some(0) => edges.push(((x + dx, y + dy, p.2), 1, &[GridAction::Forward])),
            Some(_) => edges.push(((x + dx, y + dy, p.2), 2, &[GridAction::Toggle, GridAction::Forward])),
            None => {}
        }
        for (q, c, acts) in edges {
            if d + c < dist[idx(q)] {
                dist[idx(q)] = d + c;
                parent[idx(q)] = Some((p, acts));
                seq += 1;
                heap.push(Reverse((d + c, seq, q.0, q.1, q.2.index())));
            }
        }
    }
    let mut cur = found?;
    let mut steps: Vec<(Pose, &'static [GridAction])> = Vec::new();
    while cur != start {
        let (prev, acts) = parent[idx(cur)].expect("parent chain");
        steps.push((prev, acts));
        cur = prev;
    }
    steps.reverse();
    let mut actions = Vec::new();
    let mut poses = Vec::new();
    for (pose, acts) in steps {
        for &a in acts {
            actions.push(a);
            poses.push(pose);
        }
    }
    Some((actions, poses))
}

/// First step of a navigation plan, with closed doors on the way surfacing
/// as their own goto/open milestones.
fn follow(s: &GridState, actions: &[GridAction], poses: &[Pose], goal: Milestone) -> ExpertStep {
    let door = actions.iter().zip(poses).enumerate().find_map(|(i, (&a, p))| {
        if a != GridAction::Toggle {
            return None;
        }
        let (dx, dy) = p.2.delta();
        let at = (p.0 + dx, p.1 + dy);
        match s.get(at.0, at.1) {
            Cell::Door { color, .. } => Some((i, color, at)),
            _ => None,
        }
    });
    let milestone = match door {
        Some((0, color, at)) => Milestone::OpenDoor { color, at },
        Some((_, color, at)) => Milestone::GotoDoor { color, at },
        None => goal,
    };
    ExpertStep {
        action: actions[0],
        milestone,
    }
}

fn droppable(s: &GridState, (x, y): (i32, i32), strict: bool) -> bool {
    s.get(x, y) == Cell::Floor
        && !(strict && NEIGHBORS.iter().any(|(dx, dy)| matches!(s.get(x + dx, y + dy), Cell::Door { .. })))
}

fn drop_step(s: &GridState, obj: Object) -> Result<ExpertStep> {
    let milestone = Milestone::DropCarried { obj };
    let front = s.agent.front();
    for strict in [true, false] {
        if droppable(s, front, strict) {
            return Ok(ExpertStep {
                action: GridAction::Drop,
                milestone,
            });
        }
        let any = Dir::ALL.iter().any(|d| {
            let (dx, dy) = d.delta();
            droppable(s, (s.agent.x + dx, s.agent.y + dy), strict)
        });
        if any {
            return Ok(ExpertStep {
                action: GridAction::TurnLeft,
                milestone,
            });
        }
    }
    // Boxed in: walk along any free cell and try again there.
    for d in Dir::ALL {
        let (dx, dy) = d.delta();
        if s.get(s.agent.x + dx, s.agent.y + dy).walkable() {
            let action = if s.agent.dir == d {
                GridAction::Forward
            } else {
                turn_toward(s, d)
            };
            return Ok(ExpertStep { action, milestone });
        }
    }
    Err(Error::Expert("nowhere to drop the carried object".into()))
}

/// Next expert action for the state's task.
pub fn grid_expert(s: &GridState) -> Result<ExpertStep> {
    let TaskSpec::Gridworld { verb, color, object } = s.task.spec else {
        return Err(Error::Expert("gridworld expert needs a gridworld task".into()));
    };
    if s.task_satisfied() {
        return Ok(ExpertStep {
            action: GridAction::Done,
            milestone: Milestone::Done,
        });
    }
    let target_obj = Object::new(object, color);
    let targets: Vec<(i32, i32)> = match verb {
        Verb::Open => s
            .doors()
            .filter(|(_, d)| matches!(d, Cell::Door { color: c, .. } if *c == color))
            .map(|(p, _)| p)
            .collect(),
        _ => s.objects().filter(|(_, o)| *o == target_obj).map(|(p, _)| p).collect(),
    };
    if targets.is_empty() {
        return Err(Error::Expert(format!("no {} in the grid", s.task.task_id)));
    }
    let key = Object::new(ObjectKind::Key, color);
    if verb == Verb::Open
        && s.agent.carrying != Some(key)
        && targets
            .iter()
            .all(|&(x, y)| matches!(s.get(x, y), Cell::Door { locked: true, .. }))
    {
        return fetch_key(s, color);
    }

    match navigate(s, &targets) {
        Some((actions, _)) if actions.is_empty() => {
            let at = s.agent.front();
            match verb {
                Verb::Open => Ok(ExpertStep {
                    action: GridAction::Toggle,
                    milestone: Milestone::OpenDoor { color, at },
                }),
                Verb::Pickup => match s.agent.carrying {
                    Some(held) => drop_step(s, held),
                    None => Ok(ExpertStep {
                        action: GridAction::Pickup,
                        milestone: Milestone::PickupObject { obj: target_obj, at },
                    }),
                },
                _ => Ok(ExpertStep {
                    action: GridAction::Done,
                    milestone: Milestone::Done,
                }),
            }
        }
        Some((actions, _)) if verb == Verb::Pickup && s.agent.carrying.is_some() && actions.iter().all(|a| !matches!(a, GridAction::Forward | GridAction::Toggle)) => {
            // Hands must be free before the pickup; drop here, beside the target.
            drop_step(s, s.agent.carrying.expect("checked"))
        }
        Some((actions, poses)) => {
            let last = *poses.last().expect("non-empty plan");
            let end = final_front(&actions, last);
            let goal = match verb {
                Verb::Open => Milestone::GotoDoor { color, at: end },
                _ => Milestone::GotoObject { obj: target_obj, at: end },
            };
            Ok(follow(s, &actions, &poses, goal))
        }
        None => {
            // Blocked: a locked door stands in the way. Fetch its key.
            let locked: Vec<Color> = s
                .doors()
                .filter_map(|(_, d)| match d {
                    Cell::Door { color, locked: true, .. } => Some(color),
                    _ => None,
                })
                .collect();
            for c in locked {
                if s.objects().any(|(_, o)| o == Object::new(ObjectKind::Key, c)) {
                    return fetch_key(s, c);
                }
            }
            Err(Error::Expert(format!("no route to {}", s.task.task_id)))
        }
    }
}

/// Cell faced after executing the last action from pose `p`.
fn final_front(actions: &[GridAction], p: Pose) -> (i32, i32) {
    let (x, y, d) = p;
    let (x, y, d) = match actions.last() {
        Some(GridAction::TurnLeft) => (x, y, d.left()),
        Some(GridAction::TurnRight) => (x, y, d.right()),
        Some(GridAction::Forward) => (x + d.delta().0, y + d.delta().1, d),
        _ => (x, y, d),
    };
    (x + d.delta().0, y + d.delta().1)
}

fn fetch_key(s: &GridState, color: Color) -> Result<ExpertStep> {
    let key = Object::new(ObjectKind::Key, color);
    if let Some(held) = s.agent.carrying {
        if held != key {
            return drop_step(s, held);
        }
        return Err(Error::Expert("already holding the key".into()));
    }
    let keys: Vec<(i32, i32)> = s.objects().filter(|(_, o)| *o == key).map(|(p, _)| p).collect();
    if keys.is_empty() {
        return Err(Error::Expert(format!("no {} key for the locked door", color.name())));
    }
    match navigate(s, &keys) {
        Some((actions, _)) if actions.is_empty() => Ok(ExpertStep {
            action: GridAction::Pickup,
            milestone: Milestone::PickupObject {
                obj: key,
                at: s.agent.front(),
            },
        }),
        Some((actions, poses)) => {
            let at = final_front(&actions, *poses.last().expect("non-empty plan"));
            Ok(follow(s, &actions, &poses, Milestone::GotoObject { obj: key, at }))
        }
        None => Err(Error::Expert("key unreachable".into())),
    }
}
