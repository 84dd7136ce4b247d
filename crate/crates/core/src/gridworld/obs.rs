use super::{Cell, GridState};
use crate::task::{ObjectKind, TASK_ENCODING_LEN};

/// agent(1) + wall(1) + door color x {open, closed, locked}(18) + object kind x color(18)
pub const N_CHANNELS: usize = 38;
/// Carried object: kind(ball/box/key) x color.
pub const N_CARRY: usize = 18;

const CH_AGENT: usize = 0;
const CH_WALL: usize = 1;
const CH_DOOR: usize = 2;
const CH_OBJECT: usize = 20;

fn padded_side(width: i32, height: i32) -> i32 {
    2 * width.max(height) - 1
}

/// Observation length for a grid of the given size.
pub fn obs_len(width: i32, height: i32) -> usize {
    let p = padded_side(width, height) as usize;
    p * p * N_CHANNELS + N_CARRY + TASK_ENCODING_LEN
}

fn portable_index(kind: ObjectKind, color_index: usize) -> usize {
    let k = match kind {
        ObjectKind::Ball => 0,
        ObjectKind::Box => 1,
        ObjectKind::Key => 2,
        ObjectKind::Door => unreachable!("doors are never portable"),
    };
    k * 6 + color_index
}

/// Egocentric encoding: the world is rotated so the agent faces up and placed
/// in a padded square grid with the agent at the fixed center cell.
pub fn egocentric_obs(s: &GridState) -> Vec<f64> {
    let p = padded_side(s.width, s.height);
    let c = p / 2;
    let mut out = vec![0.0; obs_len(s.width, s.height)];
    let fwd = s.agent.dir.delta();
    let right = s.agent.dir.right().delta();
    let slot = |ex: i32, ey: i32, ch: usize| ((ey * p + ex) as usize) * N_CHANNELS + ch;

    for y in 0..s.height {
        for x in 0..s.width {
            let (rx, ry) = (x - s.agent.x, y - s.agent.y);
            let ex = c + rx * right.0 + ry * right.1;
            let ey = c - (rx * fwd.0 + ry * fwd.1);
            let ch = match s.get(x, y) {
                Cell::Floor => continue,
                Cell::Wall => CH_WALL,
                Cell::Door { color, open, locked } => {
                    let state = if open {
                        0
                    } else if locked {
                        2
                    } else {
                        1
                    };
                    CH_DOOR + color.index() * 3 + state
                }
                Cell::Object(o) => CH_OBJECT + portable_index(o.kind, o.color.index()),
            };
            out[slot(ex, ey, ch)] = 1.0;
        }
    }
    out[slot(c, c, CH_AGENT)] = 1.0;

    let base = (p * p) as usize * N_CHANNELS;
    if let Some(o) = s.agent.carrying {
        out[base + portable_index(o.kind, o.color.index())] = 1.0;
    }
    let mut task = Vec::with_capacity(TASK_ENCODING_LEN);
    s.task.encode_into(&mut task);
    out[base + N_CARRY..].copy_from_slice(&task);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{grid_reset, Dir, GridGenConfig};

    #[test]
    fn length_for_8x8() {
        // 15 * 15 * 38 + 18 + 13, from the channel table above
        assert_eq!(obs_len(8, 8), 8581);
        let (s, _, o) = grid_reset(3, &GridGenConfig::default()).unwrap();
        assert_eq!(o.len(), 8581);
        assert_eq!(egocentric_obs(&s), o);
    }

    #[test]
    fn agent_channel_only_at_center() {
        for seed in 0..20 {
            let (s, _, o) = grid_reset(seed, &GridGenConfig::default()).unwrap();
            let p = padded_side(s.width, s.height) as usize;
            let center = p / 2;
            for i in 0..p * p {
                let v = o[i * N_CHANNELS + CH_AGENT];
                if i == center * p + center {
                    assert_eq!(v, 1.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn rotation_invariance() {
        for seed in 0..20 {
            let (s, _, o) = grid_reset(seed, &GridGenConfig::default()).unwrap();
            let mut r = s.clone();
            for _ in 0..4 {
                r = r.rotated_cw();
                assert_eq!(egocentric_obs(&r), o, "seed {seed}");
            }
        }
    }

    #[test]
    fn facing_wall_is_directly_above_center() {
        let task = crate::task::Task::gridworld(crate::task::Verb::Goto, crate::task::Color::Red, ObjectKind::Ball).unwrap();
        let mut s = crate::gridworld::GridState::empty(8, 8, task);
        s.agent.x = 1;
        s.agent.y = 1;
        s.agent.dir = Dir::W;
        let o = egocentric_obs(&s);
        let p = padded_side(s.width, s.height) as usize;
        let c = p / 2;
        assert_eq!(o[((c - 1) * p + c) * N_CHANNELS + CH_WALL], 1.0);
    }
}
