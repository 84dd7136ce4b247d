use std::cmp::Reverse;
use std::collections::BinaryHeap;

use proptest::prelude::*;

use super::*;
use crate::env::EnvConfig;
use crate::gridworld::{grid_reset, GridGenConfig, Object};
use crate::pointmaze::{maze_generate, point_reset, PointConfig};
use crate::task::{Color, Task, Verb};

/// Independent unit-weight Dijkstra over open cells.
fn dijkstra(m: &MazeGrid, s: (i32, i32), g: (i32, i32)) -> Option<u32> {
    let w = m.width;
    let mut dist = vec![u32::MAX; (m.width * m.height) as usize];
    let mut heap = BinaryHeap::new();
    dist[(s.1 * w + s.0) as usize] = 0;
    heap.push(Reverse((0u32, s)));
    while let Some(Reverse((d, (x, y)))) = heap.pop() {
        if (x, y) == g {
            return Some(d);
        }
        if d > dist[(y * w + x) as usize] {
            continue;
        }
        for (nx, ny) in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
            if m.is_open(nx, ny) && d + 1 < dist[(ny * w + nx) as usize] {
                dist[(ny * w + nx) as usize] = d + 1;
                heap.push(Reverse((d + 1, (nx, ny))));
            }
        }
    }
    None
}

#[test]
fn planner_matches_dijkstra_on_500_mazes() {
    for seed in 0..500 {
        let m = maze_generate(seed, 6, 6).unwrap();
        let p = plan_shortest(&m, m.start_cell, m.goal_cell).unwrap();
        assert_eq!(Some(p.cells.len() as u32), dijkstra(&m, m.start_cell, m.goal_cell), "seed {seed}");
        let mut prev = m.start_cell;
        for &c in &p.cells {
            assert!(m.is_open(c.0, c.1));
            assert_eq!((c.0 - prev.0).abs() + (c.1 - prev.1).abs(), 1);
            prev = c;
        }
        assert_eq!(prev, m.goal_cell);
    }
}

#[test]
fn planner_trivial_cases() {
    let m = MazeGrid::from_ascii(&["#######", "#S....#", "#######"]).unwrap();
    assert!(plan_shortest(&m, (1, 1), (1, 1)).unwrap().cells.is_empty());
    assert_eq!(plan_shortest(&m, (1, 1), (5, 1)).unwrap().cells.len(), 4);
    let long = MazeGrid::from_ascii(&["########", "#......#", "########"]).unwrap();
    assert_eq!(plan_shortest(&long, (1, 1), (6, 1)).unwrap().cells.len(), 5);
    let split = MazeGrid::from_ascii(&["#####", "#.#.#", "#####"]).unwrap();
    assert!(matches!(plan_shortest(&split, (1, 1), (3, 1)), Err(Error::Planning { .. })));
}

#[test]
fn plan_cursor_advances() {
    let mut p = Plan {
        cells: vec![(1, 0), (2, 0), (3, 0)],
        cursor: 0,
    };
    p.advance_to((2, 0));
    assert_eq!(p.next(), Some((3, 0)));
    p.advance_to((9, 9));
    assert_eq!(p.next(), Some((3, 0)));
}

fn run_point_expert(seed: u64, beta: f64) -> bool {
    let (mut s, _, _) = point_reset(seed, &PointConfig::default()).unwrap();
    while !s.done {
        let a = heading_action(point_direction(&s, beta).unwrap());
        if s.step(a).unwrap().success {
            return true;
        }
    }
    false
}

#[test]
fn maze_expert_succeeds_on_100_random_mazes() {
    let ok = (1000..1100).filter(|&seed| run_point_expert(seed, DEFAULT_BETA)).count();
    assert!(ok >= 95, "expert solved {ok}/100");
}

#[test]
fn offset_waypoint_is_waypoint_minus_pos() {
    for seed in 0..100 {
        let (mut s, _, _) = point_reset(seed, &PointConfig::default()).unwrap();
        for _ in 0..seed % 7 {
            if s.done {
                break;
            }
            s.step(heading_action(point_direction(&s, DEFAULT_BETA).unwrap())).unwrap();
        }
        let env = EnvState::Point(s.clone());
        let mut wp = Coach::new(CoachConfig::new(AdviceForm::Waypoint), EnvKind::Pointmaze, 0).unwrap();
        let mut off = Coach::new(CoachConfig::new(AdviceForm::OffsetWaypoint), EnvKind::Pointmaze, 0).unwrap();
        let (AdviceKind::Waypoint { x, y }, AdviceKind::OffsetWaypoint { dx, dy, interact }) =
            (wp.advise(&env).unwrap().advice.kind, off.advise(&env).unwrap().advice.kind)
        else {
            panic!("wrong forms")
        };
        assert!(!interact);
        assert!((x - (dx + s.pos.0)).abs() <= 1e-9 && (y - (dy + s.pos.1)).abs() <= 1e-9);
    }
}

#[test]
fn offset_example_is_plain_subtraction() {
    // agent at (1.0, 1.0), next waypoint center (3.0, 4.0) under a shifted cell frame
    let m = MazeGrid::from_ascii(&["#####", "#S..#", "#...#", "#...#", "#..G#", "#####"]).unwrap();
    let mut s = PointState::new(m, 0, &PointConfig::default());
    s.pos = (1.0, 1.0);
    let adv = AdviceKind::OffsetWaypoint {
        dx: 3.0 - s.pos.0,
        dy: 4.0 - s.pos.1,
        interact: false,
    };
    assert_eq!(adv, AdviceKind::OffsetWaypoint { dx: 2.0, dy: 3.0, interact: false });
}

#[test]
fn cardinal_follows_direction() {
    assert_eq!(Cardinal::from_vector(0.9, 0.1), Cardinal::E);
    for seed in 0..50 {
        let (s, _, _) = point_reset(seed, &PointConfig::default()).unwrap();
        let env = EnvState::Point(s.clone());
        let mut c = Coach::new(CoachConfig::new(AdviceForm::Cardinal), EnvKind::Pointmaze, 0).unwrap();
        let d = point_direction(&s, DEFAULT_BETA).unwrap();
        let AdviceKind::Cardinal { dir } = c.advise(&env).unwrap().advice.kind else { panic!() };
        assert_eq!(dir, Cardinal::from_vector(d.0, d.1));
    }
}

#[test]
fn direction_advice_has_unit_norm() {
    for seed in 0..100 {
        let (s, _, _) = point_reset(seed, &PointConfig::default()).unwrap();
        let env = EnvState::Point(s);
        let mut c = Coach::new(CoachConfig::new(AdviceForm::Direction), EnvKind::Pointmaze, 0).unwrap();
        let AdviceKind::Direction { dx, dy } = c.advise(&env).unwrap().advice.kind else { panic!() };
        assert!(((dx * dx + dy * dy).sqrt() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn waypoint_advice_persists_and_ages_until_reached() {
    let m = MazeGrid::from_ascii(&["#######", "#S...G#", "#######"]).unwrap();
    let mut env = EnvState::Point(PointState::new(m, 0, &PointConfig::default()));
    let mut c = Coach::new(CoachConfig::new(AdviceForm::OffsetWaypoint), EnvKind::Pointmaze, 0).unwrap();
    let first = c.advise(&env).unwrap();
    assert!(first.fresh);
    let mut rewards = 0.0;
    let mut age = 0;
    loop {
        let out = env.step(3).unwrap();
        rewards += c.grounding_reward(3, &env, &out);
        let next = c.advise(&env).unwrap();
        if next.fresh {
            assert_eq!(env.agent_cell(), (2, 1));
            break;
        }
        age += 1;
        assert_eq!(next.advice.age, age);
        assert_eq!(next.advice.kind, first.advice.kind);
    }
    assert_eq!(rewards, 1.0);
}

#[test]
fn stale_waypoint_is_reissued() {
    let m = MazeGrid::from_ascii(&["#######", "#S...G#", "#######"]).unwrap();
    let mut env = EnvState::Point(PointState::new(m, 0, &PointConfig::default()));
    let mut c = Coach::new(CoachConfig::new(AdviceForm::Waypoint), EnvKind::Pointmaze, 0).unwrap();
    let mut fresh = 0;
    for _ in 0..45 {
        if c.advise(&env).unwrap().fresh {
            fresh += 1;
        }
        env.step(0).unwrap();
    }
    assert_eq!(fresh, 3);
}

#[test]
fn grounding_reward_rules() {
    let m = MazeGrid::from_ascii(&["#######", "#S...G#", "#######"]).unwrap();
    let mut env = EnvState::Point(PointState::new(m, 0, &PointConfig::default()));
    let mut c = Coach::new(CoachConfig::new(AdviceForm::Direction), EnvKind::Pointmaze, 0).unwrap();
    c.advise(&env).unwrap();
    let out = env.step(3).unwrap();
    assert!((c.grounding_reward(3, &env, &out) - 1.0).abs() < 1e-12);
    let mut env2 = env.clone();
    c.advise(&env2).unwrap();
    // reverse thrust until the agent moves backward
    let mut out = env2.step(7).unwrap();
    while out.displacement.0 >= 0.0 {
        out = env2.step(7).unwrap();
    }
    assert!((c.grounding_reward(7, &env2, &out) + 1.0).abs() < 1e-12);

    let task = Task::gridworld(Verb::Goto, Color::Red, crate::task::ObjectKind::Ball).unwrap();
    let mut g = GridState::empty(6, 6, task);
    g.set(4, 4, Cell::Object(Object::new(crate::task::ObjectKind::Ball, Color::Red)));
    let mut genv = EnvState::Grid(g);
    let mut a = Coach::new(CoachConfig::new(AdviceForm::Action), EnvKind::Gridworld, 0).unwrap();
    let AdviceKind::Action { action_index } = a.advise(&genv).unwrap().advice.kind else { panic!() };
    let out = genv.step(action_index).unwrap();
    assert_eq!(a.grounding_reward(action_index, &genv, &out), 1.0);
    let advised = match a.advise(&genv).unwrap().advice.kind {
        AdviceKind::Action { action_index } => action_index,
        _ => unreachable!(),
    };
    let other = (advised + 1) % 7;
    let out = genv.step(other).unwrap();
    assert_eq!(a.grounding_reward(other, &genv, &out), 0.0);
}

#[test]
fn following_action_advice_verbatim_succeeds() {
    for verb in [Verb::Goto, Verb::Pickup, Verb::Open] {
        let cfg = EnvConfig::gridworld(GridGenConfig {
            verb: Some(verb),
            ..Default::default()
        });
        for seed in 0..40 {
            let mut env = cfg.reset(seed).unwrap();
            let mut c = Coach::new(CoachConfig::new(AdviceForm::Action), EnvKind::Gridworld, seed).unwrap();
            let mut success = false;
            while !env.is_done() {
                let AdviceKind::Action { action_index } = c.advise(&env).unwrap().advice.kind else { panic!() };
                success = env.step(action_index).unwrap().success;
            }
            assert!(success, "{verb:?} seed {seed}");
        }
    }
}

#[test]
fn grid_offset_waypoints_lead_to_interaction_points() {
    let cfg = EnvConfig::gridworld(GridGenConfig {
        verb: Some(Verb::Pickup),
        ..Default::default()
    });
    for seed in 0..40 {
        let mut env = cfg.reset(seed).unwrap();
        let mut c = Coach::new(CoachConfig::new(AdviceForm::OffsetWaypoint), EnvKind::Gridworld, seed).unwrap();
        let mut fresh = 0;
        let mut units_reward = 0.0;
        // drive with the expert; the coach watches
        while !env.is_done() {
            let issued = c.advise(&env).unwrap();
            if issued.fresh {
                fresh += 1;
                let AdviceKind::OffsetWaypoint { dx, dy, .. } = issued.advice.kind else { panic!() };
                assert_eq!(dx.fract(), 0.0);
                assert_eq!(dy.fract(), 0.0);
            }
            let a = expert_action(&env, DEFAULT_BETA).unwrap();
            let out = env.step(a).unwrap();
            units_reward += c.grounding_reward(a, &env, &out);
        }
        assert!(fresh >= 1);
        // at least one waypoint achieved plus the success bonus
        assert!(units_reward >= 2.0, "seed {seed}: {units_reward}");
    }
}

#[test]
fn subgoal_coords_only_for_duplicates() {
    let task = Task::gridworld(Verb::Pickup, Color::Green, crate::task::ObjectKind::Key).unwrap();
    let mut s = GridState::empty(7, 7, task);
    let key = Object::new(crate::task::ObjectKind::Key, Color::Green);
    s.set(5, 5, Cell::Object(key));
    let m = grid_expert(&s).unwrap().milestone;
    let AdviceKind::Subgoal { coord, verb, .. } = subgoal_advice(&s, &m) else { panic!() };
    assert_eq!(coord, None);
    assert_eq!(verb, Verb::Goto);
    s.set(5, 1, Cell::Object(key));
    let m = grid_expert(&s).unwrap().milestone;
    let AdviceKind::Subgoal { coord, .. } = subgoal_advice(&s, &m) else { panic!() };
    assert!(coord.is_some());
}

#[test]
fn subgoal_reissues_on_milestone_change() {
    let cfg = EnvConfig::gridworld(GridGenConfig {
        verb: Some(Verb::Pickup),
        ..Default::default()
    });
    let mut env = cfg.reset(4).unwrap();
    let mut c = Coach::new(CoachConfig::new(AdviceForm::Subgoal), EnvKind::Gridworld, 0).unwrap();
    let mut verbs = Vec::new();
    while !env.is_done() {
        let i = c.advise(&env).unwrap();
        if i.fresh {
            if let AdviceKind::Subgoal { verb, .. } = i.advice.kind {
                verbs.push(verb);
            }
        }
        let a = expert_action(&env, DEFAULT_BETA).unwrap();
        env.step(a).unwrap();
    }
    assert_eq!(verbs.first(), Some(&Verb::Goto));
    assert_eq!(verbs.last(), Some(&Verb::Pickup));
}

#[test]
fn noisify_zero_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Advice::new(AdviceKind::Waypoint { x: 2.5, y: 1.5 });
    for _ in 0..100 {
        let (n, c) = noisify(&a, 0.0, &mut rng, (1.5, 1.5), true, |_, _| true).unwrap();
        assert_eq!(n, a);
        assert_eq!(c, (2, 1));
    }
}

#[test]
fn noisify_one_with_single_neighbor() {
    let m = MazeGrid::from_ascii(&["#####", "#..##", "#####"]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Advice::new(AdviceKind::OffsetWaypoint {
        dx: 1.0,
        dy: 0.0,
        interact: false,
    });
    for _ in 0..50 {
        let (n, c) = noisify(&a, 1.0, &mut rng, (1.5, 1.5), true, |x, y| m.is_open(x, y)).unwrap();
        assert_eq!(c, (1, 1));
        assert_eq!(n.kind, AdviceKind::OffsetWaypoint { dx: 0.0, dy: 0.0, interact: false });
    }
}

#[test]
fn noisify_rate_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = Advice::new(AdviceKind::Waypoint { x: 2.5, y: 2.5 });
    let n = 10_000;
    let replaced = (0..n)
        .filter(|_| noisify(&a, 0.3, &mut rng, (0.0, 0.0), true, |_, _| true).unwrap().1 != (2, 2))
        .count();
    let rate = replaced as f64 / n as f64;
    assert!((rate - 0.3).abs() <= 0.02, "rate {rate}");
}

#[test]
fn noisify_rejects_other_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Advice::new(AdviceKind::Cardinal { dir: Cardinal::N });
    assert!(noisify(&a, 0.5, &mut rng, (0.0, 0.0), true, |_, _| true).is_err());
    assert!(Coach::new(CoachConfig::new(AdviceForm::Direction).with_noise(0.1), EnvKind::Pointmaze, 0).is_err());
}

#[test]
fn noisy_coach_persists_corruption_until_reached() {
    let mut hits = 0;
    for seed in 0..200 {
        let (s, _, _) = point_reset(seed, &PointConfig::default()).unwrap();
        let env = EnvState::Point(s.clone());
        let mut c = Coach::new(CoachConfig::new(AdviceForm::Waypoint).with_noise(1.0), EnvKind::Pointmaze, seed).unwrap();
        let first = c.advise(&env).unwrap().advice;
        let AdviceKind::Waypoint { x, y } = first.kind else { panic!() };
        let truth = next_waypoint(&s).unwrap();
        let cell = (x.floor() as i32, y.floor() as i32);
        assert_ne!(cell, truth);
        assert_eq!((cell.0 - truth.0).abs() + (cell.1 - truth.1).abs(), 1);
        // the agent has not moved: same advice, one step older, unless the
        // corrupted cell is the one it already stands in
        let again = c.advise(&env).unwrap();
        assert_eq!(again.fresh, cell == s.cell());
        if !again.fresh {
            assert_eq!(again.advice.kind, first.kind);
            hits += 1;
        }
    }
    assert!(hits >= 50, "{hits}");
}

#[test]
fn form_env_mismatch_rejected() {
    assert!(Coach::new(CoachConfig::new(AdviceForm::Direction), EnvKind::Gridworld, 0).is_err());
    assert!(Coach::new(CoachConfig::new(AdviceForm::Action), EnvKind::Pointmaze, 0).is_err());
    let (g, _, _) = grid_reset(0, &GridGenConfig::default()).unwrap();
    let mut c = Coach::new(CoachConfig::new(AdviceForm::Waypoint), EnvKind::Pointmaze, 0).unwrap();
    assert!(c.advise(&EnvState::Grid(g)).is_err());
}

proptest! {
    #[test]
    fn cardinal_scale_invariant(dx in -5.0f64..5.0, dy in -5.0f64..5.0, k in 0.01f64..100.0) {
        prop_assume!(dx.abs() + dy.abs() > 1e-6);
        prop_assert_eq!(Cardinal::from_vector(dx, dy), Cardinal::from_vector(dx * k, dy * k));
    }
}
