//! Breadth-first search on 4-connected grids.

use std::collections::VecDeque;

/// Neighbor offsets in N, E, S, W order; this order is the BFS tie-break.
pub const NEIGHBORS: [(i32, i32); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

/// Shortest path from `start` to the nearest cell satisfying `is_goal`,
/// moving only through cells where `passable` holds. The returned path
/// excludes `start` and ends at the goal cell; it is empty when `start`
/// already satisfies `is_goal`. The start cell itself need not be passable.
pub fn bfs_path(
    width: i32,
    height: i32,
    start: (i32, i32),
    is_goal: impl Fn(i32, i32) -> bool,
    passable: impl Fn(i32, i32) -> bool,
) -> Option<Vec<(i32, i32)>> {
    if is_goal(start.0, start.1) {
        return Some(Vec::new());
    }
    let idx = |x: i32, y: i32| (y * width + x) as usize;
    let mut parent: Vec<Option<(i32, i32)>> = vec![None; (width * height).max(0) as usize];
    let mut seen = vec![false; parent.len()];
    if start.0 < 0 || start.1 < 0 || start.0 >= width || start.1 >= height {
        return None;
    }
    seen[idx(start.0, start.1)] = true;
    let mut queue = VecDeque::from([start]);
    while let Some((x, y)) = queue.pop_front() {
        for (dx, dy) in NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= width || ny >= height || seen[idx(nx, ny)] {
                continue;
            }
            if !passable(nx, ny) {
                continue;
            }
            seen[idx(nx, ny)] = true;
            parent[idx(nx, ny)] = Some((x, y));
            if is_goal(nx, ny) {
                let mut path = vec![(nx, ny)];
                let mut cur = (x, y);
                while cur != start {
                    path.push(cur);
                    cur = parent[idx(cur.0, cur.1)].expect("parent chain reaches start");
                }
                path.reverse();
                return Some(path);
            }
            queue.push_back((nx, ny));
        }
    }
    None
}

/// Unit-weight distances from `source` to every cell (`None` if unreachable).
pub fn distance_map(
    width: i32,
    height: i32,
    source: (i32, i32),
    passable: impl Fn(i32, i32) -> bool,
) -> Vec<Option<u32>> {
    let idx = |x: i32, y: i32| (y * width + x) as usize;
    let mut dist = vec![None; (width * height).max(0) as usize];
    if source.0 < 0 || source.1 < 0 || source.0 >= width || source.1 >= height {
        return dist;
    }
    dist[idx(source.0, source.1)] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[idx(x, y)].unwrap();
        for (dx, dy) in NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= width || ny >= height {
                continue;
            }
            if dist[idx(nx, ny)].is_none() && passable(nx, ny) {
                dist[idx(nx, ny)] = Some(d + 1);
                queue.push_back((nx, ny));
            }
        }
    }
    dist
}
