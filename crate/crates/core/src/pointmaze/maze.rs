use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::NEIGHBORS;

/// Symbolic maze: `open[y * width + x]`, border always closed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MazeGrid {
    pub width: i32,
    pub height: i32,
    pub open: Vec<bool>,
    pub start_cell: (i32, i32),
    pub goal_cell: (i32, i32),
}

impl MazeGrid {
    pub fn is_open(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.width && y < self.height && self.open[(y * self.width + x) as usize]
    }

    pub fn open_cells(&self) -> Vec<(i32, i32)> {
        let mut v = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_open(x, y) {
                    v.push((x, y));
                }
            }
        }
        v
    }

    pub fn open_neighbors(&self, (x, y): (i32, i32)) -> Vec<(i32, i32)> {
        NEIGHBORS
            .iter()
            .map(|(dx, dy)| (x + dx, y + dy))
            .filter(|&(nx, ny)| self.is_open(nx, ny))
            .collect()
    }

    /// Row-major open array as floats (1 open, 0 closed).
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.open.iter().map(|&o| if o { 1.0 } else { 0.0 })
    }

    /// Builds a maze from rows of `#` (closed) and `.` (open); `S` and `G`
    /// mark open start and goal cells.
    pub fn from_ascii(rows: &[&str]) -> Result<MazeGrid> {
        let height = rows.len() as i32;
        let width = rows.first().map_or(0, |r| r.len()) as i32;
        let mut open = Vec::new();
        let (mut start, mut goal) = (None, None);
        for (y, row) in rows.iter().enumerate() {
            if row.len() as i32 != width {
                return Err(Error::Config("ragged maze rows".into()));
            }
            for (x, ch) in row.chars().enumerate() {
                let p = (x as i32, y as i32);
                match ch {
                    '#' => open.push(false),
                    '.' => open.push(true),
                    'S' => {
                        start = Some(p);
                        open.push(true)
                    }
                    'G' => {
                        goal = Some(p);
                        open.push(true)
                    }
                    other => return Err(Error::Config(format!("bad maze char `{other}`"))),
                }
            }
        }
        let m = MazeGrid {
            width,
            height,
            open,
            start_cell: (0, 0),
            goal_cell: (0, 0),
        };
        let first = m.open_cells().first().copied().ok_or_else(|| Error::Config("maze has no open cell".into()))?;
        Ok(MazeGrid {
            start_cell: start.unwrap_or(first),
            goal_cell: goal.unwrap_or(first),
            ..m
        })
    }
}

/// Recursive-backtracker maze carved at cell resolution: walls and corridors
/// are both single cells. The walk opens a closed interior neighbour only if
/// that neighbour touches no other open cell, so the open cells form a tree
/// of one-cell corridors spanning the interior. Start and goal are distinct
/// uniformly drawn open cells (identical only when the maze has a single
/// open cell).
pub fn maze_generate(seed: u64, width: i32, height: i32) -> Result<MazeGrid> {
    if width < 3 || height < 3 {
        return Err(Error::Config(format!("maze must be at least 3x3, got {width}x{height}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut open = vec![false; (width * height) as usize];
    let idx = |x: i32, y: i32| (y * width + x) as usize;
    let interior = |x: i32, y: i32| x >= 1 && y >= 1 && x <= width - 2 && y <= height - 2;

    let root = (rng.random_range(1..width - 1), rng.random_range(1..height - 1));
    open[idx(root.0, root.1)] = true;
    let mut stack = vec![root];
    while let Some(&(x, y)) = stack.last() {
        let mut dirs = NEIGHBORS;
        dirs.shuffle(&mut rng);
        let next = dirs.iter().map(|&(dx, dy)| (x + dx, y + dy)).find(|&(nx, ny)| {
            interior(nx, ny)
                && !open[idx(nx, ny)]
                && NEIGHBORS
                    .iter()
                    .map(|&(ex, ey)| (nx + ex, ny + ey))
                    .all(|(ox, oy)| (ox, oy) == (x, y) || !open[idx(ox, oy)])
        });
        match next {
            Some(n) => {
                open[idx(n.0, n.1)] = true;
                stack.push(n);
            }
            None => {
                stack.pop();
            }
        }
    }

    let mut maze = MazeGrid {
        width,
        height,
        open,
        start_cell: root,
        goal_cell: root,
    };
    let cells = maze.open_cells();
    if cells.len() >= 2 {
        let picks: Vec<_> = cells.choose_multiple(&mut rng, 2).copied().collect();
        maze.start_cell = picks[0];
        maze.goal_cell = picks[1];
    }
    Ok(maze)
}
