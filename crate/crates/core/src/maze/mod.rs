//! Grid mazes with an oriented agent: generation, transition semantics,
//! shortest-path labelling and the binary dataset format.

mod dataset;
mod generate;
mod label;

pub use dataset::{build_dataset, read_dataset, split_counts, write_dataset, Dataset, DatasetHeader, DatasetSpec, SPLITS};
pub use generate::generate_maze;
pub use label::{label_states, Labels, MazeTask, NO_LABEL, UNREACHABLE};

use crate::autodiff::{Scalar, Tensor};
use crate::error::{validation, Result};

pub const FORWARD: u8 = 0;
pub const LEFT: u8 = 1;
pub const RIGHT: u8 = 2;
pub const ACTIONS: [u8; 3] = [FORWARD, LEFT, RIGHT];

/// Row/column displacement for orientations N, E, S, W.
pub const HEADINGS: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Maze {
    pub m: usize,
    /// Row-major, `true` = blocked.
    pub obstacle: Vec<bool>,
    pub goal: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AgentState {
    /// 0 = N, 1 = E, 2 = S, 3 = W.
    pub orientation: u8,
    pub i: usize,
    pub j: usize,
}

impl AgentState {
    pub fn new(orientation: u8, i: usize, j: usize) -> Self {
        AgentState { orientation, i, j }
    }

    /// Index into `4×m×m` per-state arrays.
    pub fn index(&self, m: usize) -> usize {
        (self.orientation as usize * m + self.i) * m + self.j
    }

    pub fn from_index(index: usize, m: usize) -> Self {
        AgentState { orientation: (index / (m * m)) as u8, i: index / m % m, j: index % m }
    }
}

impl Maze {
    pub fn new(m: usize, obstacle: Vec<bool>, goal: (usize, usize)) -> Result<Self> {
        if m == 0 || 4 * m * m >= UNREACHABLE as usize {
            return Err(validation!("maze size {} is outside the supported range 1..=127", m));
        }
        if obstacle.len() != m * m {
            return Err(validation!("obstacle grid has {} cells, expected {}", obstacle.len(), m * m));
        }
        if goal.0 >= m || goal.1 >= m {
            return Err(validation!("goal {:?} lies outside the {}×{} grid", goal, m, m));
        }
        if obstacle[goal.0 * m + goal.1] {
            return Err(validation!("goal {:?} is blocked", goal));
        }
        Ok(Maze { m, obstacle, goal })
    }

    pub fn is_free(&self, i: isize, j: isize) -> bool {
        let m = self.m as isize;
        i >= 0 && j >= 0 && i < m && j < m && !self.obstacle[(i * m + j) as usize]
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.m * self.m).filter(|&c| !self.obstacle[c]).map(|c| (c / self.m, c % self.m))
    }

    /// Applies one action. A blocked or off-grid forward move leaves the state
    /// unchanged; turns always succeed.
    pub fn step(&self, s: AgentState, action: u8) -> AgentState {
        match action {
            FORWARD => {
                let (di, dj) = HEADINGS[s.orientation as usize];
                let (ni, nj) = (s.i as isize + di, s.j as isize + dj);
                if self.is_free(ni, nj) {
                    AgentState { i: ni as usize, j: nj as usize, ..s }
                } else {
                    s
                }
            }
            LEFT => AgentState { orientation: (s.orientation + 3) % 4, ..s },
            RIGHT => AgentState { orientation: (s.orientation + 1) % 4, ..s },
            _ => panic!("invalid action {action}"),
        }
    }

    /// `2×m×m` planner input: obstacle map and goal one-hot.
    pub fn observation<F: Scalar>(&self) -> Tensor<F> {
        let n = self.m * self.m;
        let goal = self.goal.0 * self.m + self.goal.1;
        Tensor::from_fn(vec![2, self.m, self.m], |idx| {
            let on = if idx < n { self.obstacle[idx] } else { idx - n == goal };
            if on {
                F::one()
            } else {
                F::zero()
            }
        })
    }
}
