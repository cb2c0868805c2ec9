use std::collections::VecDeque;

use super::{AgentState, Maze, ACTIONS, HEADINGS};

/// Shortest-path length of states that cannot reach the goal (and of blocked cells).
pub const UNREACHABLE: u16 = 0xFFFF;
/// Expert label for goal states, unreachable states and blocked cells.
pub const NO_LABEL: u8 = 255;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labels {
    /// `4×m×m` action counts to the goal, turns included.
    pub spl: Vec<u16>,
    /// `4×m×m` optimal first action, ties broken forward < left < right.
    pub expert: Vec<u8>,
}

/// A maze together with its per-state labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MazeTask {
    pub maze: Maze,
    pub spl: Vec<u16>,
    pub expert: Vec<u8>,
}

impl MazeTask {
    pub fn new(maze: Maze) -> Self {
        let Labels { spl, expert } = label_states(&maze);
        MazeTask { maze, spl, expert }
    }

    pub fn spl(&self, s: AgentState) -> u16 {
        self.spl[s.index(self.maze.m)]
    }

    /// States carrying an expert label (`0 < spl < UNREACHABLE`).
    pub fn labeled_mask(&self) -> Vec<bool> {
        self.expert.iter().map(|&e| e != NO_LABEL).collect()
    }
}

/// Breadth-first search backward from every orientation at the goal cell over
/// the `4·m²` oriented state graph (unit cost per action).
pub fn label_states(maze: &Maze) -> Labels {
    let m = maze.m;
    let n = 4 * m * m;
    let mut spl = vec![UNREACHABLE; n];
    let mut queue = VecDeque::new();
    for o in 0..4u8 {
        let s = AgentState::new(o, maze.goal.0, maze.goal.1);
        spl[s.index(m)] = 0;
        queue.push_back(s);
    }
    while let Some(s) = queue.pop_front() {
        let d = spl[s.index(m)] + 1;
        // Turning left from (o+1) or right from (o+3) lands on `s`; so does a
        // forward move from the cell behind it.
        let mut preds = vec![
            AgentState { orientation: (s.orientation + 1) % 4, ..s },
            AgentState { orientation: (s.orientation + 3) % 4, ..s },
        ];
        let (di, dj) = HEADINGS[s.orientation as usize];
        let (pi, pj) = (s.i as isize - di, s.j as isize - dj);
        if maze.is_free(pi, pj) {
            preds.push(AgentState { i: pi as usize, j: pj as usize, ..s });
        }
        for p in preds {
            let idx = p.index(m);
            if spl[idx] == UNREACHABLE {
                spl[idx] = d;
                queue.push_back(p);
            }
        }
    }

    let mut expert = vec![NO_LABEL; n];
    for (idx, label) in expert.iter_mut().enumerate() {
        if spl[idx] == 0 || spl[idx] == UNREACHABLE {
            continue;
        }
        let s = AgentState::from_index(idx, m);
        let mut best = (u32::MAX, NO_LABEL);
        for a in ACTIONS {
            let cost = 1 + spl[maze.step(s, a).index(m)] as u32;
            if cost < best.0 {
                best = (cost, a);
            }
        }
        *label = best.1;
    }
    Labels { spl, expert }
}
