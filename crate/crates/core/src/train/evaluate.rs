use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::Bucket;
use crate::autodiff::{Graph, ParamStore};
use crate::error::Result;
use crate::maze::{AgentState, MazeTask, NO_LABEL, UNREACHABLE};
use crate::planner::{plan, BoundParams, Mode, PlannerConfig, MOVES};
use crate::seed;

/// One navigation episode: a start state in a maze, stratified by bucket.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalTask {
    pub maze: usize,
    pub start: AgentState,
    pub spl: u16,
    pub bucket: usize,
}

/// For every maze and every bucket, one start state drawn uniformly from the
/// labelled states whose first matching bucket is that bucket. Mazes with no
/// such state contribute nothing to the bucket.
pub fn build_tasks(mazes: &[MazeTask], buckets: &[Bucket], seed_value: u64) -> Vec<EvalTask> {
    let mut tasks = Vec::new();
    for (k, task) in mazes.iter().enumerate() {
        let mut rng = seed::substream_rng(seed_value, "tasks", k as u64);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); buckets.len()];
        for (idx, &d) in task.spl.iter().enumerate() {
            if d == 0 || d == UNREACHABLE {
                continue;
            }
            if let Some(b) = Bucket::assign(buckets, d) {
                members[b].push(idx);
            }
        }
        for (b, states) in members.iter().enumerate() {
            if states.is_empty() {
                continue;
            }
            let idx = states[rng.random_range(0..states.len())];
            tasks.push(EvalTask { maze: k, start: AgentState::from_index(idx, task.maze.m), spl: task.spl[idx], bucket: b });
        }
    }
    tasks
}

/// Real-action policies that can be rolled out.
pub enum Policy<'a> {
    /// Greedy over the read-out head's logits, planner in eval mode.
    Planner { params: &'a ParamStore<f32>, config: &'a PlannerConfig },
    /// The shortest-path labels.
    Expert,
    /// Uniform over the three actions.
    Random { seed: u64 },
}

/// Greedy action of the planner for each of the `4·m²` states.
pub fn planner_action_table(params: &ParamStore<f32>, config: &PlannerConfig, task: &MazeTask) -> Result<Vec<u8>> {
    let mut g = Graph::<f32>::new();
    let bound = BoundParams::bind(&mut g, params, config)?;
    let obs = g.constant(task.maze.observation());
    let out = plan(&mut g, obs, &bound, config, Mode::Eval, 0)?;
    Ok(g.value(out.logits)
        .data()
        .chunks(MOVES)
        .map(|l| (1..MOVES).fold(0, |best, a| if l[a] > l[best] { a } else { best }) as u8)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub success: bool,
    pub steps: usize,
    pub optimal: bool,
}

/// Step cap for rollouts: the number of distinct oriented states.
pub fn step_cap(m: usize) -> usize {
    4 * m * m
}

/// Rolls out a deterministic action table. A revisited state means the
/// rollout loops forever, so it stops early as a failure.
pub fn rollout_table(task: &MazeTask, table: &[u8], start: AgentState) -> Outcome {
    let m = task.maze.m;
    let mut seen = vec![false; 4 * m * m];
    let mut s = start;
    for steps in 1..=step_cap(m) {
        seen[s.index(m)] = true;
        let a = table[s.index(m)];
        s = task.maze.step(s, if a == NO_LABEL { 0 } else { a });
        if (s.i, s.j) == task.maze.goal {
            return Outcome { success: true, steps, optimal: steps == task.spl(start) as usize };
        }
        if seen[s.index(m)] {
            break;
        }
    }
    Outcome { success: false, steps: 0, optimal: false }
}

pub fn rollout_random<R: Rng>(task: &MazeTask, start: AgentState, rng: &mut R) -> Outcome {
    let mut s = start;
    for steps in 1..=step_cap(task.maze.m) {
        s = task.maze.step(s, rng.random_range(0..3u8));
        if (s.i, s.j) == task.maze.goal {
            return Outcome { success: true, steps, optimal: steps == task.spl(start) as usize };
        }
    }
    Outcome { success: false, steps: 0, optimal: false }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketResult {
    pub bucket: Bucket,
    pub tasks: usize,
    /// `None` when the bucket holds no task.
    pub sr: Option<f64>,
    pub optimality: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub buckets: Vec<BucketResult>,
    /// Success and optimality rate over all tasks.
    pub sr: Option<f64>,
    pub optimality: Option<f64>,
    pub outcomes: Vec<Outcome>,
}

impl Evaluation {
    pub fn bucket(&self, lo: u16, hi: u16) -> Option<&BucketResult> {
        self.buckets.iter().find(|b| b.bucket.lo == lo && b.bucket.hi == hi)
    }
}

fn rate(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Rolls out `policy` on every task and aggregates per bucket.
pub fn evaluate(mazes: &[MazeTask], tasks: &[EvalTask], buckets: &[Bucket], policy: &Policy) -> Result<Evaluation> {
    let mut by_maze: Vec<Vec<usize>> = vec![Vec::new(); mazes.len()];
    for (t, task) in tasks.iter().enumerate() {
        by_maze[task.maze].push(t);
    }
    let per_maze = by_maze
        .par_iter()
        .enumerate()
        .filter(|(_, ts)| !ts.is_empty())
        .map(|(k, ts)| -> Result<Vec<(usize, Outcome)>> {
            let maze = &mazes[k];
            let table = match policy {
                Policy::Planner { params, config } => Some(planner_action_table(params, config, maze)?),
                Policy::Expert => Some(maze.expert.clone()),
                Policy::Random { .. } => None,
            };
            Ok(ts
                .iter()
                .map(|&t| {
                    let start = tasks[t].start;
                    let outcome = match (&table, policy) {
                        (Some(table), _) => rollout_table(maze, table, start),
                        (None, Policy::Random { seed: s }) => {
                            rollout_random(maze, start, &mut seed::substream_rng(*s, "rollout", t as u64))
                        }
                        (None, _) => unreachable!("deterministic policies build a table"),
                    };
                    (t, outcome)
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut outcomes = vec![Outcome { success: false, steps: 0, optimal: false }; tasks.len()];
    for (t, o) in per_maze.into_iter().flatten() {
        outcomes[t] = o;
    }
    let results = buckets
        .iter()
        .enumerate()
        .map(|(b, &bucket)| {
            let members: Vec<&Outcome> = tasks.iter().zip(&outcomes).filter(|(t, _)| t.bucket == b).map(|(_, o)| o).collect();
            BucketResult {
                bucket,
                tasks: members.len(),
                sr: rate(members.iter().filter(|o| o.success).count(), members.len()),
                optimality: rate(members.iter().filter(|o| o.optimal).count(), members.len()),
            }
        })
        .collect();
    Ok(Evaluation {
        buckets: results,
        sr: rate(outcomes.iter().filter(|o| o.success).count(), outcomes.len()),
        optimality: rate(outcomes.iter().filter(|o| o.optimal).count(), outcomes.len()),
        outcomes,
    })
}
