use rand::seq::SliceRandom;
use rand::Rng;

use super::Maze;
use crate::error::{validation, Result};
use crate::seed;

/// Recursive-backtracker maze on the odd-coordinate lattice of an `m×m` grid
/// (walls one cell thick, border fully blocked). With `braid > 0`, each
/// remaining interior wall between two lattice cells is removed with that
/// probability, adding loops. The goal is uniform over free cells.
pub fn generate_maze(m: usize, seed_value: u64, braid: f64) -> Result<Maze> {
    if m < 5 || m % 2 == 0 {
        return Err(validation!("maze size must be odd and at least 5, got {}", m));
    }
    if !(0.0..=1.0).contains(&braid) {
        return Err(validation!("braid fraction must lie in [0, 1], got {}", braid));
    }
    let mut rng = seed::rng(seed_value);
    let mut obstacle = vec![true; m * m];
    let cells = (m - 1) / 2;
    let mut visited = vec![false; cells * cells];
    let carve = |obstacle: &mut Vec<bool>, i: usize, j: usize| obstacle[i * m + j] = false;

    let start = (rng.random_range(0..cells), rng.random_range(0..cells));
    visited[start.0 * cells + start.1] = true;
    carve(&mut obstacle, 2 * start.0 + 1, 2 * start.1 + 1);
    let mut stack = vec![start];
    while let Some(&(ci, cj)) = stack.last() {
        let mut next: Vec<(usize, usize)> = [(0isize, 1isize), (1, 0), (0, -1), (-1, 0)]
            .iter()
            .map(|&(di, dj)| (ci as isize + di, cj as isize + dj))
            .filter(|&(ni, nj)| ni >= 0 && nj >= 0 && (ni as usize) < cells && (nj as usize) < cells)
            .map(|(ni, nj)| (ni as usize, nj as usize))
            .filter(|&(ni, nj)| !visited[ni * cells + nj])
            .collect();
        if next.is_empty() {
            stack.pop();
            continue;
        }
        next.shuffle(&mut rng);
        let (ni, nj) = next[0];
        visited[ni * cells + nj] = true;
        carve(&mut obstacle, ci + ni + 1, cj + nj + 1);
        carve(&mut obstacle, 2 * ni + 1, 2 * nj + 1);
        stack.push((ni, nj));
    }

    if braid > 0.0 {
        for i in 1..m - 1 {
            for j in 1..m - 1 {
                // Walls separating two lattice cells sit at exactly one even coordinate.
                let between = (i % 2 == 0) != (j % 2 == 0);
                if between && obstacle[i * m + j] && rng.random::<f64>() < braid {
                    obstacle[i * m + j] = false;
                }
            }
        }
    }

    let free: Vec<usize> = (0..m * m).filter(|&c| !obstacle[c]).collect();
    let goal = free[rng.random_range(0..free.len())];
    Maze::new(m, obstacle, (goal / m, goal % m))
}
