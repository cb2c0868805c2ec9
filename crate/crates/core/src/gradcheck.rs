//! Finite-difference verification of planner gradients in 64-bit precision.
//!
//! The evaluation point is a generated maze with freshly initialised
//! parameters. A point is only accepted when every probe leaves all discrete
//! decisions (argmax slots, rectifier masks, filter-gate choices, embedded
//! policies) unchanged; otherwise the next seed in a deterministic sequence is
//! tried.

use serde::Serialize;

use crate::autodiff::{Graph, ParamStore, Tensor};
use crate::error::{validation, Result};
use crate::maze::{generate_maze, MazeTask};
use crate::planner::{init_params, plan, BoundParams, Mode, PlannerConfig, Variant, REWARD_HIDDEN, REWARD_HIDDEN_BIAS};
use crate::seed;

#[derive(Clone, Debug)]
pub struct GradcheckSpec {
    pub planner: PlannerConfig,
    pub m: usize,
    pub mode: Mode,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub max_attempts: usize,
}

impl GradcheckSpec {
    pub fn new(planner: PlannerConfig, m: usize, mode: Mode) -> Self {
        GradcheckSpec { planner, m, mode, seed: 0, step: 1e-3, tolerance: 1e-4, max_attempts: 32 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub variant: String,
    pub mode: String,
    pub epsilon: f64,
    pub m: usize,
    pub attempts: usize,
    /// A point with no decision flips under any probe was found.
    pub kink_free: bool,
    pub max_rel_err: f64,
    pub worst_parameter: String,
    pub tolerance: f64,
    pub passed: bool,
    pub params: Vec<ParamCheck>,
}

/// `|a − n| / max(|a|, |n|, 1e-2)`: relative error for components of
/// appreciable size and absolute error for the rest.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

/// Parses `N` (vin), `N_BxN_b` (skip) or `N_BxN_bxN_p` (highway).
pub fn parse_depth_spec(variant: Variant, spec: &str) -> Result<PlannerConfig> {
    let parts = spec
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| validation!("depth spec `{}` must be integers separated by `x`", spec))?;
    let config = match (variant, parts.as_slice()) {
        (Variant::Vin, [n]) => PlannerConfig::vin(*n),
        (Variant::Skip, [b, d]) => PlannerConfig::skip(*b, *d),
        (Variant::Highway, [b, d]) => PlannerConfig::highway(*b, *d, 1, 1.0),
        (Variant::Highway, [b, d, p]) => PlannerConfig::highway(*b, *d, *p, 1.0),
        _ => {
            return Err(validation!(
                "depth spec `{}` does not fit variant {} (vin: N, skip: N_BxN_b, highway: N_BxN_bxN_p)",
                spec,
                variant.as_str()
            ))
        }
    };
    config.validate()?;
    Ok(config)
}

struct Point {
    params: ParamStore<f64>,
    task: MazeTask,
    plan_seed: u64,
}

fn forward(spec: &GradcheckSpec, point: &Point, params: &ParamStore<f64>, grads: bool) -> Result<(f64, u64, Option<ParamStore<f64>>)> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, &spec.planner)?;
    let obs = g.constant(point.task.maze.observation());
    let out = plan(&mut g, obs, &bound, &spec.planner, spec.mode, point.plan_seed)?;
    let loss = g.masked_cross_entropy(out.logits, &point.task.expert, &point.task.labeled_mask())?;
    let value = g.value(loss).item();
    let signature = g.kink_signature();
    let grads = if grads {
        g.backward(loss)?;
        Some(bound.gradients(&g))
    } else {
        None
    };
    Ok((value, signature, grads))
}

/// Moves each hidden-channel bias to the middle of the widest gap between
/// the channel's bias-free pre-activations, so no rectifier input sits near
/// zero.
fn centre_rectifier_biases(params: &mut ParamStore<f64>, obs: &Tensor<f64>, m: usize) -> Result<()> {
    let w = params.get(REWARD_HIDDEN)?.clone();
    let h = w.shape()[0];
    let mut biases = Vec::with_capacity(h);
    for c in 0..h {
        let mut pre = Vec::with_capacity(m * m);
        for i in 0..m as isize {
            for j in 0..m as isize {
                let mut s = 0.0;
                for ci in 0..2 {
                    for di in 0..3isize {
                        for dj in 0..3isize {
                            let (si, sj) = (i + di - 1, j + dj - 1);
                            if si >= 0 && sj >= 0 && si < m as isize && sj < m as isize {
                                s += w.data()[((c * 2 + ci) * 3 + di as usize) * 3 + dj as usize]
                                    * obs.data()[ci * m * m + si as usize * m + sj as usize];
                            }
                        }
                    }
                }
                pre.push(-s);
            }
        }
        // Candidate biases b with b + s ≠ 0: gaps between sorted −s values,
        // restricted to the initialisation range so both signs stay in play.
        pre.sort_by(f64::total_cmp);
        let bound = 1.0 / 18f64.sqrt();
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut edges = vec![-bound];
        edges.extend(pre.iter().cloned().filter(|x| x.abs() < bound));
        edges.push(bound);
        for pair in edges.windows(2) {
            if pair[1] - pair[0] > best.0 {
                best = (pair[1] - pair[0], 0.5 * (pair[0] + pair[1]));
            }
        }
        biases.push(best.1);
    }
    *params.get_mut(REWARD_HIDDEN_BIAS)? = Tensor::new(vec![h], biases)?;
    Ok(())
}

fn make_point(spec: &GradcheckSpec, attempt: usize) -> Result<Point> {
    let s = seed::substream(spec.seed, "gradcheck", attempt as u64);
    let task = MazeTask::new(generate_maze(spec.m, seed::substream(s, "maze", 0), 0.0)?);
    let mut params = init_params::<f64>(&spec.planner, s);
    centre_rectifier_biases(&mut params, &task.maze.observation(), spec.m)?;
    Ok(Point { params, task, plan_seed: seed::substream(s, "plan", 0) })
}

/// Compares analytic gradients against central differences for every
/// parameter scalar. `corrupt` may rewrite the analytic gradients before the
/// comparison (used to confirm that the check can fail).
pub fn gradcheck(spec: &GradcheckSpec, corrupt: Option<&dyn Fn(&mut ParamStore<f64>)>) -> Result<GradcheckReport> {
    spec.planner.validate()?;
    if !(spec.step > 0.0) || spec.max_attempts == 0 {
        return Err(validation!("finite-difference step and attempt budget must be positive"));
    }
    let mut attempts = 0;
    let mut last = None;
    while attempts < spec.max_attempts {
        let point = make_point(spec, attempts)?;
        attempts += 1;
        let (_, base_sig, grads) = forward(spec, &point, &point.params, true)?;
        let mut analytic = grads.expect("gradients requested");
        if let Some(f) = corrupt {
            f(&mut analytic);
        }
        let mut clean = true;
        let mut checks = Vec::new();
        'params: for (name, tensor) in point.params.iter() {
            let a = analytic.get(name)?.data().to_vec();
            let mut worst = ParamCheck { name: name.to_string(), max_rel_err: 0.0, worst_index: 0, analytic: a[0], numeric: 0.0 };
            for i in 0..tensor.len() {
                let mut probe = point.params.clone();
                probe.get_mut(name)?.data_mut()[i] += spec.step;
                let (plus, sig_plus, _) = forward(spec, &point, &probe, false)?;
                probe.get_mut(name)?.data_mut()[i] -= 2.0 * spec.step;
                let (minus, sig_minus, _) = forward(spec, &point, &probe, false)?;
                if sig_plus != base_sig || sig_minus != base_sig {
                    clean = false;
                    break 'params;
                }
                let numeric = (plus - minus) / (2.0 * spec.step);
                let err = relative_error(a[i], numeric);
                if err > worst.max_rel_err || i == 0 {
                    worst = ParamCheck { name: name.to_string(), max_rel_err: err, worst_index: i, analytic: a[i], numeric };
                }
            }
            checks.push(worst);
        }
        let report = summarise(spec, attempts, clean, checks);
        if clean {
            return Ok(report);
        }
        last = Some(report);
    }
    Ok(last.expect("at least one attempt"))
}

fn summarise(spec: &GradcheckSpec, attempts: usize, clean: bool, params: Vec<ParamCheck>) -> GradcheckReport {
    let worst = params.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err));
    let max_rel_err = worst.map_or(0.0, |w| w.max_rel_err);
    GradcheckReport {
        variant: spec.planner.variant.as_str().into(),
        mode: match spec.mode {
            Mode::Train => "train".into(),
            Mode::Eval => "eval".into(),
        },
        epsilon: spec.planner.epsilon,
        m: spec.m,
        attempts,
        kink_free: clean,
        worst_parameter: worst.map_or_else(String::new, |w| w.name.clone()),
        max_rel_err,
        tolerance: spec.tolerance,
        passed: clean && max_rel_err < spec.tolerance,
        params,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::TRANSITION;

    fn toy(variant_config: PlannerConfig, mode: Mode) -> GradcheckSpec {
        let planner = PlannerConfig { latent_actions: 4, hidden_dim: 8, ..variant_config };
        GradcheckSpec::new(planner, 7, mode)
    }

    #[test]
    fn vin_gradients_match_finite_differences() {
        let report = gradcheck(&toy(PlannerConfig::vin(3), Mode::Train), None).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.params.len(), 6);
    }

    #[test]
    fn highway_gradients_match_in_both_modes() {
        for (mode, eps) in [(Mode::Eval, 1.0), (Mode::Train, 0.0)] {
            let config = PlannerConfig { epsilon: eps, ..PlannerConfig::highway(2, 2, 2, eps) };
            let report = gradcheck(&toy(config, mode), None).unwrap();
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn corrupted_gradient_fails_and_names_parameter() {
        let corrupt = |g: &mut ParamStore<f64>| g.get_mut(TRANSITION).unwrap().data_mut()[3] += 0.5;
        let report = gradcheck(&toy(PlannerConfig::skip(2, 2), Mode::Eval), Some(&corrupt)).unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst_parameter, TRANSITION);
    }

    #[test]
    fn depth_specs_parse_per_variant() {
        assert_eq!(parse_depth_spec(Variant::Vin, "4").unwrap().depth, 4);
        let s = parse_depth_spec(Variant::Skip, "2x3").unwrap();
        assert_eq!((s.blocks, s.block_depth), (2, 3));
        let h = parse_depth_spec(Variant::Highway, "2x2x2").unwrap();
        assert_eq!((h.blocks, h.block_depth, h.parallel_paths), (2, 2, 2));
        assert!(parse_depth_spec(Variant::Vin, "2x2").is_err());
        assert!(parse_depth_spec(Variant::Highway, "a").is_err());
    }

    #[test]
    fn relative_error_floors_small_components() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-6, 0.0) - 1e-4).abs() < 1e-15);
    }
}
