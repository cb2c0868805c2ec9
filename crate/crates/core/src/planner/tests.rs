use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Error;
use crate::seed;

fn random(shape: &[usize], bound: f64, seed: u64) -> Tensor<f64> {
    let mut rng = seed::rng(seed);
    Tensor::uniform(shape.to_vec(), bound, &mut rng)
}

fn random_obs(m: usize, seed: u64) -> Tensor<f64> {
    let mut rng = seed::rng(seed);
    let mut data = vec![0.0; 2 * m * m];
    for x in data.iter_mut().take(m * m) {
        *x = if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 };
    }
    let goal = rng.random_range(0..m * m);
    data[m * m + goal] = 1.0;
    Tensor::new(vec![2, m, m], data).unwrap()
}

fn delta_kernel(actions: usize, k: usize) -> Tensor<f64> {
    let p = (k - 1) / 2;
    Tensor::from_fn(vec![actions, 1, k, k], |idx| if idx % (k * k) == p * k + p { 1.0 } else { 0.0 })
}

/// The latent backup written as a double sum over kernel offsets `(i′, j′)`
/// with `X[i−i′, j−j′]` and out-of-grid taps reading zero.
fn backup_oracle(x: &[f64], t: &[f64], actions: usize, k: usize, m: usize) -> Vec<f64> {
    let p = (k - 1) as isize / 2;
    let mut q = vec![0.0; actions * m * m];
    for a in 0..actions {
        for i in 0..m as isize {
            for j in 0..m as isize {
                let mut s = 0.0;
                for di in -p..=p {
                    for dj in -p..=p {
                        let (si, sj) = (i - di, j - dj);
                        if si < 0 || sj < 0 || si >= m as isize || sj >= m as isize {
                            continue;
                        }
                        // Offset (i′, j′) sits at kernel tap (p − i′, p − j′) of the
                        // cross-correlation layout.
                        let tap = ((p - di) * k as isize + (p - dj)) as usize;
                        s += t[a * k * k + tap] * x[si as usize * m + sj as usize];
                    }
                }
                q[a * m * m + i as usize * m + j as usize] = s;
            }
        }
    }
    q
}

fn channel_max(q: &[f64], actions: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|p| (1..actions).fold(q[p], |best, a| if q[a * n + p] > best { q[a * n + p] } else { best }))
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn smax_oracle(values: &[f64], alpha: f64) -> f64 {
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = values.iter().map(|v| (alpha * (v - top)).exp()).collect();
    let z: f64 = w.iter().sum();
    values.iter().zip(&w).map(|(v, w)| v * w / z).sum()
}

fn reward_oracle(obs: &[f64], hidden: &[f64], bias: &[f64], out: &[f64], m: usize) -> Vec<f64> {
    let h = bias.len();
    let mut r = vec![0.0; m * m];
    for i in 0..m as isize {
        for j in 0..m as isize {
            let mut acc = 0.0;
            for c in 0..h {
                let mut s = bias[c];
                for ci in 0..2 {
                    for di in 0..3isize {
                        for dj in 0..3isize {
                            let (si, sj) = (i + di - 1, j + dj - 1);
                            if si < 0 || sj < 0 || si >= m as isize || sj >= m as isize {
                                continue;
                            }
                            s += hidden[((c * 2 + ci) * 3 + di as usize) * 3 + dj as usize]
                                * obs[ci * m * m + si as usize * m + sj as usize];
                        }
                    }
                }
                acc += out[c] * s.max(0.0);
            }
            r[i as usize * m + j as usize] = acc;
        }
    }
    r
}

fn small_config(variant: Variant) -> PlannerConfig {
    PlannerConfig {
        variant,
        depth: 2,
        blocks: 2,
        block_depth: 2,
        parallel_paths: 2,
        epsilon: 1.0,
        kernel_size: 3,
        latent_actions: 4,
        hidden_dim: 6,
        ..Default::default()
    }
}

struct Fixture {
    graph: Graph<f64>,
    mdp: LatentMdp,
    value: Var,
    r: Vec<f64>,
    v: Vec<f64>,
    t: Vec<f64>,
}

fn fixture(m: usize, actions: usize, k: usize, seed: u64) -> Fixture {
    let mut graph = Graph::new();
    let r = random(&[m, m], 1.0, seed);
    let v = random(&[m, m], 1.0, seed + 1);
    let t = random(&[actions, 1, k, k], 0.5, seed + 2);
    let (rv, vv, tv) = (r.data().to_vec(), v.data().to_vec(), t.data().to_vec());
    let reward = graph.parameter(r);
    let transition = graph.parameter(t);
    let value = graph.parameter(v);
    let mdp = LatentMdp::new(&graph, reward, transition, None).unwrap();
    Fixture { graph, mdp, value, r: rv, v: vv, t: tv }
}

// ---- map_observation ----

#[test]
fn zero_output_stage_gives_zero_reward() {
    let config = small_config(Variant::Vin);
    let mut params = init_params::<f64>(&config, 3);
    *params.get_mut(REWARD_OUT).unwrap() = Tensor::zeros(vec![1, 6, 1, 1]);
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &params, &config).unwrap();
    let obs = g.constant(random_obs(7, 1));
    let r = map_observation(&mut g, obs, &bound).unwrap();
    assert!(g.value(r).data().iter().all(|&x| x == 0.0));
}

#[test]
fn observation_map_shape_is_m_by_m() {
    let config = small_config(Variant::Vin);
    let params = init_params::<f64>(&config, 3);
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &params, &config).unwrap();
    let obs = g.constant(random_obs(15, 2));
    let r = map_observation(&mut g, obs, &bound).unwrap();
    assert_eq!(g.value(r).shape(), &[15, 15]);
}

#[test]
fn observation_map_matches_composed_conv_oracle() {
    let config = small_config(Variant::Vin);
    let params = init_params::<f64>(&config, 9);
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &params, &config).unwrap();
    let obs_t = random_obs(7, 5);
    let obs = g.constant(obs_t.clone());
    let r = map_observation(&mut g, obs, &bound).unwrap();
    let expected = reward_oracle(
        obs_t.data(),
        params.get(REWARD_HIDDEN).unwrap().data(),
        params.get(REWARD_HIDDEN_BIAS).unwrap().data(),
        params.get(REWARD_OUT).unwrap().data(),
        7,
    );
    for (a, b) in g.value(r).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn non_binary_obstacles_are_rejected() {
    let config = small_config(Variant::Vin);
    let params = init_params::<f64>(&config, 3);
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &params, &config).unwrap();
    let mut obs_t = random_obs(5, 2);
    obs_t.data_mut()[3] = 0.5;
    let obs = g.constant(obs_t);
    assert!(matches!(map_observation(&mut g, obs, &bound), Err(Error::Validation(_))));
}

// ---- vi_layer ----

#[test]
fn identity_kernel_vi_layer_adds_reward() {
    let mut g = Graph::new();
    let r = random(&[5, 5], 1.0, 1);
    let v = random(&[5, 5], 1.0, 2);
    let expected = add(r.data(), v.data());
    let reward = g.constant(r);
    let transition = g.constant(delta_kernel(1, 3));
    let value = g.constant(v);
    let mdp = LatentMdp::new(&g, reward, transition, None).unwrap();
    let out = vi_layer(&mut g, value, &mdp).unwrap();
    assert_eq!(g.value(out.q).data(), &expected[..]);
    assert_eq!(g.value(out.value).data(), &expected[..]);
}

#[test]
fn zero_kernel_vi_layer_is_zero() {
    let mut g = Graph::new();
    let reward = g.constant(random(&[5, 5], 1.0, 1));
    let transition = g.constant(Tensor::zeros(vec![3, 1, 5, 5]));
    let value = g.constant(random(&[5, 5], 1.0, 2));
    let mdp = LatentMdp::new(&g, reward, transition, None).unwrap();
    let out = vi_layer(&mut g, value, &mdp).unwrap();
    assert!(g.value(out.q).data().iter().all(|&x| x == 0.0));
    assert!(g.value(out.value).data().iter().all(|&x| x == 0.0));
}

#[test]
fn vi_layer_matches_double_sum_oracle() {
    let mut f = fixture(7, 4, 5, 11);
    let out = vi_layer(&mut f.graph, f.value, &f.mdp).unwrap();
    let q = backup_oracle(&add(&f.r, &f.v), &f.t, 4, 5, 7);
    for (a, b) in f.graph.value(out.q).data().iter().zip(&q) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
    for (a, b) in f.graph.value(out.value).data().iter().zip(channel_max(&q, 4, 49)) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
    }
}

#[test]
fn separate_reward_kernel_backup_matches_oracle() {
    let mut g = Graph::new();
    let r = random(&[6, 6], 1.0, 1);
    let v = random(&[6, 6], 1.0, 2);
    let t = random(&[3, 1, 3, 3], 1.0, 3);
    let tr = random(&[3, 1, 3, 3], 1.0, 4);
    let expected = add(&backup_oracle(r.data(), tr.data(), 3, 3, 6), &backup_oracle(v.data(), t.data(), 3, 3, 6));
    let (reward, transition, trv, value) = (g.constant(r), g.constant(t), g.constant(tr), g.constant(v));
    let mdp = LatentMdp::new(&g, reward, transition, Some(trv)).unwrap();
    let q = latent_q(&mut g, value, &mdp).unwrap();
    for (a, b) in g.value(q).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn even_kernel_is_rejected() {
    let mut g = Graph::new();
    let reward = g.constant(Tensor::<f64>::zeros(vec![5, 5]));
    let transition = g.constant(Tensor::zeros(vec![2, 1, 4, 4]));
    assert!(matches!(LatentMdp::new(&g, reward, transition, None), Err(Error::Validation(_))));
}

// ---- embedded_policy ----

#[test]
fn zero_epsilon_train_policy_equals_greedy() {
    let q = random(&[5, 6, 6], 1.0, 4);
    let mut rng = seed::rng(1);
    let (train, a1) = embedded_policy(&q, 0.0, Mode::Train, &mut rng).unwrap();
    let (eval, a2) = embedded_policy(&q, 0.0, Mode::Eval, &mut rng).unwrap();
    assert_eq!(train, eval);
    assert_eq!(a1, a2);
}

#[test]
fn greedy_policy_breaks_ties_to_lowest_index() {
    let q = Tensor::new(vec![3, 1, 2], vec![1.0, 0.0, 2.0, 5.0, 2.0, 5.0]).unwrap();
    let (_, actions) = embedded_policy(&q, 0.0, Mode::Eval, &mut seed::rng(0)).unwrap();
    assert_eq!(actions, vec![1, 1]);
}

fn frequencies(column: &[f64], epsilon: f64, draws: usize, seed_value: u64) -> Vec<f64> {
    let a = column.len();
    let q = Tensor::from_fn(vec![a, 1, draws], |idx| column[idx / draws]);
    let (_, actions) = embedded_policy(&q, epsilon, Mode::Train, &mut seed::rng(seed_value)).unwrap();
    let mut counts = vec![0usize; a];
    for x in actions {
        counts[x as usize] += 1;
    }
    counts.iter().map(|&c| c as f64 / draws as f64).collect()
}

fn within_three_sigma(freq: &[f64], probs: &[f64], draws: usize) {
    for (f, p) in freq.iter().zip(probs) {
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((f - p).abs() <= 3.0 * sigma, "frequency {f} vs probability {p}");
    }
}

#[test]
fn full_exploration_samples_uniformly() {
    let draws = 100_000;
    let freq = frequencies(&[0.3, -1.0, 2.0, 0.7], 1.0, draws, 17);
    within_three_sigma(&freq, &[0.25; 4], draws);
}

#[test]
fn epsilon_greedy_distribution_puts_extra_mass_on_argmax() {
    // ε = 0.3 over three actions: 1 − 0.3 + 0.3/3 = 0.8 on the argmax, 0.1 elsewhere.
    let draws = 100_000;
    let freq = frequencies(&[0.1, 0.9, 0.3], 0.3, draws, 23);
    within_three_sigma(&freq, &[0.1, 0.8, 0.1], draws);
}

#[test]
fn epsilon_outside_unit_interval_is_rejected() {
    let q = random(&[2, 3, 3], 1.0, 1);
    for eps in [-0.1, 1.5, f64::NAN] {
        assert!(matches!(embedded_policy(&q, eps, Mode::Train, &mut seed::rng(0)), Err(Error::Validation(_))));
    }
}

// ---- ve_layer ----

#[test]
fn eval_mode_ve_layer_equals_vi_layer_bitwise() {
    let mut rng = seed::rng(99);
    for case in 0..100u64 {
        let m = rng.random_range(5..10);
        let a = rng.random_range(1..7);
        let k = if rng.random::<bool>() { 3 } else { 5 };
        let mut f = fixture(m, a, k, 1000 + 3 * case);
        let vi = vi_layer(&mut f.graph, f.value, &f.mdp).unwrap();
        let ve = ve_layer(&mut f.graph, f.value, &f.mdp, 0.7, Mode::Eval, &mut seed::rng(case)).unwrap();
        assert_eq!(f.graph.value(vi.value).data(), f.graph.value(ve.value).data(), "case {case}");
    }
}

#[test]
fn zero_epsilon_train_ve_layer_equals_vi_layer() {
    let mut f = fixture(7, 4, 3, 5);
    let vi = vi_layer(&mut f.graph, f.value, &f.mdp).unwrap();
    let ve = ve_layer(&mut f.graph, f.value, &f.mdp, 0.0, Mode::Train, &mut seed::rng(3)).unwrap();
    assert_eq!(f.graph.value(vi.value).data(), f.graph.value(ve.value).data());
}

#[test]
fn sampled_ve_layer_gathers_recorded_actions() {
    let mut f = fixture(7, 4, 3, 8);
    let ve = ve_layer(&mut f.graph, f.value, &f.mdp, 1.0, Mode::Train, &mut seed::rng(12)).unwrap();
    let q = f.graph.value(ve.q).data().to_vec();
    let n = 49;
    let gathered: Vec<f64> = ve.actions.iter().enumerate().map(|(p, &a)| q[a as usize * n + p]).collect();
    assert_eq!(f.graph.value(ve.value).data(), &gathered[..]);
    // Uniform sampling over four actions picks more than one action across 49 cells.
    assert!(ve.actions.iter().any(|&a| a != ve.actions[0]));
}

#[test]
fn sampled_policy_blocks_gradient_but_values_do_not() {
    let mut f = fixture(5, 3, 3, 21);
    let ve = ve_layer(&mut f.graph, f.value, &f.mdp, 1.0, Mode::Train, &mut seed::rng(4)).unwrap();
    let loss = f.graph.sum(ve.value).unwrap();
    f.graph.backward(loss).unwrap();
    assert!(f.graph.grad(f.value).unwrap().iter().any(|&g| g != 0.0));
    assert!(f.graph.grad(f.mdp.transition).unwrap().iter().any(|&g| g != 0.0));
}

// ---- highway_block ----

fn spec(depth: usize, paths: usize, epsilon: f64) -> BlockSpec {
    BlockSpec { depth, paths, epsilon, filter_gate: true, value_exploration: true }
}

fn scalar(g: &mut Graph<f64>, x: f64) -> Var {
    g.parameter(Tensor::scalar(x))
}

#[test]
fn single_layer_block_is_a_vi_layer() {
    for mode in [Mode::Train, Mode::Eval] {
        let mut f = fixture(6, 3, 3, 31);
        let (ad, ap) = (scalar(&mut f.graph, 1.3), scalar(&mut f.graph, 0.4));
        let vi = vi_layer(&mut f.graph, f.value, &f.mdp).unwrap();
        let mut counts = vec![0; 3];
        let out =
            highway_block(&mut f.graph, f.value, &f.mdp, &spec(1, 1, 1.0), ad, ap, mode, 7, &mut counts).unwrap();
        assert_eq!(f.graph.value(out.output).data(), f.graph.value(vi.value).data());
    }
}

#[test]
fn sharp_depth_gate_approaches_max_of_candidates() {
    let alpha = 1e4;
    let mut f = fixture(6, 4, 3, 41);
    let (ad, ap) = (scalar(&mut f.graph, alpha), scalar(&mut f.graph, 1.0));
    let mut counts = vec![0; 4];
    let out = highway_block(&mut f.graph, f.value, &f.mdp, &spec(3, 1, 0.5), ad, ap, Mode::Eval, 3, &mut counts)
        .unwrap();
    let cands: Vec<Vec<f64>> = out.candidates[0].iter().map(|&c| f.graph.value(c).data().to_vec()).collect();
    let bound = 2.0 / (std::f64::consts::E * alpha) + 1e-12;
    for (p, &o) in f.graph.value(out.output).data().iter().enumerate() {
        let top = cands.iter().map(|c| c[p]).fold(f64::NEG_INFINITY, f64::max);
        assert!(top - o <= bound && o <= top + 1e-12, "{o} vs {top}");
    }
}

#[test]
fn block_matches_straight_line_transcription() {
    let (m, a, k, eps, seed_value) = (5, 4, 3, 0.5, 77u64);
    let (alpha_depth, alpha_path) = (2.5, 0.7);
    let mut f = fixture(m, a, k, 51);
    let (ad, ap) = (scalar(&mut f.graph, alpha_depth), scalar(&mut f.graph, alpha_path));
    let mut counts = vec![0; a];
    let out =
        highway_block(&mut f.graph, f.value, &f.mdp, &spec(3, 2, eps), ad, ap, Mode::Train, seed_value, &mut counts)
            .unwrap();

    let n = m * m;
    let backup = |v: &[f64]| backup_oracle(&add(&f.r, v), &f.t, a, k, m);
    let v1 = channel_max(&backup(&f.v), a, n);
    let mut path_values = Vec::new();
    for path in 0..2u64 {
        let mut rng = seed::substream_rng(seed_value, "path", path);
        let mut current = v1.clone();
        let mut gated = vec![v1.clone()];
        for _ in 1..3 {
            let q = backup(&current);
            let greedy = channel_max(&q, a, n);
            for p in 0..n {
                let best = (0..a).find(|&x| q[x * n + p] == greedy[p]).unwrap();
                let chosen = if rng.random::<f64>() < eps { rng.random_range(0..a) } else { best };
                current[p] = q[chosen * n + p];
            }
            gated.push(current.iter().zip(&v1).map(|(c, v)| c.max(*v)).collect());
        }
        path_values.push((0..n).map(|p| smax_oracle(&gated.iter().map(|g| g[p]).collect::<Vec<_>>(), alpha_depth)).collect::<Vec<_>>());
    }
    let expected: Vec<f64> =
        (0..n).map(|p| smax_oracle(&[path_values[0][p], path_values[1][p]], alpha_path)).collect();
    for (x, y) in f.graph.value(out.output).data().iter().zip(&expected) {
        assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn filtered_block_output_dominates_vi_value() {
    let mut violated_without_gate = false;
    for case in 0..50u64 {
        for filter_gate in [true, false] {
            let mut f = fixture(7, 4, 3, 600 + 7 * case);
            let (ad, ap) = (scalar(&mut f.graph, 1.0), scalar(&mut f.graph, 1.0));
            let s = BlockSpec { filter_gate, ..spec(3, 2, 1.0) };
            let mut counts = vec![0; 4];
            let out =
                highway_block(&mut f.graph, f.value, &f.mdp, &s, ad, ap, Mode::Train, case, &mut counts).unwrap();
            let vi = f.graph.value(out.vi_value).data().to_vec();
            let below = f.graph.value(out.output).data().iter().zip(&vi).any(|(o, v)| o < v);
            if filter_gate {
                assert!(!below, "case {case}");
            } else {
                violated_without_gate |= below;
            }
        }
    }
    assert!(violated_without_gate);
}

#[test]
fn block_output_lies_within_candidate_range() {
    let mut f = fixture(7, 4, 3, 71);
    let (ad, ap) = (scalar(&mut f.graph, 3.0), scalar(&mut f.graph, -2.0));
    let mut counts = vec![0; 4];
    let out = highway_block(&mut f.graph, f.value, &f.mdp, &spec(4, 3, 0.8), ad, ap, Mode::Train, 5, &mut counts)
        .unwrap();
    let all: Vec<Vec<f64>> = out.candidates.iter().flatten().map(|&c| f.graph.value(c).data().to_vec()).collect();
    for (p, &o) in f.graph.value(out.output).data().iter().enumerate() {
        let lo = all.iter().map(|c| c[p]).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(|c| c[p]).fold(f64::NEG_INFINITY, f64::max);
        assert!(lo - 1e-12 <= o && o <= hi + 1e-12);
    }
}

#[test]
fn block_counts_every_layer_decision() {
    let mut f = fixture(5, 4, 3, 81);
    let (ad, ap) = (scalar(&mut f.graph, 1.0), scalar(&mut f.graph, 1.0));
    let mut counts = vec![0; 4];
    highway_block(&mut f.graph, f.value, &f.mdp, &spec(3, 2, 1.0), ad, ap, Mode::Train, 1, &mut counts).unwrap();
    // One VI layer plus two VE layers on each of two paths.
    assert_eq!(counts.iter().sum::<u64>(), 25 * (1 + 2 * 2));
}

#[test]
fn gradient_survives_one_hundred_identity_blocks() {
    let mut g = Graph::new();
    let reward = g.constant(random(&[5, 5], 0.1, 1));
    let transition = g.constant(delta_kernel(1, 3));
    let v0 = g.parameter(random(&[5, 5], 1.0, 2));
    let mdp = LatentMdp::new(&g, reward, transition, None).unwrap();
    let mut value = v0;
    let mut counts = vec![0; 1];
    for b in 0..100 {
        let (ad, ap) = (scalar(&mut g, 1.0), scalar(&mut g, 1.0));
        value = highway_block(&mut g, value, &mdp, &spec(2, 1, 1.0), ad, ap, Mode::Train, b, &mut counts)
            .unwrap()
            .output;
    }
    let loss = g.sum(value).unwrap();
    g.backward(loss).unwrap();
    let grad = g.grad(v0).unwrap();
    assert!(grad.iter().all(|x| x.is_finite()));
    assert!(grad.iter().any(|&x| x != 0.0));
}

// ---- plan ----

fn run_plan(config: &PlannerConfig, params: &crate::autodiff::ParamStore<f64>, obs: &Tensor<f64>, mode: Mode) -> (Graph<f64>, PlanOutput) {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, config).unwrap();
    let o = g.constant(obs.clone());
    let out = plan(&mut g, o, &bound, config, mode, 42).unwrap();
    (g, out)
}

#[test]
fn single_layer_highway_equals_vin() {
    let highway = PlannerConfig { blocks: 3, block_depth: 1, parallel_paths: 1, ..small_config(Variant::Highway) };
    let vin = PlannerConfig { depth: 3, ..small_config(Variant::Vin) };
    let params = init_params::<f64>(&highway, 5);
    let obs = random_obs(7, 3);
    for mode in [Mode::Train, Mode::Eval] {
        let (g1, o1) = run_plan(&highway, &params, &obs, mode);
        let (g2, o2) = run_plan(&vin, &params, &obs, mode);
        assert_eq!(g1.value(o1.logits).data(), g2.value(o2.logits).data());
        assert_eq!(g1.value(o1.value).data(), g2.value(o2.value).data());
    }
}

#[test]
fn single_layer_skip_equals_vin() {
    let skip = PlannerConfig { blocks: 4, block_depth: 1, ..small_config(Variant::Skip) };
    let vin = PlannerConfig { depth: 4, ..small_config(Variant::Vin) };
    let params = init_params::<f64>(&skip, 6);
    let obs = random_obs(7, 4);
    let (g1, o1) = run_plan(&skip, &params, &obs, Mode::Eval);
    let (g2, o2) = run_plan(&vin, &params, &obs, Mode::Eval);
    assert_eq!(g1.value(o1.logits).data(), g2.value(o2.logits).data());
}

#[test]
fn two_layer_vin_matches_unrolled_oracle() {
    let config = PlannerConfig { depth: 2, ..small_config(Variant::Vin) };
    let params = init_params::<f64>(&config, 8);
    let m = 5;
    let obs = random_obs(m, 9);
    let (g, out) = run_plan(&config, &params, &obs, Mode::Train);

    let get = |name: &str| params.get(name).unwrap().data().to_vec();
    let r = reward_oracle(obs.data(), &get(REWARD_HIDDEN), &get(REWARD_HIDDEN_BIAS), &get(REWARD_OUT), m);
    let t = get(TRANSITION);
    let (a, n) = (4, m * m);
    let v1 = channel_max(&backup_oracle(&r, &t, a, 3, m), a, n);
    let v2 = channel_max(&backup_oracle(&add(&r, &v1), &t, a, 3, m), a, n);
    let q = backup_oracle(&add(&r, &v2), &t, a, 3, m);
    let (w, b) = (get(HEAD_WEIGHT), get(HEAD_BIAS));
    let logits = g.value(out.logits).data();
    assert_eq!(g.value(out.logits).shape(), &[ORIENTATIONS, m, m, MOVES]);
    for o in 0..ORIENTATIONS {
        for p in 0..n {
            for mv in 0..MOVES {
                let mut expected = b[o * MOVES + mv];
                for x in 0..a {
                    expected += w[(o * MOVES + mv) * a + x] * q[x * n + p];
                }
                let got = logits[(o * n + p) * MOVES + mv];
                assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
            }
        }
    }
    assert_eq!(out.action_counts.iter().sum::<u64>(), 2 * n as u64);
}

#[test]
fn latent_action_mismatch_is_structural() {
    let config = small_config(Variant::Vin);
    let params = init_params::<f64>(&config, 1);
    let other = PlannerConfig { latent_actions: 5, ..config.clone() };
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &params, &other).unwrap();
    let o = g.constant(random_obs(5, 1));
    assert!(matches!(plan(&mut g, o, &bound, &other, Mode::Eval, 0), Err(Error::Structural(_))));
}

#[test]
fn eval_mode_plan_ignores_seed() {
    let config = small_config(Variant::Highway);
    let params = init_params::<f64>(&config, 2);
    let obs = random_obs(7, 2);
    let logits = |s: u64| {
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params, &config).unwrap();
        let o = g.constant(obs.clone());
        let out = plan(&mut g, o, &bound, &config, Mode::Eval, s).unwrap();
        g.value(out.logits).data().to_vec()
    };
    assert_eq!(logits(1), logits(2));
}

#[test]
fn train_mode_plan_is_deterministic_per_seed() {
    let config = small_config(Variant::Highway);
    let params = init_params::<f64>(&config, 2);
    let obs = random_obs(7, 2);
    let (g1, o1) = run_plan(&config, &params, &obs, Mode::Train);
    let (g2, o2) = run_plan(&config, &params, &obs, Mode::Train);
    assert_eq!(g1.value(o1.logits).data(), g2.value(o2.logits).data());
    assert_eq!(o1.action_counts, o2.action_counts);
}

#[test]
fn every_parameter_receives_a_gradient() {
    for variant in [Variant::Vin, Variant::Skip, Variant::Highway] {
        let config = small_config(variant);
        let params = init_params::<f64>(&config, 4);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params, &config).unwrap();
        let o = g.constant(random_obs(7, 4));
        let out = plan(&mut g, o, &bound, &config, Mode::Train, 1).unwrap();
        let loss = g.sum(out.logits).unwrap();
        g.backward(loss).unwrap();
        for (name, v) in &bound.vars {
            assert!(g.grad(*v).is_some(), "{variant:?}: {name} has no gradient");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn train_mode_keeps_shapes_and_filter_bound(eps in 0.0f64..=1.0, seed_value in 0u64..1000) {
        let config = PlannerConfig { epsilon: eps, ..small_config(Variant::Highway) };
        let params = init_params::<f64>(&config, seed_value);
        let obs = random_obs(7, seed_value);
        let (g, out) = run_plan(&config, &params, &obs, Mode::Train);
        prop_assert_eq!(g.value(out.logits).shape(), &[ORIENTATIONS, 7, 7, MOVES]);
        prop_assert!(g.value(out.logits).all_finite());

        let mut f = fixture(6, 4, 3, seed_value);
        let (ad, ap) = (scalar(&mut f.graph, 1.0), scalar(&mut f.graph, 1.0));
        let mut counts = vec![0; 4];
        let block = highway_block(&mut f.graph, f.value, &f.mdp, &spec(3, 2, eps), ad, ap, Mode::Train, seed_value, &mut counts).unwrap();
        let vi = f.graph.value(block.vi_value).data();
        for (o, v) in f.graph.value(block.output).data().iter().zip(vi) {
            prop_assert!(o >= v);
        }
    }
}
