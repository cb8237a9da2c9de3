//! Independent oracles: each check recomputes a library result by a different
//! route (naive loops, finite differences, dense linear algebra, simulation).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vecrl::diagnostics::{
    dormant_fraction, ess_percent, feature_rank, grad_log_kurtosis, neuron_scores, policy_variance, project_2d,
    weight_norm,
};
use vecrl::envs::{arm_means, make_env, start_cells, EnvName, BANDIT_ARMS, BANDIT_CONTEXTS, BANDIT_NOISE_STD};
use vecrl::numerics::{AdamState, Matrix, MlpSpec, NetworkParams, LAYER_NORM_EPS};
use vecrl::ppo::{ppo_update, ActorCritic, Architecture, PpoHyper};
use vecrl::pqn::{epsilon_greedy, pqn_loss_grad, pqn_target, pqn_update, PqnHyper, QNetwork};
use vecrl::rollout::{compute_gae, RolloutBatch};
use vecrl::stats::{iqm, stratified_bootstrap_ci, RunRecord};

use super::CheckResult;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, normal_vec(rows * cols, 1.0, rng)).unwrap()
}

fn random_net(spec: MlpSpec, scale: f64, rng: &mut ChaCha8Rng) -> NetworkParams {
    let theta = normal_vec(spec.num_params(), scale, rng);
    NetworkParams::from_theta(spec, theta).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Forward pass written as plain loops over one input row.
fn naive_forward_row(net: &NetworkParams, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let theta = &net.theta;
    let layers = net.layers();
    let mut h = x.to_vec();
    let mut hidden = Vec::new();
    for (li, view) in layers.iter().enumerate() {
        let mut z = vec![0.0; view.out_dim];
        for o in 0..view.out_dim {
            let mut acc = theta[view.bias.start + o];
            for i in 0..view.in_dim {
                acc += theta[view.weight.start + o * view.in_dim + i] * h[i];
            }
            z[o] = acc;
        }
        if li + 1 == layers.len() {
            return (hidden, z);
        }
        if let (Some(g), Some(s)) = (&view.ln_gain, &view.ln_shift) {
            let w = z.len() as f64;
            let mean = z.iter().sum::<f64>() / w;
            let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w;
            for (o, v) in z.iter_mut().enumerate() {
                *v = (*v - mean) / (var + LAYER_NORM_EPS).sqrt() * theta[g.start + o] + theta[s.start + o];
            }
        }
        for v in z.iter_mut() {
            *v = v.max(0.0);
        }
        hidden.push(z.clone());
        h = z;
    }
    unreachable!("network has an output layer")
}

pub fn naive_forward() -> CheckResult {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for case in 0..8 {
        let spec = MlpSpec::new(5, vec![7, 6], 3, case % 2 == 1);
        let net = random_net(spec, 0.7, &mut r);
        let x = normal_matrix(6, 5, &mut r);
        let out = net.forward(&x).map_err(|e| e.to_string())?;
        for row in 0..x.rows() {
            let (_, oracle) = naive_forward_row(&net, x.row(row));
            for (a, b) in out.output().row(row).iter().zip(&oracle) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max error {worst:.3e} > 1e-12"))?;
    Ok(format!("max error {worst:.1e}"))
}

pub fn finite_difference_gradients() -> CheckResult {
    let mut r = rng(2);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let instances = 120;
    for _ in 0..instances {
        let input = r.gen_range(2..6);
        let depth = r.gen_range(1..3);
        let hidden: Vec<usize> = (0..depth).map(|_| r.gen_range(2..7)).collect();
        let output = r.gen_range(1..4);
        let ln = r.gen_bool(0.5);
        let mut net = random_net(MlpSpec::new(input, hidden, output, ln), 0.8, &mut r);
        let x = normal_matrix(3, input, &mut r);
        let tape = net.forward(&x).unwrap();
        let ones = Matrix::from_vec(3, output, vec![1.0; 3 * output]).unwrap();
        let grad = net.backward(&tape, &ones).unwrap();
        let loss = |n: &NetworkParams| n.forward(&x).unwrap().output().data().iter().sum::<f64>();
        for i in 0..net.theta.len() {
            let orig = net.theta[i];
            net.theta[i] = orig + h;
            let up = loss(&net);
            net.theta[i] = orig - h;
            let down = loss(&net);
            net.theta[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:.3e} > 1e-4"))?;
    Ok(format!("{instances} instances, max relative error {worst:.1e}"))
}

pub fn adam_scalar_reference() -> CheckResult {
    let mut r = rng(3);
    let n = 6;
    let a: Vec<f64> = (0..n).map(|_| r.gen_range(0.1..5.0)).collect();
    let c = normal_vec(n, 2.0, &mut r);
    let mut theta = normal_vec(n, 1.0, &mut r);
    let (lr, eps) = (0.05, 1e-8);
    let mut opt = AdamState::new(n, lr, eps);
    let mut oracle = theta.clone();
    let mut worst = 0.0f64;
    for i in 0..n {
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, oracle[i]);
        for t in 1..=10 {
            let g = a[i] * (x - c[i]);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        oracle[i] = x;
    }
    for _ in 0..10 {
        let g: Vec<f64> = (0..n).map(|i| a[i] * (theta[i] - c[i])).collect();
        opt.step_chunks(&mut [theta.as_mut_slice()], &g).unwrap();
    }
    for (x, o) in theta.iter().zip(&oracle) {
        worst = worst.max((x - o).abs());
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:.3e} > 1e-10"))?;
    Ok(format!("10 steps, max deviation {worst:.1e}"))
}

pub fn keydoor_start_uniform() -> CheckResult {
    let cells = start_cells();
    let mut counts = vec![0usize; 49];
    for seed in 0..100 {
        let env = make_env(EnvName::KeyDoorGrid, 64, seed).unwrap();
        let obs = env.observations();
        for row in 0..obs.rows() {
            let pos = obs.row(row)[..49].iter().position(|&v| v == 1.0).unwrap();
            counts[pos] += 1;
        }
    }
    let total = 6400.0;
    let expected = total / cells.len() as f64;
    let stray: usize = (0..49).filter(|c| !cells.contains(c)).map(|c| counts[c]).sum();
    ensure(stray == 0, || format!("{stray} starts outside the free cells"))?;
    let chi2: f64 = cells.iter().map(|&c| (counts[c] as f64 - expected).powi(2) / expected).sum();
    // chi-square critical value, df = 40, p = 0.01
    ensure(chi2 < 63.691, || format!("chi2 {chi2:.2} >= 63.691"))?;
    Ok(format!("chi2 = {chi2:.2} over {} cells (critical 63.69)", cells.len()))
}

pub fn bandit_arm_means() -> CheckResult {
    let means = arm_means();
    let mut env = make_env(EnvName::NoisyBandit, 256, 1).unwrap();
    let mut sums = [[0.0f64; BANDIT_ARMS]; BANDIT_CONTEXTS];
    let mut counts = [[0usize; BANDIT_ARMS]; BANDIT_CONTEXTS];
    let target = 10_000;
    let mut step = 0;
    while counts.iter().flatten().any(|&c| c < target) {
        let obs = env.observations();
        let contexts: Vec<usize> = (0..256)
            .map(|i| obs.row(i).iter().position(|&v| v == 1.0).unwrap())
            .collect();
        let actions: Vec<usize> = (0..256).map(|i| (i + step) % BANDIT_ARMS).collect();
        let res = env.step(&actions).unwrap();
        for i in 0..256 {
            let (c, a) = (contexts[i], actions[i]);
            if counts[c][a] < target {
                counts[c][a] += 1;
                sums[c][a] += res.rewards[i];
            }
        }
        step += 1;
    }
    let se = BANDIT_NOISE_STD / (target as f64).sqrt();
    let tol = 3.0 * se;
    let mut worst = 0.0f64;
    let mut z2 = 0.0;
    for c in 0..BANDIT_CONTEXTS {
        for a in 0..BANDIT_ARMS {
            let dev = sums[c][a] / target as f64 - means[c][a];
            worst = worst.max(dev.abs());
            z2 += (dev / se).powi(2);
        }
    }
    // mean z² over 32 arms: chi-square(32)/32, 99% interval
    let z2 = z2 / 32.0;
    ensure(worst <= tol, || format!("max deviation {worst:.4} > {tol:.4}"))?;
    ensure((0.53..=1.67).contains(&z2), || format!("mean z² {z2:.3} outside the chi-square range"))?;
    Ok(format!("32 arms × 10000 pulls, max deviation {worst:.4} (tol {tol:.4}), mean z² {z2:.2}"))
}

fn batch_skeleton(n_envs: usize, n_ro: usize, obs_dim: usize) -> RolloutBatch {
    let n = n_envs * n_ro;
    RolloutBatch {
        n_envs,
        n_ro,
        observations: Matrix::zeros(n, obs_dim),
        actions: vec![0; n],
        rewards: vec![0.0; n],
        dones: vec![false; n],
        log_probs: vec![0.0; n],
        values: vec![0.0; n],
        bootstrap_values: vec![0.0; n_envs],
        final_observations: Matrix::zeros(n_envs, obs_dim),
        advantages: vec![0.0; n],
        returns: vec![0.0; n],
        episode_returns: Vec::new(),
    }
}

pub fn gae_direct_sum() -> CheckResult {
    let mut r = rng(4);
    let (n_envs, n_ro, gamma, lambda) = (4, 16, 0.99, 0.95);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut b = batch_skeleton(n_envs, n_ro, 1);
        b.rewards = normal_vec(b.len(), 1.0, &mut r);
        b.values = normal_vec(b.len(), 1.0, &mut r);
        b.bootstrap_values = normal_vec(n_envs, 1.0, &mut r);
        b.dones = (0..b.len()).map(|_| r.gen_bool(0.15)).collect();
        compute_gae(&mut b, gamma, lambda).unwrap();
        for e in 0..n_envs {
            let idx = |t: usize| e * n_ro + t;
            let next_v = |t: usize| if t + 1 < n_ro { b.values[idx(t + 1)] } else { b.bootstrap_values[e] };
            let delta = |t: usize| {
                let live = if b.dones[idx(t)] { 0.0 } else { 1.0 };
                b.rewards[idx(t)] + gamma * live * next_v(t) - b.values[idx(t)]
            };
            for t in 0..n_ro {
                let mut a = 0.0;
                let mut weight = 1.0;
                for k in t..n_ro {
                    a += weight * delta(k);
                    if b.dones[idx(k)] {
                        break;
                    }
                    weight *= gamma * lambda;
                }
                worst = worst.max((a - b.advantages[idx(t)]).abs());
                worst = worst.max((a + b.values[idx(t)] - b.returns[idx(t)]).abs());
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:.3e} > 1e-10"))?;
    Ok(format!("20 random 4×16 batches, max deviation {worst:.1e}"))
}

/// Hand-derived gradient of the PPO loss for a shared one-hidden-layer net,
/// with the chain rule spelled out per parameter.
fn hand_ppo_gradient(
    net: &NetworkParams,
    states: &[Vec<f64>],
    actions: &[usize],
    old_lp: &[f64],
    adv: &[f64],
    rets: &[f64],
    hp: &PpoHyper,
) -> Vec<f64> {
    let l = net.layers();
    let (l1, l2) = (&l[0], &l[1]);
    let th = &net.theta;
    let m = states.len() as f64;
    let mut grad = vec![0.0; th.len()];
    for (s, x) in states.iter().enumerate() {
        let z: Vec<f64> = (0..l1.out_dim)
            .map(|o| th[l1.bias.start + o] + (0..l1.in_dim).map(|i| th[l1.weight.start + o * l1.in_dim + i] * x[i]).sum::<f64>())
            .collect();
        let h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
        let out: Vec<f64> = (0..l2.out_dim)
            .map(|o| th[l2.bias.start + o] + (0..l2.in_dim).map(|i| th[l2.weight.start + o * l2.in_dim + i] * h[i]).sum::<f64>())
            .collect();
        let (l0, l1v, v) = (out[0], out[1], out[2]);
        let mx = l0.max(l1v);
        let lse = mx + ((l0 - mx).exp() + (l1v - mx).exp()).ln();
        let lp = [l0 - lse, l1v - lse];
        let p = [lp[0].exp(), lp[1].exp()];
        let ent = -(p[0] * lp[0] + p[1] * lp[1]);
        let a = actions[s];
        let ratio = (lp[a] - old_lp[s]).exp();
        let clipped = ratio.clamp(1.0 - hp.clip_eps, 1.0 + hp.clip_eps);
        let active = ratio * adv[s] <= clipped * adv[s];
        let mut d_out = [0.0; 3];
        for j in 0..2 {
            let dlp = if j == a { 1.0 - p[j] } else { -p[j] };
            let d_clip = if active { -ratio * adv[s] / m * dlp } else { 0.0 };
            let d_ent = -p[j] * (lp[j] + ent);
            d_out[j] = d_clip - hp.c2 / m * d_ent;
        }
        d_out[2] = hp.c1 * 2.0 * (v - rets[s]) / m;
        let mut dh = vec![0.0; l2.in_dim];
        for o in 0..3 {
            grad[l2.bias.start + o] += d_out[o];
            for i in 0..l2.in_dim {
                grad[l2.weight.start + o * l2.in_dim + i] += d_out[o] * h[i];
                dh[i] += d_out[o] * th[l2.weight.start + o * l2.in_dim + i];
            }
        }
        for o in 0..l1.out_dim {
            let dz = if z[o] > 0.0 { dh[o] } else { 0.0 };
            grad[l1.bias.start + o] += dz;
            for i in 0..l1.in_dim {
                grad[l1.weight.start + o * l1.in_dim + i] += dz * x[i];
            }
        }
    }
    grad
}

pub fn ppo_hand_adam_step() -> CheckResult {
    let mut r = rng(5);
    let spec = MlpSpec::new(2, vec![3], 3, false);
    let actor = random_net(spec, 0.9, &mut r);
    let mut net = ActorCritic::from_parts(Architecture::Shared, 2, actor.clone(), None).unwrap();
    let states = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let actions = vec![0, 1];
    let mut b = batch_skeleton(2, 1, 2);
    b.observations = Matrix::from_rows(&states).unwrap();
    b.actions = actions.clone();
    let eval = net.evaluate(&b.observations).unwrap();
    // behaviour log-probs slightly off the current policy so the ratios differ from 1
    b.log_probs = vec![eval.log_probs.get(0, 0) - 0.05, eval.log_probs.get(1, 1) + 0.3];
    b.advantages = vec![1.3, 0.7];
    b.returns = vec![0.4, -0.6];
    let hp = PpoHyper {
        clip_eps: 0.2,
        c1: 0.5,
        c2: 0.01,
        epochs: 1,
        num_minibatches: 1,
        max_grad_norm: 1e9,
        normalize_advantages: false,
    };
    let grad = hand_ppo_gradient(&actor, &states, &actions, &b.log_probs, &b.advantages, &b.returns, &hp);
    let (lr, eps) = (2.5e-4, 1e-5);
    let mut opt = AdamState::new(actor.len(), lr, eps);
    ppo_update(&mut net, &b, &hp, &mut opt, 0).unwrap();
    let mut worst = 0.0f64;
    for i in 0..actor.len() {
        // first bias-corrected Adam step: m̂ = g, v̂ = g²
        let expected = -lr * grad[i] / (grad[i].abs() + eps);
        let delta = net.actor().theta[i] - actor.theta[i];
        worst = worst.max((delta - expected).abs());
    }
    ensure(worst <= 1e-12, || format!("max parameter-delta error {worst:.3e}"))?;
    Ok(format!("{} parameters, max delta error {worst:.1e}", actor.len()))
}

pub fn epsilon_one_is_uniform() -> CheckResult {
    let mut r = rng(6);
    let q = normal_matrix(100_000, 4, &mut r);
    let acts = epsilon_greedy(&q, 1.0, &mut r);
    let mut counts = [0usize; 4];
    acts.iter().for_each(|&a| counts[a] += 1);
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / 1e5).collect();
    let worst = freqs.iter().map(|f| (f - 0.25).abs()).fold(0.0, f64::max);
    ensure(worst <= 0.01, || format!("frequencies {freqs:?}"))?;
    Ok(format!("frequencies {:.4} {:.4} {:.4} {:.4}", freqs[0], freqs[1], freqs[2], freqs[3]))
}

pub fn pqn_target_loop() -> CheckResult {
    let mut r = rng(7);
    let n = 200;
    let rewards = normal_vec(n, 1.0, &mut r);
    let dones: Vec<bool> = (0..n).map(|_| r.gen_bool(0.2)).collect();
    let next_q = normal_matrix(n, 5, &mut r);
    let got = pqn_target(&rewards, &dones, &next_q, 0.97).unwrap();
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut best = f64::NEG_INFINITY;
        for a in 0..5 {
            if next_q.get(i, a) > best {
                best = next_q.get(i, a);
            }
        }
        let t = if dones[i] { rewards[i] } else { rewards[i] + 0.97 * best };
        worst = worst.max((t - got[i]).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

pub fn pqn_terminal_gradient() -> CheckResult {
    // Q is linear in the head: ∂Q_a/∂W[a, j] = φ_j and ∂Q_a/∂b_a = 1, so the
    // head gradient of (Q_a − r)² is 2(Q_a − r)·φ and 2(Q_a − r).
    let mut r = rng(8);
    let net = QNetwork::new(4, 3, &[5], &mut r).unwrap();
    let obs = normal_matrix(1, 4, &mut r);
    let (a, reward) = (2, 0.6);
    let q = net.q_values(&obs).unwrap();
    let target = pqn_target(&[reward], &[true], &q, 0.99).unwrap();
    let (_, grad) = pqn_loss_grad(&net, &obs, &[a], &target).unwrap();
    let tape = net.params().forward(&obs).unwrap();
    let phi = tape.features().row(0).to_vec();
    let head = net.params().layers().last().unwrap().clone();
    let err = 2.0 * (q.get(0, a) - reward);
    let mut worst = 0.0f64;
    for o in 0..3 {
        let scale = if o == a { err } else { 0.0 };
        worst = worst.max((grad[head.bias.start + o] - scale).abs());
        for j in 0..head.in_dim {
            worst = worst.max((grad[head.weight.start + o * head.in_dim + j] - scale * phi[j]).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("head gradient error {worst:.3e}"))?;
    Ok(format!("head gradient error {worst:.1e}"))
}

pub fn pqn_two_state_fixed_point() -> CheckResult {
    // s0 → s1 with reward 0; s1 → terminal with reward 1; both actions alike.
    // Bellman: Q(s1, ·) = 1, Q(s0, ·) = γ·1 = 0.9.
    let mut r = rng(10);
    let mut net = QNetwork::new(2, 2, &[16], &mut r).unwrap();
    let s0 = vec![1.0, 0.0];
    let s1 = vec![0.0, 1.0];
    let mut b = batch_skeleton(4, 1, 2);
    b.observations = Matrix::from_rows(&[s0.clone(), s0, s1.clone(), s1.clone()]).unwrap();
    b.actions = vec![0, 1, 0, 1];
    b.rewards = vec![0.0, 0.0, 1.0, 1.0];
    b.dones = vec![false, false, true, true];
    b.final_observations = Matrix::from_rows(&[s1.clone(), s1.clone(), s1.clone(), s1]).unwrap();
    let hp = PqnHyper {
        gamma: 0.9,
        epochs: 1,
        num_minibatches: 1,
        max_grad_norm: 10.0,
    };
    let mut opt = AdamState::new(net.params().len(), 1e-3, 1e-8);
    for u in 0..6000u64 {
        opt.lr = if u < 4000 { 1e-3 } else { 1e-4 };
        pqn_update(&mut net, &b, &hp, &mut opt, u).unwrap();
    }
    let q = net.q_values(&b.observations).unwrap();
    let expected = [0.9, 0.9, 1.0, 1.0];
    let mut worst = 0.0f64;
    for (i, e) in expected.iter().enumerate() {
        worst = worst.max((q.get(i, b.actions[i]) - e).abs());
    }
    ensure(worst <= 1e-3, || format!("max |Q − Q*| = {worst:.3e} > 1e-3"))?;
    Ok(format!("max |Q − Q*| = {worst:.1e}"))
}

pub fn feature_rank_svd() -> CheckResult {
    let mut r = rng(11);
    let tau = 0.99;
    for trial in 0..60 {
        let mut m = normal_matrix(64, 8, &mut r);
        let decay: f64 = r.gen_range(0.05..0.9);
        for row in 0..64 {
            for c in 0..8 {
                let v = m.get(row, c) * decay.powi(c as i32);
                m.set(row, c, v);
            }
        }
        let dense = DMatrix::from_row_slice(64, 8, m.data());
        let sv = dense.singular_values();
        let mut s2: Vec<f64> = sv.iter().map(|s| s * s).collect();
        s2.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = s2.iter().sum();
        let mut acc = 0.0;
        let mut k = s2.len();
        for (i, v) in s2.iter().enumerate() {
            acc += v;
            if acc / total >= tau {
                k = i + 1;
                break;
            }
        }
        let got = feature_rank(&m, tau).unwrap();
        ensure(got == k, || format!("trial {trial}: rank {got}, SVD oracle {k}"))?;
    }
    Ok("60 random 64×8 matrices agree with dense SVD".into())
}

pub fn dormant_loop() -> CheckResult {
    let mut r = rng(12);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mut net = random_net(MlpSpec::new(6, vec![10, 8], 2, false), 1.0, &mut r);
        // push a few units far negative so they never fire
        let views = net.layers().to_vec();
        for v in &views[..2] {
            for o in 0..v.out_dim {
                if r.gen_bool(0.3) {
                    net.theta[v.bias.start + o] = -100.0;
                }
            }
        }
        let x = normal_matrix(32, 6, &mut r);
        let tape = net.forward(&x).unwrap();
        let got = dormant_fraction(&neuron_scores(tape.hidden()), 1e-5);
        let mut dormant = 0usize;
        let mut total = 0usize;
        let rows: Vec<_> = (0..32).map(|i| naive_forward_row(&net, x.row(i)).0).collect();
        for layer in 0..2 {
            for unit in 0..rows[0][layer].len() {
                let score = rows.iter().map(|h| h[layer][unit].abs()).sum::<f64>() / 32.0;
                total += 1;
                if score < 1e-5 {
                    dormant += 1;
                }
            }
        }
        let expected = dormant as f64 / total as f64 * 100.0;
        worst = worst.max((got - expected).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

pub fn weight_norm_compensated() -> CheckResult {
    let mut r = rng(13);
    let theta = normal_vec(10_000, 1.0, &mut r);
    // Neumaier-compensated sum of squares
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for t in &theta {
        let x = t * t;
        let s = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - s) + x } else { (x - s) + sum };
        sum = s;
    }
    let oracle = (sum + comp).sqrt();
    let got = weight_norm(theta.iter());
    let err = (got - oracle).abs() / oracle;
    ensure(err <= 1e-12, || format!("relative error {err:.3e}"))?;
    Ok(format!("relative error {err:.1e}"))
}

pub fn kurtosis_gaussian() -> CheckResult {
    let mut r = rng(14);
    let grads: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let z: f64 = r.sample(StandardNormal);
            let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * z.exp()
        })
        .collect();
    let k = grad_log_kurtosis(&grads, 1e-12).unwrap().ok_or("kurtosis undefined")?;
    ensure((k - 3.0).abs() <= 0.05, || format!("K = {k:.4}"))?;
    Ok(format!("K = {k:.4}"))
}

pub fn ess_hand() -> CheckResult {
    let new = [2f64.ln(), 0.0, 0.0];
    let got = ess_percent(&new, &[0.0; 3]).unwrap();
    let expected = 100.0 * (8.0 / 3.0) / 3.0;
    ensure((got - expected).abs() <= 1e-12, || format!("ESS% {got} vs {expected}"))?;
    Ok(format!("ESS% = {got:.4}"))
}

pub fn policy_variance_oracles() -> CheckResult {
    let hand = policy_variance(&Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap();
    ensure((hand - 0.25).abs() <= 1e-15, || format!("hand case gave {hand}"))?;
    let mut r = rng(15);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let logits = normal_matrix(64, 4, &mut r);
        let mut p = Matrix::zeros(64, 4);
        for i in 0..64 {
            let z: f64 = logits.row(i).iter().map(|v| v.exp()).sum();
            for a in 0..4 {
                p.set(i, a, logits.get(i, a).exp() / z);
            }
        }
        let got = policy_variance(&p).unwrap();
        let mut acc = 0.0;
        for a in 0..4 {
            let mean = (0..64).map(|i| p.get(i, a)).sum::<f64>() / 64.0;
            acc += (0..64).map(|i| (p.get(i, a) - mean).powi(2)).sum::<f64>() / 64.0;
        }
        worst = worst.max((got - acc / 4.0).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("hand case 0.25; random max deviation {worst:.1e}"))
}

pub fn projection_eigen() -> CheckResult {
    let mut r = rng(16);
    let mut worst_cos = 1.0f64;
    for _ in 0..10 {
        let mut m = normal_matrix(200, 16, &mut r);
        let mixing = normal_matrix(16, 16, &mut r);
        for row in 0..200 {
            let x: Vec<f64> = (0..16).map(|c| m.get(row, c) * 0.8f64.powi(c as i32)).collect();
            for c in 0..16 {
                m.set(row, c, (0..16).map(|k| x[k] * mixing.get(k, c)).sum());
            }
        }
        let dense = DMatrix::from_row_slice(200, 16, m.data());
        let mean = dense.row_mean();
        let centred = DMatrix::from_fn(200, 16, |i, j| dense[(i, j)] - mean[j]);
        let cov = centred.transpose() * &centred / 200.0;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..16).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let proj = project_2d(&m).unwrap();
        for (k, &idx) in order.iter().take(2).enumerate() {
            let oracle = eig.eigenvectors.column(idx);
            let comp = proj.components.row(k);
            let cos = comp.iter().zip(oracle.iter()).map(|(a, b)| a * b).sum::<f64>().abs()
                / (comp.iter().map(|a| a * a).sum::<f64>().sqrt() * oracle.norm());
            worst_cos = worst_cos.min(cos);
        }
    }
    ensure(worst_cos >= 0.999, || format!("min |cos| {worst_cos:.6} < 0.999"))?;
    Ok(format!("min |cos| = {worst_cos:.9}"))
}

/// IQM by replication: repeat every score 4 times, drop `n` from each tail of
/// the `4n` values, average the middle `2n`.
fn iqm_by_replication(scores: &[f64]) -> f64 {
    let n = scores.len();
    let mut rep: Vec<f64> = scores.iter().flat_map(|&s| [s; 4]).collect();
    rep.sort_by(f64::total_cmp);
    rep[n..3 * n].iter().sum::<f64>() / (2 * n) as f64
}

pub fn iqm_trim_oracle() -> CheckResult {
    let mut r = rng(17);
    let mut worst = 0.0f64;
    for n in [1000, 1001, 1002, 1003, 7, 5, 3, 2, 1] {
        let scores = normal_vec(n, 3.0, &mut r);
        worst = worst.max((iqm(&scores).unwrap() - iqm_by_replication(&scores)).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

pub fn bootstrap_coverage() -> CheckResult {
    // Three equally weighted strata N(−1, 1), N(0, 1), N(1, 1): the pooled
    // mixture is symmetric about 0, so its true IQM is 0.
    let mut r = rng(18);
    let sims = 500;
    let mut covered = 0;
    for sim in 0..sims {
        let mut recs = Vec::new();
        for (env, mu) in [(EnvName::ChainWalk, -1.0), (EnvName::KeyDoorGrid, 0.0), (EnvName::NoisyBandit, 1.0)] {
            for seed in 0..10 {
                let x = mu + r.sample::<f64, _>(StandardNormal);
                recs.push(RunRecord {
                    env,
                    config_id: "sim".into(),
                    seed,
                    final_score: x,
                    normalized_score: x,
                    metrics: String::new(),
                });
            }
        }
        let rep = stratified_bootstrap_ci(&recs, 10_000, 0.95, sim).unwrap();
        if rep.overall.ci_low <= 0.0 && 0.0 <= rep.overall.ci_high {
            covered += 1;
        }
    }
    let cov = covered as f64 / sims as f64;
    ensure((0.90..=0.99).contains(&cov), || format!("coverage {cov:.3} outside [0.90, 0.99]"))?;
    Ok(format!("coverage {:.1}% over {sims} simulations", cov * 100.0))
}
