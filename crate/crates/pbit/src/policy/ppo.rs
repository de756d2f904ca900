//! PPO with GAE for the recurrent navigation policy. Rollouts run a batch of
//! environments in lockstep; updates replay full-horizon segments with BPTT,
//! resetting hidden state at episode boundaries.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use super::{task_input_of, PolicyBundle, PolicyError};
use crate::navenv::episodes::{sample_episode, sample_suite};
use crate::navenv::{
    DomainStyleTheme, EpisodeSpec, NavAction, NavEnv, RenderConfig, SceneMap, StepResult,
};
use crate::nn::optim::{global_grad_norm, Adam};
use crate::nn::{Graph, Var};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub horizon: usize,
    pub lr: f64,
    pub workers: usize,
    pub minibatch_workers: usize,
    pub total_frames: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_adv: bool,
    pub seed: u64,
    /// Run a greedy evaluation every this many updates (0 = never).
    pub eval_every_updates: usize,
    pub eval_episodes_per_scene: usize,
    /// Stop once greedy success rate reaches this.
    pub target_success: Option<f64>,
    pub episode_max_steps: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 2,
            horizon: 128,
            lr: 2.5e-4,
            workers: 8,
            minibatch_workers: 2,
            total_frames: 2_000_000,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_adv: true,
            seed: 0,
            eval_every_updates: 20,
            eval_episodes_per_scene: 2,
            target_success: None,
            episode_max_steps: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub frames: usize,
    pub updates: usize,
    pub final_eval_success: Option<f64>,
    pub early_stopped: bool,
}

/// Generalized advantage estimation over a `T x W` segment.
///
/// `dones[t][w]` marks the episode ending at step t (the value function is
/// not bootstrapped across it). Returns (advantages, returns), both `T x W`.
pub fn compute_gae(
    rewards: &[Vec<f64>],
    values: &[Vec<f64>],
    bootstrap: &[f64],
    dones: &[Vec<bool>],
    gamma: f64,
    lam: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let t_len = rewards.len();
    assert_eq!(values.len(), t_len);
    assert_eq!(dones.len(), t_len);
    let w = bootstrap.len();
    let mut adv = vec![vec![0.0; w]; t_len];
    let mut ret = vec![vec![0.0; w]; t_len];
    for wi in 0..w {
        let mut gae = 0.0;
        for t in (0..t_len).rev() {
            let cont = if dones[t][wi] { 0.0 } else { 1.0 };
            let v_next = if t + 1 < t_len {
                values[t + 1][wi]
            } else {
                bootstrap[wi]
            };
            let delta = rewards[t][wi] + gamma * cont * v_next - values[t][wi];
            gae = delta + gamma * lam * cont * gae;
            adv[t][wi] = gae;
            ret[t][wi] = gae + values[t][wi];
        }
    }
    (adv, ret)
}

struct Rollout {
    obs: Vec<Array4<f64>>,
    task: Vec<Array2<f64>>,
    actions: Vec<Vec<usize>>,
    logp_old: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    rewards: Vec<Vec<f64>>,
    dones: Vec<Vec<bool>>,
    h0: Vec<Array2<f64>>,
}

struct Worker {
    env: NavEnv,
    obs: Array4<f64>,
    task: [f64; 3],
    ep_return: f64,
}

fn obs_batch_of(step: &StepResult) -> Array4<f64> {
    let (c, h, w) = step.observation.data.dim();
    let mut out = Array4::zeros((1, c, h, w));
    out.slice_mut(ndarray::s![0, .., .., ..])
        .assign(&step.observation.data);
    out
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Batched eval-mode step: (log-probs (B,3), values (B,), new hidden).
fn policy_step_eval(
    bundle: &PolicyBundle,
    obs: &Array4<f64>,
    task: &Array2<f64>,
    hidden: &[Array2<f64>],
) -> (Array2<f64>, Vec<f64>, Vec<Array2<f64>>) {
    let mut g = Graph::new(&bundle.store);
    let o = g.input(obs.clone().into_dyn());
    let f = bundle.fpi.forward(&mut g, o);
    let t = g.input(task.clone().into_dyn());
    let h: Vec<Var> = hidden.iter().map(|x| g.input(x.clone().into_dyn())).collect();
    let (logits, value, new_h) = bundle.api.step(&mut g, f, t, &h);
    let ls = g.log_softmax(logits);
    let lp = g
        .value(ls)
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap()
        .to_owned();
    let vals: Vec<f64> = g
        .value(value)
        .iter()
        .copied()
        .collect();
    let hs = new_h
        .into_iter()
        .map(|v| {
            g.value(v)
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap()
                .to_owned()
        })
        .collect();
    (lp, vals, hs)
}

/// Train the policy with PPO on the given scenes; writes a training-curve
/// CSV if `curve_path` is set. The bundle is updated in place.
pub fn train_policy(
    bundle: &mut PolicyBundle,
    scenes: &[SceneMap],
    theme: &DomainStyleTheme,
    render_cfg: &RenderConfig,
    cfg: &PpoConfig,
    curve_path: Option<&Path>,
) -> Result<TrainReport, PolicyError> {
    assert_eq!(
        render_cfg.resolution, bundle.config.image_size,
        "render resolution must match the policy input size"
    );
    assert!(!scenes.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let task = bundle.task;

    let mut curve = match curve_path {
        Some(p) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(p)?);
            writeln!(
                f,
                "frames,updates,mean_return,success_rate,loss,policy_loss,value_loss,entropy"
            )?;
            Some(f)
        }
        None => None,
    };

    // One environment per worker, scenes assigned round-robin.
    let maps: Vec<Arc<SceneMap>> = scenes.iter().cloned().map(Arc::new).collect();
    let mut workers: Vec<Worker> = Vec::with_capacity(cfg.workers);
    for w in 0..cfg.workers {
        let map = maps[w % maps.len()].clone();
        let mut env = NavEnv::new(map.clone(), theme.clone(), render_cfg.clone());
        let mut spec = sample_episode(&map, task, &mut rng)?;
        spec.max_steps = cfg.episode_max_steps;
        let r = env.reset(&spec, theme.clone())?;
        workers.push(Worker {
            env,
            obs: obs_batch_of(&r),
            task: task_input_of(task, &r),
            ep_return: 0.0,
        });
    }
    let mut hidden = bundle.api.zero_state(cfg.workers);

    let eval_specs: Vec<EpisodeSpec> = if cfg.target_success.is_some() {
        let mut specs = sample_suite(scenes, task, cfg.eval_episodes_per_scene, cfg.seed + 1)?;
        for s in &mut specs {
            s.max_steps = cfg.episode_max_steps;
        }
        specs
    } else {
        Vec::new()
    };

    let trainable: Vec<_> = bundle
        .fpi
        .params()
        .into_iter()
        .chain(bundle.api.params())
        .filter(|id| bundle.store.is_trainable(*id))
        .collect();
    let _ = &trainable; // Adam builds state lazily from the grads it sees.
    let mut adam = Adam::new(cfg.lr, 0.9, 0.999);

    let mut frames = 0usize;
    let mut updates = 0usize;
    let mut window: VecDeque<(f64, bool)> = VecDeque::new();
    let mut last_eval = None;
    let mut early_stopped = false;

    'train: while frames < cfg.total_frames {
        // ---- rollout -------------------------------------------------
        let h0 = hidden.clone();
        let t_len = cfg.horizon;
        let w = cfg.workers;
        let mut ro = Rollout {
            obs: Vec::with_capacity(t_len),
            task: Vec::with_capacity(t_len),
            actions: Vec::with_capacity(t_len),
            logp_old: Vec::with_capacity(t_len),
            values: Vec::with_capacity(t_len),
            rewards: Vec::with_capacity(t_len),
            dones: Vec::with_capacity(t_len),
            h0,
        };
        for _ in 0..t_len {
            let mut obs = Array4::zeros({
                let (_, c, h, wd) = workers[0].obs.dim();
                (w, c, h, wd)
            });
            let mut tin = Array2::zeros((w, 3));
            for (wi, wk) in workers.iter().enumerate() {
                obs.index_axis_mut(Axis(0), wi)
                    .assign(&wk.obs.index_axis(Axis(0), 0));
                for k in 0..3 {
                    tin[[wi, k]] = wk.task[k];
                }
            }
            let (lp, vals, new_h) = policy_step_eval(bundle, &obs, &tin, &hidden);
            hidden = new_h;

            let mut acts = Vec::with_capacity(w);
            let mut lps = Vec::with_capacity(w);
            for wi in 0..w {
                let probs: Vec<f64> = lp.row(wi).iter().map(|x| x.exp()).collect();
                let a = sample_categorical(&probs, &mut rng);
                lps.push(lp[[wi, a]]);
                acts.push(a);
            }

            let mut rews = Vec::with_capacity(w);
            let mut dns = Vec::with_capacity(w);
            for wi in 0..w {
                let r = workers[wi].env.step(NavAction::from_index(acts[wi]))?;
                workers[wi].ep_return += r.reward;
                rews.push(r.reward);
                dns.push(r.done);
                if r.done {
                    window.push_back((workers[wi].ep_return, r.success));
                    if window.len() > 100 {
                        window.pop_front();
                    }
                    workers[wi].ep_return = 0.0;
                    // Fresh episode on the same scene; hidden resets to zero.
                    let map = maps[wi % maps.len()].clone();
                    let mut spec = sample_episode(&map, task, &mut rng)?;
                    spec.max_steps = cfg.episode_max_steps;
                    let r2 = workers[wi].env.reset(&spec, theme.clone())?;
                    workers[wi].obs = obs_batch_of(&r2);
                    workers[wi].task = task_input_of(task, &r2);
                    for h in hidden.iter_mut() {
                        h.row_mut(wi).fill(0.0);
                    }
                } else {
                    workers[wi].obs = obs_batch_of(&r);
                    workers[wi].task = task_input_of(task, &r);
                }
            }

            ro.obs.push(obs);
            ro.task.push(tin);
            ro.actions.push(acts);
            ro.logp_old.push(lps);
            ro.values.push(vals);
            ro.rewards.push(rews);
            ro.dones.push(dns);
        }
        frames += t_len * w;

        // Bootstrap values for unfinished episodes at the segment end.
        let bootstrap: Vec<f64> = {
            let mut obs = Array4::zeros({
                let (_, c, h, wd) = workers[0].obs.dim();
                (w, c, h, wd)
            });
            let mut tin = Array2::zeros((w, 3));
            for (wi, wk) in workers.iter().enumerate() {
                obs.index_axis_mut(Axis(0), wi)
                    .assign(&wk.obs.index_axis(Axis(0), 0));
                for k in 0..3 {
                    tin[[wi, k]] = wk.task[k];
                }
            }
            let (_, vals, _) = policy_step_eval(bundle, &obs, &tin, &hidden);
            vals
        };

        let (mut adv, ret) = compute_gae(
            &ro.rewards,
            &ro.values,
            &bootstrap,
            &ro.dones,
            cfg.gamma,
            cfg.gae_lambda,
        );
        if cfg.normalize_adv {
            let n = (t_len * w) as f64;
            let mean: f64 = adv.iter().flatten().sum::<f64>() / n;
            let var: f64 = adv.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt().max(1e-8);
            for row in adv.iter_mut() {
                for a in row.iter_mut() {
                    *a = (*a - mean) / sd;
                }
            }
        }

        // ---- update --------------------------------------------------
        let mut loss_sum = 0.0;
        let mut pol_sum = 0.0;
        let mut vf_sum = 0.0;
        let mut ent_sum = 0.0;
        let mut mb_count = 0usize;
        let mbw = cfg.minibatch_workers.min(w).max(1);
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..w).collect();
            if epoch > 0 {
                // Deterministic shuffle between epochs.
                for i in (1..order.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    order.swap(i, j);
                }
            }
            for group in order.chunks(mbw) {
                let (loss, pol, vf, ent) =
                    ppo_minibatch_step(bundle, &ro, &adv, &ret, group, cfg, &mut adam);
                if !loss.is_finite() {
                    return Err(PolicyError::Diverged(frames));
                }
                loss_sum += loss;
                pol_sum += pol;
                vf_sum += vf;
                ent_sum += ent;
                mb_count += 1;
            }
        }
        updates += 1;

        let mean_return = if window.is_empty() {
            0.0
        } else {
            window.iter().map(|(r, _)| r).sum::<f64>() / window.len() as f64
        };
        let success_rate = if window.is_empty() {
            0.0
        } else {
            window.iter().filter(|(_, s)| *s).count() as f64 / window.len() as f64
        };
        if let Some(f) = curve.as_mut() {
            writeln!(
                f,
                "{},{},{:.6},{:.4},{:.6},{:.6},{:.6},{:.6}",
                frames,
                updates,
                mean_return,
                success_rate,
                loss_sum / mb_count as f64,
                pol_sum / mb_count as f64,
                vf_sum / mb_count as f64,
                ent_sum / mb_count as f64
            )?;
            f.flush()?;
        }

        if let Some(target) = cfg.target_success {
            let due = cfg.eval_every_updates > 0 && updates % cfg.eval_every_updates == 0;
            if due && success_rate >= target * 0.8 {
                let stats = evaluate_greedy(bundle, scenes, &eval_specs, theme, render_cfg)?;
                last_eval = Some(stats.success_rate);
                if stats.success_rate >= target {
                    early_stopped = true;
                    break 'train;
                }
            }
        }
    }

    Ok(TrainReport {
        frames,
        updates,
        final_eval_success: last_eval,
        early_stopped,
    })
}

/// One clipped-surrogate gradient step on a subset of workers with
/// full-horizon BPTT. Returns (total, policy, value, entropy) means.
#[allow(clippy::too_many_arguments)]
fn ppo_minibatch_step(
    bundle: &mut PolicyBundle,
    ro: &Rollout,
    adv: &[Vec<f64>],
    ret: &[Vec<f64>],
    group: &[usize],
    cfg: &PpoConfig,
    adam: &mut Adam,
) -> (f64, f64, f64, f64) {
    let t_len = ro.obs.len();
    let b = group.len();
    let denom = (t_len * b) as f64;

    let mut g = Graph::new(&bundle.store);
    let mut h: Vec<Var> = ro
        .h0
        .iter()
        .map(|hm| g.input(hm.select(Axis(0), group).into_dyn()))
        .collect();
    let mut pol_acc: Option<Var> = None;
    let mut vf_acc: Option<Var> = None;
    let mut ent_acc: Option<Var> = None;
    let add_to = |g: &mut Graph, acc: &mut Option<Var>, v: Var| {
        *acc = Some(match *acc {
            None => v,
            Some(a) => g.add(a, v),
        });
    };

    for t in 0..t_len {
        let obs = g.input(ro.obs[t].select(Axis(0), group).into_dyn());
        let tin = g.input(ro.task[t].select(Axis(0), group).into_dyn());
        let f = bundle.fpi.forward(&mut g, obs);
        let (logits, value, new_h) = bundle.api.step(&mut g, f, tin, &h);
        h = new_h;

        let ls = g.log_softmax(logits);
        let acts: Vec<usize> = group.iter().map(|&wi| ro.actions[t][wi]).collect();
        let logp = g.pick(ls, acts);
        let lp_old = g.input(
            Array1::from_iter(group.iter().map(|&wi| ro.logp_old[t][wi])).into_dyn(),
        );
        let adv_in = g.input(Array1::from_iter(group.iter().map(|&wi| adv[t][wi])).into_dyn());
        let d = g.sub(logp, lp_old);
        let ratio = g.exp(d);
        let surr1 = g.mul(ratio, adv_in);
        let clipped = g.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        let surr2 = g.mul(clipped, adv_in);
        let m = g.min_elem(surr1, surr2);
        let s = g.sum_all(m);
        add_to(&mut g, &mut pol_acc, s);

        let v = g.sum_rows(value); // (B,1) -> (B,)
        let ret_in = g.input(Array1::from_iter(group.iter().map(|&wi| ret[t][wi])).into_dyn());
        let dv = g.sub(v, ret_in);
        let sq = g.mul(dv, dv);
        let sv = g.sum_all(sq);
        add_to(&mut g, &mut vf_acc, sv);

        let p = g.exp(ls);
        let pl = g.mul(p, ls);
        let se = g.sum_all(pl); // = -sum entropy
        add_to(&mut g, &mut ent_acc, se);

        // Hidden state resets where episodes ended at step t.
        if group.iter().any(|&wi| ro.dones[t][wi]) {
            let hid = bundle.api.hidden;
            let mut mask = Array2::ones((b, hid));
            for (bi, &wi) in group.iter().enumerate() {
                if ro.dones[t][wi] {
                    mask.row_mut(bi).fill(0.0);
                }
            }
            let mv = g.input(mask.into_dyn());
            h = h.into_iter().map(|hv| g.mul(hv, mv)).collect();
        }
    }

    let pol = g.mul_scalar(pol_acc.unwrap(), -1.0 / denom);
    let vf = g.mul_scalar(vf_acc.unwrap(), cfg.value_coef / denom);
    let ent = g.mul_scalar(ent_acc.unwrap(), cfg.entropy_coef / denom);
    let pv = g.add(pol, vf);
    let loss = g.add(pv, ent);
    let loss_val = g.scalar(loss);
    let pol_val = g.scalar(pol);
    let vf_val = g.scalar(vf);
    let ent_val = -g.scalar(ent) / cfg.entropy_coef;
    if !loss_val.is_finite() {
        return (loss_val, pol_val, vf_val, ent_val);
    }

    let grads = g.backward(loss);
    let pg = g.param_grads(&grads);
    let norm = global_grad_norm(&pg);
    let scale = if norm > cfg.max_grad_norm {
        cfg.max_grad_norm / (norm + 1e-12)
    } else {
        1.0
    };
    adam.step(&mut bundle.store, &pg, scale);
    (loss_val, pol_val, vf_val, ent_val)
}

#[derive(Debug, Clone, Copy)]
pub struct EvalStats {
    pub success_rate: f64,
    pub spl: f64,
    pub mean_return: f64,
}

/// Greedy (argmax) evaluation over a fixed episode suite.
pub fn evaluate_greedy(
    bundle: &PolicyBundle,
    scenes: &[SceneMap],
    specs: &[EpisodeSpec],
    theme: &DomainStyleTheme,
    render_cfg: &RenderConfig,
) -> Result<EvalStats, PolicyError> {
    let mut succ = 0usize;
    let mut spl = 0.0;
    let mut ret_sum = 0.0;
    for spec in specs {
        let map = scenes
            .iter()
            .find(|m| m.id == spec.scene_id)
            .ok_or_else(|| crate::navenv::NavError::UnknownScene(spec.scene_id.clone()))?;
        let mut env = NavEnv::new(Arc::new(map.clone()), theme.clone(), render_cfg.clone());
        let mut r = env.reset(spec, theme.clone())?;
        let mut hidden = bundle.api.zero_state(1);
        let mut ep_ret = 0.0;
        while !r.done {
            let obs = obs_batch_of(&r);
            let tin = {
                let ti = task_input_of(bundle.task, &r);
                Array2::from_shape_vec((1, 3), ti.to_vec()).unwrap()
            };
            let (lp, _, new_h) = policy_step_eval(bundle, &obs, &tin, &hidden);
            hidden = new_h;
            let a = lp
                .row(0)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            r = env.step(NavAction::from_index(a))?;
            ep_ret += r.reward;
        }
        ret_sum += ep_ret;
        if r.success {
            succ += 1;
            let l = env.shortest_path();
            let p = env.path_len();
            spl += l / l.max(p);
        }
    }
    let n = specs.len().max(1) as f64;
    Ok(EvalStats {
        success_rate: succ as f64 / n,
        spl: spl / n,
        mean_return: ret_sum / n,
    })
}
