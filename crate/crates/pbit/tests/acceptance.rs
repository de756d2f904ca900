//! Acceptance gate: ten end-to-end criteria with pinned tolerances.
//!
//! Run with `cargo test --test acceptance -- --nocapture`. The suite trains
//! a policy and six translators from scratch, so it runs for an extended
//! period. One PASS/FAIL line is printed per criterion; the test fails if
//! any criterion fails.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pbit::adapt::{sample_image_pool, train_adaptation, AdaptConfig};
use pbit::eval::{
    pca_feature_analysis, pool_to_batch, run_episode, run_suite, style_consistency, EvalArm,
};
use pbit::losses::{
    adversarial_discriminator_loss, adversarial_generator_loss, compute_lambda_pol,
    full_generator_objective, image_reconstruction_loss, latent_reconstruction_loss,
    policy_consistency_loss, LossWeights,
};
use pbit::navenv::episodes::sample_suite;
use pbit::navenv::map::{builtin_eval_scenes, builtin_train_scenes, generate_maze, MazeParams};
use pbit::navenv::{
    compute_metrics, Domain, DomainStyleTheme, NavEnv, RenderConfig, SceneMap, TaskKind,
    SUCCESS_RADIUS_M,
};
use pbit::nn::{finite_diff_rel_err, Graph, ParamId, ParamStore};
use pbit::policy::ppo::{compute_gae, evaluate_greedy};
use pbit::policy::{train_policy, FeatureExtractor, PolicyBundle, PolicyConfig, PpoConfig};
use pbit::translation::{TranslationConfig, Translator};

// ---------------------------------------------------------------------------
// Scale of the experiment the gate runs. Small enough for a single CPU core,
// large enough that the directional claims are meaningful.
// ---------------------------------------------------------------------------

const IMAGE: usize = 16;

fn policy_config() -> PolicyConfig {
    PolicyConfig {
        image_size: IMAGE,
        feature_dim: 32,
        base_channels: 8,
        gru_hidden: 64,
        gru_layers: 1,
        task_input_dim: 3,
    }
}

fn ppo_config() -> PpoConfig {
    PpoConfig {
        // The largest multiple of horizon x workers below the 2M budget.
        total_frames: 1_999_872,
        horizon: 128,
        workers: 8,
        minibatch_workers: 2,
        episode_max_steps: 150,
        eval_every_updates: 10,
        eval_episodes_per_scene: 2,
        target_success: Some(0.8),
        seed: 1,
        ..PpoConfig::default()
    }
}

fn translation_config() -> TranslationConfig {
    TranslationConfig {
        image_size: IMAGE,
        base_channels: 8,
        style_dim: 8,
        n_res_blocks: 1,
        dis_scales: 2,
        style_mlp_hidden: 16,
    }
}

fn adapt_config(seed: u64, ablation: bool) -> AdaptConfig {
    AdaptConfig {
        lr: 1e-4,
        lr_halve_every: 600,
        total_iters: 1_200,
        batch_size: 8,
        seed,
        lambda_pol_override: if ablation { Some(0.0) } else { None },
        checkpoint_every: 0,
        ..AdaptConfig::default()
    }
}

const ADAPT_POOL: usize = 256;
const SEEDS: [u64; 3] = [0, 1, 2];
/// Paired held-out target-domain episodes: 4 eval scenes x 50.
const EVAL_EPISODES_PER_SCENE: usize = 50;
const EVAL_SUITE_SEED: u64 = 4242;
const EVAL_MAX_STEPS: usize = 200;

fn render_config() -> RenderConfig {
    RenderConfig {
        resolution: IMAGE,
        ..RenderConfig::default()
    }
}

fn out_root() -> PathBuf {
    let dir = std::env::temp_dir().join("pbit-acceptance");
    std::fs::create_dir_all(&dir).expect("create artifact dir");
    dir
}

// ---------------------------------------------------------------------------
// Micro-model helpers (criterion 1 and 2).
// ---------------------------------------------------------------------------

fn micro_policy_config() -> PolicyConfig {
    PolicyConfig {
        image_size: 8,
        feature_dim: 4,
        base_channels: 2,
        gru_hidden: 6,
        gru_layers: 1,
        task_input_dim: 3,
    }
}

fn micro_translation_config() -> TranslationConfig {
    TranslationConfig {
        image_size: 8,
        base_channels: 2,
        style_dim: 3,
        n_res_blocks: 1,
        dis_scales: 1,
        style_mlp_hidden: 4,
    }
}

/// Frozen feature extractor and translator sharing one parameter store,
/// with every parameter jittered so no ReLU path is dead at init.
fn micro_session() -> (FeatureExtractor, Translator) {
    let mut store = ParamStore::new();
    let fpi = FeatureExtractor::new(&mut store, &micro_policy_config(), 11);
    let fpi_ids: Vec<ParamId> = fpi.params();
    let mut t = Translator::with_store(store, micro_translation_config(), 12);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ids: Vec<ParamId> = t.store.ids().collect();
    for id in ids {
        t.store
            .get_mut(id)
            .mapv_inplace(|v| v + 0.1 * (rng.gen::<f64>() - 0.5));
    }
    for id in fpi_ids {
        t.store.set_trainable(id, false);
    }
    (fpi, t)
}

fn rand_images(b: usize, n: usize, seed: u64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn((b, 3, n, n), || rng.gen::<f64>() * 2.0 - 1.0)
}

fn rand_styles(b: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((b, d), || rng.gen::<f64>() - 0.5)
}

/// Which adaptation loss a closure evaluates.
#[derive(Clone, Copy, PartialEq)]
enum LossKind {
    Pol,
    ImRec,
    LatRec,
    Adv,
    Full,
}

/// One adaptation step's losses on fixed inputs, reduced to the requested
/// scalar (only the sub-graph that scalar needs is built). `L_adv` is the
/// discriminator loss with in-graph fakes, so its gradient exercises both
/// players.
fn micro_loss(
    g: &mut Graph,
    fpi: &FeatureExtractor,
    t: &Translator,
    kind: LossKind,
) -> pbit::nn::Var {
    let cfgt = micro_translation_config();
    let xs = g.input(rand_images(2, 8, 31).into_dyn());
    let xt = g.input(rand_images(2, 8, 32).into_dyn());
    let ss = g.input(rand_styles(2, cfgt.style_dim, 33).into_dyn());
    let st = g.input(rand_styles(2, cfgt.style_dim, 34).into_dyn());
    let (cs, es) = t.encode(g, Domain::Source, xs);
    let (ct, et) = t.encode(g, Domain::Target, xt);

    let image_rec = |g: &mut Graph| {
        let rs = t.decode(g, Domain::Source, cs, es);
        let rt = t.decode(g, Domain::Target, ct, et);
        image_reconstruction_loss(g, rs, xs, rt, xt)
    };
    let fakes = |g: &mut Graph| {
        let fs = t.decode(g, Domain::Source, ct, ss);
        let ft = t.decode(g, Domain::Target, cs, st);
        (fs, ft)
    };
    let latent_rec = |g: &mut Graph, fs, ft| {
        let (ct_rec, ss_rec) = t.encode(g, Domain::Source, fs);
        let (cs_rec, st_rec) = t.encode(g, Domain::Target, ft);
        latent_reconstruction_loss(g, &[(ct, ct_rec, ss, ss_rec), (cs, cs_rec, st, st_rec)])
    };
    let policy_term = |g: &mut Graph, fs| {
        let f_t = fpi.forward(g, xt);
        let f_fs = fpi.forward(g, fs);
        policy_consistency_loss(g, f_t, f_fs)
    };

    match kind {
        LossKind::Pol => {
            let (fs, _) = fakes(g);
            policy_term(g, fs)
        }
        LossKind::ImRec => image_rec(g),
        LossKind::LatRec => {
            let (fs, ft) = fakes(g);
            latent_rec(g, fs, ft)
        }
        LossKind::Adv => {
            let (fs, ft) = fakes(g);
            let rl_s = t.discriminate(g, Domain::Source, xs);
            let fl_s = t.discriminate(g, Domain::Source, fs);
            let rl_t = t.discriminate(g, Domain::Target, xt);
            let fl_t = t.discriminate(g, Domain::Target, ft);
            let a = adversarial_discriminator_loss(g, &rl_s, &fl_s);
            let b = adversarial_discriminator_loss(g, &rl_t, &fl_t);
            g.add(a, b)
        }
        LossKind::Full => {
            let l_im = image_rec(g);
            let (fs, ft) = fakes(g);
            let l_lat = latent_rec(g, fs, ft);
            let l_pol = policy_term(g, fs);
            let dl_s = t.discriminate(g, Domain::Source, fs);
            let dl_t = t.discriminate(g, Domain::Target, ft);
            let gs = adversarial_generator_loss(g, &dl_s, false);
            let gt = adversarial_generator_loss(g, &dl_t, false);
            let l_adv_gen = g.add(gs, gt);
            let w = LossWeights {
                lambda_pol: 0.25,
                lambda_im_rec: 10.0,
                lambda_lat_rec: 1.0,
                lambda_adv: 1.0,
            };
            full_generator_objective(g, &w, l_pol, l_im, l_lat, l_adv_gen)
        }
    }
}

fn criterion_1_gradients() -> Result<String, String> {
    let start = Instant::now();
    let (fpi, mut t) = micro_session();
    let mut details = Vec::new();
    for (name, kind) in [
        ("L_pol", LossKind::Pol),
        ("L_im_rec", LossKind::ImRec),
        ("L_lat_rec", LossKind::LatRec),
        ("L_adv", LossKind::Adv),
        ("L_full", LossKind::Full),
    ] {
        // Analytic gradients.
        let analytic: Vec<(ParamId, ndarray::ArrayD<f64>)> = {
            let mut g = Graph::new(&t.store);
            let l = micro_loss(&mut g, &fpi, &t, kind);
            let grads = g.backward(l);
            g.param_grads(&grads)
                .into_iter()
                .map(|(id, a)| (id, a.clone()))
                .collect()
        };
        // Check every trainable parameter whose true gradient is nonzero
        // (finite differences produce pure noise on exact zeros, e.g.
        // conv shifts erased by a downstream instance norm), within an
        // element budget that keeps the criterion inside its time box.
        let mut ids: Vec<ParamId> = Vec::new();
        let mut elements = 0usize;
        for (id, grad) in &analytic {
            let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= 1e-8 {
                continue;
            }
            if elements + grad.len() > 1_200 {
                continue;
            }
            elements += grad.len();
            ids.push(*id);
        }
        if ids.len() < 6 {
            return Err(format!("{name}: only {} checkable parameters", ids.len()));
        }
        // finite_diff_rel_err needs the store mutably while the loss
        // closure needs the networks; move the store out of the translator
        // for the duration (the networks only hold parameter ids).
        let err = {
            let mut store = std::mem::take(&mut t.store);
            let run = |store: &ParamStore| -> f64 {
                let mut g = Graph::new(store);
                let l = micro_loss(&mut g, &fpi, &t, kind);
                g.scalar(l)
            };
            let e = finite_diff_rel_err(&mut store, &ids, &analytic, 1e-6, run);
            t.store = store;
            e
        };
        if err >= 1e-4 {
            return Err(format!("{name}: rel err {err:.3e} >= 1e-4"));
        }
        details.push(format!("{name} {err:.1e}/{} params", ids.len()));
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 300.0 {
        return Err(format!("runtime {secs:.0}s >= 300s"));
    }
    Ok(format!("{} ({secs:.0}s)", details.join(", ")))
}

fn criterion_2_loss_identities() -> Result<String, String> {
    let (fpi, t) = micro_session();
    let store = &t.store;

    // s1 = s2: identical observations in both simulators -> L_pol = 0.
    {
        let mut g = Graph::new(store);
        let x = rand_images(3, 8, 41);
        let a = g.input(x.clone().into_dyn());
        let b = g.input(x.into_dyn());
        let fa = fpi.forward(&mut g, a);
        let fb = fpi.forward(&mut g, b);
        let l = policy_consistency_loss(&mut g, fa, fb);
        if g.scalar(l) != 0.0 {
            return Err(format!("L_pol on identical domains = {}", g.scalar(l)));
        }
    }
    // Identity autoencoder stub -> L_im_rec = 0.
    {
        let mut g = Graph::new(store);
        let xs = g.input(rand_images(2, 8, 42).into_dyn());
        let xt = g.input(rand_images(2, 8, 43).into_dyn());
        let l = image_reconstruction_loss(&mut g, xs, xs, xt, xt);
        if g.scalar(l) != 0.0 {
            return Err(format!("L_im_rec under identity stub = {}", g.scalar(l)));
        }
    }
    // All lambdas zero -> L_full = 0 regardless of the terms.
    {
        let mut g = Graph::new(store);
        let mut term = |v: f64| g.input(ndarray::arr0(v).into_dyn());
        let (a, b, c, d) = (term(1.7), term(-0.3), term(2.9), term(0.11));
        let w = LossWeights {
            lambda_pol: 0.0,
            lambda_im_rec: 0.0,
            lambda_lat_rec: 0.0,
            lambda_adv: 0.0,
        };
        let l = full_generator_objective(&mut g, &w, a, b, c, d);
        if g.scalar(l) != 0.0 {
            return Err(format!("L_full with all-zero lambdas = {}", g.scalar(l)));
        }
    }
    // Weighted-sum identity to 1e-6.
    {
        let mut g = Graph::new(store);
        let vals = [0.37, 1.21, -0.45, 0.83];
        let w = LossWeights {
            lambda_pol: 0.25,
            lambda_im_rec: 10.0,
            lambda_lat_rec: 1.0,
            lambda_adv: 2.0,
        };
        let mut term = |v: f64| g.input(ndarray::arr0(v).into_dyn());
        let (a, b, c, d) = (term(vals[0]), term(vals[1]), term(vals[2]), term(vals[3]));
        let l = full_generator_objective(&mut g, &w, a, b, c, d);
        let manual = w.lambda_pol * vals[0]
            + w.lambda_im_rec * vals[1]
            + w.lambda_lat_rec * vals[2]
            + w.lambda_adv * vals[3];
        let diff = (g.scalar(l) - manual).abs();
        if diff > 1e-6 {
            return Err(format!("weighted-sum identity off by {diff:.3e}"));
        }
    }
    Ok("all four identities hold".into())
}

fn criterion_3_lambda_rule(
    policy: &PolicyBundle,
    scenes: &[SceneMap],
    rc: &RenderConfig,
) -> Result<String, String> {
    // Mean feature L1 norm 4.0 -> lambda_pol = 0.25, exactly.
    let f = ndarray::arr2(&[[1.0, -3.0], [2.0, 2.0], [-4.0, 0.0]]);
    let lam = compute_lambda_pol(&f).map_err(|e| e.to_string())?;
    if lam != 0.25 {
        return Err(format!("norm-4 batch gave lambda {lam}, expected 0.25"));
    }
    // Stability across disjoint 500-image resamples of the source pool.
    let pool = sample_image_pool(scenes, Domain::Source, rc, 1_000, 8_080);
    let lam_of = |imgs: &[pbit::navenv::ImageSample]| -> Result<f64, String> {
        let feats = policy.extract_features(&pool_to_batch(imgs));
        compute_lambda_pol(&feats).map_err(|e| e.to_string())
    };
    let l1 = lam_of(&pool[..500])?;
    let l2 = lam_of(&pool[500..])?;
    let rel = (l1 - l2).abs() / l1;
    if rel > 0.05 {
        return Err(format!(
            "lambda unstable: {l1:.6} vs {l2:.6} (rel diff {rel:.3})"
        ));
    }
    Ok(format!("exact 0.25; resamples {l1:.4} vs {l2:.4} (rel {rel:.3})"))
}

/// Independent geodesic oracle: plain breadth-first search written against
/// the occupancy grid only, no shared code with `SceneMap::bfs_field`.
fn oracle_geodesic(map: &SceneMap, a: (f64, f64), b: (f64, f64)) -> Option<f64> {
    let cell = |x: f64, y: f64| -> Option<(usize, usize)> {
        let c = (x / map.cell_size).floor() as isize;
        let r = (y / map.cell_size).floor() as isize;
        if r < 0 || c < 0 || r as usize >= map.rows() || c as usize >= map.cols() {
            return None;
        }
        Some((r as usize, c as usize))
    };
    let start = cell(a.0, a.1)?;
    let goal = cell(b.0, b.1)?;
    if map.is_occupied_cell(start.0, start.1) || map.is_occupied_cell(goal.0, goal.1) {
        return None;
    }
    let mut dist = vec![vec![usize::MAX; map.cols()]; map.rows()];
    let mut q = VecDeque::new();
    dist[start.0][start.1] = 0;
    q.push_back(start);
    while let Some((r, c)) = q.pop_front() {
        if (r, c) == goal {
            return Some(dist[r][c] as f64 * map.cell_size);
        }
        let d = dist[r][c] + 1;
        let mut push = |rr: usize, cc: usize, d: usize| {
            if !map.is_occupied_cell(rr, cc) && dist[rr][cc] == usize::MAX {
                dist[rr][cc] = d;
                q.push_back((rr, cc));
            }
        };
        if r > 0 {
            push(r - 1, c, d);
        }
        if r + 1 < map.rows() {
            push(r + 1, c, d);
        }
        if c > 0 {
            push(r, c - 1, d);
        }
        if c + 1 < map.cols() {
            push(r, c + 1, d);
        }
    }
    Some(f64::INFINITY)
}

fn criterion_5_metric_oracles(
    policy: &PolicyBundle,
    eval_scenes: &[SceneMap],
    rc: &RenderConfig,
) -> Result<String, String> {
    // (a) geodesic == exhaustive BFS on 20 random maps no larger than 32x32.
    let params = MazeParams {
        maze_cells: 4,
        corridor: 4,
        wall: 2,
        braid: 0.3,
        cell_size: 0.1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut checked = 0usize;
    for i in 0..20 {
        let map = generate_maze(&format!("oracle_{i}"), 7_000 + i, &params);
        assert!(map.rows() <= 32 && map.cols() <= 32);
        let comp = map.largest_component();
        for _ in 0..5 {
            let a = comp[rng.gen_range(0..comp.len())];
            let b = comp[rng.gen_range(0..comp.len())];
            let pa = map.cell_center(a.0, a.1);
            let pb = map.cell_center(b.0, b.1);
            let got = map.geodesic(pa, pb).map_err(|e| e.to_string())?;
            let want = oracle_geodesic(&map, pa, pb).ok_or("oracle failed")?;
            if got != want {
                return Err(format!(
                    "geodesic mismatch on map {i}: {got} vs oracle {want}"
                ));
            }
            checked += 1;
        }
    }

    // (b) metrics recomputed by an independent trajectory pass, and
    // (c) the PointGoal telescoping identity, on replayed greedy episodes.
    let mut specs = sample_suite(eval_scenes, TaskKind::PointGoal, 2, 31_337)
        .map_err(|e| e.to_string())?;
    for s in &mut specs {
        s.max_steps = 80;
    }
    let theme = DomainStyleTheme::for_domain(Domain::Source);
    let arm = EvalArm::direct_transfer();
    for spec in &specs {
        let rec = run_episode(policy, eval_scenes, spec, Domain::Source, rc, &arm, false)
            .map_err(|e| e.to_string())?;
        let m = compute_metrics(&rec);
        let map = eval_scenes
            .iter()
            .find(|s| s.id == spec.scene_id)
            .expect("scene");

        // Independent pass: replay the recorded actions in a fresh env.
        let mut env = NavEnv::new(Arc::new(map.clone()), theme.clone(), rc.clone());
        let mut r = env
            .reset(spec, theme.clone())
            .map_err(|e| e.to_string())?;
        for &a in &rec.actions {
            r = env.step(a).map_err(|e| e.to_string())?;
        }
        let goal = spec.goal.expect("pointgoal episode");
        let fin = env.current_pose().expect("pose");
        let dist_goal = ((fin.x - goal.0).powi(2) + (fin.y - goal.1).powi(2)).sqrt();
        let success = if dist_goal < SUCCESS_RADIUS_M { 1.0 } else { 0.0 };
        let mut path = 0.0;
        for w in rec.poses.windows(2) {
            path += ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
        }
        let shortest =
            oracle_geodesic(map, (spec.start.x, spec.start.y), goal).ok_or("oracle failed")?;
        let spl = if success == 1.0 {
            shortest / shortest.max(path)
        } else {
            0.0
        };
        let explored_ratio = env.explored_area() / map.traversable_area();
        if success != m.success {
            return Err(format!("success mismatch: replay {success} vs {}", m.success));
        }
        if spl != m.spl {
            return Err(format!("spl mismatch: replay {spl} vs {}", m.spl));
        }
        if explored_ratio != m.explored_ratio {
            return Err(format!(
                "explored-ratio mismatch: replay {explored_ratio} vs {}",
                m.explored_ratio
            ));
        }
        if path != m.path_len {
            return Err(format!("path mismatch: replay {path} vs {}", m.path_len));
        }

        // Telescoping identity, exactly.
        let total: f64 = rec.rewards.iter().sum();
        let d_start = map
            .geodesic((spec.start.x, spec.start.y), goal)
            .map_err(|e| e.to_string())?;
        let d_end = map.geodesic((fin.x, fin.y), goal).map_err(|e| e.to_string())?;
        if total != d_start - d_end {
            return Err(format!(
                "telescoping violated: sum {total} vs {}",
                d_start - d_end
            ));
        }
        if !r.done {
            return Err("replayed episode did not finish".into());
        }
    }
    Ok(format!(
        "{checked} geodesic pairs exact; {} episodes replayed exactly",
        specs.len()
    ))
}

fn criterion_6_gae_exact() -> Result<(), String> {
    let rewards = vec![vec![1.0], vec![-2.0], vec![0.5]];
    let values = vec![vec![0.25], vec![-0.25], vec![0.75]];
    let bootstrap = vec![2.0];
    let dones = vec![vec![false], vec![false], vec![false]];
    let (adv, ret) = compute_gae(&rewards, &values, &bootstrap, &dones, 1.0, 1.0);
    let future = [
        1.0 - 2.0 + 0.5 + 2.0,
        -2.0 + 0.5 + 2.0,
        0.5 + 2.0,
    ];
    for t in 0..3 {
        if adv[t][0] != future[t] - values[t][0] {
            return Err(format!("GAE at t={t}: {} != returns-baseline", adv[t][0]));
        }
        if ret[t][0] != adv[t][0] + values[t][0] {
            return Err(format!("returns at t={t} inconsistent"));
        }
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn stddev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn main_fixtures() -> (
    PolicyBundle,
    Vec<SceneMap>,
    Vec<SceneMap>,
    RenderConfig,
    PathBuf,
) {
    let root = out_root();
    let train_scenes = builtin_train_scenes();
    let eval_scenes = builtin_eval_scenes();
    let rc = render_config();
    (
        PolicyBundle::new(policy_config(), TaskKind::PointGoal, 7),
        train_scenes,
        eval_scenes,
        rc,
        root,
    )
}

#[test]
fn acceptance_criteria() {
    let mut results: Vec<(usize, &str, Result<String, String>)> = Vec::new();
    let started = Instant::now();

    println!("[acceptance] criterion 1: gradient correctness");
    results.push((1, "gradient correctness", criterion_1_gradients()));

    println!("[acceptance] criterion 2: loss identities");
    results.push((2, "loss identities", criterion_2_loss_identities()));

    let (mut policy, train_scenes, eval_scenes, rc, root) = main_fixtures();

    // ---- criterion 6 fixture: PPO training -----------------------------
    println!("[acceptance] training policy (criterion 6)...");
    let theme_src = DomainStyleTheme::for_domain(Domain::Source);
    let ppo = ppo_config();
    let train_res = train_policy(
        &mut policy,
        &train_scenes,
        &theme_src,
        &rc,
        &ppo,
        Some(&root.join("curve.csv")),
    );
    let c6 = match &train_res {
        Err(e) => Err(format!("training failed: {e}")),
        Ok(report) => {
            // Held-out source episodes: a fresh fixed-seed suite.
            let mut specs = sample_suite(&train_scenes, TaskKind::PointGoal, 10, 777)
                .expect("sample held-out suite");
            for s in &mut specs {
                s.max_steps = EVAL_MAX_STEPS;
            }
            match evaluate_greedy(&policy, &train_scenes, &specs, &theme_src, &rc) {
                Err(e) => Err(format!("eval failed: {e}")),
                Ok(stats) => {
                    let gae = criterion_6_gae_exact();
                    let detail = format!(
                        "GAE exact; success {:.3} on {} held-out episodes after {} frames{}",
                        stats.success_rate,
                        specs.len(),
                        report.frames,
                        if report.early_stopped { " (early stop)" } else { "" }
                    );
                    match gae {
                        Err(e) => Err(e),
                        Ok(()) if report.frames <= 2_000_000 && stats.success_rate >= 0.80 => {
                            Ok(detail)
                        }
                        Ok(()) => Err(detail),
                    }
                }
            }
        }
    };
    let policy_ok = c6.is_ok();
    results.push((6, "PPO sanity and source-domain success", c6));
    policy.save(&root.join("policy.json")).expect("save policy");
    policy.freeze_feature_extractor();

    println!("[acceptance] criterion 3: lambda_pol rule");
    results.push((
        3,
        "lambda_pol rule",
        criterion_3_lambda_rule(&policy, &train_scenes, &rc),
    ));

    println!("[acceptance] criterion 5: metric oracles");
    results.push((
        5,
        "metric oracles",
        criterion_5_metric_oracles(&policy, &eval_scenes, &rc),
    ));

    // ---- adaptation fixtures: 3 seeds x {pbit, ablation} ----------------
    let src_pool = sample_image_pool(&train_scenes, Domain::Source, &rc, ADAPT_POOL, 9_001);
    let tgt_pool = sample_image_pool(&train_scenes, Domain::Target, &rc, ADAPT_POOL, 9_002);
    let mut pbit_translators = Vec::new();
    let mut ablation_translators = Vec::new();
    let mut c4 = Err("adaptation fixture missing".to_string());
    for &seed in &SEEDS {
        for ablation in [false, true] {
            let label = if ablation { "ablation" } else { "pbit" };
            println!("[acceptance] adaptation seed {seed} ({label})...");
            let cfg = adapt_config(seed, ablation);
            let mut t = Translator::new(translation_config(), seed.wrapping_add(100));
            let dir = root.join(format!("adapt_{label}_{seed}"));
            let fp_before = policy.fpi_fingerprint();
            let res = train_adaptation(&policy, &mut t, &src_pool, &tgt_pool, &cfg, &dir);
            match res {
                Ok(report) => {
                    if seed == SEEDS[0] && !ablation {
                        // Criterion 4 witness: a >= 1K-iteration run.
                        c4 = if policy.fpi_fingerprint() == fp_before
                            && report.iterations >= 1_000
                        {
                            Ok(format!(
                                "fingerprint {} unchanged over {} iterations",
                                &fp_before[..12],
                                report.iterations
                            ))
                        } else {
                            Err("fingerprint changed or run too short".into())
                        };
                    }
                    if ablation {
                        ablation_translators.push(t);
                    } else {
                        pbit_translators.push(t);
                    }
                }
                Err(e) => panic!("adaptation seed {seed} ({label}) failed: {e}"),
            }
        }
    }
    results.push((4, "freeze contract", c4));

    // ---- criterion 7: directional transfer ------------------------------
    println!("[acceptance] criterion 7: transfer evaluation...");
    let c7 = (|| -> Result<String, String> {
        if !policy_ok {
            return Err("skipped: policy did not reach the success bar".into());
        }
        let mut specs = sample_suite(
            &eval_scenes,
            TaskKind::PointGoal,
            EVAL_EPISODES_PER_SCENE,
            EVAL_SUITE_SEED,
        )
        .map_err(|e| e.to_string())?;
        for s in &mut specs {
            s.max_steps = EVAL_MAX_STEPS;
        }
        let source_ref = run_suite(
            &policy,
            &eval_scenes,
            &specs,
            Domain::Source,
            &rc,
            &[EvalArm::direct_transfer()],
        )
        .map_err(|e| e.to_string())?
        .remove(0);
        let mut arms = vec![EvalArm::direct_transfer()];
        for (i, t) in pbit_translators.iter().enumerate() {
            arms.push(EvalArm::translated(format!("pbit_{i}"), t));
        }
        for (i, t) in ablation_translators.iter().enumerate() {
            arms.push(EvalArm::translated(format!("ablation_{i}"), t));
        }
        let reports = run_suite(&policy, &eval_scenes, &specs, Domain::Target, &rc, &arms)
            .map_err(|e| e.to_string())?;
        let direct = &reports[0];
        let pbit: Vec<_> = reports[1..1 + SEEDS.len()].to_vec();
        let abl: Vec<_> = reports[1 + SEEDS.len()..].to_vec();

        let drop = source_ref.success - direct.success;
        let wins = pbit
            .iter()
            .filter(|r| r.success - direct.success >= 0.10)
            .count();
        let spl_gaps: Vec<f64> = pbit
            .iter()
            .zip(&abl)
            .map(|(p, a)| p.spl - a.spl)
            .collect();
        let gap_mean = mean(&spl_gaps);
        let gap_sd = stddev(&spl_gaps);
        let detail = format!(
            "source {:.3}, direct {:.3} (drop {:.3}); pbit {:?} (+10pt on {wins}/{} seeds); \
             SPL gap vs ablation {:+.4} +/- {:.4} per seed {:?}",
            source_ref.success,
            direct.success,
            drop,
            pbit.iter().map(|r| r.success).collect::<Vec<_>>(),
            SEEDS.len(),
            gap_mean,
            gap_sd,
            spl_gaps.iter().map(|g| format!("{g:+.4}")).collect::<Vec<_>>(),
        );
        if drop < 0.15 {
            return Err(format!("domain gap too small: {detail}"));
        }
        if wins < 2 {
            return Err(format!("pbit does not beat direct transfer: {detail}"));
        }
        if gap_mean < 0.0 {
            return Err(format!("pbit SPL below ablation: {detail}"));
        }
        Ok(detail)
    })();
    results.push((7, "directional transfer reproduction", c7));

    // ---- criteria 8 and 9: feature-space effects ------------------------
    println!("[acceptance] criteria 8 and 9: feature-space analyses...");
    let held_src = sample_image_pool(&eval_scenes, Domain::Source, &rc, 64, 5_150);
    let held_tgt = sample_image_pool(&eval_scenes, Domain::Target, &rc, 64, 5_151);
    let src_batch = pool_to_batch(&held_src);
    let tgt_batch = pool_to_batch(&held_tgt);

    let c8 = (|| -> Result<String, String> {
        let tgt32 = pool_to_batch(&held_tgt[..32]);
        let stat = |ts: &[Translator]| -> Vec<f64> {
            ts.iter()
                .map(|t| style_consistency(&policy, t, &tgt32, 8, 606))
                .collect()
        };
        let sp = stat(&pbit_translators);
        let sa = stat(&ablation_translators);
        let mp = mean(&sp);
        let ma = mean(&sa);
        let detail = format!(
            "mean pairwise L1 across 8 styles: pbit {mp:.4} {sp:?} vs ablation {ma:.4} {sa:?}"
        );
        if mp <= 0.5 * ma {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    results.push((8, "policy-feature consistency", c8));

    let c9 = (|| -> Result<String, String> {
        let mut dists = Vec::new();
        for (i, t) in pbit_translators.iter().enumerate() {
            let report = pca_feature_analysis(&policy, t, &src_batch, &tgt_batch, 2, None)
                .map_err(|e| e.to_string())?;
            if report.d_translated_source >= report.d_target_source {
                return Err(format!(
                    "seed {i}: d(translated, source) {:.4} >= d(target, source) {:.4}",
                    report.d_translated_source, report.d_target_source
                ));
            }
            dists.push(format!(
                "{:.3}<{:.3}",
                report.d_translated_source, report.d_target_source
            ));
        }
        Ok(format!("centroid distances per seed: {}", dists.join(", ")))
    })();
    results.push((9, "PCA bridging", c9));

    // ---- criterion 10: determinism --------------------------------------
    println!("[acceptance] criterion 10: determinism...");
    let c10 = (|| -> Result<String, String> {
        let cfg = AdaptConfig {
            total_iters: 100,
            checkpoint_every: 0,
            ..adapt_config(3, false)
        };
        let mut csvs = Vec::new();
        for run in 0..2 {
            let mut t = Translator::new(translation_config(), 300);
            let dir = root.join(format!("determinism_{run}"));
            train_adaptation(&policy, &mut t, &src_pool, &tgt_pool, &cfg, &dir)
                .map_err(|e| e.to_string())?;
            let csv = std::fs::read_to_string(dir.join("losses.csv"))
                .map_err(|e| e.to_string())?;
            csvs.push(csv);
        }
        let rows = |s: &str| -> Vec<String> {
            s.lines().take(101).map(|l| l.to_string()).collect()
        };
        let (a, b) = (rows(&csvs[0]), rows(&csvs[1]));
        if a.len() != 101 || a != b {
            return Err("loss CSVs differ between identical runs".into());
        }
        Ok("first 100 loss rows bit-identical across two runs".into())
    })();
    results.push((10, "determinism", c10));

    // ---- report ----------------------------------------------------------
    println!(
        "\n[acceptance] finished in {:.0} min; artifacts in {}\n",
        started.elapsed().as_secs_f64() / 60.0,
        root.display()
    );
    let mut failed = 0;
    results.sort_by_key(|(i, _, _)| *i);
    for (i, name, res) in &results {
        match res {
            Ok(detail) => println!("criterion {i:2} ({name}): PASS — {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {i:2} ({name}): FAIL — {detail}");
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
