//! Alternating min-max adaptation: the translator's generator descends the
//! full objective while per-domain discriminators ascend the adversarial
//! term. The policy's feature extractor stays frozen throughout.

use ndarray::{Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::losses::{
    adversarial_discriminator_loss, adversarial_generator_loss, compute_lambda_pol,
    full_generator_objective, image_reconstruction_loss, latent_reconstruction_loss,
    policy_consistency_loss, LossBreakdown, LossWeights,
};
use crate::navenv::episodes::sample_pose;
use crate::navenv::{render, Domain, DomainStyleTheme, ImageSample, RenderConfig, SceneMap};
use crate::nn::optim::Adam;
use crate::nn::{Graph, ParamId, ParamStore, Var};
use crate::policy::{FeatureExtractor, PolicyBundle, PolicyError};
use crate::translation::{TranslationConfig, Translator};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub lr: f64,
    /// Learning rate halves every this many iterations.
    pub lr_halve_every: usize,
    pub total_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Saturating generator loss instead of the non-saturating default.
    pub saturating_gen: bool,
    pub lambda_im_rec: f64,
    pub lambda_lat_rec: f64,
    pub lambda_adv: f64,
    /// Discriminator learning-rate multiplier (two-timescale updates; 1.0
    /// trains both sides at the same rate).
    #[serde(default = "default_dis_lr_mult")]
    pub dis_lr_mult: f64,
    /// Instance-noise amplitude: Gaussian noise of this sigma, annealed
    /// linearly to zero over training, is added to every discriminator
    /// input (real and fake, on both players' passes). Forces the real and
    /// fake image distributions to overlap early on, which keeps the
    /// adversarial gradients informative. 0 disables.
    #[serde(default)]
    pub dis_input_noise: f64,
    /// `None` computes lambda_pol from source features; `Some(0.0)` is the
    /// no-policy-loss ablation.
    pub lambda_pol_override: Option<f64>,
    pub checkpoint_every: usize,
}

fn default_dis_lr_mult() -> f64 {
    1.0
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            lr: 1e-4,
            lr_halve_every: 4_000,
            total_iters: 20_000,
            batch_size: 8,
            seed: 0,
            saturating_gen: false,
            lambda_im_rec: 10.0,
            lambda_lat_rec: 1.0,
            lambda_adv: 1.0,
            dis_lr_mult: 1.0,
            dis_input_noise: 0.0,
            lambda_pol_override: None,
            checkpoint_every: 1_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptReport {
    pub iterations: usize,
    pub lambda_pol: f64,
    pub last: LossBreakdown,
}

/// Uniformly sample poses on the scenes and render one image per pose.
pub fn sample_image_pool(
    scenes: &[SceneMap],
    domain: Domain,
    render_cfg: &RenderConfig,
    n: usize,
    seed: u64,
) -> Vec<ImageSample> {
    assert!(!scenes.is_empty());
    let theme = DomainStyleTheme::for_domain(domain);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let map = &scenes[i % scenes.len()];
        let pose = sample_pose(map, &mut rng);
        let (img, _) = render(map, &pose, &theme, render_cfg).expect("sampled pose renders");
        out.push(img);
    }
    out
}

fn stack(pool: &[ImageSample], idx: &[usize]) -> Array4<f64> {
    let (c, h, w) = pool[0].data.dim();
    let mut out = Array4::zeros((idx.len(), c, h, w));
    for (b, &i) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), b).assign(&pool[i].data);
    }
    out
}

fn randn2(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

fn randn_like(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize), sigma: f64) -> Array4<f64> {
    Array4::from_shape_simple_fn(shape, || sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Write an image pool as 8-bit PNGs plus a JSONL manifest.
pub fn save_pool_png(dir: &Path, pool: &[ImageSample], domain: Domain) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.jsonl"))?);
    for (i, img) in pool.iter().enumerate() {
        let name = format!("{domain}_{i:05}.png");
        image_to_png(&img.data, &dir.join(&name))?;
        writeln!(manifest, "{{\"file\":\"{name}\",\"domain\":\"{domain}\"}}")?;
    }
    Ok(())
}

pub fn image_to_png(data: &Array3<f64>, path: &Path) -> std::io::Result<()> {
    let (c, h, w) = data.dim();
    assert_eq!(c, 3);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                to_u8(data[[0, y, x]]),
                to_u8(data[[1, y, x]]),
                to_u8(data[[2, y, x]]),
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(std::io::Error::other)
}

fn to_u8(v: f64) -> u8 {
    (((v + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One tape holding the frozen feature extractor and the translator. The
/// policy's F_pi weights are copied in and marked non-trainable; the
/// returned translator owns the shared store.
fn build_session(
    policy: &PolicyBundle,
    cfg: &TranslationConfig,
    seed: u64,
) -> (FeatureExtractor, Translator) {
    let mut store = ParamStore::new();
    let fpi = FeatureExtractor::new(&mut store, &policy.config, 0);
    for (src, dst) in policy.fpi.params().iter().zip(fpi.params()) {
        *store.get_mut(dst) = policy.store.get(*src).clone();
        store.set_trainable(dst, false);
    }
    let translator = Translator::with_store(store, cfg.clone(), seed);
    (fpi, translator)
}

/// Copy trained translator parameters from the session into a clean
/// translator (whose checkpoint then contains no policy parameters).
fn copy_back(session: &Translator, clean: &mut Translator) {
    for id in clean.store.ids() {
        let name = clean.store.name(id).to_string();
        let sid = session
            .store
            .id_by_name(&name)
            .expect("session has every translator parameter");
        *clean.store.get_mut(id) = session.store.get(sid).clone();
    }
}

/// Alternating adaptation training. `translator` is updated in place;
/// checkpoints and the per-iteration loss CSV land in `out_dir`.
pub fn train_adaptation(
    policy: &PolicyBundle,
    translator: &mut Translator,
    source_pool: &[ImageSample],
    target_pool: &[ImageSample],
    cfg: &AdaptConfig,
    out_dir: &Path,
) -> Result<AdaptReport, PolicyError> {
    assert_eq!(
        policy.config.image_size, translator.cfg.image_size,
        "policy and translator must agree on the image size"
    );
    assert!(!source_pool.is_empty() && !target_pool.is_empty());
    assert!(source_pool.iter().all(|s| s.domain == Domain::Source));
    assert!(target_pool.iter().all(|s| s.domain == Domain::Target));
    std::fs::create_dir_all(out_dir)?;

    let fpi_before = policy.fpi_fingerprint();
    let tcfg = translator.cfg.clone();
    let (fpi, mut session) = build_session(policy, &tcfg, cfg.seed.wrapping_add(1));
    copy_from(translator, &mut session);

    // lambda_pol from source-domain features (or the explicit override).
    let lambda_pol = match cfg.lambda_pol_override {
        Some(v) => v,
        None => {
            let n = source_pool.len().min(128);
            let idx: Vec<usize> = (0..n).collect();
            let feats = fpi.extract(&session.store, &stack(source_pool, &idx));
            compute_lambda_pol(&feats).map_err(|e| PolicyError::Format(e.to_string()))?
        }
    };
    let weights = LossWeights {
        lambda_pol,
        lambda_im_rec: cfg.lambda_im_rec,
        lambda_lat_rec: cfg.lambda_lat_rec,
        lambda_adv: cfg.lambda_adv,
    };

    let gen_ids: HashSet<usize> = session.generator_params().iter().map(|p| p.0).collect();
    let mut adam_g = Adam::new(cfg.lr, 0.5, 0.999);
    let mut adam_d = Adam::new(cfg.lr, 0.5, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut csv = std::io::BufWriter::new(std::fs::File::create(out_dir.join("losses.csv"))?);
    writeln!(
        csv,
        "iteration,l_pol,l_im_rec,l_lat_rec,l_adv_gen,l_adv_dis,l_full,lr"
    )?;

    let mut last = LossBreakdown {
        l_pol: 0.0,
        l_im_rec: 0.0,
        l_lat_rec: 0.0,
        l_adv_gen: 0.0,
        l_adv_dis: 0.0,
        total: 0.0,
    };

    for iter in 0..cfg.total_iters {
        let lr = cfg.lr * 0.5f64.powi((iter / cfg.lr_halve_every) as i32);
        adam_g.set_lr(lr);
        adam_d.set_lr(lr * cfg.dis_lr_mult);

        let bi: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.gen_range(0..source_pool.len()))
            .collect();
        let bj: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.gen_range(0..target_pool.len()))
            .collect();
        let x_s = stack(source_pool, &bi);
        let x_t = stack(target_pool, &bj);
        let sty_s = randn2(&mut rng, cfg.batch_size, tcfg.style_dim);
        let sty_t = randn2(&mut rng, cfg.batch_size, tcfg.style_dim);

        // ---- discriminator step (fakes detached) ----------------------
        let (fake_s, fake_t) = {
            let mut g = Graph::new(&session.store);
            let xs = g.input(x_s.clone().into_dyn());
            let xt = g.input(x_t.clone().into_dyn());
            let (cs, _) = session.encode(&mut g, Domain::Source, xs);
            let (ct, _) = session.encode(&mut g, Domain::Target, xt);
            let ss = g.input(sty_s.clone().into_dyn());
            let st = g.input(sty_t.clone().into_dyn());
            let fs = session.decode(&mut g, Domain::Source, ct, ss);
            let ft = session.decode(&mut g, Domain::Target, cs, st);
            (arr4(&g, fs), arr4(&g, ft))
        };
        // Instance noise, annealed linearly over training.
        let sigma = cfg.dis_input_noise * (1.0 - iter as f64 / cfg.total_iters as f64);
        let dims = x_s.dim();
        let l_adv_dis = {
            let mut g = Graph::new(&session.store);
            let mut total: Option<Var> = None;
            for (real, fake, d) in [
                (&x_s, &fake_s, Domain::Source),
                (&x_t, &fake_t, Domain::Target),
            ] {
                let rv = g.input((real.clone() + randn_like(&mut rng, dims, sigma)).into_dyn());
                let fv = g.input((fake.clone() + randn_like(&mut rng, dims, sigma)).into_dyn());
                let rl = session.discriminate(&mut g, d, rv);
                let fl = session.discriminate(&mut g, d, fv);
                let l = adversarial_discriminator_loss(&mut g, &rl, &fl);
                total = Some(match total {
                    None => l,
                    Some(t) => g.add(t, l),
                });
            }
            let loss = total.unwrap();
            let v = g.scalar(loss);
            if v.is_finite() {
                let grads = g.backward(loss);
                let pg = g.param_grads(&grads);
                adam_d.step(&mut session.store, &pg, 1.0);
            }
            v
        };

        // ---- generator step -------------------------------------------
        let (l_full, l_pol, l_im, l_lat, l_adv_gen) = {
            let mut g = Graph::new(&session.store);
            let xs = g.input(x_s.clone().into_dyn());
            let xt = g.input(x_t.clone().into_dyn());
            let (cs, es) = session.encode(&mut g, Domain::Source, xs);
            let (ct, et) = session.encode(&mut g, Domain::Target, xt);
            let ss = g.input(sty_s.clone().into_dyn());
            let st = g.input(sty_t.clone().into_dyn());

            // Within-domain reconstruction.
            let rs = session.decode(&mut g, Domain::Source, cs, es);
            let rt = session.decode(&mut g, Domain::Target, ct, et);
            let l_im = image_reconstruction_loss(&mut g, rs, xs, rt, xt);

            // Cross-domain translations with sampled styles.
            let fs = session.decode(&mut g, Domain::Source, ct, ss); // target -> source
            let ft = session.decode(&mut g, Domain::Target, cs, st); // source -> target

            // Latent cycle: re-encode the fakes.
            let (ct_rec, ss_rec) = session.encode(&mut g, Domain::Source, fs);
            let (cs_rec, st_rec) = session.encode(&mut g, Domain::Target, ft);
            let l_lat = latent_reconstruction_loss(
                &mut g,
                &[(ct, ct_rec, ss, ss_rec), (cs, cs_rec, st, st_rec)],
            );

            // Policy consistency on the adaptation direction (target->source).
            let f_t = fpi.forward(&mut g, xt);
            let f_fs = fpi.forward(&mut g, fs);
            let l_pol = policy_consistency_loss(&mut g, f_t, f_fs);

            // Fool both discriminators.
            let dl_s = session.discriminate(&mut g, Domain::Source, fs);
            let dl_t = session.discriminate(&mut g, Domain::Target, ft);
            let gs = adversarial_generator_loss(&mut g, &dl_s, cfg.saturating_gen);
            let gt = adversarial_generator_loss(&mut g, &dl_t, cfg.saturating_gen);
            let l_adv_gen = g.add(gs, gt);

            let full = full_generator_objective(&mut g, &weights, l_pol, l_im, l_lat, l_adv_gen);
            let v = g.scalar(full);
            let parts = (
                v,
                g.scalar(l_pol),
                g.scalar(l_im),
                g.scalar(l_lat),
                g.scalar(l_adv_gen),
            );
            if v.is_finite() {
                let grads = g.backward(full);
                let pg: Vec<(ParamId, &ndarray::ArrayD<f64>)> = g
                    .param_grads(&grads)
                    .into_iter()
                    .filter(|(id, _)| gen_ids.contains(&id.0))
                    .collect();
                adam_g.step(&mut session.store, &pg, 1.0);
            }
            parts
        };

        last = LossBreakdown {
            l_pol,
            l_im_rec: l_im,
            l_lat_rec: l_lat,
            l_adv_gen,
            l_adv_dis,
            total: l_full,
        };
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            iter, l_pol, l_im, l_lat, l_adv_gen, l_adv_dis, l_full, lr
        )?;
        csv.flush()?;

        if !l_full.is_finite() || !l_adv_dis.is_finite() {
            // Leave the last good parameters on disk and bail out.
            copy_back(&session, translator);
            translator.save(&out_dir.join("translator.json"))?;
            return Err(PolicyError::Diverged(iter));
        }

        if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
            copy_back(&session, translator);
            translator.save(&out_dir.join("translator.json"))?;
        }
    }

    copy_back(&session, translator);
    translator.save(&out_dir.join("translator.json"))?;
    assert_eq!(
        policy.fpi_fingerprint(),
        fpi_before,
        "feature extractor changed during adaptation"
    );

    Ok(AdaptReport {
        iterations: cfg.total_iters,
        lambda_pol,
        last,
    })
}

/// Copy parameters from a clean translator into the session translator.
fn copy_from(clean: &Translator, session: &mut Translator) {
    for id in clean.store.ids() {
        let name = clean.store.name(id).to_string();
        let sid = session
            .store
            .id_by_name(&name)
            .expect("session has every translator parameter");
        *session.store.get_mut(sid) = clean.store.get(id).clone();
    }
}

fn arr4(g: &Graph, v: Var) -> Array4<f64> {
    g.value(v)
        .view()
        .into_dimensionality::<ndarray::Ix4>()
        .unwrap()
        .to_owned()
}
