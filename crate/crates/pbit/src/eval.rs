//! Evaluation harness: method arms (direct transfer vs. translate-then-act),
//! paired episode suites, PCA feature-space analysis, style-consistency
//! measurement, and trajectory dumps.

use ndarray::{Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::adapt::image_to_png;
use crate::navenv::{
    compute_metrics, Domain, DomainStyleTheme, EpisodeRecord, EpisodeSpec, ImageSample,
    Metrics, NavAction, NavEnv, RenderConfig, SceneMap,
};
use crate::policy::{task_input_of, PolicyBundle, PolicyError};
use crate::translation::Translator;

/// One evaluated method: the policy applied to raw observations, or to
/// observations passed through a translator first.
pub struct EvalArm<'a> {
    pub name: String,
    pub translator: Option<&'a Translator>,
}

impl<'a> EvalArm<'a> {
    pub fn direct_transfer() -> Self {
        EvalArm {
            name: "direct_transfer".into(),
            translator: None,
        }
    }

    pub fn translated(name: impl Into<String>, t: &'a Translator) -> Self {
        EvalArm {
            name: name.into(),
            translator: Some(t),
        }
    }
}

fn batch_of(img: &ImageSample) -> Array4<f64> {
    let (c, h, w) = img.data.dim();
    let mut b = Array4::zeros((1, c, h, w));
    b.index_axis_mut(Axis(0), 0).assign(&img.data);
    b
}

/// Run one greedy episode of the arm on the given domain.
pub fn run_episode(
    policy: &PolicyBundle,
    scenes: &[SceneMap],
    spec: &EpisodeSpec,
    domain: Domain,
    render_cfg: &RenderConfig,
    arm: &EvalArm,
    record_images: bool,
) -> Result<EpisodeRecord, PolicyError> {
    assert_eq!(
        render_cfg.resolution, policy.config.image_size,
        "render resolution must match the policy input size"
    );
    if let Some(t) = arm.translator {
        assert_eq!(t.cfg.image_size, policy.config.image_size);
    }
    let map = scenes
        .iter()
        .find(|m| m.id == spec.scene_id)
        .ok_or_else(|| crate::navenv::NavError::UnknownScene(spec.scene_id.clone()))?;
    let theme = DomainStyleTheme::for_domain(domain);
    let mut env = NavEnv::new(Arc::new(map.clone()), theme.clone(), render_cfg.clone());
    let mut r = env.reset(spec, theme)?;

    let mut poses = vec![env.current_pose().expect("episode active")];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut observations = record_images.then(Vec::new);
    let mut translations = record_images.then(Vec::new);
    let mut hidden = policy.api.zero_state(1);

    loop {
        let raw = batch_of(&r.observation);
        let seen = match arm.translator {
            Some(t) => t.translate_target_to_source(&raw, None),
            None => raw,
        };
        if let Some(obs) = observations.as_mut() {
            obs.push(r.observation.clone());
        }
        if let Some(tr) = translations.as_mut() {
            if arm.translator.is_some() {
                tr.push(ImageSample {
                    data: seen.index_axis(Axis(0), 0).to_owned(),
                    domain: Domain::Source,
                });
            }
        }
        if r.done {
            break;
        }
        let feats = policy.extract_features(&seen);
        let tin = Array2::from_shape_vec((1, 3), task_input_of(policy.task, &r).to_vec()).unwrap();
        let (probs, new_h) = policy.act(&feats, &tin, &hidden);
        hidden = new_h;
        let a = probs
            .row(0)
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .unwrap()
            .0;
        r = env.step(NavAction::from_index(a))?;
        actions.push(NavAction::from_index(a));
        rewards.push(r.reward);
        poses.push(env.current_pose().expect("pose tracked"));
    }

    Ok(EpisodeRecord {
        spec: spec.clone(),
        poses,
        actions,
        rewards,
        collisions: env.collisions(),
        success: r.success,
        final_goal_distance: env.final_goal_distance().unwrap_or(f64::INFINITY),
        path_len: env.path_len(),
        shortest_path: env.shortest_path(),
        explored_area: env.explored_area(),
        explored_ratio: env.explored_ratio(),
        observations,
        translations: translations.filter(|t| !t.is_empty()),
    })
}

/// Aggregate metrics of one arm over a suite.
#[derive(Debug, Clone, Serialize)]
pub struct ArmReport {
    pub arm: String,
    pub episodes: usize,
    pub success: f64,
    pub spl: f64,
    pub collision_rate: f64,
    pub mean_path_len: f64,
    #[serde(skip)]
    pub per_episode: Vec<Metrics>,
}

/// Run every arm over the same episode suite on the given domain.
pub fn run_suite(
    policy: &PolicyBundle,
    scenes: &[SceneMap],
    specs: &[EpisodeSpec],
    domain: Domain,
    render_cfg: &RenderConfig,
    arms: &[EvalArm],
) -> Result<Vec<ArmReport>, PolicyError> {
    let mut out = Vec::new();
    for arm in arms {
        let mut per = Vec::with_capacity(specs.len());
        for spec in specs {
            let rec = run_episode(policy, scenes, spec, domain, render_cfg, arm, false)?;
            per.push(compute_metrics(&rec));
        }
        let n = per.len().max(1) as f64;
        out.push(ArmReport {
            arm: arm.name.clone(),
            episodes: per.len(),
            success: per.iter().map(|m| m.success).sum::<f64>() / n,
            spl: per.iter().map(|m| m.spl).sum::<f64>() / n,
            collision_rate: per.iter().map(|m| m.collision_rate).sum::<f64>() / n,
            mean_path_len: per.iter().map(|m| m.path_len).sum::<f64>() / n,
            per_episode: per,
        });
    }
    Ok(out)
}

/// Per-episode CSV plus a human-readable summary table.
pub fn write_suite_results(dir: &Path, reports: &[ArmReport]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("episodes.csv"))?);
    writeln!(csv, "arm,episode,success,spl,collision_rate,path_len,shortest_path,steps")?;
    for r in reports {
        for (i, m) in r.per_episode.iter().enumerate() {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                r.arm, i, m.success, m.spl, m.collision_rate, m.path_len, m.shortest_path, m.steps
            )?;
        }
    }
    let mut table = String::from(&format!(
        "{:<24} {:>8} {:>8} {:>8} {:>10}\n",
        "arm", "success", "spl", "coll", "path_len"
    ));
    for r in reports {
        table.push_str(&format!(
            "{:<24} {:>8.3} {:>8.3} {:>8.3} {:>10.2}\n",
            r.arm, r.success, r.spl, r.collision_rate, r.mean_path_len
        ));
    }
    std::fs::write(dir.join("summary.txt"), table)
}

/// PCA of the source-domain feature distribution with target and translated
/// features projected into it.
#[derive(Debug, Clone, Serialize)]
pub struct PcaReport {
    /// Fraction of source-feature variance captured by the kept components.
    pub explained_variance: f64,
    /// Distance between projected centroids: translated-target vs. source.
    pub d_translated_source: f64,
    /// Distance between projected centroids: raw target vs. source.
    pub d_target_source: f64,
    /// max |V^T V - I| over the kept components (sanity witness).
    pub orthonormality_err: f64,
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns (eigenvalues, column eigenvectors), descending.
fn symmetric_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut v = Array2::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vecs = Array2::zeros((n, n));
    for (col, &i) in order.iter().enumerate() {
        vecs.column_mut(col).assign(&v.column(i));
    }
    (vals, vecs)
}

fn centroid(rows: &Array2<f64>) -> Vec<f64> {
    let n = rows.nrows() as f64;
    rows.sum_axis(Axis(0)).iter().map(|v| v / n).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Fit a `k`-component PCA on source features, project all three feature
/// sets, and compare projected centroids. Optionally writes a scatter CSV
/// (`set,pc1,pc2,...`) for plotting.
pub fn pca_feature_analysis(
    policy: &PolicyBundle,
    translator: &Translator,
    source_images: &Array4<f64>,
    target_images: &Array4<f64>,
    k: usize,
    scatter_path: Option<&Path>,
) -> std::io::Result<PcaReport> {
    let f_src = policy.extract_features(source_images);
    let f_tgt = policy.extract_features(target_images);
    let translated = translator.translate_target_to_source(target_images, None);
    let f_tr = policy.extract_features(&translated);

    let d = f_src.ncols();
    let k = k.min(d);
    let mean = centroid(&f_src);
    let centered = {
        let mut c = f_src.clone();
        for mut row in c.rows_mut() {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        c
    };
    let n = centered.nrows().max(2) as f64;
    let cov = centered.t().dot(&centered) / (n - 1.0);
    let (vals, vecs) = symmetric_eigen(cov);
    let basis = vecs.slice(ndarray::s![.., ..k]).to_owned(); // (d, k)

    let total_var: f64 = vals.iter().sum();
    let explained = if total_var > 0.0 {
        vals[..k].iter().sum::<f64>() / total_var
    } else {
        0.0
    };
    let gram = basis.t().dot(&basis);
    let mut ortho_err: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            ortho_err = ortho_err.max((gram[[i, j]] - target).abs());
        }
    }

    let project = |f: &Array2<f64>| -> Array2<f64> {
        let mut c = f.clone();
        for mut row in c.rows_mut() {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        c.dot(&basis)
    };
    let p_src = project(&f_src);
    let p_tgt = project(&f_tgt);
    let p_tr = project(&f_tr);

    if let Some(path) = scatter_path {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (1..=k).map(|i| format!("pc{i}")).collect();
        writeln!(f, "set,{}", header.join(","))?;
        for (label, pts) in [("source", &p_src), ("target", &p_tgt), ("translated", &p_tr)] {
            for row in pts.rows() {
                let cols: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(f, "{label},{}", cols.join(","))?;
            }
        }
    }

    let c_src = centroid(&p_src);
    Ok(PcaReport {
        explained_variance: explained,
        d_translated_source: dist(&centroid(&p_tr), &c_src),
        d_target_source: dist(&centroid(&p_tgt), &c_src),
        orthonormality_err: ortho_err,
    })
}

/// Style sensitivity of the policy features: mean pairwise L1 distance of
/// each image's features across `n_styles` style resamplings, averaged
/// over images. Lower means style changes matter less to the policy.
pub fn style_consistency(
    policy: &PolicyBundle,
    translator: &Translator,
    target_images: &Array4<f64>,
    n_styles: usize,
    seed: u64,
) -> f64 {
    assert!(n_styles >= 2);
    let b = target_images.dim().0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feats: Vec<Array2<f64>> = Vec::with_capacity(n_styles);
    for _ in 0..n_styles {
        let style = Array2::from_shape_simple_fn((b, translator.cfg.style_dim), || {
            rng.sample::<f64, _>(StandardNormal)
        });
        let tr = translator.translate_target_to_source(target_images, Some(&style));
        feats.push(policy.extract_features(&tr));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n_styles {
        for j in (i + 1)..n_styles {
            total += (&feats[i] - &feats[j]).mapv(f64::abs).sum();
            pairs += 1;
        }
    }
    total / (pairs * b) as f64
}

/// Maximum number of panels in a dumped observation strip.
pub const STRIP_MAX_PANELS: usize = 12;

#[derive(Serialize)]
struct TrajectoryMeta {
    scene_id: String,
    success: bool,
    steps: usize,
    path_len: f64,
    shortest_path: f64,
    final_goal_distance: f64,
    collisions: usize,
}

/// Write an episode's observation strip, translation strip (if present), a
/// top-down path map, and a metadata JSON into `dir`.
pub fn dump_trajectory(record: &EpisodeRecord, map: &SceneMap, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    if let Some(obs) = &record.observations {
        write_strip(&dir.join("observations.png"), obs)?;
    }
    if let Some(tr) = &record.translations {
        write_strip(&dir.join("translations.png"), tr)?;
    }
    write_topdown(&dir.join("topdown.png"), map, record)?;
    let meta = TrajectoryMeta {
        scene_id: record.spec.scene_id.clone(),
        success: record.success,
        steps: record.actions.len(),
        path_len: record.path_len,
        shortest_path: record.shortest_path,
        final_goal_distance: record.final_goal_distance,
        collisions: record.collisions,
    };
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)?,
    )
}

/// Horizontally concatenate up to [`STRIP_MAX_PANELS`] evenly spaced frames,
/// always keeping the first and last.
fn write_strip(path: &Path, frames: &[ImageSample]) -> std::io::Result<()> {
    assert!(!frames.is_empty());
    let picked: Vec<&ImageSample> = if frames.len() <= STRIP_MAX_PANELS {
        frames.iter().collect()
    } else {
        (0..STRIP_MAX_PANELS)
            .map(|i| &frames[i * (frames.len() - 1) / (STRIP_MAX_PANELS - 1)])
            .collect()
    };
    let (_, h, w) = picked[0].data.dim();
    let mut strip = ndarray::Array3::<f64>::zeros((3, h, w * picked.len()));
    for (i, img) in picked.iter().enumerate() {
        strip
            .slice_mut(ndarray::s![.., .., i * w..(i + 1) * w])
            .assign(&img.data);
    }
    image_to_png(&strip, path)
}

fn write_topdown(path: &Path, map: &SceneMap, record: &EpisodeRecord) -> std::io::Result<()> {
    const SCALE: usize = 6;
    let (rows, cols) = (map.rows(), map.cols());
    let mut img = image::RgbImage::new((cols * SCALE) as u32, (rows * SCALE) as u32);
    for r in 0..rows {
        for c in 0..cols {
            let color = if map.is_occupied_cell(r, c) {
                image::Rgb([40, 40, 40])
            } else {
                image::Rgb([230, 230, 230])
            };
            for dy in 0..SCALE {
                for dx in 0..SCALE {
                    img.put_pixel((c * SCALE + dx) as u32, (r * SCALE + dy) as u32, color);
                }
            }
        }
    }
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        (
            (x / map.cell_size * SCALE as f64) as i64,
            (y / map.cell_size * SCALE as f64) as i64,
        )
    };
    let mut dot = |x: f64, y: f64, color: image::Rgb<u8>, radius: i64| {
        let (px, py) = to_px(x, y);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (qx, qy) = (px + dx, py + dy);
                if qx >= 0 && qy >= 0 && (qx as u32) < img.width() && (qy as u32) < img.height() {
                    img.put_pixel(qx as u32, qy as u32, color);
                }
            }
        }
    };
    for p in &record.poses {
        dot(p.x, p.y, image::Rgb([60, 90, 220]), 1);
    }
    let start = record.poses[0];
    dot(start.x, start.y, image::Rgb([30, 170, 60]), 2);
    if let Some((gx, gy)) = record.spec.goal {
        dot(gx, gy, image::Rgb([220, 40, 40]), 2);
    }
    img.save(path).map_err(std::io::Error::other)
}

/// Render a batch of pooled images for feature analyses.
pub fn pool_to_batch(pool: &[ImageSample]) -> Array4<f64> {
    assert!(!pool.is_empty());
    let (c, h, w) = pool[0].data.dim();
    let mut out = Array4::zeros((pool.len(), c, h, w));
    for (i, s) in pool.iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&s.data);
    }
    out
}

/// Pool sampling convenience shared with the CLI: render `n` poses per
/// domain on the scenes.
pub fn render_pools(
    scenes: &[SceneMap],
    render_cfg: &RenderConfig,
    n: usize,
    seed: u64,
) -> (Vec<ImageSample>, Vec<ImageSample>) {
    let src = crate::adapt::sample_image_pool(scenes, Domain::Source, render_cfg, n, seed);
    let tgt = crate::adapt::sample_image_pool(scenes, Domain::Target, render_cfg, n, seed + 1);
    (src, tgt)
}
