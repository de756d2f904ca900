//! Command-line entry points: data collection, policy training, adaptation
//! training, evaluation, translation previews, trajectory dumps, and PCA
//! feature analysis.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use pbit::adapt::{sample_image_pool, save_pool_png, train_adaptation, AdaptConfig};
use pbit::eval::{
    dump_trajectory, pca_feature_analysis, pool_to_batch, run_episode, run_suite,
    write_suite_results, EvalArm,
};
use pbit::navenv::episodes::{sample_suite, save_dataset};
use pbit::navenv::map::{builtin_eval_scenes, builtin_train_scenes};
use pbit::navenv::{Domain, DomainStyleTheme, RenderConfig, SceneMap, TaskKind};
use pbit::policy::{train_policy, PolicyBundle, PolicyConfig, PpoConfig};
use pbit::translation::{TranslationConfig, Translator};

#[derive(Parser)]
#[command(name = "pbit", about = "Policy-based image translation for navigation transfer")]
struct Cli {
    /// TOML config file; omitted sections fall back to defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample an episode dataset and rendered image pools.
    Collect {
        #[arg(long, default_value = "builtin-train")]
        scenes: String,
        #[arg(long, value_enum, default_value = "pointgoal")]
        task: TaskArg,
        #[arg(long, default_value_t = 10)]
        episodes_per_scene: usize,
        #[arg(long, default_value_t = 64)]
        pool_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the navigation policy with PPO on the source domain.
    TrainPolicy {
        #[arg(long, default_value = "builtin-train")]
        scenes: String,
        #[arg(long, value_enum, default_value = "pointgoal")]
        task: TaskArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the target->source translator against a frozen policy.
    TrainAdapt {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value = "builtin-train")]
        scenes: String,
        #[arg(long, default_value_t = 256)]
        pool_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ablation: drop the policy-consistency term (lambda_pol = 0).
        #[arg(long)]
        no_policy_loss: bool,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate method arms on held-out episodes in the target domain.
    Evaluate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        translator: Option<PathBuf>,
        /// A second translator evaluated as the "no_policy_loss" arm.
        #[arg(long)]
        ablation: Option<PathBuf>,
        #[arg(long, default_value = "builtin-eval")]
        scenes: String,
        #[arg(long, default_value_t = 10)]
        episodes_per_scene: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also run the PCA feature analysis (requires --translator).
        #[arg(long)]
        pca: bool,
        #[arg(long, default_value_t = 64)]
        pool_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate rendered target images and write before/after pairs.
    Translate {
        #[arg(long)]
        translator: PathBuf,
        #[arg(long, default_value = "builtin-eval")]
        scenes: String,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one episode and dump observation strips plus a top-down map.
    DumpTraj {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        translator: Option<PathBuf>,
        #[arg(long, default_value = "builtin-eval")]
        scenes: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        max_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// PCA of policy features: source vs. target vs. translated target.
    Pca {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        translator: PathBuf,
        #[arg(long, default_value = "builtin-eval")]
        scenes: String,
        #[arg(long, default_value_t = 64)]
        pool_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TaskArg {
    Pointgoal,
    Exploration,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> TaskKind {
        match t {
            TaskArg::Pointgoal => TaskKind::PointGoal,
            TaskArg::Exploration => TaskKind::Exploration,
        }
    }
}

/// Optional sections; a present section must be complete.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct AppConfig {
    policy: Option<PolicyConfig>,
    ppo: Option<PpoConfig>,
    translation: Option<TranslationConfig>,
    adapt: Option<AdaptConfig>,
    render: Option<RenderConfig>,
}

impl AppConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(AppConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    fn policy(&self) -> PolicyConfig {
        self.policy.clone().unwrap_or_default()
    }
    fn ppo(&self) -> PpoConfig {
        self.ppo.clone().unwrap_or_default()
    }
    fn translation(&self) -> TranslationConfig {
        self.translation.clone().unwrap_or_default()
    }
    fn adapt(&self) -> AdaptConfig {
        self.adapt.clone().unwrap_or_default()
    }
    fn render_for(&self, image_size: usize) -> RenderConfig {
        let mut rc = self.render.clone().unwrap_or_default();
        rc.resolution = image_size;
        rc
    }

    /// Echo the effective configuration next to the outputs.
    fn echo(&self, out: &Path) -> Result<()> {
        let effective = AppConfig {
            policy: Some(self.policy()),
            ppo: Some(self.ppo()),
            translation: Some(self.translation()),
            adapt: Some(self.adapt()),
            render: Some(self.render.clone().unwrap_or_default()),
        };
        std::fs::write(out.join("config.toml"), toml::to_string_pretty(&effective)?)?;
        Ok(())
    }
}

fn load_scenes(spec: &str) -> Result<Vec<SceneMap>> {
    match spec {
        "builtin-train" => Ok(builtin_train_scenes()),
        "builtin-eval" => Ok(builtin_eval_scenes()),
        path => {
            let dir = Path::new(path);
            if !dir.is_dir() {
                bail!("scene spec {spec:?} is neither builtin-train, builtin-eval, nor a directory");
            }
            let mut scenes = Vec::new();
            let mut entries: Vec<_> = std::fs::read_dir(dir)?
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "map" || e == "txt"))
                .collect();
            entries.sort();
            for p in entries {
                let text = std::fs::read_to_string(&p)?;
                scenes.push(
                    SceneMap::from_text(&text)
                        .map_err(|e| anyhow::anyhow!("scene {}: {e}", p.display()))?,
                );
            }
            if scenes.is_empty() {
                bail!("no .map/.txt scenes in {}", dir.display());
            }
            Ok(scenes)
        }
    }
}

/// `PBIT_OUT_DIR`, when set, overrides every --out argument.
fn out_dir(cli_out: PathBuf) -> Result<PathBuf> {
    let out = match std::env::var_os("PBIT_OUT_DIR") {
        Some(v) => PathBuf::from(v),
        None => cli_out,
    };
    std::fs::create_dir_all(&out)?;
    Ok(out)
}

fn main() -> Result<()> {
    if let Ok(dev) = std::env::var("PBIT_DEVICE") {
        if dev != "cpu" {
            eprintln!("note: PBIT_DEVICE={dev} requested, but only cpu is available");
        }
    }
    let cli = Cli::parse();
    let cfg = AppConfig::load(cli.config.as_deref())?;

    match cli.cmd {
        Cmd::Collect {
            scenes,
            task,
            episodes_per_scene,
            pool_size,
            seed,
            out,
        } => {
            let out = out_dir(out)?;
            let scenes = load_scenes(&scenes)?;
            let specs = sample_suite(&scenes, task.into(), episodes_per_scene, seed)?;
            save_dataset(&out.join("episodes.jsonl"), &specs)?;
            let rc = cfg.render_for(cfg.policy().image_size);
            for (domain, sub, s) in [
                (Domain::Source, "pools/source", seed + 1),
                (Domain::Target, "pools/target", seed + 2),
            ] {
                let pool = sample_image_pool(&scenes, domain, &rc, pool_size, s);
                save_pool_png(&out.join(sub), &pool, domain)?;
            }
            cfg.echo(&out)?;
            println!(
                "collected {} episodes and 2 x {} images into {}",
                specs.len(),
                pool_size,
                out.display()
            );
        }

        Cmd::TrainPolicy {
            scenes,
            task,
            seed,
            out,
        } => {
            let out = out_dir(out)?;
            let scenes = load_scenes(&scenes)?;
            let pcfg = cfg.policy();
            let mut ppo = cfg.ppo();
            ppo.seed = seed;
            let rc = cfg.render_for(pcfg.image_size);
            let mut bundle = PolicyBundle::new(pcfg, task.into(), seed);
            let theme = DomainStyleTheme::source_default();
            let report = train_policy(
                &mut bundle,
                &scenes,
                &theme,
                &rc,
                &ppo,
                Some(&out.join("curve.csv")),
            )?;
            bundle.save(&out.join("policy.json"))?;
            cfg.echo(&out)?;
            println!(
                "trained {} frames over {} updates (early stop: {}), eval success {:?}",
                report.frames, report.updates, report.early_stopped, report.final_eval_success
            );
        }

        Cmd::TrainAdapt {
            policy,
            scenes,
            pool_size,
            seed,
            no_policy_loss,
            iters,
            out,
        } => {
            let out = out_dir(out)?;
            let scenes = load_scenes(&scenes)?;
            let mut bundle = PolicyBundle::load(&policy)?;
            bundle.freeze_feature_extractor();
            let mut tcfg = cfg.translation();
            tcfg.image_size = bundle.config.image_size;
            let mut acfg = cfg.adapt();
            acfg.seed = seed;
            if no_policy_loss {
                acfg.lambda_pol_override = Some(0.0);
            }
            if let Some(n) = iters {
                acfg.total_iters = n;
            }
            let rc = cfg.render_for(bundle.config.image_size);
            let src = sample_image_pool(&scenes, Domain::Source, &rc, pool_size, seed + 1);
            let tgt = sample_image_pool(&scenes, Domain::Target, &rc, pool_size, seed + 2);
            let mut translator = Translator::new(tcfg, seed);
            let report = train_adaptation(&bundle, &mut translator, &src, &tgt, &acfg, &out)?;
            cfg.echo(&out)?;
            println!(
                "adapted for {} iters (lambda_pol = {}), final objective {}",
                report.iterations, report.lambda_pol, report.last.total
            );
        }

        Cmd::Evaluate {
            policy,
            translator,
            ablation,
            scenes,
            episodes_per_scene,
            seed,
            pca,
            pool_size,
            out,
        } => {
            let out = out_dir(out)?;
            let scenes = load_scenes(&scenes)?;
            let bundle = PolicyBundle::load(&policy)?;
            let rc = cfg.render_for(bundle.config.image_size);
            let specs = sample_suite(&scenes, bundle.task, episodes_per_scene, seed)?;

            let t_main = translator.as_deref().map(Translator::load).transpose()?;
            let t_abl = ablation.as_deref().map(Translator::load).transpose()?;
            let mut arms = vec![EvalArm::direct_transfer()];
            if let Some(t) = &t_main {
                arms.push(EvalArm::translated("pbit", t));
            }
            if let Some(t) = &t_abl {
                arms.push(EvalArm::translated("no_policy_loss", t));
            }
            let mut reports =
                run_suite(&bundle, &scenes, &specs, Domain::Target, &rc, &arms)?;
            // Source-domain reference with raw observations.
            let src_arm = [EvalArm::direct_transfer()];
            let mut src_rep =
                run_suite(&bundle, &scenes, &specs, Domain::Source, &rc, &src_arm)?;
            src_rep[0].arm = "source_reference".into();
            reports.extend(src_rep);
            write_suite_results(&out, &reports)?;
            for r in &reports {
                println!(
                    "{:<20} success {:.3}  spl {:.3}  ({} episodes)",
                    r.arm, r.success, r.spl, r.episodes
                );
            }

            if pca {
                let t = t_main
                    .as_ref()
                    .context("--pca requires --translator")?;
                let src = sample_image_pool(&scenes, Domain::Source, &rc, pool_size, seed + 3);
                let tgt = sample_image_pool(&scenes, Domain::Target, &rc, pool_size, seed + 4);
                let report = pca_feature_analysis(
                    &bundle,
                    t,
                    &pool_to_batch(&src),
                    &pool_to_batch(&tgt),
                    2,
                    Some(&out.join("pca_scatter.csv")),
                )?;
                std::fs::write(out.join("pca.json"), serde_json::to_string_pretty(&report)?)?;
                println!(
                    "pca: d(translated, source) = {:.4}, d(target, source) = {:.4}",
                    report.d_translated_source, report.d_target_source
                );
            }
            cfg.echo(&out)?;
        }

        Cmd::Translate {
            translator,
            scenes,
            count,
            seed,
            out,
        } => {
            let out = out_dir(out)?;
            let scenes = load_scenes(&scenes)?;
            let t = Translator::load(&translator)?;
            let rc = cfg.render_for(t.cfg.image_size);
            let pool = sample_image_pool(&scenes, Domain::Target, &rc, count, seed);
            let batch = pool_to_batch(&pool);
            let translated = t.translate_target_to_source(&batch, None);
            for (i, img) in pool.iter().enumerate() {
                let (c, h, w) = img.data.dim();
                let mut pair = ndarray::Array3::<f64>::zeros((c, h, 2 * w));
                pair.slice_mut(ndarray::s![.., .., ..w]).assign(&img.data);
                pair.slice_mut(ndarray::s![.., .., w..])
                    .assign(&translated.index_axis(ndarray::Axis(0), i));
                pbit::adapt::image_to_png(&pair, &out.join(format!("pair_{i:03}.png")))?;
            }
            println!("wrote {} before/after pairs to {}", count, out.display());
        }

        Cmd::DumpTraj {
            policy,
            translator,
            scenes,
            seed,
            max_steps,
            out,
        } => {
            let out = out_dir(out)?;
            let scenes = load_scenes(&scenes)?;
            let bundle = PolicyBundle::load(&policy)?;
            let rc = cfg.render_for(bundle.config.image_size);
            let t = translator.as_deref().map(Translator::load).transpose()?;
            let arm = match &t {
                Some(t) => EvalArm::translated("pbit", t),
                None => EvalArm::direct_transfer(),
            };
            let mut specs = sample_suite(&scenes, bundle.task, 1, seed)?;
            specs[0].max_steps = max_steps;
            let map = scenes
                .iter()
                .find(|m| m.id == specs[0].scene_id)
                .expect("sampled on these scenes");
            let rec =
                run_episode(&bundle, &scenes, &specs[0], Domain::Target, &rc, &arm, true)?;
            dump_trajectory(&rec, map, &out)?;
            println!(
                "episode on {}: success {} in {} steps -> {}",
                rec.spec.scene_id,
                rec.success,
                rec.actions.len(),
                out.display()
            );
        }

        Cmd::Pca {
            policy,
            translator,
            scenes,
            pool_size,
            seed,
            out,
        } => {
            let out = out_dir(out)?;
            let scenes = load_scenes(&scenes)?;
            let bundle = PolicyBundle::load(&policy)?;
            let t = Translator::load(&translator)?;
            let rc = cfg.render_for(bundle.config.image_size);
            let src = sample_image_pool(&scenes, Domain::Source, &rc, pool_size, seed + 1);
            let tgt = sample_image_pool(&scenes, Domain::Target, &rc, pool_size, seed + 2);
            let report = pca_feature_analysis(
                &bundle,
                &t,
                &pool_to_batch(&src),
                &pool_to_batch(&tgt),
                2,
                Some(&out.join("pca_scatter.csv")),
            )?;
            std::fs::write(out.join("pca.json"), serde_json::to_string_pretty(&report)?)?;
            println!(
                "d(translated, source) = {:.4}, d(target, source) = {:.4}, explained var {:.3}",
                report.d_translated_source, report.d_target_source, report.explained_variance
            );
        }
    }
    Ok(())
}
