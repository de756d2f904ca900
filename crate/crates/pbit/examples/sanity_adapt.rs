//! Sanity experiment: run the adaptation loop with both pools rendered in
//! the source theme (target labels faked). The learned "translation" should
//! then converge toward an identity-like mapping; if it degenerates into
//! noise the failure is in the training loop, not the domain gap.

use pbit::adapt::{sample_image_pool, train_adaptation, AdaptConfig};
use pbit::navenv::map::builtin_train_scenes;
use pbit::navenv::{Domain, RenderConfig};
use pbit::policy::PolicyBundle;
use pbit::translation::{TranslationConfig, Translator};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut policy = PolicyBundle::load(std::path::Path::new(&args[1])).unwrap();
    policy.freeze_feature_extractor();
    let iters: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(10_000);
    let out = std::path::PathBuf::from(&args[2]);

    let scenes = builtin_train_scenes();
    let rc = RenderConfig {
        resolution: policy.config.image_size,
        ..RenderConfig::default()
    };
    let src = sample_image_pool(&scenes, Domain::Source, &rc, 256, 9_001);
    let mut tgt = sample_image_pool(&scenes, Domain::Source, &rc, 256, 9_002);
    for s in &mut tgt {
        s.domain = Domain::Target; // same pixels, fake label
    }

    let tcfg = TranslationConfig {
        image_size: policy.config.image_size,
        base_channels: 8,
        style_dim: 8,
        n_res_blocks: 1,
        dis_scales: 2,
        style_mlp_hidden: 16,
    };
    let acfg = AdaptConfig {
        lr: 2e-4,
        lr_halve_every: 8_000,
        total_iters: iters,
        batch_size: 8,
        seed: 0,
        checkpoint_every: 0,
        ..AdaptConfig::default()
    };
    let mut translator = Translator::new(tcfg, 0);
    let report = train_adaptation(&policy, &mut translator, &src, &tgt, &acfg, &out).unwrap();
    println!(
        "done: {} iters, lambda_pol {}, final {:?}",
        report.iterations, report.lambda_pol, report.last
    );
}
