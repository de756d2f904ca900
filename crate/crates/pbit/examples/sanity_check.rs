//! Companion check for sanity_adapt: feed source-theme images through the
//! target->source translation path and measure how close it is to identity.

use ndarray::{Array4, Axis};
use pbit::adapt::{image_to_png, sample_image_pool};
use pbit::navenv::map::builtin_eval_scenes;
use pbit::navenv::{Domain, RenderConfig};
use pbit::translation::Translator;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let t = Translator::load(std::path::Path::new(&args[1])).unwrap();
    let out = std::path::PathBuf::from(&args[2]);
    std::fs::create_dir_all(&out).unwrap();

    let scenes = builtin_eval_scenes();
    let rc = RenderConfig {
        resolution: t.cfg.image_size,
        ..RenderConfig::default()
    };
    let pool = sample_image_pool(&scenes, Domain::Source, &rc, 8, 4_242);
    let (c, h, w) = pool[0].data.dim();
    let mut x = Array4::zeros((pool.len(), c, h, w));
    for (b, s) in pool.iter().enumerate() {
        x.index_axis_mut(Axis(0), b).assign(&s.data);
    }
    let y = t.translate_target_to_source(&x, None);
    let l1 = (&y - &x).mapv(f64::abs).mean().unwrap();
    println!("L1(translated, input) over source-theme images = {l1:.4}");
    for b in 0..4 {
        let mut pair = Array4::zeros((1, c, h, 2 * w));
        pair.index_axis_mut(Axis(0), 0)
            .slice_mut(ndarray::s![.., .., ..w])
            .assign(&x.index_axis(Axis(0), b));
        pair.index_axis_mut(Axis(0), 0)
            .slice_mut(ndarray::s![.., .., w..])
            .assign(&y.index_axis(Axis(0), b));
        image_to_png(
            &pair.index_axis(Axis(0), 0).to_owned(),
            &out.join(format!("pair_{b:03}.png")),
        )
        .unwrap();
    }
}
