//! Diagnostic probe for translator calibration (not part of the test suite).

use ndarray::{Array2, Array4, Axis};
use pbit::adapt::sample_image_pool;
use pbit::navenv::map::builtin_eval_scenes;
use pbit::navenv::{Domain, RenderConfig};
use pbit::nn::Graph;
use pbit::policy::PolicyBundle;
use pbit::translation::Translator;

fn stack(pool: &[pbit::navenv::ImageSample]) -> Array4<f64> {
    let (c, h, w) = pool[0].data.dim();
    let mut out = Array4::zeros((pool.len(), c, h, w));
    for (b, s) in pool.iter().enumerate() {
        out.index_axis_mut(Axis(0), b).assign(&s.data);
    }
    out
}

fn l1(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    (a - b).mapv(f64::abs).mean().unwrap()
}

fn stats(name: &str, x: &Array4<f64>) {
    let mean = x.mean().unwrap();
    let sd = x.std(0.0);
    let mut mins = f64::INFINITY;
    let mut maxs = f64::NEG_INFINITY;
    for &v in x.iter() {
        mins = mins.min(v);
        maxs = maxs.max(v);
    }
    println!("{name}: mean={mean:.3} sd={sd:.3} min={mins:.3} max={maxs:.3}");
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let policy = PolicyBundle::load(std::path::Path::new(&args[1])).unwrap();
    let t = Translator::load(std::path::Path::new(&args[2])).unwrap();
    let scenes = builtin_eval_scenes();
    let rc = RenderConfig {
        resolution: t.cfg.image_size,
        ..RenderConfig::default()
    };
    let src = stack(&sample_image_pool(&scenes, Domain::Source, &rc, 8, 101));
    let tgt = stack(&sample_image_pool(&scenes, Domain::Target, &rc, 8, 102));
    let b = src.dim().0;

    let mut g = Graph::new(&t.store);
    let xs = g.input(src.clone().into_dyn());
    let xt = g.input(tgt.clone().into_dyn());
    let (cs, es) = t.encode(&mut g, Domain::Source, xs);
    let (ct, et) = t.encode(&mut g, Domain::Target, xt);
    let zero = g.input(Array2::<f64>::zeros((b, t.cfg.style_dim)).into_dyn());

    let arr4 = |g: &Graph, v| {
        g.value(v)
            .view()
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap()
            .to_owned()
    };
    let arr2 = |g: &Graph, v| {
        g.value(v)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .to_owned()
    };

    // Style code statistics vs the N(0,1) prior.
    let es_v = arr2(&g, es);
    let et_v = arr2(&g, et);
    println!(
        "extracted style source: mean={:.3} sd={:.3}",
        es_v.mean().unwrap(),
        es_v.std(0.0)
    );
    println!(
        "extracted style target: mean={:.3} sd={:.3}",
        et_v.mean().unwrap(),
        et_v.std(0.0)
    );

    // Reconstruction paths.
    let rec_ext = t.decode(&mut g, Domain::Source, cs, es);
    let rec_zero = t.decode(&mut g, Domain::Source, cs, zero);
    let fake_s = t.decode(&mut g, Domain::Source, ct, zero); // translation path
    let rec_ext_v = arr4(&g, rec_ext);
    let rec_zero_v = arr4(&g, rec_zero);
    let fake_v = arr4(&g, fake_s);
    println!("L1(rec src, extracted style)  = {:.4}", l1(&rec_ext_v, &src));
    println!("L1(rec src, zero style)       = {:.4}", l1(&rec_zero_v, &src));
    stats("real source   ", &src);
    stats("rec extracted ", &rec_ext_v);
    stats("rec zero-style", &rec_zero_v);
    stats("translated    ", &fake_v);

    // Discriminator logits.
    let real_logits = t.discriminate(&mut g, Domain::Source, xs);
    let fake_in = g.input(fake_v.clone().into_dyn());
    let fake_logits = t.discriminate(&mut g, Domain::Source, fake_in);
    for (i, (r, f)) in real_logits.iter().zip(&fake_logits).enumerate() {
        let rv = g.value(*r).mean().unwrap();
        let fv = g.value(*f).mean().unwrap();
        println!("D_source scale {i}: mean logit real={rv:.3} fake={fv:.3}");
    }

    // Policy features across the paths.
    let f_t = policy.extract_features(&tgt);
    let f_fake = policy.extract_features(&fake_v);
    let f_s = policy.extract_features(&src);
    let d_pol = (&f_t - &f_fake).mapv(f64::abs).sum() / b as f64;
    println!("L_pol(target vs translated) = {d_pol:.3}");
    println!(
        "feature row-norm source={:.3} target={:.3} translated={:.3}",
        f_s.mapv(f64::abs).sum() / b as f64,
        f_t.mapv(f64::abs).sum() / b as f64,
        f_fake.mapv(f64::abs).sum() / b as f64
    );
}
