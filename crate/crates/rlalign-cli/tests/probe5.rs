// temporary sizing probe, delete before shipping
use rlalign::imgcore::{warp, RigidTransform2D};
use rlalign::phantom::{generate_windowed_pair, MotionRange, PhantomConfig};
use rlalign::simkit::{dissimilarity, SimilarityConfig};

fn med(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = 0.5 * (v.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let f = idx - lo as f64;
    v[lo] * (1.0 - f) + v[lo + 1.min(v.len() - 1 - lo)] * f
}

fn frac_below(v: &[f64], t: f64) -> f64 {
    v.iter().filter(|&&x| x <= t).count() as f64 / v.len() as f64
}

fn sharp(looks: f64, seed: u64) -> PhantomConfig {
    let mut cfg = PhantomConfig::default();
    cfg.layer_count = 7;
    cfg.layer_amplitude = 12.0;
    cfg.intensity_modulation = 0.6;
    cfg.layer_contrasts = (0..7)
        .map(|i| {
            if i % 2 == 0 {
                (0.9 - 0.05 * i as f64).clamp(0.05, 0.95)
            } else {
                (0.35 + 0.05 * i as f64).clamp(0.05, 0.95)
            }
        })
        .collect();
    cfg.speckle_looks = looks;
    cfg.seed = seed;
    cfg
}

fn thin_band(layers: usize, modulation: f64, looks: f64, seed: u64) -> PhantomConfig {
    let mut cfg = PhantomConfig::default();
    cfg.height = 100;
    cfg.width = 200;
    cfg.layer_count = layers;
    cfg.layer_amplitude = 12.0;
    cfg.intensity_modulation = modulation;
    cfg.layer_contrasts = if layers == 5 {
        vec![0.85, 0.35, 0.95, 0.45, 0.70]
    } else {
        (0..layers)
            .map(|i| {
                if i % 2 == 0 {
                    (0.9 - 0.05 * i as f64).clamp(0.05, 0.95)
                } else {
                    (0.35 + 0.05 * i as f64).clamp(0.05, 0.95)
                }
            })
            .collect()
    };
    cfg.speckle_looks = looks;
    cfg.seed = seed;
    cfg
}

#[test]
#[ignore]
fn probe_thin_band() {
    let sim = SimilarityConfig::default();
    for (layers, modulation) in [(5usize, 0.6), (4, 0.6), (5, 0.3)] {
        for looks in [150.0, 400.0, 1e9] {
            let mut d_init = vec![];
            let mut d_goal = vec![];
            let mut d_snap = vec![];
            let mut d_1px = vec![];
            for i in 0..60u64 {
                let cfg = thin_band(layers, modulation, looks, 1000 + i / 20);
                let range = MotionRange {
                    translation: 3.0,
                    rotation: 0.0,
                };
                let (fixed, moving, ms) =
                    generate_windowed_pair(&cfg, 84, 4, 4, &range, 777 + i).unwrap();
                let goal = ms.truth.invert();
                let snap = RigidTransform2D::new(goal.tx.round(), goal.ty.round(), 0.0);
                let off1 = RigidTransform2D::new(snap.tx + 1.0, snap.ty, 0.0);
                d_init.push(dissimilarity(&fixed, &moving, &sim).unwrap());
                d_goal.push(dissimilarity(&fixed, &warp(&moving, &goal), &sim).unwrap());
                d_snap.push(dissimilarity(&fixed, &warp(&moving, &snap), &sim).unwrap());
                d_1px.push(dissimilarity(&fixed, &warp(&moving, &off1), &sim).unwrap());
            }
            let mi = med(d_init.clone());
            let ms_ = med(d_snap.clone());
            println!(
                "L{layers} mod {modulation} looks {looks:>6.0}: init {mi:.3} goal {:.3} snap {ms_:.3} 1px {:.3}  ratio {:.2}",
                med(d_goal.clone()),
                med(d_1px.clone()),
                ms_ / mi
            );
            for eps in [0.05, 0.08, 0.10, 0.12] {
                println!(
                    "        eps {eps:.2}: P(init<=eps) {:.2} P(goal<=eps) {:.2} P(snap<=eps) {:.2} P(1px<=eps) {:.2}",
                    frac_below(&d_init, eps),
                    frac_below(&d_goal, eps),
                    frac_below(&d_snap, eps),
                    frac_below(&d_1px, eps)
                );
            }
        }
    }
}

#[test]
#[ignore]
fn probe_content_grid() {
    let sim = SimilarityConfig::default();
    for (name, make) in [
        ("default", false),
        ("sharp", true),
    ] {
        for looks in [50.0, 150.0, 400.0, 1e9] {
            let mut d_init = vec![];
            let mut d_goal = vec![];
            let mut d_snap = vec![];
            let mut d_1px = vec![];
            for i in 0..60u64 {
                let cfg = if make {
                    sharp(looks, 1000 + i / 20)
                } else {
                    let mut c = PhantomConfig::default();
                    c.speckle_looks = looks;
                    c.seed = 1000 + i / 20;
                    c
                };
                let range = MotionRange {
                    translation: 3.0,
                    rotation: 0.0,
                };
                let (fixed, moving, ms) =
                    generate_windowed_pair(&cfg, 84, 4, 4, &range, 777 + i).unwrap();
                let goal = ms.truth.invert();
                let snap = RigidTransform2D::new(goal.tx.round(), goal.ty.round(), 0.0);
                let off1 = RigidTransform2D::new(snap.tx + 1.0, snap.ty, 0.0);
                d_init.push(dissimilarity(&fixed, &moving, &sim).unwrap());
                d_goal.push(dissimilarity(&fixed, &warp(&moving, &goal), &sim).unwrap());
                d_snap.push(dissimilarity(&fixed, &warp(&moving, &snap), &sim).unwrap());
                d_1px.push(dissimilarity(&fixed, &warp(&moving, &off1), &sim).unwrap());
            }
            let mi = med(d_init.clone());
            let ms_ = med(d_snap.clone());
            println!(
                "{name:>7} looks {looks:>6.0}: init {mi:.3} goal {:.3} snap {ms_:.3} 1px {:.3}  ratio {:.2}",
                med(d_goal.clone()),
                med(d_1px.clone()),
                ms_ / mi
            );
            for eps in [0.05, 0.08, 0.10, 0.12, 0.15] {
                println!(
                    "        eps {eps:.2}: P(init<=eps) {:.2} P(goal<=eps) {:.2} P(snap<=eps) {:.2} P(1px<=eps) {:.2}",
                    frac_below(&d_init, eps),
                    frac_below(&d_goal, eps),
                    frac_below(&d_snap, eps),
                    frac_below(&d_1px, eps)
                );
            }
        }
    }
}
