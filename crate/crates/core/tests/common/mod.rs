#![allow(dead_code)]

use std::f64::consts::TAU;

use bevfuse::dff::{seeded_weights, CafConfig, ProbNetConfig};
use bevfuse::pipeline::{FusionModel, Geometry};
use bevfuse::synth::{triangular_depth_column, BoxObject};
use bevfuse::*;

/// Ring scene whose rig, box layout and noise all follow from `seed`.
pub fn random_scene(seed: u64) -> (SceneBundle, Geometry) {
    let mut rng = Rng::new(Rng::child_seed(seed, 900));
    let n_boxes = 1 + rng.below(4);
    let objects = (0..n_boxes)
        .map(|_| {
            let size = [
                rng.uniform_scalar(1.5, 8.0) as f64,
                rng.uniform_scalar(1.0, 3.0) as f64,
                rng.uniform_scalar(1.0, 3.5) as f64,
            ];
            let center = [
                rng.uniform_scalar(-40.0, 40.0) as f64,
                rng.uniform_scalar(-40.0, 40.0) as f64,
                size[2] / 2.0,
            ];
            BoxObject::new(center, size)
        })
        .collect();
    let spec = SceneSpec {
        seed,
        n_cameras: 4 + rng.below(3),
        focal: rng.uniform_scalar(24.0, 36.0) as f64,
        camera_height: rng.uniform_scalar(1.2, 1.8) as f64,
        objects,
        ..SceneSpec::default()
    };
    let bundle = generate_scene(&spec, &BevGridSpec::default(), &DepthBinSpec::default()).unwrap();
    let geometry = geometry_of(&bundle, HeightMode::MultiRes);
    (bundle, geometry)
}

pub fn geometry_of(bundle: &SceneBundle, heights: HeightMode) -> Geometry {
    Geometry {
        rigs: bundle.rigs.clone(),
        grid: bundle.grid,
        heights: make_height_samples(heights).unwrap(),
        depth_bins: bundle.depth_bins,
    }
}

pub fn standard_scene(seed: u64) -> (SceneBundle, Geometry) {
    let bundle = generate_scene(
        &SceneSpec::with_seed(seed),
        &BevGridSpec::default(),
        &DepthBinSpec::default(),
    )
    .unwrap();
    let geometry = geometry_of(&bundle, HeightMode::MultiRes);
    (bundle, geometry)
}

pub fn seeded_model(channels: usize, seed: u64) -> FusionModel {
    let caf = CafConfig::new(channels).unwrap();
    let prob = ProbNetConfig::new(channels).unwrap();
    let weights = seeded_weights(&caf, &prob, seed).unwrap();
    FusionModel { caf, prob, weights }
}

/// Small ring rig (w × h features) for fast randomized checks.
pub fn small_rigs(n: usize, w: usize, h: usize, focal: f64, yaw0: f64) -> Vec<CameraRig> {
    let k = [
        [focal, 0.0, (w as f64 - 1.0) / 2.0],
        [0.0, focal, (h as f64 - 1.0) / 2.0],
        [0.0, 0.0, 1.0],
    ];
    (0..n)
        .map(|i| {
            let yaw = yaw0 + TAU * i as f64 / n as f64;
            CameraRig::looking_at_yaw(i as u32, yaw, [0.2 * i as f64, -0.1, 1.5], k, w, h).unwrap()
        })
        .collect()
}

/// Random features in `[lo, hi)`, normalized random depth and random masks.
#[allow(clippy::too_many_arguments)]
pub fn random_inputs(seed: u64, n: usize, c: usize, bins: usize, h: usize, w: usize, lo: f32, hi: f32) -> StreamInputs {
    let mut rng = Rng::new(seed);
    let feats = rng.uniform(&[n, c, h, w], lo, hi).unwrap();
    let raw = rng.uniform(&[n, bins, h, w], 0.0, 1.0).unwrap();
    let hw = h * w;
    let mut depth = raw.data().to_vec();
    for cam in 0..n {
        for p in 0..hw {
            let s: f64 = (0..bins).map(|b| depth[(cam * bins + b) * hw + p] as f64).sum();
            for b in 0..bins {
                let i = (cam * bins + b) * hw + p;
                depth[i] = (depth[i] as f64 / s) as f32;
            }
        }
    }
    let mask = rng.uniform(&[n, 1, h, w], 0.0, 1.0).unwrap();
    StreamInputs::new(feats, Tensor::new(vec![n, bins, h, w], depth).unwrap(), mask).unwrap()
}

/// Low-frequency features, broad depth columns over a smooth surface and a
/// unit mask: the regime where nearest-pixel sampling approximates
/// interpolation well.
pub fn smooth_inputs(rigs: &[CameraRig], c: usize, dspec: &DepthBinSpec) -> StreamInputs {
    let n = rigs.len();
    let (w, h) = (rigs[0].feat_w(), rigs[0].feat_h());
    let hw = w * h;
    let feats = Tensor::from_fn(&[n, c, h, w], |i| {
        let (cam, ch, p) = (i / (c * hw), (i / hw) % c, i % hw);
        let (u, v) = ((p % w) as f64 / w as f64, (p / w) as f64 / h as f64);
        let phase = 0.37 * ch as f64 + 1.1 * cam as f64;
        ((TAU * u + phase).sin() * (0.5 * TAU * v + 0.5 * phase).cos()) as f32
    })
    .unwrap();
    let bins = dspec.n_bins();
    let mut depth = vec![0.0f32; n * bins * hw];
    for cam in 0..n {
        for p in 0..hw {
            let v = (p / w) as f64 / h as f64;
            let t = 8.0 + 30.0 * v + 4.0 * cam as f64;
            let col = triangular_depth_column(t, 3.0, dspec);
            for (b, m) in col.iter().enumerate() {
                depth[(cam * bins + b) * hw + p] = *m as f32;
            }
        }
    }
    StreamInputs::new(
        feats,
        Tensor::new(vec![n, bins, h, w], depth).unwrap(),
        Tensor::full(&[n, 1, h, w], 1.0).unwrap(),
    )
    .unwrap()
}

pub fn relative_l2(reference: &Tensor, other: &Tensor) -> f64 {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (&a, &b) in reference.data().iter().zip(other.data()) {
        num += (a as f64 - b as f64).powi(2);
        den += (a as f64).powi(2);
    }
    (num / den).sqrt()
}
