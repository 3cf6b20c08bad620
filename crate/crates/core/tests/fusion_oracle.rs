//! Fusion nets against values computed with an independent float64 reference
//! (torch `conv2d`/`sigmoid`) from the same seeded weights and inputs.

use bevfuse::dff::{bev_probability, caf_fuse, seeded_weights, CafConfig, ProbNetConfig};
use bevfuse::*;

const A_EXPECTED: [(usize, f32); 4] = [(0, 0.3711435), (17, 0.396551), (100, 0.4813676), (335, 0.2734267)];
const P_EXPECTED: [(usize, f32); 4] = [(0, 0.5742379), (5, 0.7212688), (20, 0.6485148), (41, 0.6305597)];
const F_CHANNEL_EXPECTED: [(usize, f32); 4] = [(0, -0.0778922), (17, -0.3364763), (100, -0.2711474), (335, 1.2633011)];

#[test]
fn fusion_matches_float64_reference() {
    let (caf, prob) = (CafConfig::new(8).unwrap(), ProbNetConfig::new(8).unwrap());
    let w = seeded_weights(&caf, &prob, 11).unwrap();
    let l = Rng::new(21).uniform(&[8, 6, 7], -2.0, 2.0).unwrap();
    let h = Rng::new(22).uniform(&[8, 6, 7], -2.0, 2.0).unwrap();
    for threads in [1, 3] {
        let ex = Executor::with_threads(threads).unwrap();
        let (fc, a) = caf_fuse(&l, &h, &w, &caf, &ex).unwrap();
        let p = bev_probability(&fc, &w, &prob, &ex).unwrap();
        for (t, expected) in [(&a, A_EXPECTED), (&p, P_EXPECTED), (&fc, F_CHANNEL_EXPECTED)] {
            for (i, v) in expected {
                assert!((t.data()[i] - v).abs() < 2e-6, "index {i}: {} vs {v}", t.data()[i]);
            }
        }
    }
}
