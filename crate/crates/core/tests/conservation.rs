mod common;

use bevfuse::problss::lift_frustum;
use bevfuse::*;
use common::*;

/// Per-channel `(Σ w·I, Σ |w·I|)` over every in-grid frustum point.
fn direct_mass(inputs: &StreamInputs, rigs: &[CameraRig], grid: &BevGridSpec, dspec: &DepthBinSpec) -> Vec<(f64, f64)> {
    let (c, nb) = (inputs.channels(), inputs.depth_bins());
    let (h, w) = (inputs.feat_h(), inputs.feat_w());
    let hw = h * w;
    let mut out = vec![(0.0, 0.0); c];
    for (ci, cam) in rigs.iter().enumerate() {
        for pt in lift_frustum(cam, dspec) {
            if grid.locate(pt.ego[0], pt.ego[1]).is_none() {
                continue;
            }
            let pix = pt.v * w + pt.u;
            let wt = inputs.depth().data()[(ci * nb + pt.bin) * hw + pix] as f64
                * inputs.mask().data()[ci * hw + pix] as f64;
            for (ch, o) in out.iter_mut().enumerate() {
                let v = wt * inputs.features().data()[(ci * c + ch) * hw + pix] as f64;
                o.0 += v;
                o.1 += v.abs();
            }
        }
    }
    out
}

fn bev_mass(f: &Tensor) -> Vec<f64> {
    let c = f.shape()[0];
    (0..c).map(|ch| f.outer(ch).iter().map(|&v| v as f64).sum()).collect()
}

#[test]
fn pooled_mass_equals_direct_sum() {
    let dspec = DepthBinSpec::default();
    let grid = BevGridSpec::new(-30.0, 30.0, -30.0, 30.0, 40, 40).unwrap();
    for seed in 0..4 {
        let rigs = small_rigs(3, 22, 8, 15.0, 0.3 * seed as f64);
        let inputs = random_inputs(100 + seed, 3, 4, dspec.n_bins(), 8, 22, 0.0, 1.0);
        let table = precompute_lss_table(&rigs, &grid, &dspec).unwrap();
        let f = lss_pool(&inputs, &table, WeightMode::DepthMask, &Executor::sequential()).unwrap();
        for (got, (want, _)) in bev_mass(&f).into_iter().zip(direct_mass(&inputs, &rigs, &grid, &dspec)) {
            assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
        }
    }
}

#[test]
fn signed_features_conserve_up_to_rounding() {
    let (scene, g) = random_scene(12);
    let table = precompute_lss_table(&g.rigs, &g.grid, &g.depth_bins).unwrap();
    let f = lss_pool(&scene.inputs, &table, WeightMode::DepthMask, &Executor::sequential()).unwrap();
    for (got, (want, abs)) in bev_mass(&f)
        .into_iter()
        .zip(direct_mass(&scene.inputs, &g.rigs, &g.grid, &g.depth_bins))
    {
        // each cell is rounded to f32 once
        assert!((got - want).abs() <= 1e-6 * abs.max(1e-30), "{got} vs {want} (scale {abs})");
    }
}

#[test]
fn out_of_grid_points_carry_no_mass() {
    let dspec = DepthBinSpec::default();
    let rigs = small_rigs(1, 22, 8, 15.0, 0.0);
    let inputs = random_inputs(5, 1, 2, dspec.n_bins(), 8, 22, 0.0, 1.0);
    // grid entirely behind the camera
    let grid = BevGridSpec::new(-50.0, -5.0, -20.0, 20.0, 10, 10).unwrap();
    let table = precompute_lss_table(&rigs, &grid, &dspec).unwrap();
    let f = lss_pool(&inputs, &table, WeightMode::DepthMask, &Executor::sequential()).unwrap();
    assert!(f.data().iter().all(|&v| v == 0.0));
}
