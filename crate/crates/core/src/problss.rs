//! 2D-to-3D lift-and-pool.
//!
//! Every pixel is lifted into one frustum point per depth bin (at the bin
//! center). Points that land inside the BEV grid are pooled into their cell,
//! weighted by the depth probability and, optionally, the instance mask. The
//! number of points per cell varies with geometry, unlike the fixed
//! heights × cameras of the height-sampling stream. No normalization by that
//! count is applied.

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geometry::{common_feature_extent, BevGridSpec, CameraRig};
use crate::sampling::{DepthBinSpec, StreamInputs};
use crate::table::{scatter_pool, PoolEntry, PoolTable, TableGeometry, TableKind};
use crate::tensor::Tensor;

pub use crate::table::WeightMode;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumPoint {
    pub u: usize,
    pub v: usize,
    pub bin: usize,
    pub ego: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LssPoolTable(PoolTable);

impl LssPoolTable {
    pub fn from_table(table: PoolTable) -> Result<Self> {
        if table.kind() != TableKind::LiftPool {
            return Err(Error::ShapeMismatch("not a frustum pooling table".into()));
        }
        Ok(Self(table))
    }

    pub fn table(&self) -> &PoolTable {
        &self.0
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_table(PoolTable::read(TableKind::LiftPool, path)?)
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.0.write(path)
    }
}

/// All frustum points of one camera, ordered by bin, then row, then column.
pub fn lift_frustum<'a>(cam: &'a CameraRig, dspec: &'a DepthBinSpec) -> impl Iterator<Item = FrustumPoint> + 'a {
    let (w, h) = (cam.feat_w(), cam.feat_h());
    (0..dspec.n_bins()).flat_map(move |bin| {
        let d = dspec.bin_center(bin);
        (0..h).flat_map(move |v| {
            (0..w).map(move |u| FrustumPoint {
                u,
                v,
                bin,
                ego: cam.unproject(u as f64, v as f64, d),
            })
        })
    })
}

pub fn precompute_lss_table(rigs: &[CameraRig], grid: &BevGridSpec, dspec: &DepthBinSpec) -> Result<LssPoolTable> {
    let (feat_h, feat_w) = common_feature_extent(rigs)?;
    let g = TableGeometry {
        n_cams: rigs.len(),
        ny: grid.ny(),
        nx: grid.nx(),
        n_bins: dspec.n_bins(),
        feat_h,
        feat_w,
        n_heights: 0,
    };
    let hw = feat_h * feat_w;
    let mut entries = Vec::new();
    for (ci, cam) in rigs.iter().enumerate() {
        for pt in lift_frustum(cam, dspec) {
            if let Some(cell) = grid.locate(pt.ego[0], pt.ego[1]) {
                let feat = pt.v * feat_w + pt.u;
                entries.push(PoolEntry {
                    bev_cell: cell as u32,
                    cam: ci as u32,
                    feat_index: feat as u32,
                    depth_index: (pt.bin * hw + feat) as u32,
                });
            }
        }
    }
    // generated in (cam, depth_index) order; a stable sort by cell keeps it
    entries.sort_by_key(|e| e.bev_cell);
    LssPoolTable::from_table(PoolTable::from_sorted(TableKind::LiftPool, g, entries)?)
}

pub fn lss_pool(inputs: &StreamInputs, table: &LssPoolTable, mode: WeightMode, exec: &Executor) -> Result<Tensor> {
    scatter_pool(table.table(), inputs, mode, exec)
}

/// Table-free pooling: lifts every frustum point, locates its cell and
/// accumulates directly. Per-cell accumulation order matches [`lss_pool`].
pub fn lss_pool_direct(
    inputs: &StreamInputs,
    rigs: &[CameraRig],
    grid: &BevGridSpec,
    dspec: &DepthBinSpec,
    mode: WeightMode,
) -> Result<Tensor> {
    let (h, w) = common_feature_extent(rigs)?;
    if rigs.len() != inputs.num_cameras()
        || h != inputs.feat_h()
        || w != inputs.feat_w()
        || dspec.n_bins() != inputs.depth_bins()
    {
        return Err(Error::ShapeMismatch("rigs and depth spec do not match inputs".into()));
    }
    let c = inputs.channels();
    let hw = h * w;
    let nb = dspec.n_bins();
    let n_cells = grid.num_cells();
    let feats = inputs.features().data();
    let depth = inputs.depth().data();
    let mask = inputs.mask().data();
    let mut acc = vec![0.0f64; n_cells * c];
    for (ci, cam) in rigs.iter().enumerate() {
        for pt in lift_frustum(cam, dspec) {
            let Some(cell) = grid.locate(pt.ego[0], pt.ego[1]) else {
                continue;
            };
            let pix = pt.v * w + pt.u;
            let mut wt = depth[ci * nb * hw + pt.bin * hw + pix] as f64;
            if mode == WeightMode::DepthMask {
                wt *= mask[ci * hw + pix] as f64;
            }
            for ch in 0..c {
                acc[cell * c + ch] += wt * feats[(ci * c + ch) * hw + pix] as f64;
            }
        }
    }
    let mut data = vec![0.0f32; n_cells * c];
    for cell in 0..n_cells {
        for ch in 0..c {
            data[ch * n_cells + cell] = acc[cell * c + ch] as f32;
        }
    }
    Tensor::new(vec![c, grid.ny(), grid.nx()], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat4;

    fn identity_cam(w: usize, h: usize) -> CameraRig {
        let k = [[10.0, 0.0, 2.0], [0.0, 10.0, 1.0], [0.0, 0.0, 1.0]];
        let mut t: Mat4 = [[0.0; 4]; 4];
        for (i, r) in t.iter_mut().enumerate() {
            r[i] = 1.0;
        }
        CameraRig::new(0, k, t, w, h).unwrap()
    }

    #[test]
    fn principal_pixel_lifts_onto_axis() {
        let cam = identity_cam(5, 3);
        let d = DepthBinSpec::default();
        for pt in lift_frustum(&cam, &d).filter(|p| p.u == 2 && p.v == 1) {
            assert_eq!(pt.ego, [0.0, 0.0, d.bin_center(pt.bin)]);
        }
    }

    #[test]
    fn lift_then_project_round_trips() {
        let k = [[30.0, 0.0, 21.5], [0.0, 30.0, 7.5], [0.0, 0.0, 1.0]];
        let cam = CameraRig::looking_at_yaw(0, 0.7, [0.3, -0.2, 1.5], k, 44, 16).unwrap();
        let d = DepthBinSpec::default();
        for pt in lift_frustum(&cam, &d).step_by(97) {
            let p = cam.project(pt.ego).unwrap();
            assert!((p.u - pt.u as f64).abs() < 1e-4);
            assert!((p.v - pt.v as f64).abs() < 1e-4);
            assert!((p.d - d.bin_center(pt.bin)).abs() < 1e-4);
        }
    }

    #[test]
    fn frustum_cardinality() {
        let cam = identity_cam(44, 16);
        assert_eq!(lift_frustum(&cam, &DepthBinSpec::default()).count(), 78_848);
    }

    #[test]
    fn grid_behind_camera_is_empty() {
        let k = [[30.0, 0.0, 21.5], [0.0, 30.0, 7.5], [0.0, 0.0, 1.0]];
        let cam = CameraRig::looking_at_yaw(0, 0.0, [0.0, 0.0, 1.5], k, 44, 16).unwrap();
        let grid = BevGridSpec::new(-60.0, -1.0, -30.0, 30.0, 16, 16).unwrap();
        let t = precompute_lss_table(&[cam], &grid, &DepthBinSpec::default()).unwrap();
        assert!(t.table().is_empty());
    }

    #[test]
    fn table_order_is_cell_cam_depth() {
        let k = [[30.0, 0.0, 21.5], [0.0, 30.0, 7.5], [0.0, 0.0, 1.0]];
        let rigs: Vec<_> = (0..2)
            .map(|i| CameraRig::looking_at_yaw(i, i as f64 * 0.5, [0.0, 0.0, 1.5], k, 44, 16).unwrap())
            .collect();
        let t = precompute_lss_table(&rigs, &BevGridSpec::default(), &DepthBinSpec::default()).unwrap();
        let e = t.table().entries();
        assert!(e.windows(2).all(|p| (p[0].bev_cell, p[0].cam, p[0].depth_index)
            < (p[1].bev_cell, p[1].cam, p[1].depth_index)));
    }
}
