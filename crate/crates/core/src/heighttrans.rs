//! 3D-to-2D height sampling.
//!
//! Every BEV cell owns a fixed column of 3D points, one per height. Each
//! point is projected into every camera and contributes
//! `D(u, v, d) · M(u, v) · I(u, v)` to its cell. The reference path samples
//! with bilinear/trilinear interpolation or with rounding; once rounding is
//! used all indices are input independent, so they are precomputed into an
//! [`HtLookupTable`] and the transform becomes a scatter-sum.
//!
//! Outputs here do not include the BEV probability factor; it is applied
//! once, after fusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geometry::{common_feature_extent, BevGridSpec, CameraRig, HeightSet, Projection};
use crate::sampling::{depth_to_coord, sample_volume, DepthBinSpec, StreamInputs};
use crate::table::{cells_to_planes, scatter_pool, PoolEntry, PoolTable, TableGeometry, TableKind, WeightMode};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Bilinear feature/mask and trilinear depth sampling.
    Interp,
    /// Nearest-integer indexing, identical to the lookup table.
    #[default]
    Round,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HtLookupTable(PoolTable);

impl HtLookupTable {
    pub fn from_table(table: PoolTable) -> Result<Self> {
        if table.kind() != TableKind::HeightTrans {
            return Err(Error::ShapeMismatch("not a height-sampling table".into()));
        }
        Ok(Self(table))
    }

    pub fn table(&self) -> &PoolTable {
        &self.0
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_table(PoolTable::read(TableKind::HeightTrans, path)?)
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.0.write(path)
    }
}

/// Indices for a projected point under rounding: `(feat_index, depth_index)`,
/// or `None` when the rounded pixel or depth bin falls outside the maps.
/// Rounding is half away from zero.
pub fn round_correspondence(
    p: &Projection,
    feat_h: usize,
    feat_w: usize,
    dspec: &DepthBinSpec,
) -> Option<(u32, u32)> {
    let u = p.u.round();
    let v = p.v.round();
    if !(u >= 0.0 && u <= (feat_w - 1) as f64 && v >= 0.0 && v <= (feat_h - 1) as f64) {
        return None;
    }
    let k = depth_to_coord(p.d, dspec).round();
    if !(k >= 0.0 && k <= (dspec.n_bins() - 1) as f64) {
        return None;
    }
    let feat = v as usize * feat_w + u as usize;
    let depth = k as usize * feat_h * feat_w + feat;
    Some((feat as u32, depth as u32))
}

fn geometry_for(
    rigs: &[CameraRig],
    grid: &BevGridSpec,
    heights: &HeightSet,
    dspec: &DepthBinSpec,
) -> Result<TableGeometry> {
    let (feat_h, feat_w) = common_feature_extent(rigs)?;
    Ok(TableGeometry {
        n_cams: rigs.len(),
        ny: grid.ny(),
        nx: grid.nx(),
        n_bins: dspec.n_bins(),
        feat_h,
        feat_w,
        n_heights: heights.len(),
    })
}

/// Builds the lookup table. Records are ordered by cell, then camera position
/// in `rigs`, then height. An empty table is valid.
pub fn precompute_ht_table(
    rigs: &[CameraRig],
    grid: &BevGridSpec,
    heights: &HeightSet,
    dspec: &DepthBinSpec,
) -> Result<HtLookupTable> {
    let g = geometry_for(rigs, grid, heights, dspec)?;
    let mut entries = Vec::new();
    for cell in 0..grid.num_cells() {
        let (x, y) = grid.center_of(cell);
        for (ci, cam) in rigs.iter().enumerate() {
            for &z in heights.values() {
                let Some(p) = cam.project([x, y, z]) else {
                    continue;
                };
                if let Some((feat_index, depth_index)) = round_correspondence(&p, g.feat_h, g.feat_w, dspec) {
                    entries.push(PoolEntry {
                        bev_cell: cell as u32,
                        cam: ci as u32,
                        feat_index,
                        depth_index,
                    });
                }
            }
        }
    }
    HtLookupTable::from_table(PoolTable::from_sorted(TableKind::HeightTrans, g, entries)?)
}

fn check_rigs_against(rigs: &[CameraRig], inputs: &StreamInputs, dspec: &DepthBinSpec) -> Result<()> {
    let (h, w) = common_feature_extent(rigs)?;
    if rigs.len() != inputs.num_cameras() || h != inputs.feat_h() || w != inputs.feat_w() {
        return Err(Error::ShapeMismatch(format!(
            "{} rigs with {h}x{w} features vs inputs with {} cameras of {}x{}",
            rigs.len(),
            inputs.num_cameras(),
            inputs.feat_h(),
            inputs.feat_w()
        )));
    }
    if inputs.depth_bins() != dspec.n_bins() {
        return Err(Error::ShapeMismatch(format!(
            "depth maps have {} bins, depth spec has {}",
            inputs.depth_bins(),
            dspec.n_bins()
        )));
    }
    Ok(())
}

/// Reference transform: projects every (cell, camera, height) point on the fly.
#[allow(clippy::too_many_arguments)]
pub fn ht_transform_naive(
    inputs: &StreamInputs,
    rigs: &[CameraRig],
    grid: &BevGridSpec,
    heights: &HeightSet,
    dspec: &DepthBinSpec,
    mode: SamplerMode,
    exec: &Executor,
) -> Result<Tensor> {
    check_rigs_against(rigs, inputs, dspec)?;
    let c = inputs.channels();
    let (h, w) = (inputs.feat_h(), inputs.feat_w());
    let hw = h * w;
    let nb = dspec.n_bins();
    let feats = inputs.features().data();
    let depth = inputs.depth().data();
    let mask = inputs.mask().data();

    let mut cell_major = vec![0.0f32; grid.num_cells() * c];
    exec.for_each_chunk_batched(&mut cell_major, c, 64, |cell, out| {
        let (x, y) = grid.center_of(cell);
        let mut acc = vec![0.0f64; c];
        for (ci, cam) in rigs.iter().enumerate() {
            let feat = &feats[ci * c * hw..(ci + 1) * c * hw];
            let vol = &depth[ci * nb * hw..(ci + 1) * nb * hw];
            let m = &mask[ci * hw..(ci + 1) * hw];
            for &z in heights.values() {
                let Some(p) = cam.project([x, y, z]) else {
                    continue;
                };
                match mode {
                    SamplerMode::Round => {
                        let Some((fi, di)) = round_correspondence(&p, h, w, dspec) else {
                            continue;
                        };
                        let wt = vol[di as usize] as f64 * m[fi as usize] as f64;
                        for (ch, a) in acc.iter_mut().enumerate() {
                            *a += wt * feat[ch * hw + fi as usize] as f64;
                        }
                    }
                    SamplerMode::Interp => {
                        let (taps, n) = crate::sampling::bilinear_taps(h, w, p.u, p.v);
                        if n == 0 {
                            continue;
                        }
                        let pd = sample_volume(vol, nb, h, w, p.u, p.v, depth_to_coord(p.d, dspec));
                        if pd == 0.0 {
                            continue;
                        }
                        for (ch, a) in acc.iter_mut().enumerate() {
                            let plane = &feat[ch * hw..(ch + 1) * hw];
                            let mi: f64 = taps[..n]
                                .iter()
                                .map(|&(t, wt)| wt * (m[t] as f64 * plane[t] as f64))
                                .sum();
                            *a += pd * mi;
                        }
                    }
                }
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    Ok(cells_to_planes(&cell_major, c, grid.ny(), grid.nx()))
}

/// Lookup-table transform; bitwise equal to [`ht_transform_naive`] in
/// [`SamplerMode::Round`] for the inputs the table was built from.
pub fn ht_transform_fast(inputs: &StreamInputs, table: &HtLookupTable, exec: &Executor) -> Result<Tensor> {
    scatter_pool(table.table(), inputs, WeightMode::DepthMask, exec)
}
