//! Precomputed pooling tables and the scatter-sum kernel that consumes them.
//!
//! A table is a list of [`PoolEntry`] records sorted by BEV cell, with one
//! contiguous range per cell. Both view transforms reduce to the same
//! operation once their tables exist: for every record, weight the image
//! feature at `feat_index` by the depth probability at `depth_index`
//! (optionally times the mask) and add it into `bev_cell`.
//!
//! File layout (little-endian):
//!
//! | size   | field                                                     |
//! |--------|-----------------------------------------------------------|
//! | 4      | magic, `HTLT` or `LSPT`                                   |
//! | 1      | version, currently 1                                      |
//! | 3      | reserved, zero                                            |
//! | 8 × 4  | `u32` n_cams, ny, nx, n_bins, feat_h, feat_w, n_heights, n_entries |
//! | n × 16 | records of four `u32`: bev_cell, cam, feat_index, depth_index |

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::sampling::StreamInputs;
use crate::tensor::Tensor;

pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 8 + 8 * 4;
const RECORD_LEN: usize = 16;
const CELLS_PER_TASK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TableKind {
    /// Height-sampling table, one record per (cell, camera, height) hit.
    HeightTrans,
    /// Frustum pooling table, one record per in-grid frustum point.
    LiftPool,
}

impl TableKind {
    pub fn magic(self) -> [u8; 4] {
        match self {
            TableKind::HeightTrans => *b"HTLT",
            TableKind::LiftPool => *b"LSPT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TableGeometry {
    pub n_cams: usize,
    pub ny: usize,
    pub nx: usize,
    pub n_bins: usize,
    pub feat_h: usize,
    pub feat_w: usize,
    /// Heights per cell for height-sampling tables, zero for frustum tables.
    pub n_heights: usize,
}

impl TableGeometry {
    pub fn num_cells(&self) -> usize {
        self.ny * self.nx
    }

    pub fn pixels(&self) -> usize {
        self.feat_h * self.feat_w
    }

    pub fn check_inputs(&self, inputs: &StreamInputs) -> Result<()> {
        let got = (
            inputs.num_cameras(),
            inputs.depth_bins(),
            inputs.feat_h(),
            inputs.feat_w(),
        );
        let want = (self.n_cams, self.n_bins, self.feat_h, self.feat_w);
        if got != want {
            return Err(Error::IndexOutOfRange(format!(
                "table built for (cams, bins, h, w) = {want:?}, inputs are {got:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PoolEntry {
    pub bev_cell: u32,
    pub cam: u32,
    pub feat_index: u32,
    pub depth_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolTable {
    kind: TableKind,
    geometry: TableGeometry,
    entries: Vec<PoolEntry>,
    offsets: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Weight = D, the plain lift-splat weighting.
    DepthOnly,
    /// Weight = D · M.
    DepthMask,
}

impl PoolTable {
    /// Builds a table from entries already sorted by `bev_cell`.
    pub fn from_sorted(kind: TableKind, geometry: TableGeometry, entries: Vec<PoolEntry>) -> Result<Self> {
        let n_cells = geometry.num_cells();
        let hw = geometry.pixels();
        let dhw = hw * geometry.n_bins;
        if entries.len() > u32::MAX as usize {
            return Err(Error::IndexOutOfRange("too many table entries".into()));
        }
        let mut offsets = vec![0u32; n_cells + 1];
        let mut prev = 0u32;
        for (k, e) in entries.iter().enumerate() {
            if e.bev_cell as usize >= n_cells
                || e.cam as usize >= geometry.n_cams
                || e.feat_index as usize >= hw
                || e.depth_index as usize >= dhw
            {
                return Err(Error::IndexOutOfRange(format!("entry {k}: {e:?}")));
            }
            if (e.depth_index as usize) % hw != e.feat_index as usize {
                return Err(Error::IndexOutOfRange(format!(
                    "entry {k}: depth index does not address the feature pixel"
                )));
            }
            if e.bev_cell < prev {
                return Err(Error::IndexOutOfRange(format!(
                    "entry {k}: records not sorted by cell"
                )));
            }
            prev = e.bev_cell;
            offsets[e.bev_cell as usize + 1] += 1;
        }
        for c in 0..n_cells {
            offsets[c + 1] += offsets[c];
        }
        Ok(Self {
            kind,
            geometry,
            entries,
            offsets,
        })
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn geometry(&self) -> &TableGeometry {
        &self.geometry
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records belonging to cell `cell`.
    pub fn cell_entries(&self, cell: usize) -> &[PoolEntry] {
        &self.entries[self.offsets[cell] as usize..self.offsets[cell + 1] as usize]
    }

    /// Number of records per cell.
    pub fn cell_counts(&self) -> Vec<u32> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let g = &self.geometry;
        let mut out = Vec::with_capacity(HEADER_LEN + self.entries.len() * RECORD_LEN);
        out.extend_from_slice(&self.kind.magic());
        out.push(VERSION);
        out.extend_from_slice(&[0u8; 3]);
        for v in [
            g.n_cams,
            g.ny,
            g.nx,
            g.n_bins,
            g.feat_h,
            g.feat_w,
            g.n_heights,
            self.entries.len(),
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for e in &self.entries {
            for v in [e.bev_cell, e.cam, e.feat_index, e.depth_index] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(kind: TableKind, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedPayload {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let found: [u8; 4] = bytes[0..4].try_into().unwrap();
        if found != kind.magic() {
            return Err(Error::BadMagic {
                expected: kind.magic(),
                found,
            });
        }
        if bytes[4] != VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        let h: Vec<usize> = bytes[8..HEADER_LEN]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let geometry = TableGeometry {
            n_cams: h[0],
            ny: h[1],
            nx: h[2],
            n_bins: h[3],
            feat_h: h[4],
            feat_w: h[5],
            n_heights: h[6],
        };
        let n = h[7];
        let expected = n * RECORD_LEN;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        let entries = payload
            .chunks_exact(RECORD_LEN)
            .map(|r| {
                let f = |i: usize| u32::from_le_bytes(r[i * 4..i * 4 + 4].try_into().unwrap());
                PoolEntry {
                    bev_cell: f(0),
                    cam: f(1),
                    feat_index: f(2),
                    depth_index: f(3),
                }
            })
            .collect();
        Self::from_sorted(kind, geometry, entries)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(kind: TableKind, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(kind, &bytes)
    }
}

/// Scatter-sum over `table`. Each cell is reduced sequentially in table order
/// with 64-bit accumulators; the result is `[C, ny, nx]`.
pub fn scatter_pool(
    table: &PoolTable,
    inputs: &StreamInputs,
    mode: WeightMode,
    exec: &Executor,
) -> Result<Tensor> {
    let g = table.geometry();
    g.check_inputs(inputs)?;
    let c = inputs.channels();
    let hw = g.pixels();
    let dhw = hw * g.n_bins;
    let feats = inputs.pixel_major_features();
    let depth = inputs.depth().data();
    let mask = inputs.mask().data();

    let mut cell_major = vec![0.0f32; g.num_cells() * c];
    exec.for_each_chunk_batched(&mut cell_major, c, CELLS_PER_TASK, |cell, out| {
        let mut acc = vec![0.0f64; c];
        for e in table.cell_entries(cell) {
            let cam = e.cam as usize;
            let pix = cam * hw + e.feat_index as usize;
            let mut w = depth[cam * dhw + e.depth_index as usize] as f64;
            if mode == WeightMode::DepthMask {
                w *= mask[pix] as f64;
            }
            let row = &feats[pix * c..(pix + 1) * c];
            for (a, &x) in acc.iter_mut().zip(row) {
                *a += w * x as f64;
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    Ok(cells_to_planes(&cell_major, c, g.ny, g.nx))
}

/// Transposes `[ny·nx, C]` cell-major data into a `[C, ny, nx]` tensor.
pub(crate) fn cells_to_planes(cell_major: &[f32], c: usize, ny: usize, nx: usize) -> Tensor {
    let n = ny * nx;
    let mut data = vec![0.0f32; c * n];
    for cell in 0..n {
        for ch in 0..c {
            data[ch * n + cell] = cell_major[cell * c + ch];
        }
    }
    Tensor::from_parts_unchecked(vec![c, ny, nx], data)
}
