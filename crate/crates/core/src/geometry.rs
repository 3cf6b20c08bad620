//! Camera model, BEV grid and height sampling.
//!
//! Frames: the ego frame is x forward, y left, z up. Each camera's extrinsic
//! maps ego coordinates into its own frame (x right, y down, z forward).
//! Intrinsics are expressed in feature-map pixels; pixel `(v, u)` has its
//! center at integer coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Points closer than this to the image plane are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

const ORTHO_TOL: f64 = 1e-5;

pub type Mat3 = [[f64; 3]; 3];
pub type Mat4 = [[f64; 4]; 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRigJson", into = "CameraRigJson")]
pub struct CameraRig {
    cam_id: u32,
    intrinsics: Mat3,
    extrinsics: Mat4,
    feat_w: usize,
    feat_h: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraRigJson {
    cam_id: u32,
    intrinsics: Mat3,
    extrinsics: Mat4,
    feat_w: usize,
    feat_h: usize,
}

impl TryFrom<CameraRigJson> for CameraRig {
    type Error = Error;
    fn try_from(r: CameraRigJson) -> Result<Self> {
        CameraRig::new(r.cam_id, r.intrinsics, r.extrinsics, r.feat_w, r.feat_h)
    }
}

impl From<CameraRig> for CameraRigJson {
    fn from(c: CameraRig) -> Self {
        CameraRigJson {
            cam_id: c.cam_id,
            intrinsics: c.intrinsics,
            extrinsics: c.extrinsics,
            feat_w: c.feat_w,
            feat_h: c.feat_h,
        }
    }
}

impl CameraRig {
    pub fn new(
        cam_id: u32,
        intrinsics: Mat3,
        extrinsics: Mat4,
        feat_w: usize,
        feat_h: usize,
    ) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidCamera {
            cam_id,
            reason: reason.to_string(),
        };
        let k = &intrinsics;
        if k.iter().flatten().chain(extrinsics.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(bad("non-finite matrix entry"));
        }
        if k[2] != [0.0, 0.0, 1.0] {
            return Err(bad("intrinsics last row must be [0, 0, 1]"));
        }
        if k[1][0] != 0.0 || k[0][1] != 0.0 {
            return Err(bad("intrinsics must have zero skew"));
        }
        if k[0][0] <= 0.0 || k[1][1] <= 0.0 {
            return Err(bad("focal lengths must be positive"));
        }
        if extrinsics[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(bad("extrinsics last row must be [0, 0, 0, 1]"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|c| extrinsics[i][c] * extrinsics[j][c]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > ORTHO_TOL {
                    return Err(bad("rotation block is not orthonormal"));
                }
            }
        }
        if feat_w == 0 || feat_h == 0 {
            return Err(bad("feature extents must be positive"));
        }
        Ok(Self {
            cam_id,
            intrinsics,
            extrinsics,
            feat_w,
            feat_h,
        })
    }

    /// Camera at `position` (ego frame) looking horizontally along `yaw`
    /// radians, measured counter-clockwise from the ego x axis.
    pub fn looking_at_yaw(
        cam_id: u32,
        yaw: f64,
        position: [f64; 3],
        intrinsics: Mat3,
        feat_w: usize,
        feat_h: usize,
    ) -> Result<Self> {
        let (s, c) = yaw.sin_cos();
        let right = [s, -c, 0.0];
        let down = [0.0, 0.0, -1.0];
        let forward = [c, s, 0.0];
        let rows = [right, down, forward];
        let mut t = [[0.0; 4]; 4];
        for (i, r) in rows.iter().enumerate() {
            t[i][..3].copy_from_slice(r);
            t[i][3] = -(r[0] * position[0] + r[1] * position[1] + r[2] * position[2]);
        }
        t[3][3] = 1.0;
        Self::new(cam_id, intrinsics, t, feat_w, feat_h)
    }

    pub fn cam_id(&self) -> u32 {
        self.cam_id
    }

    pub fn intrinsics(&self) -> &Mat3 {
        &self.intrinsics
    }

    pub fn extrinsics(&self) -> &Mat4 {
        &self.extrinsics
    }

    pub fn feat_w(&self) -> usize {
        self.feat_w
    }

    pub fn feat_h(&self) -> usize {
        self.feat_h
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let t = &self.extrinsics;
        let mut q = [0.0; 3];
        for (i, qi) in q.iter_mut().enumerate() {
            *qi = t[i][0] * p[0] + t[i][1] * p[1] + t[i][2] * p[2] + t[i][3];
        }
        q
    }

    pub fn to_ego(&self, q: [f64; 3]) -> [f64; 3] {
        let t = &self.extrinsics;
        let d = [q[0] - t[0][3], q[1] - t[1][3], q[2] - t[2][3]];
        let mut p = [0.0; 3];
        for (j, pj) in p.iter_mut().enumerate() {
            *pj = t[0][j] * d[0] + t[1][j] * d[1] + t[2][j] * d[2];
        }
        p
    }

    /// Projects an ego-frame point; `None` when the point is behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<Projection> {
        let q = self.to_camera(p);
        if q[2] <= MIN_DEPTH {
            return None;
        }
        let k = &self.intrinsics;
        Some(Projection {
            u: k[0][0] * q[0] / q[2] + k[0][2],
            v: k[1][1] * q[1] / q[2] + k[1][2],
            d: q[2],
        })
    }

    /// Camera-frame direction through feature pixel `(u, v)`, scaled to unit depth.
    pub fn ray_direction(&self, u: f64, v: f64) -> [f64; 3] {
        let k = &self.intrinsics;
        [(u - k[0][2]) / k[0][0], (v - k[1][2]) / k[1][1], 1.0]
    }

    /// Inverse of [`CameraRig::project`] for a known depth.
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        let r = self.ray_direction(u, v);
        self.to_ego([r[0] * d, r[1] * d, d])
    }

    /// Camera center in the ego frame.
    pub fn center(&self) -> [f64; 3] {
        self.to_ego([0.0; 3])
    }
}

pub fn project_point(p3d: [f64; 3], cam: &CameraRig) -> Option<Projection> {
    cam.project(p3d)
}

/// Checks that all rigs share one feature geometry and returns `(feat_h, feat_w)`.
pub fn common_feature_extent(rigs: &[CameraRig]) -> Result<(usize, usize)> {
    let first = rigs.first().ok_or(Error::NoCameras)?;
    for r in rigs {
        if r.feat_w != first.feat_w || r.feat_h != first.feat_h {
            return Err(Error::ShapeMismatch(format!(
                "camera {} has feature extent {}x{}, camera {} has {}x{}",
                r.cam_id, r.feat_w, r.feat_h, first.cam_id, first.feat_w, first.feat_h
            )));
        }
    }
    Ok((first.feat_h, first.feat_w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BevGridJson", into = "BevGridJson")]
pub struct BevGridSpec {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    nx: usize,
    ny: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct BevGridJson {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    nx: usize,
    ny: usize,
}

impl TryFrom<BevGridJson> for BevGridSpec {
    type Error = Error;
    fn try_from(g: BevGridJson) -> Result<Self> {
        BevGridSpec::new(g.x_min, g.x_max, g.y_min, g.y_max, g.nx, g.ny)
    }
}

impl From<BevGridSpec> for BevGridJson {
    fn from(g: BevGridSpec) -> Self {
        BevGridJson {
            x_min: g.x_min,
            x_max: g.x_max,
            y_min: g.y_min,
            y_max: g.y_max,
            nx: g.nx,
            ny: g.ny,
        }
    }
}

impl Default for BevGridSpec {
    /// 128 × 128 cells over ±51.2 m, 0.8 m per cell.
    fn default() -> Self {
        Self {
            x_min: -51.2,
            x_max: 51.2,
            y_min: -51.2,
            y_max: 51.2,
            nx: 128,
            ny: 128,
        }
    }
}

impl BevGridSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self> {
        if ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite bounds".into()));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid("cell counts must be positive".into()));
        }
        if x_max <= x_min || y_max <= y_min {
            return Err(Error::InvalidGrid("max bound must exceed min bound".into()));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            nx,
            ny,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.y_min, self.y_max)
    }

    pub fn cell_w(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn cell_h(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    /// Center of cell `i` along x and `j` along y.
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x_min + (i as f64 + 0.5) * self.cell_w(),
            self.y_min + (j as f64 + 0.5) * self.cell_h(),
        )
    }

    /// Center of the cell with linear index `j * nx + i`.
    pub fn center_of(&self, cell: usize) -> (f64, f64) {
        self.center(cell % self.nx, cell / self.nx)
    }

    /// Linear index of the cell containing `(x, y)` using half-open cells.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        if !(x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max) {
            return None;
        }
        let i = (((x - self.x_min) / self.cell_w()).floor() as usize).min(self.nx - 1);
        let j = (((y - self.y_min) / self.cell_h()).floor() as usize).min(self.ny - 1);
        Some(j * self.nx + i)
    }
}

/// Cell centers as a `[ny, nx, 2]` tensor of `(x, y)` pairs.
pub fn bev_cell_centers(spec: &BevGridSpec) -> Tensor {
    let mut data = Vec::with_capacity(spec.num_cells() * 2);
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            let (x, y) = spec.center(i, j);
            data.push(x as f32);
            data.push(y as f32);
        }
    }
    Tensor::from_parts_unchecked(vec![spec.ny, spec.nx, 2], data)
}

pub const HEIGHT_MIN: f64 = -5.0;
pub const HEIGHT_MAX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeightMode {
    /// 0.5 m steps inside [-2, 2] m, 1 m steps outside, over [-5, 3] m.
    #[default]
    MultiRes,
    /// `n` evenly spaced values over [-5, 3] m, endpoints included.
    Uniform(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightSet {
    z_values: Vec<f64>,
    mode: HeightMode,
}

impl HeightSet {
    pub fn values(&self) -> &[f64] {
        &self.z_values
    }

    pub fn len(&self) -> usize {
        self.z_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_values.is_empty()
    }

    pub fn mode(&self) -> HeightMode {
        self.mode
    }
}

pub fn make_height_samples(mode: HeightMode) -> Result<HeightSet> {
    let z_values = match mode {
        HeightMode::MultiRes => {
            let mut z = Vec::new();
            let mut h = HEIGHT_MIN;
            while h < -2.0 {
                z.push(h);
                h += 1.0;
            }
            // inclusive ROI, exact multiples of 0.5
            for k in -4..=4 {
                z.push(k as f64 * 0.5);
            }
            let mut h = 3.0;
            while h <= HEIGHT_MAX {
                z.push(h);
                h += 1.0;
            }
            z
        }
        HeightMode::Uniform(n) => {
            if n < 2 {
                return Err(Error::InvalidCount(n));
            }
            let span = HEIGHT_MAX - HEIGHT_MIN;
            (0..n)
                .map(|i| HEIGHT_MIN + span * i as f64 / (n - 1) as f64)
                .collect()
        }
    };
    Ok(HeightSet { z_values, mode })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn k100() -> Mat3 {
        [[100.0, 0.0, 22.0], [0.0, 100.0, 8.0], [0.0, 0.0, 1.0]]
    }

    pub(crate) fn identity4() -> Mat4 {
        let mut t = [[0.0; 4]; 4];
        for (i, row) in t.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        t
    }

    fn cam() -> CameraRig {
        CameraRig::new(0, k100(), identity4(), 44, 16).unwrap()
    }

    #[test]
    fn on_axis_hits_principal_point() {
        let p = project_point([0.0, 0.0, 10.0], &cam()).unwrap();
        assert_eq!((p.u, p.v, p.d), (22.0, 8.0, 10.0));
    }

    #[test]
    fn pinhole_offset() {
        let p = project_point([1.0, 0.0, 10.0], &cam()).unwrap();
        assert_eq!((p.u, p.v, p.d), (32.0, 8.0, 10.0));
    }

    #[test]
    fn behind_camera() {
        assert!(project_point([0.0, 0.0, -1.0], &cam()).is_none());
        assert!(project_point([0.0, 0.0, 1e-7], &cam()).is_none());
    }

    #[test]
    fn rejects_invalid_rigs() {
        let mut k = k100();
        k[2][0] = 0.1;
        assert!(CameraRig::new(0, k, identity4(), 4, 4).is_err());
        let mut t = identity4();
        t[0][0] = 1.1;
        assert!(CameraRig::new(0, k100(), t, 4, 4).is_err());
        let mut t = identity4();
        t[3][0] = 1.0;
        assert!(CameraRig::new(0, k100(), t, 4, 4).is_err());
    }

    #[test]
    fn yaw_camera_sees_forward_point_on_axis() {
        let c = CameraRig::looking_at_yaw(0, 0.0, [0.0, 0.0, 1.5], k100(), 44, 16).unwrap();
        let p = c.project([10.0, 0.0, 1.5]).unwrap();
        assert!((p.u - 22.0).abs() < 1e-12 && (p.v - 8.0).abs() < 1e-12);
        assert!((p.d - 10.0).abs() < 1e-12);
        // left of the camera means smaller u, above means smaller v
        let q = c.project([10.0, 1.0, 2.5]).unwrap();
        assert!(q.u < 22.0 && q.v < 8.0);
        let back = CameraRig::looking_at_yaw(1, std::f64::consts::PI, [0.0; 3], k100(), 44, 16)
            .unwrap();
        assert!(back.project([10.0, 0.0, 0.0]).is_none());
        let c = back.center();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rig_json_round_trip_and_validation() {
        let c = cam();
        let s = serde_json::to_string(&c).unwrap();
        let back: CameraRig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let bad = s.replace("[0.0,0.0,1.0]]", "[0.0,0.0,2.0]]");
        assert!(serde_json::from_str::<CameraRig>(&bad).is_err());
    }

    #[test]
    fn multires_heights() {
        let h = make_height_samples(HeightMode::MultiRes).unwrap();
        assert_eq!(
            h.values(),
            &[-5.0, -4.0, -3.0, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0]
        );
        assert!(h.values().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn uniform_heights() {
        let h = make_height_samples(HeightMode::Uniform(4)).unwrap();
        let want = [-5.0, -7.0 / 3.0, 1.0 / 3.0, 3.0];
        for (a, b) in h.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(
            make_height_samples(HeightMode::Uniform(2)).unwrap().values(),
            &[-5.0, 3.0]
        );
        assert!(matches!(
            make_height_samples(HeightMode::Uniform(1)),
            Err(Error::InvalidCount(1))
        ));
    }

    #[test]
    fn cell_centers_small_grid() {
        let g = BevGridSpec::new(-1.0, 1.0, -1.0, 1.0, 2, 2).unwrap();
        let c = bev_cell_centers(&g);
        assert_eq!(c.shape(), &[2, 2, 2]);
        assert_eq!(c.data(), &[-0.5, -0.5, 0.5, -0.5, -0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn single_cell_center_is_origin() {
        let g = BevGridSpec::new(-51.2, 51.2, -51.2, 51.2, 1, 1).unwrap();
        assert_eq!(bev_cell_centers(&g).data(), &[0.0, 0.0]);
    }

    #[test]
    fn default_grid_origin_is_a_corner() {
        let g = BevGridSpec::default();
        assert!((g.cell_w() - 0.8).abs() < 1e-12);
        // cells 63 and 64 straddle the origin
        let (x63, _) = g.center(63, 0);
        let (x64, _) = g.center(64, 0);
        assert!((x63 + 0.4).abs() < 1e-9 && (x64 - 0.4).abs() < 1e-9);
        assert_eq!(g.locate(0.0, 0.0), Some(64 * 128 + 64));
        assert_eq!(g.locate(51.2, 0.0), None);
        assert_eq!(g.locate(-51.2, -51.2), Some(0));
    }

    #[test]
    fn grid_validation() {
        assert!(BevGridSpec::new(1.0, 1.0, 0.0, 1.0, 1, 1).is_err());
        assert!(BevGridSpec::new(0.0, 1.0, 0.0, 1.0, 0, 1).is_err());
    }
}
