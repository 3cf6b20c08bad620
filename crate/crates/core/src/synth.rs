//! Deterministic synthetic scenes.
//!
//! A ring of cameras looks out over axis-aligned boxes. Every feature pixel
//! is ray-cast against the boxes: a hit yields mask 1, a depth distribution
//! concentrated at the hit depth and the box's feature signature plus noise;
//! a miss yields mask 0, a uniform depth distribution and background noise.
//! The ground-truth BEV mask marks cells whose center lies in a box footprint.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::btsr;
use crate::error::{Error, Result};
use crate::geometry::{BevGridSpec, CameraRig};
use crate::rng::Rng;
use crate::sampling::{DepthBinSpec, StreamInputs};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "scene.json";
pub const RIGS_FILE: &str = "rigs.json";
pub const GT_FILE: &str = "gt_bev.btsr";

const SIGNATURE_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxObject {
    /// Box center in the ego frame, meters.
    pub center: [f64; 3],
    /// Extent along x, y, z, meters.
    pub size: [f64; 3],
    /// Unit feature vector of length `channels`; drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<Vec<f32>>,
}

impl BoxObject {
    pub fn new(center: [f64; 3], size: [f64; 3]) -> Self {
        Self {
            center,
            size,
            signature: None,
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.center[a] - self.size[a] / 2.0;
            hi[a] = self.center[a] + self.size[a] / 2.0;
        }
        (lo, hi)
    }

    fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let (lo, hi) = self.bounds();
        x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1]
    }

    /// Entry distance along `origin + t·dir`, if the ray hits the box at `t > 0`.
    fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let (lo, hi) = self.bounds();
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if origin[a] < lo[a] || origin[a] > hi[a] {
                    return None;
                }
                continue;
            }
            let t1 = (lo[a] - origin[a]) / dir[a];
            let t2 = (hi[a] - origin[a]) / dir[a];
            t_near = t_near.max(t1.min(t2));
            t_far = t_far.min(t1.max(t2));
        }
        if t_near > t_far || t_far <= 0.0 {
            return None;
        }
        // origin inside the box counts as an immediate hit
        Some(t_near.max(0.0))
    }
}

fn default_seed() -> u64 {
    0
}
fn default_cameras() -> usize {
    6
}
fn default_feat_w() -> usize {
    44
}
fn default_feat_h() -> usize {
    16
}
fn default_channels() -> usize {
    64
}
fn default_focal() -> f64 {
    30.0
}
fn default_camera_height() -> f64 {
    1.5
}
fn default_kappa() -> f64 {
    4.0
}
fn default_noise() -> f64 {
    0.05
}
fn default_background() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Cameras in a ring with equal yaw steps, camera 0 facing +x.
    #[serde(default = "default_cameras")]
    pub n_cameras: usize,
    #[serde(default = "default_feat_w")]
    pub feat_w: usize,
    #[serde(default = "default_feat_h")]
    pub feat_h: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Focal length in feature pixels.
    #[serde(default = "default_focal")]
    pub focal: f64,
    #[serde(default = "default_camera_height")]
    pub camera_height: f64,
    #[serde(default = "standard_objects")]
    pub objects: Vec<BoxObject>,
    /// Depth sharpness; the triangular depth kernel has half-width `step / kappa`.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Standard deviation of the noise added to box signatures.
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Standard deviation of background features.
    #[serde(default = "default_background")]
    pub background_sigma: f64,
}

/// Three boxes around the ego vehicle: a car ahead, a car behind-left and a
/// truck to the right.
pub fn standard_objects() -> Vec<BoxObject> {
    vec![
        BoxObject::new([12.0, 0.5, 0.8], [4.5, 2.0, 1.6]),
        BoxObject::new([-9.0, 7.0, 0.8], [4.2, 1.9, 1.6]),
        BoxObject::new([6.0, -14.0, 1.5], [8.0, 2.5, 3.0]),
    ]
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            n_cameras: default_cameras(),
            feat_w: default_feat_w(),
            feat_h: default_feat_h(),
            channels: default_channels(),
            focal: default_focal(),
            camera_height: default_camera_height(),
            objects: standard_objects(),
            kappa: default_kappa(),
            noise_sigma: default_noise(),
            background_sigma: default_background(),
        }
    }
}

impl SceneSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn rigs(&self) -> Result<Vec<CameraRig>> {
        if self.n_cameras == 0 {
            return Err(Error::NoCameras);
        }
        let k = [
            [self.focal, 0.0, (self.feat_w as f64 - 1.0) / 2.0],
            [0.0, self.focal, (self.feat_h as f64 - 1.0) / 2.0],
            [0.0, 0.0, 1.0],
        ];
        (0..self.n_cameras)
            .map(|i| {
                let yaw = std::f64::consts::TAU * i as f64 / self.n_cameras as f64;
                CameraRig::looking_at_yaw(
                    i as u32,
                    yaw,
                    [0.0, 0.0, self.camera_height],
                    k,
                    self.feat_w,
                    self.feat_h,
                )
            })
            .collect()
    }

    fn validate(&self, grid: &BevGridSpec) -> Result<()> {
        if self.n_cameras == 0 {
            return Err(Error::NoCameras);
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidScene(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.channels == 0 || self.feat_w == 0 || self.feat_h == 0 {
            return Err(Error::InvalidScene("feature extents must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.background_sigma >= 0.0) {
            return Err(Error::InvalidScene("noise levels must be non-negative".into()));
        }
        let (x0, x1) = grid.x_range();
        let (y0, y1) = grid.y_range();
        for (i, o) in self.objects.iter().enumerate() {
            if o.size.iter().any(|&s| s.is_nan() || s <= 0.0) {
                return Err(Error::InvalidScene(format!("object {i} has a non-positive size")));
            }
            let (lo, hi) = o.bounds();
            if lo[0] < x0 || hi[0] > x1 || lo[1] < y0 || hi[1] > y1 {
                return Err(Error::InvalidScene(format!("object {i} footprint leaves the grid")));
            }
            if let Some(sig) = &o.signature {
                if sig.len() != self.channels {
                    return Err(Error::InvalidScene(format!(
                        "object {i} signature has {} entries, expected {}",
                        sig.len(),
                        self.channels
                    )));
                }
                let norm = sig.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-3 {
                    return Err(Error::InvalidScene(format!("object {i} signature is not unit length")));
                }
            }
        }
        Ok(())
    }

    fn signatures(&self) -> Vec<Vec<f32>> {
        self.objects
            .iter()
            .enumerate()
            .map(|(i, o)| match &o.signature {
                Some(s) => s.clone(),
                None => {
                    let mut rng = Rng::new(Rng::child_seed(self.seed, SIGNATURE_STREAM + i as u64));
                    let v: Vec<f64> = (0..self.channels).map(|_| rng.normal() as f64).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    v.iter().map(|x| (x / n) as f32).collect()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    pub grid: BevGridSpec,
    pub depth_bins: DepthBinSpec,
    pub rigs: Vec<CameraRig>,
    pub inputs: StreamInputs,
    /// `[1, ny, nx]`, 1 where a cell center lies inside a box footprint.
    pub gt_bev: Tensor,
}

/// Mass of a triangular density (center `t`, half-width `h`) in each depth bin,
/// renormalized over the bin range; uniform if none of it lands in range.
pub fn triangular_depth_column(t: f64, h: f64, spec: &DepthBinSpec) -> Vec<f64> {
    let cdf = |x: f64| {
        let a = t - h;
        let b = t + h;
        if x <= a {
            0.0
        } else if x <= t {
            (x - a) * (x - a) / (2.0 * h * h)
        } else if x < b {
            1.0 - (b - x) * (b - x) / (2.0 * h * h)
        } else {
            1.0
        }
    };
    let n = spec.n_bins();
    let mut col: Vec<f64> = (0..n)
        .map(|k| {
            let lo = spec.d_min() + k as f64 * spec.step();
            cdf(lo + spec.step()) - cdf(lo)
        })
        .collect();
    let total: f64 = col.iter().sum();
    if total > 0.0 {
        col.iter_mut().for_each(|v| *v /= total);
    } else {
        col.iter_mut().for_each(|v| *v = 1.0 / n as f64);
    }
    col
}

pub fn footprint_to_bev_mask(objects: &[BoxObject], grid: &BevGridSpec) -> Tensor {
    let data = (0..grid.num_cells())
        .map(|cell| {
            let (x, y) = grid.center_of(cell);
            if objects.iter().any(|o| o.footprint_contains(x, y)) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_parts_unchecked(vec![1, grid.ny(), grid.nx()], data)
}

pub fn generate_scene(spec: &SceneSpec, grid: &BevGridSpec, dspec: &DepthBinSpec) -> Result<SceneBundle> {
    spec.validate(grid)?;
    let rigs = spec.rigs()?;
    let signatures = spec.signatures();
    let (w, h, c, nb) = (spec.feat_w, spec.feat_h, spec.channels, dspec.n_bins());
    let hw = w * h;
    let half_width = dspec.step() / spec.kappa;

    let mut feats = Vec::with_capacity(rigs.len() * c * hw);
    let mut depth = Vec::with_capacity(rigs.len() * nb * hw);
    let mut mask = Vec::with_capacity(rigs.len() * hw);
    for (ci, cam) in rigs.iter().enumerate() {
        let mut rng = Rng::new(Rng::child_seed(spec.seed, ci as u64));
        let origin = cam.center();
        let mut f = vec![0.0f32; c * hw];
        let mut d = vec![0.0f32; nb * hw];
        let mut m = vec![0.0f32; hw];
        for v in 0..h {
            for u in 0..w {
                let pix = v * w + u;
                let ray_cam = cam.ray_direction(u as f64, v as f64);
                let p1 = cam.to_ego(ray_cam);
                let dir = [p1[0] - origin[0], p1[1] - origin[1], p1[2] - origin[2]];
                let hit = spec
                    .objects
                    .iter()
                    .enumerate()
                    .filter_map(|(i, o)| o.intersect(origin, dir).map(|t| (t, i)))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                match hit {
                    Some((t, obj)) => {
                        m[pix] = 1.0;
                        // the ray has unit camera depth per unit t
                        let col = triangular_depth_column(t, half_width, dspec);
                        for (k, p) in col.iter().enumerate() {
                            d[k * hw + pix] = *p as f32;
                        }
                        for (ch, s) in signatures[obj].iter().enumerate() {
                            f[ch * hw + pix] = s + (spec.noise_sigma as f32) * rng.normal();
                        }
                    }
                    None => {
                        for k in 0..nb {
                            d[k * hw + pix] = 1.0 / nb as f32;
                        }
                        for ch in 0..c {
                            f[ch * hw + pix] = (spec.background_sigma as f32) * rng.normal();
                        }
                    }
                }
            }
        }
        feats.extend(f);
        depth.extend(d);
        mask.extend(m);
    }
    let n = rigs.len();
    let inputs = StreamInputs::new(
        Tensor::new(vec![n, c, h, w], feats)?,
        Tensor::new(vec![n, nb, h, w], depth)?,
        Tensor::new(vec![n, 1, h, w], mask)?,
    )?;
    Ok(SceneBundle {
        spec: spec.clone(),
        grid: *grid,
        depth_bins: *dspec,
        rigs,
        inputs,
        gt_bev: footprint_to_bev_mask(&spec.objects, grid),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneManifest {
    spec: SceneSpec,
    grid: BevGridSpec,
    depth_bins: DepthBinSpec,
    rigs: String,
    features: Vec<String>,
    depth: Vec<String>,
    masks: Vec<String>,
    gt_bev: String,
}

pub fn feature_file(cam: usize) -> String {
    format!("feature_{cam}.btsr")
}
pub fn depth_file(cam: usize) -> String {
    format!("depth_{cam}.btsr")
}
pub fn mask_file(cam: usize) -> String {
    format!("mask_{cam}.btsr")
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[derive(Serialize, Deserialize)]
pub(crate) struct RigSet {
    pub cameras: Vec<CameraRig>,
}

pub fn write_rigs(rigs: &[CameraRig], path: impl AsRef<Path>) -> Result<()> {
    write_json(
        &RigSet {
            cameras: rigs.to_vec(),
        },
        path.as_ref(),
    )
}

pub fn read_rigs(path: impl AsRef<Path>) -> Result<Vec<CameraRig>> {
    let set: RigSet = read_json(path.as_ref())?;
    if set.cameras.is_empty() {
        return Err(Error::NoCameras);
    }
    Ok(set.cameras)
}

impl SceneBundle {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let n = self.rigs.len();
        let names = |f: fn(usize) -> String| (0..n).map(f).collect::<Vec<_>>();
        let manifest = SceneManifest {
            spec: self.spec.clone(),
            grid: self.grid,
            depth_bins: self.depth_bins,
            rigs: RIGS_FILE.into(),
            features: names(feature_file),
            depth: names(depth_file),
            masks: names(mask_file),
            gt_bev: GT_FILE.into(),
        };
        write_rigs(&self.rigs, dir.join(RIGS_FILE))?;
        for cam in 0..n {
            btsr::write(&self.inputs.features().outer_tensor(cam)?, dir.join(&manifest.features[cam]))?;
            btsr::write(&self.inputs.depth().outer_tensor(cam)?, dir.join(&manifest.depth[cam]))?;
            btsr::write(&self.inputs.mask().outer_tensor(cam)?, dir.join(&manifest.masks[cam]))?;
        }
        btsr::write(&self.gt_bev, dir.join(GT_FILE))?;
        write_json(&manifest, &dir.join(MANIFEST_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m: SceneManifest = read_json(&dir.join(MANIFEST_FILE))?;
        let rigs = read_rigs(dir.join(&m.rigs))?;
        let n = rigs.len();
        if m.features.len() != n || m.depth.len() != n || m.masks.len() != n {
            return Err(Error::InvalidScene(format!(
                "manifest lists {}/{}/{} feature/depth/mask files for {n} cameras",
                m.features.len(),
                m.depth.len(),
                m.masks.len()
            )));
        }
        let load_all = |files: &[String]| -> Result<Tensor> {
            let parts = files.iter().map(|f| btsr::read(dir.join(f))).collect::<Result<Vec<_>>>()?;
            Tensor::stack(&parts)
        };
        let inputs = StreamInputs::new(load_all(&m.features)?, load_all(&m.depth)?, load_all(&m.masks)?)?;
        let gt_bev = btsr::read(dir.join(&m.gt_bev))?;
        if gt_bev.shape() != [1, m.grid.ny(), m.grid.nx()] {
            return Err(Error::ShapeMismatch(format!(
                "gt_bev {:?} does not match the grid",
                gt_bev.shape()
            )));
        }
        Ok(Self {
            spec: m.spec,
            grid: m.grid,
            depth_bins: m.depth_bins,
            rigs,
            inputs,
            gt_bev,
        })
    }
}
