//! Bilinear and trilinear samplers over feature and depth maps, plus the
//! validated per-camera input bundle consumed by both view transforms.
//!
//! Coordinates are unnormalized feature pixels with centers at integers.
//! Everything outside the map reads as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tolerance for treating a depth column as a normalized distribution.
pub const DEPTH_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DepthBinJson", into = "DepthBinJson")]
pub struct DepthBinSpec {
    d_min: f64,
    d_max: f64,
    step: f64,
    n_bins: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct DepthBinJson {
    d_min: f64,
    d_max: f64,
    step: f64,
}

impl TryFrom<DepthBinJson> for DepthBinSpec {
    type Error = Error;
    fn try_from(j: DepthBinJson) -> Result<Self> {
        DepthBinSpec::new(j.d_min, j.d_max, j.step)
    }
}

impl From<DepthBinSpec> for DepthBinJson {
    fn from(s: DepthBinSpec) -> Self {
        DepthBinJson {
            d_min: s.d_min,
            d_max: s.d_max,
            step: s.step,
        }
    }
}

impl Default for DepthBinSpec {
    /// 2 m to 58 m in 0.5 m bins (112 bins).
    fn default() -> Self {
        Self::new(2.0, 58.0, 0.5).expect("default depth bins are valid")
    }
}

impl DepthBinSpec {
    pub fn new(d_min: f64, d_max: f64, step: f64) -> Result<Self> {
        if !(d_min.is_finite() && d_max.is_finite() && step.is_finite()) {
            return Err(Error::InvalidDepthBins("non-finite value".into()));
        }
        if step <= 0.0 || d_max <= d_min {
            return Err(Error::InvalidDepthBins(format!(
                "need step > 0 and d_max > d_min, got [{d_min}, {d_max}] step {step}"
            )));
        }
        let n = (d_max - d_min) / step;
        let n_bins = n.round();
        if (n - n_bins).abs() > 1e-6 || n_bins < 1.0 {
            return Err(Error::InvalidDepthBins(format!(
                "range {} is not a whole number of {step} m bins",
                d_max - d_min
            )));
        }
        Ok(Self {
            d_min,
            d_max,
            step,
            n_bins: n_bins as usize,
        })
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.d_min + (k as f64 + 0.5) * self.step
    }
}

/// Continuous bin coordinate of depth `d`; bin centers sit at integers.
pub fn depth_to_coord(d: f64, spec: &DepthBinSpec) -> f64 {
    (d - spec.d_min) / spec.step - 0.5
}

/// The up-to-four taps of a bilinear read at `(u, v)` on an `h × w` plane,
/// as `(flat index, weight)`. Taps that fall outside the plane are omitted.
pub(crate) fn bilinear_taps(h: usize, w: usize, u: f64, v: f64) -> ([(usize, f64); 4], usize) {
    let mut taps = [(0usize, 0.0f64); 4];
    let mut n = 0;
    if !(u > -1.0 && u < w as f64 && v > -1.0 && v < h as f64) {
        return (taps, 0);
    }
    let u0 = u.floor();
    let v0 = v.floor();
    let fu = u - u0;
    let fv = v - v0;
    let (u0, v0) = (u0 as i64, v0 as i64);
    for (dv, wv) in [(0, 1.0 - fv), (1, fv)] {
        let y = v0 + dv;
        if y < 0 || y >= h as i64 || wv == 0.0 {
            continue;
        }
        for (du, wu) in [(0, 1.0 - fu), (1, fu)] {
            let x = u0 + du;
            if x < 0 || x >= w as i64 || wu == 0.0 {
                continue;
            }
            taps[n] = (y as usize * w + x as usize, wv * wu);
            n += 1;
        }
    }
    (taps, n)
}

fn chw(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::ShapeMismatch(format!(
            "expected a [C, H, W] tensor, got {:?}",
            t.shape()
        ))),
    }
}

/// Bilinear read of every channel of `feat` (`[C, H, W]`) at `(u, v)`.
pub fn bilinear_sample_2d(feat: &Tensor, u: f64, v: f64) -> Result<Vec<f32>> {
    let (c, h, w) = chw(feat)?;
    let (taps, n) = bilinear_taps(h, w, u, v);
    let plane = h * w;
    let data = feat.data();
    Ok((0..c)
        .map(|ch| {
            let base = ch * plane;
            taps[..n]
                .iter()
                .map(|&(i, wt)| wt * data[base + i] as f64)
                .sum::<f64>() as f32
        })
        .collect())
}

/// Bilinear read of one `h × w` plane in 64-bit.
pub(crate) fn sample_plane(plane: &[f32], h: usize, w: usize, u: f64, v: f64) -> f64 {
    let (taps, n) = bilinear_taps(h, w, u, v);
    taps[..n].iter().map(|&(i, wt)| wt * plane[i] as f64).sum()
}

/// Trilinear read of a `[C_D, H, W]` depth volume: bilinear in the image plane,
/// linear along the bin axis, zero outside the bin range.
pub(crate) fn sample_volume(
    volume: &[f32],
    n_bins: usize,
    h: usize,
    w: usize,
    u: f64,
    v: f64,
    coord: f64,
) -> f64 {
    if !(coord > -1.0 && coord < n_bins as f64) {
        return 0.0;
    }
    let k0 = coord.floor();
    let t = coord - k0;
    let k0 = k0 as i64;
    let plane = h * w;
    let mut acc = 0.0;
    for (dk, wk) in [(0, 1.0 - t), (1, t)] {
        let k = k0 + dk;
        if k < 0 || k >= n_bins as i64 || wk == 0.0 {
            continue;
        }
        let k = k as usize;
        acc += wk * sample_plane(&volume[k * plane..(k + 1) * plane], h, w, u, v);
    }
    acc
}

pub fn trilinear_sample_3d(
    depth: &Tensor,
    u: f64,
    v: f64,
    d: f64,
    spec: &DepthBinSpec,
) -> Result<f32> {
    let (c, h, w) = chw(depth)?;
    if c != spec.n_bins() {
        return Err(Error::ShapeMismatch(format!(
            "depth map has {c} bins, spec has {}",
            spec.n_bins()
        )));
    }
    Ok(sample_volume(depth.data(), c, h, w, u, v, depth_to_coord(d, spec)) as f32)
}

/// Image features `I`, depth distributions `D` and instance masks `M` for all
/// cameras, stacked along a leading camera axis:
/// `I: [N, C, H, W]`, `D: [N, C_D, H, W]`, `M: [N, 1, H, W]`.
#[derive(Debug, Clone)]
pub struct StreamInputs {
    features: Tensor,
    depth: Tensor,
    mask: Tensor,
    depth_normalized: bool,
}

impl StreamInputs {
    pub fn new(features: Tensor, depth: Tensor, mask: Tensor) -> Result<Self> {
        let (n, _, h, w) = match *features.shape() {
            [n, c, h, w] => (n, c, h, w),
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "features must be [N, C, H, W], got {:?}",
                    features.shape()
                )))
            }
        };
        match *depth.shape() {
            [dn, _, dh, dw] if dn == n && dh == h && dw == w => {}
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "depth {:?} does not match features {:?}",
                    depth.shape(),
                    features.shape()
                )))
            }
        }
        if mask.shape() != [n, 1, h, w] {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} does not match features {:?}",
                mask.shape(),
                features.shape()
            )));
        }
        if let Some(i) = depth.data().iter().position(|&x| x < 0.0) {
            return Err(Error::ShapeMismatch(format!(
                "depth value at flat index {i} is negative"
            )));
        }
        if let Some(i) = mask.data().iter().position(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::ShapeMismatch(format!(
                "mask value at flat index {i} is outside [0, 1]"
            )));
        }
        let depth_normalized = column_sum_error(&depth) <= DEPTH_NORM_TOL;
        Ok(Self {
            features,
            depth,
            mask,
            depth_normalized,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn depth(&self) -> &Tensor {
        &self.depth
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    /// False when some depth column does not sum to one. Such input is still
    /// processed.
    pub fn depth_normalized(&self) -> bool {
        self.depth_normalized
    }

    pub fn num_cameras(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn depth_bins(&self) -> usize {
        self.depth.shape()[1]
    }

    pub fn feat_h(&self) -> usize {
        self.features.shape()[2]
    }

    pub fn feat_w(&self) -> usize {
        self.features.shape()[3]
    }

    /// Features reordered to `[N, H·W, C]` so one pixel's channels are contiguous.
    pub fn pixel_major_features(&self) -> Vec<f32> {
        let (n, c) = (self.num_cameras(), self.channels());
        let hw = self.feat_h() * self.feat_w();
        let src = self.features.data();
        let mut out = vec![0.0f32; src.len()];
        for cam in 0..n {
            let s = &src[cam * c * hw..(cam + 1) * c * hw];
            let o = &mut out[cam * c * hw..(cam + 1) * c * hw];
            for ch in 0..c {
                for p in 0..hw {
                    o[p * c + ch] = s[ch * hw + p];
                }
            }
        }
        out
    }

    pub fn with_uniform_depth(&self) -> Result<Self> {
        let v = 1.0 / self.depth_bins() as f32;
        let depth = Tensor::full(self.depth.shape(), v)?;
        Self::new(self.features.clone(), depth, self.mask.clone())
    }

    pub fn with_unit_mask(&self) -> Result<Self> {
        let mask = Tensor::full(self.mask.shape(), 1.0)?;
        Self::new(self.features.clone(), self.depth.clone(), mask)
    }
}

/// Largest `|Σ_k D[k] − 1|` over all pixel columns of a `[N, C_D, H, W]` tensor.
pub fn column_sum_error(depth: &Tensor) -> f64 {
    let s = depth.shape();
    let (n, cd, hw) = (s[0], s[1], s[2..].iter().product::<usize>());
    let data = depth.data();
    let mut worst = 0.0f64;
    for cam in 0..n {
        let vol = &data[cam * cd * hw..(cam + 1) * cd * hw];
        for p in 0..hw {
            let sum: f64 = (0..cd).map(|k| vol[k * hw + p] as f64).sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn spec() -> DepthBinSpec {
        DepthBinSpec::new(2.0, 58.0, 0.5).unwrap()
    }

    #[test]
    fn default_bins() {
        assert_eq!(DepthBinSpec::default().n_bins(), 112);
        assert!(DepthBinSpec::new(2.0, 3.3, 0.5).is_err());
        assert!(DepthBinSpec::new(2.0, 3.0, 0.0).is_err());
    }

    #[test]
    fn depth_coordinates() {
        assert_eq!(depth_to_coord(2.25, &spec()), 0.0);
        assert_eq!(depth_to_coord(2.0, &spec()), -0.5);
        assert_eq!(depth_to_coord(4.25, &spec()), 4.0);
    }

    #[test]
    fn constant_field_interpolates_to_constant() {
        let f = Tensor::full(&[3, 5, 7], 2.5).unwrap();
        for (u, v) in [(0.0, 0.0), (3.3, 2.7), (6.0, 4.0), (0.5, 3.9)] {
            assert!(bilinear_sample_2d(&f, u, v)
                .unwrap()
                .iter()
                .all(|&x| (x - 2.5).abs() < 1e-6));
        }
    }

    #[test]
    fn midpoint_average() {
        let f = Tensor::new(vec![1, 1, 2], vec![1.0, 4.0]).unwrap();
        assert_eq!(bilinear_sample_2d(&f, 0.5, 0.0).unwrap(), vec![2.5]);
    }

    #[test]
    fn out_of_range_is_zero() {
        let f = Tensor::full(&[2, 3, 3], 1.0).unwrap();
        assert_eq!(bilinear_sample_2d(&f, -10.0, 0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(bilinear_sample_2d(&f, -1.0, 1.0).unwrap(), vec![0.0, 0.0]);
        // half a pixel past the border picks up half the edge value
        assert_eq!(bilinear_sample_2d(&f, -0.5, 1.0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(bilinear_sample_2d(&f, 2.5, 2.5).unwrap(), vec![0.25, 0.25]);
    }

    #[test]
    fn integer_coordinates_index_exactly() {
        let f = Rng::new(4).uniform(&[3, 4, 5], -3.0, 3.0).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..5 {
                    let s = bilinear_sample_2d(&f, x as f64, y as f64).unwrap();
                    assert_eq!(s[c].to_bits(), f.data()[c * 20 + y * 5 + x].to_bits());
                }
            }
        }
    }

    fn one_hot(k: usize, cd: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[cd, h, w], |i| if i / (h * w) == k { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn trilinear_one_hot_hit_and_miss() {
        let s = spec();
        let d = one_hot(15, s.n_bins(), 4, 6);
        let hit = trilinear_sample_3d(&d, 2.0, 1.0, s.bin_center(15), &s).unwrap();
        assert_eq!(hit, 1.0);
        for k in [13, 17] {
            let miss = trilinear_sample_3d(&d, 2.0, 1.0, s.bin_center(k), &s).unwrap();
            assert_eq!(miss, 0.0);
        }
        let between = trilinear_sample_3d(&d, 2.0, 1.0, s.bin_center(15) + 0.25 * s.step(), &s)
            .unwrap();
        assert!((between - 0.75).abs() < 1e-6);
    }

    #[test]
    fn trilinear_uniform_field() {
        let s = spec();
        let d = Tensor::full(&[s.n_bins(), 4, 6], 1.0 / 112.0).unwrap();
        for (u, v, z) in [(0.0, 0.0, 10.0), (3.3, 2.1, 30.7), (5.0, 3.0, 57.0)] {
            let x = trilinear_sample_3d(&d, u, v, z, &s).unwrap();
            assert!((x - 1.0 / 112.0).abs() < 1e-7);
        }
        assert_eq!(trilinear_sample_3d(&d, 1.0, 1.0, 1.0, &s).unwrap(), 0.0);
        assert_eq!(trilinear_sample_3d(&d, 1.0, 1.0, 60.0, &s).unwrap(), 0.0);
    }

    #[test]
    fn stream_inputs_validation() {
        let i = Tensor::zeros(&[2, 3, 4, 5]).unwrap();
        let d = Tensor::full(&[2, 7, 4, 5], 1.0 / 7.0).unwrap();
        let m = Tensor::full(&[2, 1, 4, 5], 0.5).unwrap();
        let s = StreamInputs::new(i.clone(), d.clone(), m.clone()).unwrap();
        assert!(s.depth_normalized());
        let bad_m = Tensor::full(&[2, 1, 4, 5], 1.5).unwrap();
        assert!(StreamInputs::new(i.clone(), d.clone(), bad_m).is_err());
        let bad_d = Tensor::zeros(&[2, 7, 4, 4]).unwrap();
        assert!(StreamInputs::new(i.clone(), bad_d, m.clone()).is_err());
        let unnorm = Tensor::full(&[2, 7, 4, 5], 1.0).unwrap();
        assert!(!StreamInputs::new(i, unnorm, m).unwrap().depth_normalized());
    }

    #[test]
    fn pixel_major_transpose() {
        let i = Tensor::from_fn(&[1, 2, 1, 3], |k| k as f32).unwrap();
        let s = StreamInputs::new(
            i,
            Tensor::full(&[1, 1, 1, 3], 1.0).unwrap(),
            Tensor::full(&[1, 1, 1, 3], 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(s.pixel_major_features(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    proptest! {
        #[test]
        fn samplers_are_linear(seed in 0u64..1000, u in -1.5f64..6.5, v in -1.5f64..4.5,
                               d in 1.0f64..8.0, a in -2.0f32..2.0, b in -2.0f32..2.0) {
            let s = DepthBinSpec::new(2.0, 6.0, 0.5).unwrap();
            let mut rng = Rng::new(seed);
            let x = rng.uniform(&[s.n_bins(), 4, 6], 0.0, 1.0).unwrap();
            let y = rng.uniform(&[s.n_bins(), 4, 6], 0.0, 1.0).unwrap();
            let mix = Tensor::new(x.shape().to_vec(),
                x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = bilinear_sample_2d(&mix, u, v).unwrap();
            let sx = bilinear_sample_2d(&x, u, v).unwrap();
            let sy = bilinear_sample_2d(&y, u, v).unwrap();
            for c in 0..lhs.len() {
                prop_assert!((lhs[c] - (a * sx[c] + b * sy[c])).abs() < 1e-5);
            }
            let lhs = trilinear_sample_3d(&mix, u, v, d, &s).unwrap();
            let rhs = a * trilinear_sample_3d(&x, u, v, d, &s).unwrap()
                + b * trilinear_sample_3d(&y, u, v, d, &s).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-5);
        }

        #[test]
        fn trilinear_monotone_under_domination(seed in 0u64..1000, u in -1.5f64..6.5,
                                                v in -1.5f64..4.5, d in 1.0f64..8.0) {
            let s = DepthBinSpec::new(2.0, 6.0, 0.5).unwrap();
            let mut rng = Rng::new(seed);
            let lo = rng.uniform(&[s.n_bins(), 4, 6], 0.0, 1.0).unwrap();
            let extra = rng.uniform(&[s.n_bins(), 4, 6], 0.0, 1.0).unwrap();
            let hi = Tensor::new(lo.shape().to_vec(),
                lo.data().iter().zip(extra.data()).map(|(p, q)| p + q).collect()).unwrap();
            prop_assert!(trilinear_sample_3d(&hi, u, v, d, &s).unwrap()
                >= trilinear_sample_3d(&lo, u, v, d, &s).unwrap());
        }
    }
}
