//! Forward-only convolution, pooling and activations, plus named weight
//! bundles with seeded initialization and a directory file format.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::btsr;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Largest `f32` strictly below one.
pub const SIGMOID_MAX: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dWeights {
    kernel: Tensor,
    bias: Tensor,
}

impl Conv2dWeights {
    pub fn new(kernel: Tensor, bias: Tensor) -> Result<Self> {
        let [co, _, kh, kw] = *kernel.shape() else {
            return Err(Error::ShapeMismatch(format!(
                "kernel must be [C_out, C_in, kh, kw], got {:?}",
                kernel.shape()
            )));
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::ShapeMismatch(format!("kernel extent {kh}x{kw} must be odd")));
        }
        if bias.shape() != [co] {
            return Err(Error::ShapeMismatch(format!(
                "bias shape {:?} does not match {co} output channels",
                bias.shape()
            )));
        }
        Ok(Self { kernel, bias })
    }

    /// Uniform in `±1/sqrt(C_in·kh·kw)` for both kernel and bias.
    pub fn seeded(rng: &mut Rng, c_out: usize, c_in: usize, kh: usize, kw: usize) -> Result<Self> {
        let bound = 1.0 / ((c_in * kh * kw) as f32).sqrt();
        let kernel = rng.uniform(&[c_out, c_in, kh, kw], -bound, bound)?;
        let bias = rng.uniform(&[c_out], -bound, bound)?;
        Self::new(kernel, bias)
    }

    pub fn zeros(c_out: usize, c_in: usize, kh: usize, kw: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[c_out, c_in, kh, kw])?, Tensor::zeros(&[c_out])?)
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn with_bias(&self, bias: Tensor) -> Result<Self> {
        Self::new(self.kernel.clone(), bias)
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel.shape()[2], self.kernel.shape()[3])
    }
}

fn chw(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::ShapeMismatch(format!("expected [C, H, W], got {:?}", x.shape()))),
    }
}

/// Stride-1 cross-correlation with zero "same" padding.
pub fn conv2d(x: &Tensor, w: &Conv2dWeights, exec: &Executor) -> Result<Tensor> {
    let (ci, h, wd) = chw(x)?;
    if ci != w.c_in() {
        return Err(Error::ShapeMismatch(format!(
            "input has {ci} channels, kernel expects {}",
            w.c_in()
        )));
    }
    let co = w.c_out();
    let (kh, kw) = w.kernel_size();
    let (ph, pw) = (kh / 2, kw / 2);
    let plane = h * wd;
    let input = x.data();
    let kernel = w.kernel().data();
    let bias = w.bias().data();

    let mut out = vec![0.0f32; co * plane];
    exec.for_each_chunk(&mut out, plane, |o, dst| {
        dst.fill(bias[o]);
        for c in 0..ci {
            let src = &input[c * plane..(c + 1) * plane];
            for ky in 0..kh {
                // output rows whose tap row y + ky - ph lies inside the input
                let y_lo = ph.saturating_sub(ky);
                let y_hi = (h + ph).saturating_sub(ky).min(h);
                for kx in 0..kw {
                    let wv = kernel[((o * ci + c) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let x_lo = pw.saturating_sub(kx);
                    let x_hi = (wd + pw).saturating_sub(kx).min(wd);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let sy = y + ky - ph;
                        let drow = &mut dst[y * wd + x_lo..y * wd + x_hi];
                        let srow = &src[sy * wd + x_lo + kx - pw..sy * wd + x_hi + kx - pw];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![co, h, wd], out)
}

/// Per-position mean (plane 0) and max (plane 1) across channels.
pub fn channel_stats(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(x)?;
    let plane = h * w;
    let d = x.data();
    let mut out = vec![0.0f32; 2 * plane];
    for p in 0..plane {
        let mut sum = 0.0f64;
        let mut max = f32::NEG_INFINITY;
        for ch in 0..c {
            let v = d[ch * plane + p];
            sum += v as f64;
            max = max.max(v);
        }
        out[p] = (sum / c as f64) as f32;
        out[plane + p] = max;
    }
    Tensor::new(vec![2, h, w], out)
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(x)?;
    let plane = h * w;
    let out = x
        .data()
        .chunks_exact(plane)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
        .collect();
    Tensor::new(vec![c, 1, 1], out)
}

/// Logistic function, kept inside the open interval (0, 1).
pub fn sigmoid_scalar(x: f32) -> f32 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-(x as f64)).exp())
    } else {
        let e = (x as f64).exp();
        e / (1.0 + e)
    };
    (s as f32).clamp(f32::MIN_POSITIVE, SIGMOID_MAX)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    Tensor::from_parts_unchecked(x.shape().to_vec(), x.data().iter().map(|&v| sigmoid_scalar(v)).collect())
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_parts_unchecked(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect())
}

/// Elementwise `a + b`; `b` may be `[C, 1, 1]` and is then broadcast over space.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(a)?;
    let plane = h * w;
    if b.shape() == a.shape() {
        return Tensor::new(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
        );
    }
    if b.shape() == [c, 1, 1] {
        let bd = b.data();
        return Tensor::new(
            a.shape().to_vec(),
            a.data().iter().enumerate().map(|(i, x)| x + bd[i / plane]).collect(),
        );
    }
    Err(Error::ShapeMismatch(format!(
        "cannot add {:?} to {:?}",
        b.shape(),
        a.shape()
    )))
}

/// Elementwise `a · b` with the same broadcasting rule as [`add`].
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(a)?;
    let plane = h * w;
    if b.shape() == a.shape() {
        return Tensor::new(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
        );
    }
    if b.shape() == [c, 1, 1] {
        let bd = b.data();
        return Tensor::new(
            a.shape().to_vec(),
            a.data().iter().enumerate().map(|(i, x)| x * bd[i / plane]).collect(),
        );
    }
    Err(Error::ShapeMismatch(format!(
        "cannot multiply {:?} by {:?}",
        a.shape(),
        b.shape()
    )))
}

/// Concatenates `[C_a, H, W]` and `[C_b, H, W]` along channels.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, h, w) = chw(a)?;
    let (cb, hb, wb) = chw(b)?;
    if (h, w) != (hb, wb) {
        return Err(Error::ShapeMismatch(format!(
            "cannot concatenate {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![ca + cb, h, w], data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seeded(u64),
    LoadedFromFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    layers: BTreeMap<String, Conv2dWeights>,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    kernel: String,
    bias: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    provenance: Provenance,
    layers: BTreeMap<String, ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "weights.json";

impl WeightBundle {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            layers: BTreeMap::new(),
            provenance,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, w: Conv2dWeights) {
        self.layers.insert(name.into(), w);
    }

    pub fn get(&self, name: &str) -> Result<&Conv2dWeights> {
        self.layers
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    /// Looks up `name` and checks its geometry.
    pub fn expect(&self, name: &str, c_out: usize, c_in: usize, k: usize) -> Result<&Conv2dWeights> {
        let w = self.get(name)?;
        if (w.c_out(), w.c_in(), w.kernel_size()) != (c_out, c_in, (k, k)) {
            return Err(Error::ShapeMismatch(format!(
                "weight {name:?} is {:?}, expected [{c_out}, {c_in}, {k}, {k}]",
                w.kernel().shape()
            )));
        }
        Ok(w)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Writes a JSON manifest plus one BTSR file per kernel and bias.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut layers = BTreeMap::new();
        for (name, w) in &self.layers {
            let entry = ManifestEntry {
                kernel: format!("{name}.kernel.btsr"),
                bias: format!("{name}.bias.btsr"),
            };
            btsr::write(w.kernel(), dir.join(&entry.kernel))?;
            btsr::write(w.bias(), dir.join(&entry.bias))?;
            layers.insert(name.clone(), entry);
        }
        let manifest = Manifest {
            provenance: self.provenance.clone(),
            layers,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let mut bundle = WeightBundle::new(Provenance::LoadedFromFile(dir.to_path_buf()));
        for (name, entry) in manifest.layers {
            let w = Conv2dWeights::new(btsr::read(dir.join(&entry.kernel))?, btsr::read(dir.join(&entry.bias))?)?;
            bundle.insert(name, w);
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn seq() -> Executor {
        Executor::sequential()
    }

    #[test]
    fn identity_1x1() {
        let x = Rng::new(1).uniform(&[3, 4, 5], -1.0, 1.0).unwrap();
        let mut k = vec![0.0; 9];
        for c in 0..3 {
            k[c * 3 + c] = 1.0;
        }
        let w = Conv2dWeights::new(Tensor::new(vec![3, 3, 1, 1], k).unwrap(), Tensor::zeros(&[3]).unwrap()).unwrap();
        assert_eq!(conv2d(&x, &w, &seq()).unwrap(), x);
    }

    #[test]
    fn zero_kernel_gives_bias_planes() {
        let x = Rng::new(2).uniform(&[2, 3, 3], -1.0, 1.0).unwrap();
        let w = Conv2dWeights::new(
            Tensor::zeros(&[2, 2, 3, 3]).unwrap(),
            Tensor::new(vec![2], vec![0.5, -1.5]).unwrap(),
        )
        .unwrap();
        let y = conv2d(&x, &w, &seq()).unwrap();
        assert!(y.data()[..9].iter().all(|&v| v == 0.5));
        assert!(y.data()[9..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn box_filter_border_values() {
        // 3x3 constant input c = 9 under a 3x3 box of 1/9: each output is the
        // number of in-bounds neighbours (center 9, edge 6, corner 4).
        let x = Tensor::full(&[1, 3, 3], 9.0).unwrap();
        let w = Conv2dWeights::new(Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0).unwrap(), Tensor::zeros(&[1]).unwrap())
            .unwrap();
        let y = conv2d(&x, &w, &seq()).unwrap();
        let want = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = Rng::new(5);
        let x = rng.uniform(&[3, 6, 7], -1.0, 1.0).unwrap();
        let w = Conv2dWeights::seeded(&mut rng, 4, 3, 5, 3).unwrap();
        let y = conv2d(&x, &w, &Executor::with_threads(3).unwrap()).unwrap();
        let (h, wd) = (6i64, 7i64);
        for o in 0..4 {
            for yy in 0..h {
                for xx in 0..wd {
                    let mut s = w.bias().data()[o] as f64;
                    for c in 0..3 {
                        for ky in 0..5i64 {
                            for kx in 0..3i64 {
                                let (sy, sx) = (yy + ky - 2, xx + kx - 1);
                                if sy < 0 || sy >= h || sx < 0 || sx >= wd {
                                    continue;
                                }
                                let kv = w.kernel().data()[((o * 3 + c) * 5 + ky as usize) * 3 + kx as usize];
                                s += kv as f64 * x.data()[c * 42 + (sy * wd + sx) as usize] as f64;
                            }
                        }
                    }
                    let got = y.data()[o * 42 + (yy * wd + xx) as usize];
                    assert!((got as f64 - s).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn even_kernels_and_channel_mismatch_rejected() {
        assert!(Conv2dWeights::zeros(1, 1, 2, 3).is_err());
        let w = Conv2dWeights::zeros(1, 2, 1, 1).unwrap();
        assert!(matches!(
            conv2d(&Tensor::zeros(&[3, 2, 2]).unwrap(), &w, &seq()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn channel_stats_cases() {
        let one = Tensor::new(vec![1, 1, 2], vec![3.0, -1.0]).unwrap();
        assert_eq!(channel_stats(&one).unwrap().data(), &[3.0, -1.0, 3.0, -1.0]);
        let two = Tensor::new(vec![2, 1, 2], vec![1.0, -2.0, 3.0, -4.0]).unwrap();
        assert_eq!(channel_stats(&two).unwrap().data(), &[2.0, -3.0, 3.0, -2.0]);
    }

    #[test]
    fn global_pool_cases() {
        assert_eq!(global_avg_pool(&Tensor::full(&[2, 3, 3], 1.5).unwrap()).unwrap().data(), &[1.5, 1.5]);
        let x = Tensor::new(vec![1, 2, 1], vec![0.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.0]);
        let r = Rng::new(8).uniform(&[4, 5, 6], -3.0, 3.0).unwrap();
        let p = global_avg_pool(&r).unwrap();
        for c in 0..4 {
            let direct: f32 = r.data()[c * 30..(c + 1) * 30].iter().sum::<f32>() / 30.0;
            assert!((p.data()[c] - direct).abs() < 1e-6);
        }
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let s = sigmoid_scalar(100.0);
        assert!(s < 1.0 && (1.0 - s) < 1e-6);
        let s = sigmoid_scalar(-100.0);
        assert!(s > 0.0 && s < 1e-6);
        let r = relu(&Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        assert_eq!(r.data(), &[0.0, 2.0]);
    }

    #[test]
    fn bundle_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(3);
        let mut b = WeightBundle::new(Provenance::Seeded(3));
        b.insert("a", Conv2dWeights::seeded(&mut rng, 2, 3, 3, 3).unwrap());
        b.insert("b.c", Conv2dWeights::seeded(&mut rng, 1, 2, 7, 7).unwrap());
        b.save(dir.path()).unwrap();
        let back = WeightBundle::load(dir.path()).unwrap();
        assert_eq!(back.get("a").unwrap(), b.get("a").unwrap());
        assert_eq!(back.get("b.c").unwrap(), b.get("b.c").unwrap());
        assert!(matches!(back.provenance(), Provenance::LoadedFromFile(_)));
        assert!(matches!(back.get("zzz"), Err(Error::MissingWeight(_))));
        assert!(back.expect("a", 2, 3, 1).is_err());
    }

    proptest! {
        #[test]
        fn sigmoid_is_symmetric(x in -50.0f32..50.0) {
            prop_assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-6);
        }

        #[test]
        fn stats_max_dominates_mean(seed in 0u64..500) {
            let x = Rng::new(seed).uniform(&[5, 3, 4], -2.0, 2.0).unwrap();
            let s = channel_stats(&x).unwrap();
            let (mean, max) = s.data().split_at(12);
            prop_assert!(mean.iter().zip(max).all(|(a, b)| b >= a));
        }

        #[test]
        fn conv_is_affine(seed in 0u64..200, a in -2.0f32..2.0, b in -2.0f32..2.0) {
            let mut rng = Rng::new(seed);
            let x = rng.uniform(&[2, 5, 4], -1.0, 1.0).unwrap();
            let y = rng.uniform(&[2, 5, 4], -1.0, 1.0).unwrap();
            let w = Conv2dWeights::seeded(&mut rng, 3, 2, 3, 3).unwrap();
            let mix = Tensor::new(x.shape().to_vec(),
                x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = conv2d(&mix, &w, &seq()).unwrap();
            let cx = conv2d(&x, &w, &seq()).unwrap();
            let cy = conv2d(&y, &w, &seq()).unwrap();
            for (i, l) in lhs.data().iter().enumerate() {
                let bias = w.bias().data()[i / 20];
                let rhs = a * cx.data()[i] + b * cy.data()[i] - (a + b - 1.0) * bias;
                prop_assert!((l - rhs).abs() < 1e-5, "{} vs {}", l, rhs);
            }
        }
    }
}
