//! End-to-end view transformation: both streams, fusion, BEV probability and
//! the final gated feature, with the ablation switches used for comparisons.

use serde::{Deserialize, Serialize};

use crate::dff::{assemble_final, bev_probability, blend, caf_affinity, CafConfig, ProbNetConfig};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geometry::{BevGridSpec, CameraRig, HeightSet};
use crate::heighttrans::{ht_transform_fast, ht_transform_naive, precompute_ht_table, HtLookupTable, SamplerMode};
use crate::nnops::WeightBundle;
use crate::problss::{lss_pool, precompute_lss_table, LssPoolTable, WeightMode};
use crate::sampling::{DepthBinSpec, StreamInputs};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HtPath {
    /// Lookup-table scatter-sum (always rounding).
    #[default]
    Fast,
    /// On-the-fly projection with the configured sampler.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Replace every depth distribution with a uniform one.
    pub uniform_depth: bool,
    /// Replace every instance mask with ones.
    pub disable_mask: bool,
    /// Use this constant affinity instead of the predicted one.
    pub force_affinity: Option<f32>,
    /// Use this constant BEV probability instead of the predicted one.
    pub force_prob: Option<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    pub ht_path: HtPath,
    /// Sampler for the naive height path; the fast path always rounds.
    pub sampler: SamplerMode,
    pub weight_mode: WeightMode,
    pub ablation: Ablation,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            ht_path: HtPath::Fast,
            sampler: SamplerMode::Round,
            weight_mode: WeightMode::DepthMask,
            ablation: Ablation::default(),
        }
    }
}

impl PipelineOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("force_affinity", self.ablation.force_affinity),
            ("force_prob", self.ablation.force_prob),
        ] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
                }
            }
        }
        if self.ht_path == HtPath::Fast && self.sampler == SamplerMode::Interp {
            return Err(Error::Config(
                "the lookup-table path only supports the round sampler; use the naive path for interp".into(),
            ));
        }
        Ok(())
    }
}

/// Static geometry plus precomputed tables for one camera setup.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub rigs: Vec<CameraRig>,
    pub grid: BevGridSpec,
    pub heights: HeightSet,
    pub depth_bins: DepthBinSpec,
}

#[derive(Debug, Clone)]
pub struct Tables {
    pub ht: HtLookupTable,
    pub lss: LssPoolTable,
}

impl Geometry {
    pub fn precompute(&self) -> Result<Tables> {
        Ok(Tables {
            ht: precompute_ht_table(&self.rigs, &self.grid, &self.heights, &self.depth_bins)?,
            lss: precompute_lss_table(&self.rigs, &self.grid, &self.depth_bins)?,
        })
    }

    /// Checks that `tables` were built for this geometry.
    pub fn check_tables(&self, tables: &Tables) -> Result<()> {
        let ht = tables.ht.table().geometry();
        let lss = tables.lss.table().geometry();
        let (fh, fw) = crate::geometry::common_feature_extent(&self.rigs)?;
        let want = (self.rigs.len(), self.grid.ny(), self.grid.nx(), self.depth_bins.n_bins(), fh, fw);
        for (name, g) in [("height", ht), ("frustum", lss)] {
            let got = (g.n_cams, g.ny, g.nx, g.n_bins, g.feat_h, g.feat_w);
            if got != want {
                return Err(Error::ShapeMismatch(format!(
                    "{name} table geometry {got:?} does not match {want:?}"
                )));
            }
        }
        if ht.n_heights != self.heights.len() {
            return Err(Error::ShapeMismatch(format!(
                "height table built for {} heights, configured {}",
                ht.n_heights,
                self.heights.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FusionModel {
    pub caf: CafConfig,
    pub prob: ProbNetConfig,
    pub weights: WeightBundle,
}

/// All intermediate planes of one run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub f_lss: Tensor,
    pub f_ht: Tensor,
    pub f_channel: Tensor,
    pub affinity: Tensor,
    pub prob: Tensor,
    pub fused: Tensor,
}

impl PipelineOutput {
    /// `(file stem, tensor)` pairs in a fixed order.
    pub fn named(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("f_lss", &self.f_lss),
            ("f_ht", &self.f_ht),
            ("f_channel", &self.f_channel),
            ("affinity", &self.affinity),
            ("prob", &self.prob),
            ("f", &self.fused),
        ]
    }

    pub fn bit_eq(&self, other: &PipelineOutput) -> bool {
        self.named()
            .iter()
            .zip(other.named().iter())
            .all(|((_, a), (_, b))| a.bit_eq(b))
    }
}

/// Applies the input-side ablations.
pub fn ablate_inputs(inputs: &StreamInputs, ablation: &Ablation) -> Result<StreamInputs> {
    let mut out = inputs.clone();
    if ablation.uniform_depth {
        out = out.with_uniform_depth()?;
    }
    if ablation.disable_mask {
        out = out.with_unit_mask()?;
    }
    Ok(out)
}

pub fn run_pipeline(
    inputs: &StreamInputs,
    geometry: &Geometry,
    tables: &Tables,
    model: &FusionModel,
    options: &PipelineOptions,
    exec: &Executor,
) -> Result<PipelineOutput> {
    options.validate()?;
    let inputs = ablate_inputs(inputs, &options.ablation)?;
    let f_ht = match options.ht_path {
        HtPath::Fast => ht_transform_fast(&inputs, &tables.ht, exec)?,
        HtPath::Naive => ht_transform_naive(
            &inputs,
            &geometry.rigs,
            &geometry.grid,
            &geometry.heights,
            &geometry.depth_bins,
            options.sampler,
            exec,
        )?,
    };
    let f_lss = lss_pool(&inputs, &tables.lss, options.weight_mode, exec)?;
    let affinity = match options.ablation.force_affinity {
        Some(a) => Tensor::full(f_lss.shape(), a)?,
        None => caf_affinity(&f_lss, &f_ht, &model.weights, &model.caf, exec)?,
    };
    let f_channel = blend(&f_lss, &f_ht, &affinity)?;
    let prob = match options.ablation.force_prob {
        Some(p) => Tensor::full(&[1, geometry.grid.ny(), geometry.grid.nx()], p)?,
        None => bev_probability(&f_channel, &model.weights, &model.prob, exec)?,
    };
    let fused = assemble_final(&f_channel, &prob)?;
    Ok(PipelineOutput {
        f_lss,
        f_ht,
        f_channel,
        affinity,
        prob,
        fused,
    })
}

/// Per-cell L2 norm over channels of a `[C, ny, nx]` tensor, as `[1, ny, nx]`.
pub fn cell_energy(f: &Tensor) -> Result<Tensor> {
    let [c, h, w] = *f.shape() else {
        return Err(Error::ShapeMismatch(format!("expected [C, H, W], got {:?}", f.shape())));
    };
    let plane = h * w;
    let d = f.data();
    let e = (0..plane)
        .map(|p| {
            (0..c)
                .map(|ch| {
                    let v = d[ch * plane + p] as f64;
                    v * v
                })
                .sum::<f64>()
                .sqrt() as f32
        })
        .collect();
    Tensor::new(vec![1, h, w], e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyStats {
    pub occupied_cells: usize,
    pub empty_cells: usize,
    pub mean_occupied: f64,
    pub mean_empty: f64,
    /// `mean_occupied − mean_empty`.
    pub separation: f64,
}

/// Mean per-cell feature energy over ground-truth occupied and empty cells.
pub fn energy_stats(f: &Tensor, gt_bev: &Tensor) -> Result<EnergyStats> {
    let e = cell_energy(f)?;
    if gt_bev.shape() != e.shape() {
        return Err(Error::ShapeMismatch(format!(
            "ground truth {:?} does not match features {:?}",
            gt_bev.shape(),
            f.shape()
        )));
    }
    let (mut so, mut no, mut se, mut ne) = (0.0f64, 0usize, 0.0f64, 0usize);
    for (&v, &g) in e.data().iter().zip(gt_bev.data()) {
        if g > 0.5 {
            so += v as f64;
            no += 1;
        } else {
            se += v as f64;
            ne += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let (mo, me) = (mean(so, no), mean(se, ne));
    Ok(EnergyStats {
        occupied_cells: no,
        empty_cells: ne,
        mean_occupied: mo,
        mean_empty: me,
        separation: mo - me,
    })
}
