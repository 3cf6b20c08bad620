//! Command-line front end: `synth | precompute | transform | bench | compare`.
//!
//! Runs are described by an optional JSON [`RunConfig`]; command-line flags
//! override its fields. Relative paths inside a config file resolve against
//! the file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::btsr;
use crate::dff::{seeded_weights, CafConfig, ProbNetConfig};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geometry::{make_height_samples, BevGridSpec, HeightMode};
use crate::heighttrans::{ht_transform_fast, ht_transform_naive, HtLookupTable, SamplerMode};
use crate::nnops::{Provenance, WeightBundle};
use crate::pipeline::{
    energy_stats, run_pipeline, Ablation, EnergyStats, FusionModel, Geometry, HtPath, PipelineOptions, Tables,
};
use crate::problss::{lss_pool, LssPoolTable, WeightMode};
use crate::sampling::DepthBinSpec;
use crate::synth::{self, generate_scene, SceneBundle, SceneSpec};
use crate::tensor::Tensor;

pub const HT_TABLE_FILE: &str = "ht.htlt";
pub const LSS_TABLE_FILE: &str = "lss.lspt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BENCH_FILE: &str = "bench.json";
pub const DEFAULT_WEIGHTS_SEED: u64 = 11;

#[derive(Debug, Parser)]
#[command(name = "bevfuse", version, about = "Camera-to-BEV view transformation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-camera scene.
    Synth(SynthArgs),
    /// Build the height-sampling and frustum-pooling lookup tables.
    Precompute(RunArgs),
    /// Run the full transformation and write every intermediate plane.
    Transform(RunArgs),
    /// Time the view-transformation kernels.
    Bench(RunArgs),
    /// Diff two transform output directories.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene description (JSON). Defaults to the standard three-box scene.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the scene description.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run config supplying the grid and depth bins.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Run config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene directory written by `synth`.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Camera rig file; defaults to the scene's.
    #[arg(long)]
    pub rigs: Option<PathBuf>,
    /// Directory holding the lookup tables.
    #[arg(long)]
    pub tables: Option<PathBuf>,
    /// Directory holding fusion weights; seeded weights are used otherwise.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub weights_seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `multi-res` or `uniform:N`.
    #[arg(long)]
    pub heights: Option<String>,
    /// `round` or `interp`.
    #[arg(long)]
    pub sampler: Option<String>,
    /// `fast` or `naive`.
    #[arg(long)]
    pub ht_path: Option<String>,
    /// `depth-mask` or `depth-only`.
    #[arg(long)]
    pub weight_mode: Option<String>,
    /// `uniform-D`, `disable-M`, `force-A=<v>` or `force-P=<v>`; repeatable.
    #[arg(long)]
    pub ablate: Vec<String>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub baseline: PathBuf,
    pub variant: PathBuf,
    /// Scene whose ground truth is used for occupancy statistics.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene_dir: Option<PathBuf>,
    pub rigs: Option<PathBuf>,
    pub tables_dir: Option<PathBuf>,
    pub weights_dir: Option<PathBuf>,
    pub weights_seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Defaults to the scene's grid.
    pub grid: Option<BevGridSpec>,
    pub heights: HeightMode,
    /// Defaults to the scene's depth bins.
    pub depth: Option<DepthBinSpec>,
    pub sampler: SamplerMode,
    pub ht_path: HtPath,
    pub weight_mode: WeightMode,
    pub ablation: Ablation,
    pub threads: usize,
    pub repetitions: usize,
    pub warmup: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene_dir: None,
            rigs: None,
            tables_dir: None,
            weights_dir: None,
            weights_seed: DEFAULT_WEIGHTS_SEED,
            out_dir: None,
            grid: None,
            heights: HeightMode::MultiRes,
            depth: None,
            sampler: SamplerMode::Round,
            ht_path: HtPath::Fast,
            weight_mode: WeightMode::DepthMask,
            ablation: Ablation::default(),
            threads: 1,
            repetitions: 10,
            warmup: 1,
        }
    }
}

fn parse_heights(s: &str) -> Result<HeightMode> {
    match s {
        "multi-res" | "multi_res" => Ok(HeightMode::MultiRes),
        _ => match s.strip_prefix("uniform:") {
            Some(n) => n
                .parse()
                .map(HeightMode::Uniform)
                .map_err(|_| Error::Config(format!("bad height count in {s:?}"))),
            None => Err(Error::Config(format!("unknown height mode {s:?}"))),
        },
    }
}

fn parse_sampler(s: &str) -> Result<SamplerMode> {
    match s {
        "round" => Ok(SamplerMode::Round),
        "interp" => Ok(SamplerMode::Interp),
        _ => Err(Error::Config(format!("unknown sampler {s:?}"))),
    }
}

fn parse_ht_path(s: &str) -> Result<HtPath> {
    match s {
        "fast" => Ok(HtPath::Fast),
        "naive" => Ok(HtPath::Naive),
        _ => Err(Error::Config(format!("unknown height path {s:?}"))),
    }
}

fn parse_weight_mode(s: &str) -> Result<WeightMode> {
    match s {
        "depth-mask" | "depth_mask" => Ok(WeightMode::DepthMask),
        "depth-only" | "depth_only" => Ok(WeightMode::DepthOnly),
        _ => Err(Error::Config(format!("unknown weight mode {s:?}"))),
    }
}

fn apply_ablation(ab: &mut Ablation, s: &str) -> Result<()> {
    let value = |v: &str| {
        v.parse::<f32>()
            .map_err(|_| Error::Config(format!("bad ablation value in {s:?}")))
    };
    match s {
        "uniform-D" => ab.uniform_depth = true,
        "disable-M" => ab.disable_mask = true,
        _ => {
            if let Some(v) = s.strip_prefix("force-A=") {
                ab.force_affinity = Some(value(v)?);
            } else if let Some(v) = s.strip_prefix("force-P=") {
                ab.force_prob = Some(value(v)?);
            } else {
                return Err(Error::Config(format!("unknown ablation {s:?}")));
            }
        }
    }
    Ok(())
}

impl RunConfig {
    /// Loads a config file, resolving its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = synth::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.scene_dir,
            &mut cfg.rigs,
            &mut cfg.tables_dir,
            &mut cfg.weights_dir,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Config file (if any) with the flags applied on top.
    pub fn from_args(args: &RunArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        let set = |dst: &mut Option<PathBuf>, src: &Option<PathBuf>| {
            if let Some(s) = src {
                *dst = Some(s.clone());
            }
        };
        set(&mut cfg.scene_dir, &args.scene);
        set(&mut cfg.rigs, &args.rigs);
        set(&mut cfg.tables_dir, &args.tables);
        set(&mut cfg.weights_dir, &args.weights);
        set(&mut cfg.out_dir, &args.out);
        if let Some(s) = args.weights_seed {
            cfg.weights_seed = s;
        }
        if let Some(h) = &args.heights {
            cfg.heights = parse_heights(h)?;
        }
        if let Some(s) = &args.sampler {
            cfg.sampler = parse_sampler(s)?;
        }
        if let Some(s) = &args.ht_path {
            cfg.ht_path = parse_ht_path(s)?;
        }
        if let Some(s) = &args.weight_mode {
            cfg.weight_mode = parse_weight_mode(s)?;
        }
        for a in &args.ablate {
            apply_ablation(&mut cfg.ablation, a)?;
        }
        if let Some(t) = args.threads {
            cfg.threads = t;
        }
        if let Some(r) = args.repetitions {
            cfg.repetitions = r;
        }
        if let Some(w) = args.warmup {
            cfg.warmup = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.repetitions < 3 {
            return Err(Error::Config(format!(
                "repetitions must be at least 3, got {}",
                self.repetitions
            )));
        }
        if self.warmup < 1 {
            return Err(Error::Config("warmup must be at least 1".into()));
        }
        for p in [&self.scene_dir, &self.rigs, &self.weights_dir].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        make_height_samples(self.heights)?;
        self.options().validate()
    }

    pub fn options(&self) -> PipelineOptions {
        PipelineOptions {
            ht_path: self.ht_path,
            sampler: self.sampler,
            weight_mode: self.weight_mode,
            ablation: self.ablation,
        }
    }

    fn require<'a>(&self, p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("no {what} given")))
    }

    fn load_scene(&self) -> Result<SceneBundle> {
        SceneBundle::load(self.require(&self.scene_dir, "scene directory")?)
    }

    /// Geometry from the explicit settings, falling back to `scene`'s.
    fn geometry(&self, scene: Option<&SceneBundle>) -> Result<Geometry> {
        let rigs = match (&self.rigs, scene) {
            (Some(p), _) => synth::read_rigs(p)?,
            (None, Some(s)) => s.rigs.clone(),
            (None, None) => match &self.scene_dir {
                Some(d) => synth::read_rigs(d.join(synth::RIGS_FILE))?,
                None => return Err(Error::Config("no camera rigs or scene given".into())),
            },
        };
        let manifest_grid = || -> Result<Option<(BevGridSpec, DepthBinSpec)>> {
            if let Some(s) = scene {
                return Ok(Some((s.grid, s.depth_bins)));
            }
            match &self.scene_dir {
                Some(d) => {
                    let m: ManifestGeometry = synth::read_json(&d.join(synth::MANIFEST_FILE))?;
                    Ok(Some((m.grid, m.depth_bins)))
                }
                None => Ok(None),
            }
        };
        let (grid, depth_bins) = match (self.grid, self.depth) {
            (Some(g), Some(d)) => (g, d),
            (g, d) => {
                let fallback = manifest_grid()?;
                (
                    g.or(fallback.map(|f| f.0)).unwrap_or_default(),
                    d.or(fallback.map(|f| f.1)).unwrap_or_default(),
                )
            }
        };
        Ok(Geometry {
            rigs,
            grid,
            heights: make_height_samples(self.heights)?,
            depth_bins,
        })
    }

    fn model(&self, channels: usize) -> Result<FusionModel> {
        let caf = CafConfig::new(channels)?;
        let prob = ProbNetConfig::new(channels)?;
        let weights = match &self.weights_dir {
            Some(d) => WeightBundle::load(d)?,
            None => seeded_weights(&caf, &prob, self.weights_seed)?,
        };
        Ok(FusionModel { caf, prob, weights })
    }

    /// Tables from `tables_dir` when present there, built in memory otherwise.
    fn tables(&self, geometry: &Geometry) -> Result<Tables> {
        let tables = match &self.tables_dir {
            Some(d) if d.join(HT_TABLE_FILE).exists() && d.join(LSS_TABLE_FILE).exists() => Tables {
                ht: HtLookupTable::read(d.join(HT_TABLE_FILE))?,
                lss: LssPoolTable::read(d.join(LSS_TABLE_FILE))?,
            },
            _ => geometry.precompute()?,
        };
        geometry.check_tables(&tables)?;
        Ok(tables)
    }
}

#[derive(Deserialize)]
struct ManifestGeometry {
    grid: BevGridSpec,
    depth_bins: DepthBinSpec,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<SceneBundle> {
    let mut spec = match &args.spec {
        Some(p) => synth::read_json::<SceneSpec>(p)?,
        None => SceneSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let grid = cfg.grid.unwrap_or_default();
    let depth = cfg.depth.unwrap_or_default();
    let bundle = generate_scene(&spec, &grid, &depth)?;
    bundle.save(&args.out)?;
    Ok(bundle)
}

pub fn cmd_precompute(cfg: &RunConfig) -> Result<Tables> {
    let dir = cfg.require(&cfg.tables_dir, "tables directory")?;
    let geometry = cfg.geometry(None)?;
    let tables = geometry.precompute()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    tables.ht.write(dir.join(HT_TABLE_FILE))?;
    tables.lss.write(dir.join(LSS_TABLE_FILE))?;
    for (name, t) in [
        (HT_TABLE_FILE, tables.ht.table()),
        (LSS_TABLE_FILE, tables.lss.table()),
    ] {
        eprintln!("{name}: {} entries, {} bytes", t.len(), t.encode().len());
        if t.is_empty() {
            eprintln!("warning: {name} is empty; no camera sees the grid");
        }
    }
    Ok(tables)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSummary {
    pub name: String,
    pub shape: Vec<usize>,
    pub l2: f64,
    pub max_abs: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSummary {
    pub options: PipelineOptions,
    pub threads: usize,
    pub weights: String,
    pub planes: Vec<PlaneSummary>,
    /// Occupancy statistics of the final feature against the scene's ground truth.
    pub occupancy: EnergyStats,
    /// The same for the frustum-pooling stream alone.
    pub occupancy_lss: EnergyStats,
}

fn l2(t: &Tensor) -> f64 {
    t.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

pub fn cmd_transform(cfg: &RunConfig) -> Result<TransformSummary> {
    let out = cfg.require(&cfg.out_dir, "output directory")?;
    let scene = cfg.load_scene()?;
    let geometry = cfg.geometry(Some(&scene))?;
    let tables = cfg.tables(&geometry)?;
    let model = cfg.model(scene.inputs.channels())?;
    let exec = Executor::with_threads(cfg.threads)?;
    let result = run_pipeline(&scene.inputs, &geometry, &tables, &model, &cfg.options(), &exec)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut planes = Vec::new();
    for (name, t) in result.named() {
        btsr::write(t, out.join(format!("{name}.btsr")))?;
        planes.push(PlaneSummary {
            name: name.into(),
            shape: t.shape().to_vec(),
            l2: l2(t),
            max_abs: t.max_abs(),
        });
    }
    let summary = TransformSummary {
        options: cfg.options(),
        threads: cfg.threads,
        weights: match model.weights.provenance() {
            Provenance::Seeded(s) => format!("seeded:{s}"),
            Provenance::LoadedFromFile(p) => p.display().to_string(),
        },
        planes,
        occupancy: energy_stats(&result.fused, &scene.gt_bev)?,
        occupancy_lss: energy_stats(&result.f_lss, &scene.gt_bev)?,
    };
    write_report(&summary, &out.join(SUMMARY_FILE))?;
    Ok(summary)
}

fn write_report<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub name: String,
    pub median_ms: f64,
    pub worst_ms: f64,
    pub samples_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSetup {
    pub cameras: usize,
    pub channels: usize,
    pub feat_h: usize,
    pub feat_w: usize,
    pub depth_bins: usize,
    pub nx: usize,
    pub ny: usize,
    pub heights: usize,
    pub threads: usize,
    pub repetitions: usize,
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub setup: BenchSetup,
    pub entries: Vec<BenchEntry>,
}

impl BenchReport {
    pub fn entry(&self, name: &str) -> Option<&BenchEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Median of `slow` divided by median of `fast`.
    pub fn speedup(&self, slow: &str, fast: &str) -> Option<f64> {
        Some(self.entry(slow)?.median_ms / self.entry(fast)?.median_ms)
    }

    pub fn render_text(&self) -> String {
        let s = &self.setup;
        let mut out = format!(
            "cameras={} features={}x{}x{} depth_bins={} bev={}x{} heights={} threads={} reps={} warmup={}\n",
            s.cameras, s.channels, s.feat_h, s.feat_w, s.depth_bins, s.ny, s.nx, s.heights, s.threads, s.repetitions, s.warmup
        );
        out += &format!("{:<18} {:>12} {:>12}\n", "kernel", "median_ms", "worst_ms");
        for e in &self.entries {
            out += &format!("{:<18} {:>12.4} {:>12.4}\n", e.name, e.median_ms, e.worst_ms);
        }
        if let Some(x) = self.speedup("ht_naive_interp", "ht_fast") {
            out += &format!("ht_fast speedup over ht_naive_interp: {x:.1}x\n");
        }
        out
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn time_kernel<F: FnMut() -> Result<()>>(name: &str, warmup: usize, reps: usize, mut f: F) -> Result<BenchEntry> {
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        f()?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BenchEntry {
        name: name.into(),
        median_ms: median(&sorted),
        worst_ms: *sorted.last().expect("at least three repetitions"),
        samples_ms: samples,
    })
}

/// Times the four kernels on a scene loaded from `scene_dir`, or on the
/// default synthetic scene. Loading and table construction are not timed.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    let scene = match &cfg.scene_dir {
        Some(_) => cfg.load_scene()?,
        None => generate_scene(
            &SceneSpec::default(),
            &cfg.grid.unwrap_or_default(),
            &cfg.depth.unwrap_or_default(),
        )?,
    };
    let geometry = cfg.geometry(Some(&scene))?;
    let tables = cfg.tables(&geometry)?;
    let model = cfg.model(scene.inputs.channels())?;
    let exec = Executor::with_threads(cfg.threads)?;
    let options = PipelineOptions::default();
    let inputs = &scene.inputs;

    if cfg.threads > 1 {
        let seq = run_pipeline(inputs, &geometry, &tables, &model, &options, &Executor::sequential())?;
        let par = run_pipeline(inputs, &geometry, &tables, &model, &options, &exec)?;
        if !seq.bit_eq(&par) {
            return Err(Error::ShapeMismatch(format!(
                "{}-thread output differs from the sequential run",
                cfg.threads
            )));
        }
    }

    let (w, r) = (cfg.warmup, cfg.repetitions);
    let entries = vec![
        time_kernel("ht_naive_interp", w, r, || {
            ht_transform_naive(
                inputs,
                &geometry.rigs,
                &geometry.grid,
                &geometry.heights,
                &geometry.depth_bins,
                SamplerMode::Interp,
                &exec,
            )
            .map(drop)
        })?,
        time_kernel("ht_fast", w, r, || ht_transform_fast(inputs, &tables.ht, &exec).map(drop))?,
        time_kernel("lss_pool", w, r, || {
            lss_pool(inputs, &tables.lss, WeightMode::DepthMask, &exec).map(drop)
        })?,
        time_kernel("full_pipeline", w, r, || {
            run_pipeline(inputs, &geometry, &tables, &model, &options, &exec).map(drop)
        })?,
    ];
    Ok(BenchReport {
        setup: BenchSetup {
            cameras: inputs.num_cameras(),
            channels: inputs.channels(),
            feat_h: inputs.feat_h(),
            feat_w: inputs.feat_w(),
            depth_bins: inputs.depth_bins(),
            nx: geometry.grid.nx(),
            ny: geometry.grid.ny(),
            heights: geometry.heights.len(),
            threads: cfg.threads,
            repetitions: r,
            warmup: w,
        },
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneDiff {
    pub name: String,
    pub shape: Vec<usize>,
    pub max_abs_diff: f64,
    /// `‖variant − baseline‖ / ‖baseline‖`; 0 when both are zero.
    pub relative_l2: f64,
    pub baseline_l2: f64,
    pub variant_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub planes: Vec<PlaneDiff>,
    pub baseline_occupancy: Option<EnergyStats>,
    pub variant_occupancy: Option<EnergyStats>,
}

impl CompareReport {
    pub fn plane(&self, name: &str) -> Option<&PlaneDiff> {
        self.planes.iter().find(|p| p.name == name)
    }
}

pub fn diff_tensors(name: &str, a: &Tensor, b: &Tensor) -> Result<PlaneDiff> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{name}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (mut max_abs, mut diff2) = (0.0f64, 0.0f64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = (y as f64 - x as f64).abs();
        max_abs = max_abs.max(d);
        diff2 += d * d;
    }
    let (la, lb) = (l2(a), l2(b));
    let rel = if la > 0.0 {
        diff2.sqrt() / la
    } else if diff2 > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(PlaneDiff {
        name: name.into(),
        shape: a.shape().to_vec(),
        max_abs_diff: max_abs,
        relative_l2: rel,
        baseline_l2: la,
        variant_l2: lb,
    })
}

const PLANES: [&str; 6] = ["f_lss", "f_ht", "f_channel", "affinity", "prob", "f"];

pub fn cmd_compare(args: &CompareArgs) -> Result<CompareReport> {
    let mut planes = Vec::new();
    for name in PLANES {
        let file = format!("{name}.btsr");
        let (pa, pb) = (args.baseline.join(&file), args.variant.join(&file));
        if !pa.exists() && !pb.exists() {
            continue;
        }
        planes.push(diff_tensors(name, &btsr::read(pa)?, &btsr::read(pb)?)?);
    }
    if planes.is_empty() {
        return Err(Error::Config("no transform outputs found in either directory".into()));
    }
    let (mut bo, mut vo) = (None, None);
    if let Some(scene) = &args.scene {
        let gt = btsr::read(scene.join(synth::GT_FILE))?;
        bo = Some(energy_stats(&btsr::read(args.baseline.join("f.btsr"))?, &gt)?);
        vo = Some(energy_stats(&btsr::read(args.variant.join("f.btsr"))?, &gt)?);
    }
    let report = CompareReport {
        planes,
        baseline_occupancy: bo,
        variant_occupancy: vo,
    };
    if let Some(p) = &args.out {
        write_report(&report, p)?;
    }
    Ok(report)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let b = cmd_synth(&a)?;
            eprintln!(
                "wrote {} cameras, {} occupied cells to {}",
                b.rigs.len(),
                b.gt_bev.data().iter().filter(|&&v| v > 0.5).count(),
                a.out.display()
            );
        }
        Command::Precompute(a) => {
            cmd_precompute(&RunConfig::from_args(&a)?)?;
        }
        Command::Transform(a) => print_json(&cmd_transform(&RunConfig::from_args(&a)?)?),
        Command::Bench(a) => {
            let cfg = RunConfig::from_args(&a)?;
            let report = cmd_bench(&cfg)?;
            eprint!("{}", report.render_text());
            if let Some(dir) = &cfg.out_dir {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                write_report(&report, &dir.join(BENCH_FILE))?;
            }
            print_json(&report);
        }
        Command::Compare(a) => print_json(&cmd_compare(&a)?),
    }
    Ok(())
}

/// Parses the process arguments, runs, and maps errors to exit codes:
/// 2 for configuration errors, 3 for everything else.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let config = e.is_config_error()
                || matches!(&e, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound);
            ExitCode::from(if config { 2 } else { 3 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_flags() {
        let mut ab = Ablation::default();
        for s in ["uniform-D", "disable-M", "force-A=1", "force-P=0.5"] {
            apply_ablation(&mut ab, s).unwrap();
        }
        assert!(ab.uniform_depth && ab.disable_mask);
        assert_eq!((ab.force_affinity, ab.force_prob), (Some(1.0), Some(0.5)));
        assert!(apply_ablation(&mut ab, "force-A=x").is_err());
        assert!(apply_ablation(&mut ab, "nope").is_err());
    }

    #[test]
    fn repetitions_below_three_rejected() {
        let args = RunArgs {
            repetitions: Some(1),
            ..RunArgs::default()
        };
        assert!(RunConfig::from_args(&args).unwrap_err().is_config_error());
    }

    #[test]
    fn height_flag() {
        assert_eq!(parse_heights("multi-res").unwrap(), HeightMode::MultiRes);
        assert_eq!(parse_heights("uniform:7").unwrap(), HeightMode::Uniform(7));
        assert!(parse_heights("uniform:").is_err());
    }

    #[test]
    fn config_json_defaults_and_unknown_fields() {
        let cfg: RunConfig = serde_json::from_str(r#"{"threads": 4, "heights": {"uniform": 5}}"#).unwrap();
        assert_eq!(cfg.threads, 4);
        assert_eq!(cfg.heights, HeightMode::Uniform(5));
        assert_eq!(cfg.weights_seed, DEFAULT_WEIGHTS_SEED);
        assert!(serde_json::from_str::<RunConfig>(r#"{"thread": 4}"#).is_err());
    }

    #[test]
    fn bench_report_round_trips() {
        let r = BenchReport {
            setup: BenchSetup {
                cameras: 6,
                channels: 64,
                feat_h: 16,
                feat_w: 44,
                depth_bins: 112,
                nx: 128,
                ny: 128,
                heights: 13,
                threads: 1,
                repetitions: 3,
                warmup: 1,
            },
            entries: vec![
                BenchEntry {
                    name: "ht_naive_interp".into(),
                    median_ms: 20.0,
                    worst_ms: 25.5,
                    samples_ms: vec![19.0, 20.0, 25.5],
                },
                BenchEntry {
                    name: "ht_fast".into(),
                    median_ms: 2.0,
                    worst_ms: 2.5,
                    samples_ms: vec![2.0, 2.5, 1.5],
                },
            ],
        };
        let back: BenchReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.render_text(), r.render_text());
        assert_eq!(r.speedup("ht_naive_interp", "ht_fast"), Some(10.0));
        assert!(r.render_text().contains("speedup over ht_naive_interp: 10.0x"));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[1.0, 2.0, 9.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 4.0, 9.0]), 3.0);
    }

    #[test]
    fn diff_of_identical_is_zero() {
        let a = Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let d = diff_tensors("a", &a, &a).unwrap();
        assert_eq!((d.max_abs_diff, d.relative_l2), (0.0, 0.0));
        let z = Tensor::zeros(&[2, 2]).unwrap();
        assert_eq!(diff_tensors("z", &z, &z).unwrap().relative_l2, 0.0);
    }
}
