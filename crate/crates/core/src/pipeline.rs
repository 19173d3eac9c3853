//! End-to-end pipeline: configuration, stage runners and the artifact
//! manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::background::{self, BackgroundTrainConfig};
use crate::error::{Error, Result};
use crate::eval::{self, ObjectReconScores, ReconCase, SegReport};
use crate::fishbowl::{self, FishbowlConfig, VideoSample};
use crate::formats::{self, RleMask};
use crate::gradcheck::{self, GradCheck};
use crate::image::Mask;
use crate::motion::{self, BgMaskConfig, DenseSegmentation, SegConfig};
use crate::object::{self, CropConfig, ObjectCrop, ObjectTrainConfig};
use crate::rng::{derive_seed, rng_from_seed, standard_normal_vec};
use crate::scene::{self, Intervention, LatentBank, Model, SamplerConfig, SceneModels, SceneSpec};
use crate::vae::Vae;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub fishbowl: FishbowlConfig,
    pub videos: usize,
    /// Held-out videos for the object reconstruction scores.
    pub eval_videos: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneOutputConfig {
    pub sampler: SamplerConfig,
    pub scenes: usize,
    pub conditional_scenes: usize,
    pub neighbour_fraction: f64,
    /// Entropy threshold used for conditional sampling.
    pub conditional_threshold: f64,
    /// Number of images per intervention sequence.
    pub intervention_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckConfig {
    pub layer_cases: usize,
    pub loss_cases: usize,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    pub paths: Paths,
    pub dataset: DatasetConfig,
    pub segmentation: SegConfig,
    pub bg_mask: BgMaskConfig,
    pub crops: CropConfig,
    pub object: ObjectTrainConfig,
    pub background: BackgroundTrainConfig,
    pub scene: SceneOutputConfig,
    pub grad_check: GradCheckConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            paths: Paths { data: "data".into(), models: "models".into(), reports: "reports".into() },
            dataset: DatasetConfig { fishbowl: FishbowlConfig::desk(), videos: 100, eval_videos: 20 },
            segmentation: SegConfig::desk(),
            bg_mask: BgMaskConfig::default(),
            crops: CropConfig::desk(),
            object: ObjectTrainConfig::desk(),
            background: BackgroundTrainConfig::desk(),
            scene: SceneOutputConfig {
                sampler: SamplerConfig::desk(),
                scenes: 8,
                conditional_scenes: 4,
                neighbour_fraction: 0.02,
                conditional_threshold: 150.0,
                intervention_steps: 4,
            },
            grad_check: GradCheckConfig { layer_cases: 40, loss_cases: 5, tolerance: 1e-4 },
        }
    }
}

impl PipelineConfig {
    /// A few short videos and a handful of epochs, for smoke runs.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.dataset.fishbowl.frames = 10;
        c.dataset.fishbowl.max_sprites = 3;
        c.dataset.videos = 4;
        c.dataset.eval_videos = 2;
        c.object.schedule.epochs = 2;
        c.object.schedule.lr_drop_epoch = None;
        c.background.schedule.epochs = 2;
        c.background.schedule.lr_drop_epoch = None;
        c.scene.scenes = 2;
        c.scene.conditional_scenes = 1;
        c.scene.intervention_steps = 2;
        c.scene.sampler.entropy_threshold = f64::MAX;
        c.scene.conditional_threshold = f64::MAX;
        c.grad_check.layer_cases = 7;
        c.grad_check.loss_cases = 1;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version)));
        }
        self.dataset.fishbowl.validate()?;
        self.object.validate()?;
        self.background.validate()?;
        self.scene.sampler.validate()?;
        if self.dataset.videos == 0 {
            return Err(Error::Config("dataset.videos must be positive".into()));
        }
        if (self.crops.width, self.crops.height) != (self.object.network.width, self.object.network.height) {
            return Err(Error::Config("crop size must match the object network input".into()));
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8], origin: &Path) -> Result<Self> {
        let c: Self = serde_json::from_slice(bytes).map_err(|e| Error::Json { path: origin.into(), source: e })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&formats::read_file(path)?, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Applies `key=value` with a dotted key. The value is parsed as JSON,
    /// falling back to a plain string. Unknown keys are rejected.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let value: serde_json::Value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
        let mut doc = serde_json::to_value(&*self).expect("serializable");
        let mut node = &mut doc;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *node = value;
        let next: Self = serde_json::from_value(doc).map_err(|e| Error::Config(format!("override {key}: {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }
}

/// Resolved directories of one run.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
    pub data: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl Layout {
    pub fn new(root: &Path, paths: &Paths) -> Self {
        Self { root: root.into(), data: root.join(&paths.data), models: root.join(&paths.models), reports: root.join(&paths.reports) }
    }

    pub fn video_dir(&self, i: usize) -> PathBuf {
        self.data.join("videos").join(video_name(i))
    }

    pub fn eval_video_dir(&self, i: usize) -> PathBuf {
        self.data.join("eval").join(video_name(i))
    }

    pub fn segment_dir(&self, i: usize) -> PathBuf {
        self.data.join("segments").join(video_name(i))
    }

    pub fn crops_dir(&self) -> PathBuf {
        self.data.join("crops")
    }

    pub fn backgrounds_dir(&self) -> PathBuf {
        self.data.join("backgrounds")
    }

    pub fn object_weights(&self) -> PathBuf {
        self.models.join("object.cfw")
    }

    pub fn background_weights(&self) -> PathBuf {
        self.models.join("background.cfw")
    }

    pub fn bank(&self) -> PathBuf {
        self.models.join("latent_bank.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.reports.join("manifest.json")
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }
}

pub fn video_name(i: usize) -> String {
    format!("video_{i:03}")
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, bytes: &[u8], out: &mut Vec<PathBuf>) -> Result<()> {
    formats::write_file(p, bytes)?;
    out.push(p.into());
    Ok(())
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config: Option<PipelineConfig>,
    /// Relative path → SHA-256 of the content.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Records (or refreshes) the hashes of `files` in the run manifest.
pub fn update_manifest(layout: &Layout, cfg: &PipelineConfig, files: &[PathBuf]) -> Result<PathBuf> {
    let path = layout.manifest();
    let mut m = if path.exists() {
        serde_json::from_slice::<Manifest>(&formats::read_file(&path)?).map_err(|e| Error::Json { path: path.clone(), source: e })?
    } else {
        Manifest::default()
    };
    m.version = CONFIG_VERSION;
    m.config = Some(cfg.clone());
    for f in files {
        m.artifacts.insert(layout.rel(f), sha256_hex(&formats::read_file(f)?));
    }
    mkdir(&layout.reports)?;
    formats::write_file(&path, &json(&m))?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenData,
    Segment,
    Extract,
    TrainObject,
    TrainBg,
    BuildLatentBank,
    SampleScene,
    Intervene,
    Evaluate,
    GradCheck,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::GenData,
        Stage::Segment,
        Stage::Extract,
        Stage::TrainObject,
        Stage::TrainBg,
        Stage::BuildLatentBank,
        Stage::SampleScene,
        Stage::Intervene,
        Stage::Evaluate,
        Stage::GradCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Segment => "segment",
            Stage::Extract => "extract",
            Stage::TrainObject => "train-object",
            Stage::TrainBg => "train-bg",
            Stage::BuildLatentBank => "build-latent-bank",
            Stage::SampleScene => "sample-scene",
            Stage::Intervene => "intervene",
            Stage::Evaluate => "evaluate",
            Stage::GradCheck => "grad-check",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s)
    }
}

/// Runs one stage, records its outputs in the manifest and returns them.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let files = match stage {
        Stage::GenData => gen_data(cfg, layout)?,
        Stage::Segment => segment(cfg, layout)?,
        Stage::Extract => extract(cfg, layout)?,
        Stage::TrainObject => train_object(cfg, layout)?,
        Stage::TrainBg => train_bg(cfg, layout)?,
        Stage::BuildLatentBank => build_latent_bank(cfg, layout)?,
        Stage::SampleScene => sample_scenes(cfg, layout)?,
        Stage::Intervene => intervene(cfg, layout)?,
        Stage::Evaluate => evaluate(cfg, layout)?,
        Stage::GradCheck => grad_check(cfg, layout)?,
    };
    update_manifest(layout, cfg, &files)?;
    Ok(files)
}

/// Every stage in order.
pub fn run_all(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    for s in Stage::ALL {
        run_stage(s, cfg, layout)?;
    }
    Ok(())
}

fn gen_data(cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let jobs: Vec<(PathBuf, u64)> = (0..cfg.dataset.videos)
        .map(|i| (layout.video_dir(i), derive_seed(cfg.seed, "video", i as u64)))
        .chain((0..cfg.dataset.eval_videos).map(|i| (layout.eval_video_dir(i), derive_seed(cfg.seed, "eval-video", i as u64))))
        .collect();
    let outs: Vec<Vec<PathBuf>> = jobs
        .par_iter()
        .map(|(dir, seed)| fishbowl::generate(&cfg.dataset.fishbowl, *seed)?.save(dir))
        .collect::<Result<_>>()?;
    Ok(outs.concat())
}

fn load_video(dir: &Path) -> Result<VideoSample> {
    if !dir.exists() {
        return Err(Error::MissingInput(dir.into()));
    }
    VideoSample::load(dir)
}

fn segment(cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let outs: Vec<Vec<PathBuf>> = (0..cfg.dataset.videos)
        .into_par_iter()
        .map(|i| {
            let v = load_video(&layout.video_dir(i))?;
            let dir = layout.segment_dir(i);
            mkdir(&dir)?;
            let seg = motion::segment(&v.frames, &v.flow_fwd, &v.flow_bwd, &cfg.segmentation)?;
            let mut files = seg.save(&dir)?;
            let fg: Vec<RleMask> = motion::background_mask(&v.frames, &cfg.bg_mask)?.iter().map(formats::rle_encode).collect();
            write(&dir.join("bgmask.json"), &serde_json::to_vec(&fg).expect("serializable"), &mut files)?;
            Ok(files)
        })
        .collect::<Result<_>>()?;
    Ok(outs.concat())
}

fn load_bgmask(dir: &Path) -> Result<Vec<Mask>> {
    let p = dir.join("bgmask.json");
    let rles: Vec<RleMask> = serde_json::from_slice(&formats::read_file(&p)?).map_err(|e| Error::Json { path: p.clone(), source: e })?;
    rles.iter().map(formats::rle_decode).collect()
}

fn extract(cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let per_video: Vec<(Vec<ObjectCrop>, Vec<background::BackgroundSample>)> = (0..cfg.dataset.videos)
        .into_par_iter()
        .map(|i| {
            let v = load_video(&layout.video_dir(i))?;
            let sd = layout.segment_dir(i);
            if !sd.join("objects.json").exists() {
                return Err(Error::MissingInput(sd.join("objects.json")));
            }
            let seg = DenseSegmentation::load(&sd)?;
            let crops = object::extract_crops(&video_name(i), &v.frames, &seg.labels, &cfg.crops)?;
            let bg = background::background_samples(
                &video_name(i),
                &v.frames,
                &load_bgmask(&sd)?,
                cfg.background.every,
                cfg.background.network.width,
                cfg.background.network.height,
            )?;
            Ok((crops, bg))
        })
        .collect::<Result<_>>()?;
    let (crops, bgs): (Vec<_>, Vec<_>) = per_video.into_iter().unzip();
    let (crops, bgs): (Vec<ObjectCrop>, Vec<_>) = (crops.concat(), bgs.concat());
    for d in [layout.crops_dir(), layout.backgrounds_dir()] {
        if d.exists() {
            std::fs::remove_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    let mut files = object::save_crops(&layout.crops_dir(), &crops)?;
    files.extend(background::save_samples(&layout.backgrounds_dir(), &bgs)?);
    Ok(files)
}

fn train_object(cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let crops = object::load_crops(&layout.crops_dir())?;
    if crops.is_empty() {
        return Err(Error::MissingInput(layout.crops_dir()));
    }
    let m = object::train_object_model(&crops, &cfg.object, derive_seed(cfg.seed, "train-object", 0))?;
    mkdir(&layout.models)?;
    let mut files = vec![layout.object_weights()];
    m.vae.save(&layout.object_weights(), &m.params)?;
    write(&layout.models.join("object_log.jsonl"), object::log_to_jsonl(&m.log).as_bytes(), &mut files)?;
    Ok(files)
}

fn train_bg(cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let samples = background::load_samples(&layout.backgrounds_dir())?;
    if samples.is_empty() {
        return Err(Error::MissingInput(layout.backgrounds_dir()));
    }
    let m = background::train_background_model(&samples, &cfg.background, derive_seed(cfg.seed, "train-bg", 0))?;
    mkdir(&layout.models)?;
    let mut files = vec![layout.background_weights()];
    m.vae.save(&layout.background_weights(), &m.params)?;
    write(&layout.models.join("background_log.jsonl"), object::log_to_jsonl(&m.log).as_bytes(), &mut files)?;
    Ok(files)
}

fn load_model(spec: &crate::vae::VaeSpec, path: &Path) -> Result<Model> {
    let vae = Vae::new(spec.clone())?;
    if !path.exists() {
        return Err(Error::MissingInput(path.into()));
    }
    let params = vae.load(path)?;
    Ok(Model { vae, params })
}

pub fn load_models(cfg: &PipelineConfig, layout: &Layout) -> Result<SceneModels> {
    Ok(SceneModels {
        object: load_model(&cfg.object.network, &layout.object_weights())?,
        background: load_model(&cfg.background.network, &layout.background_weights())?,
    })
}

/// One entry per training video: mean posterior background latent over
/// its samples and, per object, the latent of its middle crop.
fn build_latent_bank(cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let models = load_models(cfg, layout)?;
    let crops = object::load_crops(&layout.crops_dir())?;
    let bgs = background::load_samples(&layout.backgrounds_dir())?;
    let mut bank = LatentBank::default();
    for i in 0..cfg.dataset.videos {
        let name = video_name(i);
        let imgs: Vec<_> = bgs.iter().filter(|s| s.source.video == name).map(|s| &s.image).collect();
        if imgs.is_empty() {
            continue;
        }
        let zs = background::encode_images(&models.background.vae, &models.background.params, &imgs)?;
        let l = zs[0].len();
        let z_bg: Vec<f32> = (0..l).map(|j| zs.iter().map(|z| z[j]).sum::<f32>() / zs.len() as f32).collect();
        let mut by_label: BTreeMap<u16, Vec<&ObjectCrop>> = BTreeMap::new();
        for c in crops.iter().filter(|c| c.source.video == name) {
            by_label.entry(c.source.label).or_default().push(c);
        }
        let mids: Vec<_> = by_label.values().map(|v| &v[v.len() / 2].image).collect();
        let objects = if mids.is_empty() { vec![] } else { background::encode_images(&models.object.vae, &models.object.params, &mids)? };
        bank.entries.push(BankEntry { video: name, z_bg, objects });
    }
    mkdir(&layout.models)?;
    bank.save(&layout.bank())?;
    Ok(vec![layout.bank()])
}

use crate::scene::BankEntry;

fn scene_files(dir: &Path, name: &str, spec: &SceneSpec, comp: &scene::Composition, files: &mut Vec<PathBuf>) -> Result<()> {
    write(&dir.join(format!("{name}.ppm")), &formats::encode_ppm(&comp.image.to_rgb()), files)?;
    write(&dir.join(format!("{name}.json")), &json(spec), files)
}

fn sample_scenes(cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let models = load_models(cfg, layout)?;
    let dir = layout.reports.join("scenes");
    mkdir(&dir)?;
    let sc = &cfg.scene;
    let mut files = Vec::new();
    for i in 0..sc.scenes {
        let (spec, comp) = scene::sample_scene(&models, &sc.sampler, derive_seed(cfg.seed, "scene", i as u64))?;
        scene_files(&dir, &format!("scene_{i:03}"), &spec, &comp, &mut files)?;
    }
    if sc.conditional_scenes > 0 {
        let bank = LatentBank::load(&layout.bank())?;
        let ccfg = SamplerConfig { entropy_threshold: sc.conditional_threshold, ..sc.sampler.clone() };
        for i in 0..sc.conditional_scenes {
            let seed = derive_seed(cfg.seed, "conditional-scene", i as u64);
            let z_bg = standard_normal_vec(&mut rng_from_seed(seed), models.background.vae.latent_dim());
            let spec = scene::conditional_sample(&models, &bank, &z_bg, sc.neighbour_fraction, &ccfg, seed)?;
            let comp = scene::render_scene(&models, &spec, &ccfg)?;
            scene_files(&dir, &format!("conditional_{i:03}"), &spec, &comp, &mut files)?;
        }
    }
    Ok(files)
}

/// Intervention sequences on a freshly sampled base scene.
fn intervene(cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let models = load_models(cfg, layout)?;
    let sc = &cfg.scene;
    let dir = layout.reports.join("interventions");
    mkdir(&dir)?;
    let base_seed = derive_seed(cfg.seed, "intervention-base", 0);
    let mut base = scene::sample_scene_spec(&models, &sc.sampler, base_seed)?;
    if base.count() == 0 {
        base = scene::intervene(&models, &base, &sc.sampler, &Intervention::SetCount { count: 1, seed: base_seed })?;
    }
    let mut files = Vec::new();
    let comp = scene::render_scene(&models, &base, &sc.sampler)?;
    scene_files(&dir, "base", &base, &comp, &mut files)?;
    let l_bg = models.background.vae.latent_dim();
    let (lo, hi) = (sc.sampler.min_width, sc.sampler.max_width);
    for step in 0..sc.intervention_steps {
        let s = step as u64;
        let n = sc.intervention_steps.max(2) - 1;
        let ivs = [
            ("count", Intervention::SetCount { count: step, seed: derive_seed(cfg.seed, "iv-count", 0) }),
            ("appearance", Intervention::ResampleAppearance { index: 0, seed: derive_seed(cfg.seed, "iv-appearance", s) }),
            ("scale", Intervention::SetScale { index: 0, width: lo + (hi - lo) * step / n }),
            ("background", Intervention::SwapBackground { z_bg: standard_normal_vec(&mut rng_from_seed(derive_seed(cfg.seed, "iv-background", s)), l_bg) }),
            ("positions", Intervention::ResamplePositions { seed: derive_seed(cfg.seed, "iv-positions", s) }),
        ];
        for (name, iv) in ivs {
            let spec = scene::intervene(&models, &base, &sc.sampler, &iv)?;
            let comp = scene::render_scene(&models, &spec, &sc.sampler)?;
            scene_files(&dir, &format!("{name}_{step:02}"), &spec, &comp, &mut files)?;
        }
    }
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub segmentation: SegReport,
    pub object_model: Option<ObjectReconScores>,
    pub baseline: Option<ObjectReconScores>,
}

impl EvaluationReport {
    pub fn table(&self) -> String {
        let mut s = String::from("segmentation\n");
        s += &self.segmentation.table();
        if let (Some(m), Some(b)) = (&self.object_model, &self.baseline) {
            s += "\nobject model\n";
            s += &eval::recon_table(&[("baseline".into(), b.clone()), ("object model".into(), m.clone())]);
        }
        s
    }
}

fn evaluate(cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let videos: Vec<eval::VideoScores> = (0..cfg.dataset.videos)
        .into_par_iter()
        .map(|i| {
            let v = load_video(&layout.video_dir(i))?;
            let sd = layout.segment_dir(i);
            if !sd.join("objects.json").exists() {
                return Err(Error::MissingInput(sd.join("objects.json")));
            }
            let seg = DenseSegmentation::load(&sd)?;
            let ids: Vec<u16> = v.objects.iter().map(|o| o.label).collect();
            eval::score_video(&video_name(i), &v.labels, &ids, &seg.labels)
        })
        .collect::<Result<_>>()?;
    let aggregate = eval::pool_scores(&videos)?;
    let segmentation = SegReport { videos, aggregate };

    let (mut object_model, mut baseline) = (None, None);
    if layout.object_weights().exists() && cfg.dataset.eval_videos > 0 {
        let m = load_model(&cfg.object.network, &layout.object_weights())?;
        let mut evals = Vec::new();
        for i in 0..cfg.dataset.eval_videos {
            let v = load_video(&layout.eval_video_dir(i))?;
            evals.extend(object::extract_eval_crops(&format!("eval_{i:03}"), &v, &cfg.crops));
        }
        if !evals.is_empty() {
            let recon = object::reconstruct(&m.vae, &m.params, &evals.iter().map(|e| &e.crop.image).collect::<Vec<_>>())?;
            let model_cases: Vec<ReconCase> = evals
                .iter()
                .zip(&recon)
                .map(|(e, r)| ReconCase {
                    pred_mask: r.binary_mask(0.5),
                    pred_rgb: Some(r.appearance.to_rgb()),
                    gt_mask: e.gt_mask.clone(),
                    gt_rgb: e.gt_rgb.clone(),
                    visible_fraction: e.visible_fraction,
                })
                .collect();
            let base_cases: Vec<ReconCase> = evals.iter().map(baseline_case).collect();
            object_model = Some(ObjectReconScores::over_seeds(&[eval::object_recon_score(&model_cases)?])?);
            baseline = Some(ObjectReconScores::over_seeds(&[eval::object_recon_score(&base_cases)?])?);
        }
    }
    let report = EvaluationReport { segmentation, object_model, baseline };
    mkdir(&layout.reports)?;
    let mut files = Vec::new();
    write(&layout.reports.join("evaluation.json"), &json(&report), &mut files)?;
    write(&layout.reports.join("evaluation.txt"), report.table().as_bytes(), &mut files)?;
    Ok(files)
}

/// The occluded-mask baseline: the visible mask as amodal prediction.
pub fn baseline_case(e: &object::EvalCrop) -> ReconCase {
    ReconCase {
        pred_mask: e.crop.m1.clone(),
        pred_rgb: None,
        gt_mask: e.gt_mask.clone(),
        gt_rgb: e.gt_rgb.clone(),
        visible_fraction: e.visible_fraction,
    }
}

#[derive(Serialize)]
struct GradCheckReport<'a> {
    tolerance: f64,
    passed: bool,
    checks: &'a [GradCheck],
}

fn grad_check(cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let g = &cfg.grad_check;
    let checks = gradcheck::full_suite(g.layer_cases, g.loss_cases, derive_seed(cfg.seed, "grad-check", 0))?;
    let passed = checks.iter().all(|c| c.passes(g.tolerance));
    mkdir(&layout.reports)?;
    let mut files = Vec::new();
    write(&layout.reports.join("gradcheck.json"), &json(&GradCheckReport { tolerance: g.tolerance, passed, checks: &checks }), &mut files)?;
    if !passed {
        let worst = checks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).expect("nonempty");
        return Err(Error::Numeric(format!("gradient check {} failed: relative error {:.3e} at {}", worst.name, worst.max_rel_error, worst.worst)));
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_validation() {
        let mut c = PipelineConfig::default();
        c.apply_override("object.schedule.epochs=7").unwrap();
        assert_eq!(c.object.schedule.epochs, 7);
        c.apply_override("paths.data=elsewhere").unwrap();
        assert_eq!(c.paths.data, PathBuf::from("elsewhere"));
        assert!(matches!(c.apply_override("object.schedule.epoch=7"), Err(Error::Config(_))));
        assert!(matches!(c.apply_override("object.loss.beta=\"x\""), Err(Error::Config(_))));
        assert!(c.apply_override("version=2").is_err());
        assert!(c.apply_override("nonsense").is_err());
        let text = c.to_json();
        assert_eq!(PipelineConfig::from_json(text.as_bytes(), Path::new("c.json")).unwrap(), c);
        let unknown = text.replacen("\"seed\"", "\"extra\": 1, \"seed\"", 1);
        assert!(matches!(PipelineConfig::from_json(unknown.as_bytes(), Path::new("c.json")), Err(Error::Json { .. })));
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::parse(s.name()), Some(s));
        }
        assert_eq!(Stage::parse("train"), None);
    }

    #[test]
    fn missing_inputs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let c = PipelineConfig::smoke();
        let layout = Layout::new(dir.path(), &c.paths);
        assert!(matches!(run_stage(Stage::Segment, &c, &layout), Err(Error::MissingInput(_))));
        assert!(matches!(run_stage(Stage::TrainObject, &c, &layout), Err(Error::MissingInput(_))));
    }
}
