//! Dead-leaves scene sampler: latent priors, mask sharpening, entropy
//! rejection, layered composition, interventions and nearest-neighbour
//! conditional sampling.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::background::{sample_background, upsample};
use crate::error::{Error, Result};
use crate::formats;
use crate::image::{resize_bilinear, resize_nearest, Grid, ImageF, Mask};
use crate::object::sample_object;
use crate::rng::{rng_from_seed, standard_normal_vec, Rng};
use crate::vae::{Vae, VaeParams};

/// `σ(x / τ)` per pixel.
pub fn sharpen_mask(logits: &Grid<f32>, tau: f64) -> Result<Grid<f32>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("mask temperature must be positive, got {tau}")));
    }
    Ok(logits.map(|&x| (1.0 / (1.0 + (-f64::from(x) / tau).exp())) as f32))
}

fn binary_entropy_bits(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyConvention {
    /// Sum over pixels.
    #[default]
    TotalBits,
    /// Mean over pixels.
    PerPixel,
}

pub fn mask_entropy(mask: &Grid<f32>, convention: EntropyConvention) -> f64 {
    let total: f64 = mask.data.iter().map(|&p| binary_entropy_bits(f64::from(p))).sum();
    match convention {
        EntropyConvention::TotalBits => total,
        EntropyConvention::PerPixel if mask.data.is_empty() => 0.0,
        EntropyConvention::PerPixel => total / mask.data.len() as f64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CountPrior {
    /// Uniform over `1..=max`.
    Uniform { max: usize },
    /// `probs[k]` is the probability of `k` objects.
    Empirical { probs: Vec<f64> },
}

impl CountPrior {
    /// Categorical fit to observed per-video object counts.
    pub fn fit(counts: &[usize]) -> Result<Self> {
        let max = *counts.iter().max().ok_or_else(|| Error::Input("no counts to fit".into()))?;
        let mut probs = vec![0.0; max + 1];
        for &c in counts {
            probs[c] += 1.0;
        }
        probs.iter_mut().for_each(|p| *p /= counts.len() as f64);
        Ok(Self::Empirical { probs })
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        match self {
            Self::Uniform { max } => rng.random_range(1..=*max),
            Self::Empirical { probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return k;
                    }
                }
                probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Uniform { max } => *max >= 1,
            Self::Empirical { probs } => {
                !probs.is_empty() && probs.iter().all(|p| *p >= 0.0) && (probs.iter().sum::<f64>() - 1.0).abs() < 1e-9
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid count prior {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub canvas_width: usize,
    pub canvas_height: usize,
    pub tau: f64,
    pub entropy_threshold: f64,
    pub entropy_convention: EntropyConvention,
    pub count: CountPrior,
    /// Object width range in canvas pixels; height is half the width.
    pub min_width: usize,
    pub max_width: usize,
    pub max_attempts: usize,
}

impl SamplerConfig {
    pub fn desk() -> Self {
        Self {
            canvas_width: 120,
            canvas_height: 80,
            tau: 0.1,
            entropy_threshold: 100.0,
            entropy_convention: EntropyConvention::TotalBits,
            count: CountPrior::Uniform { max: 4 },
            min_width: 16,
            max_width: 48,
            max_attempts: 200,
        }
    }

    pub fn full() -> Self {
        Self { canvas_width: 480, canvas_height: 320, min_width: 64, max_width: 192, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        self.count.validate()?;
        let ok = self.tau > 0.0
            && self.entropy_threshold >= 0.0
            && self.max_attempts >= 1
            && self.min_width >= 2
            && self.min_width <= self.max_width
            && self.canvas_width > 0
            && self.canvas_height > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid sampler config {self:?}")))
        }
    }

    pub fn accepts(&self, entropy: f64) -> bool {
        entropy <= self.entropy_threshold
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectPlacement {
    pub z_app: Vec<f32>,
    /// Object center in canvas pixels.
    pub position: [f64; 2],
    /// Width and height in canvas pixels.
    pub scale: [usize; 2],
}

/// Placements are back to front: later entries occlude earlier ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub z_bg: Vec<f32>,
    pub placements: Vec<ObjectPlacement>,
}

impl SceneSpec {
    pub fn count(&self) -> usize {
        self.placements.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        formats::write_file(path, &serde_json::to_vec_pretty(self).expect("serializable"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_slice(&formats::read_file(path)?).map_err(|e| Error::Json { path: path.into(), source: e })
    }
}

/// One object layer at canvas scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub appearance: ImageF,
    pub mask: Mask,
    /// Canvas coordinates of the layer's top-left pixel.
    pub x0: i64,
    pub y0: i64,
}

impl Layer {
    /// Rescales a decoded object to `scale` (bilinear appearance, nearest
    /// mask) and centers it at `position`.
    pub fn place(appearance: &ImageF, mask: &Mask, position: [f64; 2], scale: [usize; 2]) -> Self {
        let [w, h] = scale;
        Self {
            appearance: resize_bilinear(appearance, w, h),
            mask: resize_nearest(mask, w, h),
            x0: (position[0] - w as f64 / 2.0).round() as i64,
            y0: (position[1] - h as f64 / 2.0).round() as i64,
        }
    }

    fn covers(&self, x: usize, y: usize) -> Option<(usize, usize)> {
        let (lx, ly) = (x as i64 - self.x0, y as i64 - self.y0);
        if lx < 0 || ly < 0 || lx >= self.mask.width as i64 || ly >= self.mask.height as i64 {
            return None;
        }
        let (lx, ly) = (lx as usize, ly as usize);
        self.mask.get(lx, ly).then_some((lx, ly))
    }
}

/// Composed image and, per pixel, the index of the visible layer (`None`
/// for background).
#[derive(Clone, Debug, PartialEq)]
pub struct Composition {
    pub image: ImageF,
    pub provenance: Grid<Option<usize>>,
}

/// Dead-leaves composition: each pixel shows the last layer covering it.
pub fn compose(background: &ImageF, layers: &[Layer]) -> Result<Composition> {
    if background.channels != 3 || layers.iter().any(|l| l.appearance.channels != 3 || (l.appearance.width, l.appearance.height) != (l.mask.width, l.mask.height)) {
        return Err(Error::Shape("composition needs RGB layers with matching masks".into()));
    }
    let (w, h) = (background.width, background.height);
    let mut image = background.clone();
    let mut provenance = Grid::filled(w, h, None);
    for y in 0..h {
        for x in 0..w {
            for (k, layer) in layers.iter().enumerate().rev() {
                if let Some((lx, ly)) = layer.covers(x, y) {
                    for c in 0..3 {
                        *image.at_mut(c, x, y) = layer.appearance.at(c, lx, ly);
                    }
                    provenance.set(x, y, Some(k));
                    break;
                }
            }
        }
    }
    Ok(Composition { image, provenance })
}

/// Number of layers covering each pixel.
pub fn coverage(width: usize, height: usize, layers: &[Layer]) -> Grid<usize> {
    Grid::from_fn(width, height, |x, y| layers.iter().filter(|l| l.covers(x, y).is_some()).count())
}

/// A trained VAE with its parameters.
pub struct Model {
    pub vae: Vae,
    pub params: VaeParams<f32>,
}

pub struct SceneModels {
    pub object: Model,
    pub background: Model,
}

/// Decoded, sharpened and binarized object at model resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedObject {
    pub appearance: ImageF,
    pub probabilities: Grid<f32>,
    pub entropy: f64,
}

impl DecodedObject {
    pub fn mask(&self) -> Mask {
        self.probabilities.map(|&p| p > 0.5)
    }
}

pub fn decode_object(models: &SceneModels, z: &[f32], cfg: &SamplerConfig) -> Result<DecodedObject> {
    let s = sample_object(&models.object.vae, &models.object.params, z)?;
    let probabilities = sharpen_mask(&s.logits, cfg.tau)?;
    let entropy = mask_entropy(&probabilities, cfg.entropy_convention);
    Ok(DecodedObject { appearance: s.appearance, probabilities, entropy })
}

/// Draws latents from `draw` until one decodes to a mask within the
/// entropy threshold.
fn rejection_sample(
    models: &SceneModels,
    cfg: &SamplerConfig,
    rng: &mut Rng,
    mut draw: impl FnMut(&mut Rng) -> Vec<f32>,
) -> Result<Vec<f32>> {
    for _ in 0..cfg.max_attempts {
        let z = draw(rng);
        if cfg.accepts(decode_object(models, &z, cfg)?.entropy) {
            return Ok(z);
        }
    }
    Err(Error::Sampling(format!(
        "no object latent within {} bits after {} attempts",
        cfg.entropy_threshold, cfg.max_attempts
    )))
}

fn sample_position(cfg: &SamplerConfig, rng: &mut Rng) -> [f64; 2] {
    [rng.random_range(0.0..cfg.canvas_width as f64), rng.random_range(0.0..cfg.canvas_height as f64)]
}

fn sample_scale(cfg: &SamplerConfig, rng: &mut Rng) -> [usize; 2] {
    let w = rng.random_range(cfg.min_width..=cfg.max_width);
    [w, (w / 2).max(1)]
}

fn prior_placement(models: &SceneModels, cfg: &SamplerConfig, rng: &mut Rng) -> Result<ObjectPlacement> {
    let l = models.object.vae.latent_dim();
    let z_app = rejection_sample(models, cfg, rng, |r| standard_normal_vec(r, l))?;
    Ok(ObjectPlacement { z_app, position: sample_position(cfg, rng), scale: sample_scale(cfg, rng) })
}

/// Independent-prior scene: `z_bg`, K, then per object appearance (with
/// rejection), position and scale.
pub fn sample_scene_spec(models: &SceneModels, cfg: &SamplerConfig, seed: u64) -> Result<SceneSpec> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let z_bg = standard_normal_vec(&mut rng, models.background.vae.latent_dim());
    let k = cfg.count.sample(&mut rng);
    let placements = (0..k).map(|_| prior_placement(models, cfg, &mut rng)).collect::<Result<_>>()?;
    Ok(SceneSpec { z_bg, placements })
}

pub fn render_background(models: &SceneModels, z_bg: &[f32], cfg: &SamplerConfig) -> Result<ImageF> {
    let low = sample_background(&models.background.vae, &models.background.params, z_bg)?;
    Ok(upsample(&low, cfg.canvas_width, cfg.canvas_height))
}

pub fn scene_layers(models: &SceneModels, spec: &SceneSpec, cfg: &SamplerConfig) -> Result<Vec<Layer>> {
    spec.placements
        .iter()
        .map(|p| {
            let d = decode_object(models, &p.z_app, cfg)?;
            Ok(Layer::place(&d.appearance, &d.mask(), p.position, p.scale))
        })
        .collect()
}

pub fn render_scene(models: &SceneModels, spec: &SceneSpec, cfg: &SamplerConfig) -> Result<Composition> {
    compose(&render_background(models, &spec.z_bg, cfg)?, &scene_layers(models, spec, cfg)?)
}

pub fn sample_scene(models: &SceneModels, cfg: &SamplerConfig, seed: u64) -> Result<(SceneSpec, Composition)> {
    let spec = sample_scene_spec(models, cfg, seed)?;
    let comp = render_scene(models, &spec, cfg)?;
    Ok((spec, comp))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Intervention {
    /// Truncates, or appends placements drawn from the prior.
    SetCount { count: usize, seed: u64 },
    ResampleAppearance { index: usize, seed: u64 },
    SetScale { index: usize, width: usize },
    SwapBackground { z_bg: Vec<f32> },
    ResamplePositions { seed: u64 },
}

pub fn intervene(models: &SceneModels, spec: &SceneSpec, cfg: &SamplerConfig, iv: &Intervention) -> Result<SceneSpec> {
    let mut out = spec.clone();
    let check = |i: usize| if i < spec.count() { Ok(()) } else { Err(Error::OutOfRange { index: i, len: spec.count() }) };
    match iv {
        Intervention::SetCount { count, seed } => {
            let mut rng = rng_from_seed(*seed);
            out.placements.truncate(*count);
            while out.placements.len() < *count {
                out.placements.push(prior_placement(models, cfg, &mut rng)?);
            }
        }
        Intervention::ResampleAppearance { index, seed } => {
            check(*index)?;
            let l = models.object.vae.latent_dim();
            out.placements[*index].z_app = rejection_sample(models, cfg, &mut rng_from_seed(*seed), |r| standard_normal_vec(r, l))?;
        }
        Intervention::SetScale { index, width } => {
            check(*index)?;
            if *width < 2 {
                return Err(Error::Config(format!("object width {width} too small")));
            }
            out.placements[*index].scale = [*width, width / 2];
        }
        Intervention::SwapBackground { z_bg } => {
            if z_bg.len() != spec.z_bg.len() {
                return Err(Error::Shape(format!("background latent has {} values, expected {}", z_bg.len(), spec.z_bg.len())));
            }
            out.z_bg = z_bg.clone();
        }
        Intervention::ResamplePositions { seed } => {
            let mut rng = rng_from_seed(*seed);
            for p in &mut out.placements {
                p.position = sample_position(cfg, &mut rng);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankEntry {
    pub video: String,
    pub z_bg: Vec<f32>,
    pub objects: Vec<Vec<f32>>,
}

/// Background and object latents of training videos.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentBank {
    pub entries: Vec<BankEntry>,
}

impl LatentBank {
    pub fn save(&self, path: &Path) -> Result<()> {
        formats::write_file(path, &serde_json::to_vec(self).expect("serializable"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_slice(&formats::read_file(path)?).map_err(|e| Error::Json { path: path.into(), source: e })
    }

    /// Indices of the `⌈fraction·N⌉` entries nearest to `z_bg` in L²,
    /// ties broken by index.
    pub fn neighbours(&self, z_bg: &[f32], fraction: f64) -> Result<Vec<usize>> {
        if self.entries.is_empty() {
            return Err(Error::Input("latent bank is empty".into()));
        }
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("neighbour fraction {fraction} outside (0, 1]")));
        }
        let mut d: Vec<(f64, usize)> = Vec::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            if e.z_bg.len() != z_bg.len() {
                return Err(Error::Shape(format!("bank entry {i} has a {}-dim background latent", e.z_bg.len())));
            }
            let s: f64 = e.z_bg.iter().zip(z_bg).map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2)).sum();
            d.push((s, i));
        }
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = ((fraction * self.entries.len() as f64).ceil() as usize).clamp(1, self.entries.len());
        Ok(d[..k].iter().map(|p| p.1).collect())
    }
}

/// Scene conditioned on `z_bg`: the object count comes from a random
/// neighbour entry, object latents from the pooled neighbour objects
/// (with entropy rejection), positions and scales from the prior.
pub fn conditional_sample(
    models: &SceneModels,
    bank: &LatentBank,
    z_bg: &[f32],
    fraction: f64,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<SceneSpec> {
    cfg.validate()?;
    let nb = bank.neighbours(z_bg, fraction)?;
    let pool: Vec<&Vec<f32>> = nb.iter().flat_map(|&i| &bank.entries[i].objects).collect();
    let mut rng = rng_from_seed(seed);
    let k = bank.entries[nb[rng.random_range(0..nb.len())]].objects.len();
    if k > 0 && pool.is_empty() {
        return Err(Error::Sampling("no object latents among the neighbours".into()));
    }
    let mut placements = Vec::with_capacity(k);
    for _ in 0..k {
        let z_app = rejection_sample(models, cfg, &mut rng, |r| pool[r.random_range(0..pool.len())].clone())?;
        placements.push(ObjectPlacement { z_app, position: sample_position(cfg, &mut rng), scale: sample_scale(cfg, &mut rng) });
    }
    Ok(SceneSpec { z_bg: z_bg.to_vec(), placements })
}
