//! Background model: masked training images from the foreground ensemble
//! and an appearance-only β-VAE.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{self, RleMask};
use crate::image::{resize_bilinear, Grid, ImageF, Mask, RgbImage};
use crate::object::{batch_ranges, batch_tensor, EpochLog, TrainedModel};
use crate::rng::{derive_seed, rng_from_seed, standard_normal_vec};
use crate::tensor::{AdamConfig, Real, Tensor};
use crate::vae::{Decoded, LossTerms, ReconLoss, Schedule, Vae, VaeOptimizer, VaeParams, VaeSpec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundSource {
    pub video: String,
    pub frame: usize,
}

/// Low-resolution background image with foreground filled by the mean
/// background color, and the downscaled background mask.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundSample {
    pub image: ImageF,
    pub mask: Mask,
    pub source: BackgroundSource,
}

/// Fills foreground pixels with the mean background color, then downscales
/// image and background coverage; coverage above 0.5 counts as background.
pub fn prepare_background(
    frame: &RgbImage,
    foreground: &Mask,
    width: usize,
    height: usize,
    source: BackgroundSource,
) -> Result<BackgroundSample> {
    if !frame.same_size(foreground) {
        return Err(Error::Shape("foreground mask does not match the frame".into()));
    }
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for (px, &fg) in frame.data.iter().zip(&foreground.data) {
        if !fg {
            for c in 0..3 {
                sum[c] += u64::from(px[c]);
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate(format!("frame {} of {} is all foreground", source.frame, source.video)));
    }
    let mean = sum.map(|s| s as f64 / n as f64 / 255.0);
    let mut img = ImageF::from_rgb(frame);
    for y in 0..frame.height {
        for x in 0..frame.width {
            if *foreground.get(x, y) {
                for (c, m) in mean.iter().enumerate() {
                    *img.at_mut(c, x, y) = *m as f32;
                }
            }
        }
    }
    let cover = ImageF::from_vec(1, frame.width, frame.height, foreground.data.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect())?;
    let cover = resize_bilinear(&cover, width, height);
    Ok(BackgroundSample {
        image: resize_bilinear(&img, width, height),
        mask: Grid::from_vec(width, height, cover.data.iter().map(|&v| v > 0.5).collect())?,
        source,
    })
}

/// Samples at frames `every, 2·every, …` of one video.
pub fn background_samples(
    video: &str,
    frames: &[RgbImage],
    foreground: &[Mask],
    every: usize,
    width: usize,
    height: usize,
) -> Result<Vec<BackgroundSample>> {
    if frames.len() != foreground.len() || every == 0 {
        return Err(Error::Input("background samples need one mask per frame and a positive stride".into()));
    }
    let mut out = Vec::new();
    for t in (every..frames.len()).step_by(every) {
        match prepare_background(&frames[t], &foreground[t], width, height, BackgroundSource { video: video.into(), frame: t }) {
            Ok(s) => out.push(s),
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// `Σ m·‖c − ĉ‖² / Σ m` for one sample, the same sum with gradients for a
/// batch (mean over samples).
pub fn background_recon_loss<T: Real>(targets: &[&BackgroundSample], decoded: &Decoded<T>) -> Result<ReconLoss<T>> {
    let b = targets.len();
    let shape = decoded.appearance.shape();
    if b == 0 || shape[0] != b {
        return Err(Error::Shape(format!("{b} targets for a batch of {}", shape[0])));
    }
    let plane = shape[2] * shape[3];
    let app = decoded.appearance.data();
    let mut d = vec![T::zero(); app.len()];
    let mut total = 0.0;
    for (s, t) in targets.iter().enumerate() {
        if t.image.width * t.image.height != plane {
            return Err(Error::Shape("sample size differs from the network".into()));
        }
        let z = t.mask.count() as f64;
        if z == 0.0 {
            return Err(Error::Degenerate(format!("background sample {:?} has an empty mask", t.source)));
        }
        let mut l = 0.0;
        for p in 0..plane {
            if !t.mask.data[p] {
                continue;
            }
            for c in 0..3 {
                let i = (s * 3 + c) * plane + p;
                let e = app[i].as_f64() - f64::from(t.image.data[c * plane + p]);
                l += e * e;
                d[i] = T::of(2.0 * e / z / b as f64);
            }
        }
        total += l / z;
    }
    Ok(ReconLoss { appearance: total / b as f64, mask: 0.0, d_appearance: d, d_mask_logits: None })
}

pub fn background_batch_loss<T: Real>(
    vae: &Vae,
    p: &VaeParams<T>,
    targets: &[&BackgroundSample],
    eps: Option<&[T]>,
    beta: f64,
) -> Result<(LossTerms, VaeParams<T>)> {
    let x = batch_tensor::<T>(&targets.iter().map(|t| &t.image).collect::<Vec<_>>())?;
    vae.loss_and_grad(p, &x, eps, beta, |d| background_recon_loss(targets, d))
}

/// Single-sample loss on a decoded image, for evaluation.
pub fn background_loss(sample: &BackgroundSample, recon: &ImageF, mu: &[f32], logvar: &[f32], beta: f64) -> Result<LossTerms> {
    let t = Tensor::new(vec![1, 3, recon.height, recon.width], recon.data.iter().map(|&v| f64::from(v)).collect())?;
    let rl = background_recon_loss(&[sample], &Decoded { appearance: t, mask_logits: None })?;
    let kl = crate::tensor::kl_standard_normal(mu, logvar)?.as_f64();
    Ok(LossTerms { appearance: rl.appearance, mask: 0.0, kl, total: rl.appearance + beta * kl })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundTrainConfig {
    pub network: VaeSpec,
    pub beta: f64,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    /// Take one sample every `every` frames.
    pub every: usize,
}

impl BackgroundTrainConfig {
    pub fn desk() -> Self {
        Self {
            network: VaeSpec::desk_background(),
            beta: 1e-3,
            schedule: Schedule { epochs: 60, batch_size: 32, lr: 1e-3, lr_drop_epoch: Some(40), lr_drop_factor: 10.0 },
            adam: AdamConfig::default(),
            every: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.network.mask_decoder || self.beta < 0.0 || self.every == 0 {
            return Err(Error::Config(format!("invalid background config {self:?}")));
        }
        Ok(())
    }
}

impl Default for BackgroundTrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

pub fn train_background_model(samples: &[BackgroundSample], cfg: &BackgroundTrainConfig, seed: u64) -> Result<TrainedModel> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Input("no background samples".into()));
    }
    let vae = Vae::new(cfg.network.clone())?;
    let mut params = vae.init_params::<f32>(&mut rng_from_seed(derive_seed(seed, "background-init", 0)));
    let mut opt = VaeOptimizer::new(cfg.adam, &params);
    let mut log = Vec::with_capacity(cfg.schedule.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.schedule.epochs {
        let mut rng = rng_from_seed(derive_seed(seed, "background-epoch", epoch as u64));
        let lr = cfg.schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut acc = [0.0f64; 3];
        for (bi, r) in batch_ranges(order.len(), cfg.schedule.batch_size).into_iter().enumerate() {
            let targets: Vec<&BackgroundSample> = order[r].iter().map(|&i| &samples[i]).collect();
            let eps = standard_normal_vec(&mut rng, targets.len() * vae.latent_dim());
            let abort = |e: Error| Error::Numeric(format!("epoch {epoch} batch {bi}: {e}"));
            let (terms, g) = background_batch_loss(&vae, &params, &targets, Some(&eps), cfg.beta).map_err(abort)?;
            if !g.is_finite() {
                return Err(abort(Error::NonFinite { layer: 0, detail: "gradient".into() }));
            }
            opt.step(&mut params, &g, lr)?;
            let n = targets.len() as f64;
            for (a, v) in acc.iter_mut().zip([terms.appearance, terms.kl, terms.total]) {
                *a += v * n;
            }
        }
        let n = order.len() as f64;
        log.push(EpochLog { epoch, lr, appearance: acc[0] / n, mask: 0.0, kl: acc[1] / n, total: acc[2] / n });
    }
    Ok(TrainedModel { vae, params, log })
}

/// Decodes `z` to a low-resolution background.
pub fn sample_background(vae: &Vae, p: &VaeParams<f32>, z: &[f32]) -> Result<ImageF> {
    let s = vae.spec();
    if z.len() != s.latent_dim {
        return Err(Error::Shape(format!("latent has {} values, expected {}", z.len(), s.latent_dim)));
    }
    let d = vae.decode(p, &Tensor::new(vec![1, s.latent_dim], z.to_vec())?)?;
    ImageF::from_vec(3, s.width, s.height, d.appearance.into_data())
}

/// Posterior means of a batch of images.
pub fn encode_images(vae: &Vae, p: &VaeParams<f32>, images: &[&ImageF]) -> Result<Vec<Vec<f32>>> {
    let l = vae.latent_dim();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        let (mu, _) = vae.encode(p, &batch_tensor::<f32>(chunk)?)?;
        out.extend(mu.chunks(l).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Bilinear upsampling to the scene canvas.
pub fn upsample(img: &ImageF, width: usize, height: usize) -> ImageF {
    resize_bilinear(img, width, height)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    source: BackgroundSource,
    mask: RleMask,
}

pub fn save_samples(dir: &Path, samples: &[BackgroundSample]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let img = dir.join(format!("bg_{i:06}.ppm"));
        formats::write_file(&img, &formats::encode_ppm(&s.image.to_rgb()))?;
        let js = dir.join(format!("bg_{i:06}.json"));
        let side = Sidecar { source: s.source.clone(), mask: formats::rle_encode(&s.mask) };
        formats::write_file(&js, &serde_json::to_vec(&side).expect("serializable"))?;
        out.extend([img, js]);
    }
    Ok(out)
}

pub fn load_samples(dir: &Path) -> Result<Vec<BackgroundSample>> {
    let mut out = Vec::new();
    for i in 0.. {
        let img = dir.join(format!("bg_{i:06}.ppm"));
        if !img.exists() {
            break;
        }
        let js = dir.join(format!("bg_{i:06}.json"));
        let side: Sidecar = serde_json::from_slice(&formats::read_file(&js)?).map_err(|e| Error::Json { path: js.clone(), source: e })?;
        let image = ImageF::from_rgb(&formats::load_ppm(&img)?);
        let mask = formats::rle_decode(&side.mask)?;
        if !image.data.is_empty() && (mask.width, mask.height) != (image.width, image.height) {
            return Err(Error::Format(format!("{}: mask size differs from image", js.display())));
        }
        out.push(BackgroundSample { image, mask, source: side.source });
    }
    Ok(out)
}
