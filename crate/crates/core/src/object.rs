//! Object model: crop extraction, artificial occlusions, the masked β-VAE
//! objective and its training loop.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fishbowl::VideoSample;
use crate::formats::{self, RleMask};
use crate::image::{resize_bilinear, resize_nearest, BBox, Grid, ImageF, LabelMap, Mask, RgbImage};
use crate::rng::{derive_seed, rng_from_seed, standard_normal_vec, Rng};
use crate::tensor::{kl_standard_normal, AdamConfig, Real, Tensor};
use crate::vae::{Decoded, LossTerms, ReconLoss, Schedule, Vae, VaeOptimizer, VaeParams, VaeSpec, PROB_CLAMP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropConfig {
    pub width: usize,
    pub height: usize,
    /// Minimum object area in source pixels.
    pub min_area: usize,
    /// Minimum distance of the bounding box to the frame edge.
    pub min_border: usize,
}

impl CropConfig {
    pub fn desk() -> Self {
        Self { width: 32, height: 16, min_area: 32, min_border: 2 }
    }

    pub fn full() -> Self {
        Self { width: 128, height: 64, min_area: 64, min_border: 16 }
    }

    pub fn qualifies(&self, area: usize, bbox: &BBox, frame_w: usize, frame_h: usize) -> bool {
        area >= self.min_area && bbox.border_distance(frame_w, frame_h) >= self.min_border
    }
}

impl Default for CropConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSource {
    pub video: String,
    pub frame: usize,
    pub label: u16,
    pub bbox: BBox,
}

/// A rescaled object crop with its background, object and other-object
/// masks.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectCrop {
    pub image: ImageF,
    pub m0: Mask,
    pub m1: Mask,
    pub m_other: Mask,
    pub source: CropSource,
}

impl ObjectCrop {
    /// Cuts `bbox` out of a frame and its label map and rescales it.
    pub fn cut(frame: &RgbImage, labels: &LabelMap, source: CropSource, cfg: &CropConfig) -> Self {
        let bb = source.bbox;
        let image = resize_bilinear(&ImageF::from_rgb(&frame.crop(&bb)), cfg.width, cfg.height);
        let l = resize_nearest(&labels.crop(&bb), cfg.width, cfg.height);
        let m1 = l.mask_of(source.label);
        let m0 = l.mask_of(0);
        let m_other = l.map(|&v| v != 0 && v != source.label);
        Self { image, m0, m1, m_other, source }
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width(), self.height());
        if self.image.channels != 3 || [&self.m0, &self.m1, &self.m_other].iter().any(|m| m.width != w || m.height != h) {
            return Err(Error::Shape("crop image and masks disagree".into()));
        }
        for p in 0..w * h {
            if u8::from(self.m0.data[p]) + u8::from(self.m1.data[p]) + u8::from(self.m_other.data[p]) != 1 {
                return Err(Error::Input(format!("crop masks do not partition pixel {p}")));
            }
        }
        Ok(())
    }
}

/// Every (object, frame) of a segmented video whose mask passes the area
/// and border filters, in frame then label order.
pub fn extract_crops(video: &str, frames: &[RgbImage], labels: &[LabelMap], cfg: &CropConfig) -> Result<Vec<ObjectCrop>> {
    if frames.len() != labels.len() {
        return Err(Error::Shape(format!("{} frames vs {} label maps", frames.len(), labels.len())));
    }
    let mut out = Vec::new();
    for (t, (f, l)) in frames.iter().zip(labels).enumerate() {
        if !f.same_size(l) {
            return Err(Error::Shape(format!("frame {t}: label map size differs")));
        }
        let n = usize::from(l.max_label()) + 1;
        let mut area = vec![0usize; n];
        let mut boxes: Vec<Option<BBox>> = vec![None; n];
        for y in 0..l.height {
            for x in 0..l.width {
                let k = usize::from(*l.get(x, y));
                area[k] += 1;
                boxes[k] = Some(match boxes[k] {
                    None => BBox { x0: x, y0: y, x1: x, y1: y },
                    Some(b) => BBox { x0: b.x0.min(x), y0: b.y0.min(y), x1: b.x1.max(x), y1: b.y1.max(y) },
                });
            }
        }
        for k in 1..n {
            let Some(bb) = boxes[k] else { continue };
            if !cfg.qualifies(area[k], &bb, f.width, f.height) {
                continue;
            }
            let src = CropSource { video: video.to_string(), frame: t, label: k as u16, bbox: bb };
            let crop = ObjectCrop::cut(f, l, src, cfg);
            if crop.m1.count() > 0 {
                out.push(crop);
            }
        }
    }
    Ok(out)
}

/// A crop taken at the ground-truth unoccluded box together with the
/// amodal targets it is scored against.
#[derive(Clone, Debug)]
pub struct EvalCrop {
    pub crop: ObjectCrop,
    pub gt_mask: Mask,
    pub gt_rgb: RgbImage,
    /// `|visible| / |unoccluded|` at source resolution.
    pub visible_fraction: f64,
}

pub fn extract_eval_crops(name: &str, video: &VideoSample, cfg: &CropConfig) -> Vec<EvalCrop> {
    let (w, h) = (video.width, video.height);
    let mut out = Vec::new();
    for t in 0..video.num_frames() {
        for (k, obj) in video.objects.iter().enumerate() {
            let full = obj.unoccluded_mask(t, w, h);
            let Some(bb) = full.bbox() else { continue };
            let area = full.count();
            let visible = video.occluded_mask(k, t).count();
            if visible == 0 || !cfg.qualifies(area, &bb, w, h) {
                continue;
            }
            let src = CropSource { video: name.to_string(), frame: t, label: obj.label, bbox: bb };
            let crop = ObjectCrop::cut(&video.frames[t], &video.labels[t], src, cfg);
            if crop.m1.count() == 0 {
                continue;
            }
            out.push(EvalCrop {
                crop,
                gt_mask: resize_nearest(&full.crop(&bb), cfg.width, cfg.height),
                gt_rgb: resize_nearest(&obj.appearance(t, w, h).crop(&bb), cfg.width, cfg.height),
                visible_fraction: visible as f64 / area as f64,
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugMode {
    None,
    Cutout,
    OtherObject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub mode: AugMode,
    pub min_rects: usize,
    pub max_rects: usize,
    /// Rectangle area as a fraction of the crop area.
    pub min_area_frac: f64,
    pub max_area_frac: f64,
    pub fill: f32,
    /// Donor shift range as a fraction of the crop size, per axis.
    pub shift_frac: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            mode: AugMode::OtherObject,
            min_rects: 1,
            max_rects: 3,
            min_area_frac: 0.1,
            max_area_frac: 0.4,
            fill: 0.5,
            shift_frac: 0.25,
        }
    }
}

impl AugmentationSpec {
    pub fn with_mode(mode: AugMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.min_rects <= self.max_rects
            && 0.0 < self.min_area_frac
            && self.min_area_frac <= self.max_area_frac
            && self.max_area_frac <= 1.0
            && (0.0..=1.0).contains(&self.fill)
            && (0.0..=1.0).contains(&self.shift_frac);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation {self:?}")))
        }
    }
}

/// Paints `count` grey rectangles of random size and place.
pub fn cutout(image: &mut ImageF, count: usize, spec: &AugmentationSpec, rng: &mut Rng) {
    let (w, h) = (image.width, image.height);
    for _ in 0..count {
        let a = rng.random_range(spec.min_area_frac..=spec.max_area_frac);
        let r: f64 = rng.random_range(0.5..=2.0);
        let rw = ((w as f64 * (a * r).sqrt()).round() as usize).clamp(1, w);
        let rh = ((h as f64 * (a / r).sqrt()).round() as usize).clamp(1, h);
        let x0 = rng.random_range(0..=w - rw);
        let y0 = rng.random_range(0..=h - rh);
        for c in 0..image.channels {
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    *image.at_mut(c, x, y) = spec.fill;
                }
            }
        }
    }
}

/// Pastes the donor's object pixels shifted by `(dx, dy)`.
pub fn paste_object(image: &mut ImageF, donor: &ObjectCrop, dx: i64, dy: i64) {
    let (w, h) = (image.width.min(donor.width()) as i64, image.height.min(donor.height()) as i64);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x - dx, y - dy);
            if sx < 0 || sy < 0 || sx >= w || sy >= h || !*donor.m1.get(sx as usize, sy as usize) {
                continue;
            }
            for c in 0..image.channels {
                *image.at_mut(c, x as usize, y as usize) = donor.image.at(c, sx as usize, sy as usize);
            }
        }
    }
}

/// Augmented input images for a batch. Loss targets are untouched.
pub fn augment_batch(batch: &[&ObjectCrop], spec: &AugmentationSpec, rng: &mut Rng) -> Result<Vec<ImageF>> {
    let mut out: Vec<ImageF> = batch.iter().map(|c| c.image.clone()).collect();
    match spec.mode {
        AugMode::None => {}
        AugMode::Cutout => {
            for img in &mut out {
                let n = rng.random_range(spec.min_rects..=spec.max_rects);
                cutout(img, n, spec, rng);
            }
        }
        AugMode::OtherObject => {
            if batch.len() < 2 {
                return Err(Error::Input("other-object augmentation needs two crops per batch".into()));
            }
            for (i, img) in out.iter_mut().enumerate() {
                let mut j = rng.random_range(0..batch.len() - 1);
                if j >= i {
                    j += 1;
                }
                let sx = (spec.shift_frac * img.width as f64).round() as i64;
                let sy = (spec.shift_frac * img.height as f64).round() as i64;
                let dx = rng.random_range(-sx..=sx);
                let dy = rng.random_range(-sy..=sy);
                paste_object(img, batch[j], dx, dy);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 1e-4, gamma: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta >= 0.0 && self.gamma >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be nonnegative: {self:?}")))
        }
    }
}

/// Model output for one crop.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconOutput {
    pub appearance: ImageF,
    /// Mask probabilities, clamped into `[PROB_CLAMP, 1 − PROB_CLAMP]`.
    pub mask: Grid<f32>,
    pub mu: Vec<f32>,
    pub logvar: Vec<f32>,
}

impl ReconOutput {
    pub fn binary_mask(&self, threshold: f32) -> Mask {
        self.mask.map(|&p| p > threshold)
    }
}

fn bce(y: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn normalizers(crop: &ObjectCrop) -> Result<(f64, f64)> {
    let z_img = crop.m1.count() as f64;
    let z_mask = z_img + crop.m0.count() as f64;
    if z_img == 0.0 || z_mask == 0.0 {
        return Err(Error::Degenerate(format!("crop {:?} has an empty object mask", crop.source)));
    }
    Ok((z_img, z_mask))
}

/// Per-crop loss terms; `mask` holds the unweighted mask loss and
/// `total = appearance + γ·mask + β·KL`.
pub fn object_loss(crop: &ObjectCrop, recon: &ReconOutput, cfg: &LossConfig) -> Result<LossTerms> {
    let (w, h) = (crop.width(), crop.height());
    if recon.appearance.width != w || recon.appearance.height != h || !recon.mask.same_size(&crop.m1) {
        return Err(Error::Shape("reconstruction does not match the crop".into()));
    }
    let (z_img, z_mask) = normalizers(crop)?;
    let (mut la, mut lm) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let m1 = *crop.m1.get(x, y);
            if m1 {
                for c in 0..3 {
                    let d = f64::from(crop.image.at(c, x, y)) - f64::from(recon.appearance.at(c, x, y));
                    la += d * d;
                }
            }
            if m1 || *crop.m0.get(x, y) {
                lm += bce(f64::from(u8::from(m1)), f64::from(*recon.mask.get(x, y)));
            }
        }
    }
    let (appearance, mask) = (la / z_img, lm / z_mask);
    let kl = kl_standard_normal(&recon.mu, &recon.logvar)?.as_f64();
    Ok(LossTerms { appearance, mask, kl, total: appearance + cfg.gamma * mask + cfg.beta * kl })
}

/// Batch-mean reconstruction loss over decoder outputs with gradients:
/// appearance w.r.t. the post-sigmoid values, mask w.r.t. the logits.
/// Returns the loss whose `mask` entry already carries the γ weight, plus
/// the unweighted batch-mean mask loss.
pub fn batch_recon_loss<T: Real>(targets: &[&ObjectCrop], decoded: &Decoded<T>, gamma: f64) -> Result<(ReconLoss<T>, f64)> {
    let logits = decoded.mask_logits.as_ref().ok_or_else(|| Error::Shape("object model needs a mask decoder".into()))?;
    let b = targets.len();
    let shape = decoded.appearance.shape();
    if b == 0 || shape[0] != b {
        return Err(Error::Shape(format!("{b} targets for a batch of {}", shape[0])));
    }
    let (h, w) = (shape[2], shape[3]);
    let plane = w * h;
    let app = decoded.appearance.data();
    let lg = logits.data();
    let mut d_app = vec![T::zero(); app.len()];
    let mut d_lg = vec![T::zero(); lg.len()];
    let (mut la_sum, mut lm_sum) = (0.0, 0.0);
    let inv_b = 1.0 / b as f64;
    for (s, crop) in targets.iter().enumerate() {
        if crop.width() != w || crop.height() != h {
            return Err(Error::Shape("crop size differs from the network".into()));
        }
        let (z_img, z_mask) = normalizers(crop)?;
        let (mut la, mut lm) = (0.0, 0.0);
        for p in 0..plane {
            let m1 = crop.m1.data[p];
            if m1 {
                for c in 0..3 {
                    let i = (s * 3 + c) * plane + p;
                    let d = app[i].as_f64() - f64::from(crop.image.data[c * plane + p]);
                    la += d * d;
                    d_app[i] = T::of(2.0 * d * inv_b / z_img);
                }
            }
            if m1 || crop.m0.data[p] {
                let y = f64::from(u8::from(m1));
                let i = s * plane + p;
                let q = 1.0 / (1.0 + (-lg[i].as_f64()).exp());
                lm += bce(y, q);
                if q > PROB_CLAMP && q < 1.0 - PROB_CLAMP {
                    d_lg[i] = T::of((q - y) * gamma * inv_b / z_mask);
                }
            }
        }
        la_sum += la / z_img;
        lm_sum += lm / z_mask;
    }
    let (la, lm) = (la_sum * inv_b, lm_sum * inv_b);
    Ok((ReconLoss { appearance: la, mask: gamma * lm, d_appearance: d_app, d_mask_logits: Some(d_lg) }, lm))
}

/// Stacks planar images into an `[n, c, h, w]` tensor.
pub fn batch_tensor<T: Real>(images: &[&ImageF]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::Input("empty batch".into()))?;
    let (c, h, w) = (first.channels, first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for im in images {
        if (im.channels, im.height, im.width) != (c, h, w) {
            return Err(Error::Shape("batch images differ in shape".into()));
        }
        data.extend(im.data.iter().map(|&v| T::of(f64::from(v))));
    }
    Tensor::new(vec![images.len(), c, h, w], data)
}

/// Loss terms and gradients of one batch given augmented inputs, noise
/// and unaugmented targets.
pub fn object_batch_loss<T: Real>(
    vae: &Vae,
    p: &VaeParams<T>,
    inputs: &[&ImageF],
    targets: &[&ObjectCrop],
    eps: Option<&[T]>,
    cfg: &LossConfig,
) -> Result<(LossTerms, VaeParams<T>)> {
    let x = batch_tensor::<T>(inputs)?;
    let mut raw_mask = 0.0;
    let (mut terms, g) = vae.loss_and_grad(p, &x, eps, cfg.beta, |d| {
        let (rl, lm) = batch_recon_loss(targets, d, cfg.gamma)?;
        raw_mask = lm;
        Ok(rl)
    })?;
    terms.mask = raw_mask;
    Ok((terms, g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectTrainConfig {
    pub network: VaeSpec,
    pub loss: LossConfig,
    pub schedule: Schedule,
    pub augmentation: AugmentationSpec,
    pub adam: AdamConfig,
}

impl ObjectTrainConfig {
    pub fn desk() -> Self {
        Self {
            network: VaeSpec::desk_object(),
            loss: LossConfig::default(),
            schedule: Schedule { epochs: 60, batch_size: 32, lr: 1e-3, lr_drop_epoch: Some(40), lr_drop_factor: 10.0 },
            augmentation: AugmentationSpec::default(),
            adam: AdamConfig::default(),
        }
    }

    pub fn full() -> Self {
        Self {
            network: VaeSpec::full_object(),
            schedule: Schedule { epochs: 60, batch_size: 32, lr: 1e-4, lr_drop_epoch: Some(40), lr_drop_factor: 10.0 },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.schedule.validate()?;
        self.augmentation.validate()?;
        if !self.network.mask_decoder {
            return Err(Error::Config("object network needs the mask decoder".into()));
        }
        Ok(())
    }
}

impl Default for ObjectTrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub appearance: f64,
    pub mask: f64,
    pub kl: f64,
    pub total: f64,
}

/// Per-epoch logs as JSON lines.
pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    log.iter().map(|e| serde_json::to_string(e).expect("serializable") + "\n").collect()
}

pub struct TrainedModel {
    pub vae: Vae,
    pub params: VaeParams<f32>,
    pub log: Vec<EpochLog>,
}

/// Splits `0..n` into batches of `size`, folding a trailing single item
/// into the previous batch.
pub fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(size.max(1)).map(|s| s..(s + size).min(n)).collect();
    if out.len() >= 2 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").end = last.end;
    }
    out
}

/// Two crops per object each epoch (distinct frames when available).
pub fn epoch_selection(groups: &[Vec<usize>], rng: &mut Rng) -> Vec<usize> {
    let mut sel = Vec::with_capacity(groups.len() * 2);
    for g in groups {
        if g.len() >= 2 {
            sel.extend(index::sample(rng, g.len(), 2).into_iter().map(|i| g[i]));
        } else {
            sel.extend([g[0], g[0]]);
        }
    }
    sel.shuffle(rng);
    sel
}

/// Crop indices grouped by (video, label), in key order.
pub fn group_by_object(crops: &[ObjectCrop]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<(&str, u16), Vec<usize>> = BTreeMap::new();
    for (i, c) in crops.iter().enumerate() {
        groups.entry((c.source.video.as_str(), c.source.label)).or_default().push(i);
    }
    groups.into_values().collect()
}

pub fn train_object_model(crops: &[ObjectCrop], cfg: &ObjectTrainConfig, seed: u64) -> Result<TrainedModel> {
    cfg.validate()?;
    if crops.is_empty() {
        return Err(Error::Input("no crops to train on".into()));
    }
    let vae = Vae::new(cfg.network.clone())?;
    for c in crops {
        c.validate()?;
        if (c.width(), c.height()) != (cfg.network.width, cfg.network.height) {
            return Err(Error::Shape(format!("crop {}x{} does not fit the network", c.width(), c.height())));
        }
    }
    let mut params = vae.init_params::<f32>(&mut rng_from_seed(derive_seed(seed, "object-init", 0)));
    let mut opt = VaeOptimizer::new(cfg.adam, &params);
    let groups = group_by_object(crops);
    let mut log = Vec::with_capacity(cfg.schedule.epochs);
    for epoch in 0..cfg.schedule.epochs {
        let mut rng = rng_from_seed(derive_seed(seed, "object-epoch", epoch as u64));
        let lr = cfg.schedule.lr_at(epoch);
        let sel = epoch_selection(&groups, &mut rng);
        let mut acc = [0.0f64; 4];
        for (bi, r) in batch_ranges(sel.len(), cfg.schedule.batch_size).into_iter().enumerate() {
            let targets: Vec<&ObjectCrop> = sel[r].iter().map(|&i| &crops[i]).collect();
            let aug = if targets.len() < 2 && cfg.augmentation.mode == AugMode::OtherObject {
                AugmentationSpec::with_mode(AugMode::None)
            } else {
                cfg.augmentation.clone()
            };
            let inputs = augment_batch(&targets, &aug, &mut rng)?;
            let eps = standard_normal_vec(&mut rng, targets.len() * vae.latent_dim());
            let input_refs: Vec<&ImageF> = inputs.iter().collect();
            let abort = |e: Error| Error::Numeric(format!("epoch {epoch} batch {bi}: {e}"));
            let (terms, g) = object_batch_loss(&vae, &params, &input_refs, &targets, Some(&eps), &cfg.loss).map_err(abort)?;
            if !g.is_finite() {
                return Err(abort(Error::NonFinite { layer: 0, detail: "gradient".into() }));
            }
            opt.step(&mut params, &g, lr)?;
            let n = targets.len() as f64;
            for (a, v) in acc.iter_mut().zip([terms.appearance, terms.mask, terms.kl, terms.total]) {
                *a += v * n;
            }
        }
        let n = sel.len() as f64;
        log.push(EpochLog { epoch, lr, appearance: acc[0] / n, mask: acc[1] / n, kl: acc[2] / n, total: acc[3] / n });
    }
    Ok(TrainedModel { vae, params, log })
}

fn recon_outputs(vae: &Vae, decoded: &Decoded<f32>, mu: &[f32], lv: &[f32], n: usize) -> Result<Vec<ReconOutput>> {
    let s = vae.spec();
    let (h, w, l) = (s.height, s.width, s.latent_dim);
    let plane = h * w;
    let app = decoded.appearance.data();
    let lg = decoded.mask_logits.as_ref().ok_or_else(|| Error::Shape("object model needs a mask decoder".into()))?.data();
    (0..n)
        .map(|i| {
            Ok(ReconOutput {
                appearance: ImageF::from_vec(3, w, h, app[i * 3 * plane..(i + 1) * 3 * plane].to_vec())?,
                mask: Grid::from_vec(w, h, lg[i * plane..(i + 1) * plane].iter().map(|&v| sigmoid_clamped(v)).collect())?,
                mu: mu[i * l..(i + 1) * l].to_vec(),
                logvar: lv[i * l..(i + 1) * l].to_vec(),
            })
        })
        .collect()
}

fn sigmoid_clamped(logit: f32) -> f32 {
    let p = 1.0 / (1.0 + (-f64::from(logit)).exp());
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP) as f32
}

/// Deterministic reconstruction through the posterior means, in batches.
pub fn reconstruct(vae: &Vae, p: &VaeParams<f32>, images: &[&ImageF]) -> Result<Vec<ReconOutput>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        let x = batch_tensor::<f32>(chunk)?;
        let (d, mu, lv) = vae.reconstruct(p, &x)?;
        out.extend(recon_outputs(vae, &d, &mu, &lv, chunk.len())?);
    }
    Ok(out)
}

/// A decoded object: appearance and mask logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSample {
    pub appearance: ImageF,
    pub logits: Grid<f32>,
}

impl ObjectSample {
    pub fn probabilities(&self) -> Grid<f32> {
        self.logits.map(|&v| sigmoid_clamped(v))
    }
}

pub fn sample_object(vae: &Vae, p: &VaeParams<f32>, z: &[f32]) -> Result<ObjectSample> {
    let s = vae.spec();
    if z.len() != s.latent_dim {
        return Err(Error::Shape(format!("latent has {} values, expected {}", z.len(), s.latent_dim)));
    }
    let d = vae.decode(p, &Tensor::new(vec![1, s.latent_dim], z.to_vec())?)?;
    let lg = d.mask_logits.ok_or_else(|| Error::Shape("object model needs a mask decoder".into()))?;
    Ok(ObjectSample {
        appearance: ImageF::from_vec(3, s.width, s.height, d.appearance.into_data())?,
        logits: Grid::from_vec(s.width, s.height, lg.into_data())?,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CropSidecar {
    source: CropSource,
    m0: RleMask,
    m1: RleMask,
    m_other: RleMask,
}

pub fn crop_name(i: usize) -> String {
    format!("crop_{i:06}")
}

/// Writes `crop_NNNNNN.ppm` with a JSON sidecar of RLE masks per crop.
/// Images are stored at 8 bits.
pub fn save_crops(dir: &Path, crops: &[ObjectCrop]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::with_capacity(2 * crops.len());
    for (i, c) in crops.iter().enumerate() {
        let img = dir.join(format!("{}.ppm", crop_name(i)));
        formats::write_file(&img, &formats::encode_ppm(&c.image.to_rgb()))?;
        let side = CropSidecar {
            source: c.source.clone(),
            m0: formats::rle_encode(&c.m0),
            m1: formats::rle_encode(&c.m1),
            m_other: formats::rle_encode(&c.m_other),
        };
        let js = dir.join(format!("{}.json", crop_name(i)));
        formats::write_file(&js, &serde_json::to_vec(&side).expect("serializable"))?;
        out.extend([img, js]);
    }
    Ok(out)
}

pub fn load_crops(dir: &Path) -> Result<Vec<ObjectCrop>> {
    let mut out = Vec::new();
    for i in 0.. {
        let img = dir.join(format!("{}.ppm", crop_name(i)));
        if !img.exists() {
            break;
        }
        let js = dir.join(format!("{}.json", crop_name(i)));
        let side: CropSidecar =
            serde_json::from_slice(&formats::read_file(&js)?).map_err(|e| Error::Json { path: js.clone(), source: e })?;
        let crop = ObjectCrop {
            image: ImageF::from_rgb(&formats::load_ppm(&img)?),
            m0: formats::rle_decode(&side.m0)?,
            m1: formats::rle_decode(&side.m1)?,
            m_other: formats::rle_decode(&side.m_other)?,
            source: side.source,
        };
        crop.validate().map_err(|e| Error::Format(format!("{}: {e}", js.display())))?;
        out.push(crop);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference, relative_error};

    fn labels_from(w: usize, h: usize, f: impl Fn(usize, usize) -> u16) -> LabelMap {
        Grid::from_fn(w, h, f)
    }

    pub(crate) fn synthetic_crop(seed: u64) -> ObjectCrop {
        let mut rng = rng_from_seed(seed);
        let (w, h) = (8, 4);
        let image = ImageF::from_vec(3, w, h, (0..3 * w * h).map(|_| rng.random::<f32>()).collect()).unwrap();
        let l = labels_from(w, h, |x, y| if (2..6).contains(&x) && (1..3).contains(&y) { 1 } else if x == 7 { 2 } else { 0 });
        ObjectCrop {
            image,
            m0: l.mask_of(0),
            m1: l.mask_of(1),
            m_other: l.mask_of(2),
            source: CropSource { video: "v".into(), frame: 0, label: 1, bbox: BBox { x0: 0, y0: 0, x1: 7, y1: 3 } },
        }
    }

    #[test]
    fn area_and_border_thresholds() {
        let cfg = CropConfig::full();
        let bb = BBox { x0: 20, y0: 20, x1: 40, y1: 40 };
        assert!(!cfg.qualifies(63, &bb, 100, 100));
        assert!(cfg.qualifies(64, &bb, 100, 100));
        let near = BBox { x0: 15, y0: 20, x1: 40, y1: 40 };
        assert!(!cfg.qualifies(400, &near, 100, 100));
        assert!(cfg.qualifies(400, &BBox { x0: 16, ..near }, 100, 100));
    }

    #[test]
    fn box_object_crop_masks() {
        let frame = Grid::filled(120, 80, [10u8, 20, 30]);
        let labels = labels_from(120, 80, |x, y| u16::from((30..94).contains(&x) && (20..52).contains(&y)));
        let cfg = CropConfig { width: 32, height: 16, min_area: 64, min_border: 16 };
        let crops = extract_crops("v", &[frame], &[labels], &cfg).unwrap();
        assert_eq!(crops.len(), 1);
        let c = &crops[0];
        assert_eq!(c.source.bbox, BBox { x0: 30, y0: 20, x1: 93, y1: 51 });
        assert!(c.m1.data.iter().all(|&b| b));
        assert_eq!(c.m0.count() + c.m_other.count(), 0);
        c.validate().unwrap();
    }

    #[test]
    fn crop_with_neighbour_partitions() {
        let frame = Grid::from_fn(60, 40, |x, y| [x as u8, y as u8, 0]);
        let labels = labels_from(60, 40, |x, y| {
            if (10..30).contains(&x) && (10..20).contains(&y) {
                1
            } else if (25..45).contains(&x) && (15..25).contains(&y) {
                2
            } else {
                0
            }
        });
        let crops = extract_crops("v", &[frame], &[labels], &CropConfig::desk()).unwrap();
        assert_eq!(crops.len(), 2);
        for c in &crops {
            c.validate().unwrap();
            assert!(c.m1.count() > 0);
        }
        assert!(crops[1].m_other.count() > 0);
    }

    #[test]
    fn augmentation_identities() {
        let a = synthetic_crop(1);
        let mut b = synthetic_crop(2);
        let mut rng = rng_from_seed(3);
        let spec = AugmentationSpec::with_mode(AugMode::Cutout);
        let mut img = a.image.clone();
        cutout(&mut img, 0, &spec, &mut rng);
        assert_eq!(img, a.image);

        b.m1 = Grid::filled(8, 4, false);
        let mut img = a.image.clone();
        paste_object(&mut img, &b, 1, -1);
        assert_eq!(img, a.image);

        let b = synthetic_crop(2);
        let mut img = a.image.clone();
        paste_object(&mut img, &b, 1, 1);
        for y in 0..4i64 {
            for x in 0..8i64 {
                let (sx, sy) = (x - 1, y - 1);
                let covered = sx >= 0 && sy >= 0 && *b.m1.get(sx as usize, sy as usize);
                for c in 0..3 {
                    let v = img.at(c, x as usize, y as usize);
                    if covered {
                        assert_eq!(v, b.image.at(c, sx as usize, sy as usize));
                    } else {
                        assert_eq!(v, a.image.at(c, x as usize, y as usize));
                    }
                }
            }
        }
        assert!(augment_batch(&[&a], &AugmentationSpec::default(), &mut rng).is_err());
        let out = augment_batch(&[&a, &b], &AugmentationSpec::default(), &mut rng).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn cutout_paints_grey() {
        let a = synthetic_crop(1);
        let spec = AugmentationSpec::with_mode(AugMode::Cutout);
        let mut img = a.image.clone();
        cutout(&mut img, 2, &spec, &mut rng_from_seed(8));
        let grey = (0..32).filter(|&p| (0..3).all(|c| img.data[c * 32 + p] == 0.5)).count();
        assert!(grey >= 1);
    }

    fn perfect_recon(c: &ObjectCrop) -> ReconOutput {
        ReconOutput {
            appearance: c.image.clone(),
            mask: c.m1.map(|&b| if b { 1.0 } else { 0.0 }),
            mu: vec![0.3, -0.2],
            logvar: vec![0.1, -0.4],
        }
    }

    #[test]
    fn hand_example() {
        // 2×2 crop: one object pixel with error (0.5, 0, 0), one background
        // pixel, two other-object pixels. m̂ = 0.5 on the two counted pixels.
        let crop = ObjectCrop {
            image: ImageF::zeros(3, 2, 2),
            m0: Grid::from_vec(2, 2, vec![false, true, false, false]).unwrap(),
            m1: Grid::from_vec(2, 2, vec![true, false, false, false]).unwrap(),
            m_other: Grid::from_vec(2, 2, vec![false, false, true, true]).unwrap(),
            source: CropSource { video: "v".into(), frame: 0, label: 1, bbox: BBox { x0: 0, y0: 0, x1: 1, y1: 1 } },
        };
        let mut app = ImageF::zeros(3, 2, 2);
        *app.at_mut(0, 0, 0) = 0.5;
        let r = ReconOutput { appearance: app, mask: Grid::filled(2, 2, 0.5), mu: vec![1.0], logvar: vec![0.0] };
        let t = object_loss(&crop, &r, &LossConfig { beta: 0.0, gamma: 0.1 }).unwrap();
        assert!((t.total - (0.25 + 0.1 * std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn perfect_reconstruction_leaves_beta_kl() {
        let c = synthetic_crop(4);
        let r = perfect_recon(&c);
        let cfg = LossConfig::default();
        let t = object_loss(&c, &r, &cfg).unwrap();
        assert!((t.total - cfg.beta * t.kl).abs() < 2e-5);
        assert!(t.kl > 0.0);
    }

    #[test]
    fn other_object_pixels_do_not_count() {
        let c = synthetic_crop(5);
        let mut r = perfect_recon(&c);
        *r.appearance.at_mut(0, 4, 2) += 0.3;
        let base = object_loss(&c, &r, &LossConfig::default()).unwrap();
        let mut c2 = c.clone();
        for y in 0..4 {
            *c2.image.at_mut(1, 7, y) = 0.9;
            *r.appearance.at_mut(2, 7, y) = 0.1;
            r.mask.set(7, y, 0.77);
        }
        assert_eq!(object_loss(&c2, &r, &LossConfig::default()).unwrap(), base);
    }

    #[test]
    fn degenerate_crop_rejected() {
        let mut c = synthetic_crop(6);
        c.m1 = Grid::filled(8, 4, false);
        assert!(matches!(object_loss(&c, &perfect_recon(&c), &LossConfig::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn nearest_upscale_keeps_normalized_losses() {
        let c = synthetic_crop(7);
        let mut r = perfect_recon(&c);
        *r.appearance.at_mut(1, 3, 1) = 0.0;
        r.mask.set(0, 0, 0.3);
        r.mask.set(4, 2, 0.6);
        let up_img = |i: &ImageF| {
            let mut o = ImageF::zeros(3, 16, 8);
            for ch in 0..3 {
                for y in 0..8 {
                    for x in 0..16 {
                        *o.at_mut(ch, x, y) = i.at(ch, x / 2, y / 2);
                    }
                }
            }
            o
        };
        let c2 = ObjectCrop {
            image: up_img(&c.image),
            m0: resize_nearest(&c.m0, 16, 8),
            m1: resize_nearest(&c.m1, 16, 8),
            m_other: resize_nearest(&c.m_other, 16, 8),
            source: c.source.clone(),
        };
        let r2 = ReconOutput { appearance: up_img(&r.appearance), mask: resize_nearest(&r.mask, 16, 8), ..r.clone() };
        let a = object_loss(&c, &r, &LossConfig::default()).unwrap();
        let b = object_loss(&c2, &r2, &LossConfig::default()).unwrap();
        assert!((a.appearance - b.appearance).abs() < 1e-12 && (a.mask - b.mask).abs() < 1e-12);
    }

    fn tiny_spec() -> VaeSpec {
        VaeSpec { in_channels: 3, height: 4, width: 8, channels: vec![3, 4], strides: vec![2, 1], latent_dim: 3, slope: 0.05, mask_decoder: true }
    }

    #[test]
    fn batch_loss_matches_single_crop_loss() {
        let vae = Vae::new(tiny_spec()).unwrap();
        let p = vae.init_params::<f32>(&mut rng_from_seed(1));
        let crops = [synthetic_crop(1), synthetic_crop(2)];
        let refs: Vec<&ObjectCrop> = crops.iter().collect();
        let imgs: Vec<&ImageF> = crops.iter().map(|c| &c.image).collect();
        let cfg = LossConfig { beta: 0.01, gamma: 0.3 };
        let (t, _) = object_batch_loss(&vae, &p, &imgs, &refs, None, &cfg).unwrap();
        let recon = reconstruct(&vae, &p, &imgs).unwrap();
        let singles: Vec<LossTerms> = crops.iter().zip(&recon).map(|(c, r)| object_loss(c, r, &cfg).unwrap()).collect();
        let mean = |f: fn(&LossTerms) -> f64| singles.iter().map(f).sum::<f64>() / 2.0;
        assert!((t.appearance - mean(|s| s.appearance)).abs() < 1e-5);
        assert!((t.mask - mean(|s| s.mask)).abs() < 1e-5);
        assert!((t.kl - mean(|s| s.kl)).abs() < 1e-5);
        assert!((t.total - mean(|s| s.total)).abs() < 1e-5);
    }

    #[test]
    fn object_loss_gradient_matches_finite_differences() {
        let vae = Vae::new(tiny_spec()).unwrap();
        let p = vae.init_params::<f64>(&mut rng_from_seed(2));
        let crops = [synthetic_crop(3), synthetic_crop(4)];
        let refs: Vec<&ObjectCrop> = crops.iter().collect();
        let imgs: Vec<&ImageF> = crops.iter().map(|c| &c.image).collect();
        let eps = [0.3, -1.1, 0.4, 0.9, 0.0, -0.5];
        let cfg = LossConfig { beta: 0.2, gamma: 0.5 };
        let (_, g) = object_batch_loss(&vae, &p, &imgs, &refs, Some(&eps), &cfg).unwrap();
        for part in 0..3 {
            for ti in 0..p.parts()[part].tensors.len() {
                let base = p.parts()[part].tensors[ti].data().to_vec();
                let num = finite_difference(
                    |v| {
                        let mut q = p.clone();
                        q.parts_mut()[part].tensors[ti].data_mut().copy_from_slice(v);
                        object_batch_loss(&vae, &q, &imgs, &refs, Some(&eps), &cfg).unwrap().0.total
                    },
                    &base,
                    1e-6,
                );
                let e = relative_error(g.parts()[part].tensors[ti].data(), &num);
                assert!(e < 1e-4, "part {part} tensor {ti}: {e}");
            }
        }
    }

    #[test]
    fn batches_and_selection() {
        assert_eq!(batch_ranges(5, 2), vec![0..2, 2..5]);
        assert_eq!(batch_ranges(4, 2), vec![0..2, 2..4]);
        assert_eq!(batch_ranges(1, 4), vec![0..1]);
        let groups = vec![vec![0, 1, 2], vec![3]];
        let sel = epoch_selection(&groups, &mut rng_from_seed(1));
        assert_eq!(sel.len(), 4);
        assert_eq!(sel.iter().filter(|&&i| i == 3).count(), 2);
        let mut from0: Vec<usize> = sel.iter().copied().filter(|&i| i < 3).collect();
        from0.sort_unstable();
        from0.dedup();
        assert_eq!(from0.len(), 2);
    }

    fn tiny_train_cfg(epochs: usize) -> ObjectTrainConfig {
        ObjectTrainConfig {
            network: VaeSpec { channels: vec![4, 8], strides: vec![2, 2], latent_dim: 4, ..tiny_spec() },
            schedule: Schedule { epochs, batch_size: 8, lr: 3e-3, lr_drop_epoch: None, lr_drop_factor: 10.0 },
            ..ObjectTrainConfig::desk()
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let crops: Vec<ObjectCrop> = (0..40)
            .map(|i| {
                let mut c = synthetic_crop(100 + i / 4);
                c.source.label = (i / 4) as u16 + 1;
                c.source.frame = (i % 4) as usize;
                c
            })
            .collect();
        let cfg = tiny_train_cfg(30);
        let a = train_object_model(&crops, &cfg, 9).unwrap();
        assert!(a.log.last().unwrap().total < a.log[0].total);
        let b = train_object_model(&crops, &cfg, 9).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(log_to_jsonl(&a.log).lines().count(), 30);
    }

    #[test]
    fn overfits_a_single_crop() {
        let crops: Vec<ObjectCrop> = (0..16)
            .map(|i| {
                let mut c = synthetic_crop(11);
                c.source.label = i + 1;
                c
            })
            .collect();
        let mut cfg = tiny_train_cfg(10);
        cfg.loss.beta = 0.0;
        cfg.schedule.lr = 1e-3;
        cfg.schedule.batch_size = 4;
        cfg.augmentation.mode = AugMode::None;
        let t = train_object_model(&crops, &cfg, 3).unwrap();
        for w in t.log.windows(2) {
            assert!(w[1].appearance <= w[0].appearance * 1.05, "{:?}", t.log);
        }
        assert!(t.log[9].appearance < t.log[0].appearance);
    }

    #[test]
    fn outputs_and_samples() {
        let vae = Vae::new(tiny_spec()).unwrap();
        let p = vae.init_params::<f32>(&mut rng_from_seed(3));
        let c = synthetic_crop(1);
        let r = reconstruct(&vae, &p, &[&c.image]).unwrap();
        assert!(r[0].mask.data.iter().all(|&v| v > 0.0 && v < 1.0));
        let z0 = sample_object(&vae, &p, &[0.0; 3]).unwrap();
        assert_eq!(z0, sample_object(&vae, &p, &[0.0; 3]).unwrap());
        assert_ne!(z0, sample_object(&vae, &p, &[1.0, -1.0, 0.5]).unwrap());
        assert!(sample_object(&vae, &p, &[0.0; 2]).is_err());
    }

    #[test]
    fn crops_round_trip_on_disk() {
        let mut c = synthetic_crop(1);
        c.image = ImageF::from_rgb(&c.image.to_rgb());
        let dir = tempfile::tempdir().unwrap();
        save_crops(dir.path(), &[c.clone(), c.clone()]).unwrap();
        assert_eq!(load_crops(dir.path()).unwrap(), vec![c.clone(), c]);
    }
}
