//! Deterministic 2D "fishbowl" videos: parametric fish sprites translating
//! over a static textured background, with full ground truth.
//!
//! Sprite positions are rounded to whole pixels, so masks stay binary and
//! the ground-truth flow of a sprite is its integer displacement between
//! consecutive frames.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{self, FlowField, RleMask};
use crate::image::{BBox, Grid, LabelMap, Mask, RgbImage};
use crate::rng::{rng_from_seed, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FishbowlConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub min_sprites: usize,
    pub max_sprites: usize,
    /// Sprite length range in px.
    pub min_size: f64,
    pub max_size: f64,
    /// Speed range in px/frame.
    pub min_speed: f64,
    pub max_speed: f64,
    /// Std. dev. of additive Gaussian flow noise, px.
    pub flow_noise_sigma: f64,
    /// Probability that a sprite's motion is missing from one flow field.
    pub flow_drop_prob: f64,
}

impl Default for FishbowlConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl FishbowlConfig {
    pub fn desk() -> Self {
        Self {
            width: 120,
            height: 80,
            frames: 32,
            min_sprites: 1,
            max_sprites: 6,
            min_size: 30.0,
            max_size: 60.0,
            min_speed: 1.0,
            max_speed: 2.5,
            flow_noise_sigma: 0.0,
            flow_drop_prob: 0.0,
        }
    }

    pub fn full() -> Self {
        Self {
            width: 480,
            height: 320,
            frames: 128,
            min_size: 120.0,
            max_size: 240.0,
            min_speed: 2.0,
            max_speed: 6.0,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("fishbowl: {m}")));
        if self.width == 0 || self.height == 0 {
            return bad("zero-size canvas");
        }
        if self.frames < 2 {
            return bad("need at least two frames");
        }
        if self.min_sprites > self.max_sprites {
            return bad("min_sprites exceeds max_sprites");
        }
        if !(self.min_size >= 4.0 && self.min_size <= self.max_size) {
            return bad("sprite size range must satisfy 4 <= min <= max");
        }
        if !(self.min_speed >= 0.0 && self.min_speed <= self.max_speed) {
            return bad("speed range must satisfy 0 <= min <= max");
        }
        if !(self.flow_noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.flow_drop_prob) {
            return bad("flow noise parameters out of range");
        }
        Ok(())
    }
}

/// Rotates the (I, Q) chroma of an RGB color without clamping.
pub fn color_shift_unclamped(rgb: [f64; 3], degrees: f64) -> [f64; 3] {
    let [y, i, q] = mat_vec(&RGB_TO_YIQ, rgb);
    let (s, c) = degrees.to_radians().sin_cos();
    mat_vec(&yiq_to_rgb(), [y, i * c - q * s, i * s + q * c])
}

/// Hue rotation in the IQ plane of YIQ, clamped and rounded to 8 bits.
pub fn color_shift(rgb: [u8; 3], degrees: f64) -> [u8; 3] {
    let out = color_shift_unclamped(rgb.map(f64::from), degrees);
    out.map(|v| v.round().clamp(0.0, 255.0) as u8)
}

pub const RGB_TO_YIQ: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [0.595716, -0.274453, -0.321263],
    [0.211456, -0.522591, 0.311135],
];

pub fn rgb_to_yiq(rgb: [f64; 3]) -> [f64; 3] {
    mat_vec(&RGB_TO_YIQ, rgb)
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

/// Exact inverse of [`RGB_TO_YIQ`] via the adjugate.
fn yiq_to_rgb() -> [[f64; 3]; 3] {
    let m = RGB_TO_YIQ;
    let cof = |r: usize, c: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
        m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]
    };
    let det: f64 = (0..3).map(|c| m[0][c] * cof(0, c)).sum();
    std::array::from_fn(|r| std::array::from_fn(|c| cof(c, r) / det))
}

/// Shape and color of one fish. Lengths are in px before `scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpriteSpec {
    /// Body ellipse semi-axes `[rx, ry]`.
    pub body_axes: [f64; 2],
    /// Tail triangle `[length, half height]`.
    pub tail_size: [f64; 2],
    /// Dorsal fin apex offset from the body center along x.
    pub fin_offset: f64,
    pub fin_height: f64,
    pub stripes: u8,
    pub base_color: [u8; 3],
    /// One of `k·45°`, `k = 0..7`.
    pub color_shift_deg: u16,
    pub scale: f64,
    /// Larger is nearer.
    pub depth_rank: usize,
    pub facing_left: bool,
}

/// Rendered sprite: `None` is transparent.
#[derive(Clone, Debug, PartialEq)]
pub struct SpritePatch {
    pub pixels: Grid<Option<[u8; 3]>>,
}

impl SpritePatch {
    pub fn width(&self) -> usize {
        self.pixels.width
    }

    pub fn height(&self) -> usize {
        self.pixels.height
    }
}

fn in_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let cross = |o: [f64; 2], u: [f64; 2], v: [f64; 2]| (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0]);
    let (d1, d2, d3) = (cross(a, b, p), cross(b, c, p), cross(c, a, p));
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

fn scale_color(c: [u8; 3], f: f64) -> [u8; 3] {
    c.map(|v| (f64::from(v) * f).round().clamp(0.0, 255.0) as u8)
}

impl SpriteSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.body_axes.iter().chain(&self.tail_size).all(|&v| v > 0.0 && v.is_finite())
            && self.scale > 0.0
            && self.fin_height >= 0.0
            && self.color_shift_deg % 45 == 0
            && self.color_shift_deg < 360;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid sprite {self:?}")))
        }
    }

    pub fn render(&self) -> SpritePatch {
        let s = self.scale;
        let [rx, ry] = self.body_axes.map(|v| v * s);
        let [tl, th] = self.tail_size.map(|v| v * s);
        let fh = self.fin_height * s;
        let fx_off = self.fin_offset * s;
        let w = (tl + 2.0 * rx).ceil() as usize + 1;
        let h = (2.0 * ry.max(th) + fh).ceil() as usize + 1;
        let cy = fh + ry.max(th);
        let cx = tl + rx;
        let body = color_shift(self.base_color, f64::from(self.color_shift_deg));
        let fin = scale_color(body, 0.75);
        let stripe = scale_color(body, 0.5);
        let eye = [16, 16, 24];
        let eye_c = [cx + 0.6 * rx, cy - 0.25 * ry];
        let eye_r = (0.14 * ry).max(1.0);
        let tail_join = tl + 0.3 * rx;
        let fx = cx + fx_off;
        let fin_tri = ([fx - 0.4 * rx, cy - 0.6 * ry], [fx + 0.35 * rx, cy - 0.6 * ry], [fx - 0.2 * rx, cy - ry - fh]);
        let pixels = Grid::from_fn(w, h, |x, y| {
            let x = if self.facing_left { w - 1 - x } else { x };
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            let (dx, dy) = ((p[0] - cx) / rx, (p[1] - cy) / ry);
            if dx * dx + dy * dy <= 1.0 {
                let ex = p[0] - eye_c[0];
                let ey = p[1] - eye_c[1];
                if ex * ex + ey * ey <= eye_r * eye_r {
                    return Some(eye);
                }
                let band = (((p[0] - (cx - rx)) / (2.0 * rx)) * f64::from(2 * self.stripes + 1)).floor() as i64;
                let in_stripe = self.stripes > 0 && band % 2 == 1 && p[0] < cx + 0.45 * rx;
                return Some(if in_stripe { stripe } else { body });
            }
            if p[0] <= tail_join && (p[1] - cy).abs() <= th * (1.0 - p[0] / tail_join) {
                return Some(fin);
            }
            if fh > 0.0 && in_triangle(p, fin_tri.0, fin_tri.1, fin_tri.2) {
                return Some(fin);
            }
            None
        });
        SpritePatch { pixels }
    }
}

/// Sprite trajectory in canvas px (top-left corner of the sprite patch).
/// Motion reflects off the canvas edges so the sprite stays inside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MotionPath {
    Linear { start: [f64; 2], velocity: [f64; 2] },
    Sinusoidal { start: [f64; 2], velocity_x: f64, amplitude: f64, period: f64, phase: f64 },
}

/// Folds `v` into `[lo, hi]` by mirror reflection.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let u = (v - lo).rem_euclid(2.0 * span);
    lo + if u > span { 2.0 * span - u } else { u }
}

impl MotionPath {
    /// Unreflected position at time `t`.
    fn raw(&self, t: f64) -> [f64; 2] {
        match *self {
            MotionPath::Linear { start, velocity } => [start[0] + velocity[0] * t, start[1] + velocity[1] * t],
            MotionPath::Sinusoidal { start, velocity_x, amplitude, period, phase } => [
                start[0] + velocity_x * t,
                start[1] + amplitude * (std::f64::consts::TAU * t / period + phase).sin(),
            ],
        }
    }

    /// Rounded patch offsets for `frames` frames, kept inside the canvas.
    pub fn offsets(&self, frames: usize, canvas: (usize, usize), patch: (usize, usize)) -> Vec<[i64; 2]> {
        let hx = canvas.0.saturating_sub(patch.0) as f64;
        let hy = canvas.1.saturating_sub(patch.1) as f64;
        (0..frames)
            .map(|t| {
                let [x, y] = self.raw(t as f64);
                [reflect(x, 0.0, hx).round() as i64, reflect(y, 0.0, hy).round() as i64]
            })
            .collect()
    }
}

/// Ground truth for one object.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTruth {
    /// Label in the occluded label maps (object index + 1).
    pub label: u16,
    pub sprite: SpriteSpec,
    pub path: MotionPath,
    pub offsets: Vec<[i64; 2]>,
    pub patch: SpritePatch,
}

impl ObjectTruth {
    fn for_each_pixel(&self, t: usize, w: usize, h: usize, mut f: impl FnMut(usize, usize, [u8; 3])) {
        let [ox, oy] = self.offsets[t];
        let p = &self.patch.pixels;
        for py in 0..p.height {
            let y = oy + py as i64;
            if y < 0 || y >= h as i64 {
                continue;
            }
            for px in 0..p.width {
                let x = ox + px as i64;
                if x < 0 || x >= w as i64 {
                    continue;
                }
                if let Some(c) = p.get(px, py) {
                    f(x as usize, y as usize, *c);
                }
            }
        }
    }

    /// Full (amodal) mask of the object at frame `t`.
    pub fn unoccluded_mask(&self, t: usize, w: usize, h: usize) -> Mask {
        let mut m = Grid::filled(w, h, false);
        self.for_each_pixel(t, w, h, |x, y, _| m.set(x, y, true));
        m
    }

    /// Unoccluded appearance at frame `t`; black outside the mask.
    pub fn appearance(&self, t: usize, w: usize, h: usize) -> RgbImage {
        let mut img = Grid::filled(w, h, [0u8; 3]);
        self.for_each_pixel(t, w, h, |x, y, c| img.set(x, y, c));
        img
    }

    pub fn unoccluded_bbox(&self, t: usize, w: usize, h: usize) -> Option<BBox> {
        self.unoccluded_mask(t, w, h).bbox()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub frames: Vec<RgbImage>,
    /// `flow_fwd[t]` maps frame `t` to `t + 1`.
    pub flow_fwd: Vec<FlowField>,
    /// `flow_bwd[t]` maps frame `t + 1` back to `t`.
    pub flow_bwd: Vec<FlowField>,
    pub labels: Vec<LabelMap>,
    pub objects: Vec<ObjectTruth>,
    pub background: RgbImage,
}

impl VideoSample {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Visible (occluded) mask of object `k` at frame `t`.
    pub fn occluded_mask(&self, k: usize, t: usize) -> Mask {
        self.labels[t].mask_of(self.objects[k].label)
    }
}

fn random_color(rng: &mut Rng) -> [u8; 3] {
    // Saturated colors: one channel high, one low, one in between.
    let mut c = [rng.random_range(200..=250u8), rng.random_range(20..=70u8), rng.random_range(60..=220u8)];
    c.shuffle(rng);
    c
}

fn sample_sprite(rng: &mut Rng, cfg: &FishbowlConfig, depth_rank: usize) -> SpriteSpec {
    const BASE: f64 = 40.0;
    let length = rng.random_range(cfg.min_size..=cfg.max_size);
    let tail = 0.26 * BASE;
    let rx = (BASE - tail) / 2.0;
    let ry = rx * rng.random_range(0.42..0.6);
    SpriteSpec {
        body_axes: [rx, ry],
        tail_size: [tail, 0.8 * ry],
        fin_offset: rng.random_range(-0.3..0.2) * rx,
        fin_height: rng.random_range(0.3..0.5) * ry,
        stripes: rng.random_range(0..=3),
        base_color: random_color(rng),
        color_shift_deg: 45 * rng.random_range(0..8u16),
        scale: length / BASE,
        depth_rank,
        facing_left: rng.random_bool(0.5),
    }
}

fn sample_path(rng: &mut Rng, cfg: &FishbowlConfig, patch: (usize, usize), facing_left: bool) -> MotionPath {
    let hx = cfg.width.saturating_sub(patch.0) as f64;
    let hy = cfg.height.saturating_sub(patch.1) as f64;
    let speed = rng.random_range(cfg.min_speed..=cfg.max_speed);
    let dir = if facing_left { -1.0 } else { 1.0 };
    if rng.random_bool(0.5) {
        let angle: f64 = rng.random_range(-0.45..0.45);
        MotionPath::Linear {
            start: [rng.random_range(0.0..=hx), rng.random_range(0.0..=hy)],
            velocity: [dir * speed * angle.cos(), speed * angle.sin()],
        }
    } else {
        let period = rng.random_range(12.0..30.0);
        // Peak vertical speed is amplitude·2π/period; keep it to a third of the total.
        let amplitude = (speed / 3.0 * period / std::f64::consts::TAU).min(hy / 2.0);
        let vy_max = amplitude * std::f64::consts::TAU / period;
        let vx = (speed * speed - vy_max * vy_max).max(0.0).sqrt();
        MotionPath::Sinusoidal {
            start: [rng.random_range(0.0..=hx), rng.random_range(amplitude..=(hy - amplitude).max(amplitude))],
            velocity_x: dir * vx,
            amplitude,
            period,
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }
}

/// Smooth vertical gradient with a few soft "plant" blobs.
pub fn sample_background(rng: &mut Rng, width: usize, height: usize) -> RgbImage {
    let top = [rng.random_range(20..70) as f64, rng.random_range(90..160) as f64, rng.random_range(150..220) as f64];
    let bottom = [rng.random_range(10..50) as f64, rng.random_range(50..110) as f64, rng.random_range(80..140) as f64];
    let n_blobs = rng.random_range(3..=6);
    let blobs: Vec<([f64; 2], [f64; 2], [f64; 3])> = (0..n_blobs)
        .map(|_| {
            let c = [rng.random_range(0.0..width as f64), rng.random_range(0.4..1.1) * height as f64];
            let r = [rng.random_range(0.05..0.15) * width as f64, rng.random_range(0.15..0.4) * height as f64];
            let col = [rng.random_range(20..80) as f64, rng.random_range(90..170) as f64, rng.random_range(30..90) as f64];
            (c, r, col)
        })
        .collect();
    Grid::from_fn(width, height, |x, y| {
        let f = if height > 1 { y as f64 / (height - 1) as f64 } else { 0.0 };
        let mut c: [f64; 3] = std::array::from_fn(|i| top[i] * (1.0 - f) + bottom[i] * f);
        for (center, r, col) in &blobs {
            let dx = (x as f64 - center[0]) / r[0];
            let dy = (y as f64 - center[1]) / r[1];
            let a = (1.0 - (dx * dx + dy * dy)).clamp(0.0, 1.0).sqrt() * 0.8;
            for i in 0..3 {
                c[i] = c[i] * (1.0 - a) + col[i] * a;
            }
        }
        c.map(|v| v.round().clamp(0.0, 255.0) as u8)
    })
}

/// Renders frames, labels and flow for fully specified sprites and paths.
pub fn render_video(
    cfg: &FishbowlConfig,
    seed: u64,
    background: RgbImage,
    sprites: Vec<(SpriteSpec, MotionPath)>,
) -> Result<VideoSample> {
    cfg.validate()?;
    if background.width != cfg.width || background.height != cfg.height {
        return Err(Error::Shape("background does not match the canvas".into()));
    }
    let (w, h, t_len) = (cfg.width, cfg.height, cfg.frames);
    let mut objects = Vec::with_capacity(sprites.len());
    for (k, (sprite, path)) in sprites.into_iter().enumerate() {
        sprite.validate()?;
        let patch = sprite.render();
        let offsets = path.offsets(t_len, (w, h), (patch.width(), patch.height()));
        objects.push(ObjectTruth { label: (k + 1) as u16, sprite, path, offsets, patch });
    }
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by_key(|&k| (objects[k].sprite.depth_rank, k));

    let mut frames = Vec::with_capacity(t_len);
    let mut labels = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut img = background.clone();
        let mut lab = Grid::filled(w, h, 0u16);
        for &k in &order {
            let o = &objects[k];
            o.for_each_pixel(t, w, h, |x, y, c| {
                img.set(x, y, c);
                lab.set(x, y, o.label);
            });
        }
        frames.push(img);
        labels.push(lab);
    }

    let mut rng = rng_from_seed(crate::rng::derive_seed(seed, "flow-noise", 0));
    let mut flow_fwd = Vec::with_capacity(t_len - 1);
    let mut flow_bwd = Vec::with_capacity(t_len - 1);
    for t in 0..t_len - 1 {
        let dropped: Vec<bool> = objects.iter().map(|_| cfg.flow_drop_prob > 0.0 && rng.random_bool(cfg.flow_drop_prob)).collect();
        let disp = |k: usize| {
            let (a, b) = (objects[k].offsets[t], objects[k].offsets[t + 1]);
            if dropped[k] {
                [0.0, 0.0]
            } else {
                [(b[0] - a[0]) as f32, (b[1] - a[1]) as f32]
            }
        };
        let mut fwd: FlowField = Grid::filled(w, h, [0.0, 0.0]);
        let mut bwd: FlowField = Grid::filled(w, h, [0.0, 0.0]);
        for &k in &order {
            let d = disp(k);
            objects[k].for_each_pixel(t, w, h, |x, y, _| fwd.set(x, y, d));
            objects[k].for_each_pixel(t + 1, w, h, |x, y, _| bwd.set(x, y, [-d[0], -d[1]]));
        }
        if cfg.flow_noise_sigma > 0.0 {
            let normal = Normal::new(0.0, cfg.flow_noise_sigma).expect("validated sigma");
            for f in [&mut fwd, &mut bwd] {
                for v in &mut f.data {
                    v[0] += normal.sample(&mut rng) as f32;
                    v[1] += normal.sample(&mut rng) as f32;
                }
            }
        }
        flow_fwd.push(fwd);
        flow_bwd.push(bwd);
    }
    Ok(VideoSample { width: w, height: h, seed, frames, flow_fwd, flow_bwd, labels, objects, background })
}

/// Samples and renders one video. Deterministic in `(cfg, seed)`.
pub fn generate(cfg: &FishbowlConfig, seed: u64) -> Result<VideoSample> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let background = sample_background(&mut rng, cfg.width, cfg.height);
    let n = rng.random_range(cfg.min_sprites..=cfg.max_sprites);
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(&mut rng);
    let mut sprites = Vec::with_capacity(n);
    for &rank in &ranks {
        let s = sample_sprite(&mut rng, cfg, rank);
        let patch = s.render();
        let p = sample_path(&mut rng, cfg, (patch.width(), patch.height()), s.facing_left);
        sprites.push((s, p));
    }
    render_video(cfg, seed, background, sprites)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectMeta {
    label: u16,
    sprite: SpriteSpec,
    path: MotionPath,
    offsets: Vec<[i64; 2]>,
    unoccluded: Vec<RleMask>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoMeta {
    width: usize,
    height: usize,
    frames: usize,
    seed: u64,
    objects: Vec<ObjectMeta>,
}

pub fn frame_name(t: usize) -> String {
    format!("frame_{t:03}.ppm")
}

pub fn labels_name(t: usize) -> String {
    format!("labels_{t:03}.pgm")
}

impl VideoSample {
    /// Writes frames (PPM), label maps (16-bit PGM), both flow stacks
    /// (CFFL), the clean background and `meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut written = Vec::new();
        let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
            let p = dir.join(name);
            formats::write_file(&p, &bytes)?;
            written.push(p);
            Ok(())
        };
        for (t, f) in self.frames.iter().enumerate() {
            put(frame_name(t), formats::encode_ppm(f))?;
            put(labels_name(t), formats::encode_pgm_labels(&self.labels[t]))?;
        }
        put("flow_fwd.cffl".into(), formats::encode_flow(&self.flow_fwd)?)?;
        put("flow_bwd.cffl".into(), formats::encode_flow(&self.flow_bwd)?)?;
        put("background.ppm".into(), formats::encode_ppm(&self.background))?;
        let meta = VideoMeta {
            width: self.width,
            height: self.height,
            frames: self.frames.len(),
            seed: self.seed,
            objects: self
                .objects
                .iter()
                .map(|o| ObjectMeta {
                    label: o.label,
                    sprite: o.sprite.clone(),
                    path: o.path.clone(),
                    offsets: o.offsets.clone(),
                    unoccluded: (0..self.frames.len())
                        .map(|t| formats::rle_encode(&o.unoccluded_mask(t, self.width, self.height)))
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec_pretty(&meta).expect("serializable metadata");
        put("meta.json".into(), json)?;
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta: VideoMeta = serde_json::from_slice(&formats::read_file(&meta_path)?)
            .map_err(|e| Error::Json { path: meta_path.clone(), source: e })?;
        let (w, h) = (meta.width, meta.height);
        let mut frames = Vec::with_capacity(meta.frames);
        let mut labels = Vec::with_capacity(meta.frames);
        for t in 0..meta.frames {
            let f = formats::load_ppm(&dir.join(frame_name(t)))?;
            let l = formats::load_pgm(&dir.join(labels_name(t)))?;
            if f.width != w || f.height != h || l.width != w || l.height != h {
                return Err(Error::Format(format!("{}: frame {t} has the wrong size", dir.display())));
            }
            frames.push(f);
            labels.push(l);
        }
        let flow_fwd = formats::load_flow(&dir.join("flow_fwd.cffl"))?;
        let flow_bwd = formats::load_flow(&dir.join("flow_bwd.cffl"))?;
        for f in flow_fwd.iter().chain(&flow_bwd) {
            if f.width != w || f.height != h {
                return Err(Error::Format(format!("{}: flow size mismatch", dir.display())));
            }
        }
        if flow_fwd.len() + 1 != meta.frames || flow_bwd.len() != flow_fwd.len() {
            return Err(Error::Format(format!("{}: flow count mismatch", dir.display())));
        }
        let background = formats::load_ppm(&dir.join("background.ppm"))?;
        let mut objects = Vec::with_capacity(meta.objects.len());
        for o in meta.objects {
            let patch = o.sprite.render();
            if o.offsets.len() != meta.frames {
                return Err(Error::Format(format!("{}: object {} offsets", dir.display(), o.label)));
            }
            objects.push(ObjectTruth { label: o.label, sprite: o.sprite, path: o.path, offsets: o.offsets, patch });
        }
        Ok(Self { width: w, height: h, seed: meta.seed, frames, flow_fwd, flow_bwd, labels, objects, background })
    }
}
