//! Raster containers and resampling.
//!
//! Pixel centers sit at integer coordinates. Resampling uses the
//! half-pixel convention: destination pixel `d` maps to source coordinate
//! `(d + 0.5) * src / dst - 0.5`.

use crate::error::{Error, Result};

/// Row-major 2D grid of `T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

pub type Mask = Grid<bool>;
pub type LabelMap = Grid<u16>;
pub type RgbImage = Grid<[u8; 3]>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "grid {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        let i = self.idx(x, y);
        self.data[i] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_size<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Inclusive bounding box of the set pixels.
    pub fn bbox(&self) -> Option<BBox> {
        let mut bb: Option<BBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.data[y * self.width + x] {
                    bb = Some(match bb {
                        None => BBox { x0: x, y0: y, x1: x, y1: y },
                        Some(b) => BBox {
                            x0: b.x0.min(x),
                            y0: b.y0.min(y),
                            x1: b.x1.max(x),
                            y1: b.y1.max(y),
                        },
                    });
                }
            }
        }
        bb
    }
}

impl LabelMap {
    pub fn mask_of(&self, label: u16) -> Mask {
        self.map(|&l| l == label)
    }

    pub fn max_label(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    /// Smallest distance from the box to any canvas edge, in pixels.
    pub fn border_distance(&self, width: usize, height: usize) -> usize {
        let right = width.saturating_sub(1 + self.x1);
        let bottom = height.saturating_sub(1 + self.y1);
        self.x0.min(self.y0).min(right).min(bottom)
    }
}

impl<T: Clone> Grid<T> {
    pub fn crop(&self, bb: &BBox) -> Grid<T> {
        Grid::from_fn(bb.width(), bb.height(), |x, y| self.get(bb.x0 + x, bb.y0 + y).clone())
    }
}

/// Planar (channel-major) float image, values nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageF {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ImageF {
    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self { channels, width, height, data: vec![0.0; channels * width * height] }
    }

    pub fn from_vec(channels: usize, width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * width * height {
            return Err(Error::Shape(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * width * height,
                data.len()
            )));
        }
        Ok(Self { channels, width, height, data })
    }

    #[inline]
    pub fn at(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, x: usize, y: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let mut out = Self::zeros(3, img.width, img.height);
        for y in 0..img.height {
            for x in 0..img.width {
                let p = img.get(x, y);
                for c in 0..3 {
                    *out.at_mut(c, x, y) = f32::from(p[c]) / 255.0;
                }
            }
        }
        out
    }

    /// Quantizes an RGB float image to 8 bits, clamping to [0, 1].
    pub fn to_rgb(&self) -> RgbImage {
        assert_eq!(self.channels, 3, "to_rgb needs three channels");
        Grid::from_fn(self.width, self.height, |x, y| {
            let q = |c| (self.at(c, x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
            [q(0), q(1), q(2)]
        })
    }

    pub fn crop(&self, bb: &BBox) -> ImageF {
        let mut out = ImageF::zeros(self.channels, bb.width(), bb.height());
        for c in 0..self.channels {
            for y in 0..bb.height() {
                for x in 0..bb.width() {
                    *out.at_mut(c, x, y) = self.at(c, bb.x0 + x, bb.y0 + y);
                }
            }
        }
        out
    }
}

#[inline]
fn source_coord(d: usize, src: usize, dst: usize) -> f64 {
    let s = (d as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
    s.clamp(0.0, (src - 1) as f64)
}

/// Bilinear resampling of every channel.
pub fn resize_bilinear(src: &ImageF, width: usize, height: usize) -> ImageF {
    let mut out = ImageF::zeros(src.channels, width, height);
    let xs: Vec<(usize, usize, f32)> = (0..width)
        .map(|d| {
            let s = source_coord(d, src.width, width);
            let x0 = s.floor() as usize;
            let x1 = (x0 + 1).min(src.width - 1);
            (x0, x1, (s - x0 as f64) as f32)
        })
        .collect();
    for y in 0..height {
        let s = source_coord(y, src.height, height);
        let y0 = s.floor() as usize;
        let y1 = (y0 + 1).min(src.height - 1);
        let fy = (s - y0 as f64) as f32;
        for c in 0..src.channels {
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src.at(c, x0, y0) * (1.0 - fx) + src.at(c, x1, y0) * fx;
                let bot = src.at(c, x0, y1) * (1.0 - fx) + src.at(c, x1, y1) * fx;
                *out.at_mut(c, x, y) = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Nearest-neighbour resampling; exact pixel replication for integer upscaling.
pub fn resize_nearest<T: Clone>(src: &Grid<T>, width: usize, height: usize) -> Grid<T> {
    let pick = |d: usize, s: usize, n: usize| (((d as f64 + 0.5) * s as f64 / n as f64).floor() as usize).min(s - 1);
    Grid::from_fn(width, height, |x, y| {
        src.get(pick(x, src.width, width), pick(y, src.height, height)).clone()
    })
}

pub fn luma(p: [u8; 3]) -> f32 {
    0.299 * f32::from(p[0]) + 0.587 * f32::from(p[1]) + 0.114 * f32::from(p[2])
}

/// Sobel gradient magnitude of the luma channel, replicate padding.
pub fn sobel_magnitude(img: &RgbImage) -> Grid<f32> {
    let (w, h) = (img.width as isize, img.height as isize);
    let gray: Vec<f32> = img.data.iter().map(|&p| luma(p)).collect();
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w - 1);
        let y = y.clamp(0, h - 1);
        gray[(y * w + x) as usize]
    };
    Grid::from_fn(img.width, img.height, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let gx = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
            - at(x - 1, y - 1)
            - 2.0 * at(x - 1, y)
            - at(x - 1, y + 1);
        let gy = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
            - at(x - 1, y - 1)
            - 2.0 * at(x, y - 1)
            - at(x + 1, y - 1);
        (gx * gx + gy * gy).sqrt()
    })
}
