use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::FlowField;

/// A point followed through consecutive frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointTrajectory {
    pub id: u32,
    pub start: usize,
    /// Position in frames `start .. start + positions.len()`.
    pub positions: Vec<[f64; 2]>,
    /// Local flow-variation scale for each step `t → t+1`; one shorter
    /// than `positions`.
    pub sigmas: Vec<f64>,
}

impl PointTrajectory {
    pub fn end(&self) -> usize {
        self.start + self.positions.len()
    }

    pub fn alive(&self, t: usize) -> bool {
        t >= self.start && t < self.end()
    }

    pub fn position(&self, t: usize) -> Option<[f64; 2]> {
        self.alive(t).then(|| self.positions[t - self.start])
    }

    /// Displacement from frame `t` to `t + 1`.
    pub fn velocity(&self, t: usize) -> Option<[f64; 2]> {
        if t < self.start || t + 1 >= self.end() {
            return None;
        }
        let (a, b) = (self.positions[t - self.start], self.positions[t + 1 - self.start]);
        Some([b[0] - a[0], b[1] - a[1]])
    }

    pub fn sigma(&self, t: usize) -> Option<f64> {
        self.velocity(t).map(|_| self.sigmas[t - self.start])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackConfig {
    pub grid_spacing: usize,
    pub fb_threshold: f64,
    /// Side of the square window for the local flow-variation scale.
    pub sigma_window: usize,
    pub sigma_floor: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self { grid_spacing: 4, fb_threshold: 1.5, sigma_window: 9, sigma_floor: 0.3 }
    }
}

/// Bilinear flow lookup with coordinates clamped to the field.
pub fn sample_flow(f: &FlowField, p: [f64; 2]) -> [f64; 2] {
    let x = p[0].clamp(0.0, (f.width - 1) as f64);
    let y = p[1].clamp(0.0, (f.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(f.width - 1), (y0 + 1).min(f.height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let g = |xx: usize, yy: usize, c: usize| f64::from(f.get(xx, yy)[c]);
    std::array::from_fn(|c| {
        let top = g(x0, y0, c) * (1.0 - fx) + g(x1, y0, c) * fx;
        let bot = g(x0, y1, c) * (1.0 - fx) + g(x1, y1, c) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Median of `‖f(q) − f(p)‖` over the window around `p`, floored.
fn local_sigma(f: &FlowField, p: [f64; 2], fp: [f64; 2], cfg: &TrackConfig, buf: &mut Vec<f64>) -> f64 {
    let r = (cfg.sigma_window / 2) as i64;
    let (cx, cy) = (p[0].round() as i64, p[1].round() as i64);
    buf.clear();
    for y in (cy - r).max(0)..=(cy + r).min(f.height as i64 - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(f.width as i64 - 1) {
            let q = f.get(x as usize, y as usize);
            buf.push((f64::from(q[0]) - fp[0]).hypot(f64::from(q[1]) - fp[1]));
        }
    }
    if buf.is_empty() {
        return cfg.sigma_floor;
    }
    let mid = buf.len() / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    m.max(cfg.sigma_floor)
}

fn inside(p: [f64; 2], w: usize, h: usize) -> bool {
    p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (w - 1) as f64 && p[1] <= (h - 1) as f64
}

/// Tracks grid-seeded points through forward flow, terminating them on
/// forward-backward disagreement or when they leave the canvas, and
/// re-seeding grid cells that no live point covers.
pub fn track(fwd: &[FlowField], bwd: &[FlowField], cfg: &TrackConfig) -> Result<Vec<PointTrajectory>> {
    let first = fwd.first().ok_or_else(|| Error::Input("track: empty flow sequence".into()))?;
    if bwd.len() != fwd.len() {
        return Err(Error::Input("track: forward and backward flow counts differ".into()));
    }
    let (w, h) = (first.width, first.height);
    if fwd.iter().chain(bwd).any(|f| f.width != w || f.height != h) {
        return Err(Error::Input("track: flow fields differ in size".into()));
    }
    if cfg.grid_spacing == 0 {
        return Err(Error::Config("track: grid spacing must be positive".into()));
    }
    let s = cfg.grid_spacing;
    let (gw, gh) = (w.div_ceil(s), h.div_ceil(s));
    let cell_center = |cx: usize, cy: usize| [((cx * s + s / 2).min(w - 1)) as f64, ((cy * s + s / 2).min(h - 1)) as f64];

    let mut done: Vec<PointTrajectory> = Vec::new();
    let mut live: Vec<PointTrajectory> = Vec::new();
    let mut next_id = 0u32;
    let mut occupied = vec![false; gw * gh];
    let mut buf = Vec::with_capacity(cfg.sigma_window * cfg.sigma_window);
    for t in 0..=fwd.len() {
        occupied.iter_mut().for_each(|o| *o = false);
        for tr in &live {
            let p = tr.positions.last().expect("nonempty");
            let (cx, cy) = ((p[0] as usize / s).min(gw - 1), (p[1] as usize / s).min(gh - 1));
            occupied[cy * gw + cx] = true;
        }
        for cy in 0..gh {
            for cx in 0..gw {
                if !occupied[cy * gw + cx] {
                    live.push(PointTrajectory { id: next_id, start: t, positions: vec![cell_center(cx, cy)], sigmas: vec![] });
                    next_id += 1;
                }
            }
        }
        if t == fwd.len() {
            break;
        }
        let mut keep = Vec::with_capacity(live.len());
        for mut tr in live.drain(..) {
            let p = *tr.positions.last().expect("nonempty");
            let f = sample_flow(&fwd[t], p);
            let q = [p[0] + f[0], p[1] + f[1]];
            let ok = inside(q, w, h) && {
                let b = sample_flow(&bwd[t], q);
                (f[0] + b[0]).hypot(f[1] + b[1]) <= cfg.fb_threshold
            };
            if ok {
                tr.sigmas.push(local_sigma(&fwd[t], p, f, cfg, &mut buf));
                tr.positions.push(q);
                keep.push(tr);
            } else {
                done.push(tr);
            }
        }
        live = keep;
    }
    done.extend(live);
    done.sort_by_key(|t| t.id);
    Ok(done)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Grid;

    fn constant(w: usize, h: usize, v: [f32; 2], n: usize) -> Vec<FlowField> {
        vec![Grid::filled(w, h, v); n]
    }

    #[test]
    fn constant_flow_advances_one_pixel() {
        let fwd = constant(40, 20, [1.0, 0.0], 5);
        let bwd = constant(40, 20, [-1.0, 0.0], 5);
        let trs = track(&fwd, &bwd, &TrackConfig::default()).unwrap();
        for tr in &trs {
            for t in tr.start..tr.end() - 1 {
                assert_eq!(tr.velocity(t).unwrap(), [1.0, 0.0]);
            }
        }
        // points reaching the right edge stop there
        assert!(trs.iter().all(|tr| tr.positions.iter().all(|p| p[0] <= 39.0)));
    }

    #[test]
    fn zero_flow_keeps_points_alive_and_still() {
        let fwd = constant(16, 12, [0.0, 0.0], 6);
        let trs = track(&fwd, &fwd, &TrackConfig::default()).unwrap();
        assert_eq!(trs.len(), 4 * 3);
        for tr in &trs {
            assert_eq!((tr.start, tr.end()), (0, 7));
            assert!(tr.positions.iter().all(|p| *p == tr.positions[0]));
        }
    }

    #[test]
    fn inconsistent_flow_terminates_at_that_frame() {
        let k = 3;
        let fwd = constant(16, 16, [0.0, 0.0], 6);
        let mut bwd = fwd.clone();
        bwd[k].set(6, 6, [2.0, 0.0]);
        let trs = track(&fwd, &bwd, &TrackConfig::default()).unwrap();
        let hit: Vec<_> = trs.iter().filter(|t| t.start == 0 && t.positions[0] == [6.0, 6.0]).collect();
        assert_eq!(hit.len(), 1);
        assert_eq!(hit[0].end(), k + 1);
        // its grid cell is re-seeded in the next frame
        assert!(trs.iter().any(|t| t.start == k + 1 && t.positions[0] == [6.0, 6.0]));
    }

    #[test]
    fn empty_flow_is_an_input_error() {
        assert!(matches!(track(&[], &[], &TrackConfig::default()), Err(Error::Input(_))));
    }
}
