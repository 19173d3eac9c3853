use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Grid, Mask, RgbImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BgMaskConfig {
    /// Variance amplification factor `N` of the Σ-Δ recurrence.
    pub sigma_delta_n: u8,
    pub v_min: u8,
    pub v_max: u8,
    /// Frame-difference threshold on `|I_t − I_0|`, max over channels.
    pub diff_threshold: u8,
}

impl Default for BgMaskConfig {
    fn default() -> Self {
        Self { sigma_delta_n: 4, v_min: 2, v_max: 255, diff_threshold: 15 }
    }
}

/// Σ-Δ foreground per frame: the running mean `M` and variance `V` step
/// by ±1 towards `I_t` and `N·Δ`; a pixel is foreground when `Δ > V` in
/// any channel. `M_0 = I_0`, `V_0 = v_min`.
pub fn sigma_delta(frames: &[RgbImage], cfg: &BgMaskConfig) -> Vec<Mask> {
    let Some(first) = frames.first() else { return vec![] };
    let mut m: Vec<[u8; 3]> = first.data.clone();
    let mut v: Vec<[u8; 3]> = vec![[cfg.v_min; 3]; m.len()];
    let mut out = vec![Grid::filled(first.width, first.height, false)];
    for f in &frames[1..] {
        let mut fg = Grid::filled(f.width, f.height, false);
        for (p, px) in f.data.iter().enumerate() {
            let mut hit = false;
            for c in 0..3 {
                let i = px[c];
                let mc = &mut m[p][c];
                if *mc < i {
                    *mc += 1;
                } else if *mc > i {
                    *mc -= 1;
                }
                let delta = i.abs_diff(*mc);
                let vc = &mut v[p][c];
                if delta != 0 {
                    let target = u16::from(cfg.sigma_delta_n) * u16::from(delta);
                    if u16::from(*vc) < target {
                        *vc = vc.saturating_add(1);
                    } else if u16::from(*vc) > target {
                        *vc -= 1;
                    }
                    *vc = (*vc).clamp(cfg.v_min, cfg.v_max);
                }
                hit |= delta > *vc;
            }
            fg.data[p] = hit;
        }
        out.push(fg);
    }
    out
}

/// `|I_t − I_0| > threshold` in any channel.
pub fn frame_difference(frames: &[RgbImage], threshold: u8) -> Vec<Mask> {
    let Some(first) = frames.first() else { return vec![] };
    frames
        .iter()
        .map(|f| Grid {
            width: f.width,
            height: f.height,
            data: f
                .data
                .iter()
                .zip(&first.data)
                .map(|(a, b)| (0..3).any(|c| a[c].abs_diff(b[c]) > threshold))
                .collect(),
        })
        .collect()
}

/// Foreground masks from the union of Σ-Δ and frame differencing.
pub fn background_mask(frames: &[RgbImage], cfg: &BgMaskConfig) -> Result<Vec<Mask>> {
    if frames.len() < 2 {
        return Err(Error::Input("background mask needs at least two frames".into()));
    }
    if frames.iter().any(|f| !f.same_size(&frames[0])) {
        return Err(Error::Shape("frames differ in size".into()));
    }
    if cfg.v_min > cfg.v_max || cfg.sigma_delta_n == 0 {
        return Err(Error::Config(format!("invalid Σ-Δ parameters {cfg:?}")));
    }
    let sd = sigma_delta(frames, cfg);
    let fd = frame_difference(frames, cfg.diff_threshold);
    Ok(sd
        .into_iter()
        .zip(fd)
        .map(|(a, b)| Grid { width: a.width, height: a.height, data: a.data.iter().zip(&b.data).map(|(x, y)| *x || *y).collect() })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_video_has_no_foreground() {
        let f = Grid::from_fn(5, 4, |x, y| [(x * 40) as u8, (y * 50) as u8, 77]);
        let masks = background_mask(&vec![f; 10], &BgMaskConfig::default()).unwrap();
        assert!(masks.iter().all(|m| m.count() == 0));
    }

    #[test]
    fn step_is_flagged_at_its_frame() {
        // Hand trace with N = 4 for one pixel stepping 0 → 255 at frame k:
        // M goes 0 → 1, Δ = 254, V goes 2 → 3 (towards 1016), Δ > V.
        let k = 4;
        let frames: Vec<RgbImage> = (0..8).map(|t| Grid::filled(1, 1, if t >= k { [255; 3] } else { [0; 3] })).collect();
        let sd = sigma_delta(&frames, &BgMaskConfig::default());
        assert!(sd[..k].iter().all(|m| !m.data[0]));
        assert!(sd[k].data[0]);
        let masks = background_mask(&frames, &BgMaskConfig::default()).unwrap();
        assert!(masks[k].data[0]);
    }

    #[test]
    fn frame_difference_alone_marks_foreground() {
        // Σ-Δ absorbs a slow ramp, frame differencing still reports it.
        let frames: Vec<RgbImage> = (0..40).map(|t| Grid::filled(1, 1, [t as u8; 3])).collect();
        let cfg = BgMaskConfig::default();
        let sd = sigma_delta(&frames, &cfg);
        let masks = background_mask(&frames, &cfg).unwrap();
        let fd = frame_difference(&frames, cfg.diff_threshold);
        for t in 0..frames.len() {
            if fd[t].data[0] {
                assert!(masks[t].data[0]);
            }
        }
        assert!(!sd[39].data[0] && masks[39].data[0]);
    }
}
