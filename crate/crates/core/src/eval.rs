//! Segmentation and reconstruction metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{LabelMap, Mask, RgbImage};

/// `|a ∩ b| / |a ∪ b|`; two empty masks score 1.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::Shape(format!("iou of {}x{} and {}x{} masks", a.width, a.height, b.width, b.height)));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Rows-to-columns assignment maximizing the summed score (Kuhn-Munkres
/// with potentials, O(n²m)). Every row is assigned when `rows ≤ cols`,
/// otherwise every column is.
pub fn hungarian(scores: &[Vec<f64>]) -> Result<Vec<Option<usize>>> {
    let rows = scores.len();
    let cols = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged score matrix".into()));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    if rows == 0 || cols == 0 {
        return Ok(vec![None; rows]);
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| scores[r][c]).collect()).collect();
        let by_col = hungarian(&t)?;
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return Ok(out);
    }
    // 1-based arrays; column 0 is the virtual start.
    let (n, m) = (rows, cols);
    let cost = |i: usize, j: usize| -scores[i - 1][j - 1];
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = Some(j - 1);
        }
    }
    Ok(out)
}

/// Matching of the ground-truth objects visible in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMatch {
    /// Per ground-truth object: `None` when it is not visible this frame.
    pub visible: Vec<bool>,
    /// Matched predicted label per ground-truth object.
    pub assignment: Vec<Option<u16>>,
    /// IoU with the matched prediction; 0 when unmatched.
    pub ious: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub frames: Vec<FrameMatch>,
}

/// Hungarian matching of ground-truth object masks to the nonzero
/// predicted labels of one frame. Pairs with IoU 0 stay unmatched.
pub fn match_frame(gt: &LabelMap, gt_labels: &[u16], pred: &LabelMap) -> Result<FrameMatch> {
    if !gt.same_size(pred) {
        return Err(Error::Shape("ground truth and prediction differ in size".into()));
    }
    let mut pred_labels: Vec<u16> = pred.data.iter().copied().filter(|&l| l != 0).collect();
    pred_labels.sort_unstable();
    pred_labels.dedup();
    let gt_masks: Vec<Mask> = gt_labels.iter().map(|&l| gt.mask_of(l)).collect();
    let visible: Vec<bool> = gt_masks.iter().map(|m| m.count() > 0).collect();
    let pred_masks: Vec<Mask> = pred_labels.iter().map(|&l| pred.mask_of(l)).collect();
    let vis_idx: Vec<usize> = (0..gt_labels.len()).filter(|&k| visible[k]).collect();
    let mut scores = Vec::with_capacity(vis_idx.len());
    for &k in &vis_idx {
        scores.push(pred_masks.iter().map(|p| iou(&gt_masks[k], p)).collect::<Result<Vec<f64>>>()?);
    }
    let assign = hungarian(&scores)?;
    let mut assignment = vec![None; gt_labels.len()];
    let mut ious = vec![0.0; gt_labels.len()];
    for (row, &k) in vis_idx.iter().enumerate() {
        if let Some(c) = assign[row] {
            if scores[row][c] > 0.0 {
                assignment[k] = Some(pred_labels[c]);
                ious[k] = scores[row][c];
            }
        }
    }
    Ok(FrameMatch { visible, assignment, ious })
}

pub fn match_video(gt: &[LabelMap], gt_labels: &[u16], pred: &[LabelMap]) -> Result<MatchResult> {
    if gt.len() != pred.len() {
        return Err(Error::Shape(format!("{} ground-truth frames vs {} predicted", gt.len(), pred.len())));
    }
    Ok(MatchResult { frames: gt.iter().zip(pred).map(|(g, p)| match_frame(g, gt_labels, p)).collect::<Result<_>>()? })
}

/// Mean matched IoU over each object's visible frames. Objects never
/// visible get `None`.
pub fn per_object_iou(m: &MatchResult) -> Vec<Option<f64>> {
    let k = m.frames.first().map_or(0, |f| f.visible.len());
    (0..k)
        .map(|o| {
            let vals: Vec<f64> = m.frames.iter().filter(|f| f.visible[o]).map(|f| f.ious[o]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// Average over frames per object, then over objects.
pub fn davis_object_iou(m: &MatchResult) -> Option<f64> {
    mean(&per_object_iou(m).into_iter().flatten().collect::<Vec<_>>())
}

/// Fraction of objects whose mean IoU is strictly above `tau`.
pub fn recall_at(per_object: &[f64], tau: f64) -> f64 {
    if per_object.is_empty() {
        return 0.0;
    }
    per_object.iter().filter(|&&v| v > tau).count() as f64 / per_object.len() as f64
}

/// Label 0 against ground-truth label 0, averaged over frames.
pub fn background_iou(gt: &[LabelMap], pred: &[LabelMap]) -> Result<f64> {
    if gt.len() != pred.len() || gt.is_empty() {
        return Err(Error::Shape("background iou needs matching nonempty sequences".into()));
    }
    let mut s = 0.0;
    for (g, p) in gt.iter().zip(pred) {
        s += iou(&g.mask_of(0), &p.mask_of(0))?;
    }
    Ok(s / gt.len() as f64)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Segmentation scores of one video or a pooled set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub background_iou: f64,
    pub object_iou: Option<f64>,
    pub recall_0: f64,
    pub recall_05: f64,
    pub num_objects: usize,
}

/// Per-video scores plus the per-object IoUs needed for pooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScores {
    pub name: String,
    pub scores: SegScores,
    pub object_ious: Vec<f64>,
}

pub fn score_video(name: &str, gt: &[LabelMap], gt_labels: &[u16], pred: &[LabelMap]) -> Result<VideoScores> {
    let m = match_video(gt, gt_labels, pred)?;
    let object_ious: Vec<f64> = per_object_iou(&m).into_iter().flatten().collect();
    Ok(VideoScores {
        name: name.to_string(),
        scores: SegScores {
            background_iou: background_iou(gt, pred)?,
            object_iou: mean(&object_ious),
            recall_0: recall_at(&object_ious, 0.0),
            recall_05: recall_at(&object_ious, 0.5),
            num_objects: object_ious.len(),
        },
        object_ious,
    })
}

/// Background IoU averaged over videos; object metrics pooled over all
/// objects of all videos.
pub fn pool_scores(videos: &[VideoScores]) -> Result<SegScores> {
    if videos.is_empty() {
        return Err(Error::Input("no videos to pool".into()));
    }
    let all: Vec<f64> = videos.iter().flat_map(|v| v.object_ious.iter().copied()).collect();
    Ok(SegScores {
        background_iou: videos.iter().map(|v| v.scores.background_iou).sum::<f64>() / videos.len() as f64,
        object_iou: mean(&all),
        recall_0: recall_at(&all, 0.0),
        recall_05: recall_at(&all, 0.5),
        num_objects: all.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub videos: Vec<VideoScores>,
    pub aggregate: SegScores,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl SegReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>8} {:>8} {:>4}", "video", "bg IoU", "IoU", "R@0.0", "R@0.5", "n");
        let rows = self.videos.iter().map(|v| (v.name.as_str(), &v.scores)).chain([("all", &self.aggregate)]);
        for (name, sc) in rows {
            let _ = writeln!(
                s,
                "{:<16} {:>8.3} {:>8} {:>8.3} {:>8.3} {:>4}",
                name,
                sc.background_iou,
                fmt_opt(sc.object_iou),
                sc.recall_0,
                sc.recall_05,
                sc.num_objects
            );
        }
        s
    }
}

/// One crop to score: a binarized predicted amodal mask (and optionally
/// appearance) against the ground-truth unoccluded object.
#[derive(Clone, Debug)]
pub struct ReconCase {
    pub pred_mask: Mask,
    pub pred_rgb: Option<RgbImage>,
    pub gt_mask: Mask,
    pub gt_rgb: RgbImage,
    /// `|occluded| / |unoccluded|` of the ground truth.
    pub visible_fraction: f64,
}

/// Metrics of one run (one seed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub iou: f64,
    pub mae: Option<f64>,
    pub iou_05: Option<f64>,
    pub mae_05: Option<f64>,
    pub count: usize,
    pub count_05: usize,
    /// Crops without mask intersection, left out of the MAE.
    pub mae_excluded: usize,
}

/// Mean absolute RGB error on the intersection of both masks.
pub fn masked_mae(a: &RgbImage, am: &Mask, b: &RgbImage, bm: &Mask) -> Result<Option<f64>> {
    if !(a.same_size(am) && b.same_size(bm) && a.same_size(b)) {
        return Err(Error::Shape("mae inputs differ in size".into()));
    }
    let (mut sum, mut n) = (0u64, 0u64);
    for p in 0..a.data.len() {
        if am.data[p] && bm.data[p] {
            for c in 0..3 {
                sum += u64::from(a.data[p][c].abs_diff(b.data[p][c]));
            }
            n += 3;
        }
    }
    Ok((n > 0).then(|| sum as f64 / n as f64))
}

pub fn object_recon_score(cases: &[ReconCase]) -> Result<ReconMetrics> {
    if cases.is_empty() {
        return Err(Error::Input("no reconstruction cases".into()));
    }
    let (mut ious, mut ious05, mut maes, mut maes05) = (vec![], vec![], vec![], vec![]);
    let mut excluded = 0;
    for c in cases {
        let v = iou(&c.pred_mask, &c.gt_mask)?;
        let hard = c.visible_fraction <= 0.5;
        ious.push(v);
        if hard {
            ious05.push(v);
        }
        if let Some(rgb) = &c.pred_rgb {
            match masked_mae(rgb, &c.pred_mask, &c.gt_rgb, &c.gt_mask)? {
                Some(e) => {
                    maes.push(e);
                    if hard {
                        maes05.push(e);
                    }
                }
                None => excluded += 1,
            }
        }
    }
    Ok(ReconMetrics {
        iou: mean(&ious).expect("nonempty"),
        mae: mean(&maes),
        iou_05: mean(&ious05),
        mae_05: mean(&maes05),
        count: cases.len(),
        count_05: ious05.len(),
        mae_excluded: excluded,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; 0 for a single value.
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        let m = mean(values)?;
        let se = if n > 1 {
            (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean: m, se, n })
    }
}

impl std::fmt::Display for MeanSe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.se)
    }
}

/// Reconstruction scores aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectReconScores {
    pub iou: MeanSe,
    pub mae: Option<MeanSe>,
    pub iou_05: Option<MeanSe>,
    pub mae_05: Option<MeanSe>,
}

impl ObjectReconScores {
    pub fn over_seeds(runs: &[ReconMetrics]) -> Result<Self> {
        let pick = |f: fn(&ReconMetrics) -> Option<f64>| -> Option<MeanSe> {
            let v: Vec<f64> = runs.iter().filter_map(f).collect();
            MeanSe::of(&v)
        };
        Ok(Self {
            iou: pick(|r| Some(r.iou)).ok_or_else(|| Error::Input("no runs".into()))?,
            mae: pick(|r| r.mae),
            iou_05: pick(|r| r.iou_05),
            mae_05: pick(|r| r.mae_05),
        })
    }
}

/// Rows of a reconstruction table, e.g. the occluded-mask baseline and
/// model variants.
pub fn recon_table(rows: &[(String, ObjectReconScores)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<20} {:>15} {:>15} {:>15} {:>15}", "method", "IoU", "MAE", "IoU@0.5", "MAE@0.5");
    let f = |v: Option<MeanSe>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
    for (name, r) in rows {
        let _ = writeln!(s, "{:<20} {:>15} {:>15} {:>15} {:>15}", name, r.iou.to_string(), f(r.mae), f(r.iou_05), f(r.mae_05));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Grid;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    fn boxmask(w: usize, h: usize, x0: usize, y0: usize, s: usize) -> Mask {
        Grid::from_fn(w, h, |x, y| (x0..x0 + s).contains(&x) && (y0..y0 + s).contains(&y))
    }

    #[test]
    fn iou_examples() {
        let a = boxmask(4, 4, 0, 0, 2);
        let b = boxmask(4, 4, 1, 1, 2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &boxmask(4, 4, 2, 2, 2)).unwrap(), 0.0);
        assert_eq!(iou(&a, &b).unwrap(), 1.0 / 7.0);
        let e = Grid::filled(4, 4, false);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(iou(&e, &a).unwrap(), 0.0);
        assert!(iou(&a, &Grid::filled(3, 4, false)).is_err());
    }

    fn brute_force(s: &[Vec<f64>]) -> f64 {
        fn go(s: &[Vec<f64>], r: usize, used: &mut Vec<bool>) -> f64 {
            if r == s.len() {
                return 0.0;
            }
            // A row may stay unassigned only when rows outnumber columns.
            let mut best = if s.len() > used.len() { go(s, r + 1, used) } else { f64::NEG_INFINITY };
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.max(s[r][c] + go(s, r + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        go(s, 0, &mut vec![false; s[0].len()])
    }

    fn total(s: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
        a.iter().enumerate().filter_map(|(r, c)| c.map(|c| s[r][c])).sum()
    }

    #[test]
    fn hungarian_examples() {
        let s = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let a = hungarian(&s).unwrap();
        assert_eq!(a, vec![Some(0), Some(1)]);
        assert!((total(&s, &a) - 1.7).abs() < 1e-12);
        assert_eq!(hungarian(&[vec![0.5]]).unwrap(), vec![Some(0)]);
        assert_eq!(hungarian(&[]).unwrap(), vec![]);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = rng_from_seed(5);
        for _ in 0..300 {
            let (r, c) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let s: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| rng.random::<f64>()).collect()).collect();
            let a = hungarian(&s).unwrap();
            let mut cols: Vec<usize> = a.iter().flatten().copied().collect();
            cols.sort_unstable();
            cols.dedup();
            assert_eq!(cols.len(), r.min(c));
            assert!((total(&s, &a) - brute_force(&s)).abs() < 1e-9);
        }
    }

    /// 3 objects over 4 frames on a 1×12 strip. Object 1 covers pixels
    /// 0..4, object 2 covers 4..8, object 3 covers 8..12 and is visible
    /// only in frames 0 and 1.
    pub(crate) fn davis_fixture() -> (Vec<LabelMap>, Vec<LabelMap>) {
        let gt_row = |with3: bool| -> Vec<u16> {
            (0..12).map(|x| if x < 4 { 1 } else if x < 8 { 2 } else if with3 { 3 } else { 0 }).collect()
        };
        let gt: Vec<LabelMap> =
            (0..4).map(|t| Grid::from_vec(12, 1, gt_row(t < 2)).unwrap()).collect();
        let preds: [[u16; 12]; 4] = [
            // object 1 exact, object 2 half (2 of 4, no extra), object 3 exact
            [5, 5, 5, 5, 6, 6, 0, 0, 7, 7, 7, 7],
            // object 1 overshoots by 1 pixel into object 2: 4/5
            [5, 5, 5, 5, 5, 6, 6, 6, 0, 0, 0, 0],
            // object 1 missed, object 2 exact
            [0, 0, 0, 0, 6, 6, 6, 6, 0, 0, 0, 0],
            // one label spans objects 1 and 2: Hungarian gives it to one
            [5, 5, 5, 5, 5, 5, 5, 5, 0, 0, 0, 0],
        ];
        let pred = preds.iter().map(|r| Grid::from_vec(12, 1, r.to_vec()).unwrap()).collect();
        (gt, pred)
    }

    #[test]
    fn davis_fixture_by_hand() {
        let (gt, pred) = davis_fixture();
        let m = match_video(&gt, &[1, 2, 3], &pred).unwrap();
        // Frame 3: label 5 scores 4/8 with both objects; the tie goes to
        // object 1 (first row), object 2 is unmatched.
        assert_eq!(m.frames[3].assignment, vec![Some(5), None, None]);
        let per = per_object_iou(&m);
        // object 1: (1 + 4/5 + 0 + 1/2) / 4 = 0.575
        // object 2: (1/2 + 3/4 + 1 + 0) / 4 = 0.5625
        // object 3: (1 + 0) / 2 = 0.5
        assert_eq!(per, vec![Some(0.575), Some(0.5625), Some(0.5)]);
        let davis = davis_object_iou(&m).unwrap();
        assert!((davis - (0.575 + 0.5625 + 0.5) / 3.0).abs() < 1e-15);
        // Pooling all 10 visible object-frames instead gives 5.55 / 10.
        let pooled: f64 = m.frames.iter().flat_map(|f| f.ious.iter().zip(&f.visible).filter(|p| *p.1).map(|p| *p.0)).sum();
        assert!((pooled / 10.0 - davis).abs() > 1e-3);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at(&[0.6, 0.6], 0.5), 1.0);
        assert_eq!(recall_at(&[0.0, 0.0], 0.0), 0.0);
        assert_eq!(recall_at(&[], 0.5), 0.0);
        assert_eq!(recall_at(&[0.0, 0.3, 0.7], 0.0), 2.0 / 3.0);
        assert_eq!(recall_at(&[0.0, 0.3, 0.7], 0.5), 1.0 / 3.0);
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let (gt, _) = davis_fixture();
        let v = score_video("v", &gt, &[1, 2, 3], &gt).unwrap();
        assert_eq!(v.scores.background_iou, 1.0);
        assert_eq!(v.scores.object_iou, Some(1.0));
        assert_eq!(v.scores.recall_05, 1.0);
    }

    #[test]
    fn davis_simple_aggregates() {
        let f = |ious: Vec<f64>| FrameMatch { visible: vec![true; ious.len()], assignment: vec![Some(1); ious.len()], ious };
        let one = MatchResult { frames: vec![f(vec![0.8]); 3] };
        assert!((davis_object_iou(&one).unwrap() - 0.8).abs() < 1e-15);
        let two = MatchResult { frames: vec![f(vec![1.0, 0.0]); 3] };
        assert_eq!(davis_object_iou(&two), Some(0.5));
        assert_eq!(davis_object_iou(&MatchResult { frames: vec![] }), None);
    }

    #[test]
    fn recon_scores_perfect_and_half_occluded() {
        let gt = boxmask(8, 8, 2, 2, 4);
        let rgb = Grid::filled(8, 8, [100u8, 50, 25]);
        let perfect = ReconCase { pred_mask: gt.clone(), pred_rgb: Some(rgb.clone()), gt_mask: gt.clone(), gt_rgb: rgb.clone(), visible_fraction: 1.0 };
        let r = object_recon_score(&[perfect]).unwrap();
        assert_eq!((r.iou, r.mae, r.iou_05), (1.0, Some(0.0), None));
        // A 4×4 box with its right half hidden: the occluded-mask baseline
        // predicts 8 of 16 pixels, IoU 1/2, visible fraction 1/2.
        let visible = Grid::from_fn(8, 8, |x, y| gt.get(x, y) & (x < 4));
        let case = ReconCase { pred_mask: visible.clone(), pred_rgb: None, gt_mask: gt.clone(), gt_rgb: rgb, visible_fraction: visible.count() as f64 / gt.count() as f64 };
        let r = object_recon_score(&[case]).unwrap();
        assert_eq!((r.iou, r.iou_05, r.count_05, r.mae), (0.5, Some(0.5), 1, None));
    }

    #[test]
    fn mae_on_intersection_only() {
        let m1 = boxmask(4, 1, 0, 0, 1);
        let m1 = Grid::from_fn(4, 1, |x, _| x < 2 || *m1.get(x, 0));
        let m2 = Grid::from_fn(4, 1, |x, _| x >= 1);
        let a = Grid::from_vec(4, 1, vec![[0u8; 3], [10, 20, 30], [255; 3], [255; 3]]).unwrap();
        let b = Grid::from_vec(4, 1, vec![[255u8; 3], [13, 20, 27], [0; 3], [0; 3]]).unwrap();
        assert_eq!(masked_mae(&a, &m1, &b, &m2).unwrap(), Some(2.0));
        assert_eq!(masked_mae(&a, &m1, &b, &Grid::filled(4, 1, false)).unwrap(), None);
    }

    #[test]
    fn mean_se() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert!((m.se - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(MeanSe::of(&[4.0]).unwrap().se, 0.0);
        assert!(MeanSe::of(&[]).is_none());
    }
}
