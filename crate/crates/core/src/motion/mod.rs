//! Motion segmentation by common fate: point tracking, trajectory
//! clustering, watershed densification and spatio-temporal components,
//! plus the foreground ensemble used for background training data.

pub mod bgmask;
pub mod components;
pub mod graph;
pub mod multicut;
pub mod track;
pub mod watershed;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bgmask::{background_mask, BgMaskConfig};
pub use components::{connected_components_3d, DenseSegmentation, SegObject};
pub use graph::{build_graph, motion_distance, AffinityGraph, GraphConfig};
pub use multicut::{cluster, ClusterLabeling};
pub use track::{track, PointTrajectory, TrackConfig};
pub use watershed::{watershed, Seed};

use crate::error::{Error, Result};
use crate::formats::{self, FlowField};
use crate::image::{sobel_magnitude, LabelMap, RgbImage};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegConfig {
    pub track: TrackConfig,
    pub graph: GraphConfig,
    /// Clusters with fewer trajectories are treated as background.
    pub min_cluster_size: usize,
}

impl SegConfig {
    pub fn desk() -> Self {
        Self { track: TrackConfig::default(), graph: GraphConfig::default(), min_cluster_size: 5 }
    }
}

/// Maps each cluster to an output label: the background cluster (the one
/// covering the most trajectory points) and clusters below `min_size`
/// trajectories become 0; the rest are numbered `1..` by cluster id.
pub fn cluster_to_label(trajectories: &[PointTrajectory], clusters: &ClusterLabeling, min_size: usize) -> Vec<u16> {
    let k = clusters.num_clusters();
    let mut count = vec![0usize; k];
    let mut points = vec![0usize; k];
    for (tr, &c) in trajectories.iter().zip(&clusters.labels) {
        count[c as usize] += 1;
        points[c as usize] += tr.positions.len();
    }
    // First maximum wins on ties.
    let bg = (0..k).fold(None::<usize>, |best, c| match best {
        Some(b) if points[b] >= points[c] => Some(b),
        _ => Some(c),
    });
    let mut next = 0u16;
    (0..k)
        .map(|c| {
            if Some(c) == bg || count[c] < min_size {
                0
            } else {
                next += 1;
                next
            }
        })
        .collect()
}

/// Watershed of each frame's gradient magnitude from the labeled
/// trajectory points alive in that frame.
pub fn densify(frames: &[RgbImage], trajectories: &[PointTrajectory], point_labels: &[u16]) -> Result<Vec<LabelMap>> {
    if trajectories.len() != point_labels.len() {
        return Err(Error::Shape("one label per trajectory required".into()));
    }
    Ok(frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let seeds: Vec<Seed> = trajectories
                .iter()
                .zip(point_labels)
                .filter_map(|(tr, &label)| {
                    let p = tr.position(t)?;
                    let (x, y) = (p[0].round(), p[1].round());
                    (x >= 0.0 && y >= 0.0 && (x as usize) < f.width && (y as usize) < f.height)
                        .then(|| Seed { x: x as usize, y: y as usize, label })
                })
                .collect();
            watershed(&sobel_magnitude(f), &seeds)
        })
        .collect())
}

/// Full stage-one segmentation of one video.
pub fn segment(frames: &[RgbImage], fwd: &[FlowField], bwd: &[FlowField], cfg: &SegConfig) -> Result<DenseSegmentation> {
    if frames.len() != fwd.len() + 1 {
        return Err(Error::Input(format!("{} frames but {} flow fields", frames.len(), fwd.len())));
    }
    let trajectories = track(fwd, bwd, &cfg.track)?;
    let graph = build_graph(&trajectories, &cfg.graph)?;
    let clusters = cluster(&graph);
    let cluster_labels = cluster_to_label(&trajectories, &clusters, cfg.min_cluster_size);
    let point_labels: Vec<u16> = clusters.labels.iter().map(|&c| cluster_labels[c as usize]).collect();
    let maps = densify(frames, &trajectories, &point_labels)?;
    connected_components_3d(&maps)
}

impl DenseSegmentation {
    /// Writes `labels_XXX.pgm` per frame and `objects.json`.
    pub fn save(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut out = Vec::new();
        for (t, l) in self.labels.iter().enumerate() {
            let p = dir.join(crate::fishbowl::labels_name(t));
            formats::write_file(&p, &formats::encode_pgm_labels(l))?;
            out.push(p);
        }
        let p = dir.join("objects.json");
        formats::write_file(&p, &serde_json::to_vec_pretty(&self.objects).expect("serializable"))?;
        out.push(p);
        Ok(out)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("objects.json");
        let objects: Vec<SegObject> =
            serde_json::from_slice(&formats::read_file(&p)?).map_err(|e| Error::Json { path: p.clone(), source: e })?;
        let frames = objects.first().map_or(0, |o| o.pixel_counts.len());
        let mut labels = Vec::new();
        for t in 0.. {
            let lp = dir.join(crate::fishbowl::labels_name(t));
            if !lp.exists() {
                break;
            }
            labels.push(formats::load_pgm(&lp)?);
        }
        if !objects.is_empty() && labels.len() != frames {
            return Err(Error::Format(format!("{}: object table and label maps disagree", dir.display())));
        }
        Ok(Self { labels, objects })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fishbowl::{generate, FishbowlConfig};

    #[test]
    fn segmentation_is_deterministic_and_total() {
        let cfg = FishbowlConfig { frames: 10, ..FishbowlConfig::desk() };
        let v = generate(&cfg, 11).unwrap();
        let a = segment(&v.frames, &v.flow_fwd, &v.flow_bwd, &SegConfig::desk()).unwrap();
        let b = segment(&v.frames, &v.flow_fwd, &v.flow_bwd, &SegConfig::desk()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels.len(), 10);
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        assert_eq!(DenseSegmentation::load(dir.path()).unwrap(), a);
    }

    #[test]
    fn background_is_the_largest_cluster() {
        let trs: Vec<PointTrajectory> = (0..12)
            .map(|i| PointTrajectory { id: i, start: 0, positions: vec![[0.0, 0.0]; if i < 6 { 10 } else { 3 }], sigmas: vec![] })
            .collect();
        let clusters = ClusterLabeling { labels: vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2] };
        assert_eq!(cluster_to_label(&trs, &clusters, 5), vec![0, 1, 0]);
    }
}
