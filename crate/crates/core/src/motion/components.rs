use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Grid, LabelMap};

/// Summary of one segmented object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegObject {
    pub label: u16,
    pub first_frame: usize,
    pub last_frame: usize,
    /// Pixel count per frame of the whole video.
    pub pixel_counts: Vec<usize>,
}

/// Per-frame label maps (0 = background) with their object table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseSegmentation {
    pub labels: Vec<LabelMap>,
    pub objects: Vec<SegObject>,
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let g = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = g;
            i = g;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi as usize] = lo;
        }
    }
}

/// 6-connected components of equal nonzero labels over `(x, y, t)`.
/// Output labels are `1..` in scan order of each component's first voxel.
pub fn connected_components_3d(maps: &[LabelMap]) -> Result<DenseSegmentation> {
    let Some(first) = maps.first() else {
        return Ok(DenseSegmentation { labels: vec![], objects: vec![] });
    };
    let (w, h) = (first.width, first.height);
    if maps.iter().any(|m| m.width != w || m.height != h) {
        return Err(Error::Shape("label maps differ in size".into()));
    }
    let plane = w * h;
    let total = plane * maps.len();
    if total > u32::MAX as usize {
        return Err(Error::Input("volume too large".into()));
    }
    let mut uf = UnionFind { parent: (0..total as u32).collect() };
    for (t, m) in maps.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let l = *m.get(x, y);
                if l == 0 {
                    continue;
                }
                let i = (t * plane + y * w + x) as u32;
                if x > 0 && *m.get(x - 1, y) == l {
                    uf.union(i, i - 1);
                }
                if y > 0 && *m.get(x, y - 1) == l {
                    uf.union(i, i - w as u32);
                }
                if t > 0 && *maps[t - 1].get(x, y) == l {
                    uf.union(i, i - plane as u32);
                }
            }
        }
    }
    let mut relabel = vec![0u16; total];
    let mut next = 0usize;
    let mut labels = Vec::with_capacity(maps.len());
    let mut objects: Vec<SegObject> = Vec::new();
    for (t, m) in maps.iter().enumerate() {
        let mut out = Grid::filled(w, h, 0u16);
        for (p, &l) in m.data.iter().enumerate() {
            if l == 0 {
                continue;
            }
            let root = uf.find((t * plane + p) as u32) as usize;
            if relabel[root] == 0 {
                next += 1;
                if next > u16::MAX as usize {
                    return Err(Error::Input("more than 65535 components".into()));
                }
                relabel[root] = next as u16;
                objects.push(SegObject { label: next as u16, first_frame: t, last_frame: t, pixel_counts: vec![0; maps.len()] });
            }
            let id = relabel[root];
            out.data[p] = id;
            let o = &mut objects[id as usize - 1];
            o.last_frame = t;
            o.pixel_counts[t] += 1;
        }
        labels.push(out);
    }
    Ok(DenseSegmentation { labels, objects })
}
