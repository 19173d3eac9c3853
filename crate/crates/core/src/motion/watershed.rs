use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::image::{Grid, LabelMap};

/// A labeled marker pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seed {
    pub x: usize,
    pub y: usize,
    pub label: u16,
}

/// Marker-based priority flood over `priority` (4-neighbourhood).
///
/// Pixels are labeled when pushed. The queue key is the running maximum of
/// the priority along the flooding path, and equal keys pop in insertion
/// order. When several seeds hit one pixel, the first wins. Without seeds
/// the whole map is background (0).
pub fn watershed(priority: &Grid<f32>, seeds: &[Seed]) -> LabelMap {
    let (w, h) = (priority.width, priority.height);
    let mut labels: Grid<Option<u16>> = Grid::filled(w, h, None);
    let mut heap: BinaryHeap<Reverse<(u32, u64, u32)>> = BinaryHeap::new();
    let mut counter = 0u64;
    let key = |v: f32| v.max(0.0).to_bits();
    for s in seeds {
        if s.x >= w || s.y >= h || labels.get(s.x, s.y).is_some() {
            continue;
        }
        labels.set(s.x, s.y, Some(s.label));
        heap.push(Reverse((key(*priority.get(s.x, s.y)), counter, (s.y * w + s.x) as u32)));
        counter += 1;
    }
    while let Some(Reverse((level, _, idx))) = heap.pop() {
        let (x, y) = (idx as usize % w, idx as usize / w);
        let l = labels.get(x, y).expect("pushed pixels are labeled");
        let neighbours = [
            (x > 0).then(|| (x - 1, y)),
            (x + 1 < w).then(|| (x + 1, y)),
            (y > 0).then(|| (x, y - 1)),
            (y + 1 < h).then(|| (x, y + 1)),
        ];
        for (nx, ny) in neighbours.into_iter().flatten() {
            if labels.get(nx, ny).is_none() {
                labels.set(nx, ny, Some(l));
                // Non-negative f32 bit patterns order like the values.
                heap.push(Reverse((level.max(key(*priority.get(nx, ny))), counter, (ny * w + nx) as u32)));
                counter += 1;
            }
        }
    }
    labels.map(|l| l.unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_keep_their_labels_and_labeling_is_total() {
        let pri = Grid::from_fn(12, 9, |x, y| ((x * 7 + y * 3) % 5) as f32);
        let seeds = [Seed { x: 1, y: 1, label: 3 }, Seed { x: 10, y: 7, label: 1 }, Seed { x: 5, y: 4, label: 0 }];
        let out = watershed(&pri, &seeds);
        for s in &seeds {
            assert_eq!(*out.get(s.x, s.y), s.label);
        }
        assert!(out.data.iter().all(|&l| [0, 1, 3].contains(&l)));
    }

    #[test]
    fn flat_priority_splits_by_nearest_seed() {
        let pri = Grid::filled(15, 10, 0.0f32);
        let seeds = [Seed { x: 2, y: 3, label: 1 }, Seed { x: 11, y: 6, label: 2 }];
        let out = watershed(&pri, &seeds);
        for y in 0..10usize {
            for x in 0..15usize {
                let d1 = x.abs_diff(2) + y.abs_diff(3);
                let d2 = x.abs_diff(11) + y.abs_diff(6);
                if d1 < d2 {
                    assert_eq!(*out.get(x, y), 1, "({x},{y})");
                } else if d2 < d1 {
                    assert_eq!(*out.get(x, y), 2, "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn ridge_stops_flooding() {
        // A high wall at x = 5 keeps the left seed out of the right basin.
        let pri = Grid::from_fn(11, 5, |x, _| if x == 5 { 100.0 } else { 0.0 });
        let seeds = [Seed { x: 0, y: 2, label: 1 }, Seed { x: 9, y: 2, label: 2 }];
        let out = watershed(&pri, &seeds);
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(*out.get(x, y), 1);
            }
            for x in 6..11 {
                assert_eq!(*out.get(x, y), 2);
            }
        }
    }

    #[test]
    fn no_seeds_is_all_background() {
        let out = watershed(&Grid::filled(4, 3, 1.0), &[]);
        assert!(out.data.iter().all(|&l| l == 0));
    }
}
