//! Class-index clusters and their routing across the frame pair.

use serde::Serialize;

use crate::descriptors::LabelMap;

/// Cluster area above which a pair goes to graph matching (strict, both frames).
pub const DEFAULT_AREA_THRESHOLD: usize = 10_000;
/// Smallest cluster that can feed fundamental-matrix RANSAC.
pub const MIN_MATCH_PIXELS: usize = 16;

/// All pixels sharing one class index. Pixels need not be connected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cluster {
    pub index: u16,
    /// Pixel indices `y * width + x` in ascending order.
    pub pixels: Vec<usize>,
    /// `(min_x, min_y, max_x, max_y)`, inclusive.
    pub bbox: (usize, usize, usize, usize),
}

impl Cluster {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// One cluster per class present in `labels`, ordered by class index.
pub fn build_clusters(labels: &LabelMap) -> Vec<Cluster> {
    let w = labels.width();
    let mut slots: Vec<Option<Cluster>> = vec![None; labels.classes()];
    for (i, &l) in labels.labels().iter().enumerate() {
        let (x, y) = (i % w, i / w);
        let c = slots[l as usize].get_or_insert_with(|| Cluster {
            index: l,
            pixels: Vec::new(),
            bbox: (x, y, x, y),
        });
        c.pixels.push(i);
        c.bbox.0 = c.bbox.0.min(x);
        c.bbox.1 = c.bbox.1.min(y);
        c.bbox.2 = c.bbox.2.max(x);
        c.bbox.3 = c.bbox.3.max(y);
    }
    slots.into_iter().flatten().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Route {
    /// Both areas above the threshold: superpixel graph matching.
    Large,
    /// Direct pixel matching.
    Small,
    /// No partner or too few pixels; contributes no seeds.
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterPair {
    pub index: u16,
    /// Position in the frame-1 cluster list, if present.
    pub first: Option<usize>,
    pub second: Option<usize>,
    pub route: Route,
}

/// Pairs clusters by class index, in ascending index order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterPairing {
    pub pairs: Vec<ClusterPair>,
}

impl ClusterPairing {
    pub fn count(&self, route: Route) -> usize {
        self.pairs.iter().filter(|p| p.route == route).count()
    }
}

pub fn route_for(area1: usize, area2: usize, threshold: usize) -> Route {
    if area1 > threshold && area2 > threshold {
        Route::Large
    } else {
        Route::Small
    }
}

/// Matches clusters of the two frames by class index and routes each pair.
/// Small pairs below [`MIN_MATCH_PIXELS`] are skipped via [`min_match_filter`].
pub fn pair_clusters(a: &[Cluster], b: &[Cluster], area_threshold: usize) -> ClusterPairing {
    let mut indices: Vec<u16> = a.iter().chain(b).map(|c| c.index).collect();
    indices.sort_unstable();
    indices.dedup();
    let pairs = indices
        .into_iter()
        .map(|index| {
            let first = a.iter().position(|c| c.index == index);
            let second = b.iter().position(|c| c.index == index);
            let route = match (first, second) {
                (Some(i), Some(j)) => {
                    let route = route_for(a[i].area(), b[j].area(), area_threshold);
                    if min_match_filter(route, a[i].area(), b[j].area()) {
                        route
                    } else {
                        Route::Skipped
                    }
                }
                _ => Route::Skipped,
            };
            ClusterPair {
                index,
                first,
                second,
                route,
            }
        })
        .collect();
    ClusterPairing { pairs }
}

/// Whether a pair keeps its route: Small pairs need at least
/// [`MIN_MATCH_PIXELS`] pixels in both frames; other routes pass unchanged.
pub fn min_match_filter(route: Route, area1: usize, area2: usize) -> bool {
    match route {
        Route::Small => area1 >= MIN_MATCH_PIXELS && area2 >= MIN_MATCH_PIXELS,
        Route::Large | Route::Skipped => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, f: impl Fn(usize, usize) -> u16) -> LabelMap {
        let labels = (0..w * h).map(|i| f(i % w, i / w)).collect();
        LabelMap::new(w, h, 128, labels).unwrap()
    }

    fn fake(index: u16, area: usize) -> Cluster {
        Cluster {
            index,
            pixels: (0..area).collect(),
            bbox: (0, 0, 0, 0),
        }
    }

    #[test]
    fn uniform_map_is_one_cluster() {
        let c = build_clusters(&map(7, 5, |_, _| 3));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].area(), 35);
        assert_eq!(c[0].bbox, (0, 0, 6, 4));
    }

    #[test]
    fn checkerboard_splits_in_half() {
        let c = build_clusters(&map(6, 4, |x, y| ((x + y) % 2) as u16));
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].area(), 12);
        assert_eq!(c[1].area(), 12);
    }

    #[test]
    fn full_frame_class_is_large() {
        let a = vec![fake(7, 1024 * 436)];
        let p = pair_clusters(&a, &a, DEFAULT_AREA_THRESHOLD);
        assert_eq!(p.pairs.len(), 1);
        assert_eq!(p.pairs[0].route, Route::Large);
    }

    #[test]
    fn routing_rules() {
        let a = vec![fake(1, 9_999), fake(2, 20_000), fake(3, 50), fake(4, 8)];
        let b = vec![fake(1, 20_000), fake(2, 10_001), fake(4, 8), fake(5, 40)];
        let p = pair_clusters(&a, &b, DEFAULT_AREA_THRESHOLD);
        let routes: Vec<(u16, Route)> = p.pairs.iter().map(|p| (p.index, p.route)).collect();
        assert_eq!(
            routes,
            vec![
                (1, Route::Small),
                (2, Route::Large),
                (3, Route::Skipped),
                (4, Route::Skipped),
                (5, Route::Skipped),
            ]
        );
        // Symmetric in frame order.
        let q = pair_clusters(&b, &a, DEFAULT_AREA_THRESHOLD);
        assert_eq!(
            p.pairs.iter().map(|p| p.route).collect::<Vec<_>>(),
            q.pairs.iter().map(|p| p.route).collect::<Vec<_>>()
        );
    }

    #[test]
    fn min_match_floor() {
        assert!(!min_match_filter(Route::Small, 8, 100));
        assert!(min_match_filter(Route::Small, 16, 16));
        assert!(min_match_filter(Route::Large, 8, 8));
    }

    #[test]
    fn clusters_partition_the_image() {
        let m = map(13, 9, |x, y| ((x * 7 + y * 3) % 5) as u16);
        let clusters = build_clusters(&m);
        assert_eq!(clusters.iter().map(Cluster::area).sum::<usize>(), 13 * 9);
        for c in &clusters {
            assert!(c.pixels.iter().all(|&i| m.labels()[i] == c.index));
        }
    }
}
