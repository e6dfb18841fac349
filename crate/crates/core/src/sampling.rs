//! Farthest point sampling of query anchor locations.

use crate::error::{Error, Result};
use crate::scene::Point3;

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub locations: Vec<Point3>,
    pub source_indices: Vec<usize>,
    /// Set when the cloud had fewer points than requested anchors and the
    /// trailing slots repeat the last selected point.
    pub padded: bool,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

/// Greedy farthest point sampling in 3D.
///
/// Starts at `points[start_index]`; every further sample maximizes the
/// minimum distance to the samples chosen so far, with ties going to the
/// lowest index. Runs in `O(points * count)`.
pub fn farthest_point_sample(points: &[Point3], count: usize, start_index: usize) -> Result<AnchorSet> {
    if points.is_empty() {
        return Err(Error::Empty("farthest point sampling on an empty cloud"));
    }
    if count == 0 {
        return Err(Error::Config("anchor count must be at least 1".into()));
    }
    if start_index >= points.len() {
        return Err(Error::Config(format!("start index {start_index} out of range for {} points", points.len())));
    }

    let take = count.min(points.len());
    let mut selected = Vec::with_capacity(count);
    let mut min_dist = vec![f64::INFINITY; points.len()];
    let mut taken = vec![false; points.len()];
    let mut current = start_index;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == take {
            break;
        }
        let anchor = points[current];
        let mut best = usize::MAX;
        let mut best_dist = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = p.distance_sq(&anchor);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if !taken[i] && min_dist[i] > best_dist {
                best_dist = min_dist[i];
                best = i;
            }
        }
        current = best;
    }

    let padded = count > points.len();
    let last = *selected.last().expect("at least one sample");
    selected.resize(count, last);
    Ok(AnchorSet { locations: selected.iter().map(|&i| points[i]).collect(), source_indices: selected, padded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Vec<Point3> {
        vec![Point3::new(0.0, 0.0, 0.0), Point3::new(5.0, 0.0, 0.0), Point3::new(10.0, 0.0, 0.0)]
    }

    #[test]
    fn picks_the_far_end_first() {
        assert_eq!(farthest_point_sample(&line(), 2, 0).unwrap().source_indices, vec![0, 2]);
        assert_eq!(farthest_point_sample(&line(), 3, 0).unwrap().source_indices, vec![0, 2, 1]);
    }

    #[test]
    fn pads_small_clouds() {
        let a = farthest_point_sample(&line(), 5, 1).unwrap();
        assert!(a.padded);
        assert_eq!(a.source_indices, vec![1, 0, 2, 2, 2]);
        assert!(!farthest_point_sample(&line(), 3, 1).unwrap().padded);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let pts = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(-1.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        assert_eq!(farthest_point_sample(&pts, 2, 0).unwrap().source_indices, vec![0, 1]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(farthest_point_sample(&[], 1, 0).is_err());
        assert!(farthest_point_sample(&line(), 0, 0).is_err());
        assert!(farthest_point_sample(&line(), 1, 3).is_err());
    }
}
