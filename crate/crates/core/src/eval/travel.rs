//! Query travel lengths: how far the final box lies from the first and from
//! the latest anchor, and how the location error depends on it.

/// One detection of the analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TravelRecord {
    pub scene: usize,
    /// BEV distance from the initial anchor to the box center.
    pub fq: f64,
    /// BEV distance from the latest anchor to the box center.
    pub lq: f64,
    /// BEV center error of a true positive; `None` for false positives.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TravelKind {
    First,
    Latest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TravelBin {
    pub lo: f64,
    pub hi: f64,
    /// Error quantiles of true positives in the bin; `None` without any.
    pub median: Option<f64>,
    pub q25: Option<f64>,
    pub q75: Option<f64>,
    /// True positives in the bin.
    pub tp_count: usize,
    /// Detections whose LQ travel length falls in `[lo, hi)`.
    pub hist_lq: usize,
}

/// Linear interpolation between closest ranks of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn bin_of(v: f64, width: f64) -> usize {
    (v / width).floor().max(0.0) as usize
}

/// Bins records by `kind` travel length. Bins with neither a true positive
/// nor an LQ histogram count are omitted.
pub fn travel_length_stats(records: &[TravelRecord], bin_width: f64, kind: TravelKind) -> Vec<TravelBin> {
    assert!(bin_width > 0.0, "bin width must be positive");
    let key = |r: &TravelRecord| match kind {
        TravelKind::First => r.fq,
        TravelKind::Latest => r.lq,
    };
    let bins = records.iter().map(|r| bin_of(key(r), bin_width).max(bin_of(r.lq, bin_width)) + 1).max().unwrap_or(0);
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); bins];
    let mut hist = vec![0usize; bins];
    for r in records {
        if let Some(e) = r.error {
            errors[bin_of(key(r), bin_width)].push(e);
        }
        hist[bin_of(r.lq, bin_width)] += 1;
    }
    errors
        .into_iter()
        .zip(hist)
        .enumerate()
        .filter(|(_, (e, h))| !e.is_empty() || *h > 0)
        .map(|(i, (mut e, h))| {
            e.sort_by(f64::total_cmp);
            let q = |p: f64| (!e.is_empty()).then(|| percentile(&e, p));
            TravelBin {
                lo: i as f64 * bin_width,
                hi: (i + 1) as f64 * bin_width,
                median: q(0.5),
                q25: q(0.25),
                q75: q(0.75),
                tp_count: e.len(),
                hist_lq: h,
            }
        })
        .collect()
}

/// Median of a sample (`None` when empty).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(percentile(&v, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let r = TravelRecord { scene: 0, fq: 2.0, lq: 0.1, error: Some(0.4) };
        let bins = travel_length_stats(&[r], 4.0, TravelKind::First);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].median, Some(0.4));
        assert_eq!(bins[0].hist_lq, 1);
    }

    #[test]
    fn anchors_on_centers_put_all_lq_mass_in_the_first_bin() {
        let rs: Vec<TravelRecord> =
            (0..20).map(|i| TravelRecord { scene: 0, fq: i as f64, lq: 0.0, error: Some(0.1) }).collect();
        let bins = travel_length_stats(&rs, 4.0, TravelKind::Latest);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].hist_lq, 20);
    }

    #[test]
    fn numpy_linear_percentiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert_eq!(percentile(&v, 0.25), 1.75);
        assert_eq!(median(&[5.0, 1.0, 3.0]), Some(3.0));
    }

    #[test]
    fn empty_bins_are_absent() {
        let rs = [
            TravelRecord { scene: 0, fq: 1.0, lq: 1.0, error: Some(0.2) },
            TravelRecord { scene: 0, fq: 13.0, lq: 1.0, error: Some(0.9) },
        ];
        let bins = travel_length_stats(&rs, 4.0, TravelKind::First);
        assert_eq!(bins.iter().map(|b| b.lo).collect::<Vec<_>>(), vec![0.0, 12.0]);
    }
}
