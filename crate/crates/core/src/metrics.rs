//! Depth-error metrics on matched sparse point sets and RS-vs-GS distortion
//! statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::MotionState;
use crate::observations::ObservationSet;

/// Threshold base of the δ accuracy metrics.
pub const DELTA_BASE: f64 = 1.25;

/// CSV columns of [`MetricsReport::csv_row`], after the key columns.
pub const CSV_METRIC_COLUMNS: &str = "abs_rel,abs_diff,rms,delta1,delta2,delta3";

/// What is compared per matched point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compared {
    /// The `z` coordinate.
    #[default]
    Depth,
    /// Euclidean distance; ratios use the vector norms. Diagnostic only.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub abs_diff: f64,
    pub rms: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_points: usize,
    /// Frame the compared points are expressed in.
    pub frame: String,
    #[serde(default)]
    pub compared: Compared,
}

impl MetricsReport {
    pub fn deltas(&self) -> [f64; 3] {
        [self.delta1, self.delta2, self.delta3]
    }

    /// `method,class,abs_rel,…,delta3` without a trailing newline.
    pub fn csv_row(&self, method: &str, class: &str) -> String {
        let mut s = format!("{method},{class}");
        for v in [self.abs_rel, self.abs_diff, self.rms, self.delta1, self.delta2, self.delta3] {
            write!(s, ",{v}").unwrap();
        }
        s
    }
}

fn matched<'a>(est: &'a PointCloud, gt: &'a PointCloud) -> Vec<(u32, &'a nalgebra::Vector3<f64>, &'a nalgebra::Vector3<f64>)> {
    let gt_by_id: BTreeMap<u32, _> = gt.iter().collect();
    let mut pairs: Vec<_> = est
        .iter()
        .filter_map(|(id, e)| gt_by_id.get(&id).map(|g| (id, e, *g)))
        .collect();
    pairs.sort_by_key(|(id, _, _)| *id);
    pairs
}

/// Depth metrics over the points present in both clouds (matched by id).
pub fn compute_metrics(est: &PointCloud, gt: &PointCloud, frame: &str) -> Result<MetricsReport> {
    compute_metrics_with(est, gt, frame, Compared::Depth)
}

pub fn compute_metrics_with(
    est: &PointCloud,
    gt: &PointCloud,
    frame: &str,
    compared: Compared,
) -> Result<MetricsReport> {
    let pairs = matched(est, gt);
    if pairs.is_empty() {
        return Err(Error::NoMatches);
    }
    let (mut abs_rel, mut abs_diff, mut sq) = (0.0, 0.0, 0.0);
    let mut within = [0usize; 3];
    for &(id, e, g) in &pairs {
        let (diff, ze, zg) = match compared {
            Compared::Depth => ((e.z - g.z).abs(), e.z, g.z),
            Compared::Euclidean => ((e - g).norm(), e.norm(), g.norm()),
        };
        if zg == 0.0 {
            return Err(Error::ZeroGroundTruthDepth { point_id: id });
        }
        abs_rel += diff / zg.abs();
        abs_diff += diff;
        sq += diff * diff;
        let ratio = (ze / zg).max(zg / ze);
        // a sign flip or a zero estimate fails every threshold
        let ratio = if ratio.is_finite() && ratio > 0.0 { ratio } else { f64::INFINITY };
        let mut threshold = 1.0;
        for w in within.iter_mut() {
            threshold *= DELTA_BASE;
            if ratio < threshold {
                *w += 1;
            }
        }
    }
    let n = pairs.len() as f64;
    Ok(MetricsReport {
        abs_rel: abs_rel / n,
        abs_diff: abs_diff / n,
        rms: (sq / n).sqrt(),
        delta1: within[0] as f64 / n,
        delta2: within[1] as f64 / n,
        delta3: within[2] as f64 / n,
        n_points: pairs.len(),
        frame: frame.to_owned(),
        compared,
    })
}

/// Moves points from the row-0 frame to the camera frame of (fractional)
/// viewpoint row `row` under `motion`.
pub fn reanchor(cloud: &PointCloud, motion: &MotionState, line_period: f64, row: f64) -> PointCloud {
    cloud.map(|p| motion.displace_at(p, line_period, row))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSummary {
    pub max: f64,
    pub mean: f64,
    pub n_matched: usize,
}

/// Image-space displacement between observations of the same point at the
/// same viewpoint in two sets.
pub fn distortion_summary(gs: &ObservationSet, rs: &ObservationSet) -> Result<DistortionSummary> {
    let key = |r: &crate::geometry::ImagePoint| (r.point_id, r.viewpoint.row, r.viewpoint.col);
    let rs_by_key: BTreeMap<_, _> = rs.records.iter().map(|r| (key(r), r)).collect();
    let (mut max, mut sum, mut n) = (0.0f64, 0.0, 0usize);
    for g in &gs.records {
        if let Some(r) = rs_by_key.get(&key(g)) {
            let d = (g.x - r.x).hypot(g.y - r.y);
            max = max.max(d);
            sum += d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoMatches);
    }
    Ok(DistortionSummary {
        max,
        mean: sum / n as f64,
        n_matched: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::Vec3;
    use crate::sim::{default_rig, simulate, MotionScenario, Scene};
    use proptest::prelude::*;

    fn depths(z: &[f64]) -> PointCloud {
        PointCloud::from_points(z.iter().map(|&z| Vec3::new(0.0, 0.0, z)).collect())
    }

    #[test]
    fn identity_is_perfect() {
        let c = depths(&[1.0, 2.0, 7.5]);
        let m = compute_metrics(&c, &c, "row0").unwrap();
        assert_eq!((m.abs_rel, m.abs_diff, m.rms), (0.0, 0.0, 0.0));
        assert_eq!(m.deltas(), [1.0; 3]);
        assert_eq!(m.n_points, 3);
    }

    #[test]
    fn single_point_arithmetic() {
        let m = compute_metrics(&depths(&[1.1]), &depths(&[1.0]), "f").unwrap();
        assert!((m.abs_rel - 0.1).abs() < 1e-12);
        assert!((m.abs_diff - 0.1).abs() < 1e-12);
        assert!((m.rms - 0.1).abs() < 1e-12);
        assert_eq!(m.delta1, 1.0);
    }

    #[test]
    fn two_point_arithmetic() {
        let m = compute_metrics(&depths(&[1.0, 3.0]), &depths(&[1.0, 1.0]), "f").unwrap();
        assert!((m.rms - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.delta1, 0.5);
        assert_eq!(m.delta3, 0.5);
    }

    #[test]
    fn errors() {
        let a = PointCloud::new(vec![1], vec![Vec3::new(0.0, 0.0, 1.0)]);
        let b = PointCloud::new(vec![2], vec![Vec3::new(0.0, 0.0, 1.0)]);
        assert!(matches!(compute_metrics(&a, &b, "f"), Err(Error::NoMatches)));
        let z = PointCloud::new(vec![1], vec![Vec3::new(1.0, 0.0, 0.0)]);
        assert!(matches!(
            compute_metrics(&a, &z, "f"),
            Err(Error::ZeroGroundTruthDepth { point_id: 1 })
        ));
    }

    #[test]
    fn unmatched_points_are_ignored() {
        let est = PointCloud::new(vec![0, 1, 9], vec![Vec3::new(0.0, 0.0, 2.0); 3]);
        let gt = PointCloud::new(vec![1, 0], vec![Vec3::new(0.0, 0.0, 2.0); 2]);
        assert_eq!(compute_metrics(&est, &gt, "f").unwrap().n_points, 2);
    }

    #[test]
    fn csv_row_layout() {
        let m = compute_metrics(&depths(&[1.1]), &depths(&[1.0]), "f").unwrap();
        let row = m.csv_row("Full", "slow");
        assert_eq!(row.split(',').count(), 8);
        assert!(row.starts_with("Full,slow,"));
        assert_eq!(CSV_METRIC_COLUMNS.split(',').count(), 6);
    }

    #[test]
    fn euclidean_mode_sees_lateral_error() {
        let est = PointCloud::from_points(vec![Vec3::new(0.3, 0.4, 5.0)]);
        let gt = PointCloud::from_points(vec![Vec3::new(0.0, 0.0, 5.0)]);
        assert_eq!(compute_metrics(&est, &gt, "f").unwrap().rms, 0.0);
        let m = compute_metrics_with(&est, &gt, "f", Compared::Euclidean).unwrap();
        assert!((m.rms - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn deltas_are_monotone_and_symmetric(
            pairs in proptest::collection::vec((0.1f64..10.0, 0.1f64..10.0), 1..40)
        ) {
            let e = depths(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
            let g = depths(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
            let m = compute_metrics(&e, &g, "f").unwrap();
            prop_assert!(m.delta1 <= m.delta2 && m.delta2 <= m.delta3);
            prop_assert!((0.0..=1.0).contains(&m.delta1) && m.delta3 <= 1.0);
            let swapped = compute_metrics(&g, &e, "f").unwrap();
            prop_assert_eq!(m.deltas(), swapped.deltas());
            prop_assert!((m.abs_diff - swapped.abs_diff).abs() < 1e-12);
        }

        #[test]
        fn order_does_not_matter(zs in proptest::collection::vec((0.1f64..10.0, 0.1f64..10.0), 2..30)) {
            let n = zs.len() as u32;
            let ids: Vec<u32> = (0..n).collect();
            let rev: Vec<u32> = (0..n).rev().collect();
            let e = PointCloud::new(ids.clone(), zs.iter().map(|p| Vec3::new(0.0, 0.0, p.0)).collect());
            let g = PointCloud::new(rev.clone(), zs.iter().rev().map(|p| Vec3::new(0.0, 0.0, p.1)).collect());
            let g_sorted = PointCloud::new(ids, zs.iter().map(|p| Vec3::new(0.0, 0.0, p.1)).collect());
            prop_assert_eq!(compute_metrics(&e, &g, "f").unwrap(), compute_metrics(&e, &g_sorted, "f").unwrap());
        }
    }

    #[test]
    fn distortion_zero_for_identical_sets() {
        let s = Scene::standard(1);
        let gs = simulate(&s, &MotionScenario::benchmark(0).unwrap(), &default_rig(), 0.0, 0).unwrap();
        let d = distortion_summary(&gs, &gs.clone()).unwrap();
        assert_eq!((d.max, d.mean), (0.0, 0.0));
        assert_eq!(d.n_matched, gs.len());
    }

    #[test]
    fn fast_motion_distorts_more_than_slow() {
        let s = Scene::standard(1);
        let rig = default_rig();
        let gs = simulate(&s, &MotionScenario::benchmark(0).unwrap(), &rig, 0.0, 0).unwrap();
        for (slow, fast) in [(1, 6), (2, 7), (3, 8), (5, 10)] {
            let slow_obs = simulate(&s, &MotionScenario::benchmark(slow).unwrap(), &rig, 0.0, 0).unwrap();
            let fast_obs = simulate(&s, &MotionScenario::benchmark(fast).unwrap(), &rig, 0.0, 0).unwrap();
            let ds = distortion_summary(&gs, &slow_obs).unwrap();
            let df = distortion_summary(&gs, &fast_obs).unwrap();
            assert!(df.mean > ds.mean, "{fast} vs {slow}: {} <= {}", df.mean, ds.mean);
        }
    }

    #[test]
    fn distortion_needs_matches() {
        let s = Scene::standard(1);
        let gs = simulate(&s, &MotionScenario::benchmark(0).unwrap(), &default_rig(), 0.0, 0).unwrap();
        let other = gs.filtered(|r| r.point_id == 0);
        let none = gs.filtered(|r| r.point_id != 0);
        assert!(matches!(distortion_summary(&other, &none), Err(Error::NoMatches)));
    }

    #[test]
    fn reanchor_row_zero_is_identity() {
        let s = Scene::standard(2);
        let sc = MotionScenario::benchmark(9).unwrap();
        let motion = crate::sim::scene_motion(&s, &sc);
        let cloud = s.cloud();
        assert_eq!(reanchor(&cloud, &motion, 1.0 / 9.0, 0.0), cloud);
    }
}
