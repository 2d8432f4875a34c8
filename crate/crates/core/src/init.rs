//! Linear initialization: per-point triangulation restricted to one viewpoint
//! row, so every equation is taken at the same exposure instant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{intrinsic_tensor, ImagePoint, LightFieldIntrinsics};
use crate::observations::ObservationSet;
use crate::par;
use crate::rotation::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub points: PointCloud,
    /// RMS algebraic residual of each point's linear system, aligned with `points`.
    pub per_point_residual: Vec<f64>,
    /// Viewpoint row used for each point, aligned with `points`.
    pub rows: Vec<usize>,
    pub skipped: Vec<u32>,
}

/// The row holding the most observations of a point; ties go to the lowest row.
pub fn select_row(records: &[ImagePoint]) -> Option<(usize, usize)> {
    let mut counts = std::collections::BTreeMap::new();
    for r in records {
        *counts.entry(r.viewpoint.row).or_insert(0usize) += 1;
    }
    counts
        .into_iter()
        .fold(None, |best: Option<(usize, usize)>, (row, n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((row, n)),
        })
}

/// Stacks `(K₀ − x K₂)·p = x k₂₃ − k₀₃` and `(K₁ − y K₂)·p = y k₂₃ − k₁₃`
/// for every record (global-shutter assumption, identity pose).
pub fn horizontal_system(
    records: &[ImagePoint],
    intr: &LightFieldIntrinsics,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(2 * records.len(), 3);
    let mut b = DVector::zeros(2 * records.len());
    for (k, r) in records.iter().enumerate() {
        let kst = intrinsic_tensor(intr, &r.viewpoint);
        for (axis, meas) in [(0usize, r.x), (1, r.y)] {
            let row = 2 * k + axis;
            for j in 0..3 {
                a[(row, j)] = kst[(axis, j)] - meas * kst[(2, j)];
            }
            b[row] = meas * kst[(2, 3)] - kst[(axis, 3)];
        }
    }
    (a, b)
}

fn triangulate_records(records: &[ImagePoint], intr: &LightFieldIntrinsics) -> Option<(Vec3, f64)> {
    let (a, b) = horizontal_system(records, intr);
    // Householder QR: SVD-based solves lose ~1e-8 m on these narrow-baseline systems.
    let qr = a.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * diag_max) {
        return None;
    }
    let p = r.solve_upper_triangular(&(qr.q().transpose() * &b))?;
    let p = Vec3::new(p[0], p[1], p[2]);
    if !p.iter().all(|v| v.is_finite()) {
        return None;
    }
    let r = &a * DVector::from_column_slice(p.as_slice()) - &b;
    let rms = (r.norm_squared() / r.len() as f64).sqrt();
    Some((p, rms))
}

/// Triangulates every point from its best-covered viewpoint row.
pub fn triangulate_horizontal(obs: &ObservationSet) -> Result<InitReport> {
    let groups: Vec<(u32, &[ImagePoint])> = obs.per_point().collect();
    let solved = par::map_indexed(&groups, |(_, (id, records))| {
        let (row, n) = select_row(records)?;
        if n < 2 {
            return None;
        }
        let same_row: Vec<ImagePoint> = records
            .iter()
            .filter(|r| r.viewpoint.row == row)
            .copied()
            .collect();
        triangulate_records(&same_row, &obs.intrinsics).map(|(p, rms)| (*id, row, p, rms))
    });

    let mut report = InitReport {
        points: PointCloud::default(),
        per_point_residual: Vec::new(),
        rows: Vec::new(),
        skipped: Vec::new(),
    };
    for ((id, _), result) in groups.iter().zip(solved) {
        match result {
            Some((id, row, p, rms)) => {
                report.points.ids.push(id);
                report.points.points.push(p);
                report.per_point_residual.push(rms);
                report.rows.push(row);
            }
            None => report.skipped.push(*id),
        }
    }
    if report.points.is_empty() {
        return Err(Error::AllPointsSkipped);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{default_rig, simulate, MotionScenario, Scene};
    use nalgebra::{Matrix3, Vector3};

    fn scene() -> Scene {
        Scene::random_box("init", 20, 7.0, Vector3::new(1.0, 1.0, 0.5), 17)
    }

    #[test]
    fn exact_on_static_noiseless_data() {
        let s = scene();
        let obs = simulate(&s, &MotionScenario::benchmark(0).unwrap(), &default_rig(), 0.0, 0)
            .unwrap();
        // drop row 0 so the chosen row is not trivially the anchor row
        let obs = obs.filtered(|r| r.viewpoint.row != 0);
        let rep = triangulate_horizontal(&obs).unwrap();
        assert!(rep.skipped.is_empty());
        assert!(rep.rows.iter().all(|&r| r == 1));
        for (id, p) in rep.points.iter() {
            let err = (p - s.points[id as usize]).norm();
            assert!(err < 1e-8, "point {id}: {err:e}");
        }
    }

    #[test]
    fn lone_observation_is_skipped() {
        let s = scene();
        let obs = simulate(&s, &MotionScenario::benchmark(0).unwrap(), &default_rig(), 0.0, 0)
            .unwrap();
        let obs = obs.filtered(|r| r.point_id != 5 || (r.viewpoint.row == 3 && r.viewpoint.col == 3));
        let rep = triangulate_horizontal(&obs).unwrap();
        assert_eq!(rep.skipped, vec![5]);
        assert_eq!(rep.points.len(), 19);
    }

    #[test]
    fn nothing_triangulable() {
        let s = scene();
        let obs = simulate(&s, &MotionScenario::benchmark(0).unwrap(), &default_rig(), 0.0, 0)
            .unwrap();
        let obs = obs.filtered(|r| r.viewpoint.col == 4);
        assert!(matches!(triangulate_horizontal(&obs), Err(Error::AllPointsSkipped)));
    }

    #[test]
    fn row_selection_prefers_coverage_then_lowest_index() {
        let rig = default_rig();
        let rec = |row, col| ImagePoint {
            point_id: 0,
            viewpoint: rig.viewpoint(row, col).unwrap(),
            x: 0.0,
            y: 0.0,
        };
        assert_eq!(select_row(&[rec(3, 0), rec(3, 1), rec(5, 0)]), Some((3, 2)));
        assert_eq!(select_row(&[rec(5, 0), rec(5, 1), rec(2, 0), rec(2, 1)]), Some((2, 2)));
        assert_eq!(select_row(&[rec(6, 0), rec(7, 0), rec(7, 1), rec(7, 2)]), Some((7, 3)));
    }

    /// Normal equations solved by Cramer's rule.
    fn normal_equations_oracle(a: &DMatrix<f64>, b: &DVector<f64>) -> Vector3<f64> {
        let mut ata = Matrix3::<f64>::zeros();
        let mut atb = Vector3::<f64>::zeros();
        for r in 0..a.nrows() {
            for i in 0..3 {
                atb[i] += a[(r, i)] * b[r];
                for j in 0..3 {
                    ata[(i, j)] += a[(r, i)] * a[(r, j)];
                }
            }
        }
        let det = ata.determinant();
        let mut out = Vector3::zeros();
        for k in 0..3 {
            let mut m = ata;
            m.set_column(k, &atb);
            out[k] = m.determinant() / det;
        }
        out
    }

    #[test]
    fn rolling_shutter_bias_matches_independent_solver() {
        let s = scene();
        let obs = simulate(&s, &MotionScenario::benchmark(5).unwrap(), &default_rig(), 0.0, 0)
            .unwrap();
        let obs = obs.filtered(|r| r.viewpoint.row >= 2);
        let rep = triangulate_horizontal(&obs).unwrap();
        let mut max_bias: f64 = 0.0;
        for ((id, p), &row) in rep.points.iter().zip(&rep.rows) {
            assert_eq!(row, 2);
            let records: Vec<ImagePoint> = obs
                .per_point()
                .find(|(pid, _)| *pid == id)
                .unwrap()
                .1
                .iter()
                .filter(|r| r.viewpoint.row == row)
                .copied()
                .collect();
            let (a, b) = horizontal_system(&records, &obs.intrinsics);
            let oracle = normal_equations_oracle(&a, &b);
            assert!((p - oracle).norm() < 1e-9, "point {id}");
            assert!(p.iter().all(|v| v.is_finite()));
            max_bias = max_bias.max((p - s.points[id as usize]).norm());
        }
        assert!(max_bias > 1e-3, "moving scene should bias row 2: {max_bias:e}");
    }

    #[test]
    fn rows_outside_selection_do_not_matter() {
        let s = scene();
        let obs = simulate(&s, &MotionScenario::benchmark(8).unwrap(), &default_rig(), 1e-7, 4)
            .unwrap()
            .filtered(|r| r.viewpoint.row != 0 || r.viewpoint.col < 5);
        let full = triangulate_horizontal(&obs).unwrap();
        let kept = obs.filtered(|r| r.viewpoint.row == 1);
        let restricted = triangulate_horizontal(&kept).unwrap();
        assert_eq!(full, restricted);
    }

    #[test]
    fn more_consistent_views_do_not_raise_residual() {
        let s = scene();
        let obs = simulate(&s, &MotionScenario::benchmark(0).unwrap(), &default_rig(), 0.0, 0)
            .unwrap();
        for k in 2..9 {
            let few = triangulate_horizontal(&obs.filtered(|r| r.viewpoint.row == 0 && r.viewpoint.col < k)).unwrap();
            let more = triangulate_horizontal(&obs.filtered(|r| r.viewpoint.row == 0 && r.viewpoint.col <= k)).unwrap();
            for (a, b) in few.per_point_residual.iter().zip(&more.per_point_residual) {
                assert!(*b <= *a + 1e-12);
            }
        }
    }
}
