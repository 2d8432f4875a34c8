//! Sparse point clouds keyed by point id.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::rotation::Vec3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub ids: Vec<u32>,
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(ids: Vec<u32>, points: Vec<Vec3>) -> Self {
        assert_eq!(ids.len(), points.len(), "one id per point");
        Self { ids, points }
    }

    /// Ids `0..n` in order.
    pub fn from_points(points: Vec<Vec3>) -> Self {
        let ids = (0..points.len() as u32).collect();
        Self { ids, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Vec3)> {
        self.ids.iter().copied().zip(self.points.iter())
    }

    pub fn get(&self, id: u32) -> Option<&Vec3> {
        self.ids
            .iter()
            .position(|&i| i == id)
            .map(|k| &self.points[k])
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }

    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            ids: self.ids.clone(),
            points: self.points.iter().map(f).collect(),
        }
    }

    /// ASCII PLY with one `x y z` float64 vertex per point.
    pub fn to_ply(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        out.push_str("ply\nformat ascii 1.0\n");
        if let Some(c) = comment {
            for line in c.lines() {
                let _ = writeln!(out, "comment {line}");
            }
        }
        let _ = writeln!(out, "element vertex {}", self.points.len());
        out.push_str("property float64 x\nproperty float64 y\nproperty float64 z\nend_header\n");
        for p in &self.points {
            let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
        }
        out
    }

    /// Reads back the vertex block of [`to_ply`](Self::to_ply) output.
    pub fn from_ply(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some("ply") {
            return Err("missing ply magic".into());
        }
        let mut count = None;
        for line in lines.by_ref() {
            if let Some(rest) = line.strip_prefix("element vertex ") {
                count = Some(rest.trim().parse::<usize>().map_err(|e| e.to_string())?);
            }
            if line == "end_header" {
                break;
            }
        }
        let count = count.ok_or("no vertex element")?;
        let mut points = Vec::with_capacity(count);
        for line in lines.take(count) {
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e: std::num::ParseFloatError| e.to_string())?;
            if v.len() != 3 {
                return Err(format!("expected 3 coordinates, got {}", v.len()));
            }
            points.push(Vec3::new(v[0], v[1], v[2]));
        }
        if points.len() != count {
            return Err(format!("expected {count} vertices, found {}", points.len()));
        }
        Ok(Self::from_points(points))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ply_header_layout() {
        let cloud = PointCloud::from_points(vec![Vec3::new(1.0, 2.0, 3.5)]);
        let ply = cloud.to_ply(Some("rslf"));
        assert_eq!(
            ply,
            "ply\nformat ascii 1.0\ncomment rslf\nelement vertex 1\n\
             property float64 x\nproperty float64 y\nproperty float64 z\nend_header\n1 2 3.5\n"
        );
    }

    proptest! {
        #[test]
        fn ply_round_trips_exactly(
            raw in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3), 0..40)
        ) {
            let cloud = PointCloud::from_points(
                raw.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect(),
            );
            let back = PointCloud::from_ply(&cloud.to_ply(None)).unwrap();
            prop_assert_eq!(back, cloud);
        }
    }
}
