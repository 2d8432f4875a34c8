//! Matched image points across the viewpoint grid and their CSV form.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImagePoint, LightFieldIntrinsics, Viewpoint};

pub const CSV_HEADER: &str = "point_id,row,col,s,t,x,y";

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    /// Sorted by `(point_id, row, col)`.
    pub records: Vec<ImagePoint>,
    pub intrinsics: LightFieldIntrinsics,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Everything about an [`ObservationSet`] that is not a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSidecar {
    pub intrinsics: LightFieldIntrinsics,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<crate::pipeline::Provenance>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    point_id: u32,
    row: usize,
    col: usize,
    s: f64,
    t: f64,
    x: f64,
    y: f64,
}

impl ObservationSet {
    pub fn new(
        mut records: Vec<ImagePoint>,
        intrinsics: LightFieldIntrinsics,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        records.sort_by_key(|r| (r.point_id, r.viewpoint.row, r.viewpoint.col));
        for pair in records.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if (a.point_id, a.viewpoint.row, a.viewpoint.col)
                == (b.point_id, b.viewpoint.row, b.viewpoint.col)
            {
                return Err(Error::Validation(format!(
                    "duplicate observation of point {} at viewpoint ({}, {})",
                    a.point_id, a.viewpoint.row, a.viewpoint.col
                )));
            }
        }
        Ok(Self {
            records,
            intrinsics,
            noise_sigma,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn point_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.records.iter().map(|r| r.point_id).collect();
        ids.dedup();
        ids
    }

    /// Contiguous record slices, one per point id, in id order.
    pub fn per_point(&self) -> impl Iterator<Item = (u32, &[ImagePoint])> {
        self.records
            .chunk_by(|a, b| a.point_id == b.point_id)
            .map(|chunk| (chunk[0].point_id, chunk))
    }

    pub fn rows(&self) -> BTreeSet<usize> {
        self.records.iter().map(|r| r.viewpoint.row).collect()
    }

    pub fn cols(&self) -> BTreeSet<usize> {
        self.records.iter().map(|r| r.viewpoint.col).collect()
    }

    /// Keeps only the records accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&ImagePoint) -> bool) -> Self {
        Self {
            records: self.records.iter().filter(|r| keep(r)).copied().collect(),
            ..self.clone()
        }
    }

    pub fn sidecar(&self) -> ObservationSidecar {
        ObservationSidecar {
            intrinsics: self.intrinsics,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            scene: None,
            scenario: None,
            provenance: None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let vp = &r.viewpoint;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.point_id, vp.row, vp.col, vp.s, vp.t, r.x, r.y
            );
        }
        out
    }

    pub fn from_csv(text: &str, sidecar: &ObservationSidecar, path: &Path) -> Result<Self> {
        let parse_err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        // leading `#` lines carry provenance
        let comments = text.lines().take_while(|l| l.starts_with('#')).count();
        if text.lines().nth(comments).map(str::trim) != Some(CSV_HEADER) {
            return Err(parse_err(comments as u64 + 1, format!("expected header `{CSV_HEADER}`")));
        }
        sidecar
            .intrinsics
            .validate()
            .map_err(|e| parse_err(0, e.to_string()))?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut records = Vec::new();
        for row in reader.deserialize::<CsvRow>() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e.to_string())
            })?;
            if ![row.s, row.t, row.x, row.y].iter().all(|v| v.is_finite()) {
                return Err(parse_err(0, format!("non-finite value for point {}", row.point_id)));
            }
            if row.row >= sidecar.intrinsics.grid_rows || row.col >= sidecar.intrinsics.grid_cols {
                return Err(parse_err(
                    0,
                    format!("viewpoint ({}, {}) outside the grid", row.row, row.col),
                ));
            }
            records.push(ImagePoint {
                point_id: row.point_id,
                viewpoint: Viewpoint {
                    row: row.row,
                    col: row.col,
                    s: row.s,
                    t: row.t,
                },
                x: row.x,
                y: row.y,
            });
        }
        Self::new(records, sidecar.intrinsics, sidecar.noise_sigma, sidecar.seed)
            .map_err(|e| parse_err(0, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::default_rig;

    fn record(id: u32, row: usize, col: usize, x: f64) -> ImagePoint {
        let vp = default_rig().viewpoint(row, col).unwrap();
        ImagePoint {
            point_id: id,
            viewpoint: vp,
            x,
            y: -x,
        }
    }

    #[test]
    fn duplicates_are_rejected() {
        let err = ObservationSet::new(
            vec![record(0, 1, 1, 0.1), record(0, 1, 1, 0.2)],
            default_rig(),
            0.0,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn csv_round_trip_and_header() {
        let obs = ObservationSet::new(
            vec![record(3, 0, 2, 1.25e-4), record(1, 4, 4, -3.0e-7)],
            default_rig(),
            1e-6,
            9,
        )
        .unwrap();
        let csv = obs.to_csv();
        assert!(csv.starts_with("point_id,row,col,s,t,x,y\n1,4,4,"));
        let back = ObservationSet::from_csv(&csv, &obs.sidecar(), Path::new("mem.csv")).unwrap();
        assert_eq!(back, obs);
        let commented = format!("# tool 0.1.0\n{csv}");
        let back = ObservationSet::from_csv(&commented, &obs.sidecar(), Path::new("mem.csv")).unwrap();
        assert_eq!(back, obs);
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "point_id,row,col,s,t,x,y\n0,0,0,0,0,0,0\n1,0,zz,0,0,0,0\n";
        let sidecar = ObservationSet::new(vec![], default_rig(), 0.0, 0)
            .unwrap()
            .sidecar();
        let err = ObservationSet::from_csv(csv, &sidecar, Path::new("obs.csv")).unwrap_err();
        match err {
            Error::Parse { line, path, .. } => {
                assert_eq!(line, 3);
                assert_eq!(path, Path::new("obs.csv"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grouping_by_point() {
        let obs = ObservationSet::new(
            vec![record(2, 0, 0, 0.0), record(0, 0, 1, 0.0), record(2, 1, 0, 0.0)],
            default_rig(),
            0.0,
            0,
        )
        .unwrap();
        let groups: Vec<(u32, usize)> = obs.per_point().map(|(id, r)| (id, r.len())).collect();
        assert_eq!(groups, vec![(0, 1), (2, 2)]);
        assert_eq!(obs.point_ids(), vec![0, 2]);
    }
}
