//! Line-delimited JSON sample records.
//!
//! One object per line:
//!
//! ```text
//! {"id":"s1","dataset":"coco","action":null,"bbox":{"x":0,"y":0,"w":100,"h":200},
//!  "dist_px":null,"b3d_mm":null,
//!  "pose2d":[[x,y,score,vis],...],"pose3d":[[x,y,z,score,vis],...],
//!  "body":{"theta_deg":90,"phi_deg":45},"head":{"theta_deg":null,"phi_deg":10}}
//! ```
//!
//! Missing and `null` fields mean "label not available". Angles are stored in
//! degrees. `vis` is `0` or `1`. An optional `mask` object may be present; it
//! must agree with the fields that are actually there.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LabelMask, Labeled};
use crate::orientation::{check_polar, reduce_azimuth};
use crate::skeleton::{BBox, Pose, Pose2D, Pose3D};

/// Orientation label where each angle may be missing on its own.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OrientationLabel {
    pub theta_deg: Option<f64>,
    pub phi_deg: Option<f64>,
}

impl OrientationLabel {
    fn validated(self) -> Result<Option<Self>> {
        let theta_deg = self.theta_deg.map(check_polar).transpose()?;
        let phi_deg = self.phi_deg.map(reduce_azimuth).transpose()?;
        Ok((theta_deg.is_some() || phi_deg.is_some()).then_some(Self { theta_deg, phi_deg }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub dataset: String,
    pub action: Option<String>,
    pub bbox: BBox,
    pub camera_distance_px: Option<f64>,
    pub bbox3d_diag_mm: Option<f64>,
    pub pose2d: Option<Pose2D>,
    pub pose3d: Option<Pose3D>,
    pub body: Option<OrientationLabel>,
    pub head: Option<OrientationLabel>,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, dataset: impl Into<String>, bbox: BBox) -> Self {
        Self {
            id: id.into(),
            dataset: dataset.into(),
            action: None,
            bbox,
            camera_distance_px: None,
            bbox3d_diag_mm: None,
            pose2d: None,
            pose3d: None,
            body: None,
            head: None,
        }
    }

    /// Label availability derived from the fields present. Visibility flags
    /// ride along with the 2D pose, so `has_visibility` follows `pose2d`.
    pub fn mask(&self) -> LabelMask {
        let angle = |o: &Option<OrientationLabel>, phi: bool| {
            o.is_some_and(|o| {
                if phi {
                    o.phi_deg.is_some()
                } else {
                    o.theta_deg.is_some()
                }
            })
        };
        LabelMask {
            has_pose2d: self.pose2d.is_some(),
            has_pose3d: self.pose3d.is_some(),
            has_body_phi: angle(&self.body, true),
            has_body_theta: angle(&self.body, false),
            has_head_phi: angle(&self.head, true),
            has_head_theta: angle(&self.head, false),
            has_visibility: self.pose2d.is_some(),
        }
    }

    pub fn orientation(&self, target: OrientationTarget) -> Option<OrientationLabel> {
        match target {
            OrientationTarget::Body => self.body,
            OrientationTarget::Head => self.head,
        }
    }
}

impl Labeled for SampleRecord {
    fn label_mask(&self) -> LabelMask {
        self.mask()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrientationTarget {
    Body,
    Head,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordWire {
    id: String,
    dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action: Option<String>,
    bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dist_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b3d_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose2d: Option<Vec<[f64; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose3d: Option<Vec<[f64; 5]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    body: Option<OrientationLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head: Option<OrientationLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<LabelMask>,
}

fn vis_flag(v: f64) -> Result<bool> {
    match v {
        0.0 => Ok(false),
        1.0 => Ok(true),
        _ => Err(Error::OutOfRange {
            what: "visibility flag (expected 0 or 1)",
            value: v,
        }),
    }
}

fn positive(v: Option<f64>, what: &'static str) -> Result<Option<f64>> {
    match v {
        Some(x) if !x.is_finite() => Err(Error::NonFinite(what)),
        Some(x) if x < 0.0 => Err(Error::OutOfRange { what, value: x }),
        other => Ok(other),
    }
}

impl TryFrom<RecordWire> for SampleRecord {
    type Error = Error;

    fn try_from(w: RecordWire) -> Result<Self> {
        w.bbox.validate()?;
        let pose2d = w
            .pose2d
            .map(|rows| {
                let mut coords = Vec::with_capacity(rows.len());
                let mut score = Vec::with_capacity(rows.len());
                let mut visible = Vec::with_capacity(rows.len());
                for [x, y, s, v] in rows {
                    coords.push([x, y]);
                    score.push(s);
                    visible.push(vis_flag(v)?);
                }
                Pose::new(coords, score, visible)
            })
            .transpose()?;
        let pose3d = w
            .pose3d
            .map(|rows| {
                let mut coords = Vec::with_capacity(rows.len());
                let mut score = Vec::with_capacity(rows.len());
                let mut visible = Vec::with_capacity(rows.len());
                for [x, y, z, s, v] in rows {
                    coords.push([x, y, z]);
                    score.push(s);
                    visible.push(vis_flag(v)?);
                }
                Pose::new(coords, score, visible)
            })
            .transpose()?;
        let record = SampleRecord {
            id: w.id,
            dataset: w.dataset,
            action: w.action,
            bbox: w.bbox,
            camera_distance_px: positive(w.dist_px, "dist_px")?,
            bbox3d_diag_mm: positive(w.b3d_mm, "b3d_mm")?,
            pose2d,
            pose3d,
            body: w.body.map(OrientationLabel::validated).transpose()?.flatten(),
            head: w.head.map(OrientationLabel::validated).transpose()?.flatten(),
        };
        if let Some(declared) = w.mask {
            let derived = record.mask();
            if declared != derived {
                return Err(Error::invalid(format!(
                    "declared mask {declared:?} disagrees with present fields {derived:?}"
                )));
            }
        }
        Ok(record)
    }
}

impl From<&SampleRecord> for RecordWire {
    fn from(r: &SampleRecord) -> Self {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        RecordWire {
            id: r.id.clone(),
            dataset: r.dataset.clone(),
            action: r.action.clone(),
            bbox: r.bbox,
            dist_px: r.camera_distance_px,
            b3d_mm: r.bbox3d_diag_mm,
            pose2d: r.pose2d.as_ref().map(|p| {
                (0..p.len())
                    .map(|j| [p.coords[j][0], p.coords[j][1], p.score[j], flag(p.visible[j])])
                    .collect()
            }),
            pose3d: r.pose3d.as_ref().map(|p| {
                (0..p.len())
                    .map(|j| {
                        let c = p.coords[j];
                        [c[0], c[1], c[2], p.score[j], flag(p.visible[j])]
                    })
                    .collect()
            }),
            body: r.body,
            head: r.head,
            mask: None,
        }
    }
}

pub fn parse_record(line: &str) -> Result<SampleRecord> {
    let wire: RecordWire = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    SampleRecord::try_from(wire)
}

/// Streaming reader; blank lines are skipped and errors carry 1-based line numbers.
pub struct RecordReader<R> {
    inner: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            line: 0,
            buf: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<SampleRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line += 1;
            let text = self.buf.trim();
            if text.is_empty() {
                continue;
            }
            let line = self.line;
            return Some(parse_record(text).map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse { line, message },
                other => Error::Parse {
                    line,
                    message: other.to_string(),
                },
            }));
        }
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).at_path(path))?;
    RecordReader::new(BufReader::new(file))
        .collect::<Result<_>>()
        .map_err(|e| e.at_path(path))
}

pub fn write_records<W: Write>(mut out: W, records: &[SampleRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(&RecordWire::from(r))
            .map_err(|e| Error::invalid(format!("record {}: {e}", r.id)))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}
