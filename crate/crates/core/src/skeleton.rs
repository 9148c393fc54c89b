//! Skeleton definitions, pose containers and coordinate conventions.
//!
//! 2D poses live in bounding-box coordinates scaled to `[0, 1]`. 3D poses are
//! expressed relative to the hip center and mapped to `[0, 1]` per axis, so
//! the root joint always sits at `(0.5, 0.5, 0.5)`.
//!
//! Skeleton definition files are line based:
//!
//! ```text
//! # comment
//! root hip_center
//! joint hip_center
//! joint left_hip
//! joint right_hip
//! pair left_hip right_hip
//! limb hip_center left_hip
//! ```
//!
//! `joint` lines fix the joint order. `pair` and `limb` lines refer to joints
//! by name and may appear anywhere after those joints are declared.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

pub const DEFAULT_HALF_RANGE_MM: f64 = 1000.0;

const COMMON17: &str = include_str!("../data/skeletons/common17.skel");
const EXTENDED26: &str = include_str!("../data/skeletons/extended26.skel");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonDef {
    joints: Vec<String>,
    left_right_pairs: Vec<(usize, usize)>,
    limbs: Vec<(usize, usize)>,
    root_index: usize,
    // Involution mapping each joint to its mirror partner (itself if unpaired).
    mirror: Vec<usize>,
}

impl SkeletonDef {
    pub fn new(
        joints: Vec<String>,
        left_right_pairs: Vec<(usize, usize)>,
        limbs: Vec<(usize, usize)>,
        root_index: usize,
    ) -> Result<Self> {
        let n = joints.len();
        if n == 0 {
            return Err(Error::Skeleton("no joints".into()));
        }
        let mut seen = HashMap::new();
        for (i, name) in joints.iter().enumerate() {
            if let Some(prev) = seen.insert(name.as_str(), i) {
                return Err(Error::Skeleton(format!(
                    "duplicate joint name {name:?} at {prev} and {i}"
                )));
            }
        }
        if root_index >= n {
            return Err(Error::Skeleton(format!("root index {root_index} out of range")));
        }
        let mut mirror: Vec<usize> = (0..n).collect();
        for &(a, b) in &left_right_pairs {
            if a >= n || b >= n {
                return Err(Error::Skeleton(format!("pair ({a}, {b}) out of range")));
            }
            if a == b || mirror[a] != a || mirror[b] != b {
                return Err(Error::Skeleton(format!(
                    "joint paired more than once or with itself: ({a}, {b})"
                )));
            }
            mirror[a] = b;
            mirror[b] = a;
        }
        if let Some(&(a, b)) = limbs.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(Error::Skeleton(format!("limb ({a}, {b}) out of range")));
        }
        Ok(Self {
            joints,
            left_right_pairs,
            limbs,
            root_index,
            mirror,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut joints: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut pairs = Vec::new();
        let mut limbs = Vec::new();
        let mut root: Option<(usize, String)> = None;

        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let lookup = |name: &str| {
                index
                    .get(name)
                    .copied()
                    .ok_or_else(|| parse_err(format!("unknown joint {name:?}")))
            };
            match fields.as_slice() {
                ["joint", name] => {
                    if index.insert(name.to_string(), joints.len()).is_some() {
                        return Err(parse_err(format!("duplicate joint {name:?}")));
                    }
                    joints.push(name.to_string());
                }
                ["root", name] => {
                    if root.is_some() {
                        return Err(parse_err("root declared twice".into()));
                    }
                    root = Some((line_no, name.to_string()));
                }
                ["pair", a, b] => pairs.push((lookup(a)?, lookup(b)?)),
                ["limb", a, b] => limbs.push((lookup(a)?, lookup(b)?)),
                _ => return Err(parse_err(format!("unrecognized line {line:?}"))),
            }
        }

        let (root_line, root_name) = root.ok_or_else(|| Error::Skeleton("missing `root` line".into()))?;
        let root_index = *index.get(&root_name).ok_or(Error::Parse {
            line: root_line,
            message: format!("root joint {root_name:?} is not declared"),
        })?;
        Self::new(joints, pairs, limbs, root_index)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        Self::parse(&text)
    }

    /// Shipped definitions: `common17` and `extended26`.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "common17" => Some(Self::common17()),
            "extended26" => Some(Self::extended26()),
            _ => None,
        }
    }

    pub fn common17() -> Self {
        Self::parse(COMMON17).expect("shipped common17 definition is valid")
    }

    pub fn extended26() -> Self {
        Self::parse(EXTENDED26).expect("shipped extended26 definition is valid")
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn left_right_pairs(&self) -> &[(usize, usize)] {
        &self.left_right_pairs
    }

    pub fn limbs(&self) -> &[(usize, usize)] {
        &self.limbs
    }

    pub fn root_index(&self) -> usize {
        self.root_index
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j == name)
    }

    /// Index of the joint's left/right partner, or the joint itself.
    pub fn mirror_of(&self, joint: usize) -> usize {
        self.mirror[joint]
    }

    pub fn to_config_string(&self) -> String {
        let mut out = format!("root {}\n", self.joints[self.root_index]);
        for j in &self.joints {
            out.push_str(&format!("joint {j}\n"));
        }
        for &(a, b) in &self.left_right_pairs {
            out.push_str(&format!("pair {} {}\n", self.joints[a], self.joints[b]));
        }
        for &(a, b) in &self.limbs {
            out.push_str(&format!("limb {} {}\n", self.joints[a], self.joints[b]));
        }
        out
    }
}

/// Pixel-space bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("bbox"));
        }
        if self.w <= 0.0 {
            return Err(Error::OutOfRange {
                what: "bbox width",
                value: self.w,
            });
        }
        if self.h <= 0.0 {
            return Err(Error::OutOfRange {
                what: "bbox height",
                value: self.h,
            });
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }
}

/// Per-joint coordinates with confidence and visibility.
///
/// A joint counts as present when its score is positive; joints introduced by
/// [`skeleton_map`] without a source carry score 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose<const D: usize> {
    pub coords: Vec<[f64; D]>,
    pub score: Vec<f64>,
    pub visible: Vec<bool>,
}

pub type Pose2D = Pose<2>;
pub type Pose3D = Pose<3>;

impl<const D: usize> Pose<D> {
    pub fn new(coords: Vec<[f64; D]>, score: Vec<f64>, visible: Vec<bool>) -> Result<Self> {
        ensure_len("pose scores", coords.len(), score.len())?;
        ensure_len("pose visibility", coords.len(), visible.len())?;
        if !coords.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("pose coordinates"));
        }
        if !score.iter().all(|s| s.is_finite()) {
            return Err(Error::NonFinite("pose scores"));
        }
        Ok(Self {
            coords,
            score,
            visible,
        })
    }

    /// All joints present and visible with score 1.
    pub fn from_coords(coords: Vec<[f64; D]>) -> Result<Self> {
        let n = coords.len();
        Self::new(coords, vec![1.0; n], vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn is_present(&self, joint: usize) -> bool {
        self.score[joint] > 0.0
    }

    /// Coordinates flattened joint-major: `[j0x, j0y, (j0z), j1x, ...]`.
    pub fn flat_coords(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxNormalized {
    pub pose: Pose2D,
    /// True for joints that fall outside `[0, 1]` on either axis. Values are not clamped.
    pub out_of_box: Vec<bool>,
}

pub fn bbox_normalize_2d(points: &[[f64; 2]], bbox: &BBox) -> Result<BoxNormalized> {
    bbox.validate()?;
    let coords: Vec<[f64; 2]> = points
        .iter()
        .map(|&[px, py]| [(px - bbox.x) / bbox.w, (py - bbox.y) / bbox.h])
        .collect();
    let out_of_box = coords
        .iter()
        .map(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        .collect();
    Ok(BoxNormalized {
        pose: Pose::from_coords(coords)?,
        out_of_box,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized3D {
    pub pose: Pose3D,
    /// Number of coordinate values clamped into `[0, 1]`.
    pub clamped: usize,
}

/// Hip-relative normalization: `v' = clamp((v - root) / (2 * half_range) + 0.5, 0, 1)`.
pub fn normalize_pose3d(
    world_mm: &[[f64; 3]],
    root_index: usize,
    half_range_mm: f64,
) -> Result<Normalized3D> {
    if !(half_range_mm.is_finite() && half_range_mm > 0.0) {
        return Err(Error::OutOfRange {
            what: "half range (mm)",
            value: half_range_mm,
        });
    }
    let root = *world_mm.get(root_index).ok_or(Error::InvalidArgument(format!(
        "root joint {root_index} missing from a {}-joint pose",
        world_mm.len()
    )))?;
    if !world_mm.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("3D joint positions"));
    }
    let mut clamped = 0;
    let coords = world_mm
        .iter()
        .map(|p| {
            let mut out = [0.0; 3];
            for axis in 0..3 {
                let v = (p[axis] - root[axis]) / (2.0 * half_range_mm) + 0.5;
                if !(0.0..=1.0).contains(&v) {
                    clamped += 1;
                }
                out[axis] = v.clamp(0.0, 1.0);
            }
            out
        })
        .collect();
    if clamped > 0 {
        log::debug!("normalize_pose3d clamped {clamped} coordinate values");
    }
    Ok(Normalized3D {
        pose: Pose::from_coords(coords)?,
        clamped,
    })
}

/// Inverse of [`normalize_pose3d`] for non-clamped joints; result is hip-relative mm.
pub fn denormalize_pose3d(p: &Pose3D, half_range_mm: f64) -> Vec<[f64; 3]> {
    p.coords
        .iter()
        .map(|c| c.map(|v| (v - 0.5) * 2.0 * half_range_mm))
        .collect()
}

/// Horizontal mirror: `x -> 1 - x` and left/right joints swap places.
pub fn flip_pose<const D: usize>(p: &Pose<D>, def: &SkeletonDef) -> Result<Pose<D>> {
    ensure_len("pose joints vs skeleton", def.len(), p.len())?;
    let n = p.len();
    let mut coords = Vec::with_capacity(n);
    let mut score = Vec::with_capacity(n);
    let mut visible = Vec::with_capacity(n);
    for j in 0..n {
        let src = def.mirror_of(j);
        let mut c = p.coords[src];
        c[0] = 1.0 - c[0];
        coords.push(c);
        score.push(p.score[src]);
        visible.push(p.visible[src]);
    }
    Ok(Pose {
        coords,
        score,
        visible,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedPose<const D: usize> {
    pub pose: Pose<D>,
    /// Whether each target joint had a same-named source joint.
    pub present: Vec<bool>,
}

/// Transfer a pose between skeletons by exact joint name.
///
/// Target joints without a source get centre coordinates (0.5), score 0 and
/// `visible = false`.
pub fn skeleton_map<const D: usize>(
    p: &Pose<D>,
    from: &SkeletonDef,
    to: &SkeletonDef,
) -> Result<MappedPose<D>> {
    ensure_len("pose joints vs source skeleton", from.len(), p.len())?;
    let source: HashMap<&str, usize> = from
        .joints()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut pose = Pose {
        coords: vec![[0.5; D]; to.len()],
        score: vec![0.0; to.len()],
        visible: vec![false; to.len()],
    };
    let mut present = vec![false; to.len()];
    for (t, name) in to.joints().iter().enumerate() {
        if let Some(&s) = source.get(name.as_str()) {
            pose.coords[t] = p.coords[s];
            pose.score[t] = p.score[s];
            pose.visible[t] = p.visible[s];
            present[t] = true;
        }
    }
    Ok(MappedPose { pose, present })
}
