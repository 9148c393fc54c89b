//! Synthetic end-to-end training run.
//!
//! Ground-truth poses and orientations are drawn around a fixed 17-joint
//! template, encoded into a label vector and embedded into a feature vector
//! with a fixed random orthonormal matrix plus Gaussian noise. A one-hidden
//! layer regressor with a linear shortcut maps features to heatmap logits,
//! which the decoding heads turn into 2D/3D joints, orientations and
//! visibility. Training uses the uncertainty-weighted total, AdamW and the
//! 1cycle schedule.
//!
//! Label encoding: joint x/y and polar angle as the softmax tilt whose bin
//! expectation is the label (see [`tilt_for_mean`]), depth as `logit(z)`,
//! visibility as a sign and azimuth as `(cos, sin)`. Each is the quantity the
//! matching head consumes linearly, so the noiseless problem is exactly
//! representable.
//!
//! Every sample is generated from its own ChaCha stream, so sample `i` does
//! not depend on how many samples were drawn before it.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decode::{
    circular_softargmax_backward, circular_softargmax_probs, decode_depth_unchecked, softargmax_1d_backward,
    softargmax_1d_probs, AzimuthDecoder,
};
use crate::error::{Error, Result};
use crate::losses::{
    bce_visibility, loss_orientation, loss_phi, loss_theta, masked_l1, select_samples, uncertainty_total,
    LabelKind, LabelMask, Labeled, LossBundle, SigmaParams, Task, TaskLoss,
};
use crate::lr_finder::{lr_range_test, RangeTestConfig, RangeTestResult};
use crate::metrics::{mpjpe, orientation_accuracy, orientation_mae};
use crate::optim::{adamw_step, AdamWConfig, OptimState};
use crate::orientation::{flip_unit_azimuth, AngleKind};
use crate::schedule::OneCycle;
use crate::skeleton::{flip_pose, Pose, Pose3D, SkeletonDef};

/// Normalized 3D template in common17 joint order (root at the centre).
const TEMPLATE: [[f64; 3]; 17] = [
    [0.50, 0.50, 0.50], // hip_center
    [0.42, 0.50, 0.46], // right_hip
    [0.41, 0.65, 0.43], // right_knee
    [0.42, 0.80, 0.47], // right_ankle
    [0.58, 0.50, 0.54], // left_hip
    [0.59, 0.65, 0.57], // left_knee
    [0.58, 0.80, 0.53], // left_ankle
    [0.50, 0.38, 0.50], // spine_center
    [0.50, 0.27, 0.50], // neck
    [0.50, 0.22, 0.42], // nose
    [0.50, 0.17, 0.50], // head_upper
    [0.61, 0.28, 0.55], // left_shoulder
    [0.66, 0.40, 0.58], // left_elbow
    [0.68, 0.50, 0.60], // left_wrist
    [0.39, 0.28, 0.45], // right_shoulder
    [0.34, 0.40, 0.42], // right_elbow
    [0.32, 0.50, 0.40], // right_wrist
];

const COORD_LO: f64 = 0.15;
const COORD_HI: f64 = 0.85;
const DEPTH_SCALE: f64 = 0.3;
const TILT_SCALE: f64 = 0.1;
const VIS_SCALE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub from_step: usize,
    pub tasks: Vec<Task>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleConfig {
    pub max_lr: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub pct_start: f64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        let s = OneCycle::default();
        Self {
            max_lr: s.max_lr,
            div_factor: s.div_factor,
            final_div_factor: s.final_div_factor,
            pct_start: s.pct_start,
        }
    }
}

impl CycleConfig {
    pub fn over(&self, total_steps: usize) -> OneCycle {
        OneCycle {
            total_steps,
            max_lr: self.max_lr,
            div_factor: self.div_factor,
            final_div_factor: self.final_div_factor,
            pct_start: self.pct_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian feature noise.
    pub noise: f64,
    pub feature_gain: f64,
    pub train_samples: usize,
    pub eval_samples: usize,
    /// Share of samples that only carry 2D pose, visibility and body azimuth.
    pub partial_fraction: f64,
    pub flip_prob: f64,
    pub coord_bins: usize,
    pub orientation_bins: usize,
    pub depth_grid: usize,
    pub beta: f64,
    pub azimuth_decoder: AzimuthDecoder,
    pub weight_decay: f64,
    pub schedule: CycleConfig,
    /// Loss-enable switches; the last stage whose `from_step` has been
    /// reached is active. Empty means every task from step 0.
    pub stages: Vec<Stage>,
    pub lr_find: RangeTestConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            steps: 3000,
            batch_size: 64,
            hidden: 32,
            feature_dim: 96,
            noise: 0.01,
            feature_gain: 2.0,
            train_samples: 4096,
            eval_samples: 512,
            partial_fraction: 0.25,
            flip_prob: 0.5,
            coord_bins: 16,
            orientation_bins: 16,
            depth_grid: 2,
            beta: 1.0,
            azimuth_decoder: AzimuthDecoder::Circular,
            weight_decay: 1e-2,
            schedule: CycleConfig::default(),
            stages: Vec::new(),
            lr_find: RangeTestConfig {
                lr_lo: 1e-5,
                lr_hi: 1.0,
                steps: 100,
                ..Default::default()
            },
        }
    }
}

impl DemoConfig {
    /// Zero feature noise, trained twice as long so the exact solution is
    /// approached rather than just the 3000-step plateau.
    pub fn noiseless() -> Self {
        Self {
            noise: 0.0,
            steps: 6000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("hidden", self.hidden),
            ("train_samples", self.train_samples),
            ("eval_samples", self.eval_samples),
        ];
        for (what, v) in sizes {
            if v == 0 {
                return Err(Error::invalid(format!("{what} must be positive")));
            }
        }
        if self.coord_bins < 2 || self.orientation_bins < 2 || self.depth_grid < 2 {
            return Err(Error::invalid("heads need at least 2 bins per axis"));
        }
        if self.feature_dim < label_dim() {
            return Err(Error::invalid(format!(
                "feature_dim must be at least the label dimension {}",
                label_dim()
            )));
        }
        for (what, v) in [
            ("partial_fraction", self.partial_fraction),
            ("flip_prob", self.flip_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        for (what, v) in [("noise", self.noise), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        for (what, v) in [("beta", self.beta), ("feature_gain", self.feature_gain)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        self.schedule.over(self.steps.max(2)).validate()?;
        if let Some(first) = self.stages.first() {
            if first.from_step != 0 {
                return Err(Error::invalid("first stage must start at step 0"));
            }
        }
        for w in self.stages.windows(2) {
            if w[1].from_step <= w[0].from_step {
                return Err(Error::invalid("stage start steps must increase"));
            }
        }
        if self.stages.iter().any(|s| s.tasks.is_empty()) {
            return Err(Error::invalid("every stage needs at least one task"));
        }
        Ok(())
    }

    pub fn tasks_at(&self, step: usize) -> Vec<Task> {
        self.stages
            .iter()
            .rev()
            .find(|s| s.from_step <= step)
            .map(|s| s.tasks.clone())
            .unwrap_or_else(|| Task::ALL.to_vec())
    }
}

const JOINTS: usize = 17;

fn label_dim() -> usize {
    // x, y, logit depth, visibility per joint; (cos, sin, theta) per target
    JOINTS * 4 + 6
}

/// One synthetic example: features plus (possibly partial) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSample {
    pub features: Vec<f64>,
    /// Hip-relative normalized 3D joints; the 2D labels are their x/y.
    pub pose3d: Vec<[f64; 3]>,
    pub visible: Vec<bool>,
    /// `(theta, phi)` as unit-normalized angles.
    pub body: [f64; 2],
    pub head: [f64; 2],
    pub mask: LabelMask,
}

impl Labeled for &DemoSample {
    fn label_mask(&self) -> LabelMask {
        self.mask
    }
}

fn logit(z: f64) -> f64 {
    (z / (1.0 - z)).ln()
}

/// Expectation of the bin centres under `softmax(lambda * c)`, and its
/// derivative (the variance).
fn tilted_mean(lambda: f64, bins: usize) -> (f64, f64) {
    let c: Vec<f64> = (0..bins).map(|i| i as f64 / (bins - 1) as f64).collect();
    let top = if lambda > 0.0 { lambda } else { 0.0 };
    let w: Vec<f64> = c.iter().map(|&ci| (lambda * ci - top).exp()).collect();
    let z: f64 = w.iter().sum();
    let m = c.iter().zip(&w).map(|(ci, wi)| ci * wi).sum::<f64>() / z;
    let v = c
        .iter()
        .zip(&w)
        .map(|(ci, wi)| (ci - m).powi(2) * wi)
        .sum::<f64>()
        / z;
    (m, v)
}

/// The `lambda` for which logits `lambda * c_i` decode to `mean`.
///
/// The tilted mean is increasing in `lambda`, so Newton steps guarded by a
/// bisection bracket converge for any mean strictly inside `(0, 1)`.
pub fn tilt_for_mean(mean: f64, bins: usize) -> f64 {
    let (mut lo, mut hi) = (-200.0, 200.0);
    let mut lambda = 0.0;
    for _ in 0..100 {
        let (m, v) = tilted_mean(lambda, bins);
        let err = m - mean;
        if err.abs() < 1e-15 {
            break;
        }
        if err > 0.0 {
            hi = lambda;
        } else {
            lo = lambda;
        }
        let next = lambda - err / v;
        lambda = if next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    lambda
}

/// Fixed embedding and stream layout shared by train and eval sets.
pub struct SyntheticData {
    embed: Array2<f64>,
    coord_bins: usize,
    orientation_bins: usize,
    seed: u64,
    skeleton: SkeletonDef,
}

const TRAIN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1 << 40;
const EMBED_STREAM: u64 = 1 << 50;
const INIT_STREAM: u64 = (1 << 50) + 1;
const BATCH_STREAM: u64 = (1 << 50) + 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl SyntheticData {
    pub fn new(cfg: &DemoConfig) -> Result<Self> {
        cfg.validate()?;
        let d = label_dim();
        let f = cfg.feature_dim;
        let mut rng = stream_rng(cfg.seed, EMBED_STREAM);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
        while cols.len() < d {
            let mut v: Vec<f64> = (0..f).map(|_| StandardNormal.sample(&mut rng)).collect();
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                cols.push(v.into_iter().map(|a| a / norm).collect());
            }
        }
        let mut embed = Array2::zeros((f, d));
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                embed[[i, j]] = v * cfg.feature_gain;
            }
        }
        Ok(Self {
            embed,
            coord_bins: cfg.coord_bins,
            orientation_bins: cfg.orientation_bins,
            seed: cfg.seed,
            skeleton: SkeletonDef::common17(),
        })
    }

    fn labels(&self, s: &DemoSample) -> Vec<f64> {
        let mut y = Vec::with_capacity(label_dim());
        for j in 0..JOINTS {
            let [x, yy, z] = s.pose3d[j];
            y.push(TILT_SCALE * tilt_for_mean(x, self.coord_bins));
            y.push(TILT_SCALE * tilt_for_mean(yy, self.coord_bins));
            y.push(DEPTH_SCALE * logit(z));
            y.push(if s.visible[j] { VIS_SCALE } else { -VIS_SCALE });
        }
        for [theta, phi] in [s.body, s.head] {
            let a = std::f64::consts::TAU * phi;
            y.push(0.5 * a.cos());
            y.push(0.5 * a.sin());
            y.push(TILT_SCALE * tilt_for_mean(theta, self.orientation_bins));
        }
        y
    }

    pub fn sample(&self, cfg: &DemoConfig, stream: u64) -> Result<DemoSample> {
        let mut rng = stream_rng(self.seed, stream);
        let mut coords: Vec<[f64; 3]> = TEMPLATE
            .iter()
            .enumerate()
            .map(|(j, t)| {
                if j == 0 {
                    return *t;
                }
                t.map(|v| (v + rng.random_range(-0.08..0.08)).clamp(COORD_LO, COORD_HI))
            })
            .collect();
        let mut visible: Vec<bool> = coords.iter().map(|c| c[2] > 0.5).collect();
        let body_phi = rng.random_range(0.0..1.0);
        let body_theta = rng.random_range(30.0..150.0) / 180.0;
        let head_phi = (body_phi + rng.random_range(-60.0..60.0) / 360.0f64).rem_euclid(1.0);
        let head_theta = rng.random_range(30.0..150.0) / 180.0;
        let mut body = [body_theta, body_phi];
        let mut head = [head_theta, head_phi];
        if rng.random_bool(cfg.flip_prob) {
            let p = Pose::new(coords, vec![1.0; JOINTS], visible)?;
            let f = flip_pose(&p, &self.skeleton)?;
            coords = f.coords;
            visible = f.visible;
            body[1] = flip_unit_azimuth(body[1]);
            head[1] = flip_unit_azimuth(head[1]);
        }
        let partial = rng.random_bool(cfg.partial_fraction);
        let mask = if partial {
            LabelMask {
                has_pose2d: true,
                has_visibility: true,
                has_body_phi: true,
                ..LabelMask::default()
            }
        } else {
            LabelMask::all()
        };
        let mut s = DemoSample {
            features: Vec::new(),
            pose3d: coords,
            visible,
            body,
            head,
            mask,
        };
        let y = Array1::from(self.labels(&s));
        let mut f = self.embed.dot(&y);
        if cfg.noise > 0.0 {
            let n = Normal::new(0.0, cfg.noise).map_err(|e| Error::invalid(e.to_string()))?;
            f.iter_mut().for_each(|v| *v += n.sample(&mut rng));
        }
        s.features = f.to_vec();
        Ok(s)
    }

    pub fn train_set(&self, cfg: &DemoConfig) -> Result<Vec<DemoSample>> {
        (0..cfg.train_samples as u64)
            .map(|i| self.sample(cfg, TRAIN_STREAM + i))
            .collect()
    }

    pub fn eval_set(&self, cfg: &DemoConfig) -> Result<Vec<DemoSample>> {
        (0..cfg.eval_samples as u64)
            .map(|i| self.sample(cfg, EVAL_STREAM + i))
            .collect()
    }
}

/// Offsets of each head inside one output row.
#[derive(Debug, Clone, Copy)]
struct Layout {
    k: usize,
    ko: usize,
    g: usize,
    p2d: usize,
    p3d: usize,
    depth: usize,
    vis: usize,
    orient: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &DemoConfig) -> Self {
        let k = cfg.coord_bins;
        let ko = cfg.orientation_bins;
        let g = cfg.depth_grid;
        let p2d = 0;
        let p3d = p2d + JOINTS * 2 * k;
        let depth = p3d + JOINTS * 2 * k;
        let vis = depth + JOINTS * g * g;
        let orient = vis + JOINTS;
        Self {
            k,
            ko,
            g,
            p2d,
            p3d,
            depth,
            vis,
            orient,
            total: orient + 4 * ko,
        }
    }

    fn coord(&self, base: usize, joint: usize, axis: usize) -> std::ops::Range<usize> {
        let s = base + (joint * 2 + axis) * self.k;
        s..s + self.k
    }

    fn depth_map(&self, joint: usize) -> std::ops::Range<usize> {
        let s = self.depth + joint * self.g * self.g;
        s..s + self.g * self.g
    }

    /// Heads 0..4: body phi, body theta, head phi, head theta.
    fn angle(&self, head: usize) -> std::ops::Range<usize> {
        let s = self.orient + head * self.ko;
        s..s + self.ko
    }
}

/// Decoded outputs of one sample, with the softmax probabilities kept for backward.
#[derive(Debug, Clone)]
pub struct Decoded {
    probs: Vec<f64>,
    pub pose2d: Vec<[f64; 2]>,
    pub pose3d: Vec<[f64; 3]>,
    pub vis_prob: Vec<f64>,
    /// `[body phi, body theta, head phi, head theta]`, unit-normalized.
    pub angles: [f64; 4],
}

#[derive(Debug, Clone, Default)]
struct Upstream {
    pose2d: Vec<[f64; 2]>,
    pose3d: Vec<[f64; 3]>,
    vis_prob: Vec<f64>,
    angles: [f64; 4],
}

impl Upstream {
    fn zeros() -> Self {
        Self {
            pose2d: vec![[0.0; 2]; JOINTS],
            pose3d: vec![[0.0; 3]; JOINTS],
            vis_prob: vec![0.0; JOINTS],
            angles: [0.0; 4],
        }
    }
}

#[derive(Debug, Clone)]
struct Heads {
    layout: Layout,
    beta: f64,
    azimuth: AzimuthDecoder,
}

impl Heads {
    fn decode(&self, row: &[f64]) -> Decoded {
        let l = &self.layout;
        let mut probs = vec![0.0; l.total];
        let mut pose2d = vec![[0.0; 2]; JOINTS];
        let mut pose3d = vec![[0.0; 3]; JOINTS];
        for j in 0..JOINTS {
            for a in 0..2 {
                let r = l.coord(l.p2d, j, a);
                pose2d[j][a] = softargmax_1d_probs(&row[r.clone()], self.beta, &mut probs[r]);
                let r = l.coord(l.p3d, j, a);
                pose3d[j][a] = softargmax_1d_probs(&row[r.clone()], self.beta, &mut probs[r]);
            }
            let d = decode_depth_unchecked(&row[l.depth_map(j)], l.g, l.g, pose3d[j][0], pose3d[j][1]);
            pose3d[j][2] = d.value;
        }
        let vis_prob = row[l.vis..l.vis + JOINTS]
            .iter()
            .map(|&v| crate::real::Real::sigmoid(v))
            .collect();
        let mut angles = [0.0; 4];
        for (h, a) in angles.iter_mut().enumerate() {
            let r = l.angle(h);
            let periodic = h % 2 == 0;
            *a = if periodic && self.azimuth == AzimuthDecoder::Circular {
                circular_softargmax_probs(&row[r.clone()], self.beta, &mut probs[r])
            } else {
                softargmax_1d_probs(&row[r.clone()], self.beta, &mut probs[r])
            };
        }
        Decoded {
            probs,
            pose2d,
            pose3d,
            vis_prob,
            angles,
        }
    }

    fn backward(&self, row: &[f64], dec: &Decoded, up: &Upstream, grad: &mut [f64]) {
        let l = &self.layout;
        for j in 0..JOINTS {
            for a in 0..2 {
                let r = l.coord(l.p2d, j, a);
                softargmax_1d_backward(
                    &dec.probs[r.clone()],
                    dec.pose2d[j][a],
                    self.beta,
                    up.pose2d[j][a],
                    &mut grad[r],
                );
            }
            let dz = up.pose3d[j][2];
            let mut dxy = [up.pose3d[j][0], up.pose3d[j][1]];
            if dz != 0.0 {
                let m = l.depth_map(j);
                let d = decode_depth_unchecked(&row[m.clone()], l.g, l.g, dec.pose3d[j][0], dec.pose3d[j][1]);
                for (i, g) in d.grad_cells {
                    grad[m.start + i] += dz * g;
                }
                dxy[0] += dz * d.grad_x;
                dxy[1] += dz * d.grad_y;
            }
            for (a, &u) in dxy.iter().enumerate() {
                let r = l.coord(l.p3d, j, a);
                softargmax_1d_backward(
                    &dec.probs[r.clone()],
                    dec.pose3d[j][a],
                    self.beta,
                    u,
                    &mut grad[r],
                );
            }
        }
        for j in 0..JOINTS {
            let p = dec.vis_prob[j];
            grad[l.vis + j] += up.vis_prob[j] * p * (1.0 - p);
        }
        for h in 0..4 {
            let u = up.angles[h];
            if u == 0.0 {
                continue;
            }
            let r = l.angle(h);
            if h % 2 == 0 && self.azimuth == AzimuthDecoder::Circular {
                circular_softargmax_backward(&dec.probs[r.clone()], self.beta, u, &mut grad[r]);
            } else {
                softargmax_1d_backward(&dec.probs[r.clone()], dec.angles[h], self.beta, u, &mut grad[r]);
            }
        }
    }
}

/// Tanh hidden layer plus a linear shortcut from the features to the outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    ws: Array2<f64>,
    b2: Array1<f64>,
}

struct Forward {
    hidden: Array2<f64>,
    out: Array2<f64>,
}

impl Regressor {
    fn new(inputs: usize, hidden: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut normal = |rows: usize, cols: usize, std: f64| {
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(&mut *rng);
                std * z
            })
        };
        Self {
            w1: normal(hidden, inputs, (1.0 / inputs as f64).sqrt()),
            b1: Array1::zeros(hidden),
            w2: normal(outputs, hidden, 0.1 / (hidden as f64).sqrt()),
            ws: Array2::zeros((outputs, inputs)),
            b2: Array1::zeros(outputs),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.ws.len() + self.b2.len()
    }

    fn forward(&self, x: &Array2<f64>) -> Forward {
        let hidden = (x.dot(&self.w1.t()) + &self.b1).mapv(f64::tanh);
        let out = hidden.dot(&self.w2.t()) + x.dot(&self.ws.t()) + &self.b2;
        Forward { hidden, out }
    }

    fn backward(&self, x: &Array2<f64>, fwd: &Forward, d_out: &Array2<f64>) -> Regressor {
        let w2 = d_out.t().dot(&fwd.hidden);
        let ws = d_out.t().dot(x);
        let b2 = d_out.sum_axis(Axis(0));
        let d_hidden = d_out.dot(&self.w2) * fwd.hidden.mapv(|h| 1.0 - h * h);
        let w1 = d_hidden.t().dot(x);
        let b1 = d_hidden.sum_axis(Axis(0));
        Regressor { w1, b1, w2, ws, b2 }
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.ws.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Unweighted per-task losses of one batch; `None` when the task had no labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TaskLosses {
    pub p2d: Option<f64>,
    pub p3d: Option<f64>,
    pub o: Option<f64>,
    pub conf: Option<f64>,
}

impl TaskLosses {
    pub fn get(&self, t: Task) -> Option<f64> {
        match t {
            Task::Pose2D => self.p2d,
            Task::Pose3D => self.p3d,
            Task::Orientation => self.o,
            Task::Visibility => self.conf,
        }
    }

    fn slot(&mut self, t: Task) -> &mut Option<f64> {
        match t {
            Task::Pose2D => &mut self.p2d,
            Task::Pose3D => &mut self.p3d,
            Task::Orientation => &mut self.o,
            Task::Visibility => &mut self.conf,
        }
    }

    fn set(&mut self, t: Task, v: f64) {
        *self.slot(t) = Some(v);
    }

    /// Copy with every task outside `keep` cleared.
    pub fn only(mut self, keep: &[Task]) -> Self {
        for t in Task::ALL {
            if !keep.contains(&t) {
                *self.slot(t) = None;
            }
        }
        self
    }

    /// Plain sum of the available task losses.
    pub fn sum(&self) -> f64 {
        Task::ALL.iter().filter_map(|&t| self.get(t)).sum()
    }
}

struct BatchLoss {
    tasks: TaskLosses,
    bundle: LossBundle,
    /// Gradient of each task loss w.r.t. the decoded outputs, per sample.
    upstream: [Vec<Upstream>; 4],
}

fn batch_losses(batch: &[&DemoSample], decoded: &[Decoded], enabled: &[Task]) -> Result<BatchLoss> {
    let n = batch.len();
    let mut tasks = TaskLosses::default();
    let mut bundle = LossBundle::new();
    let mut upstream: [Vec<Upstream>; 4] = std::array::from_fn(|_| vec![Upstream::zeros(); n]);

    let pick = |kind: LabelKind| select_samples(batch, kind);

    // 2D and 3D joints: masked L1 over the flattened coordinates of the batch.
    for (task, dims) in [(Task::Pose2D, 2usize), (Task::Pose3D, 3)] {
        let kind = if dims == 2 {
            LabelKind::Pose2D
        } else {
            LabelKind::Pose3D
        };
        let sel = pick(kind);
        let mut pred = Vec::with_capacity(n * JOINTS * dims);
        let mut target = Vec::with_capacity(n * JOINTS * dims);
        for (s, d) in batch.iter().zip(decoded) {
            for j in 0..JOINTS {
                for a in 0..dims {
                    pred.push(if dims == 2 { d.pose2d[j][a] } else { d.pose3d[j][a] });
                    target.push(s.pose3d[j][a]);
                }
            }
        }
        let stride = JOINTS * dims;
        let entries: Vec<usize> = sel.iter().flat_map(|&i| i * stride..(i + 1) * stride).collect();
        if let Some(lg) = masked_l1(&pred, &target, &entries)? {
            tasks.set(task, lg.value);
            for &i in &sel {
                for j in 0..JOINTS {
                    for a in 0..dims {
                        let g = lg.grad[i * stride + j * dims + a];
                        if dims == 2 {
                            upstream[task.index()][i].pose2d[j][a] = g;
                        } else {
                            upstream[task.index()][i].pose3d[j][a] = g;
                        }
                    }
                }
            }
            if enabled.contains(&task) {
                bundle.set(
                    task,
                    Some(TaskLoss {
                        value: lg.value,
                        count: lg.count,
                    }),
                )?;
            }
        }
    }

    // Orientation: azimuths of body and head pooled, polar angles pooled.
    let mut phi = (Vec::new(), Vec::new(), Vec::new());
    let mut theta = (Vec::new(), Vec::new(), Vec::new());
    for (i, (s, d)) in batch.iter().zip(decoded).enumerate() {
        let m = s.mask;
        for (head, has_phi, has_theta, label) in [
            (0, m.has_body_phi, m.has_body_theta, s.body),
            (2, m.has_head_phi, m.has_head_theta, s.head),
        ] {
            if has_phi {
                phi.0.push(d.angles[head]);
                phi.1.push(label[1]);
                phi.2.push((i, head));
            }
            if has_theta {
                theta.0.push(d.angles[head + 1]);
                theta.1.push(label[0]);
                theta.2.push((i, head + 1));
            }
        }
    }
    let lphi = loss_phi(&phi.0, &phi.1)?;
    let ltheta = loss_theta(&theta.0, &theta.1)?;
    if lphi.is_some() || ltheta.is_some() {
        let o = loss_orientation(lphi.as_ref().map(|l| l.value), ltheta.as_ref().map(|l| l.value))?;
        let k = Task::Orientation.index();
        for (lg, slots, w) in [(&lphi, &phi.2, o.d_phi), (&ltheta, &theta.2, o.d_theta)] {
            if let Some(lg) = lg {
                for (g, &(i, h)) in lg.grad.iter().zip(slots) {
                    upstream[k][i].angles[h] = w * g;
                }
            }
        }
        tasks.set(Task::Orientation, o.value);
        if enabled.contains(&Task::Orientation) {
            let count = lphi.as_ref().map_or(0, |l| l.count) + ltheta.as_ref().map_or(0, |l| l.count);
            bundle.set(
                Task::Orientation,
                Some(TaskLoss {
                    value: o.value,
                    count,
                }),
            )?;
        }
    }

    // Visibility: BCE over every joint of the selected samples.
    let sel = pick(LabelKind::Visibility);
    let mut probs = Vec::new();
    let mut target = Vec::new();
    for &i in &sel {
        for j in 0..JOINTS {
            probs.push(decoded[i].vis_prob[j]);
            target.push(if batch[i].visible[j] { 1.0 } else { 0.0 });
        }
    }
    if let Some(lg) = bce_visibility(&probs, &target)? {
        let k = Task::Visibility.index();
        for (n, &i) in sel.iter().enumerate() {
            for j in 0..JOINTS {
                upstream[k][i].vis_prob[j] = lg.grad[n * JOINTS + j];
            }
        }
        tasks.set(Task::Visibility, lg.value);
        if enabled.contains(&Task::Visibility) {
            bundle.set(
                Task::Visibility,
                Some(TaskLoss {
                    value: lg.value,
                    count: lg.count,
                }),
            )?;
        }
    }

    Ok(BatchLoss {
        tasks,
        bundle,
        upstream,
    })
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub tasks: TaskLosses,
}

pub const LOSS_CURVE_HEADER: &str = "step,lr,loss_total,loss_p2d,loss_p3d,loss_o,loss_conf";

/// CSV text for a loss curve; tasks without labels in a batch are left empty.
pub fn loss_curve_csv(rows: &[CurveRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(LOSS_CURVE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step,
            r.lr,
            r.loss_total,
            cell(r.tasks.p2d),
            cell(r.tasks.p3d),
            cell(r.tasks.o),
            cell(r.tasks.conf)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Mean joint distance in normalized units (half range 0.5).
    pub mpjpe_norm: f64,
    /// Mean 2D joint distance in box-normalized units.
    pub joint2d_err: f64,
    pub body_phi_mae_deg: f64,
    pub body_phi_acc_22_5: f64,
    pub body_phi_acc_45: f64,
    pub body_theta_mae_deg: f64,
    pub head_phi_mae_deg: f64,
    pub head_theta_mae_deg: f64,
    pub visibility_acc: f64,
    pub losses: TaskLosses,
    pub loss_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: DemoConfig,
    pub seed: u64,
    pub steps: usize,
    pub params: usize,
    pub eval: EvalReport,
    pub sigmas: [f64; 4],
    /// Mean of the last 100 (or fewer) curve rows.
    pub final_loss_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_curve: Option<String>,
    pub wall_clock_s: f64,
}

pub struct DemoRun {
    pub report: RunReport,
    pub curve: Vec<CurveRow>,
    pub model: Regressor,
}

struct Trainer {
    cfg: DemoConfig,
    heads: Heads,
    model: Regressor,
    sigma: SigmaParams,
    states: Vec<OptimState>,
    sigma_state: OptimState,
    train: Vec<DemoSample>,
    batch_rng: ChaCha8Rng,
}

struct StepOut {
    total: f64,
    tasks: TaskLosses,
}

fn feature_matrix(batch: &[&DemoSample]) -> Array2<f64> {
    let f = batch[0].features.len();
    Array2::from_shape_fn((batch.len(), f), |(i, k)| batch[i].features[k])
}

impl Trainer {
    fn new(cfg: &DemoConfig, data: &SyntheticData) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        let mut rng = stream_rng(cfg.seed, INIT_STREAM);
        let model = Regressor::new(cfg.feature_dim, cfg.hidden, layout.total, &mut rng);
        let adam = AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        };
        let mut m = model.clone();
        let states = m
            .tensors_mut()
            .iter()
            .map(|t| OptimState::new(t.len(), adam))
            .collect::<Result<Vec<_>>>()?;
        let sigma_state = OptimState::new(
            4,
            AdamWConfig {
                weight_decay: 0.0,
                ..adam
            },
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            heads: Heads {
                layout,
                beta: cfg.beta,
                azimuth: cfg.azimuth_decoder,
            },
            model,
            sigma: SigmaParams::default(),
            states,
            sigma_state,
            train: data.train_set(cfg)?,
            batch_rng: stream_rng(cfg.seed, BATCH_STREAM),
        })
    }

    fn step(&mut self, lr: f64, enabled: &[Task], step: usize) -> Result<StepOut> {
        let idx: Vec<usize> = (0..self.cfg.batch_size)
            .map(|_| self.batch_rng.random_range(0..self.train.len()))
            .collect();
        let batch: Vec<&DemoSample> = idx.iter().map(|&i| &self.train[i]).collect();
        let x = feature_matrix(&batch);
        let fwd = self.model.forward(&x);
        let decoded: Vec<Decoded> = fwd
            .out
            .rows()
            .into_iter()
            .map(|r| self.heads.decode(r.as_slice().expect("row")))
            .collect();
        let bl = batch_losses(&batch, &decoded, enabled)?;
        let total = uncertainty_total(&bl.bundle, &self.sigma)?;
        if !total.value.is_finite() {
            return Err(Error::Diverged { step });
        }
        let mut d_out = Array2::zeros(fwd.out.raw_dim());
        for (i, dec) in decoded.iter().enumerate() {
            let mut up = Upstream::zeros();
            for t in Task::ALL {
                let w = total.d_loss[t.index()];
                if w == 0.0 {
                    continue;
                }
                let u = &bl.upstream[t.index()][i];
                for j in 0..JOINTS {
                    for a in 0..2 {
                        up.pose2d[j][a] += w * u.pose2d[j][a];
                    }
                    for a in 0..3 {
                        up.pose3d[j][a] += w * u.pose3d[j][a];
                    }
                    up.vis_prob[j] += w * u.vis_prob[j];
                }
                for h in 0..4 {
                    up.angles[h] += w * u.angles[h];
                }
            }
            let mut row = d_out.row_mut(i);
            let out_row = fwd.out.row(i);
            self.heads.backward(
                out_row.as_slice().expect("row"),
                dec,
                &up,
                row.as_slice_mut().expect("row"),
            );
        }
        let mut grads = self.model.backward(&x, &fwd, &d_out);
        if grads
            .tensors_mut()
            .iter()
            .any(|g| g.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Diverged { step });
        }
        for ((p, g), st) in self
            .model
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors_mut())
            .zip(self.states.iter_mut())
        {
            st.set_lr(lr);
            adamw_step(p, g, st)?;
        }
        self.sigma_state.set_lr(lr);
        adamw_step(&mut self.sigma.u, &total.d_u, &mut self.sigma_state)?;
        Ok(StepOut {
            total: total.value,
            tasks: bl.tasks,
        })
    }

    fn evaluate(&self, set: &[DemoSample]) -> Result<EvalReport> {
        let refs: Vec<&DemoSample> = set.iter().collect();
        let mut decoded = Vec::with_capacity(set.len());
        let mut losses_acc = [0.0; 4];
        let mut counts = [0usize; 4];
        for chunk in refs.chunks(256) {
            let x = feature_matrix(chunk);
            let fwd = self.model.forward(&x);
            let dec: Vec<Decoded> = fwd
                .out
                .rows()
                .into_iter()
                .map(|r| self.heads.decode(r.as_slice().expect("row")))
                .collect();
            let bl = batch_losses(chunk, &dec, &Task::ALL)?;
            for t in Task::ALL {
                if let Some(v) = bl.tasks.get(t) {
                    losses_acc[t.index()] += v * chunk.len() as f64;
                    counts[t.index()] += chunk.len();
                }
            }
            decoded.extend(dec);
        }
        let mut losses = TaskLosses::default();
        for t in Task::ALL {
            if counts[t.index()] > 0 {
                losses.set(t, losses_acc[t.index()] / counts[t.index()] as f64);
            }
        }
        let pred3d: Vec<Pose3D> = decoded
            .iter()
            .map(|d| Pose::from_coords(d.pose3d.clone()))
            .collect::<Result<_>>()?;
        let gt3d: Vec<Pose3D> = set
            .iter()
            .map(|s| Pose::from_coords(s.pose3d.clone()))
            .collect::<Result<_>>()?;
        let mpjpe_norm = mpjpe(&pred3d, &gt3d, 0.5)?;
        let mut err2d = 0.0;
        let mut vis_ok = 0usize;
        for (d, s) in decoded.iter().zip(set) {
            for j in 0..JOINTS {
                err2d += ((d.pose2d[j][0] - s.pose3d[j][0]).powi(2)
                    + (d.pose2d[j][1] - s.pose3d[j][1]).powi(2))
                .sqrt();
                vis_ok += usize::from((d.vis_prob[j] > 0.5) == s.visible[j]);
            }
        }
        let n = set.len() as f64;
        let deg =
            |h: usize, scale: f64| -> Vec<f64> { decoded.iter().map(|d| d.angles[h] * scale).collect() };
        let gt = |body: bool, a: usize, scale: f64| -> Vec<f64> {
            set.iter()
                .map(|s| if body { s.body[a] } else { s.head[a] } * scale)
                .collect()
        };
        let (bp, bpg) = (deg(0, 360.0), gt(true, 1, 360.0));
        Ok(EvalReport {
            samples: set.len(),
            mpjpe_norm,
            joint2d_err: err2d / (n * JOINTS as f64),
            body_phi_mae_deg: orientation_mae(&bp, &bpg, AngleKind::Azimuthal)?,
            body_phi_acc_22_5: orientation_accuracy(&bp, &bpg, 22.5, AngleKind::Azimuthal)?,
            body_phi_acc_45: orientation_accuracy(&bp, &bpg, 45.0, AngleKind::Azimuthal)?,
            body_theta_mae_deg: orientation_mae(&deg(1, 180.0), &gt(true, 0, 180.0), AngleKind::Polar)?,
            head_phi_mae_deg: orientation_mae(&deg(2, 360.0), &gt(false, 1, 360.0), AngleKind::Azimuthal)?,
            head_theta_mae_deg: orientation_mae(&deg(3, 180.0), &gt(false, 0, 180.0), AngleKind::Polar)?,
            visibility_acc: vis_ok as f64 / (n * JOINTS as f64),
            loss_sum: losses.sum(),
            losses,
        })
    }
}

/// Train the regressor and evaluate it on a held-out set.
pub fn train_demo(cfg: &DemoConfig) -> Result<DemoRun> {
    let started = Instant::now();
    let data = SyntheticData::new(cfg)?;
    let mut trainer = Trainer::new(cfg, &data)?;
    let schedule = cfg.schedule.over(cfg.steps.max(2));
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let lr = schedule.lr(step)?;
        let tasks = cfg.tasks_at(step);
        let out = trainer.step(lr, &tasks, step)?;
        curve.push(CurveRow {
            step,
            lr,
            loss_total: out.total,
            tasks: out.tasks.only(&tasks),
        });
        if step % 500 == 0 {
            log::debug!("step {step} lr {lr:.3e} total {:.5}", out.total);
        }
    }
    let eval = trainer.evaluate(&data.eval_set(cfg)?)?;
    let tail = &curve[curve.len().saturating_sub(100)..];
    let final_loss_total = tail.iter().map(|r| r.loss_total).sum::<f64>() / tail.len() as f64;
    let sigmas = Task::ALL.map(|t| trainer.sigma.sigma(t));
    let report = RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        steps: cfg.steps,
        params: trainer.model.param_count(),
        eval,
        sigmas,
        final_loss_total,
        loss_curve: None,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok(DemoRun {
        report,
        curve,
        model: trainer.model,
    })
}

/// Learning-rate range test on the demo problem, starting from a fresh model.
pub fn demo_lr_find(cfg: &DemoConfig) -> Result<RangeTestResult> {
    let data = SyntheticData::new(cfg)?;
    let mut trainer = Trainer::new(cfg, &data)?;
    let tasks = Task::ALL.to_vec();
    let mut step = 0;
    lr_range_test(
        |lr| {
            let out = match trainer.step(lr, &tasks, step) {
                Ok(o) => o.total,
                Err(Error::Diverged { .. }) => f64::NAN,
                Err(e) => return Err(e),
            };
            step += 1;
            Ok(out)
        },
        &cfg.lr_find,
    )
}

/// CSV text of a range test: `lr,loss,smoothed`.
pub fn lr_find_csv(r: &RangeTestResult) -> String {
    let mut out = String::from("lr,loss,smoothed\n");
    for i in 0..r.lrs.len() {
        out.push_str(&format!("{},{},{}\n", r.lrs[i], r.losses[i], r.smoothed[i]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DemoConfig {
        DemoConfig {
            steps: 60,
            train_samples: 128,
            eval_samples: 64,
            ..DemoConfig::default()
        }
    }

    #[test]
    fn tilt_reproduces_requested_mean() {
        for bins in [2, 16, 32, 36] {
            for &m in &[0.05, 0.15, 0.5, 0.731, 0.85] {
                let lambda = tilt_for_mean(m, bins);
                let logits: Vec<f64> = (0..bins).map(|i| lambda * i as f64 / (bins - 1) as f64).collect();
                let got = crate::decode::softargmax_1d_value(&logits, 1.0);
                assert!((got - m).abs() < 1e-12, "bins {bins} mean {m}: {got}");
            }
        }
        assert_eq!(tilt_for_mean(0.5, 32), 0.0);
    }

    #[test]
    fn embedding_is_orthonormal_up_to_gain() {
        let cfg = DemoConfig::default();
        let d = SyntheticData::new(&cfg).unwrap();
        let gram = d.embed.t().dot(&d.embed) / (cfg.feature_gain * cfg.feature_gain);
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn samples_are_indexed_not_sequential() {
        let cfg = small();
        let d = SyntheticData::new(&cfg).unwrap();
        let a = d.sample(&cfg, 17).unwrap();
        let _ = d.sample(&cfg, 3).unwrap();
        assert_eq!(a, d.sample(&cfg, 17).unwrap());
        assert_ne!(a, d.sample(&cfg, 18).unwrap());
        assert_eq!(a.pose3d[0], [0.5; 3]);
        assert!(a
            .pose3d
            .iter()
            .flatten()
            .all(|v| (COORD_LO..=COORD_HI).contains(v)));
    }

    #[test]
    fn noiseless_features_decode_back_to_labels() {
        let cfg = DemoConfig::noiseless();
        let d = SyntheticData::new(&cfg).unwrap();
        let s = d.sample(&cfg, 5).unwrap();
        let f = Array1::from(s.features.clone());
        let y = d.embed.t().dot(&f) / (cfg.feature_gain * cfg.feature_gain);
        for (a, b) in y.iter().zip(d.labels(&s)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let cfg = DemoConfig {
            coord_bins: 6,
            orientation_bins: 8,
            depth_grid: 3,
            beta: 1.5,
            ..small()
        };
        let heads = Heads {
            layout: Layout::new(&cfg),
            beta: cfg.beta,
            azimuth: AzimuthDecoder::Circular,
        };
        let mut rng = stream_rng(1, 1);
        let row: Vec<f64> = (0..heads.layout.total)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut up = Upstream::zeros();
        for j in 0..JOINTS {
            up.pose2d[j] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            up.pose3d[j] = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            up.vis_prob[j] = rng.random_range(-1.0..1.0);
        }
        up.angles = [0.3, -0.7, 0.9, 0.2];
        let scalar = |r: &[f64]| {
            let d = heads.decode(r);
            let mut s = 0.0;
            for j in 0..JOINTS {
                s += up.pose2d[j][0] * d.pose2d[j][0] + up.pose2d[j][1] * d.pose2d[j][1];
                s += (0..3).map(|a| up.pose3d[j][a] * d.pose3d[j][a]).sum::<f64>();
                s += up.vis_prob[j] * d.vis_prob[j];
            }
            s + (0..4).map(|h| up.angles[h] * d.angles[h]).sum::<f64>()
        };
        let dec = heads.decode(&row);
        let mut grad = vec![0.0; row.len()];
        heads.backward(&row, &dec, &up, &mut grad);
        let eps = 1e-6;
        for i in (0..row.len()).step_by(7) {
            let mut a = row.clone();
            let mut b = row.clone();
            a[i] += eps;
            b[i] -= eps;
            let fd = (scalar(&a) - scalar(&b)) / (2.0 * eps);
            assert!(
                (fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "entry {i}: fd {fd} analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn regressor_gradient_matches_finite_differences() {
        let mut rng = stream_rng(2, 2);
        let model = Regressor::new(5, 4, 3, &mut rng);
        let model = Regressor {
            ws: Array2::from_shape_fn((3, 5), |_| rng.random_range(-0.5..0.5)),
            ..model
        };
        let x = Array2::from_shape_fn((2, 5), |_| rng.random_range(-1.0..1.0));
        let up = Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0));
        let loss = |m: &Regressor| (m.forward(&x).out * &up).sum();
        let fwd = model.forward(&x);
        let mut g = model.backward(&x, &fwd, &up);
        let analytic: Vec<f64> = g.tensors_mut().iter().flat_map(|t| t.to_vec()).collect();
        let n = analytic.len();
        let eps = 1e-6;
        for k in 0..n {
            let probe = |delta: f64| {
                let mut m = model.clone();
                let mut seen = 0;
                for t in m.tensors_mut() {
                    if k < seen + t.len() {
                        t[k - seen] += delta;
                        break;
                    }
                    seen += t.len();
                }
                loss(&m)
            };
            let fd = (probe(eps) - probe(-eps)) / (2.0 * eps);
            assert!((fd - analytic[k]).abs() < 1e-7 * (1.0 + fd.abs()), "param {k}");
        }
    }

    #[test]
    fn short_run_is_deterministic_and_learns() {
        let cfg = small();
        let a = train_demo(&cfg).unwrap();
        let b = train_demo(&cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.report.eval, b.report.eval);
        let first = a.curve[0].loss_total;
        assert!(a.report.final_loss_total < first);
    }

    #[test]
    fn staged_run_excludes_disabled_tasks() {
        let cfg = DemoConfig {
            stages: vec![Stage {
                from_step: 0,
                tasks: vec![Task::Pose2D],
            }],
            ..small()
        };
        let run = train_demo(&cfg).unwrap();
        // untouched sigma parameters stay at exp(0)
        assert_eq!(run.report.sigmas[1..], [1.0, 1.0, 1.0]);
        assert!(run.curve.last().unwrap().tasks.p2d.unwrap() < run.curve[0].tasks.p2d.unwrap());
    }

    #[test]
    fn bad_configs_rejected() {
        let base = small();
        for c in [
            DemoConfig {
                batch_size: 0,
                ..base.clone()
            },
            DemoConfig {
                feature_dim: 10,
                ..base.clone()
            },
            DemoConfig {
                noise: -1.0,
                ..base.clone()
            },
            DemoConfig {
                stages: vec![Stage {
                    from_step: 5,
                    tasks: vec![Task::Pose2D],
                }],
                ..base.clone()
            },
        ] {
            assert!(train_demo(&c).is_err());
        }
    }

    #[test]
    fn curve_csv_layout() {
        let rows = [CurveRow {
            step: 0,
            lr: 0.5,
            loss_total: 1.25,
            tasks: TaskLosses {
                p2d: Some(0.25),
                p3d: None,
                o: Some(1.0),
                conf: None,
            },
        }];
        assert_eq!(
            loss_curve_csv(&rows),
            format!("{LOSS_CURVE_HEADER}\n0,0.5,1.25,0.25,,1,\n")
        );
    }
}
