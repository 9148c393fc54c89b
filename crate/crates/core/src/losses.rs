//! Task losses, label-aware sample selection and uncertainty weighting.
//!
//! Every per-task loss returns `Ok(None)` when no entry contributes. That is
//! distinct from a zero loss: an absent task is dropped from the weighted
//! total together with its `sigma` factor.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelKind {
    Pose2D,
    Pose3D,
    BodyPhi,
    BodyTheta,
    HeadPhi,
    HeadTheta,
    Visibility,
}

/// Which supervision signals a sample carries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    pub has_pose2d: bool,
    pub has_pose3d: bool,
    pub has_body_phi: bool,
    pub has_body_theta: bool,
    pub has_head_phi: bool,
    pub has_head_theta: bool,
    pub has_visibility: bool,
}

impl LabelMask {
    pub fn all() -> Self {
        Self {
            has_pose2d: true,
            has_pose3d: true,
            has_body_phi: true,
            has_body_theta: true,
            has_head_phi: true,
            has_head_theta: true,
            has_visibility: true,
        }
    }

    pub fn has(&self, kind: LabelKind) -> bool {
        match kind {
            LabelKind::Pose2D => self.has_pose2d,
            LabelKind::Pose3D => self.has_pose3d,
            LabelKind::BodyPhi => self.has_body_phi,
            LabelKind::BodyTheta => self.has_body_theta,
            LabelKind::HeadPhi => self.has_head_phi,
            LabelKind::HeadTheta => self.has_head_theta,
            LabelKind::Visibility => self.has_visibility,
        }
    }
}

pub trait Labeled {
    fn label_mask(&self) -> LabelMask;
}

impl Labeled for LabelMask {
    fn label_mask(&self) -> LabelMask {
        *self
    }
}

/// Indices (ascending) of the samples carrying `key`.
pub fn select_samples<R: Labeled>(batch: &[R], key: LabelKind) -> Vec<usize> {
    batch
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label_mask().has(key))
        .map(|(i, _)| i)
        .collect()
}

/// Loss value with its gradient w.r.t. every prediction entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    /// Number of entries averaged over.
    pub count: usize,
    pub grad: Vec<f64>,
}

fn check_pair(pred: &[f64], target: &[f64], what: &'static str) -> Result<()> {
    ensure_len(what, pred.len(), target.len())?;
    ensure_finite(pred, what)?;
    ensure_finite(target, what)
}

fn check_unit(values: &[f64], what: &'static str) -> Result<()> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(&value) => Err(Error::OutOfRange { what, value }),
        None => Ok(()),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error over the entry indices in `selected`.
pub fn masked_l1(pred: &[f64], target: &[f64], selected: &[usize]) -> Result<Option<LossGrad>> {
    check_pair(pred, target, "masked L1")?;
    if let Some(&bad) = selected.iter().find(|&&i| i >= pred.len()) {
        return Err(Error::invalid(format!(
            "selected entry {bad} out of range for {} predictions",
            pred.len()
        )));
    }
    if selected.is_empty() {
        return Ok(None);
    }
    let n = selected.len() as f64;
    let mut grad = vec![0.0; pred.len()];
    let mut total = 0.0;
    for &i in selected {
        let d = pred[i] - target[i];
        total += d.abs();
        grad[i] += sign(d) / n;
    }
    Ok(Some(LossGrad {
        value: total / n,
        count: selected.len(),
        grad,
    }))
}

/// Mean circular L1 on unit azimuths: `min(|d|, 1 - |d|)`.
///
/// At `|d| = 0.5` the unwrapped branch supplies the subgradient.
pub fn loss_phi(pred: &[f64], target: &[f64]) -> Result<Option<LossGrad>> {
    check_pair(pred, target, "azimuth loss")?;
    check_unit(pred, "predicted unit azimuth")?;
    check_unit(target, "target unit azimuth")?;
    if pred.is_empty() {
        return Ok(None);
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            let a = d.abs();
            if a <= 0.5 {
                total += a;
                sign(d) / n
            } else {
                total += 1.0 - a;
                -sign(d) / n
            }
        })
        .collect();
    Ok(Some(LossGrad {
        value: total / n,
        count: pred.len(),
        grad,
    }))
}

/// Mean L1 on unit polar angles (no wraparound).
pub fn loss_theta(pred: &[f64], target: &[f64]) -> Result<Option<LossGrad>> {
    check_pair(pred, target, "polar loss")?;
    check_unit(pred, "predicted unit polar angle")?;
    check_unit(target, "target unit polar angle")?;
    let all: Vec<usize> = (0..pred.len()).collect();
    masked_l1(pred, target, &all)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationLoss {
    pub value: f64,
    pub d_phi: f64,
    pub d_theta: f64,
}

/// Mean of the available angle losses; with azimuth labels only this is `L_phi`.
pub fn loss_orientation(lphi: Option<f64>, ltheta: Option<f64>) -> Result<OrientationLoss> {
    match (lphi, ltheta) {
        (Some(p), Some(t)) => Ok(OrientationLoss {
            value: (p + t) / 2.0,
            d_phi: 0.5,
            d_theta: 0.5,
        }),
        (Some(p), None) => Ok(OrientationLoss {
            value: p,
            d_phi: 1.0,
            d_theta: 0.0,
        }),
        (None, Some(t)) => Ok(OrientationLoss {
            value: t,
            d_phi: 0.0,
            d_theta: 1.0,
        }),
        (None, None) => Err(Error::Empty("orientation loss has no angle component")),
    }
}

/// Mean binary cross-entropy with probabilities clamped to `[eps, 1 - eps]`.
pub fn bce_visibility(pred_prob: &[f64], target: &[f64]) -> Result<Option<LossGrad>> {
    check_pair(pred_prob, target, "visibility BCE")?;
    check_unit(pred_prob, "visibility probability")?;
    check_unit(target, "visibility target")?;
    if pred_prob.is_empty() {
        return Ok(None);
    }
    let n = pred_prob.len() as f64;
    let mut total = 0.0;
    let grad = pred_prob
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            total -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
            if pc != p {
                0.0
            } else {
                -(t / pc - (1.0 - t) / (1.0 - pc)) / n
            }
        })
        .collect();
    Ok(Some(LossGrad {
        value: total / n,
        count: pred_prob.len(),
        grad,
    }))
}

/// The four jointly weighted tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pose2D,
    Pose3D,
    Orientation,
    Visibility,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Pose2D, Task::Pose3D, Task::Orientation, Task::Visibility];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Pose2D => "p2d",
            Task::Pose3D => "p3d",
            Task::Orientation => "o",
            Task::Visibility => "conf",
        }
    }

    /// Denominator factor on `sigma^2`: regression terms use 2, the
    /// classification term 1.
    fn sigma_factor(self) -> f64 {
        match self {
            Task::Visibility => 1.0,
            _ => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskLoss {
    pub value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBundle {
    terms: [Option<TaskLoss>; 4],
}

impl LossBundle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a task loss. A zero count or `None` marks the task as absent.
    pub fn set(&mut self, task: Task, loss: Option<TaskLoss>) -> Result<()> {
        if let Some(l) = loss {
            if !l.value.is_finite() {
                return Err(Error::NonFinite("task loss"));
            }
            if l.value < 0.0 {
                return Err(Error::OutOfRange {
                    what: "task loss",
                    value: l.value,
                });
            }
        }
        self.terms[task.index()] = loss.filter(|l| l.count > 0);
        Ok(())
    }

    pub fn with(mut self, task: Task, value: f64, count: usize) -> Result<Self> {
        self.set(task, Some(TaskLoss { value, count }))?;
        Ok(self)
    }

    pub fn get(&self, task: Task) -> Option<TaskLoss> {
        self.terms[task.index()]
    }

    pub fn included(&self) -> impl Iterator<Item = (Task, TaskLoss)> + '_ {
        Task::ALL
            .into_iter()
            .filter_map(move |t| self.get(t).map(|l| (t, l)))
    }
}

/// Log-scales `u_i` with `sigma_i = exp(u_i)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SigmaParams {
    pub u: [f64; 4],
}

impl SigmaParams {
    pub fn from_sigmas(sigmas: [f64; 4]) -> Result<Self> {
        if let Some(&bad) = sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::OutOfRange {
                what: "sigma",
                value: bad,
            });
        }
        Ok(Self {
            u: sigmas.map(f64::ln),
        })
    }

    pub fn sigma(&self, task: Task) -> f64 {
        self.u[task.index()].exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyTotal {
    pub value: f64,
    /// d total / d task loss (0 for excluded tasks).
    pub d_loss: [f64; 4],
    /// d total / d u_i (0 for excluded tasks).
    pub d_u: [f64; 4],
}

/// `sum_i L_i / (c_i sigma_i^2) + ln(1 + prod_i sigma_i)` over included tasks,
/// with `c = 2` for the regression tasks and `c = 1` for visibility.
pub fn uncertainty_total(b: &LossBundle, s: &SigmaParams) -> Result<UncertaintyTotal> {
    ensure_finite(&s.u, "sigma log-scales")?;
    let mut value = 0.0;
    let mut d_loss = [0.0; 4];
    let mut d_u = [0.0; 4];
    let mut log_prod = 0.0;
    let mut any = false;
    for (task, loss) in b.included() {
        let i = task.index();
        let inv = 1.0 / (task.sigma_factor() * (2.0 * s.u[i]).exp());
        value += loss.value * inv;
        d_loss[i] = inv;
        d_u[i] = -2.0 * loss.value * inv;
        log_prod += s.u[i];
        any = true;
    }
    if !any {
        return Err(Error::NoLossTerms);
    }
    let prod = log_prod.exp();
    value += prod.ln_1p();
    let share = prod / (1.0 + prod);
    for (task, _) in b.included() {
        d_u[task.index()] += share;
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("uncertainty-weighted total"));
    }
    Ok(UncertaintyTotal { value, d_loss, d_u })
}
