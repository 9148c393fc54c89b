//! Central finite-difference verification of analytic gradients.
//!
//! [`grad_check`] is generic over the scalar used to evaluate the forward
//! function. Softmax-based heads are checked with [`DoubleDouble`]
//! evaluation: their gradient components can be ~1e-6 while the forward value
//! is ~0.5, and an `f64` central difference at `eps = 1e-5` cannot resolve
//! those components to a relative error below 1e-6.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::decode::decode_depth_value;
use crate::decode::{
    decode_depth, softargmax_1d, softargmax_1d_value, softargmax_2d, softargmax_2d_value, Logits1D, Logits2D,
    Temperature,
};
use crate::error::{ensure_len, Error, Result};
use crate::losses::{
    bce_visibility, loss_phi, loss_theta, masked_l1, uncertainty_total, LossBundle, SigmaParams, Task,
    TaskLoss,
};
use crate::real::{DoubleDouble, Real};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// `|a - fd| / max(1e-12, |a| + |fd|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compare `analytic` against central differences of `f` at `x`.
pub fn grad_check<T, F>(f: F, x: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheck>
where
    T: Real,
    F: Fn(&[T]) -> T,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::OutOfRange {
            what: "finite-difference step",
            value: eps,
        });
    }
    ensure_len("analytic gradient", x.len(), analytic.len())?;
    let mut point: Vec<T> = x.iter().map(|&v| T::from_f64(v)).collect();
    let h = T::from_f64(eps);
    let mut worst = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
    };
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + h;
        let up = f(&point);
        point[i] = orig - h;
        let down = f(&point);
        point[i] = orig;
        let fd = ((up - down) / (h + h)).to_f64();
        let err = relative_error(analytic[i], fd);
        if err > worst.max_rel_err || err.is_nan() {
            worst = GradCheck {
                max_rel_err: err,
                worst_index: i,
            };
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub trials: usize,
    pub eps: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            eps: 1e-5,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpReport {
    pub name: String,
    pub max_rel_err: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub ops: Vec<OpReport>,
}

impl SuiteReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.ops.iter().all(|o| o.max_rel_err < tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.ops.iter().map(|o| o.max_rel_err).fold(0.0, f64::max)
    }
}

struct Tracker {
    name: String,
    max: f64,
    trials: usize,
}

impl Tracker {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            max: 0.0,
            trials: 0,
        }
    }

    fn record(&mut self, c: GradCheck) {
        if c.max_rel_err > self.max || c.max_rel_err.is_nan() {
            self.max = c.max_rel_err;
        }
        self.trials += 1;
    }

    fn finish(self) -> OpReport {
        OpReport {
            name: self.name,
            max_rel_err: self.max,
            trials: self.trials,
        }
    }
}

/// Draw a (pred, target) pair whose difference stays `margin` away from
/// every kink in `kinks` (absolute differences).
fn pair_away_from(rng: &mut ChaCha8Rng, kinks: &[f64], margin: f64) -> (f64, f64) {
    loop {
        let p: f64 = rng.random_range(0.0..1.0);
        let t: f64 = rng.random_range(0.0..1.0);
        let d = (p - t).abs();
        let near_edge = p < margin || p > 1.0 - margin;
        if !near_edge && kinks.iter().all(|k| (d - k).abs() >= margin) {
            return (p, t);
        }
    }
}

/// Run the gradient suite over every differentiable operation.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    if cfg.trials == 0 {
        return Err(Error::invalid("gradient suite needs at least one trial"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eps = cfg.eps;
    let t = Temperature::default();
    let mut ops = Vec::new();

    for k in [4usize, 16, 64] {
        let mut tr = Tracker::new(format!("softargmax_1d[K={k}]"));
        for _ in 0..cfg.trials {
            let l: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let s = softargmax_1d(&Logits1D::new(l.clone())?, t);
            let beta = t.beta();
            tr.record(grad_check(
                |x: &[DoubleDouble]| softargmax_1d_value(x, beta),
                &l,
                &s.grad,
                eps,
            )?);
        }
        ops.push(tr.finish());
    }

    let (rows, cols) = (8usize, 8usize);
    let mut tr = Tracker::new("softargmax_2d[8x8]");
    for _ in 0..cfg.trials {
        let l: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = softargmax_2d(&Logits2D::new(rows, cols, l.clone())?, t);
        let beta = t.beta();
        tr.record(grad_check(
            |x: &[DoubleDouble]| softargmax_2d_value(x, rows, cols, beta).0,
            &l,
            &s.grad_x,
            eps,
        )?);
        tr.record(grad_check(
            |x: &[DoubleDouble]| softargmax_2d_value(x, rows, cols, beta).1,
            &l,
            &s.grad_y,
            eps,
        )?);
    }
    ops.push(tr.finish());

    let mut tr = Tracker::new("decode_depth[8x8]");
    for _ in 0..cfg.trials {
        let map: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect();
        // stay clear of cell boundaries where the bilinear weights have kinks
        let coord = |rng: &mut ChaCha8Rng, n: usize| loop {
            let v: f64 = rng.random_range(0.0..1.0);
            let g = v * (n - 1) as f64;
            if (g - g.round()).abs() > 1e-3 {
                return v;
            }
        };
        let x = coord(&mut rng, cols);
        let y = coord(&mut rng, rows);
        let d = decode_depth(&Logits2D::new(rows, cols, map.clone())?, (x, y))?;
        let mut input = map.clone();
        input.extend([x, y]);
        let mut analytic = d.dense_grad(map.len());
        analytic.extend([d.grad_x, d.grad_y]);
        let n = map.len();
        tr.record(grad_check(
            |v: &[DoubleDouble]| decode_depth_value(&v[..n], rows, cols, v[n], v[n + 1]),
            &input,
            &analytic,
            eps,
        )?);
    }
    ops.push(tr.finish());

    let margin = 1e-4;
    let mut tr = Tracker::new("masked_l1");
    for _ in 0..cfg.trials {
        let n = rng.random_range(2..40);
        let (p, tg): (Vec<f64>, Vec<f64>) = (0..n).map(|_| pair_away_from(&mut rng, &[0.0], margin)).unzip();
        let mut sel: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
        if sel.is_empty() {
            sel.push(0);
        }
        let g = masked_l1(&p, &tg, &sel)?.expect("non-empty selection");
        tr.record(grad_check(
            |x: &[f64]| masked_l1(x, &tg, &sel).unwrap().unwrap().value,
            &p,
            &g.grad,
            eps,
        )?);
    }
    ops.push(tr.finish());

    let mut tr = Tracker::new("loss_phi");
    for _ in 0..cfg.trials {
        let n = rng.random_range(1..40);
        let (p, tg): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|_| pair_away_from(&mut rng, &[0.0, 0.5], margin))
            .unzip();
        let g = loss_phi(&p, &tg)?.expect("non-empty");
        tr.record(grad_check(
            |x: &[f64]| loss_phi(x, &tg).unwrap().unwrap().value,
            &p,
            &g.grad,
            eps,
        )?);
    }
    ops.push(tr.finish());

    let mut tr = Tracker::new("loss_theta");
    for _ in 0..cfg.trials {
        let n = rng.random_range(1..40);
        let (p, tg): (Vec<f64>, Vec<f64>) = (0..n).map(|_| pair_away_from(&mut rng, &[0.0], margin)).unzip();
        let g = loss_theta(&p, &tg)?.expect("non-empty");
        tr.record(grad_check(
            |x: &[f64]| loss_theta(x, &tg).unwrap().unwrap().value,
            &p,
            &g.grad,
            eps,
        )?);
    }
    ops.push(tr.finish());

    let mut tr = Tracker::new("bce_visibility");
    for _ in 0..cfg.trials {
        let n = rng.random_range(1..40);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
        let tg: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        let g = bce_visibility(&p, &tg)?.expect("non-empty");
        tr.record(grad_check(
            |x: &[f64]| bce_visibility(x, &tg).unwrap().unwrap().value,
            &p,
            &g.grad,
            eps,
        )?);
    }
    ops.push(tr.finish());

    let mut by_loss = Tracker::new("uncertainty_total[d/dL]");
    let mut by_u = Tracker::new("uncertainty_total[d/du]");
    for _ in 0..cfg.trials {
        let losses: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.01..2.0));
        let u: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
        let mut include: [bool; 4] = std::array::from_fn(|_| rng.random_bool(0.8));
        if !include.iter().any(|&b| b) {
            include[rng.random_range(0..4)] = true;
        }
        let bundle = |l: &[f64]| {
            let mut b = LossBundle::new();
            for task in Task::ALL {
                let i = task.index();
                if include[i] {
                    b.set(
                        task,
                        Some(TaskLoss {
                            value: l[i],
                            count: 1,
                        }),
                    )
                    .unwrap();
                }
            }
            b
        };
        let sig = SigmaParams { u };
        let total = uncertainty_total(&bundle(&losses), &sig)?;
        // excluded tasks have zero gradient and a constant total in their slot
        by_loss.record(grad_check(
            |x: &[f64]| uncertainty_total(&bundle(x), &sig).unwrap().value,
            &losses,
            &total.d_loss,
            eps,
        )?);
        let b = bundle(&losses);
        by_u.record(grad_check(
            |x: &[f64]| {
                let s = SigmaParams {
                    u: [x[0], x[1], x[2], x[3]],
                };
                uncertainty_total(&b, &s).unwrap().value
            },
            &u,
            &total.d_u,
            eps,
        )?);
    }
    ops.push(by_loss.finish());
    ops.push(by_u.finish());

    Ok(SuiteReport { ops })
}
