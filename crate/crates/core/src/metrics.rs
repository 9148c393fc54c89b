//! Evaluation metrics: MPJPE (overall, per action, flip test), orientation
//! accuracy and MAE, dataset statistics and orientation histograms.
//!
//! Aggregates come with accumulators whose `merge` is associative, so record
//! sets can be split, reduced independently and combined.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{ensure_len, Error, Result};
use crate::orientation::{reduce_azimuth, AngleKind};
use crate::records::SampleRecord;
use crate::skeleton::{denormalize_pose3d, flip_pose, Pose, Pose3D, SkeletonDef};

/// Mean joint distance in mm for one sample over joints present in both poses.
pub fn sample_mpjpe(pred: &Pose3D, gt: &Pose3D, half_range_mm: f64, sample: usize) -> Result<f64> {
    ensure_len("pose joints (pred vs gt)", gt.len(), pred.len())?;
    let a = denormalize_pose3d(pred, half_range_mm);
    let b = denormalize_pose3d(gt, half_range_mm);
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in 0..gt.len() {
        if pred.is_present(j) && gt.is_present(j) {
            let d2: f64 = (0..3).map(|k| (a[j][k] - b[j][k]).powi(2)).sum();
            sum += d2.sqrt();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoCommonJoints { sample });
    }
    Ok(sum / n as f64)
}

/// Running sum of per-sample MPJPE values.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MpjpeAccumulator {
    pub sum_mm: f64,
    pub samples: usize,
}

impl MpjpeAccumulator {
    pub fn push(&mut self, sample_mpjpe_mm: f64) {
        self.sum_mm += sample_mpjpe_mm;
        self.samples += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.sum_mm += other.sum_mm;
        self.samples += other.samples;
    }

    pub fn mean(&self) -> Result<f64> {
        if self.samples == 0 {
            return Err(Error::Empty("MPJPE samples"));
        }
        Ok(self.sum_mm / self.samples as f64)
    }
}

fn check_half_range(h: f64) -> Result<()> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::OutOfRange {
            what: "half range (mm)",
            value: h,
        });
    }
    Ok(())
}

/// Per-sample joint error averaged over samples, in mm.
pub fn mpjpe(pred: &[Pose3D], gt: &[Pose3D], half_range_mm: f64) -> Result<f64> {
    ensure_len("pose sets (pred vs gt)", gt.len(), pred.len())?;
    check_half_range(half_range_mm)?;
    let mut acc = MpjpeAccumulator::default();
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        acc.push(sample_mpjpe(p, g, half_range_mm, i)?);
    }
    acc.mean()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionEntry {
    pub mpjpe_mm: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionTable {
    pub per_action: BTreeMap<String, ActionEntry>,
    /// Unweighted mean of the per-action values.
    pub average_mm: f64,
}

/// MPJPE grouped by action tag.
pub fn mpjpe_by_action(
    actions: &[&str],
    pred: &[Pose3D],
    gt: &[Pose3D],
    half_range_mm: f64,
) -> Result<ActionTable> {
    ensure_len("pose sets (pred vs gt)", gt.len(), pred.len())?;
    ensure_len("action tags", gt.len(), actions.len())?;
    check_half_range(half_range_mm)?;
    let mut groups: BTreeMap<String, MpjpeAccumulator> = BTreeMap::new();
    for (i, ((p, g), a)) in pred.iter().zip(gt).zip(actions).enumerate() {
        let e = sample_mpjpe(p, g, half_range_mm, i)?;
        groups.entry(a.to_string()).or_default().push(e);
    }
    let mut per_action = BTreeMap::new();
    for (action, acc) in groups {
        match acc.mean() {
            Ok(m) => {
                per_action.insert(
                    action,
                    ActionEntry {
                        mpjpe_mm: m,
                        samples: acc.samples,
                    },
                );
            }
            Err(_) => log::warn!("action {action:?} has no samples, left out of the table"),
        }
    }
    if per_action.is_empty() {
        return Err(Error::Empty("action groups"));
    }
    let average_mm = per_action.values().map(|e| e.mpjpe_mm).sum::<f64>() / per_action.len() as f64;
    Ok(ActionTable {
        per_action,
        average_mm,
    })
}

/// Flip test: mirror the prediction made on the flipped input back and
/// average it coordinate-wise with the plain prediction.
pub fn flip_average<const D: usize>(
    pred: &Pose<D>,
    pred_flipped_input: &Pose<D>,
    def: &SkeletonDef,
) -> Result<Pose<D>> {
    ensure_len("pose joints vs skeleton", def.len(), pred.len())?;
    let back = flip_pose(pred_flipped_input, def)?;
    let mut out = pred.clone();
    for j in 0..out.len() {
        for k in 0..D {
            out.coords[j][k] = 0.5 * (pred.coords[j][k] + back.coords[j][k]);
        }
        out.score[j] = 0.5 * (pred.score[j] + back.score[j]);
        out.visible[j] = pred.visible[j] || back.visible[j];
    }
    Ok(out)
}

fn angle_errors(preds: &[f64], gts: &[f64], kind: AngleKind) -> Result<Vec<f64>> {
    ensure_len("angle lists (pred vs gt)", gts.len(), preds.len())?;
    if gts.is_empty() {
        return Err(Error::Empty("angle lists"));
    }
    preds
        .iter()
        .zip(gts)
        .map(|(&p, &g)| kind.error_deg(p, g))
        .collect()
}

/// Fraction of angles whose error is at most `threshold_deg`.
pub fn orientation_accuracy(preds: &[f64], gts: &[f64], threshold_deg: f64, kind: AngleKind) -> Result<f64> {
    let errs = angle_errors(preds, gts, kind)?;
    Ok(errs.iter().filter(|&&e| e <= threshold_deg).count() as f64 / errs.len() as f64)
}

pub fn orientation_mae(preds: &[f64], gts: &[f64], kind: AngleKind) -> Result<f64> {
    let errs = angle_errors(preds, gts, kind)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrientationReport {
    pub acc_22_5: f64,
    pub acc_45: f64,
    pub mae_deg: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationAccumulator {
    kind: AngleKind,
    within_22_5: usize,
    within_45: usize,
    err_sum: f64,
    count: usize,
}

impl OrientationAccumulator {
    pub fn new(kind: AngleKind) -> Self {
        Self {
            kind,
            within_22_5: 0,
            within_45: 0,
            err_sum: 0.0,
            count: 0,
        }
    }

    pub fn push(&mut self, pred_deg: f64, gt_deg: f64) -> Result<()> {
        let e = self.kind.error_deg(pred_deg, gt_deg)?;
        self.within_22_5 += usize::from(e <= 22.5);
        self.within_45 += usize::from(e <= 45.0);
        self.err_sum += e;
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.kind != other.kind {
            return Err(Error::invalid("cannot merge azimuth and polar accumulators"));
        }
        self.within_22_5 += other.within_22_5;
        self.within_45 += other.within_45;
        self.err_sum += other.err_sum;
        self.count += other.count;
        Ok(())
    }

    pub fn report(&self) -> Result<OrientationReport> {
        if self.count == 0 {
            return Err(Error::Empty("orientation pairs"));
        }
        let n = self.count as f64;
        let r = OrientationReport {
            acc_22_5: self.within_22_5 as f64 / n,
            acc_45: self.within_45 as f64 / n,
            mae_deg: self.err_sum / n,
            count: self.count,
        };
        if !r.mae_deg.is_finite() {
            return Err(Error::NonFinite("orientation MAE"));
        }
        Ok(r)
    }
}

pub fn orientation_report(preds: &[f64], gts: &[f64], kind: AngleKind) -> Result<OrientationReport> {
    ensure_len("angle lists (pred vs gt)", gts.len(), preds.len())?;
    let mut acc = OrientationAccumulator::new(kind);
    for (&p, &g) in preds.iter().zip(gts) {
        acc.push(p, g)?;
    }
    acc.report()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseReport {
    pub mpjpe_mm: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub by_action: Option<ActionTable>,
    pub flip_test: bool,
}

/// Combined output of the evaluation commands.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orientation: Option<OrientationReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldStats {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Welford running moments with a pairwise merge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldAccumulator {
    n: usize,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl Default for FieldAccumulator {
    fn default() -> Self {
        Self {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl FieldAccumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn merge(&mut self, o: &Self) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = (self.n + o.n) as f64;
        let delta = o.mean - self.mean;
        self.mean += delta * o.n as f64 / n;
        self.m2 += o.m2 + delta * delta * self.n as f64 * o.n as f64 / n;
        self.n += o.n;
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
    }

    pub fn finish(&self) -> Option<FieldStats> {
        (self.n > 0).then(|| FieldStats {
            n: self.n,
            // clamp so rounding can never put the mean outside [min, max]
            mean: self.mean.clamp(self.min, self.max),
            std: (self.m2.max(0.0) / self.n as f64).sqrt(),
            min: self.min,
            max: self.max,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetStats {
    pub n: usize,
    pub b2d: FieldStats,
    /// Absent when no record carries the field.
    pub b3d: Option<FieldStats>,
    pub d: Option<FieldStats>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DatasetStatsAccumulator {
    n: usize,
    b2d: FieldAccumulator,
    b3d: FieldAccumulator,
    d: FieldAccumulator,
}

impl DatasetStatsAccumulator {
    pub fn push(&mut self, r: &SampleRecord) {
        self.n += 1;
        self.b2d.push(r.bbox.diagonal());
        if let Some(v) = r.bbox3d_diag_mm {
            self.b3d.push(v);
        }
        if let Some(v) = r.camera_distance_px {
            self.d.push(v);
        }
    }

    pub fn merge(&mut self, o: &Self) {
        self.n += o.n;
        self.b2d.merge(&o.b2d);
        self.b3d.merge(&o.b3d);
        self.d.merge(&o.d);
    }

    pub fn finish(&self) -> Result<DatasetStats> {
        let b2d = self.b2d.finish().ok_or(Error::Empty("record set"))?;
        Ok(DatasetStats {
            n: self.n,
            b2d,
            b3d: self.b3d.finish(),
            d: self.d.finish(),
        })
    }
}

pub fn dataset_stats(records: &[SampleRecord]) -> Result<DatasetStats> {
    let mut acc = DatasetStatsAccumulator::default();
    for r in records {
        acc.push(r);
    }
    acc.finish()
}

/// Counts per bin over `[0, 360)`; bin `i` covers `[i * w, (i + 1) * w)`.
pub fn orientation_histogram(angles_deg: &[f64], n_bins: usize) -> Result<Vec<usize>> {
    if n_bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let mut counts = vec![0usize; n_bins];
    for &a in angles_deg {
        let a = reduce_azimuth(a)?;
        let bin = ((a * n_bins as f64 / 360.0).floor() as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    Ok(counts)
}

pub fn histogram_csv(counts: &[usize]) -> String {
    let width = 360.0 / counts.len() as f64;
    let mut out = String::from("bin_start_deg,count\n");
    for (i, c) in counts.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i as f64 * width, c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::BBox;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose(coords: Vec<[f64; 3]>) -> Pose3D {
        Pose::from_coords(coords).unwrap()
    }

    #[test]
    fn identical_poses_score_zero() {
        let p = pose(vec![[0.2, 0.4, 0.6], [0.5, 0.5, 0.5]]);
        assert_eq!(
            mpjpe(std::slice::from_ref(&p), std::slice::from_ref(&p), 1000.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn pythagorean_offset() {
        // (3, 4, 0) mm at half range 1000 mm is (0.0015, 0.002, 0) normalized
        let g = pose(vec![[0.5, 0.5, 0.5]]);
        let p = pose(vec![[0.5015, 0.502, 0.5]]);
        assert_relative_eq!(mpjpe(&[p], &[g], 1000.0).unwrap(), 5.0, max_relative = 1e-9);
    }

    #[test]
    fn absent_joints_are_skipped_and_no_overlap_errors() {
        let g = pose(vec![[0.5; 3], [0.6, 0.5, 0.5]]);
        let mut p = pose(vec![[0.9; 3], [0.6, 0.5, 0.5]]);
        p.score[0] = 0.0;
        assert_eq!(
            mpjpe(&[p.clone()], std::slice::from_ref(&g), 1000.0).unwrap(),
            0.0
        );
        p.score[1] = 0.0;
        assert!(matches!(
            mpjpe(&[g.clone(), p], &[g.clone(), g], 1000.0),
            Err(Error::NoCommonJoints { sample: 1 })
        ));
    }

    fn random_sets(rng: &mut ChaCha8Rng) -> (Vec<Pose3D>, Vec<Pose3D>) {
        let n = rng.random_range(1..=20);
        let j = rng.random_range(1..=26);
        let mk = |rng: &mut ChaCha8Rng| {
            let mut p = pose(
                (0..j)
                    .map(|_| [rng.random(), rng.random(), rng.random()])
                    .collect(),
            );
            for s in p.score.iter_mut() {
                if rng.random_bool(0.1) {
                    *s = 0.0;
                }
            }
            p
        };
        let mut pred = Vec::new();
        let mut gt = Vec::new();
        for _ in 0..n {
            let mut g = mk(rng);
            g.score[0] = 1.0;
            let mut p = mk(rng);
            p.score[0] = 1.0;
            pred.push(p);
            gt.push(g);
        }
        (pred, gt)
    }

    fn oracle_mpjpe(pred: &[Pose3D], gt: &[Pose3D], h: f64) -> f64 {
        let mut total = 0.0;
        for s in 0..gt.len() {
            let mut sum = 0.0;
            let mut n = 0.0;
            for j in 0..gt[s].coords.len() {
                if pred[s].score[j] > 0.0 && gt[s].score[j] > 0.0 {
                    let mut d2 = 0.0;
                    for k in 0..3 {
                        let a = (pred[s].coords[j][k] - 0.5) * 2.0 * h;
                        let b = (gt[s].coords[j][k] - 0.5) * 2.0 * h;
                        d2 += (a - b) * (a - b);
                    }
                    sum += d2.sqrt();
                    n += 1.0;
                }
            }
            total += sum / n;
        }
        total / gt.len() as f64
    }

    #[test]
    fn mpjpe_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (p, g) = random_sets(&mut rng);
            let h = rng.random_range(100.0..2000.0);
            assert_relative_eq!(
                mpjpe(&p, &g, h).unwrap(),
                oracle_mpjpe(&p, &g, h),
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, g) = random_sets(&mut rng);
        let mut whole = MpjpeAccumulator::default();
        let mut left = MpjpeAccumulator::default();
        let mut right = MpjpeAccumulator::default();
        let half = p.len() / 2;
        for i in 0..p.len() {
            let e = sample_mpjpe(&p[i], &g[i], 1000.0, i).unwrap();
            whole.push(e);
            if i < half {
                left.push(e)
            } else {
                right.push(e)
            }
        }
        left.merge(&right);
        assert_eq!(left.samples, whole.samples);
        assert_relative_eq!(left.mean().unwrap(), whole.mean().unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn by_action_single_group_equals_overall() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, g) = random_sets(&mut rng);
        let tags = vec!["walk"; p.len()];
        let t = mpjpe_by_action(&tags, &p, &g, 1000.0).unwrap();
        assert_eq!(t.per_action.len(), 1);
        assert_relative_eq!(t.average_mm, mpjpe(&p, &g, 1000.0).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn by_action_average_is_unweighted() {
        let g = pose(vec![[0.5; 3]]);
        let off = |mm: f64| pose(vec![[0.5 + mm / 2000.0, 0.5, 0.5]]);
        // one sample at 40 mm, three at 60 mm
        let preds = vec![off(40.0), off(60.0), off(60.0), off(60.0)];
        let gts = vec![g.clone(), g.clone(), g.clone(), g];
        let t = mpjpe_by_action(&["a", "b", "b", "b"], &preds, &gts, 1000.0).unwrap();
        assert_relative_eq!(t.per_action["a"].mpjpe_mm, 40.0, max_relative = 1e-9);
        assert_relative_eq!(t.per_action["b"].mpjpe_mm, 60.0, max_relative = 1e-9);
        assert_relative_eq!(t.average_mm, 50.0, max_relative = 1e-9);
        assert_eq!(t.per_action["b"].samples, 3);
    }

    #[test]
    fn by_action_matches_grouped_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let names = ["a", "b", "c"];
        for _ in 0..50 {
            let (p, g) = random_sets(&mut rng);
            let tags: Vec<&str> = (0..p.len()).map(|_| names[rng.random_range(0..3)]).collect();
            let t = mpjpe_by_action(&tags, &p, &g, 1000.0).unwrap();
            let mut means = Vec::new();
            for name in names {
                let idx: Vec<usize> = (0..p.len()).filter(|&i| tags[i] == name).collect();
                if idx.is_empty() {
                    assert!(!t.per_action.contains_key(name));
                    continue;
                }
                let ps: Vec<_> = idx.iter().map(|&i| p[i].clone()).collect();
                let gs: Vec<_> = idx.iter().map(|&i| g[i].clone()).collect();
                let m = oracle_mpjpe(&ps, &gs, 1000.0);
                assert_relative_eq!(t.per_action[name].mpjpe_mm, m, max_relative = 1e-9);
                means.push(m);
            }
            let avg = means.iter().sum::<f64>() / means.len() as f64;
            assert_relative_eq!(t.average_mm, avg, max_relative = 1e-9);
        }
    }

    #[test]
    fn flip_average_of_mirror_returns_prediction() {
        let def = SkeletonDef::common17();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = pose(
            (0..17)
                .map(|_| [rng.random(), rng.random(), rng.random()])
                .collect(),
        );
        let mirrored = flip_pose(&p, &def).unwrap();
        let avg = flip_average(&p, &mirrored, &def).unwrap();
        for j in 0..17 {
            for k in 0..3 {
                assert!((avg.coords[j][k] - p.coords[j][k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn flip_average_by_hand() {
        // two joints that are each other's mirror
        let def = SkeletonDef::new(vec!["l".into(), "r".into()], vec![(0, 1)], vec![], 0).unwrap();
        let a = Pose::<2>::from_coords(vec![[0.1, 0.2], [0.3, 0.4]]).unwrap();
        let b = Pose::<2>::from_coords(vec![[0.6, 0.8], [0.5, 0.6]]).unwrap();
        // unflipped b: joint 0 <- b[1] mirrored = (0.5, 0.6), joint 1 <- (0.4, 0.8)
        let avg = flip_average(&a, &b, &def).unwrap();
        let want = [[0.3, 0.4], [0.35, 0.6]];
        for (got, w) in avg.coords.iter().zip(want) {
            for (x, y) in got.iter().zip(w) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
        let wrong = Pose::<2>::from_coords(vec![[0.1, 0.2]]).unwrap();
        assert!(flip_average(&wrong, &wrong, &def).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let gts = [0.0, 0.0, 0.0];
        let preds = [10.0, 330.0, 50.0];
        assert_relative_eq!(
            orientation_accuracy(&preds, &gts, 22.5, AngleKind::Azimuthal).unwrap(),
            1.0 / 3.0
        );
        assert_relative_eq!(
            orientation_accuracy(&preds, &gts, 45.0, AngleKind::Azimuthal).unwrap(),
            2.0 / 3.0
        );
        assert_eq!(
            orientation_accuracy(&[22.5], &[0.0], 22.5, AngleKind::Azimuthal).unwrap(),
            1.0
        );
        assert_eq!(
            orientation_accuracy(&[5.0, 7.0], &[5.0, 7.0], 22.5, AngleKind::Polar).unwrap(),
            1.0
        );
        assert!(orientation_accuracy(&[], &[], 22.5, AngleKind::Polar).is_err());
        assert!(orientation_accuracy(&[1.0], &[], 22.5, AngleKind::Polar).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_relative_eq!(
            orientation_mae(&[359.0, 0.0], &[1.0, 358.0], AngleKind::Azimuthal).unwrap(),
            2.0,
            max_relative = 1e-12
        );
        assert_eq!(
            orientation_mae(&[3.0, 90.0], &[3.0, 90.0], AngleKind::Polar).unwrap(),
            0.0
        );
        assert_relative_eq!(
            orientation_mae(&[10.0], &[170.0], AngleKind::Polar).unwrap(),
            160.0
        );
    }

    #[test]
    fn orientation_metrics_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.random_range(1..=20);
            let kind = if rng.random_bool(0.5) {
                AngleKind::Azimuthal
            } else {
                AngleKind::Polar
            };
            let hi = kind.range_deg();
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..hi)).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..hi)).collect();
            let mut errs = Vec::new();
            for i in 0..n {
                let mut d = (p[i] - g[i]).abs();
                if kind == AngleKind::Azimuthal && d > 180.0 {
                    d = 360.0 - d;
                }
                errs.push(d);
            }
            let mae = errs.iter().sum::<f64>() / n as f64;
            assert_relative_eq!(orientation_mae(&p, &g, kind).unwrap(), mae, max_relative = 1e-9);
            let acc = errs.iter().filter(|&&e| e <= 45.0).count() as f64 / n as f64;
            assert_eq!(orientation_accuracy(&p, &g, 45.0, kind).unwrap(), acc);
            let r = orientation_report(&p, &g, kind).unwrap();
            assert_relative_eq!(r.mae_deg, mae, max_relative = 1e-9);
            assert_eq!(r.acc_45, acc);
        }
    }

    #[test]
    fn orientation_accumulators_merge() {
        let mut a = OrientationAccumulator::new(AngleKind::Azimuthal);
        let mut b = OrientationAccumulator::new(AngleKind::Azimuthal);
        a.push(0.0, 10.0).unwrap();
        b.push(0.0, 50.0).unwrap();
        b.push(0.0, 30.0).unwrap();
        a.merge(&b).unwrap();
        let r = a.report().unwrap();
        assert_eq!(r.count, 3);
        assert_relative_eq!(r.acc_22_5, 1.0 / 3.0);
        assert_relative_eq!(r.acc_45, 2.0 / 3.0);
        assert_relative_eq!(r.mae_deg, 30.0);
        assert!(a.merge(&OrientationAccumulator::new(AngleKind::Polar)).is_err());
    }

    fn rec(w: f64, h: f64, b3d: Option<f64>, d: Option<f64>) -> SampleRecord {
        let mut r = SampleRecord::new("r", "toy", BBox::new(0.0, 0.0, w, h).unwrap());
        r.bbox3d_diag_mm = b3d;
        r.camera_distance_px = d;
        r
    }

    #[test]
    fn stats_hand_example() {
        // 3-4-5 triangles scaled to diagonals 100, 200, 300
        let rs = [
            rec(60.0, 80.0, None, None),
            rec(120.0, 160.0, None, None),
            rec(180.0, 240.0, None, None),
        ];
        let s = dataset_stats(&rs).unwrap();
        assert_eq!(s.n, 3);
        assert_relative_eq!(s.b2d.mean, 200.0, max_relative = 1e-12);
        assert_relative_eq!(s.b2d.std, (20000.0f64 / 3.0).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(s.b2d.std, 81.6497, max_relative = 1e-6);
        assert_relative_eq!(s.b2d.min, 100.0, max_relative = 1e-12);
        assert_relative_eq!(s.b2d.max, 300.0, max_relative = 1e-12);
        assert!(s.b3d.is_none() && s.d.is_none());
    }

    #[test]
    fn stats_single_record_and_empty() {
        let s = dataset_stats(&[rec(3.0, 4.0, Some(1700.0), Some(900.0))]).unwrap();
        assert_eq!(s.b2d.std, 0.0);
        assert_eq!(s.b2d.min, s.b2d.mean);
        assert_eq!(s.b2d.max, s.b2d.mean);
        assert_eq!(s.b3d.unwrap().mean, 1700.0);
        assert!(matches!(dataset_stats(&[]), Err(Error::Empty(_))));
    }

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn stats_match_one_and_two_pass_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(1..=20);
            let rs: Vec<SampleRecord> = (0..n)
                .map(|_| {
                    rec(
                        rng.random_range(10.0..500.0),
                        rng.random_range(10.0..500.0),
                        rng.random_bool(0.7).then(|| rng.random_range(1000.0..2500.0)),
                        Some(rng.random_range(100.0..5000.0)),
                    )
                })
                .collect();
            let s = dataset_stats(&rs).unwrap();
            let diag: Vec<f64> = rs
                .iter()
                .map(|r| (r.bbox.w.powi(2) + r.bbox.h.powi(2)).sqrt())
                .collect();
            let (m, sd) = two_pass(&diag);
            assert_relative_eq!(s.b2d.mean, m, max_relative = 1e-9);
            assert_relative_eq!(s.b2d.std, sd, max_relative = 1e-9, epsilon = 1e-9);
            // one-pass sum / sum of squares oracle
            let sum: f64 = diag.iter().sum();
            let sq: f64 = diag.iter().map(|x| x * x).sum();
            let var1 = (sq / n as f64 - (sum / n as f64).powi(2)).max(0.0);
            assert_relative_eq!(s.b2d.std, var1.sqrt(), max_relative = 1e-6, epsilon = 1e-6);
            let b3: Vec<f64> = rs.iter().filter_map(|r| r.bbox3d_diag_mm).collect();
            match s.b3d {
                None => assert!(b3.is_empty()),
                Some(f) => {
                    let (m, sd) = two_pass(&b3);
                    assert_eq!(f.n, b3.len());
                    assert_relative_eq!(f.mean, m, max_relative = 1e-9);
                    assert_relative_eq!(f.std, sd, max_relative = 1e-9, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn histogram_examples() {
        assert_eq!(
            orientation_histogram(&[0.0, 90.0, 180.0, 270.0], 4).unwrap(),
            vec![1, 1, 1, 1]
        );
        assert_eq!(orientation_histogram(&[360.0], 4).unwrap(), vec![1, 0, 0, 0]);
        assert_eq!(
            orientation_histogram(&[359.999_999_999], 4).unwrap(),
            vec![0, 0, 0, 1]
        );
        assert!(orientation_histogram(&[1.0], 0).is_err());
        assert_eq!(
            histogram_csv(&[2, 0, 1, 0]),
            "bin_start_deg,count\n0,2\n90,0\n180,1\n270,0\n"
        );
    }

    proptest! {
        #[test]
        fn nested_thresholds(pairs in prop::collection::vec((0.0..360.0f64, 0.0..360.0f64), 1..40)) {
            let (p, g): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = orientation_accuracy(&p, &g, 22.5, AngleKind::Azimuthal).unwrap();
            let b = orientation_accuracy(&p, &g, 45.0, AngleKind::Azimuthal).unwrap();
            prop_assert!(a <= b);
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
            let mae = orientation_mae(&p, &g, AngleKind::Azimuthal).unwrap();
            prop_assert!(mae <= 180.0);
            prop_assert_eq!(orientation_mae(&p, &p, AngleKind::Azimuthal).unwrap(), 0.0);
        }

        #[test]
        fn mpjpe_symmetric_and_flip_invariant(seed in any::<u64>()) {
            let def = SkeletonDef::common17();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mk = |rng: &mut ChaCha8Rng| pose((0..17).map(|_| [rng.random(), rng.random(), rng.random()]).collect());
            let p: Vec<_> = (0..4).map(|_| mk(&mut rng)).collect();
            let g: Vec<_> = (0..4).map(|_| mk(&mut rng)).collect();
            let ab = mpjpe(&p, &g, 1000.0).unwrap();
            prop_assert!((ab - mpjpe(&g, &p, 1000.0).unwrap()).abs() <= 1e-12 * ab);
            let pf: Vec<_> = p.iter().map(|x| flip_pose(x, &def).unwrap()).collect();
            let gf: Vec<_> = g.iter().map(|x| flip_pose(x, &def).unwrap()).collect();
            prop_assert!((ab - mpjpe(&pf, &gf, 1000.0).unwrap()).abs() <= 1e-12 * ab);
        }

        #[test]
        fn histogram_counts_sum(angles in prop::collection::vec(-720.0..720.0f64, 0..100), bins in 1usize..50) {
            let h = orientation_histogram(&angles, bins).unwrap();
            prop_assert_eq!(h.iter().sum::<usize>(), angles.len());
        }

        #[test]
        fn field_merge_is_associative(xs in prop::collection::vec(-1e3..1e3f64, 1..30), cut1 in 0usize..30, cut2 in 0usize..30) {
            let (c1, c2) = (cut1.min(xs.len()), cut2.min(xs.len()));
            let (lo, hi) = (c1.min(c2), c1.max(c2));
            let part = |s: &[f64]| { let mut a = FieldAccumulator::default(); for &x in s { a.push(x) } a };
            let (a, b, c) = (part(&xs[..lo]), part(&xs[lo..hi]), part(&xs[hi..]));
            let mut left = a; left.merge(&b); left.merge(&c);
            let mut bc = b; bc.merge(&c);
            let mut right = a; right.merge(&bc);
            let whole = part(&xs).finish().unwrap();
            for s in [left.finish().unwrap(), right.finish().unwrap()] {
                prop_assert_eq!(s.n, whole.n);
                prop_assert!((s.mean - whole.mean).abs() <= 1e-9 * (1.0 + whole.mean.abs()));
                prop_assert!((s.std - whole.std).abs() <= 1e-9 * (1.0 + whole.std));
                prop_assert_eq!(s.min, whole.min);
                prop_assert_eq!(s.max, whole.max);
            }
        }
    }
}
