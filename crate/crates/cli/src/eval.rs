use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use poseheads::metrics::{
    dataset_stats, flip_average, histogram_csv, mpjpe, mpjpe_by_action, orientation_histogram,
    orientation_report, DatasetStats, FieldStats, MetricReport, PoseReport,
};
use poseheads::orientation::AngleKind;
use poseheads::records::{read_records, OrientationTarget, SampleRecord};
use poseheads::skeleton::{Pose3D, SkeletonDef};
use poseheads::{Error, Result};

use crate::{write_file, Angle, EvalOrientArgs, EvalPoseArgs, HistArgs};

/// Suffix marking the prediction made on the horizontally flipped input.
pub const FLIPPED_SUFFIX: &str = ":flipped";

fn record_err(id: &str, message: impl Into<String>) -> Error {
    Error::Record {
        id: id.to_string(),
        message: message.into(),
    }
}

fn index_by_id(records: &[SampleRecord]) -> Result<HashMap<&str, &SampleRecord>> {
    let mut map = HashMap::with_capacity(records.len());
    for r in records {
        if map.insert(r.id.as_str(), r).is_some() {
            return Err(record_err(&r.id, "duplicate id"));
        }
    }
    Ok(map)
}

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn resolve_skeleton(name: Option<&str>, joints: usize) -> Result<SkeletonDef> {
    match name {
        Some(n) => match SkeletonDef::builtin(n) {
            Some(def) => Ok(def),
            None => SkeletonDef::load(n),
        },
        None => {
            for def in [SkeletonDef::common17(), SkeletonDef::extended26()] {
                if def.len() == joints {
                    return Ok(def);
                }
            }
            Err(Error::Skeleton(format!(
                "no builtin skeleton has {joints} joints; pass --skeleton"
            )))
        }
    }
}

pub fn stats(path: &Path, json: bool) -> Result<()> {
    let records = read_records(path)?;
    let mut groups: BTreeMap<&str, Vec<SampleRecord>> = BTreeMap::new();
    for r in &records {
        groups.entry(r.dataset.as_str()).or_default().push(r.clone());
    }
    let mut table: Vec<(String, DatasetStats)> = Vec::new();
    for (name, rs) in &groups {
        table.push((name.to_string(), dataset_stats(rs)?));
    }
    if groups.len() > 1 {
        table.push(("all".to_string(), dataset_stats(&records)?));
    }
    if table.is_empty() {
        return Err(Error::Empty("record set"));
    }
    if json {
        print_json(&table.iter().cloned().collect::<BTreeMap<_, _>>());
        return Ok(());
    }
    let field = |s: &DatasetStats, row: usize| -> String {
        let pick = |f: Option<FieldStats>, k: usize| match f {
            None => String::new(),
            Some(f) => format!("{:.1}", [f.mean, f.std, f.min, f.max][k]),
        };
        match row {
            0 => s.n.to_string(),
            1..=4 => pick(Some(s.b2d), row - 1),
            5..=8 => pick(s.b3d, row - 5),
            _ => pick(s.d, row - 9),
        }
    };
    let labels = [
        "n",
        "b2d mean [px]",
        "b2d std [px]",
        "b2d min [px]",
        "b2d max [px]",
        "b3d mean [mm]",
        "b3d std [mm]",
        "b3d min [mm]",
        "b3d max [mm]",
        "d mean [px]",
        "d std [px]",
        "d min [px]",
        "d max [px]",
    ];
    print!("{:<14}", "");
    for (name, _) in &table {
        print!(" {name:>12}");
    }
    println!();
    for (row, label) in labels.iter().enumerate() {
        print!("{label:<14}");
        for (_, s) in &table {
            print!(" {:>12}", field(s, row));
        }
        println!();
    }
    Ok(())
}

/// Pairs up ground truth carrying a 3D pose with its prediction,
/// flip-averaged when asked.
fn pose_pairs(
    args: &EvalPoseArgs,
    gt: &[SampleRecord],
    pred: &HashMap<&str, &SampleRecord>,
) -> Result<(Vec<Pose3D>, Vec<Pose3D>, Vec<String>)> {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut actions = Vec::new();
    let mut skeleton: Option<SkeletonDef> = None;
    for g in gt {
        let Some(g3) = &g.pose3d else { continue };
        let p = pred
            .get(g.id.as_str())
            .ok_or_else(|| record_err(&g.id, "no prediction with this id"))?;
        let p3 = p
            .pose3d
            .as_ref()
            .ok_or_else(|| record_err(&g.id, "prediction has no pose3d"))?;
        let p3 = if args.flip_test {
            let fid = format!("{}{FLIPPED_SUFFIX}", g.id);
            let f3 = pred
                .get(fid.as_str())
                .and_then(|f| f.pose3d.as_ref())
                .ok_or_else(|| record_err(&g.id, format!("flip test needs a pose3d record {fid:?}")))?;
            if skeleton.is_none() {
                skeleton = Some(resolve_skeleton(args.skeleton.as_deref(), p3.len())?);
            }
            flip_average(p3, f3, skeleton.as_ref().expect("set above"))?
        } else {
            p3.clone()
        };
        if args.by_action {
            let a = g
                .action
                .as_ref()
                .ok_or_else(|| record_err(&g.id, "--by-action needs an action tag"))?;
            actions.push(a.clone());
        }
        preds.push(p3);
        gts.push(g3.clone());
    }
    Ok((preds, gts, actions))
}

pub fn eval_pose(args: &EvalPoseArgs, json: bool) -> Result<()> {
    let gt = read_records(&args.gt)?;
    let pred_records = read_records(&args.pred)?;
    let pred = index_by_id(&pred_records)?;
    let (preds, gts, actions) = pose_pairs(args, &gt, &pred)?;
    if gts.is_empty() {
        return Err(Error::Empty("ground-truth records with pose3d"));
    }
    let mpjpe_mm = finite(mpjpe(&preds, &gts, args.half_range_mm)?, "mpjpe")?;
    let by_action = if args.by_action {
        let tags: Vec<&str> = actions.iter().map(String::as_str).collect();
        let table = mpjpe_by_action(&tags, &preds, &gts, args.half_range_mm)?;
        finite(table.average_mm, "per-action mpjpe average")?;
        Some(table)
    } else {
        None
    };
    let report = PoseReport {
        mpjpe_mm,
        samples: gts.len(),
        by_action,
        flip_test: args.flip_test,
    };
    if json {
        print_json(&MetricReport {
            pose: Some(report),
            orientation: None,
        });
        return Ok(());
    }
    println!("samples      {}", report.samples);
    println!("flip test    {}", if report.flip_test { "on" } else { "off" });
    println!("MPJPE [mm]   {:.2}", report.mpjpe_mm);
    if let Some(t) = &report.by_action {
        println!();
        println!("{:<20} {:>8} {:>12}", "action", "samples", "MPJPE [mm]");
        for (a, e) in &t.per_action {
            println!("{a:<20} {:>8} {:>12.2}", e.samples, e.mpjpe_mm);
        }
        println!("{:<20} {:>8} {:>12.2}", "avg (unweighted)", "", t.average_mm);
    }
    Ok(())
}

fn angle_of(r: &SampleRecord, target: OrientationTarget, angle: Angle) -> Option<f64> {
    let o = r.orientation(target)?;
    match angle {
        Angle::Phi => o.phi_deg,
        Angle::Theta => o.theta_deg,
    }
}

pub fn eval_orient(args: &EvalOrientArgs, json: bool) -> Result<()> {
    let gt = read_records(&args.gt)?;
    let pred_records = read_records(&args.pred)?;
    let pred = index_by_id(&pred_records)?;
    let target = OrientationTarget::from(args.target);
    let kind = match args.angle {
        Angle::Phi => AngleKind::Azimuthal,
        Angle::Theta => AngleKind::Polar,
    };
    let mut ps = Vec::new();
    let mut gs = Vec::new();
    for g in &gt {
        let Some(ga) = angle_of(g, target, args.angle) else {
            continue;
        };
        let p = pred
            .get(g.id.as_str())
            .ok_or_else(|| record_err(&g.id, "no prediction with this id"))?;
        let pa = angle_of(p, target, args.angle)
            .ok_or_else(|| record_err(&g.id, "prediction lacks the evaluated angle"))?;
        ps.push(pa);
        gs.push(ga);
    }
    if gs.is_empty() {
        return Err(Error::Empty("ground-truth records with the evaluated angle"));
    }
    let report = orientation_report(&ps, &gs, kind)?;
    finite(report.mae_deg, "orientation MAE")?;
    if json {
        print_json(&MetricReport {
            pose: None,
            orientation: Some(report),
        });
        return Ok(());
    }
    println!("samples        {}", report.count);
    println!("Acc(22.5deg)   {:.4}", report.acc_22_5);
    println!("Acc(45deg)     {:.4}", report.acc_45);
    println!("MAE [deg]      {:.4}", report.mae_deg);
    Ok(())
}

pub fn hist(args: &HistArgs) -> Result<()> {
    let records = read_records(&args.records)?;
    let target = OrientationTarget::from(args.target);
    let angles: Vec<f64> = records
        .iter()
        .filter_map(|r| angle_of(r, target, args.angle))
        .collect();
    let counts = orientation_histogram(&angles, args.bins)?;
    write_file(&args.out, &histogram_csv(&counts))?;
    log::info!(
        "{} angles into {} bins -> {}",
        angles.len(),
        args.bins,
        args.out.display()
    );
    Ok(())
}
