use std::path::Path;

use poseheads::demo::{demo_lr_find, loss_curve_csv, lr_find_csv, train_demo as run_demo, DemoConfig};
use poseheads::{Error, Result};

use crate::{write_file, LrFindArgs, TrainDemoArgs};

pub const REPORT_FILE: &str = "report.json";
pub const CURVE_FILE: &str = "loss_curve.csv";

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// TOML config, or a JSON run report (its `config` echo is used) so that a
/// finished run can be repeated from its own output.
pub fn load_config(path: Option<&Path>) -> Result<DemoConfig> {
    let Some(path) = path else {
        return Ok(DemoConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
    let cfg = if path.extension().is_some_and(|e| e == "json") {
        let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if let Some(c) = v.get_mut("config") {
            v = c.take();
        }
        serde_json::from_value(v).map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })?
    } else {
        toml::from_str(&text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| line_of(&text, s.start)),
            message: e.message().to_string(),
        })?
    };
    Ok(cfg)
}

pub fn train_demo(args: &TrainDemoArgs, json: bool) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.steps {
        cfg.steps = n;
    }
    cfg.validate()?;
    let run = run_demo(&cfg)?;
    let mut report = run.report;
    let e = &report.eval;
    for (v, what) in [
        (e.mpjpe_norm, "demo mpjpe"),
        (e.body_phi_mae_deg, "demo body azimuth MAE"),
        (e.loss_sum, "demo held-out loss"),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(what));
        }
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::from(e).at_path(&args.out))?;
    write_file(&args.out.join(CURVE_FILE), &loss_curve_csv(&run.curve))?;
    report.loss_curve = Some(CURVE_FILE.to_string());
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&args.out.join(REPORT_FILE), &text)?;
    if json {
        println!("{text}");
        return Ok(());
    }
    let e = &report.eval;
    println!("steps                {}", report.steps);
    println!("params               {}", report.params);
    println!("held-out samples     {}", e.samples);
    println!("mpjpe (normalized)   {:.5}", e.mpjpe_norm);
    println!("2D joint error       {:.5}", e.joint2d_err);
    println!("body phi MAE [deg]   {:.3}", e.body_phi_mae_deg);
    println!(
        "body phi Acc 22.5/45 {:.4} / {:.4}",
        e.body_phi_acc_22_5, e.body_phi_acc_45
    );
    println!("body theta MAE [deg] {:.3}", e.body_theta_mae_deg);
    println!("head phi MAE [deg]   {:.3}", e.head_phi_mae_deg);
    println!("visibility accuracy  {:.4}", e.visibility_acc);
    println!("held-out loss sum    {:.3e}", e.loss_sum);
    println!("wall clock [s]       {:.1}", report.wall_clock_s);
    println!("report               {}", args.out.join(REPORT_FILE).display());
    Ok(())
}

pub fn lr_find(args: &LrFindArgs, json: bool) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    cfg.validate()?;
    let r = demo_lr_find(&cfg)?;
    write_file(&args.out, &lr_find_csv(&r))?;
    if json {
        println!(
            "{}",
            serde_json::json!({
                "suggested_lr": r.suggestion,
                "diverged_at": r.diverged_at,
                "steps": r.lrs.len(),
                "curve": args.out,
            })
        );
        return Ok(());
    }
    match r.suggestion {
        Some(lr) => println!("suggested lr  {lr:.3e}"),
        None => println!("suggested lr  none (smoothed loss never decreased)"),
    }
    match r.diverged_at {
        Some(i) => println!("diverged at   step {i} (lr {:.3e})", cfg.lr_find.sweep()[i]),
        None => println!("diverged at   -"),
    }
    println!("curve         {}", args.out.display());
    Ok(())
}
