use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use poseheads::metrics::{dataset_stats, mpjpe, orientation_report};
use poseheads::orientation::AngleKind;
use poseheads::records::{parse_record, write_records};
use poseheads_bench::{poses, records, unit_values};

fn pose_metrics(c: &mut Criterion) {
    let (pred, gt) = (poses(1000, 17, 1), poses(1000, 17, 2));
    c.bench_function("mpjpe/1000x17", |b| {
        b.iter(|| mpjpe(black_box(&pred), black_box(&gt), 1000.0).unwrap())
    });

    let p: Vec<f64> = unit_values(10_000, 3).iter().map(|v| v * 360.0).collect();
    let g: Vec<f64> = unit_values(10_000, 4).iter().map(|v| v * 360.0).collect();
    c.bench_function("orientation_report/10k", |b| {
        b.iter(|| orientation_report(black_box(&p), black_box(&g), AngleKind::Azimuthal).unwrap())
    });
}

fn record_metrics(c: &mut Criterion) {
    let rs = records(10_000, 5);
    c.bench_function("dataset_stats/10k", |b| {
        b.iter(|| dataset_stats(black_box(&rs)).unwrap())
    });

    let mut buf = Vec::new();
    write_records(&mut buf, &rs[..1000]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    c.bench_function("parse_record/1000", |b| {
        b.iter(|| {
            for line in text.lines() {
                black_box(parse_record(line).unwrap());
            }
        })
    });
}

criterion_group!(benches, pose_metrics, record_metrics);
criterion_main!(benches);
