//! Shared fixtures for the benchmarks. Everything is seeded so runs compare.

use poseheads::records::{OrientationLabel, SampleRecord};
use poseheads::skeleton::{BBox, Pose, Pose3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn logits(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-3.0..3.0)).collect()
}

pub fn unit_values(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(0.0..1.0)).collect()
}

pub fn poses(n: usize, joints: usize, seed: u64) -> Vec<Pose3D> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let coords = (0..joints)
                .map(|_| std::array::from_fn(|_| r.random_range(0.0..1.0)))
                .collect();
            Pose::new(coords, vec![1.0; joints], vec![true; joints]).expect("well-formed pose")
        })
        .collect()
}

pub fn records(n: usize, seed: u64) -> Vec<SampleRecord> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let bbox = BBox::new(0.0, 0.0, r.random_range(10.0..400.0), r.random_range(10.0..800.0))
                .expect("positive box");
            let mut s = SampleRecord::new(format!("r{i}"), "bench", bbox);
            s.bbox3d_diag_mm = Some(r.random_range(800.0..2500.0));
            s.camera_distance_px = r.random_bool(0.5).then(|| r.random_range(100.0..20000.0));
            s.body = Some(OrientationLabel {
                theta_deg: Some(r.random_range(0.0..180.0)),
                phi_deg: Some(r.random_range(0.0..360.0)),
            });
            s
        })
        .collect()
}
