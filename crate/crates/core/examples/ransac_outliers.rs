//! RANSAC-P3P on a session where a fraction of the 2D keypoints are garbage.
//!
//! cargo run --release --example ransac_outliers -- [outlier_fraction] [iterations]

use mocap_calib::geometry::rotation_geodesic_deg;
use mocap_calib::synth::{generate, SynthConfig};
use mocap_calib::{run_ransac, RansacConfig};

fn main() -> mocap_calib::Result<()> {
    let mut args = std::env::args().skip(1);
    let outliers: f64 = args.next().map_or(0.3, |s| s.parse().expect("outlier fraction"));
    let iterations: usize = args.next().map_or(500, |s| s.parse().expect("iterations"));

    let session = generate(&SynthConfig {
        n_frames: 100,
        noise_sigma: 1.0,
        outlier_fraction: outliers,
        seed: 4,
        ..Default::default()
    })?;
    let cfg = RansacConfig { tau: 4.0, iterations, ..Default::default() };
    let h = run_ransac(&session.set, &cfg)?;

    let gt = &session.gt_extrinsic;
    println!("best hypothesis from iteration {}, solution {}", h.source.0, h.source.1);
    println!("inliers {}/{} ({:.1}%)", h.inlier_count, h.scored_count, 100.0 * h.inlier_ratio());
    println!("mean inlier residual {:.3} px", h.mean_inlier_residual);
    println!("rotation error {:.4} deg", rotation_geodesic_deg(h.transform.rotation(), gt.rotation()));
    println!("translation error {:.2} mm", 1e3 * (h.transform.translation() - gt.translation()).norm());
    Ok(())
}
