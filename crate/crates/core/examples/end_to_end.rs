//! Generate a noisy synthetic session, calibrate it, and compare against ground truth.
//!
//! cargo run --release --example end_to_end -- [seed] [sigma_px] [outlier_fraction]

use mocap_calib::{calibrate, generate, RansacConfig, RefineConfig, SynthConfig};

fn main() -> mocap_calib::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let sigma: f64 = args.next().map_or(2.0, |s| s.parse().expect("sigma"));
    let outliers: f64 = args.next().map_or(0.2, |s| s.parse().expect("outlier fraction"));

    let session = generate(&SynthConfig {
        noise_sigma: sigma,
        outlier_fraction: outliers,
        seed,
        ..Default::default()
    })?;
    println!("labels: {:?}", session.label_counts());

    let ransac = RansacConfig { seed, ..Default::default() };
    let report = calibrate(&session.set, &ransac, &RefineConfig::default(), Some(&session.gt_extrinsic))?;

    let clean_mpjpe = |t| {
        let (s, n) = session
            .set
            .entries()
            .iter()
            .enumerate()
            .filter(|(id, _)| session.entry_label(*id).is_uncorrupted())
            .filter_map(|(_, e)| mocap_calib::ransac::residual(e, session.set.camera(e), t).ok())
            .fold((0.0, 0usize), |(s, n), (r, _)| (s + r.norm(), n + 1));
        s / n as f64
    };

    println!("inlier ratio        {:.4}", report.inlier_ratio);
    println!("mpjpe gt            {:.4} px", report.mpjpe_gt.unwrap());
    println!("mpjpe init          {:.4} px", report.mpjpe_init);
    println!("mpjpe refined       {:.4} px", report.mpjpe_refined);
    println!("uncorrupted init    {:.4} px", clean_mpjpe(&report.init_transform));
    println!("uncorrupted refined {:.4} px", clean_mpjpe(&report.transform));
    println!("uncorrupted gt      {:.4} px", clean_mpjpe(&session.gt_extrinsic));
    println!("rotation error      {:.3e} deg", report.rotation_error_deg.unwrap());
    println!("translation error   {:.3e} m", report.translation_error_m.unwrap());
    println!("refinement rejected {}", report.refinement_rejected);
    println!("time                {:.1} ms ({:.3} ms/frame)", report.timing.total_ms, report.timing.ms_per_frame);
    Ok(())
}
