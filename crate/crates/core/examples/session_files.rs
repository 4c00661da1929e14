//! Write a synthetic session and a calibration report to disk, read both back and
//! check they are unchanged.

use mocap_calib::synth::{generate, SynthConfig};
use mocap_calib::{calibrate, load_report, load_session, save_report, save_session, RansacConfig, RefineConfig};

fn main() -> mocap_calib::Result<()> {
    let dir = std::env::temp_dir().join(format!("mocap-calib-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let session_path = dir.join("session.json");
    let report_path = dir.join("report.json");

    let session = generate(&SynthConfig { n_frames: 50, noise_sigma: 1.0, invalid_fraction: 0.1, seed: 2, ..Default::default() })?;
    save_session(&session.data, &session_path)?;
    let loaded = load_session(&session_path)?;
    println!("session: {} bytes, round trip equal: {}", std::fs::metadata(&session_path)?.len(), loaded.data == session.data);
    println!("valid correspondences: {}/{}", loaded.set.valid_count(), {
        let d = loaded.set.dims();
        d.cameras * d.frames * d.joints
    });

    let report = calibrate(&loaded.set, &RansacConfig::default(), &RefineConfig::default(), loaded.gt_extrinsic())?;
    save_report(&report, &report_path)?;
    let back = load_report(&report_path)?;
    println!("report: round trip equal: {}", back == report);
    println!("{}", std::fs::read_to_string(&report_path)?.lines().take(12).collect::<Vec<_>>().join("\n"));

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
