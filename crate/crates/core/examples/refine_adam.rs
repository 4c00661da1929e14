//! Gradient refinement from a perturbed pose, printing the loss and learning rate trace.

use mocap_calib::geometry::{euler_to_rotation, rotation_geodesic_deg};
use mocap_calib::refine::{cosine_lr, refine_pose};
use mocap_calib::synth::{generate, SynthConfig};
use mocap_calib::{RefineConfig, RigidTransform};
use nalgebra::Vector3;

fn main() -> mocap_calib::Result<()> {
    let session = generate(&SynthConfig { n_frames: 100, noise_sigma: 0.5, seed: 12, ..Default::default() })?;
    let gt = session.gt_extrinsic;
    let init = RigidTransform::new(
        euler_to_rotation(0.02, -0.01, 0.015) * gt.rotation(),
        gt.translation() + Vector3::new(0.03, -0.04, 0.02),
    )?;

    let cfg = RefineConfig { steps: 600, lr_rotation: 1e-2, lr_translation: 1e-2, fine_stride: 1, ..Default::default() };
    let out = refine_pose(&session.set, &init, &cfg, None)?;

    println!("{:>6} {:>12} {:>10}", "step", "loss px^2", "lr_rot");
    for step in (0..=cfg.steps).step_by(50) {
        let lr = cosine_lr(step.min(cfg.steps - 1), cfg.steps, cfg.lr_rotation, cfg.cosine_floor);
        println!("{step:>6} {:>12.4e} {lr:>10.2e}", out.loss_trace[step]);
    }
    println!("best step {} with loss {:.4e}", out.best_step, out.best_loss);
    for (name, t) in [("init", &init), ("refined", &out.transform)] {
        println!(
            "{name:>8}: rotation error {:.4} deg, translation error {:.3} mm",
            rotation_geodesic_deg(t.rotation(), gt.rotation()),
            1e3 * (t.translation() - gt.translation()).norm()
        );
    }
    Ok(())
}
