//! ZYX Euler angles: round trip away from and at gimbal lock.

use mocap_calib::geometry::{euler_to_rotation, rotation_to_euler};
use std::f64::consts::FRAC_PI_2;

fn main() {
    for (a, b, g) in [(0.3, -0.4, 1.2), (1.0, FRAC_PI_2, 0.5), (-0.7, -FRAC_PI_2, 0.2)] {
        let r = euler_to_rotation(a, b, g);
        let (a2, b2, g2) = rotation_to_euler(&r);
        let err = (euler_to_rotation(a2, b2, g2) - r).norm();
        println!("in  ({a:+.4}, {b:+.4}, {g:+.4})");
        println!("out ({a2:+.4}, {b2:+.4}, {g2:+.4})  rotation mismatch {err:.1e}");
    }
}
