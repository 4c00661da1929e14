//! Solve a single minimal problem: three MoCap points seen by one camera.

use mocap_calib::geometry::euler_to_rotation;
use mocap_calib::{solve_p3p, MinimalProblem, RigidTransform};
use nalgebra::Vector3;

fn main() -> mocap_calib::Result<()> {
    let truth = RigidTransform::new(euler_to_rotation(0.3, -0.2, 0.7), Vector3::new(0.1, -0.2, 4.0))?;
    let world = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)];
    let bearings = world.map(|w| truth.apply(&w).normalize());

    let solutions = solve_p3p(&MinimalProblem::new(world, bearings)?)?;
    println!("{} candidate pose(s)", solutions.len());
    for (l, s) in solutions.iter().enumerate() {
        let rot_err = (s.rotation() - truth.rotation()).norm();
        let trans_err = (s.translation() - truth.translation()).norm();
        println!("  #{l}: t = {:.6?}  |dR| = {rot_err:.1e}  |dt| = {trans_err:.1e}", s.translation().as_slice());
    }
    Ok(())
}
