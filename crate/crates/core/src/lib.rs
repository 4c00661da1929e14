//! Extrinsic calibration between a motion-capture (MoCap) coordinate frame and the
//! world frame of one or more calibrated RGB cameras, from noisy 3D–2D human joint
//! correspondences.
//!
//! The pipeline is coarse-to-fine:
//!
//! 1. [`ransac::run_ransac`] samples three joints seen by one camera in one frame,
//!    solves the minimal pose problem with [`p3p::solve_p3p`], and keeps the
//!    MoCap→world hypothesis with the most reprojection inliers;
//! 2. [`refine::refine_pose`] minimizes the mean squared reprojection error over
//!    Euler angles and translation with analytic gradients, Adam and a cosine
//!    learning-rate schedule;
//! 3. [`pipeline::calibrate`] ties both together and reports the 2D MPJPE of
//!    each stage.
//!
//! [`synth`] generates sessions with known ground truth, [`io`] reads and writes
//! the session and report files, and [`cli`] backs the `mocap-calib` binary.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod io;
pub mod p3p;
pub mod pipeline;
pub mod ransac;
pub mod refine;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{CameraModel, DistortionCoeffs, EulerPose, Projection, RigidTransform};
pub use io::{load_report, load_session, save_report, save_session, LoadedSession, SessionData};
pub use p3p::{solve_p3p, MinimalProblem, P3PSolutionSet};
pub use pipeline::{calibrate, compute_mpjpe, CalibrationReport};
pub use ransac::{run_ransac, Correspondence, CorrespondenceSet, Dims, Hypothesis, RansacConfig};
pub use refine::{refine_pose, RefineConfig};
pub use synth::{generate, SynthConfig, SynthSession};
