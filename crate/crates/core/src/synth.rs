//! Synthetic sessions with known ground truth.
//!
//! Cameras sit on a horizontal circle (world is z-up) and look at the capture
//! volume. A root point random-walks inside a square of side `motion_extent`,
//! and each joint is a fixed offset (rotated by a slowly drifting heading and
//! jittered per frame) around it. The world points are mapped into the MoCap
//! frame with the inverse of `gt_extrinsic`, so projecting through
//! `gt_extrinsic` reproduces the clean observations exactly.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, rot_z, CameraModel, DistortionCoeffs, RigidTransform};
use crate::io::SessionData;
use crate::ransac::CorrespondenceSet;

const CAMERA_HEIGHT: f64 = 1.4;
const TARGET_HEIGHT: f64 = 1.0;
const ROOT_HEIGHT: f64 = 1.0;
const ROOT_STEP: f64 = 0.04;
const HEADING_STEP: f64 = 0.05;
const JOINT_JITTER: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_cameras: usize,
    pub n_joints: usize,
    pub n_frames: usize,
    /// Meters.
    pub rig_radius: f64,
    pub focal_px: f64,
    pub image_size: (u32, u32),
    /// Side of the square the root walks in, meters.
    pub motion_extent: f64,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub invalid_fraction: f64,
    /// `None` draws a rotation uniformly on SO(3) and a translation in `[-1, 1]³` m.
    pub gt_extrinsic: Option<RigidTransform>,
    pub distortion: Option<DistortionCoeffs>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_cameras: 2,
            n_joints: 17,
            n_frames: 300,
            rig_radius: 4.0,
            focal_px: 1000.0,
            image_size: (1280, 720),
            motion_extent: 1.5,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            invalid_fraction: 0.0,
            gt_extrinsic: None,
            distortion: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cameras == 0 || self.n_joints < 3 || self.n_frames == 0 {
            return Err(Error::InvalidConfig(
                "need at least 1 camera, 3 joints and 1 frame".into(),
            ));
        }
        for (name, f) in [
            ("outlier_fraction", self.outlier_fraction),
            ("invalid_fraction", self.invalid_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise_sigma must be non-negative".into()));
        }
        if !(self.focal_px > 0.0) || self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::InvalidConfig("focal length and image size must be positive".into()));
        }
        if !(self.motion_extent > 0.0) {
            return Err(Error::InvalidConfig("motion_extent must be positive".into()));
        }
        if self.rig_radius <= self.motion_extent {
            return Err(Error::InfeasibleRig {
                rig_radius: self.rig_radius,
                motion_extent: self.motion_extent,
            });
        }
        Ok(())
    }
}

/// How an observation was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    /// Exact projection.
    Clean,
    /// Exact projection plus isotropic Gaussian noise.
    Gaussian,
    /// Uniform draw over the image rectangle.
    Outlier,
    /// Marked invalid (randomly or because the point is behind the camera).
    Invalid,
}

impl Label {
    pub fn is_uncorrupted(self) -> bool {
        matches!(self, Label::Clean | Label::Gaussian)
    }
}

#[derive(Debug, Clone)]
pub struct SynthSession {
    pub data: SessionData,
    pub set: CorrespondenceSet,
    pub gt_extrinsic: RigidTransform,
    /// Dense `[camera][frame][joint]` labels.
    pub labels: Vec<Vec<Vec<Label>>>,
}

impl SynthSession {
    /// Label of a set entry.
    pub fn entry_label(&self, id: usize) -> Label {
        let e = &self.set.entries()[id];
        self.labels[e.cam_index][e.frame_index][e.joint_index]
    }

    pub fn label_counts(&self) -> [(Label, usize); 4] {
        let mut counts = [
            (Label::Clean, 0),
            (Label::Gaussian, 0),
            (Label::Outlier, 0),
            (Label::Invalid, 0),
        ];
        for l in self.labels.iter().flatten().flatten() {
            counts.iter_mut().find(|(k, _)| k == l).unwrap().1 += 1;
        }
        counts
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Uniform rotation on SO(3) (normalized Gaussian quaternion).
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(quat).to_rotation_matrix().into_inner();
        }
    }
}

/// Camera at `center` looking at `target`, with image y pointing down (world z-up).
pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let forward = (target - center).normalize();
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    (rot, -(rot * center))
}

/// Cameras sit at multiples of `2π / max(N, 4)` around the circle, so small rigs get
/// roughly orthogonal views instead of facing each other.
fn rig(cfg: &SynthConfig) -> Result<Vec<CameraModel>> {
    let (w, h) = cfg.image_size;
    let spacing = 2.0 * PI / cfg.n_cameras.max(4) as f64;
    (0..cfg.n_cameras)
        .map(|i| {
            let phi = spacing * i as f64 + 0.3;
            let center = Vector3::new(cfg.rig_radius * phi.cos(), cfg.rig_radius * phi.sin(), CAMERA_HEIGHT);
            let (rot, trans) = look_at(&center, &Vector3::new(0.0, 0.0, TARGET_HEIGHT));
            Ok(CameraModel::pinhole(
                cfg.focal_px,
                cfg.focal_px,
                w as f64 / 2.0,
                h as f64 / 2.0,
                rot,
                trans,
            )?
            .with_distortion(cfg.distortion)
            .with_image_size(Some(cfg.image_size)))
        })
        .collect()
}

/// World-frame joint trajectories, `[frame][joint]`.
fn motion(cfg: &SynthConfig) -> Vec<Vec<Vector3<f64>>> {
    let mut rng = stream(cfg.seed, 1);
    let half = cfg.motion_extent / 2.0;
    // Offsets scale with the volume so every joint stays inside the rig.
    let body = (0.3 * cfg.motion_extent).min(0.3);
    let offsets: Vec<Vector3<f64>> = (0..cfg.n_joints)
        .map(|_| {
            Vector3::new(
                rng.random_range(-body..body),
                rng.random_range(-body..body),
                rng.random_range(-0.8..0.7),
            )
        })
        .collect();
    let jitter = Normal::new(0.0, JOINT_JITTER).unwrap();
    let step = Normal::new(0.0, ROOT_STEP).unwrap();
    let turn = Normal::new(0.0, HEADING_STEP).unwrap();

    let mut root = Vector3::new(0.0, 0.0, ROOT_HEIGHT);
    let mut heading = rng.random_range(-PI..PI);
    let limit = (half - body).max(0.0);
    (0..cfg.n_frames)
        .map(|t| {
            // Per-frame substream: frame t's draws do not depend on other frames.
            let mut frng = stream(cfg.seed, 1_000 + t as u64);
            if t > 0 {
                root.x = (root.x + step.sample(&mut frng)).clamp(-limit, limit);
                root.y = (root.y + step.sample(&mut frng)).clamp(-limit, limit);
                root.z = (root.z + 0.5 * step.sample(&mut frng)).clamp(ROOT_HEIGHT - 0.2, ROOT_HEIGHT + 0.2);
                heading += turn.sample(&mut frng);
            }
            let rz = rot_z(heading);
            offsets
                .iter()
                .map(|o| {
                    let j = Vector3::new(
                        jitter.sample(&mut frng),
                        jitter.sample(&mut frng),
                        jitter.sample(&mut frng),
                    );
                    root + rz * o + j
                })
                .collect()
        })
        .collect()
}

/// Generates a session; deterministic in `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthSession> {
    cfg.validate()?;
    let gt = match cfg.gt_extrinsic {
        Some(g) => g,
        None => {
            let mut rng = stream(cfg.seed, 0);
            let rot = random_rotation(&mut rng);
            let t = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            RigidTransform::new(rot, t)?
        }
    };
    let cameras = rig(cfg)?;
    let world = motion(cfg);
    let to_mocap = gt.inverse();
    let keypoints3d: Vec<Vec<Vector3<f64>>> = world
        .iter()
        .map(|frame| frame.iter().map(|x| to_mocap.apply(x)).collect())
        .collect();

    let (w, h) = (cfg.image_size.0 as f64, cfg.image_size.1 as f64);
    let n = cfg.n_cameras;
    let mut keypoints2d = vec![Vec::with_capacity(cfg.n_frames); n];
    let mut labels = vec![Vec::with_capacity(cfg.n_frames); n];
    for (t, frame) in keypoints3d.iter().enumerate() {
        let mut rng = stream(cfg.seed, 1u64 << 40 | t as u64);
        for (i, cam) in cameras.iter().enumerate() {
            let mut obs = Vec::with_capacity(frame.len());
            let mut lab = Vec::with_capacity(frame.len());
            for p in frame {
                let u_invalid: f64 = rng.random();
                let u_outlier: f64 = rng.random();
                let (ou, ov): (f64, f64) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
                let nx: f64 = StandardNormal.sample(&mut rng);
                let ny: f64 = StandardNormal.sample(&mut rng);
                let proj = project(cam, &gt, p).ok().filter(|pr| pr.depth > 0.0);
                let (pixel, label) = match proj {
                    None => (Vector2::zeros(), Label::Invalid),
                    Some(_) if u_invalid < cfg.invalid_fraction => (Vector2::zeros(), Label::Invalid),
                    Some(_) if u_outlier < cfg.outlier_fraction => (Vector2::new(ou, ov), Label::Outlier),
                    Some(pr) if cfg.noise_sigma > 0.0 => (pr.pixel + Vector2::new(nx, ny) * cfg.noise_sigma, Label::Gaussian),
                    Some(pr) => (pr.pixel, Label::Clean),
                };
                obs.push((pixel, label != Label::Invalid));
                lab.push(label);
            }
            keypoints2d[i].push(obs);
            labels[i].push(lab);
        }
    }

    let data = SessionData {
        cameras,
        keypoints3d,
        keypoints2d,
        gt_extrinsic: Some(gt),
    };
    let set = data.to_correspondence_set()?;
    Ok(SynthSession {
        data,
        set,
        gt_extrinsic: gt,
        labels,
    })
}
