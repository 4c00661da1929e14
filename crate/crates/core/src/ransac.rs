//! RANSAC-P3P initialization.
//!
//! Each iteration `k` draws from its own ChaCha8 stream (`seed`, stream `k`), so the
//! hypothesis produced by an iteration does not depend on which worker ran it. The
//! best hypothesis is chosen under a total order (inliers desc, mean inlier residual
//! asc, `(k, l)` asc), which makes the parallel reduction order-independent.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraModel, RigidTransform};
use crate::p3p::{recover_mocap_pose, solve_p3p, MinimalProblem};

/// One 3D–2D pairing for camera `cam_index`, joint `joint_index`, frame `frame_index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub cam_index: usize,
    pub joint_index: usize,
    pub frame_index: usize,
    /// MoCap frame, meters.
    pub point3d: Vector3<f64>,
    /// Pixels.
    pub point2d: Vector2<f64>,
    pub valid: bool,
}

/// Problem dimensions `(N cameras, J joints, T frames)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub cameras: usize,
    pub joints: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    cameras: Vec<CameraModel>,
    entries: Vec<Correspondence>,
    dims: Dims,
}

impl CorrespondenceSet {
    pub fn new(cameras: Vec<CameraModel>, entries: Vec<Correspondence>, dims: Dims) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::DimensionMismatch("at least one camera is required".into()));
        }
        if cameras.len() != dims.cameras {
            return Err(Error::DimensionMismatch(format!(
                "{} cameras supplied, dims declare {}",
                cameras.len(),
                dims.cameras
            )));
        }
        for (n, e) in entries.iter().enumerate() {
            if e.cam_index >= dims.cameras || e.joint_index >= dims.joints || e.frame_index >= dims.frames {
                return Err(Error::DimensionMismatch(format!(
                    "entry {n} index ({}, {}, {}) outside dims ({}, {}, {})",
                    e.cam_index, e.joint_index, e.frame_index, dims.cameras, dims.joints, dims.frames
                )));
            }
            if e.valid
                && !(e.point3d.iter().all(|v| v.is_finite()) && e.point2d.iter().all(|v| v.is_finite()))
            {
                return Err(Error::NonFiniteValue {
                    location: format!("entry {n}"),
                });
            }
        }
        Ok(Self {
            cameras,
            entries,
            dims,
        })
    }

    pub fn cameras(&self) -> &[CameraModel] {
        &self.cameras
    }

    pub fn entries(&self) -> &[Correspondence] {
        &self.entries
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn camera(&self, e: &Correspondence) -> &CameraModel {
        &self.cameras[e.cam_index]
    }

    pub fn valid_count(&self) -> usize {
        self.entries.iter().filter(|e| e.valid).count()
    }

    /// Ids of valid entries on frames `t ≡ 0 (mod stride)`.
    pub fn selected(&self, stride: usize) -> impl Iterator<Item = usize> + '_ {
        let stride = stride.max(1);
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.valid && e.frame_index % stride == 0)
            .map(|(i, _)| i)
    }
}

/// Boolean membership over the entries of a set, built from an id list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryMask(Vec<bool>);

impl EntryMask {
    pub fn from_ids(len: usize, ids: &[usize]) -> Self {
        let mut mask = vec![false; len];
        for &i in ids {
            if i < len {
                mask[i] = true;
            }
        }
        Self(mask)
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.get(id).copied().unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold in pixels.
    pub tau: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Only frames with `t % coarse_stride == 0` are scored.
    pub coarse_stride: usize,
    pub min_inlier_ratio: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            tau: 10.0,
            iterations: 2000,
            seed: 0,
            coarse_stride: 10,
            min_inlier_ratio: 0.2,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig("tau must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.coarse_stride == 0 {
            return Err(Error::InvalidConfig("coarse_stride must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_inlier_ratio) {
            return Err(Error::InvalidConfig("min_inlier_ratio must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Best-scoring pose candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis {
    /// MoCap→world transform.
    pub transform: RigidTransform,
    pub inlier_count: usize,
    /// Pixels; 0 when there are no inliers.
    pub mean_inlier_residual: f64,
    /// `(iteration k, solution l)`, both zero-based.
    pub source: (usize, usize),
    /// Number of entries that were scored (valid, stride-selected).
    pub scored_count: usize,
}

impl Hypothesis {
    pub fn inlier_ratio(&self) -> f64 {
        if self.scored_count == 0 {
            0.0
        } else {
            self.inlier_count as f64 / self.scored_count as f64
        }
    }

    /// Total order used to pick the winner; `Less` means `self` is better.
    fn rank(&self, other: &Self) -> Ordering {
        other
            .inlier_count
            .cmp(&self.inlier_count)
            .then(self.mean_inlier_residual.total_cmp(&other.mean_inlier_residual))
            .then(self.source.cmp(&other.source))
    }
}

/// Inliers of a transform and their mean residual norm.
#[derive(Debug, Clone, PartialEq)]
pub struct InlierSet {
    pub ids: Vec<usize>,
    pub mean_residual: f64,
    /// Valid, stride-selected entries considered.
    pub scored: usize,
}

/// Reprojection residual `u − w` in pixels and the signed depth.
pub fn residual(
    corr: &Correspondence,
    cam: &CameraModel,
    transform: &RigidTransform,
) -> Result<(Vector2<f64>, f64)> {
    let p = project(cam, transform, &corr.point3d)?;
    Ok((p.pixel - corr.point2d, p.depth))
}

/// Entries behind (or on) the principal plane never count; the test is strict `‖r‖ < τ`.
pub fn count_inliers(
    set: &CorrespondenceSet,
    transform: &RigidTransform,
    tau: f64,
    stride: usize,
) -> InlierSet {
    let mut ids = Vec::new();
    let mut sum = 0.0;
    let mut scored = 0;
    for id in set.selected(stride) {
        scored += 1;
        let e = &set.entries[id];
        let Ok((r, depth)) = residual(e, set.camera(e), transform) else {
            continue;
        };
        if depth <= 0.0 {
            continue;
        }
        let norm = r.norm();
        if norm < tau {
            debug_assert!(depth > 0.0);
            ids.push(id);
            sum += norm;
        }
    }
    let mean_residual = if ids.is_empty() { 0.0 } else { sum / ids.len() as f64 };
    InlierSet {
        ids,
        mean_residual,
        scored,
    }
}

fn score(set: &CorrespondenceSet, scored_ids: &[usize], transform: &RigidTransform, tau: f64) -> (usize, f64) {
    let mut count = 0;
    let mut sum = 0.0;
    for &id in scored_ids {
        let e = &set.entries[id];
        let cam = set.camera(e);
        let x_cam = cam.rot_wc() * transform.apply(&e.point3d) + cam.trans_wc();
        if x_cam.z <= 0.0 {
            continue;
        }
        let Some(px) = cam.project_camera_point(&x_cam) else { continue };
        let norm = (px - e.point2d).norm();
        if norm < tau {
            count += 1;
            sum += norm;
        }
    }
    (count, if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Groups of entry ids sharing one (camera, frame), keeping only groups with at
/// least three valid joints at distinct 3D positions.
fn sample_groups(set: &CorrespondenceSet) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (id, e) in set.entries.iter().enumerate() {
        if e.valid {
            groups.entry((e.cam_index, e.frame_index)).or_default().push(id);
        }
    }
    groups.into_values().filter(|g| g.len() >= 3).collect()
}

fn iteration_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Hypotheses generated by one RANSAC iteration (possibly none).
fn run_iteration(
    set: &CorrespondenceSet,
    groups: &[Vec<usize>],
    scored_ids: &[usize],
    cfg: &RansacConfig,
    k: usize,
) -> Option<Hypothesis> {
    let mut rng = iteration_rng(cfg.seed, k);
    let group = &groups[rng.random_range(0..groups.len())];
    let picks = index::sample(&mut rng, group.len(), 3);
    let ids = [group[picks.index(0)], group[picks.index(1)], group[picks.index(2)]];
    let entries = ids.map(|i| &set.entries[i]);
    let cam = set.camera(entries[0]);
    let world = entries.map(|e| e.point3d);
    let bearings = entries.map(|e| cam.bearing(&e.point2d));
    let problem = MinimalProblem::new(world, bearings).ok()?;
    let solutions = solve_p3p(&problem).ok()?;

    let mut best: Option<Hypothesis> = None;
    for (l, cam_from_mocap) in solutions.iter().enumerate() {
        let transform = recover_mocap_pose(cam_from_mocap, cam);
        let (inlier_count, mean_inlier_residual) = score(set, scored_ids, &transform, cfg.tau);
        let h = Hypothesis {
            transform,
            inlier_count,
            mean_inlier_residual,
            source: (k, l),
            scored_count: scored_ids.len(),
        };
        if best.as_ref().is_none_or(|b| h.rank(b) == Ordering::Less) {
            best = Some(h);
        }
    }
    best
}

/// Runs `cfg.iterations` rounds of minimal sampling and returns the best hypothesis.
///
/// Degenerate samples still consume their iteration.
pub fn run_ransac(set: &CorrespondenceSet, cfg: &RansacConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let groups = sample_groups(set);
    if groups.is_empty() {
        return Err(Error::NoValidSample);
    }
    let scored_ids: Vec<usize> = set.selected(cfg.coarse_stride).collect();

    let best = (0..cfg.iterations)
        .into_par_iter()
        .filter_map(|k| run_iteration(set, &groups, &scored_ids, cfg, k))
        .reduce_with(|a, b| if a.rank(&b) == Ordering::Greater { b } else { a });

    let best = best.ok_or(Error::InsufficientConsensus {
        ratio: 0.0,
        required: cfg.min_inlier_ratio,
    })?;
    let ratio = best.inlier_ratio();
    if ratio < cfg.min_inlier_ratio {
        return Err(Error::InsufficientConsensus {
            ratio,
            required: cfg.min_inlier_ratio,
        });
    }
    Ok(best)
}
