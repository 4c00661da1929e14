//! Coarse-to-fine calibration: RANSAC-P3P hypothesis, gradient refinement, and
//! MPJPE evaluation of each stage.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_geodesic_deg, EulerPose, RigidTransform};
use crate::io::REPORT_FORMAT_VERSION;
use crate::ransac::{count_inliers, residual, run_ransac, CorrespondenceSet, EntryMask, RansacConfig};
use crate::refine::{refine_pose, RefineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondenceCounts {
    pub total: usize,
    pub valid: usize,
    /// Valid entries in front of the camera under the final transform.
    pub positive_depth: usize,
}

/// Wall-clock timings in milliseconds. The only non-deterministic part of a report.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub ransac_ms: f64,
    pub refine_ms: f64,
    pub total_ms: f64,
    /// `total_ms / T`.
    pub ms_per_frame: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub ransac: RansacConfig,
    pub refine: RefineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationReport {
    pub format_version: u32,
    /// Final MoCap→world transform.
    pub transform: RigidTransform,
    pub euler: EulerPose,
    /// RANSAC hypothesis before refinement.
    pub init_transform: RigidTransform,
    /// Pixels, at the RANSAC hypothesis.
    pub mpjpe_init: f64,
    /// Pixels, at the final transform.
    pub mpjpe_refined: f64,
    /// Pixels, at the reference transform when one was supplied.
    pub mpjpe_gt: Option<f64>,
    pub rotation_error_deg: Option<f64>,
    pub translation_error_m: Option<f64>,
    /// Inliers of the RANSAC hypothesis over all valid entries.
    pub inlier_ratio: f64,
    pub inlier_count: usize,
    /// Set when the refined pose had a higher full-resolution MPJPE than the
    /// initial one and the initial pose was kept.
    pub refinement_rejected: bool,
    /// Refinement loss (½ mean squared residual, px²) at the returned iterate.
    pub final_loss: f64,
    pub correspondence_counts: CorrespondenceCounts,
    pub config: ConfigEcho,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub timing: Timing,
}

impl CalibrationReport {
    /// Copy with timings zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            timing: Timing::default(),
            ..self.clone()
        }
    }
}

/// Mean residual norm over all valid, positive-depth entries (every frame).
pub fn compute_mpjpe(set: &CorrespondenceSet, transform: &RigidTransform) -> Result<f64> {
    let (sum, count) = residual_norms(set, transform).fold((0.0, 0usize), |(s, c), r| (s + r, c + 1));
    if count == 0 {
        return Err(Error::EmptyActiveSet);
    }
    Ok(sum / count as f64)
}

/// Residual norms of valid, positive-depth entries in set order.
pub fn residual_norms<'a>(
    set: &'a CorrespondenceSet,
    transform: &'a RigidTransform,
) -> impl Iterator<Item = f64> + 'a {
    set.entries().iter().filter(|e| e.valid).filter_map(move |e| {
        let (r, depth) = residual(e, set.camera(e), transform).ok()?;
        (depth > 0.0).then(|| r.norm())
    })
}

fn positive_depth_count(set: &CorrespondenceSet, transform: &RigidTransform) -> usize {
    residual_norms(set, transform).count()
}

/// Runs RANSAC, refines from its hypothesis and assembles the report.
pub fn calibrate(
    set: &CorrespondenceSet,
    ransac_cfg: &RansacConfig,
    refine_cfg: &RefineConfig,
    gt: Option<&RigidTransform>,
) -> Result<CalibrationReport> {
    refine_cfg.validate()?;
    let start = Instant::now();

    let hypothesis = run_ransac(set, ransac_cfg)?;
    let ransac_ms = start.elapsed().as_secs_f64() * 1e3;
    let init = hypothesis.transform;
    let mpjpe_init = compute_mpjpe(set, &init)?;
    let inliers = count_inliers(set, &init, ransac_cfg.tau, 1);

    let refine_start = Instant::now();
    let mask = refine_cfg
        .inliers_only
        .then(|| EntryMask::from_ids(set.entries().len(), &inliers.ids));
    let outcome = refine_pose(set, &init, refine_cfg, mask.as_ref())?;
    let refine_ms = refine_start.elapsed().as_secs_f64() * 1e3;

    let mpjpe_candidate = compute_mpjpe(set, &outcome.transform);
    let (transform, mpjpe_refined, refinement_rejected) = match mpjpe_candidate {
        Ok(m) if m <= mpjpe_init => (outcome.transform, m, false),
        _ => {
            log::warn!("refined pose does not improve full-resolution MPJPE; keeping RANSAC pose");
            (init, mpjpe_init, true)
        }
    };
    let final_loss = if refinement_rejected {
        outcome.loss_trace[0]
    } else {
        outcome.best_loss
    };

    let (mpjpe_gt, rotation_error_deg, translation_error_m) = match gt {
        Some(g) => (
            compute_mpjpe(set, g).ok(),
            Some(rotation_geodesic_deg(transform.rotation(), g.rotation())),
            Some((transform.translation() - g.translation()).norm()),
        ),
        None => (None, None, None),
    };

    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    let frames = set.dims().frames.max(1) as f64;
    let scored = inliers.scored.max(1) as f64;
    Ok(CalibrationReport {
        format_version: REPORT_FORMAT_VERSION,
        transform,
        euler: EulerPose::from_transform(&transform),
        init_transform: init,
        mpjpe_init,
        mpjpe_refined,
        mpjpe_gt,
        rotation_error_deg,
        translation_error_m,
        inlier_ratio: inliers.ids.len() as f64 / scored,
        inlier_count: inliers.ids.len(),
        refinement_rejected,
        final_loss,
        correspondence_counts: CorrespondenceCounts {
            total: set.entries().len(),
            valid: set.valid_count(),
            positive_depth: positive_depth_count(set, &transform),
        },
        config: ConfigEcho {
            ransac: *ransac_cfg,
            refine: *refine_cfg,
        },
        seed: ransac_cfg.seed,
        warnings: Vec::new(),
        timing: Timing {
            ransac_ms,
            refine_ms,
            total_ms,
            ms_per_frame: total_ms / frames,
        },
    })
}
