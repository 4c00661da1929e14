//! Gradient refinement of the MoCap→world pose.
//!
//! Loss over the active set `S` (valid, stride-selected, optionally restricted to
//! inliers, positive depth):
//!
//! ```text
//! L(α, β, γ, t) = 1/(2|S|) · Σ ‖u − w‖²
//! ```
//!
//! For one term with `X_w = R_m·W + t`, `X_c = R_c·X_w + t_c` and `J = ∂u/∂X_c`
//! (pinhole, distortion and intrinsics together), the world-space gradient is
//! `g = R_cᵀ·Jᵀ·r`. Then `∂L/∂t = mean(g)` and `∂L/∂θ = mean(g · (∂R_m/∂θ)·W)`.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euler_rotation_derivatives, euler_to_rotation, EulerPose, RigidTransform};
use crate::ransac::{CorrespondenceSet, EntryMask};

// Fixed chunking keeps the floating-point summation tree independent of the
// number of worker threads.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub steps: usize,
    pub lr_rotation: f64,
    pub lr_translation: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub fine_stride: usize,
    pub inliers_only: bool,
    /// Final learning rate as a fraction of the initial one.
    pub cosine_floor: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr_rotation: 1e-3,
            lr_translation: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            fine_stride: 2,
            inliers_only: true,
            cosine_floor: 0.01,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if !(self.lr_rotation > 0.0 && self.lr_translation > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0) || !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if self.fine_stride == 0 {
            return bad("fine_stride must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.cosine_floor) {
            return bad("cosine_floor must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Loss, its gradient `(∂α, ∂β, ∂γ, ∂tx, ∂ty, ∂tz)` and `|S|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub gradient: [f64; 6],
    pub active_count: usize,
}

/// Pre-selected terms (stride and mask applied once); depth gating happens per evaluation.
pub(crate) struct Terms<'a> {
    set: &'a CorrespondenceSet,
    ids: Vec<usize>,
}

impl<'a> Terms<'a> {
    pub(crate) fn new(set: &'a CorrespondenceSet, stride: usize, restrict_to: Option<&EntryMask>) -> Self {
        let ids = set
            .selected(stride)
            .filter(|&i| restrict_to.is_none_or(|m| m.contains(i)))
            .collect();
        Self { set, ids }
    }

    pub(crate) fn evaluate(&self, pose: &EulerPose) -> LossReport {
        let rot = euler_to_rotation(pose.alpha, pose.beta, pose.gamma);
        let d_rot = euler_rotation_derivatives(pose.alpha, pose.beta, pose.gamma);
        let trans = Vector3::from(pose.translation);

        let partials: Vec<Accum> = self
            .ids
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = Accum::default();
                for &id in chunk {
                    let e = &self.set.entries()[id];
                    let cam = self.set.camera(e);
                    let x_cam = cam.rot_wc() * (rot * e.point3d + trans) + cam.trans_wc();
                    if x_cam.z <= 0.0 {
                        continue;
                    }
                    let Some((px, jac)) = cam.project_with_jacobian(&x_cam) else { continue };
                    let r: Vector2<f64> = px - e.point2d;
                    let g_world = cam.rot_wc().transpose() * (jac.transpose() * r);
                    acc.loss += r.norm_squared();
                    acc.grad[0] += g_world.dot(&(d_rot[0] * e.point3d));
                    acc.grad[1] += g_world.dot(&(d_rot[1] * e.point3d));
                    acc.grad[2] += g_world.dot(&(d_rot[2] * e.point3d));
                    acc.grad[3] += g_world.x;
                    acc.grad[4] += g_world.y;
                    acc.grad[5] += g_world.z;
                    acc.count += 1;
                }
                acc
            })
            .collect();

        let total = partials.into_iter().fold(Accum::default(), |mut a, b| {
            a.loss += b.loss;
            for k in 0..6 {
                a.grad[k] += b.grad[k];
            }
            a.count += b.count;
            a
        });
        if total.count == 0 {
            return LossReport {
                loss: 0.0,
                gradient: [0.0; 6],
                active_count: 0,
            };
        }
        let n = total.count as f64;
        LossReport {
            loss: total.loss / (2.0 * n),
            gradient: total.grad.map(|g| g / n),
            active_count: total.count,
        }
    }
}

#[derive(Default)]
struct Accum {
    loss: f64,
    grad: [f64; 6],
    count: usize,
}

/// Half mean squared reprojection error and its analytic gradient.
pub fn loss_and_gradient(
    set: &CorrespondenceSet,
    pose: &EulerPose,
    stride: usize,
    restrict_to: Option<&EntryMask>,
) -> LossReport {
    Terms::new(set, stride, restrict_to).evaluate(pose)
}

/// Cosine annealing from `lr0` (step 0) down to `floor_frac·lr0` (step `total − 1`).
pub fn cosine_lr(step: usize, total: usize, lr0: f64, floor_frac: f64) -> f64 {
    if total <= 1 {
        return lr0;
    }
    let floor = floor_frac * lr0;
    let phase = std::f64::consts::PI * step.min(total - 1) as f64 / (total - 1) as f64;
    floor + (lr0 - floor) * (1.0 + phase.cos()) / 2.0
}

/// Bias-corrected Adam over the six pose parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: [f64; 6],
    pub v: [f64; 6],
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr_rotation: f64,
    pub lr_translation: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Advances the moments and returns the parameter delta to add.
/// Components 0–2 use `lr_rotation`, 3–5 `lr_translation`.
pub fn adam_step(state: &mut AdamState, gradient: &[f64; 6], p: &AdamParams) -> [f64; 6] {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - p.beta1.powi(t);
    let bc2 = 1.0 - p.beta2.powi(t);
    let mut delta = [0.0; 6];
    for k in 0..6 {
        let g = gradient[k];
        state.m[k] = p.beta1 * state.m[k] + (1.0 - p.beta1) * g;
        state.v[k] = p.beta2 * state.v[k] + (1.0 - p.beta2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        let lr = if k < 3 { p.lr_rotation } else { p.lr_translation };
        delta[k] = -lr * m_hat / (v_hat.sqrt() + p.epsilon);
    }
    delta
}

/// Result of [`refine_pose`].
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    /// Lowest-loss iterate.
    pub transform: RigidTransform,
    pub euler: EulerPose,
    pub best_loss: f64,
    pub best_step: usize,
    /// Loss at every evaluated iterate: `steps + 1` values (initial pose first).
    pub loss_trace: Vec<f64>,
}

/// Adam with cosine-annealed learning rates, returning the best iterate seen.
pub fn refine_pose(
    set: &CorrespondenceSet,
    init: &RigidTransform,
    cfg: &RefineConfig,
    restrict_to: Option<&EntryMask>,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    let terms = Terms::new(set, cfg.fine_stride, restrict_to);
    let mut pose = EulerPose::from_transform(init);
    let mut params = pose.to_params();

    let first = terms.evaluate(&pose);
    if first.active_count == 0 {
        return Err(Error::EmptyActiveSet);
    }
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    trace.push(first.loss);
    let mut best = (first.loss, 0usize, pose);
    let mut report = first;
    let mut state = AdamState::default();

    for step in 0..cfg.steps {
        let adam = AdamParams {
            lr_rotation: cosine_lr(step, cfg.steps, cfg.lr_rotation, cfg.cosine_floor),
            lr_translation: cosine_lr(step, cfg.steps, cfg.lr_translation, cfg.cosine_floor),
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            epsilon: cfg.adam_epsilon,
        };
        let delta = adam_step(&mut state, &report.gradient, &adam);
        for k in 0..6 {
            params[k] += delta[k];
        }
        pose = EulerPose::from_params(&params);
        report = terms.evaluate(&pose);
        trace.push(report.loss);
        if report.active_count > 0 && report.loss < best.0 {
            best = (report.loss, step + 1, pose);
        }
    }

    let (best_loss, best_step, euler) = best;
    let transform = if best_step == 0 { *init } else { euler.to_transform() };
    Ok(RefineOutcome {
        transform,
        euler,
        best_loss,
        best_step,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraModel;
    use crate::ransac::{Correspondence, Dims};
    use nalgebra::Matrix3;

    fn unit_set(point2d: Vector2<f64>) -> CorrespondenceSet {
        let cam = CameraModel::pinhole(1.0, 1.0, 0.0, 0.0, Matrix3::identity(), Vector3::zeros()).unwrap();
        let e = Correspondence {
            cam_index: 0,
            joint_index: 0,
            frame_index: 0,
            point3d: Vector3::new(0.0, 0.0, 1.0),
            point2d,
            valid: true,
        };
        CorrespondenceSet::new(vec![cam], vec![e], Dims { cameras: 1, joints: 1, frames: 1 }).unwrap()
    }

    #[test]
    fn single_term_loss() {
        let set = unit_set(Vector2::new(1.0, 0.0));
        let pose = EulerPose::from_transform(&RigidTransform::identity());
        let rep = loss_and_gradient(&set, &pose, 1, None);
        assert_eq!(rep.active_count, 1);
        assert!((rep.loss - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_active_set_is_zero() {
        let set = unit_set(Vector2::new(1.0, 0.0));
        let behind = EulerPose { alpha: 0.0, beta: 0.0, gamma: 0.0, translation: [0.0, 0.0, -3.0] };
        let rep = loss_and_gradient(&set, &behind, 1, None);
        assert_eq!(rep, LossReport { loss: 0.0, gradient: [0.0; 6], active_count: 0 });
        let init = behind.to_transform();
        assert!(matches!(
            refine_pose(&set, &init, &RefineConfig::default(), None),
            Err(Error::EmptyActiveSet)
        ));
    }

    #[test]
    fn cosine_schedule_examples() {
        assert_eq!(cosine_lr(0, 100, 0.1, 0.01), 0.1);
        assert!(cosine_lr(99, 100, 0.1, 0.0).abs() < 1e-18);
        assert!((cosine_lr(50, 101, 0.1, 0.0) - 0.05).abs() < 1e-15);
        assert_eq!(cosine_lr(0, 1, 0.3, 0.5), 0.3);
        assert!((cosine_lr(9, 10, 1.0, 0.25) - 0.25).abs() < 1e-15);
    }

    fn params() -> AdamParams {
        AdamParams { lr_rotation: 1e-3, lr_translation: 1e-2, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut s = AdamState::default();
        assert_eq!(adam_step(&mut s, &[0.0; 6], &params()), [0.0; 6]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_is_componentwise() {
        let mut s = AdamState::default();
        let d = adam_step(&mut s, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &params());
        assert!(d[0] < 0.0);
        assert!(d[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn adam_constant_gradient_steps_at_learning_rate() {
        let mut s = AdamState::default();
        let g = [2.0, -0.5, 1e-3, 4.0, -3.0, 0.1];
        let mut d = [0.0; 6];
        for _ in 0..5000 {
            d = adam_step(&mut s, &g, &params());
        }
        for k in 0..6 {
            let lr = if k < 3 { 1e-3 } else { 1e-2 };
            assert!((d[k].abs() - lr).abs() < 1e-4 * lr, "component {k}: {}", d[k]);
            assert_eq!(d[k].signum(), -g[k].signum());
        }
    }

    #[test]
    fn config_validation() {
        assert!(RefineConfig::default().validate().is_ok());
        let bad = RefineConfig { adam_beta1: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RefineConfig { fine_stride: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
