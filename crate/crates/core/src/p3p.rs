//! Minimal three-point absolute pose.
//!
//! Grunert's formulation: with depths `s_k` along unit bearings `j_k`, the law of
//! cosines on the three triangle sides gives three quadratic constraints. Writing
//! `s2 = u·s1`, `s3 = v·s1` and eliminating `u` yields a quartic in `v`; each real
//! positive root gives depths, which are then polished with Gauss–Newton before the
//! pose is read off the two congruent triangles.

use nalgebra::{DMatrix, Matrix3, Matrix6, Rotation3, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, RigidTransform};

/// Minimum triangle area (m²) accepted by the solver.
pub const MIN_TRIANGLE_AREA: f64 = 1e-9;

/// Every returned solution reprojects its points within this many normalized units.
pub const SOLUTION_TOL: f64 = 1e-8;

// Roots whose imaginary part is small relative to their magnitude are treated as
// perturbed real roots; the final reprojection check discards spurious ones.
const IMAG_TOL: f64 = 1e-4;
const ROOT_NEWTON_STEPS: usize = 2;
const DEPTH_GN_STEPS: usize = 8;
const POSE_NEWTON_STEPS: usize = 4;

/// Three MoCap points and the matching unit bearings in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalProblem {
    world_points: [Vector3<f64>; 3],
    bearings: [Vector3<f64>; 3],
}

impl MinimalProblem {
    pub fn new(world_points: [Vector3<f64>; 3], bearings: [Vector3<f64>; 3]) -> Result<Self> {
        for (k, b) in bearings.iter().enumerate() {
            if !b.iter().all(|v| v.is_finite()) || (b.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::DegenerateConfiguration(format!(
                    "bearing {k} is not a unit vector"
                )));
            }
        }
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            if !world_points[a].iter().all(|v| v.is_finite())
                || (world_points[a] - world_points[b]).norm() <= 1e-9
            {
                return Err(Error::DegenerateConfiguration(format!(
                    "world points {a} and {b} coincide"
                )));
            }
        }
        Ok(Self {
            world_points,
            bearings,
        })
    }

    /// Bearings are normalized here; `image_points` are undistorted normalized coordinates.
    pub fn from_normalized(
        world_points: [Vector3<f64>; 3],
        image_points: [[f64; 2]; 3],
    ) -> Result<Self> {
        let bearings = image_points.map(|p| Vector3::new(p[0], p[1], 1.0).normalize());
        Self::new(world_points, bearings)
    }

    pub fn world_points(&self) -> &[Vector3<f64>; 3] {
        &self.world_points
    }

    pub fn bearings(&self) -> &[Vector3<f64>; 3] {
        &self.bearings
    }

    fn triangle_area(&self) -> f64 {
        let [p1, p2, p3] = &self.world_points;
        0.5 * (p2 - p1).cross(&(p3 - p1)).norm()
    }
}

/// Up to four camera-from-MoCap poses `(R, t)` with `R·W_k + t ∝ bearing_k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct P3PSolutionSet {
    pub solutions: Vec<RigidTransform>,
}

impl P3PSolutionSet {
    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RigidTransform> {
        self.solutions.iter()
    }
}

/// Solves the minimal problem. Only solutions with all three points at positive
/// depth and normalized-coordinate residuals below [`SOLUTION_TOL`] are returned.
pub fn solve_p3p(problem: &MinimalProblem) -> Result<P3PSolutionSet> {
    if problem.triangle_area() < MIN_TRIANGLE_AREA {
        return Err(Error::DegenerateConfiguration(
            "world points are collinear".into(),
        ));
    }
    let [p1, p2, p3] = problem.world_points;
    let [j1, j2, j3] = problem.bearings;

    let a2 = (p2 - p3).norm_squared();
    let b2 = (p1 - p3).norm_squared();
    let c2 = (p1 - p2).norm_squared();
    let cos_a = j2.dot(&j3);
    let cos_b = j1.dot(&j3);
    let cos_g = j1.dot(&j2);

    let quartic = grunert_quartic(a2, b2, c2, cos_a, cos_b, cos_g);
    let mut solutions: Vec<(RigidTransform, f64)> = Vec::with_capacity(4);
    for v in real_roots(&quartic) {
        if v <= 0.0 {
            continue;
        }
        let q = 1.0 + v * v - 2.0 * v * cos_b;
        if q <= 0.0 {
            continue;
        }
        let s1 = (b2 / q).sqrt();
        let s3 = v * s1;
        // s2 from the side opposite j3; both branches tried, the a-side picks one.
        let disc = (s1 * s1 * (cos_g * cos_g - 1.0) + c2).max(0.0).sqrt();
        for s2 in [s1 * cos_g + disc, s1 * cos_g - disc] {
            if s2 <= 0.0 {
                continue;
            }
            let mut depths = Vector3::new(s1, s2, s3);
            polish_depths(&mut depths, a2, b2, c2, cos_a, cos_b, cos_g);
            if depths.iter().any(|&s| s <= 0.0) {
                continue;
            }
            let cam_pts = [j1 * depths[0], j2 * depths[1], j3 * depths[2]];
            let Some(pose) = pose_from_triangles(&problem.world_points, &cam_pts) else {
                continue;
            };
            let pose = polish_pose(problem, pose);
            let err = max_residual(problem, &pose);
            if err >= SOLUTION_TOL {
                continue;
            }
            match find_duplicate(&solutions, &pose) {
                Some(i) if err < solutions[i].1 => solutions[i] = (pose, err),
                Some(_) => {}
                None => solutions.push((pose, err)),
            }
        }
    }
    // Several roots can polish onto the same pose; keep four at most.
    solutions.sort_by(|a, b| a.1.total_cmp(&b.1));
    solutions.truncate(4);
    Ok(P3PSolutionSet {
        solutions: solutions.into_iter().map(|(p, _)| p).collect(),
    })
}

/// Converts a camera-from-MoCap pose into the MoCap→world transform, given the
/// camera's world→camera extrinsics: `R_m = R_cᵀ·R`, `t_m = R_cᵀ·(t − t_c)`.
pub fn recover_mocap_pose(cam_from_mocap: &RigidTransform, cam: &CameraModel) -> RigidTransform {
    let rct = cam.rot_wc().transpose();
    RigidTransform::from_parts_unchecked(
        rct * cam_from_mocap.rotation(),
        rct * (cam_from_mocap.translation() - cam.trans_wc()),
    )
}

/// Quartic coefficients, lowest degree first.
fn grunert_quartic(a2: f64, b2: f64, c2: f64, cos_a: f64, cos_b: f64, cos_g: f64) -> [f64; 5] {
    let amc = a2 - c2;
    // q(v) = 1 + v² − 2v·cosβ
    let q = [1.0, -2.0 * cos_b, 1.0];
    // u = N(v) / D(v)
    let n = [amc + b2, -2.0 * cos_b * amc, amc - b2];
    let d = [2.0 * b2 * cos_g, -2.0 * b2 * cos_a];

    let dd = poly_mul(&d, &d);
    let nn = poly_mul(&n, &n);
    let nd = poly_mul(&n, &d);
    let qdd = poly_mul(&q, &dd);
    let mut out = [0.0; 5];
    for i in 0..5 {
        let get = |p: &[f64], i: usize| p.get(i).copied().unwrap_or(0.0);
        out[i] = b2 * (get(&dd, i) + get(&nn, i) - 2.0 * cos_g * get(&nd, i)) - c2 * get(&qdd, i);
    }
    out
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_eval(c: &[f64], x: f64) -> (f64, f64) {
    let mut val = 0.0;
    let mut der = 0.0;
    for &ci in c.iter().rev() {
        der = der * x + val;
        val = val * x + ci;
    }
    (val, der)
}

/// Real roots via companion-matrix eigenvalues, each polished by Newton steps.
fn real_roots(coeffs: &[f64; 5]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Vec::new();
    }
    let c: Vec<f64> = coeffs.iter().map(|x| x / scale).collect();
    let mut degree = 4;
    while degree > 0 && c[degree].abs() < 1e-14 {
        degree -= 1;
    }
    if degree == 0 {
        return Vec::new();
    }
    let lead = c[degree];
    let mut companion = DMatrix::<f64>::zeros(degree, degree);
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        companion[(i, degree - 1)] = -c[i] / lead;
    }
    let Some(schur) = nalgebra::linalg::Schur::try_new(companion, f64::EPSILON, 500) else {
        return Vec::new();
    };
    let poly = &c[..=degree];
    schur
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= IMAG_TOL * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..ROOT_NEWTON_STEPS {
                let (f, df) = poly_eval(poly, x);
                if df == 0.0 {
                    break;
                }
                let next = x - f / df;
                if !next.is_finite() {
                    break;
                }
                x = next;
            }
            x
        })
        .collect()
}

fn depth_residuals(s: &Vector3<f64>, a2: f64, b2: f64, c2: f64, ca: f64, cb: f64, cg: f64) -> Vector3<f64> {
    Vector3::new(
        s[0] * s[0] + s[1] * s[1] - 2.0 * s[0] * s[1] * cg - c2,
        s[0] * s[0] + s[2] * s[2] - 2.0 * s[0] * s[2] * cb - b2,
        s[1] * s[1] + s[2] * s[2] - 2.0 * s[1] * s[2] * ca - a2,
    )
}

fn polish_depths(s: &mut Vector3<f64>, a2: f64, b2: f64, c2: f64, ca: f64, cb: f64, cg: f64) {
    let mut r = depth_residuals(s, a2, b2, c2, ca, cb, cg);
    for _ in 0..DEPTH_GN_STEPS {
        let cost = r.norm_squared();
        if cost == 0.0 {
            break;
        }
        let j = Matrix3::new(
            2.0 * (s[0] - s[1] * cg),
            2.0 * (s[1] - s[0] * cg),
            0.0,
            2.0 * (s[0] - s[2] * cb),
            0.0,
            2.0 * (s[2] - s[0] * cb),
            0.0,
            2.0 * (s[1] - s[2] * ca),
            2.0 * (s[2] - s[1] * ca),
        );
        let Some(step) = j.lu().solve(&r) else { break };
        let cand = *s - step;
        let r_new = depth_residuals(&cand, a2, b2, c2, ca, cb, cg);
        if !(r_new.norm_squared() < cost) {
            break;
        }
        *s = cand;
        r = r_new;
    }
}

/// Rigid transform taking the world triangle onto the camera-frame triangle.
fn pose_from_triangles(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Option<RigidTransform> {
    let frame = |p: &[Vector3<f64>; 3]| -> Option<Matrix3<f64>> {
        let e1 = (p[1] - p[0]).try_normalize(1e-15)?;
        let e3 = e1.cross(&(p[2] - p[0])).try_normalize(1e-15)?;
        let e2 = e3.cross(&e1);
        Some(Matrix3::from_columns(&[e1, e2, e3]))
    };
    let fw = frame(world)?;
    let fc = frame(cam)?;
    let r = fc * fw.transpose();
    let cw = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    Some(RigidTransform::from_parts_unchecked(r, cc - r * cw))
}

/// Largest residual in normalized image coordinates; infinite when a point is not
/// in front of the camera.
/// Newton steps on the pose itself: six bearing residuals (two tangent-plane
/// coordinates per point) against a rotation increment and a translation increment.
/// Recovers full precision when the depth polish stalls near a double root.
fn polish_pose(problem: &MinimalProblem, mut pose: RigidTransform) -> RigidTransform {
    let tangents = problem.bearings.map(|b| {
        let helper = if b.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = b.cross(&helper).normalize();
        (u, b.cross(&u))
    });
    let residuals = |pose: &RigidTransform| -> Option<Vector6<f64>> {
        let mut r = Vector6::zeros();
        for k in 0..3 {
            let x = pose.apply(&problem.world_points[k]);
            let d = problem.bearings[k].dot(&x);
            if d <= 0.0 {
                return None;
            }
            r[2 * k] = tangents[k].0.dot(&x) / d;
            r[2 * k + 1] = tangents[k].1.dot(&x) / d;
        }
        Some(r)
    };
    let Some(mut r) = residuals(&pose) else { return pose };
    for _ in 0..POSE_NEWTON_STEPS {
        let cost = r.norm_squared();
        if cost == 0.0 {
            break;
        }
        let mut j = Matrix6::zeros();
        for k in 0..3 {
            let rw = pose.rotation() * problem.world_points[k];
            let x = rw + pose.translation();
            let b = problem.bearings[k];
            let d = b.dot(&x);
            // dX/dω = −[RW]×, dX/dt = I.
            let skew = -rw.cross_matrix();
            for (row, axis) in [(2 * k, tangents[k].0), (2 * k + 1, tangents[k].1)] {
                let g = axis / d - b * (axis.dot(&x) / (d * d));
                let gr = skew.transpose() * g;
                for c in 0..3 {
                    j[(row, c)] = gr[c];
                    j[(row, c + 3)] = g[c];
                }
            }
        }
        let Some(step) = j.lu().solve(&(-r)) else { break };
        let w = Vector3::new(step[0], step[1], step[2]);
        let cand = RigidTransform::from_parts_unchecked(
            Rotation3::new(w).matrix() * pose.rotation(),
            pose.translation() + Vector3::new(step[3], step[4], step[5]),
        );
        match residuals(&cand) {
            Some(rn) if rn.norm_squared() < cost => {
                pose = cand;
                r = rn;
            }
            _ => break,
        }
    }
    pose
}

fn max_residual(problem: &MinimalProblem, pose: &RigidTransform) -> f64 {
    let mut worst = 0.0f64;
    for (w, b) in problem.world_points.iter().zip(&problem.bearings) {
        let x = pose.apply(w);
        if x.z <= 0.0 || b.z <= 0.0 {
            // Bearings beyond 90° have no normalized coordinates; use the angle.
            if x.z <= 0.0 && x.dot(b) <= 0.0 {
                return f64::INFINITY;
            }
            let ang = x.normalize().cross(b).norm();
            worst = worst.max(ang);
            continue;
        }
        let dx = x.x / x.z - b.x / b.z;
        let dy = x.y / x.z - b.y / b.z;
        worst = worst.max(dx.hypot(dy));
    }
    worst
}

fn find_duplicate(existing: &[(RigidTransform, f64)], pose: &RigidTransform) -> Option<usize> {
    existing.iter().position(|(p, _)| {
        (p.rotation() - pose.rotation()).norm() < 1e-7
            && (p.translation() - pose.translation()).norm() < 1e-7
    })
}
