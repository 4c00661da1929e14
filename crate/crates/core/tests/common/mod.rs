//! Independent reference implementations used as test oracles. Written against
//! plain arrays so they share no code with the library's projection path.
#![allow(dead_code)]

use mocap_calib::geometry::{matrix_to_row_major, CameraModel};
use mocap_calib::ransac::CorrespondenceSet;

pub type M3 = [[f64; 3]; 3];

pub fn matmul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn matvec(a: &M3, v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

pub fn rows(m: &nalgebra::Matrix3<f64>) -> M3 {
    let r = matrix_to_row_major(m);
    [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]]
}

/// `Rz(γ)·Ry(β)·Rx(α)` from the textbook elementary rotations.
pub fn euler_zyx(alpha: f64, beta: f64, gamma: f64) -> M3 {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rz = [[cg, -sg, 0.0], [sg, cg, 0.0], [0.0, 0.0, 1.0]];
    matmul(&rz, &matmul(&ry, &rx))
}

/// Pixel of a MoCap point through `(R_m, t_m)` and a camera, or `None` behind it.
pub fn project(cam: &CameraModel, rm: &M3, tm: &[f64; 3], w: &[f64; 3]) -> Option<[f64; 2]> {
    let xw = matvec(rm, w);
    let xw = [xw[0] + tm[0], xw[1] + tm[1], xw[2] + tm[2]];
    let rc = rows(cam.rot_wc());
    let tc = cam.trans_wc();
    let xc = matvec(&rc, &xw);
    let xc = [xc[0] + tc.x, xc[1] + tc.y, xc[2] + tc.z];
    if xc[2] <= 0.0 {
        return None;
    }
    let (mut x, mut y) = (xc[0] / xc[2], xc[1] / xc[2]);
    if let Some(d) = cam.distortion() {
        let r2 = x * x + y * y;
        let radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2 + d.k3 * r2 * r2 * r2;
        let xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
        x = xd;
        y = yd;
    }
    let k = rows(cam.intrinsics());
    Some([k[0][0] * x + k[0][1] * y + k[0][2], k[1][1] * y + k[1][2]])
}

/// `½·mean‖r‖²` over valid entries on frames `t ≡ 0 (mod stride)` in front of their camera.
pub fn loss(set: &CorrespondenceSet, params: &[f64; 6], stride: usize) -> (f64, usize) {
    let rm = euler_zyx(params[0], params[1], params[2]);
    let tm = [params[3], params[4], params[5]];
    let mut sum = 0.0;
    let mut n = 0;
    for e in set.entries() {
        if !e.valid || e.frame_index % stride != 0 {
            continue;
        }
        let w = [e.point3d.x, e.point3d.y, e.point3d.z];
        if let Some(p) = project(set.camera(e), &rm, &tm, &w) {
            let dx = p[0] - e.point2d.x;
            let dy = p[1] - e.point2d.y;
            sum += dx * dx + dy * dy;
            n += 1;
        }
    }
    (if n == 0 { 0.0 } else { sum / (2.0 * n as f64) }, n)
}

/// Central finite differences of [`loss`].
pub fn numeric_gradient(set: &CorrespondenceSet, params: &[f64; 6], stride: usize, h: [f64; 6]) -> [f64; 6] {
    let mut g = [0.0; 6];
    for k in 0..6 {
        let mut p = *params;
        p[k] += h[k];
        let fp = loss(set, &p, stride).0;
        p[k] = params[k] - h[k];
        let fm = loss(set, &p, stride).0;
        g[k] = (fp - fm) / (2.0 * h[k]);
    }
    g
}

/// Geodesic angle between two rotations, degrees, from the chordal distance
/// `‖A − B‖_F = 2√2·sin(θ/2)`.
pub fn angle_deg(a: &M3, b: &M3) -> f64 {
    let mut f2 = 0.0;
    for i in 0..3 {
        for k in 0..3 {
            f2 += (a[i][k] - b[i][k]).powi(2);
        }
    }
    (2.0 * (f2.sqrt() / (2.0 * 2f64.sqrt())).min(1.0).asin()).to_degrees()
}

/// Mean of `|r|` over entries selected by `keep`, using the oracle projection.
pub fn mean_residual_where(
    set: &CorrespondenceSet,
    t: &mocap_calib::RigidTransform,
    mut keep: impl FnMut(usize) -> bool,
) -> f64 {
    let rm = rows(t.rotation());
    let tm = [t.translation().x, t.translation().y, t.translation().z];
    let (mut s, mut n) = (0.0, 0usize);
    for (id, e) in set.entries().iter().enumerate() {
        if !e.valid || !keep(id) {
            continue;
        }
        let w = [e.point3d.x, e.point3d.y, e.point3d.z];
        if let Some(p) = project(set.camera(e), &rm, &tm, &w) {
            s += (p[0] - e.point2d.x).hypot(p[1] - e.point2d.y);
            n += 1;
        }
    }
    s / n as f64
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Kolmogorov–Smirnov statistic of `samples` against the Rayleigh(σ) CDF.
pub fn ks_rayleigh(mut samples: Vec<f64>, sigma: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in samples.iter().enumerate() {
        let f = 1.0 - (-x * x / (2.0 * sigma * sigma)).exp();
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

/// A random well-conditioned minimal problem: points at depth 1–8 m inside a 60°
/// cone, mapped into the MoCap frame by a uniformly random pose. Returns the problem
/// and the generating camera-from-MoCap pose.
pub fn random_minimal_problem(
    rng: &mut impl rand::Rng,
) -> (mocap_calib::MinimalProblem, mocap_calib::RigidTransform) {
    use nalgebra::Vector3;
    loop {
        let pose = mocap_calib::RigidTransform::new(
            mocap_calib::synth::random_rotation(rng),
            Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
        )
        .unwrap();
        let cam_pts: [Vector3<f64>; 3] = std::array::from_fn(|_| {
            let half = 30f64.to_radians().tan();
            let d = rng.random_range(1.0..8.0);
            Vector3::new(rng.random_range(-half..half), rng.random_range(-half..half), 1.0) * d
        });
        let area = 0.5 * (cam_pts[1] - cam_pts[0]).cross(&(cam_pts[2] - cam_pts[0])).norm();
        if area < 1e-2 {
            continue;
        }
        let inv = pose.inverse();
        let world = cam_pts.map(|p| inv.apply(&p));
        let bearings = cam_pts.map(|p| p.normalize());
        return (mocap_calib::MinimalProblem::new(world, bearings).unwrap(), pose);
    }
}

/// Largest normalized-coordinate reprojection error of a minimal problem under a pose.
pub fn minimal_residual(problem: &mocap_calib::MinimalProblem, pose: &mocap_calib::RigidTransform) -> f64 {
    let mut worst: f64 = 0.0;
    for (w, b) in problem.world_points().iter().zip(problem.bearings()) {
        let x = pose.apply(w);
        if x.z <= 0.0 {
            return f64::INFINITY;
        }
        worst = worst.max((x.x / x.z - b.x / b.z).hypot(x.y / x.z - b.y / b.z));
    }
    worst
}

use mocap_calib::pipeline::{ConfigEcho, CorrespondenceCounts, Timing};
use mocap_calib::synth::{generate, SynthConfig};
use mocap_calib::{CalibrationReport, DistortionCoeffs, Error, EulerPose, RansacConfig, RefineConfig, RigidTransform};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Small random session, with or without distortion and corruption.
pub fn random_synth(rng: &mut ChaCha8Rng) -> mocap_calib::SynthSession {
    let distortion = rng.random_bool(0.5).then(|| DistortionCoeffs {
        k1: rng.random_range(-0.1..0.1),
        k2: rng.random_range(-0.01..0.01),
        k3: 0.0,
        p1: rng.random_range(-1e-3..1e-3),
        p2: rng.random_range(-1e-3..1e-3),
    });
    generate(&SynthConfig {
        n_cameras: rng.random_range(1..4),
        n_joints: rng.random_range(3..8),
        n_frames: rng.random_range(1..6),
        noise_sigma: rng.random_range(0.0..3.0),
        outlier_fraction: rng.random_range(0.0..0.3),
        invalid_fraction: rng.random_range(0.0..0.3),
        distortion,
        seed: rng.random(),
        ..Default::default()
    })
    .unwrap()
}

pub fn random_f64(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => rng.random_range(-1.0..1.0),
        1 => rng.random_range(0.0..1e4),
        2 => rng.random::<f64>() * 10f64.powi(rng.random_range(-300..300)),
        _ => (rng.random_range(0..100) as f64) / 4.0,
    }
}

pub fn random_report(rng: &mut ChaCha8Rng) -> CalibrationReport {
    let t = RigidTransform::new(mocap_calib::synth::random_rotation(rng), Vector3::from_fn(|_, _| random_f64(rng))).unwrap();
    let init = RigidTransform::new(mocap_calib::synth::random_rotation(rng), Vector3::from_fn(|_, _| random_f64(rng))).unwrap();
    let gt = rng.random_bool(0.5);
    CalibrationReport {
        format_version: 1,
        transform: t,
        euler: EulerPose::from_transform(&t),
        init_transform: init,
        mpjpe_init: random_f64(rng).abs(),
        mpjpe_refined: random_f64(rng).abs(),
        mpjpe_gt: gt.then(|| random_f64(rng).abs()),
        rotation_error_deg: gt.then(|| random_f64(rng).abs()),
        translation_error_m: gt.then(|| random_f64(rng).abs()),
        inlier_ratio: rng.random(),
        inlier_count: rng.random_range(0..100_000),
        refinement_rejected: rng.random(),
        final_loss: random_f64(rng).abs(),
        correspondence_counts: CorrespondenceCounts { total: 10, valid: 9, positive_depth: 8 },
        config: ConfigEcho {
            ransac: RansacConfig { tau: random_f64(rng).abs() + 0.1, seed: rng.random(), ..Default::default() },
            refine: RefineConfig { lr_rotation: rng.random(), inliers_only: rng.random(), ..Default::default() },
        },
        seed: rng.random(),
        warnings: (0..rng.random_range(0..3)).map(|k| format!("warning \"{k}\" \u{e9}")).collect(),
        timing: Timing { ransac_ms: rng.random(), refine_ms: rng.random(), total_ms: rng.random(), ms_per_frame: rng.random() },
    }
}

/// Smallest valid session document: one camera, one frame, three joints.
pub fn minimal_session() -> Value {
    json!({
        "format_version": 1,
        "units": { "length": "m", "pixels": "px" },
        "cameras": [{
            "intrinsics": [1000.0, 0.0, 640.0, 0.0, 1000.0, 360.0, 0.0, 0.0, 1.0],
            "rotation": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            "translation": [0.0, 0.0, 0.0]
        }],
        "keypoints3d": [[[0.0, 0.0, 2.0], [0.1, 0.0, 2.0], [0.0, 0.1, 2.0]]],
        "keypoints2d": [[[[640.0, 360.0, 1], [690.0, 360.0, 1], [640.0, 410.0, 0]]]]
    })
}

pub struct MalformedCase {
    pub name: &'static str,
    pub text: String,
    pub expected: fn(&Error) -> bool,
}

/// Ten hand-built broken session documents and the error each must produce.
pub fn malformed_corpus() -> Vec<MalformedCase> {
    fn edit(f: impl FnOnce(&mut Value)) -> String {
        let mut v = minimal_session();
        f(&mut v);
        v.to_string()
    }
    vec![
        MalformedCase {
            name: "syntax error",
            text: minimal_session().to_string().replace("]]]]", "]]]"),
            expected: |e| matches!(e, Error::Parse { .. }),
        },
        MalformedCase {
            name: "unsupported version",
            text: edit(|v| v["format_version"] = json!(2)),
            expected: |e| matches!(e, Error::UnsupportedVersion(2)),
        },
        MalformedCase {
            name: "camera count mismatch",
            text: edit(|v| {
                let cam = v["cameras"][0].clone();
                v["cameras"].as_array_mut().unwrap().push(cam);
            }),
            expected: |e| matches!(e, Error::DimensionMismatch(m) if m.contains("keypoints2d has 1 cameras")),
        },
        MalformedCase {
            name: "frame count mismatch",
            text: edit(|v| {
                let f = v["keypoints3d"][0].clone();
                v["keypoints3d"].as_array_mut().unwrap().push(f);
            }),
            expected: |e| matches!(e, Error::DimensionMismatch(_)),
        },
        MalformedCase {
            name: "ragged joints",
            text: edit(|v| {
                v["keypoints2d"][0][0].as_array_mut().unwrap().pop();
            }),
            expected: |e| matches!(e, Error::DimensionMismatch(m) if m.contains("keypoints2d[0][0]")),
        },
        MalformedCase {
            name: "nan coordinate",
            text: edit(|v| v["keypoints3d"][0][1][2] = json!("nan")),
            expected: |e| matches!(e, Error::NonFiniteValue { location } if location == "keypoints3d[0][1][2]"),
        },
        MalformedCase {
            name: "null intrinsic",
            text: edit(|v| v["cameras"][0]["intrinsics"][4] = Value::Null),
            expected: |e| matches!(e, Error::NonFiniteValue { location } if location == "cameras[0].intrinsics[4]"),
        },
        MalformedCase {
            name: "missing cameras",
            text: edit(|v| {
                v.as_object_mut().unwrap().remove("cameras");
            }),
            expected: |e| matches!(e, Error::Parse { message, .. } if message.contains("cameras")),
        },
        MalformedCase {
            name: "bad validity flag",
            text: edit(|v| v["keypoints2d"][0][0][1][2] = json!(0.5)),
            expected: |e| matches!(e, Error::Parse { location, .. } if location == "keypoints2d[0][0][1][2]"),
        },
        MalformedCase {
            name: "unknown length unit",
            text: edit(|v| v["units"]["length"] = json!("cm")),
            expected: |e| matches!(e, Error::Parse { location, .. } if location.contains("units.length")),
        },
    ]
}
