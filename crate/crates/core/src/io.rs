//! Session and report files.
//!
//! A session is one JSON document:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "units": { "length": "m", "pixels": "px" },
//!   "cameras": [
//!     { "intrinsics": [9 numbers, row-major], "rotation": [9 numbers, row-major, world→camera],
//!       "translation": [3 numbers], "distortion": [k1, k2, p1, p2, k3] | null,
//!       "image_size": [w, h] | null }
//!   ],
//!   "keypoints3d": [T][J][x, y, z],
//!   "keypoints2d": [N][T][J][u, v, validity],
//!   "gt_extrinsic": [R row-major (9), t (3)]        (optional)
//! }
//! ```
//!
//! `"mm"` lengths are converted to meters on load. Rotations that drift from SO(3)
//! are projected onto the nearest rotation and reported in the load warnings.
//!
//! Reports are JSON with a fixed key order and every float written with 17
//! significant digits, so values survive a save/load cycle bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{
    matrix_from_row_major, matrix_to_row_major, nearest_rotation, rotation_deviation, CameraModel,
    DistortionCoeffs, RigidTransform,
};
use crate::pipeline::CalibrationReport;
use crate::ransac::{Correspondence, CorrespondenceSet, Dims};

pub const SESSION_FORMAT_VERSION: u32 = 1;
pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Drift below this is repaired silently; above it a warning is recorded.
pub const ROTATION_WARN_TOL: f64 = 1e-6;

/// Dense session contents, in meters and pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionData {
    pub cameras: Vec<CameraModel>,
    /// `[frame][joint]`, MoCap frame.
    pub keypoints3d: Vec<Vec<Vector3<f64>>>,
    /// `[camera][frame][joint]` → `(pixel, valid)`.
    pub keypoints2d: Vec<Vec<Vec<(Vector2<f64>, bool)>>>,
    pub gt_extrinsic: Option<RigidTransform>,
}

impl SessionData {
    pub fn dims(&self) -> Dims {
        Dims {
            cameras: self.cameras.len(),
            joints: self.keypoints3d.first().map_or(0, |f| f.len()),
            frames: self.keypoints3d.len(),
        }
    }

    /// One entry per valid `(camera, frame, joint)`, camera-major then frame then joint.
    pub fn to_correspondence_set(&self) -> Result<CorrespondenceSet> {
        let mut entries = Vec::new();
        for (i, per_cam) in self.keypoints2d.iter().enumerate() {
            for (t, per_frame) in per_cam.iter().enumerate() {
                for (j, &(point2d, valid)) in per_frame.iter().enumerate() {
                    if valid {
                        entries.push(Correspondence {
                            cam_index: i,
                            joint_index: j,
                            frame_index: t,
                            point3d: self.keypoints3d[t][j],
                            point2d,
                            valid: true,
                        });
                    }
                }
            }
        }
        CorrespondenceSet::new(self.cameras.clone(), entries, self.dims())
    }
}

/// A loaded session: dense data, the correspondence set built from it, and any
/// load-time repairs.
#[derive(Debug, Clone)]
pub struct LoadedSession {
    pub data: SessionData,
    pub set: CorrespondenceSet,
    pub warnings: Vec<String>,
}

impl LoadedSession {
    pub fn gt_extrinsic(&self) -> Option<&RigidTransform> {
        self.data.gt_extrinsic.as_ref()
    }
}

/// Number that also accepts `null`, `"NaN"` and `"±Infinity"` so that non-finite
/// inputs surface as [`Error::NonFiniteValue`] with a location instead of a parse error.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Num(f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct NumVisitor;
        impl Visitor<'_> for NumVisitor {
            type Value = Num;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Num, E> {
                Ok(Num(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_unit<E: de::Error>(self) -> std::result::Result<Num, E> {
                Ok(Num(f64::NAN))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Num, E> {
                match v.to_ascii_lowercase().as_str() {
                    "nan" => Ok(Num(f64::NAN)),
                    "inf" | "infinity" | "+inf" | "+infinity" => Ok(Num(f64::INFINITY)),
                    "-inf" | "-infinity" => Ok(Num(f64::NEG_INFINITY)),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(NumVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum LengthUnit {
    #[serde(rename = "m")]
    Meters,
    #[serde(rename = "mm")]
    Millimeters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum PixelUnit {
    #[serde(rename = "px")]
    Pixels,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Units {
    length: LengthUnit,
    pixels: PixelUnit,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    intrinsics: [Num; 9],
    rotation: [Num; 9],
    translation: [Num; 3],
    #[serde(default)]
    distortion: Option<[Num; 5]>,
    #[serde(default)]
    image_size: Option<[u32; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionDoc {
    format_version: u32,
    units: Units,
    cameras: Vec<CameraDoc>,
    keypoints3d: Vec<Vec<[Num; 3]>>,
    keypoints2d: Vec<Vec<Vec<[Num; 3]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_extrinsic: Option<[Num; 12]>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn parse_error(e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = e.path().to_string();
    let inner = e.into_inner();
    let location = if path == "." || path.is_empty() {
        format!("line {} column {}", inner.line(), inner.column())
    } else {
        format!("{path} (line {} column {})", inner.line(), inner.column())
    };
    Error::Parse {
        location,
        message: inner.to_string(),
    }
}

fn parse_json<'de, T: Deserialize<'de>>(text: &'de str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(parse_error)?;
    de.end().map_err(|e| Error::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    Ok(value)
}

fn finite<const N: usize>(v: &[Num; N], location: impl Fn(usize) -> String) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (k, n) in v.iter().enumerate() {
        if !n.0.is_finite() {
            return Err(Error::NonFiniteValue { location: location(k) });
        }
        out[k] = n.0;
    }
    Ok(out)
}

/// Projects onto SO(3) when needed; returns a warning when drift exceeded the tolerance.
fn repair_rotation(m: Matrix3<f64>, what: &str) -> Result<(Matrix3<f64>, Option<String>)> {
    let dev = rotation_deviation(&m);
    if dev <= 1e-12 {
        return Ok((m, None));
    }
    let fixed = nearest_rotation(&m)
        .map_err(|e| Error::InvalidCamera(format!("{what}: {e}")))?;
    let warning = (dev > ROTATION_WARN_TOL).then(|| {
        format!("{what}: rotation deviates from SO(3) by {dev:.3e}; replaced by nearest rotation")
    });
    Ok((fixed, warning))
}

/// Parses a session document from text.
pub fn parse_session(text: &str) -> Result<LoadedSession> {
    let probe: VersionProbe = parse_json_lenient(text)?;
    if probe.format_version != SESSION_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(probe.format_version));
    }
    let doc: SessionDoc = parse_json(text)?;
    let scale = match doc.units.length {
        LengthUnit::Meters => 1.0,
        LengthUnit::Millimeters => 1e-3,
    };
    let mut warnings = Vec::new();

    if doc.cameras.is_empty() {
        return Err(Error::DimensionMismatch("session has no cameras".into()));
    }
    let mut cameras = Vec::with_capacity(doc.cameras.len());
    for (i, c) in doc.cameras.iter().enumerate() {
        let k = finite(&c.intrinsics, |n| format!("cameras[{i}].intrinsics[{n}]"))?;
        let r = finite(&c.rotation, |n| format!("cameras[{i}].rotation[{n}]"))?;
        let t = finite(&c.translation, |n| format!("cameras[{i}].translation[{n}]"))?;
        let dist = match &c.distortion {
            Some(d) => Some(DistortionCoeffs::from_opencv(finite(d, |n| {
                format!("cameras[{i}].distortion[{n}]")
            })?)?),
            None => None,
        };
        let (rot, warn) = repair_rotation(matrix_from_row_major(&r), &format!("cameras[{i}]"))?;
        warnings.extend(warn);
        let cam = CameraModel::new(
            matrix_from_row_major(&k),
            rot,
            Vector3::from(t) * scale,
            None,
            c.image_size.map(|[w, h]| (w, h)),
        )
        .map_err(|e| match e {
            Error::InvalidCamera(m) => Error::InvalidCamera(format!("cameras[{i}]: {m}")),
            other => other,
        })?
        .with_distortion(dist);
        cameras.push(cam);
    }

    let frames = doc.keypoints3d.len();
    let joints = doc.keypoints3d.first().map_or(0, |f| f.len());
    if frames == 0 || joints == 0 {
        return Err(Error::DimensionMismatch("keypoints3d is empty".into()));
    }
    let mut keypoints3d = Vec::with_capacity(frames);
    for (t, row) in doc.keypoints3d.iter().enumerate() {
        if row.len() != joints {
            return Err(Error::DimensionMismatch(format!(
                "keypoints3d[{t}] has {} joints, expected {joints}",
                row.len()
            )));
        }
        let mut out = Vec::with_capacity(joints);
        for (j, p) in row.iter().enumerate() {
            let v = finite(p, |n| format!("keypoints3d[{t}][{j}][{n}]"))?;
            out.push(Vector3::from(v) * scale);
        }
        keypoints3d.push(out);
    }

    if doc.keypoints2d.len() != cameras.len() {
        return Err(Error::DimensionMismatch(format!(
            "keypoints2d has {} cameras, cameras block has {}",
            doc.keypoints2d.len(),
            cameras.len()
        )));
    }
    let mut keypoints2d = Vec::with_capacity(cameras.len());
    for (i, per_cam) in doc.keypoints2d.iter().enumerate() {
        if per_cam.len() != frames {
            return Err(Error::DimensionMismatch(format!(
                "keypoints2d[{i}] has {} frames, keypoints3d has {frames}",
                per_cam.len()
            )));
        }
        let mut cam_out = Vec::with_capacity(frames);
        for (t, per_frame) in per_cam.iter().enumerate() {
            if per_frame.len() != joints {
                return Err(Error::DimensionMismatch(format!(
                    "keypoints2d[{i}][{t}] has {} joints, expected {joints}",
                    per_frame.len()
                )));
            }
            let mut frame_out = Vec::with_capacity(joints);
            for (j, p) in per_frame.iter().enumerate() {
                let [u, v, flag] = finite(p, |n| format!("keypoints2d[{i}][{t}][{j}][{n}]"))?;
                let valid = if flag == 1.0 {
                    true
                } else if flag == 0.0 {
                    false
                } else {
                    return Err(Error::Parse {
                        location: format!("keypoints2d[{i}][{t}][{j}][2]"),
                        message: format!("validity must be 0 or 1, got {flag}"),
                    });
                };
                frame_out.push((Vector2::new(u, v), valid));
            }
            cam_out.push(frame_out);
        }
        keypoints2d.push(cam_out);
    }

    let gt_extrinsic = match &doc.gt_extrinsic {
        Some(g) => {
            let v = finite(g, |n| format!("gt_extrinsic[{n}]"))?;
            let mut r = [0.0; 9];
            r.copy_from_slice(&v[..9]);
            let (rot, warn) = repair_rotation(matrix_from_row_major(&r), "gt_extrinsic")?;
            warnings.extend(warn);
            Some(RigidTransform::new(rot, Vector3::new(v[9], v[10], v[11]) * scale)?)
        }
        None => None,
    };

    for w in &warnings {
        log::warn!("{w}");
    }
    let data = SessionData {
        cameras,
        keypoints3d,
        keypoints2d,
        gt_extrinsic,
    };
    let set = data.to_correspondence_set()?;
    Ok(LoadedSession {
        data,
        set,
        warnings,
    })
}

// The version probe must not fail on fields it does not know about.
fn parse_json_lenient<'de, T: Deserialize<'de>>(text: &'de str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(parse_error)
}

pub fn load_session(path: impl AsRef<Path>) -> Result<LoadedSession> {
    let text = fs::read_to_string(path)?;
    parse_session(&text)
}

fn session_doc(data: &SessionData) -> SessionDoc {
    let nums = |v: &[f64]| -> Vec<Num> { v.iter().map(|&x| Num(x)).collect() };
    let cameras = data
        .cameras
        .iter()
        .map(|c| CameraDoc {
            intrinsics: matrix_to_row_major(c.intrinsics()).map(Num),
            rotation: matrix_to_row_major(c.rot_wc()).map(Num),
            translation: [c.trans_wc().x, c.trans_wc().y, c.trans_wc().z].map(Num),
            distortion: c.distortion().map(|d| d.to_opencv().map(Num)),
            image_size: c.image_size().map(|(w, h)| [w, h]),
        })
        .collect();
    let keypoints3d = data
        .keypoints3d
        .iter()
        .map(|row| row.iter().map(|p| [Num(p.x), Num(p.y), Num(p.z)]).collect())
        .collect();
    let keypoints2d = data
        .keypoints2d
        .iter()
        .map(|cam| {
            cam.iter()
                .map(|frame| {
                    frame
                        .iter()
                        .map(|(p, valid)| {
                            // Invalid observations may carry garbage; keep the file valid JSON.
                            let clean = |x: f64| if x.is_finite() { x } else { 0.0 };
                            [Num(clean(p.x)), Num(clean(p.y)), Num(if *valid { 1.0 } else { 0.0 })]
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let gt_extrinsic = data.gt_extrinsic.map(|g| {
        let v = nums(&g.to_flat());
        let mut out = [Num(0.0); 12];
        out.copy_from_slice(&v);
        out
    });
    SessionDoc {
        format_version: SESSION_FORMAT_VERSION,
        units: Units {
            length: LengthUnit::Meters,
            pixels: PixelUnit::Pixels,
        },
        cameras,
        keypoints3d,
        keypoints2d,
        gt_extrinsic,
    }
}

/// Writes a session document (lengths in meters).
pub fn write_session(data: &SessionData, mut out: impl Write) -> Result<()> {
    serde_json::to_writer(&mut out, &session_doc(data)).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn save_session(data: &SessionData, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_session(data, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Pretty JSON with every float written as `d.dddddddddddddddde±x` (17 significant digits).
struct ReportFormatter {
    pretty: serde_json::ser::PrettyFormatter<'static>,
}

impl serde_json::ser::Formatter for ReportFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.pretty.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.pretty.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_object_value(w)
    }
}

pub fn report_to_string(report: &CalibrationReport) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        ReportFormatter {
            pretty: serde_json::ser::PrettyFormatter::with_indent(b"  "),
        },
    );
    report.serialize(&mut ser).map_err(std::io::Error::from)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn parse_report(text: &str) -> Result<CalibrationReport> {
    let probe: VersionProbe = parse_json_lenient(text)?;
    if probe.format_version != REPORT_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(probe.format_version));
    }
    parse_json(text)
}

pub fn save_report(report: &CalibrationReport, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, report_to_string(report)?)?;
    Ok(())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<CalibrationReport> {
    parse_report(&fs::read_to_string(path)?)
}

/// Parses 12 numbers (rotation row-major, then translation) separated by commas
/// and/or whitespace. Slight rotation drift is projected away.
pub fn parse_extrinsic_numbers(text: &str) -> Result<RigidTransform> {
    let values: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>().map_err(|e| Error::Parse {
                location: format!("extrinsic value {s:?}"),
                message: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    if values.len() != 12 {
        return Err(Error::DimensionMismatch(format!(
            "extrinsic needs 12 numbers, got {}",
            values.len()
        )));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            location: format!("extrinsic[{k}]"),
        });
    }
    let mut r = [0.0; 9];
    r.copy_from_slice(&values[..9]);
    let (rot, _) = repair_rotation(matrix_from_row_major(&r), "extrinsic")?;
    RigidTransform::new(rot, Vector3::new(values[9], values[10], values[11]))
}
