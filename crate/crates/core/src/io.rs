//! File formats: intrinsics, matches, images, depth, poses, JSON/CSV results.
//!
//! Every reader reports the offending path, and text readers also report the
//! 1-based line number of the first bad record.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageError, Luma};
use nalgebra::Matrix3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Correspondence, PoseSE3};
use crate::metrics::{DepthEvalResult, PoseEvalSummary};
use crate::raster::{DepthMap, ImageBuffer};

/// Header line required on match files.
pub const MATCHES_HEADER: [&str; 4] = ["x1", "y1", "x2", "y2"];

/// Default raw-to-metric factor for 16-bit depth PNGs (`depth = raw / scale`).
pub const DEFAULT_DEPTH_SCALE: f64 = 256.0;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn image_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

fn parse_numbers(path: &Path, line_no: u64, line: &str) -> Result<Vec<f64>> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|tok| {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("not a number: {tok:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, line_no, format!("non-finite value {tok}")));
            }
            Ok(v)
        })
        .collect()
}

/// Content lines with their 1-based numbers; blank lines and `#` comments skipped.
fn content_lines(text: &str) -> impl Iterator<Item = (u64, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i as u64 + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

// ---------------------------------------------------------------------------
// Intrinsics

/// Reads `fx fy cx cy [skew]` or nine row-major numbers of K.
pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut values = Vec::new();
    let mut first_line = 0;
    for (no, line) in content_lines(&text) {
        if first_line == 0 {
            first_line = no;
        }
        values.extend(parse_numbers(path, no, line)?);
    }
    let line = first_line.max(1);
    let k = match values.len() {
        4 | 5 => CameraIntrinsics::with_skew(
            values[0],
            values[1],
            values[2],
            values[3],
            values.get(4).copied().unwrap_or(0.0),
        ),
        9 => CameraIntrinsics::from_matrix(&Matrix3::from_row_slice(&values)),
        n => {
            return Err(Error::parse(
                path,
                line,
                format!("expected 4, 5 or 9 numbers, found {n}"),
            ))
        }
    };
    k.map_err(|e| Error::parse(path, line, e.to_string()))
}

pub fn write_intrinsics(path: impl AsRef<Path>, k: &CameraIntrinsics) -> Result<()> {
    let line = format!("{} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.skew);
    write_bytes(path.as_ref(), line.as_bytes())
}

// ---------------------------------------------------------------------------
// Matches

pub fn read_matches(path: impl AsRef<Path>) -> Result<Vec<Correspondence>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != MATCHES_HEADER {
        return Err(Error::parse(
            path,
            1,
            format!("expected header x1,y1,x2,y2, found {:?}", header.as_slice()),
        ));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = parse_numbers(path, line, &record.iter().collect::<Vec<_>>().join(" "))?;
        if row.len() != 4 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 4 fields, found {}", row.len()),
            ));
        }
        out.push(
            Correspondence::new(row[0], row[1], row[2], row[3])
                .map_err(|e| Error::parse(path, line, e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn write_matches(path: impl AsRef<Path>, matches: &[Correspondence]) -> Result<()> {
    let mut s = MATCHES_HEADER.join(",");
    s.push('\n');
    for m in matches {
        s.push_str(&format!("{},{},{},{}\n", m.x1.x(), m.x1.y(), m.x2.x(), m.x2.y()));
    }
    write_bytes(path.as_ref(), s.as_bytes())
}

// ---------------------------------------------------------------------------
// Images

/// Reads a PNG as grey or RGB in [0, 1]; alpha is dropped.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let (channels, data): (usize, Vec<f64>) = if gray {
        (
            1,
            img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        )
    } else {
        (
            3,
            img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        )
    };
    ImageBuffer::new(w, h, channels, data).map_err(|e| Error::format(path, e.to_string()))
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit grey or RGB PNG.
pub fn write_image(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let raw: Vec<u8> = img.data().iter().map(|&v| quantize8(v)).collect();
    let color = if img.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    write_encoded(path, &raw, w, h, color)
}

fn write_encoded(
    path: &Path,
    raw: &[u8],
    w: u32,
    h: u32,
    color: image::ExtendedColorType,
) -> Result<()> {
    use image::ImageEncoder as _;
    let mut bytes = Vec::new();
    image::codecs::png::PngEncoder::new(&mut bytes)
        .write_image(raw, w, h, color)
        .map_err(|e| image_error(path, e))?;
    write_bytes(path, &bytes)
}

/// Maps `t` in [0, 1] onto a dark-blue → red → yellow ramp.
fn heat_color(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 0.2],
        [0.3, 0.0, 0.6],
        [0.85, 0.2, 0.3],
        [1.0, 0.6, 0.0],
        [1.0, 1.0, 0.6],
    ];
    let x = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = quantize8(STOPS[i][c] * (1.0 - f) + STOPS[i + 1][c] * f);
    }
    out
}

/// Writes a false-colour PNG of a scalar field, normalised to its valid
/// range; invalid pixels are black. Returns the `(min, max)` used.
pub fn write_false_color(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    values: &[f64],
    valid: &[bool],
) -> Result<(f64, f64)> {
    let path = path.as_ref();
    if values.len() != width * height || valid.len() != values.len() || values.is_empty() {
        return Err(Error::Shape(format!(
            "false-colour map {width}x{height} given {} values",
            values.len()
        )));
    }
    let (lo, hi) = values
        .iter()
        .zip(valid)
        .filter(|(v, ok)| **ok && v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (v, _)| {
            (lo.min(*v), hi.max(*v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut raw = Vec::with_capacity(values.len() * 3);
    for (v, ok) in values.iter().zip(valid) {
        if *ok && v.is_finite() {
            raw.extend(heat_color((v - lo) / span));
        } else {
            raw.extend([0, 0, 0]);
        }
    }
    write_encoded(
        path,
        &raw,
        width as u32,
        height as u32,
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(if lo <= hi { (lo, hi) } else { (0.0, 0.0) })
}

// ---------------------------------------------------------------------------
// Depth

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSidecar {
    pub scale: f64,
}

/// Sidecar path for a 16-bit depth PNG: same stem, `.json` extension.
pub fn depth_sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

/// Writes depth as 16-bit PNG (`raw = round(depth * scale)`, 0 = invalid)
/// plus the sidecar recording `scale`.
pub fn write_depth_png(path: impl AsRef<Path>, depth: &DepthMap, scale: f64) -> Result<()> {
    let path = path.as_ref();
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidInput(format!("depth scale must be positive, got {scale}")));
    }
    let mut raw = Vec::with_capacity(depth.len());
    for (d, ok) in depth.values().iter().zip(depth.valid()) {
        if !*ok {
            raw.push(0u16);
            continue;
        }
        let r = (d * scale).round();
        if !(1.0..=u16::MAX as f64).contains(&r) {
            return Err(Error::format(
                path,
                format!("depth {d} not representable at scale {scale}"),
            ));
        }
        raw.push(r as u16);
    }
    let buf = image::ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(
        depth.width() as u32,
        depth.height() as u32,
        raw,
    )
    .ok_or_else(|| Error::format(path, "depth buffer size mismatch"))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))?;
    write_json(depth_sidecar_path(path), &DepthSidecar { scale })
}

pub fn read_depth_png(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let sidecar: DepthSidecar = read_json(depth_sidecar_path(path))?;
    if !(sidecar.scale.is_finite() && sidecar.scale > 0.0) {
        return Err(Error::format(
            depth_sidecar_path(path),
            format!("scale must be positive, got {}", sidecar.scale),
        ));
    }
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::format(path, "depth PNG must be 16-bit greyscale"));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    let valid: Vec<bool> = raw.iter().map(|&r| r > 0).collect();
    let values = raw.iter().map(|&r| r as f64 / sidecar.scale).collect();
    DepthMap::new(w, h, values, valid).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes single-channel little-endian PFM (rows bottom to top); invalid
/// pixels are stored as 0. Values are narrowed to `f32`.
pub fn write_depth_pfm(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let (w, h) = (depth.width(), depth.height());
    let mut bytes = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            let v = depth.get(x, y).unwrap_or(0.0) as f32;
            bytes.write_all(&v.to_le_bytes()).expect("write to Vec");
        }
    }
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_depth_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    // Header: three whitespace-terminated tokens.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PFM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte before the raster
    if tokens[0] != "Pf" {
        return Err(Error::format(
            path,
            format!("expected single-channel PFM (Pf), found {:?}", tokens[0]),
        ));
    }
    let dims: Vec<usize> = tokens[1..3]
        .iter()
        .map(|t| t.parse().map_err(|_| Error::format(path, format!("bad dimension {t:?}"))))
        .collect::<Result<_>>()?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::format(path, format!("bad PFM scale {:?}", tokens[3])))?;
    let (w, h) = (dims[0], dims[1]);
    let little = scale < 0.0;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() < w * h * 4 {
        return Err(Error::format(
            path,
            format!("expected {} raster bytes, found {}", w * h * 4, body.len()),
        ));
    }
    let mut values = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for (k, chunk) in body.chunks_exact(4).take(w * h).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) } as f64;
        let (x, row) = (k % w, k / w);
        let i = (h - 1 - row) * w + x;
        if v.is_finite() && v > 0.0 {
            values[i] = v;
            valid[i] = true;
        }
    }
    DepthMap::new(w, h, values, valid).map_err(|e| Error::format(path, e.to_string()))
}

/// Dispatches on extension: `.pfm` or 16-bit `.png` with sidecar.
pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("pfm") => read_depth_pfm(path),
        Some("png") => read_depth_png(path),
        _ => Err(Error::format(path, "depth must be .png (16-bit) or .pfm")),
    }
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("pfm") => write_depth_pfm(path, depth),
        Some("png") => write_depth_png(path, depth, DEFAULT_DEPTH_SCALE),
        _ => Err(Error::format(path, "depth must be .png (16-bit) or .pfm")),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

// ---------------------------------------------------------------------------
// Poses

/// KITTI odometry layout: one row-major 3×4 `[R | t]` per line.
pub fn read_kitti_poses(path: impl AsRef<Path>) -> Result<Vec<PoseSE3>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (no, line) in content_lines(&text) {
        let v = parse_numbers(path, no, line)?;
        let arr: [f64; 12] = v.as_slice().try_into().map_err(|_| {
            Error::parse(path, no, format!("expected 12 numbers, found {}", v.len()))
        })?;
        out.push(PoseSE3::from_row_major(&arr).map_err(|e| Error::parse(path, no, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_kitti_poses(path: impl AsRef<Path>, poses: &[PoseSE3]) -> Result<()> {
    let mut s = String::new();
    for p in poses {
        let (r, t) = (&p.rotation, &p.translation);
        let row: Vec<String> = (0..3)
            .flat_map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]])
            .map(|v| v.to_string())
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    write_bytes(path.as_ref(), s.as_bytes())
}

// ---------------------------------------------------------------------------
// JSON / CSV results

/// Pretty JSON whose floats carry 17 significant digits; NaN and infinities
/// become `null`.
struct FullPrecision<'a>(serde_json::ser::PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident($($arg:ident : $ty:ty),*);)*) => {$(
        fn $name<W: ?Sized + std::io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> std::io::Result<()> {
            self.0.$name(w $(, $arg)*)
        }
    )*};
}

impl serde_json::ser::Formatter for FullPrecision<'_> {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        write!(w, "{v:.16e}")
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f32) -> std::io::Result<()> {
        self.write_f64(w, v as f64)
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let fmt = FullPrecision(serde_json::ser::PrettyFormatter::with_indent(b"  "));
    let mut ser = serde_json::Serializer::with_formatter(&mut out, fmt);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::InvalidInput(format!("JSON serialisation: {e}")))?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_bytes(path.as_ref(), to_json_string(value)?.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line() as u64, e.to_string()))
}

/// One labelled row of depth metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMetricsRow {
    pub label: String,
    pub metrics: DepthEvalResult,
}

/// CSV with a `label` column followed by the seven metric columns.
pub fn write_depth_metrics_csv(path: impl AsRef<Path>, rows: &[DepthMetricsRow]) -> Result<()> {
    let mut s = String::from("label,");
    s.push_str(&DepthEvalResult::COLUMNS.join(","));
    s.push('\n');
    for row in rows {
        if row.label.contains([',', '"', '\n']) {
            return Err(Error::InvalidInput(format!("label {:?} needs quoting", row.label)));
        }
        s.push_str(&row.label);
        for v in row.metrics.to_array() {
            s.push_str(&format!(",{v:.16e}"));
        }
        s.push('\n');
    }
    write_bytes(path.as_ref(), s.as_bytes())
}

pub fn read_depth_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<DepthMetricsRow>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let expected: Vec<&str> = std::iter::once("label")
        .chain(DepthEvalResult::COLUMNS)
        .collect();
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).eq(expected.iter().copied()) => {}
        Some((no, _)) => {
            return Err(Error::parse(path, no, format!("expected header {}", expected.join(","))))
        }
        None => return Err(Error::parse(path, 1, "missing header")),
    }
    lines
        .map(|(no, line)| {
            let (label, rest) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(path, no, "missing metric columns"))?;
            let v = parse_numbers(path, no, rest)?;
            let arr: [f64; 7] = v.as_slice().try_into().map_err(|_| {
                Error::parse(path, no, format!("expected 7 metrics, found {}", v.len()))
            })?;
            Ok(DepthMetricsRow {
                label: label.trim().to_string(),
                metrics: DepthEvalResult::from_array(arr),
            })
        })
        .collect()
}

/// Column order of the trajectory-metrics CSV.
pub const POSE_METRICS_COLUMNS: [&str; 6] = [
    "snippets",
    "snippet_length",
    "ate_mean",
    "ate_std",
    "atde_mean",
    "atde_std",
];

/// One-row CSV mirror of a trajectory evaluation.
pub fn write_pose_metrics_csv(path: impl AsRef<Path>, s: &PoseEvalSummary) -> Result<()> {
    let text = format!(
        "{}\n{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
        POSE_METRICS_COLUMNS.join(","),
        s.snippets,
        s.snippet_length,
        s.ate_mean,
        s.ate_std,
        s.atde_mean,
        s.atde_std
    );
    write_bytes(path.as_ref(), text.as_bytes())
}

pub fn read_pose_metrics_csv(path: impl AsRef<Path>) -> Result<PoseEvalSummary> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).eq(POSE_METRICS_COLUMNS) => {}
        Some((no, _)) => {
            return Err(Error::parse(
                path,
                no,
                format!("expected header {}", POSE_METRICS_COLUMNS.join(",")),
            ))
        }
        None => return Err(Error::parse(path, 1, "missing header")),
    }
    let (no, row) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 2, "missing data row"))?;
    let v = parse_numbers(path, no, row)?;
    if v.len() != 6 {
        return Err(Error::parse(path, no, format!("expected 6 fields, found {}", v.len())));
    }
    let count = |x: f64| {
        if x >= 0.0 && x.fract() == 0.0 {
            Ok(x as usize)
        } else {
            Err(Error::parse(path, no, format!("expected a count, found {x}")))
        }
    };
    Ok(PoseEvalSummary {
        snippets: count(v[0])?,
        snippet_length: count(v[1])?,
        ate_mean: v[2],
        ate_std: v[3],
        atde_mean: v[4],
        atde_std: v[5],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn intrinsics_both_layouts() {
        let dir = tmp();
        let a = dir.path().join("a.txt");
        fs::write(&a, "500 510 320 240\n").unwrap();
        let k = read_intrinsics(&a).unwrap();
        assert_eq!((k.fx, k.fy, k.cx, k.cy, k.skew), (500.0, 510.0, 320.0, 240.0, 0.0));
        let b = dir.path().join("b.txt");
        fs::write(&b, "500 0.5 320 0 510 240 0 0 1\n").unwrap();
        let k = read_intrinsics(&b).unwrap();
        assert_eq!(k.skew, 0.5);
        assert_eq!(k.fy, 510.0);
        write_intrinsics(&a, &CameraIntrinsics::with_skew(1.0 / 3.0, 2.5, 0.1, 7.0, 0.2).unwrap())
            .unwrap();
        assert_eq!(read_intrinsics(&a).unwrap().fx, 1.0 / 3.0);
    }

    #[test]
    fn intrinsics_reject_bad_counts_and_values() {
        let dir = tmp();
        let p = dir.path().join("k.txt");
        fs::write(&p, "1 2 3\n").unwrap();
        assert!(matches!(read_intrinsics(&p), Err(Error::Parse { line: 1, .. })));
        fs::write(&p, "# comment\n-1 2 3 4\n").unwrap();
        assert!(matches!(read_intrinsics(&p), Err(Error::Parse { line: 2, .. })));
        let missing = dir.path().join("nope.txt");
        let err = read_intrinsics(&missing).unwrap_err();
        assert!(err.to_string().contains("nope.txt"));
    }

    #[test]
    fn matches_round_trip_bit_exact() {
        let dir = tmp();
        let p = dir.path().join("m.csv");
        let ms = vec![
            Correspondence::new(0.1, 1.0 / 3.0, 1e-300, 123456.789).unwrap(),
            Correspondence::new(-5.5, 2.0f64.sqrt(), 0.0, 7.0).unwrap(),
        ];
        write_matches(&p, &ms).unwrap();
        assert_eq!(read_matches(&p).unwrap(), ms);
    }

    #[test]
    fn matches_errors_carry_line_numbers() {
        let dir = tmp();
        let p = dir.path().join("m.csv");
        fs::write(&p, "x1,y1,x2,y2\n1,2,3,4\n1,2,abc,4\n").unwrap();
        let err = read_matches(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        fs::write(&p, "x1,y1,x2,y2\n1,2,3\n").unwrap();
        assert!(matches!(read_matches(&p), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "a,b,c,d\n1,2,3,4\n").unwrap();
        assert!(matches!(read_matches(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn image_round_trip_on_8bit_grid() {
        let dir = tmp();
        for channels in [1, 3] {
            let img = ImageBuffer::from_fn(5, 4, channels, |x, y, c| {
                ((x * 37 + y * 11 + c * 5) % 256) as f64 / 255.0
            })
            .unwrap();
            let p = dir.path().join(format!("i{channels}.png"));
            write_image(&p, &img).unwrap();
            assert_eq!(read_image(&p).unwrap(), img);
        }
    }

    #[test]
    fn depth_png_round_trip() {
        let dir = tmp();
        let p = dir.path().join("d.png");
        let values: Vec<f64> = (0..12).map(|i| (i as f64 * 97.0 + 1.0) / 256.0).collect();
        let valid: Vec<bool> = (0..12).map(|i| i % 5 != 2).collect();
        let d = DepthMap::new(4, 3, values, valid.clone()).unwrap();
        write_depth(&p, &d).unwrap();
        assert!(dir.path().join("d.json").exists());
        let back = read_depth(&p).unwrap();
        assert_eq!(back.valid(), d.valid());
        for i in 0..12 {
            if valid[i] {
                assert_eq!(back.values()[i], d.values()[i]);
            }
        }
        let too_far = DepthMap::constant(2, 2, 1e6).unwrap();
        assert!(matches!(write_depth(&p, &too_far), Err(Error::Format { .. })));
    }

    #[test]
    fn depth_pfm_round_trip() {
        let dir = tmp();
        let p = dir.path().join("d.pfm");
        let values: Vec<f64> = (0..6).map(|i| (i as f32 * 1.7 + 0.3) as f64).collect();
        let d = DepthMap::new(3, 2, values, vec![true, true, false, true, true, true]).unwrap();
        write_depth(&p, &d).unwrap();
        let back = read_depth(&p).unwrap();
        assert_eq!(back.valid(), d.valid());
        assert_eq!(back.get(0, 1), d.get(0, 1));
        assert_eq!(back.get(2, 1), d.get(2, 1));
    }

    #[test]
    fn kitti_round_trip_bit_exact() {
        let dir = tmp();
        let p = dir.path().join("poses.txt");
        let poses = vec![
            PoseSE3::identity(),
            PoseSE3::from_axis_angle(&Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0 / 3.0, 0.0, -7.25)),
        ];
        write_kitti_poses(&p, &poses).unwrap();
        assert_eq!(read_kitti_poses(&p).unwrap(), poses);
        fs::write(&p, "1 0 0 0 0 1 0 0 0 0 1\n").unwrap();
        assert!(matches!(read_kitti_poses(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn json_uses_full_precision_and_null() {
        let v = vec![0.1, f64::NAN, 1.0 / 3.0];
        let s = to_json_string(&v).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("null"));
        let back: Vec<Option<f64>> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![Some(0.1), None, Some(1.0 / 3.0)]);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tmp();
        let p = dir.path().join("m.csv");
        let rows = vec![DepthMetricsRow {
            label: "frame0".into(),
            metrics: DepthEvalResult::from_array([0.1, 0.2, 1.0 / 3.0, 0.4, 0.9, 0.95, 1.0]),
        }];
        write_depth_metrics_csv(&p, &rows).unwrap();
        assert_eq!(read_depth_metrics_csv(&p).unwrap(), rows);
    }

    #[test]
    fn pose_metrics_csv_round_trip() {
        let dir = tmp();
        let p = dir.path().join("p.csv");
        let s = PoseEvalSummary {
            snippets: 7,
            snippet_length: 3,
            ate_mean: 0.1,
            ate_std: 1.0 / 3.0,
            atde_mean: 2e-5,
            atde_std: 0.0,
        };
        write_pose_metrics_csv(&p, &s).unwrap();
        assert_eq!(read_pose_metrics_csv(&p).unwrap(), s);
    }

    #[test]
    fn false_color_handles_invalid() {
        let dir = tmp();
        let p = dir.path().join("f.png");
        let range = write_false_color(&p, 2, 2, &[0.0, 1.0, 2.0, 9.0], &[true, true, true, false])
            .unwrap();
        assert_eq!(range, (0.0, 2.0));
        let img = read_image(&p).unwrap();
        assert_eq!(img.pixel(3), &[0.0, 0.0, 0.0]);
    }
}
