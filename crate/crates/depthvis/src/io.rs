//! Readers and writers for depth grids plus the JSON scene manifest.
//!
//! Three grid formats are supported:
//!
//! * **PFM** (`Pf` magic): 32-bit floats, scale-line sign encodes endianness,
//!   rows stored bottom-to-top as usual for the format. Invalid pixels are
//!   written as NaN.
//! * **PGM16** (`P5` magic, maxval 65535): big-endian 16-bit samples. A
//!   `# scale <meters-per-unit>` header comment gives the quantization step;
//!   without it the conventional millimeter step (0.001) is assumed. Sample
//!   0 is the invalid sentinel.
//! * **CSV grid**: comma-separated values, `;` ends a row. Meant for small
//!   hand-written fixtures. `nan` marks invalid pixels.
//!
//! Grid files carry raw values only. Depth kind and camera intrinsics come
//! from the scene manifest; bare [`load_depth`] defaults to orthogonal depth.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::depth::{CameraIntrinsics, DepthKind, DepthMap};
use crate::error::{Error, Result};
use crate::geometry::Rendering;
use crate::grid::Grid;

/// Millimeters, the customary unit for 16-bit integer depth files.
pub const PGM16_DEFAULT_SCALE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthFormat {
    Pfm,
    Pgm16,
    CsvGrid,
}

impl DepthFormat {
    /// Infers the format from a file extension (`pfm`, `pgm`, `csv`).
    pub fn from_path(path: &Path) -> Result<DepthFormat> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("pfm") => Ok(DepthFormat::Pfm),
            Some("pgm") => Ok(DepthFormat::Pgm16),
            Some("csv") => Ok(DepthFormat::CsvGrid),
            _ => Err(Error::InvalidParameter(format!(
                "cannot infer depth format from path {}",
                path.display()
            ))),
        }
    }
}

/// Raw grid plus validity mask, before any depth-kind interpretation.
/// Zero and non-finite samples are sentinel values and come back invalid.
pub fn read_grid(path: &Path, format: DepthFormat) -> Result<(Grid<f64>, Grid<bool>)> {
    let bytes = fs::read(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let values = match format {
        DepthFormat::Pfm => parse_pfm(path, &bytes)?,
        DepthFormat::Pgm16 => parse_pgm16(path, &bytes)?,
        DepthFormat::CsvGrid => parse_csv_grid(path, &bytes)?,
    };
    let mask = values.map(|&v| v.is_finite() && v != 0.0);
    Ok((values, mask))
}

/// Loads a depth map. The file carries no kind metadata, so the result is
/// tagged [`DepthKind::OrthogonalDepth`]; use a manifest (or retag) when the
/// data is disparity or perspective depth.
pub fn load_depth(path: &Path, format: DepthFormat) -> Result<DepthMap> {
    load_depth_as(path, format, DepthKind::OrthogonalDepth)
}

pub fn load_depth_as(path: &Path, format: DepthFormat, kind: DepthKind) -> Result<DepthMap> {
    let (values, mask) = read_grid(path, format)?;
    DepthMap::from_parts(values, Some(mask), kind, None)
}

/// Saves a depth map. PFM and CSV keep float values exactly (PFM rounds to
/// f32); PGM16 quantizes with an automatically chosen scale, see
/// [`save_pgm16`].
pub fn save_depth(map: &DepthMap, path: &Path, format: DepthFormat) -> Result<()> {
    match format {
        DepthFormat::Pfm => {
            let bytes = encode_pfm(map)?;
            write_bytes(path, &bytes)
        }
        DepthFormat::Pgm16 => {
            let scale = auto_pgm16_scale(map);
            save_pgm16(map, path, scale)
        }
        DepthFormat::CsvGrid => {
            let text = encode_csv_grid(map);
            write_bytes(path, text.as_bytes())
        }
    }
}

/// Picks the smallest quantization step that still covers the value range:
/// `max / 65535`. Falls back to millimeters for empty or all-zero maps.
pub fn auto_pgm16_scale(map: &DepthMap) -> f64 {
    let mut vmax: f64 = 0.0;
    for (x, y, &v) in map.values().iter() {
        if map.valid(x, y) {
            vmax = vmax.max(v);
        }
    }
    if vmax > 0.0 {
        vmax / 65535.0
    } else {
        PGM16_DEFAULT_SCALE
    }
}

/// Writes a 16-bit PGM with an explicit quantization step (meters per unit).
/// Errors when a valid value is negative or quantizes above 65535.
pub fn save_pgm16(map: &DepthMap, path: &Path, scale: f64) -> Result<()> {
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "pgm16 scale must be positive, got {scale}"
        )));
    }
    let w = map.width();
    let h = map.height();
    let mut out = Vec::with_capacity(64 + 2 * w * h);
    out.extend_from_slice(format!("P5\n# scale {scale}\n{w} {h}\n65535\n").as_bytes());
    for y in 0..h {
        for x in 0..w {
            let sample: u16 = if map.valid(x, y) {
                let v = map.values().at(x, y);
                let q = (v / scale).round();
                if !(0.0..=65535.0).contains(&q) {
                    return Err(Error::RangeOverflow {
                        format: "pgm16",
                        value: v,
                    });
                }
                q as u16
            } else {
                0 // invalid sentinel
            };
            out.extend_from_slice(&sample.to_be_bytes());
        }
    }
    write_bytes(path, &out)
}

/// Writes a rendering as an 8-bit binary PGM, mapping value `v` in [-1, 1]
/// to `round((v + 1) / 2 * 255)`. Invalid pixels are written as 0.
pub fn save_rendering(rendering: &Rendering, path: &Path) -> Result<()> {
    let w = rendering.values.width();
    let h = rendering.values.height();
    let mut out = Vec::with_capacity(32 + w * h);
    out.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for y in 0..h {
        for x in 0..w {
            let byte = if rendering.valid(x, y) {
                let v = rendering.values.at(x, y).clamp(-1.0, 1.0);
                ((v + 1.0) / 2.0 * 255.0).round() as u8
            } else {
                0
            };
            out.push(byte);
        }
    }
    write_bytes(path, &out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// PFM

fn encode_pfm(map: &DepthMap) -> Result<Vec<u8>> {
    let w = map.width();
    let h = map.height();
    // Negative scale marks little-endian data.
    let mut out = Vec::with_capacity(32 + 4 * w * h);
    out.extend_from_slice(format!("Pf\n{w} {h}\n-1.0\n").as_bytes());
    for y in (0..h).rev() {
        // PFM rows run bottom-to-top.
        for x in 0..w {
            let v = if map.valid(x, y) {
                let v = map.values().at(x, y);
                if v.abs() > f32::MAX as f64 {
                    return Err(Error::RangeOverflow {
                        format: "pfm",
                        value: v,
                    });
                }
                v as f32
            } else {
                f32::NAN
            };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn parse_pfm(path: &Path, bytes: &[u8]) -> Result<Grid<f64>> {
    let mut rd = TokenReader::new(path, bytes);
    let magic = rd.token()?;
    if magic != "Pf" {
        // "PF" (three-channel color) is deliberately unsupported.
        return Err(rd.malformed(format!("expected Pf magic, got {magic:?}")));
    }
    let w: usize = rd.parse_token("width")?;
    let h: usize = rd.parse_token("height")?;
    let scale: f64 = rd.parse_token("scale")?;
    if w == 0 || h == 0 {
        return Err(rd.malformed(format!("degenerate dimensions {w}x{h}")));
    }
    if scale == 0.0 {
        return Err(rd.malformed("scale must be nonzero".into()));
    }
    let little_endian = scale < 0.0;
    let data = rd.rest();
    let need = 4 * w * h;
    if data.len() < need {
        return Err(Error::DimensionMismatch(format!(
            "{}: pfm payload holds {} bytes, header promises {}",
            path.display(),
            data.len(),
            need
        )));
    }
    let mut grid = Grid::zeros(w, h);
    for row in 0..h {
        let y = h - 1 - row; // bottom-to-top storage
        for x in 0..w {
            let off = 4 * (row * w + x);
            let raw: [u8; 4] = data[off..off + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            grid.set(x, y, v as f64);
        }
    }
    Ok(grid)
}

// ---------------------------------------------------------------------------
// PGM16

fn parse_pgm16(path: &Path, bytes: &[u8]) -> Result<Grid<f64>> {
    let mut rd = TokenReader::new(path, bytes);
    let magic = rd.token()?;
    if magic != "P5" {
        return Err(rd.malformed(format!("expected P5 magic, got {magic:?}")));
    }
    let w: usize = rd.parse_token("width")?;
    let h: usize = rd.parse_token("height")?;
    let maxval: u32 = rd.parse_token("maxval")?;
    if w == 0 || h == 0 {
        return Err(rd.malformed(format!("degenerate dimensions {w}x{h}")));
    }
    if !(256..=65535).contains(&maxval) {
        return Err(rd.malformed(format!(
            "maxval {maxval} is not a two-byte PGM (need 256..=65535)"
        )));
    }
    let scale = rd
        .comments()
        .iter()
        .find_map(|c| c.strip_prefix("scale").map(|s| s.trim().to_string()))
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| rd.malformed(format!("bad scale comment {s:?}")))
        })
        .transpose()?
        .unwrap_or(PGM16_DEFAULT_SCALE);
    if !(scale > 0.0) {
        return Err(rd.malformed(format!("scale must be positive, got {scale}")));
    }
    let data = rd.rest();
    let need = 2 * w * h;
    if data.len() < need {
        return Err(Error::DimensionMismatch(format!(
            "{}: pgm payload holds {} bytes, header promises {}",
            path.display(),
            data.len(),
            need
        )));
    }
    let mut grid = Grid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let off = 2 * (y * w + x);
            let sample = u16::from_be_bytes([data[off], data[off + 1]]);
            grid.set(x, y, sample as f64 * scale);
        }
    }
    Ok(grid)
}

// ---------------------------------------------------------------------------
// CSV grid

fn encode_csv_grid(map: &DepthMap) -> String {
    let mut out = String::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            if x > 0 {
                out.push(',');
            }
            if map.valid(x, y) {
                // Display prints the shortest string that parses back exactly.
                out.push_str(&format!("{}", map.values().at(x, y)));
            } else {
                out.push_str("nan");
            }
        }
        out.push_str(";\n");
    }
    out
}

fn parse_csv_grid(path: &Path, bytes: &[u8]) -> Result<Grid<f64>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: format!("not utf-8: {e}"),
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for chunk in text.split([';', '\n']) {
        let chunk = chunk.trim();
        if chunk.is_empty() {
            continue;
        }
        let row = chunk
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| Error::MalformedHeader {
                    path: path.to_path_buf(),
                    reason: format!("bad csv cell {cell:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let h = rows.len();
    if h == 0 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: "empty csv grid".into(),
        });
    }
    let w = rows[0].len();
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::DimensionMismatch(format!(
            "{}: ragged csv rows",
            path.display()
        )));
    }
    Grid::from_vec(w, h, rows.into_iter().flatten().collect())
}

// ---------------------------------------------------------------------------
// Header token reader shared by PFM and PGM

struct TokenReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
    comments: Vec<String>,
}

impl<'a> TokenReader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        TokenReader {
            path,
            bytes,
            pos: 0,
            comments: Vec::new(),
        }
    }

    fn malformed(&self, reason: String) -> Error {
        Error::MalformedHeader {
            path: self.path.to_path_buf(),
            reason,
        }
    }

    /// Next whitespace-delimited header token; `#` comments run to newline.
    fn token(&mut self) -> Result<String> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos >= self.bytes.len() {
                return Err(self.malformed("truncated header".into()));
            }
            if self.bytes[self.pos] == b'#' {
                let start = self.pos + 1;
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                let comment = String::from_utf8_lossy(&self.bytes[start..self.pos])
                    .trim()
                    .to_string();
                self.comments.push(comment);
                continue;
            }
            let start = self.pos;
            while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            let token = std::str::from_utf8(&self.bytes[start..self.pos])
                .map_err(|_| self.malformed("non-utf8 header token".into()))?;
            return Ok(token.to_string());
        }
    }

    fn parse_token<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let token = self.token()?;
        token
            .parse::<T>()
            .map_err(|_| self.malformed(format!("bad {what} token {token:?}")))
    }

    fn comments(&self) -> &[String] {
        &self.comments
    }

    /// Binary payload after the header: exactly one whitespace byte follows
    /// the last token.
    fn rest(&mut self) -> &'a [u8] {
        let mut pos = self.pos;
        if pos < self.bytes.len() && self.bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        &self.bytes[pos..]
    }
}

// ---------------------------------------------------------------------------
// Scene manifest

/// One benchmark scene: where its data lives and how to interpret it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    /// Grid file with the ground-truth map, relative to the manifest.
    pub ground_truth_path: PathBuf,
    /// Optional grayscale guidance image (any supported grid format).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guide_path: Option<PathBuf>,
    pub kind: DepthKind,
    pub intrinsics: CameraIntrinsics,
    /// Super-resolution factors to benchmark; each must divide the
    /// ground-truth dimensions.
    pub scale_factors: Vec<usize>,
}

impl SceneManifest {
    pub fn validate(&self) -> Result<()> {
        if self.scene_id.is_empty() {
            return Err(Error::InvalidConfig("empty scene_id".into()));
        }
        if self.scale_factors.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "scene {}: no scale factors",
                self.scene_id
            )));
        }
        if let Some(&f) = self.scale_factors.iter().find(|&&f| f < 2) {
            return Err(Error::InvalidConfig(format!(
                "scene {}: scale factor {f} < 2",
                self.scene_id
            )));
        }
        CameraIntrinsics::new(
            self.intrinsics.focal_x,
            self.intrinsics.focal_y,
            self.intrinsics.principal_x,
            self.intrinsics.principal_y,
            self.intrinsics.baseline,
        )?;
        Ok(())
    }

    /// Loads the ground truth with kind and intrinsics attached. Paths are
    /// resolved relative to `base_dir` (usually the manifest's directory).
    pub fn load_ground_truth(&self, base_dir: &Path) -> Result<DepthMap> {
        let path = base_dir.join(&self.ground_truth_path);
        let format = DepthFormat::from_path(&path)?;
        let (values, mask) = read_grid(&path, format)?;
        for &f in &self.scale_factors {
            if values.width() % f != 0 || values.height() % f != 0 {
                return Err(Error::NotDivisible {
                    width: values.width(),
                    height: values.height(),
                    divisor: f,
                });
            }
        }
        DepthMap::from_parts(values, Some(mask), self.kind, Some(self.intrinsics))
    }

    /// Loads the guidance image if the manifest names one.
    pub fn load_guide(&self, base_dir: &Path) -> Result<Option<Grid<f64>>> {
        match &self.guide_path {
            None => Ok(None),
            Some(rel) => {
                let path = base_dir.join(rel);
                let format = DepthFormat::from_path(&path)?;
                let (values, _) = read_grid(&path, format)?;
                Ok(Some(values))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    scenes: Vec<SceneManifest>,
}

/// Reads a manifest file: `{"scenes": [...]}`. Every record is validated.
pub fn load_manifest(path: &Path) -> Result<Vec<SceneManifest>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let file: ManifestFile = serde_json::from_str(&text)?;
    for scene in &file.scenes {
        scene.validate()?;
    }
    Ok(file.scenes)
}

pub fn save_manifest(scenes: &[SceneManifest], path: &Path) -> Result<()> {
    for scene in scenes {
        scene.validate()?;
    }
    let file = ManifestFile {
        scenes: scenes.to_vec(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    write_bytes(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn map_from(values: Vec<f64>, w: usize, h: usize) -> DepthMap {
        DepthMap::new(w, h, values, DepthKind::OrthogonalDepth).unwrap()
    }

    #[test]
    fn pfm_round_trip_is_exact_for_f32_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pfm");
        // Values chosen exactly representable in f32.
        let values = vec![1.5, 2.25, 0.125, 1024.0, 3.75, 0.5];
        let map = map_from(values.clone(), 3, 2);
        save_depth(&map, &path, DepthFormat::Pfm).unwrap();
        let loaded = load_depth(&path, DepthFormat::Pfm).unwrap();
        assert_eq!(loaded.width(), 3);
        assert_eq!(loaded.height(), 2);
        assert_eq!(loaded.values().data(), values.as_slice());
        assert!(loaded.fully_valid());
    }

    #[test]
    fn pfm_nan_pixels_reload_as_invalid() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pfm");
        let map = DepthMap::with_mask(
            2,
            1,
            vec![1.0, 77.0],
            vec![true, false],
            DepthKind::OrthogonalDepth,
        )
        .unwrap();
        save_depth(&map, &path, DepthFormat::Pfm).unwrap();
        let loaded = load_depth(&path, DepthFormat::Pfm).unwrap();
        assert!(loaded.valid(0, 0));
        assert!(!loaded.valid(1, 0));
    }

    #[test]
    fn pfm_big_endian_reads() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        bytes.extend_from_slice(&4.0f32.to_be_bytes());
        fs::write(&path, &bytes).unwrap();
        let loaded = load_depth(&path, DepthFormat::Pfm).unwrap();
        assert_eq!(loaded.values().data(), &[2.5, 4.0]);
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pfm");
        let map = map_from(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        save_depth(&map, &path, DepthFormat::Pfm).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header_len = b"Pf\n2 2\n-1.0\n".len();
        // First stored sample is the first pixel of the *bottom* row.
        let first = f32::from_le_bytes(bytes[header_len..header_len + 4].try_into().unwrap());
        assert_eq!(first, 3.0);
    }

    #[test]
    fn pfm_color_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.pfm");
        fs::write(&path, b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(
            load_depth(&path, DepthFormat::Pfm),
            Err(Error::MalformedHeader { .. })
        ));
    }

    #[test]
    fn pfm_truncated_payload_is_dimension_mismatch() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.pfm");
        fs::write(&path, b"Pf\n4 4\n-1.0\n\0\0\0\0").unwrap();
        assert!(matches!(
            load_depth(&path, DepthFormat::Pfm),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn pgm16_round_trip_within_quantization() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let values: Vec<f64> = (0..16).map(|i| 0.5 + 0.1 * i as f64).collect();
        let map = map_from(values.clone(), 4, 4);
        save_depth(&map, &path, DepthFormat::Pgm16).unwrap();
        let loaded = load_depth(&path, DepthFormat::Pgm16).unwrap();
        let vmax = 2.0;
        let step = auto_pgm16_scale(&map);
        for (orig, got) in values.iter().zip(loaded.values().data()) {
            assert!((orig - got).abs() <= step / 2.0 + 1e-12);
            assert!((orig - got).abs() <= vmax / 65535.0);
        }
    }

    #[test]
    fn pgm16_scale_comment_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let map = map_from(vec![0.25, 0.5], 2, 1);
        save_pgm16(&map, &path, 0.25).unwrap();
        let text = fs::read(&path).unwrap();
        assert!(text.starts_with(b"P5\n# scale 0.25\n"));
        let loaded = load_depth(&path, DepthFormat::Pgm16).unwrap();
        assert_eq!(loaded.values().data(), &[0.25, 0.5]);
    }

    #[test]
    fn pgm16_missing_scale_defaults_to_millimeters() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&1500u16.to_be_bytes());
        bytes.extend_from_slice(&2000u16.to_be_bytes());
        fs::write(&path, &bytes).unwrap();
        let loaded = load_depth(&path, DepthFormat::Pgm16).unwrap();
        assert_eq!(loaded.values().data(), &[1.5, 2.0]);
    }

    #[test]
    fn pgm16_zero_sample_is_invalid() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&0u16.to_be_bytes());
        bytes.extend_from_slice(&7u16.to_be_bytes());
        fs::write(&path, &bytes).unwrap();
        let loaded = load_depth(&path, DepthFormat::Pgm16).unwrap();
        assert!(!loaded.valid(0, 0));
        assert!(loaded.valid(1, 0));
    }

    #[test]
    fn pgm16_overflow_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let map = map_from(vec![1.0, 70.0], 2, 1);
        assert!(matches!(
            save_pgm16(&map, &path, 1e-3),
            Err(Error::RangeOverflow { .. })
        ));
    }

    #[test]
    fn csv_grid_parses_semicolon_rows() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1.0,2.0;3.0,4.0").unwrap();
        let loaded = load_depth(&path, DepthFormat::CsvGrid).unwrap();
        assert_eq!(loaded.width(), 2);
        assert_eq!(loaded.height(), 2);
        assert_eq!(loaded.values().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn csv_grid_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let values = vec![0.1, 1.0 / 3.0, 2e-17, 123456.789, 0.7, 1e300];
        let map = DepthMap::new(3, 2, values.clone(), DepthKind::Disparity).unwrap();
        save_depth(&map, &path, DepthFormat::CsvGrid).unwrap();
        let loaded = load_depth_as(&path, DepthFormat::CsvGrid, DepthKind::Disparity).unwrap();
        assert_eq!(loaded.values().data(), values.as_slice());
    }

    #[test]
    fn csv_grid_rejects_ragged_rows() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1,2;3").unwrap();
        assert!(matches!(
            load_depth(&path, DepthFormat::CsvGrid),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scenes.json");
        let scene = SceneManifest {
            scene_id: "sphere".into(),
            ground_truth_path: "sphere.pfm".into(),
            guide_path: None,
            kind: DepthKind::OrthogonalDepth,
            intrinsics: CameraIntrinsics::new(500.0, 500.0, 63.5, 63.5, 0.2).unwrap(),
            scale_factors: vec![4],
        };
        save_manifest(&[scene.clone()], &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded, vec![scene.clone()]);

        let bad = SceneManifest {
            scale_factors: vec![1],
            ..scene
        };
        assert!(save_manifest(&[bad], &path).is_err());
    }

    #[test]
    fn manifest_checks_factor_divisibility() {
        let dir = tempdir().unwrap();
        let gt = map_from(vec![1.0; 36], 6, 6);
        save_depth(&gt, &dir.path().join("gt.pfm"), DepthFormat::Pfm).unwrap();
        let scene = SceneManifest {
            scene_id: "s".into(),
            ground_truth_path: "gt.pfm".into(),
            guide_path: None,
            kind: DepthKind::OrthogonalDepth,
            intrinsics: CameraIntrinsics::new(500.0, 500.0, 2.5, 2.5, 0.2).unwrap(),
            scale_factors: vec![4],
        };
        assert!(matches!(
            scene.load_ground_truth(dir.path()),
            Err(Error::NotDivisible { .. })
        ));
        let ok = SceneManifest {
            scale_factors: vec![2, 3],
            ..scene
        };
        let gt = ok.load_ground_truth(dir.path()).unwrap();
        assert_eq!(gt.kind(), DepthKind::OrthogonalDepth);
        assert!(gt.intrinsics().is_some());
    }
}
