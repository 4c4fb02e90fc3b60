//! Region descriptors: the grid extractor that stands in for a detector, and
//! the binary and text region files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Tensor;

pub const REGION_MAGIC: &[u8; 4] = b"AQRF";
pub const REGION_VERSION: u32 = 1;

/// Width of the color part of a grid descriptor: 8 bins per channel.
pub const HISTOGRAM_BINS: usize = 24;
/// Histogram followed by per-channel mean and standard deviation.
pub const GRID_DESCRIPTOR_WIDTH: usize = HISTOGRAM_BINS + 6;
pub const MIN_GRID_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionSource {
    File,
    Grid,
}

/// Normalized `(x1, y1, x2, y2)`.
pub type RegionBox = [f64; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct RegionFeatures {
    pub artwork_id: String,
    /// `K×D`, one descriptor per row.
    pub values: Tensor,
    pub boxes: Option<Vec<RegionBox>>,
    pub source: RegionSource,
}

impl RegionFeatures {
    pub fn new(
        artwork_id: impl Into<String>,
        values: Tensor,
        boxes: Option<Vec<RegionBox>>,
        source: RegionSource,
    ) -> Result<Self> {
        let r = Self {
            artwork_id: artwork_id.into(),
            values,
            boxes,
            source,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn count(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.artwork_id;
        if self.values.shape().len() != 2 || self.count() == 0 || self.dim() == 0 {
            return Err(Error::Data(format!(
                "regions of {id}: expected a nonempty K×D matrix, got {:?}",
                self.values.shape()
            )));
        }
        if !self.values.is_finite() {
            return Err(Error::Data(format!("regions of {id}: non-finite values")));
        }
        if let Some(boxes) = &self.boxes {
            if boxes.len() != self.count() {
                return Err(Error::Data(format!(
                    "regions of {id}: {} boxes for {} regions",
                    boxes.len(),
                    self.count()
                )));
            }
            for (k, b) in boxes.iter().enumerate() {
                let inside = b.iter().all(|v| (0.0..=1.0).contains(v));
                if !inside || b[0] >= b[2] || b[1] >= b[3] {
                    return Err(Error::Data(format!("regions of {id}: box {k} is malformed: {b:?}")));
                }
            }
        }
        Ok(())
    }

    /// Same regions with rows (and boxes) reordered so that new row `i` is
    /// old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let rows = self.values.to_rows();
        let values = Tensor::from_rows(&order.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>())?;
        let boxes = self
            .boxes
            .as_ref()
            .map(|b| order.iter().map(|&i| b[i]).collect());
        Self::new(self.artwork_id.clone(), values, boxes, self.source)
    }
}

/// Row-major 8-bit RGB pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Input(format!(
                "raster {width}×{height} needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: rgb.repeat(width * height),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Data(format!("cannot decode image {}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| Error::Contract("raster buffer does not match its extents".into()))?;
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
    }
}

/// Splits the image into `grid × grid` patches (row-major) and describes each
/// by a 24-bin color histogram summing to 1, then per-channel mean and
/// standard deviation scaled by 1/255, zero-padded to `dim`. Patch positions
/// are returned as boxes, not mixed into the descriptor.
pub fn extract_grid_features(
    artwork_id: &str,
    image: &Raster,
    grid: usize,
    dim: usize,
) -> Result<RegionFeatures> {
    if grid == 0 || image.width < grid || image.height < grid {
        return Err(Error::Input(format!(
            "image {}×{} is smaller than a {grid}×{grid} grid",
            image.width, image.height
        )));
    }
    if dim < MIN_GRID_DIM {
        return Err(Error::Input(format!(
            "grid descriptors need at least {MIN_GRID_DIM} dimensions, got {dim}"
        )));
    }
    let mut rows = Vec::with_capacity(grid * grid);
    let mut boxes = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        let (y0, y1) = (gy * image.height / grid, (gy + 1) * image.height / grid);
        for gx in 0..grid {
            let (x0, x1) = (gx * image.width / grid, (gx + 1) * image.width / grid);
            rows.push(describe_patch(image, x0, x1, y0, y1, dim));
            boxes.push([
                x0 as f64 / image.width as f64,
                y0 as f64 / image.height as f64,
                x1 as f64 / image.width as f64,
                y1 as f64 / image.height as f64,
            ]);
        }
    }
    RegionFeatures::new(artwork_id, Tensor::from_rows(&rows)?, Some(boxes), RegionSource::Grid)
}

fn describe_patch(image: &Raster, x0: usize, x1: usize, y0: usize, y1: usize, dim: usize) -> Vec<f64> {
    let mut row = vec![0.0; dim];
    let mut sum = [0.0f64; 3];
    let mut sum_sq = [0.0f64; 3];
    let n = ((x1 - x0) * (y1 - y0)) as f64;
    for y in y0..y1 {
        for x in x0..x1 {
            for (c, &v) in image.pixel(x, y).iter().enumerate() {
                row[c * 8 + usize::from(v / 32)] += 1.0;
                let v = f64::from(v);
                sum[c] += v;
                sum_sq[c] += v * v;
            }
        }
    }
    for bin in &mut row[..HISTOGRAM_BINS] {
        *bin /= 3.0 * n;
    }
    for c in 0..3 {
        let mean = sum[c] / n;
        let var = (sum_sq[c] / n - mean * mean).max(0.0);
        row[HISTOGRAM_BINS + c] = mean / 255.0;
        row[HISTOGRAM_BINS + 3 + c] = var.sqrt() / 255.0;
    }
    row
}

// ---------------------------------------------------------------------------
// Region files

pub fn encode_regions(records: &[RegionFeatures]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(REGION_MAGIC);
    out.extend_from_slice(&REGION_VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.artwork_id.len() as u32).to_le_bytes());
        out.extend_from_slice(r.artwork_id.as_bytes());
        out.extend_from_slice(&(r.count() as u32).to_le_bytes());
        out.extend_from_slice(&(r.dim() as u32).to_le_bytes());
        out.push(u8::from(r.boxes.is_some()));
        for b in r.boxes.iter().flatten() {
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for v in r.values.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::parse(self.source, format!("byte {}", self.pos), "truncated region file"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.saturating_mul(8))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_regions(bytes: &[u8], source: &str) -> Result<Vec<RegionFeatures>> {
    let mut r = Reader { bytes, pos: 0, source };
    if r.take(4)? != REGION_MAGIC {
        return Err(Error::parse(source, "byte 0", "not a region file (bad magic)"));
    }
    let version = r.u32()?;
    if version != REGION_VERSION {
        return Err(Error::parse(source, "byte 4", format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let at = r.pos;
        let id_len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| Error::parse(source, format!("byte {at}"), "artwork id is not UTF-8"))?
            .to_string();
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let has_boxes = r.take(1)?[0] != 0;
        let boxes = if has_boxes {
            let flat = r.f64s(k * 4)?;
            Some(flat.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect())
        } else {
            None
        };
        let values = Tensor::matrix(k, d, r.f64s(k * d)?)?;
        let rec = RegionFeatures::new(id, values, boxes, RegionSource::File)
            .map_err(|e| Error::parse(source, format!("record at byte {at}"), e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Line-oriented debug form: a `region <id> <K> <D> <0|1>` header, `K` box
/// lines when flagged, then `K` rows of values.
pub fn regions_to_text(records: &[RegionFeatures]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        if r.artwork_id.is_empty() || r.artwork_id.contains(char::is_whitespace) {
            return Err(Error::Input(format!(
                "artwork id `{}` cannot be written in the text region format",
                r.artwork_id
            )));
        }
        let flag = u8::from(r.boxes.is_some());
        writeln!(out, "region {} {} {} {flag}", r.artwork_id, r.count(), r.dim()).expect("string write");
        for b in r.boxes.iter().flatten() {
            writeln!(out, "box {:?} {:?} {:?} {:?}", b[0], b[1], b[2], b[3]).expect("string write");
        }
        for k in 0..r.count() {
            let line: Vec<String> = r.values.row(k).iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", line.join(" ")).expect("string write");
        }
    }
    Ok(out)
}

pub fn regions_from_text(text: &str, source: &str) -> Result<Vec<RegionFeatures>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let bad = |line: usize, msg: String| Error::parse(source, format!("line {line}"), msg);
    let floats = |line: usize, parts: &[&str]| -> Result<Vec<f64>> {
        parts
            .iter()
            .map(|p| p.parse::<f64>().map_err(|_| bad(line, format!("`{p}` is not a number"))))
            .collect()
    };
    let mut out = Vec::new();
    while let Some((ln, header)) = lines.next() {
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "region" {
            return Err(bad(ln, "expected `region <id> <K> <D> <0|1>`".into()));
        }
        let parse_n = |s: &str| s.parse::<usize>().map_err(|_| bad(ln, format!("`{s}` is not a count")));
        let (k, d) = (parse_n(parts[2])?, parse_n(parts[3])?);
        let has_boxes = match parts[4] {
            "0" => false,
            "1" => true,
            other => return Err(bad(ln, format!("box flag must be 0 or 1, got `{other}`"))),
        };
        let mut boxes = Vec::new();
        if has_boxes {
            for _ in 0..k {
                let (bl, line) = lines.next().ok_or_else(|| bad(ln, "missing box lines".into()))?;
                let p: Vec<&str> = line.split_whitespace().collect();
                if p.len() != 5 || p[0] != "box" {
                    return Err(bad(bl, "expected `box x1 y1 x2 y2`".into()));
                }
                let v = floats(bl, &p[1..])?;
                boxes.push([v[0], v[1], v[2], v[3]]);
            }
        }
        let mut values = Vec::with_capacity(k * d);
        for _ in 0..k {
            let (vl, line) = lines.next().ok_or_else(|| bad(ln, "missing value rows".into()))?;
            let p: Vec<&str> = line.split_whitespace().collect();
            if p.len() != d {
                return Err(bad(vl, format!("expected {d} values, got {}", p.len())));
            }
            values.extend(floats(vl, &p)?);
        }
        let values = Tensor::matrix(k, d, values)?;
        let rec = RegionFeatures::new(parts[1], values, has_boxes.then_some(boxes), RegionSource::File)
            .map_err(|e| bad(ln, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Chooses the binary or the text form by extension (`.txt` is text).
pub fn save_regions(path: &Path, records: &[RegionFeatures]) -> Result<()> {
    let bytes = if is_text(path) {
        regions_to_text(records)?.into_bytes()
    } else {
        encode_regions(records)
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_regions(path: &Path) -> Result<Vec<RegionFeatures>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    if is_text(path) {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::parse(&source, "byte 0", "text region file is not UTF-8"))?;
        regions_from_text(&text, &source)
    } else {
        decode_regions(&bytes, &source)
    }
}

fn is_text(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "txt")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_image_gives_identical_rows() {
        let img = Raster::filled(12, 12, [128, 128, 128]);
        let r = extract_grid_features("a", &img, 3, 32).unwrap();
        assert_eq!(r.count(), 9);
        for k in 1..9 {
            assert_eq!(r.values.row(k), r.values.row(0));
        }
    }

    #[test]
    fn left_red_right_blue() {
        let mut img = Raster::filled(8, 8, [0, 0, 255]);
        for y in 0..8 {
            for x in 0..4 {
                img.set_pixel(x, y, [255, 0, 0]);
            }
        }
        let r = extract_grid_features("a", &img, 2, 32).unwrap();
        assert_eq!(r.values.row(0), r.values.row(2));
        assert_eq!(r.values.row(1), r.values.row(3));
        assert_ne!(r.values.row(0), r.values.row(1));
    }

    #[test]
    fn histogram_sums_to_one_and_boxes_valid() {
        let pixels: Vec<u8> = (0..10 * 7 * 3).map(|i| (i * 37 % 256) as u8).collect();
        let img = Raster::new(10, 7, pixels).unwrap();
        let r = extract_grid_features("a", &img, 3, 40).unwrap();
        for k in 0..r.count() {
            let s: f64 = r.values.row(k)[..HISTOGRAM_BINS].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(r.values.row(k)[GRID_DESCRIPTOR_WIDTH..].iter().all(|&v| v == 0.0));
        }
        r.validate().unwrap();
    }

    #[test]
    fn image_smaller_than_grid_rejected() {
        let img = Raster::filled(2, 8, [0, 0, 0]);
        assert!(matches!(extract_grid_features("a", &img, 3, 32), Err(Error::Input(_))));
        let img = Raster::filled(8, 8, [0, 0, 0]);
        assert!(matches!(extract_grid_features("a", &img, 2, 16), Err(Error::Input(_))));
    }

    #[test]
    fn malformed_boxes_rejected() {
        let v = Tensor::zeros(&[1, 2]);
        let r = RegionFeatures::new("a", v.clone(), Some(vec![[0.5, 0.0, 0.4, 1.0]]), RegionSource::File);
        assert!(r.is_err());
        let r = RegionFeatures::new("a", v, Some(vec![]), RegionSource::File);
        assert!(r.is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let pixels: Vec<u8> = (0..5 * 4 * 3).map(|i| i as u8).collect();
        let img = Raster::new(5, 4, pixels).unwrap();
        img.save_png(&p).unwrap();
        assert_eq!(Raster::load(&p).unwrap(), img);
    }

    #[test]
    fn text_format_reports_line() {
        let err = regions_from_text("region a 1 2 0\n0.5 x\n", "t").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    fn record() -> impl Strategy<Value = RegionFeatures> {
        (1usize..4, 1usize..5, any::<bool>(), "[a-z0-9_]{1,8}").prop_flat_map(|(k, d, boxes, id)| {
            prop::collection::vec(-1e6f64..1e6, k * d).prop_map(move |vals| {
                let b = boxes.then(|| (0..k).map(|i| [0.0, 0.0, 1.0 / (i + 1) as f64, 1.0]).collect());
                RegionFeatures::new(id.clone(), Tensor::matrix(k, d, vals).unwrap(), b, RegionSource::File)
                    .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn binary_and_text_round_trip(recs in prop::collection::vec(record(), 0..4)) {
            let bin = decode_regions(&encode_regions(&recs), "mem").unwrap();
            prop_assert_eq!(&bin, &recs);
            let txt = regions_from_text(&regions_to_text(&recs).unwrap(), "mem").unwrap();
            prop_assert_eq!(&txt, &recs);
        }
    }
}
