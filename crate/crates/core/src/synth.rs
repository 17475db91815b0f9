//! Deterministic synthetic "healthy vs pathological" images with box ground
//! truth.
//!
//! Healthy images are a smooth random background. Pathological images add one
//! or more smooth elliptical blobs with compact support; each blob's tight
//! bounding box is recorded. Pixels are quantized to 16 bits at generation
//! time so that the on-disk round trip is exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::{Image, Shape, Tensor};

pub const INDEX_FILE: &str = "index.jsonl";
const QUANT: f64 = 65535.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pathological_fraction: f64,
    pub blob_count_range: (usize, usize),
    pub blob_radius_range: (f64, f64),
    pub blob_intensity_range: (f64, f64),
    pub background_texture_scale: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count: 2000,
            height: 32,
            width: 32,
            channels: 1,
            pathological_fraction: 0.45,
            blob_count_range: (1, 2),
            blob_radius_range: (3.0, 7.0),
            blob_intensity_range: (0.3, 0.55),
            background_texture_scale: 0.12,
            seed: 0,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidSpec { field, reason: reason.into() }
}

impl DatasetSpec {
    pub fn shape(&self) -> Shape {
        Shape::new(self.channels, self.height, self.width)
    }

    pub fn pathological_count(&self) -> usize {
        (self.pathological_fraction * self.count as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(invalid("count", "must be ≥ 1"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(invalid("height", "image must be non-empty"));
        }
        if self.channels == 0 {
            return Err(invalid("channels", "must be ≥ 1"));
        }
        let f = self.pathological_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(invalid("pathological_fraction", format!("must lie in (0, 1), got {f}")));
        }
        let n_path = self.pathological_count();
        if n_path == 0 || n_path >= self.count {
            return Err(invalid(
                "pathological_fraction",
                format!("{f} of {} samples leaves a class empty", self.count),
            ));
        }
        let (lo, hi) = self.blob_count_range;
        if lo == 0 || lo > hi {
            return Err(invalid("blob_count_range", format!("need 1 ≤ min ≤ max, got [{lo}, {hi}]")));
        }
        let (rlo, rhi) = self.blob_radius_range;
        if !(rlo > 0.0 && rlo <= rhi) {
            return Err(invalid("blob_radius_range", format!("need 0 < min ≤ max, got [{rlo}, {rhi}]")));
        }
        if 2.0 * rhi >= self.height.min(self.width) as f64 {
            return Err(invalid(
                "blob_radius_range",
                format!("2·{rhi} does not fit in {}x{}", self.height, self.width),
            ));
        }
        let (ilo, ihi) = self.blob_intensity_range;
        if !(ilo > 0.0 && ilo <= ihi && ihi <= 1.0) {
            return Err(invalid("blob_intensity_range", format!("need 0 < min ≤ max ≤ 1, got [{ilo}, {ihi}]")));
        }
        if !(self.background_texture_scale >= 0.0 && self.background_texture_scale.is_finite()) {
            return Err(invalid("background_texture_scale", "must be ≥ 0"));
        }
        Ok(())
    }
}

/// Half-open pixel box `[row0, row1) × [col0, col1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct BBox {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl From<[usize; 4]> for BBox {
    fn from([row0, col0, row1, col1]: [usize; 4]) -> Self {
        Self { row0, col0, row1, col1 }
    }
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.row0, b.col0, b.row1, b.col1]
    }
}

impl BBox {
    pub fn area(&self) -> usize {
        (self.row1 - self.row0) * (self.col1 - self.col0)
    }

    pub fn is_valid_for(&self, height: usize, width: usize) -> bool {
        self.row0 < self.row1 && self.row1 <= height && self.col0 < self.col1 && self.col1 <= width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub label: u8,
    pub boxes: Vec<BBox>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn shape(&self) -> Option<Shape> {
        self.samples.first().map(|s| s.image.shape())
    }

    pub fn pathological(&self) -> usize {
        self.samples.iter().filter(|s| s.label == 1).count()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * QUANT).round() / QUANT
}

/// Bilinear upsampling of a coarse random grid: a smooth field in [−1, 1].
fn smooth_field(rng: &mut impl Rng, cells: usize, height: usize, width: usize) -> Vec<f64> {
    let g: Vec<f64> = (0..cells * cells).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        let fr = r as f64 / (height.max(2) - 1) as f64 * (cells - 1) as f64;
        let r0 = (fr.floor() as usize).min(cells - 2);
        let tr = fr - r0 as f64;
        for c in 0..width {
            let fc = c as f64 / (width.max(2) - 1) as f64 * (cells - 1) as f64;
            let c0 = (fc.floor() as usize).min(cells - 2);
            let tc = fc - c0 as f64;
            let v = g[r0 * cells + c0] * (1.0 - tr) * (1.0 - tc)
                + g[r0 * cells + c0 + 1] * (1.0 - tr) * tc
                + g[(r0 + 1) * cells + c0] * tr * (1.0 - tc)
                + g[(r0 + 1) * cells + c0 + 1] * tr * tc;
            out.push(v);
        }
    }
    out
}

struct Blob {
    center: (f64, f64),
    radii: (f64, f64),
    angle: f64,
    intensity: f64,
}

impl Blob {
    /// Squared normalized elliptical distance of pixel center (r, c).
    fn dist2(&self, r: usize, c: usize) -> f64 {
        let (dy, dx) = (r as f64 - self.center.0, c as f64 - self.center.1);
        let (s, co) = self.angle.sin_cos();
        let u = co * dy + s * dx;
        let v = -s * dy + co * dx;
        (u / self.radii.0).powi(2) + (v / self.radii.1).powi(2)
    }

    fn value(&self, r: usize, c: usize) -> f64 {
        let d2 = self.dist2(r, c);
        if d2 < 1.0 {
            self.intensity * (1.0 - d2) * (1.0 - d2)
        } else {
            0.0
        }
    }
}

fn generate_sample(spec: &DatasetSpec, index: usize, pathological: bool) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let (h, w) = (spec.height, spec.width);
    let base = rng.gen_range(0.25..0.45);
    let coarse = smooth_field(&mut rng, 4, h, w);
    let fine = smooth_field(&mut rng, 9, h, w);
    let texture: Vec<f64> = coarse.iter().zip(&fine).map(|(a, b)| spec.background_texture_scale * (a + 0.5 * b)).collect();

    let mut blobs = Vec::new();
    if pathological {
        let k = rng.gen_range(spec.blob_count_range.0..=spec.blob_count_range.1);
        let (rlo, rhi) = spec.blob_radius_range;
        let (ilo, ihi) = spec.blob_intensity_range;
        for _ in 0..k {
            let ry = rlo + (rhi - rlo) * rng.gen::<f64>();
            let rx = rlo + (rhi - rlo) * rng.gen::<f64>();
            let reach = ry.max(rx);
            let cy = reach + (h as f64 - 1.0 - 2.0 * reach).max(0.0) * rng.gen::<f64>();
            let cx = reach + (w as f64 - 1.0 - 2.0 * reach).max(0.0) * rng.gen::<f64>();
            let angle = std::f64::consts::PI * rng.gen::<f64>();
            let intensity = ilo + (ihi - ilo) * rng.gen::<f64>();
            blobs.push(Blob { center: (cy, cx), radii: (ry, rx), angle, intensity });
        }
    }

    let mut boxes = Vec::with_capacity(blobs.len());
    for b in &blobs {
        let (mut r0, mut c0, mut r1, mut c1) = (h, w, 0, 0);
        for r in 0..h {
            for c in 0..w {
                if b.dist2(r, c) < 1.0 {
                    r0 = r0.min(r);
                    c0 = c0.min(c);
                    r1 = r1.max(r + 1);
                    c1 = c1.max(c + 1);
                }
            }
        }
        if r0 < r1 && c0 < c1 {
            boxes.push(BBox { row0: r0, col0: c0, row1: r1, col1: c1 });
        }
    }

    let channel_offsets: Vec<f64> = (0..spec.channels).map(|c| if c == 0 { 0.0 } else { rng.gen_range(-0.03..0.03) }).collect();
    let image = Tensor::from_fn(spec.shape(), |ch, r, c| {
        let lesion: f64 = blobs.iter().map(|b| b.value(r, c)).sum();
        quantize(base + channel_offsets[ch] + texture[r * w + c] + lesion)
    });
    Sample { id: format!("s{index:05}"), image, label: u8::from(!boxes.is_empty()), boxes }
}

/// Builds `spec.count` samples; a pure function of `spec`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let n_path = spec.pathological_count();
    let mut labels: Vec<bool> = (0..spec.count).map(|i| i < n_path).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    labels.shuffle(&mut rng);
    let samples = labels.iter().enumerate().map(|(i, &p)| generate_sample(spec, i, p)).collect();
    Ok(Dataset { samples })
}

/// Stratified, seed-deterministic split.
///
/// Sizes: `train = round(r₀·n)`, `val = round(r₁·n)`, `test` takes the rest.
/// Each class is shuffled, the classes are interleaved by fractional rank so
/// every contiguous run holds each class in proportion (±1), and the run is
/// cut into the three parts.
pub fn split_dataset(ds: &Dataset, ratios: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(invalid("split", format!("ratios must be positive, got {ratios:?}")));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid("split", format!("ratios must sum to 1, got {ratios:?}")));
    }
    let n = ds.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = (ratios[1] * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(invalid("split", format!("{n} samples leave a split empty under {ratios:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut keyed: Vec<(f64, u8, usize)> = Vec::with_capacity(n);
    for (&label, idx) in by_class.iter_mut() {
        idx.shuffle(&mut rng);
        let m = idx.len() as f64;
        keyed.extend(idx.iter().enumerate().map(|(j, &i)| ((j as f64 + 0.5) / m, label, i)));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let take = |range: std::ops::Range<usize>| Dataset {
        samples: keyed[range].iter().map(|&(_, _, i)| ds.samples[i].clone()).collect(),
    };
    Ok((take(0..n_train), take(n_train..n_train + n_val), take(n_train + n_val..n)))
}

/// Union of the boxes as a binary mask.
pub fn gt_mask(boxes: &[BBox], height: usize, width: usize) -> BinaryMask {
    let mut m = BinaryMask::new(height, width);
    for b in boxes {
        debug_assert!(b.is_valid_for(height, width));
        for r in b.row0..b.row1.min(height) {
            for c in b.col0..b.col1.min(width) {
                m.set(r, c, true);
            }
        }
    }
    m
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    id: String,
    file: String,
    label: u8,
    channels: usize,
    boxes: Vec<BBox>,
}

/// Channels are stacked vertically into one 16-bit grayscale PNG.
pub(crate) fn write_png16(path: &Path, image: &Image) -> Result<()> {
    let s = image.shape();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), s.width as u32, (s.channels * s.height) as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    let mut bytes = Vec::with_capacity(2 * s.len());
    for &v in image.data() {
        let q = (v.clamp(0.0, 1.0) * QUANT).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    writer.write_image_data(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    writer.finish().map_err(|e| Error::format(path, e.to_string()))
}

pub(crate) fn read_png16(path: &Path, channels: usize) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::format(path, "expected 16-bit grayscale PNG"));
    }
    let (w, total_h) = (info.width as usize, info.height as usize);
    if channels == 0 || total_h % channels != 0 {
        return Err(Error::format(path, format!("height {total_h} is not a multiple of {channels} channels")));
    }
    let data = buf[..info.buffer_size()].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / QUANT).collect();
    Tensor::from_vec(Shape::new(channels, total_h / channels, w), data)
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let index_path = dir.join(INDEX_FILE);
    let mut index = BufWriter::new(fs::File::create(&index_path).map_err(|e| Error::io(&index_path, e))?);
    for s in &ds.samples {
        let file = format!("images/{}.png", s.id);
        write_png16(&dir.join(&file), &s.image)?;
        let rec = IndexRecord { id: s.id.clone(), file, label: s.label, channels: s.image.channels(), boxes: s.boxes.clone() };
        serde_json::to_writer(&mut index, &rec).expect("record serializes");
        index.write_all(b"\n").map_err(|e| Error::io(&index_path, e))?;
    }
    index.flush().map_err(|e| Error::io(&index_path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let index_path = dir.join(INDEX_FILE);
    if !index_path.is_file() {
        return Err(Error::MissingIndex(dir.to_path_buf()));
    }
    let index = BufReader::new(fs::File::open(&index_path).map_err(|e| Error::io(&index_path, e))?);
    let mut samples = Vec::new();
    for (n, line) in index.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&index_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IndexRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(&index_path, format!("record {} (line {}): {e}", samples.len(), n + 1)))?;
        let image = read_png16(&dir.join(&rec.file), rec.channels)?;
        let (h, w) = (image.height(), image.width());
        if let Some(b) = rec.boxes.iter().find(|b| !b.is_valid_for(h, w)) {
            return Err(Error::format(&index_path, format!("record `{}`: box {b:?} outside {h}x{w}", rec.id)));
        }
        if (rec.label == 1) != !rec.boxes.is_empty() || rec.label > 1 {
            return Err(Error::format(&index_path, format!("record `{}`: label {} inconsistent with boxes", rec.id, rec.label)));
        }
        samples.push(Sample { id: rec.id, image, label: rec.label, boxes: rec.boxes });
    }
    if let Some(first) = samples.first() {
        let shape = first.image.shape();
        if let Some(bad) = samples.iter().find(|s| s.image.shape() != shape) {
            return Err(Error::format(&index_path, format!("record `{}` has shape {}, expected {shape}", bad.id, bad.image.shape())));
        }
    }
    Ok(Dataset { samples })
}
