//! Datasets: raw images, the IDX container MNIST ships in, the feature CSV
//! interchange format, and sampling of binary classification tasks.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::rng_from_seed;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// An 8-bit raster, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Parameter(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Length(format!(
                "{} pixel bytes for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        Ok(RawImage {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// All-zero image.
    pub fn blank(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::new(width, height, channels, vec![0; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = value;
    }

    /// Flattened pixels scaled to `[0, 1]`.
    pub fn to_features(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }
}

/// Binary class label, `+1` or `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }

    pub fn from_sign(sign: f64) -> Label {
        if sign >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: Label,
    pub weight: f64,
    /// Index of the original example this one was derived from; originals
    /// point at themselves.
    pub origin_id: usize,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: Label, origin_id: usize) -> Self {
        LabeledExample {
            features,
            label,
            weight: 1.0,
            origin_id,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

/// Ordered collection of weighted examples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    feature_dim: usize,
}

impl Dataset {
    pub fn empty(feature_dim: usize) -> Self {
        Dataset {
            examples: Vec::new(),
            feature_dim,
        }
    }

    pub fn from_examples(examples: Vec<LabeledExample>) -> Result<Self> {
        let feature_dim = examples.first().map_or(0, |e| e.features.len());
        let mut ds = Dataset::empty(feature_dim);
        ds.examples.reserve(examples.len());
        for e in examples {
            ds.push(e)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, example: LabeledExample) -> Result<()> {
        if example.features.len() != self.feature_dim {
            return Err(Error::Data(format!(
                "example has {} features, dataset has {}",
                example.features.len(),
                self.feature_dim
            )));
        }
        if !(example.weight >= 0.0 && example.weight.is_finite()) {
            return Err(Error::Data(format!(
                "example weight must be finite and nonnegative, got {}",
                example.weight
            )));
        }
        if example.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("example has non-finite features".into()));
        }
        self.examples.push(example);
        Ok(())
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn examples_mut(&mut self) -> &mut [LabeledExample] {
        &mut self.examples
    }

    pub fn get(&self, i: usize) -> Result<&LabeledExample> {
        self.examples.get(i).ok_or(Error::Index {
            index: i,
            len: self.examples.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn total_weight(&self) -> f64 {
        self.examples.iter().map(|e| e.weight).sum()
    }

    /// Number of (positive, negative) examples.
    pub fn label_counts(&self) -> (usize, usize) {
        let pos = self
            .examples
            .iter()
            .filter(|e| e.label == Label::Positive)
            .count();
        (pos, self.examples.len() - pos)
    }

    /// Checks the preconditions shared by every fit: nonempty, positive total
    /// weight, and positive weight on both labels.
    pub fn check_fittable(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::Data("cannot fit on an empty dataset".into()));
        }
        let mut pos = 0.0;
        let mut neg = 0.0;
        for e in &self.examples {
            match e.label {
                Label::Positive => pos += e.weight,
                Label::Negative => neg += e.weight,
            }
        }
        if pos + neg <= 0.0 {
            return Err(Error::Data("total example weight is zero".into()));
        }
        if pos <= 0.0 || neg <= 0.0 {
            return Err(Error::Data(
                "both labels need positive weight to fit a classifier".into(),
            ));
        }
        Ok(())
    }

    /// Copy without example `i`.
    pub fn without(&self, i: usize) -> Result<Dataset> {
        self.get(i)?;
        let mut out = self.clone();
        out.examples.remove(i);
        Ok(out)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut out = Dataset::empty(self.feature_dim);
        for &i in indices {
            out.examples.push(self.get(i)?.clone());
        }
        Ok(out)
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.examples
            .iter()
            .map(|e| e.features.as_slice())
            .collect()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length(format!("IDX header truncated at byte {offset}")))
}

/// Parses an IDX image file (magic `0x00000803`) into 1-channel images.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<RawImage>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "IDX images magic should be 0x{IDX_IMAGES_MAGIC:08x}, found 0x{magic:08x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let per_image = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != count * per_image {
        return Err(Error::Length(format!(
            "IDX images declare {count} x {rows} x {cols} bytes, payload has {}",
            payload.len()
        )));
    }
    payload
        .chunks_exact(per_image.max(1))
        .take(count)
        .map(|px| RawImage::new(cols, rows, 1, px.to_vec()))
        .collect()
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "IDX labels magic should be 0x{IDX_LABELS_MAGIC:08x}, found 0x{magic:08x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Length(format!(
            "IDX labels declare {count} entries, payload has {}",
            payload.len()
        )));
    }
    Ok(payload.to_vec())
}

/// Loads an MNIST-style image/label file pair.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<(RawImage, u8)>> {
    let images = parse_idx_images(&read_file(images_path)?)?;
    let labels = parse_idx_labels(&read_file(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::Pairing {
            images: images.len(),
            labels: labels.len(),
        });
    }
    Ok(images.into_iter().zip(labels).collect())
}

/// Encodes single-channel images of one size as an IDX image file.
pub fn encode_idx_images(images: &[RawImage]) -> Result<Vec<u8>> {
    let (w, h) = images.first().map_or((0, 0), |i| (i.width(), i.height()));
    let mut out = Vec::with_capacity(16 + images.len() * w * h);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    for img in images {
        if img.width() != w || img.height() != h || img.channels() != 1 {
            return Err(Error::Parameter(
                "IDX image files hold single-channel images of one size".into(),
            ));
        }
        out.extend_from_slice(img.pixels());
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn parse_label(cell: &str, line: usize) -> Result<Label> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("label {cell:?} is not numeric"),
    })?;
    if v == 1.0 {
        Ok(Label::Positive)
    } else if v == 0.0 || v == -1.0 {
        Ok(Label::Negative)
    } else {
        Err(Error::Label {
            line,
            value: cell.to_string(),
        })
    }
}

fn parse_cell(cell: &str, line: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cell {cell:?} is not numeric"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("cell {cell:?} is not finite"),
        });
    }
    Ok(v)
}

fn csv_records(text: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

/// A first row whose leading cell is not a number is a header.
fn skip_header(rows: &mut Vec<(usize, Vec<String>)>) {
    if let Some((_, first)) = rows.first() {
        if first
            .first()
            .is_some_and(|c| c.trim().parse::<f64>().is_err())
        {
            rows.remove(0);
        }
    }
}

/// Parses feature CSV text: label column (`0/1` or `-1/+1`) then features.
pub fn parse_feature_csv(text: &str) -> Result<Dataset> {
    let mut rows = csv_records(text)?;
    skip_header(&mut rows);
    if rows.is_empty() {
        return Err(Error::Format("feature CSV has no data rows".into()));
    }
    let width = rows[0].1.len();
    if width < 2 {
        return Err(Error::Format(
            "feature CSV rows need a label and at least one feature".into(),
        ));
    }
    let mut ds = Dataset::empty(width - 1);
    ds.examples.reserve(rows.len());
    for (row_index, (line, cells)) in rows.iter().enumerate() {
        if cells.len() != width {
            return Err(Error::Format(format!(
                "line {line} has {} columns, expected {width}",
                cells.len()
            )));
        }
        let label = parse_label(&cells[0], *line)?;
        let features = cells[1..]
            .iter()
            .map(|c| parse_cell(c, *line))
            .collect::<Result<Vec<_>>>()?;
        ds.push(LabeledExample::new(features, label, row_index))?;
    }
    Ok(ds)
}

pub fn load_feature_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_csv(&text)
}

/// Writes the feature CSV format with a header row. Labels are written as
/// `1` / `-1`; floats use the shortest representation that round-trips.
pub fn write_feature_csv<W: Write>(out: &mut W, data: &Dataset) -> std::io::Result<()> {
    write!(out, "label")?;
    for j in 0..data.feature_dim() {
        write!(out, ",x{j}")?;
    }
    writeln!(out)?;
    for e in data.examples() {
        write!(
            out,
            "{}",
            if e.label == Label::Positive {
                "1"
            } else {
                "-1"
            }
        )?;
        for v in &e.features {
            write!(out, ",{v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_feature_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    write_feature_csv(&mut buf, data).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Precomputed augmented feature rows keyed by origin id, each family ordered
/// by member index.
pub type AugmentedFeatures = BTreeMap<usize, Vec<Vec<f64>>>;

/// Parses the companion CSV: `origin_id, member_index, features...`.
pub fn parse_augmented_feature_csv(text: &str) -> Result<AugmentedFeatures> {
    let mut rows = csv_records(text)?;
    skip_header(&mut rows);
    if rows.is_empty() {
        return Err(Error::Format(
            "augmented feature CSV has no data rows".into(),
        ));
    }
    let width = rows[0].1.len();
    if width < 3 {
        return Err(Error::Format(
            "augmented feature rows need origin_id, member_index and features".into(),
        ));
    }
    let mut staged: BTreeMap<usize, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for (line, cells) in &rows {
        if cells.len() != width {
            return Err(Error::Format(format!(
                "line {line} has {} columns, expected {width}",
                cells.len()
            )));
        }
        let parse_index = |c: &str| {
            c.trim().parse::<usize>().map_err(|_| Error::Parse {
                line: *line,
                msg: format!("{c:?} is not a nonnegative integer"),
            })
        };
        let origin = parse_index(&cells[0])?;
        let member = parse_index(&cells[1])?;
        let features = cells[2..]
            .iter()
            .map(|c| parse_cell(c, *line))
            .collect::<Result<Vec<_>>>()?;
        if staged
            .entry(origin)
            .or_default()
            .insert(member, features)
            .is_some()
        {
            return Err(Error::Format(format!(
                "line {line}: duplicate member {member} for origin {origin}"
            )));
        }
    }
    let mut out = AugmentedFeatures::new();
    for (origin, members) in staged {
        if members.keys().copied().ne(0..members.len()) {
            return Err(Error::Format(format!(
                "origin {origin}: member indices must be 0..{}",
                members.len()
            )));
        }
        out.insert(origin, members.into_values().collect());
    }
    Ok(out)
}

pub fn load_augmented_feature_csv(path: &Path) -> Result<AugmentedFeatures> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_augmented_feature_csv(&text)
}

pub fn write_augmented_feature_csv<W: Write>(
    out: &mut W,
    families: &AugmentedFeatures,
) -> std::io::Result<()> {
    let dim = families
        .values()
        .flat_map(|f| f.first())
        .map(Vec::len)
        .next()
        .unwrap_or(0);
    write!(out, "origin_id,member_index")?;
    for j in 0..dim {
        write!(out, ",x{j}")?;
    }
    writeln!(out)?;
    for (origin, members) in families {
        for (m, features) in members.iter().enumerate() {
            write!(out, "{origin},{m}")?;
            for v in features {
                write!(out, ",{v:?}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// A sampled binary task: the training dataset plus the images it came from.
#[derive(Debug, Clone)]
pub struct BinaryTask {
    pub dataset: Dataset,
    /// `images[i]` is the raster behind `dataset.examples()[i]`.
    pub images: Vec<RawImage>,
    /// Positions of the sampled examples in the input pair list.
    pub source_indices: Vec<usize>,
    /// Positions of the eligible examples that were not sampled.
    pub unused_indices: Vec<usize>,
    /// Realized (positive, negative) counts.
    pub class_split: (usize, usize),
}

/// All examples of `class_a` (as `+1`) and `class_b` (as `-1`), in input
/// order, as `(image, label)` pairs.
pub fn binary_pool(
    pairs: &[(RawImage, u8)],
    class_a: u8,
    class_b: u8,
) -> Vec<(usize, RawImage, Label)> {
    pairs
        .iter()
        .enumerate()
        .filter_map(|(i, (img, y))| {
            if *y == class_a {
                Some((i, img.clone(), Label::Positive))
            } else if *y == class_b {
                Some((i, img.clone(), Label::Negative))
            } else {
                None
            }
        })
        .collect()
}

/// Samples `n_train` examples of classes `{class_a, class_b}` uniformly
/// without replacement. The chosen examples keep input order.
pub fn make_binary_task(
    pairs: &[(RawImage, u8)],
    class_a: u8,
    class_b: u8,
    n_train: usize,
    seed: u64,
) -> Result<BinaryTask> {
    if class_a == class_b {
        return Err(Error::Parameter("the two classes must differ".into()));
    }
    if n_train == 0 {
        return Err(Error::Size("n_train must be positive".into()));
    }
    let pool = binary_pool(pairs, class_a, class_b);
    if pool.len() < n_train {
        return Err(Error::Size(format!(
            "{n_train} training examples requested, only {} of classes {class_a}/{class_b}",
            pool.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut chosen = index::sample(&mut rng, pool.len(), n_train).into_vec();
    chosen.sort_unstable();

    let mut picked = vec![false; pool.len()];
    let mut dataset = Dataset::empty(0);
    let mut images = Vec::with_capacity(n_train);
    let mut source_indices = Vec::with_capacity(n_train);
    for (row, &k) in chosen.iter().enumerate() {
        picked[k] = true;
        let (src, img, label) = &pool[k];
        let features = img.to_features();
        if row == 0 {
            dataset = Dataset::empty(features.len());
        }
        dataset.push(LabeledExample::new(features, *label, row))?;
        images.push(img.clone());
        source_indices.push(*src);
    }
    let unused_indices = pool
        .iter()
        .zip(&picked)
        .filter(|(_, &p)| !p)
        .map(|((src, _, _), _)| *src)
        .collect();
    let class_split = dataset.label_counts();
    Ok(BinaryTask {
        dataset,
        images,
        source_indices,
        unused_indices,
        class_split,
    })
}
