//! Deterministic, exhaustive augmentation maps over raster images.
//!
//! Each [`TransformSpec`] is a finite grid of parameters; expanding an example
//! applies every grid element in a fixed order:
//!
//! * translate: up, down, left, right by `offset` pixels
//! * rotate: ascending angle (degrees, counterclockwise positive)
//! * crop: ascending border width, each zoomed back to the input size
//!
//! Rotation and crop-zoom sample with bilinear interpolation; source points
//! that fall outside the image read as zero.

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Label, LabeledExample, RawImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    Translate { offset: usize },
    Rotate { angles: Vec<f64> },
    Crop { borders: Vec<usize> },
}

impl TransformSpec {
    pub fn translate(offset: usize) -> Result<Self> {
        let spec = TransformSpec::Translate { offset };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rotate(angles: Vec<f64>) -> Result<Self> {
        let spec = TransformSpec::Rotate { angles };
        spec.validate()?;
        Ok(spec)
    }

    pub fn crop(borders: Vec<usize>) -> Result<Self> {
        let spec = TransformSpec::Crop { borders };
        spec.validate()?;
        Ok(spec)
    }

    /// 2 px in the four cardinal directions.
    pub fn mnist_translate() -> Self {
        TransformSpec::Translate { offset: 2 }
    }

    /// 15 angles evenly spaced over [-30°, 30°] with the identity removed.
    pub fn mnist_rotate() -> Self {
        let angles = (0..15)
            .map(|i| -30.0 + 60.0 * i as f64 / 14.0)
            .filter(|&a: &f64| a.abs() > 1e-9)
            .collect();
        TransformSpec::Rotate { angles }
    }

    /// Borders 1 through 6.
    pub fn mnist_crop() -> Self {
        TransformSpec::Crop {
            borders: (1..=6).collect(),
        }
    }

    pub fn cifar_translate() -> Self {
        TransformSpec::Translate { offset: 3 }
    }

    pub fn norb_translate() -> Self {
        TransformSpec::Translate { offset: 6 }
    }

    /// ±5°, ±2.5°, used for both CIFAR10 and NORB.
    pub fn small_rotate() -> Self {
        TransformSpec::Rotate {
            angles: vec![-5.0, -2.5, 2.5, 5.0],
        }
    }

    pub fn cifar_crop() -> Self {
        TransformSpec::Crop { borders: vec![2] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TransformSpec::Translate { offset } => {
                if *offset == 0 {
                    return Err(Error::Parameter(
                        "translate offset 0 is the identity transform".into(),
                    ));
                }
            }
            TransformSpec::Rotate { angles } => {
                if angles.is_empty() {
                    return Err(Error::Parameter("rotate grid is empty".into()));
                }
                if let Some(a) = angles.iter().find(|a| !a.is_finite() || **a == 0.0) {
                    return Err(Error::Parameter(format!(
                        "rotate angle {a} is not allowed (finite, nonzero)"
                    )));
                }
            }
            TransformSpec::Crop { borders } => {
                if borders.is_empty() {
                    return Err(Error::Parameter("crop grid is empty".into()));
                }
                if borders.contains(&0) {
                    return Err(Error::Parameter(
                        "crop border 0 is the identity transform".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Number of augmented copies produced per example, |f_T(z)|.
    pub fn grid_size(&self) -> usize {
        match self {
            TransformSpec::Translate { .. } => 4,
            TransformSpec::Rotate { angles } => angles.len(),
            TransformSpec::Crop { borders } => borders.len(),
        }
    }

    /// Applies every grid element to `image`, in grid order.
    pub fn apply_all(&self, image: &RawImage) -> Result<Vec<RawImage>> {
        self.validate()?;
        match self {
            TransformSpec::Translate { offset } => {
                let o = *offset as i64;
                [(0, -o), (0, o), (-o, 0), (o, 0)]
                    .iter()
                    .map(|&(dx, dy)| translate(image, dx, dy))
                    .collect()
            }
            TransformSpec::Rotate { angles } => {
                let mut sorted = angles.clone();
                sorted.sort_by(f64::total_cmp);
                sorted.iter().map(|&a| rotate(image, a)).collect()
            }
            TransformSpec::Crop { borders } => {
                let mut sorted = borders.clone();
                sorted.sort_unstable();
                sorted.iter().map(|&b| crop_zoom(image, b)).collect()
            }
        }
    }
}

/// The augmented copies f_T(z) of one original example.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationFamily {
    pub origin_id: usize,
    pub members: Vec<LabeledExample>,
}

impl AugmentationFamily {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Shifts content by `(dx, dy)`; `dy > 0` moves content down. Vacated pixels
/// are zero.
pub fn translate(image: &RawImage, dx: i64, dy: i64) -> Result<RawImage> {
    let (w, h) = (image.width() as i64, image.height() as i64);
    if dx.abs() >= w || dy.abs() >= h {
        return Err(Error::Parameter(format!(
            "translation ({dx}, {dy}) leaves nothing of a {w}x{h} image"
        )));
    }
    let mut out = RawImage::blank(image.width(), image.height(), image.channels())?;
    for y in 0..h {
        let sy = y - dy;
        if !(0..h).contains(&sy) {
            continue;
        }
        for x in 0..w {
            let sx = x - dx;
            if !(0..w).contains(&sx) {
                continue;
            }
            for c in 0..image.channels() {
                out.set(
                    x as usize,
                    y as usize,
                    c,
                    image.get(sx as usize, sy as usize, c),
                );
            }
        }
    }
    Ok(out)
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear sample at continuous pixel coordinates; out-of-range taps read 0.
fn sample_zero_fill(image: &RawImage, sx: f64, sy: f64, c: usize) -> f64 {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let tap = |x: i64, y: i64| -> f64 {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            f64::from(image.get(x as usize, y as usize, c))
        } else {
            0.0
        }
    };
    let top = tap(x0, y0) * (1.0 - fx) + tap(x0 + 1, y0) * fx;
    let bottom = tap(x0, y0 + 1) * (1.0 - fx) + tap(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotates about the image center, counterclockwise for positive angles as
/// displayed (rows grow downward).
pub fn rotate(image: &RawImage, degrees: f64) -> Result<RawImage> {
    if !degrees.is_finite() {
        return Err(Error::Parameter(format!(
            "rotation angle {degrees} is not finite"
        )));
    }
    if degrees == 0.0 {
        return Ok(image.clone());
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (image.width() as f64 - 1.0) / 2.0;
    let cy = (image.height() as f64 - 1.0) / 2.0;
    let mut out = RawImage::blank(image.width(), image.height(), image.channels())?;
    for y in 0..image.height() {
        let v = y as f64 - cy;
        for x in 0..image.width() {
            let u = x as f64 - cx;
            // inverse map: destination (u, v) comes from R(-θ)·(u, v) in y-down coordinates
            let sx = cx + cos * u - sin * v;
            let sy = cy + sin * u + cos * v;
            for c in 0..image.channels() {
                out.set(x, y, c, to_u8(sample_zero_fill(image, sx, sy, c)));
            }
        }
    }
    Ok(out)
}

/// Drops `border` pixels on every side and bilinearly rescales the remaining
/// center back to the original size (pixel-center aligned, edge clamped).
pub fn crop_zoom(image: &RawImage, border: usize) -> Result<RawImage> {
    let (w, h) = (image.width(), image.height());
    if border == 0 || 2 * border >= w.min(h) {
        return Err(Error::Parameter(format!(
            "crop border {border} must be in 1..{} for a {w}x{h} image",
            (w.min(h) + 1) / 2
        )));
    }
    let (cw, ch) = (w - 2 * border, h - 2 * border);
    let mut out = RawImage::blank(w, h, image.channels())?;
    // source coordinates are relative to the crop window's top-left pixel
    for y in 0..h {
        let sy = ((y as f64 + 0.5) * ch as f64 / h as f64 - 0.5).clamp(0.0, (ch - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(ch - 1);
        let fy = sy - y0 as f64;
        for x in 0..w {
            let sx = ((x as f64 + 0.5) * cw as f64 / w as f64 - 0.5).clamp(0.0, (cw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(cw - 1);
            let fx = sx - x0 as f64;
            for c in 0..image.channels() {
                let p = |xx: usize, yy: usize| f64::from(image.get(xx + border, yy + border, c));
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                out.set(x, y, c, to_u8(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Ok(out)
}

/// Expands one example into its augmentation family. Members carry the
/// origin's label and origin id, unit weight, and pixel features in `[0, 1]`.
pub fn expand(
    spec: &TransformSpec,
    example: &LabeledExample,
    image: &RawImage,
) -> Result<AugmentationFamily> {
    let members = spec
        .apply_all(image)?
        .iter()
        .map(|img| LabeledExample::new(img.to_features(), example.label, example.origin_id))
        .collect();
    Ok(AugmentationFamily {
        origin_id: example.origin_id,
        members,
    })
}

/// The "poisoned" test set: every original test example followed by all
/// augmented copies of every test example, unit weights.
pub fn build_poisoned_test(test: &[(RawImage, Label)], spec: &TransformSpec) -> Result<Dataset> {
    let (first, _) = test
        .first()
        .ok_or_else(|| Error::Size("poisoned test set needs test examples".into()))?;
    spec.validate()?;
    let mut ds = Dataset::empty(first.pixels().len());
    for (i, (img, label)) in test.iter().enumerate() {
        ds.push(LabeledExample::new(img.to_features(), *label, i))?;
    }
    for (i, (img, label)) in test.iter().enumerate() {
        for aug in spec.apply_all(img)? {
            ds.push(LabeledExample::new(aug.to_features(), *label, i))?;
        }
    }
    Ok(ds)
}
