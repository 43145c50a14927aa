//! Binary per-object masks and mask sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle, rows/cols inclusive-exclusive: `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn width(&self) -> usize {
        self.col1 - self.col0
    }

    pub fn is_empty(&self) -> bool {
        self.row1 <= self.row0 || self.col1 <= self.col0
    }

    pub fn fits_within(&self, height: usize, width: usize) -> bool {
        self.row0 <= self.row1
            && self.col0 <= self.col1
            && self.row1 <= height
            && self.col1 <= width
    }

    /// Rectangle grown by `margin` on every side, clipped at zero but not at the far edge.
    pub fn expanded(&self, margin: usize) -> BBox {
        BBox {
            row0: self.row0.saturating_sub(margin),
            col0: self.col0.saturating_sub(margin),
            row1: self.row1 + margin,
            col1: self.col1 + margin,
        }
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.row0 < other.row1
            && other.row0 < self.row1
            && self.col0 < other.col1
            && other.col0 < self.col1
    }
}

/// Where a set of masks came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSource {
    #[default]
    ExternalSegmenter,
    OclSlots,
    GroundTruth,
    Synthetic,
}

/// A binary pixel mask over an `H x W` grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "mask bit count {} != {}x{}",
                bits.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    /// Filled rectangle; the box is clipped to the grid.
    pub fn from_bbox(height: usize, width: usize, bbox: &BBox) -> Self {
        Self::from_fn(height, width, |r, c| {
            r >= bbox.row0 && r < bbox.row1 && c >= bbox.col0 && c < bbox.col1
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tight bounding rectangle of the set pixels, `None` for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        let mut bbox: Option<BBox> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    let b = bbox.get_or_insert(BBox {
                        row0: r,
                        col0: c,
                        row1: r + 1,
                        col1: c + 1,
                    });
                    b.row0 = b.row0.min(r);
                    b.col0 = b.col0.min(c);
                    b.row1 = b.row1.max(r + 1);
                    b.col1 = b.col1.max(c + 1);
                }
            }
        }
        bbox
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: self.dims(),
            });
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        other.ensure_dims(self.dims())?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        other.ensure_dims(self.dims())?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a || b)
                .collect(),
        })
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// Morphological dilation with a `(2r+1)^2` square structuring element.
    pub fn dilate(&self, radius: usize) -> BinaryMask {
        self.morph(radius, true)
    }

    /// Morphological erosion with a `(2r+1)^2` square structuring element.
    /// Pixels outside the grid count as unset.
    pub fn erode(&self, radius: usize) -> BinaryMask {
        self.morph(radius, false)
    }

    fn morph(&self, radius: usize, dilate: bool) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as isize;
        let (h, w) = (self.height as isize, self.width as isize);
        Self::from_fn(self.height, self.width, |row, col| {
            let (row, col) = (row as isize, col as isize);
            let mut hit = !dilate;
            'outer: for dr in -r..=r {
                for dc in -r..=r {
                    let (rr, cc) = (row + dr, col + dc);
                    let v = rr >= 0
                        && rr < h
                        && cc >= 0
                        && cc < w
                        && self.get(rr as usize, cc as usize);
                    if dilate && v {
                        hit = true;
                        break 'outer;
                    }
                    if !dilate && !v {
                        hit = false;
                        break 'outer;
                    }
                }
            }
            hit
        })
    }
}

/// Intersection over union; `0.0` when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    b.ensure_dims(a.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// An ordered list of masks sharing one grid. Masks may overlap.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskSet {
    pub masks: Vec<BinaryMask>,
    pub source: MaskSource,
}

impl MaskSet {
    pub fn new(masks: Vec<BinaryMask>, source: MaskSource) -> Result<Self> {
        if let Some(first) = masks.first() {
            let dims = first.dims();
            for m in &masks[1..] {
                m.ensure_dims(dims)?;
            }
        }
        Ok(Self { masks, source })
    }

    pub fn empty(source: MaskSource) -> Self {
        Self {
            masks: Vec::new(),
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        self.masks.iter().try_for_each(|m| m.ensure_dims(dims))
    }
}
