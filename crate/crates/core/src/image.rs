//! Dense channel-major image tensors with values in `[0, 1]`.

use crate::error::{Error, Result};

/// An RGB or RGBA image stored channel-major, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 3 && channels != 4 {
            return Err(Error::InvalidInput(format!(
                "image must have 3 or 4 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("image dimensions must be >= 1".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::InvalidInput(format!(
                "image data length {} != {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "image value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Image filled with a constant colour; `color.len()` selects the channel count.
    pub fn filled(height: usize, width: usize, color: &[f32]) -> Result<Self> {
        let channels = color.len();
        let plane = height * width;
        let mut data = Vec::with_capacity(channels * plane);
        for &c in color {
            data.extend(std::iter::repeat_n(c, plane));
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    /// One full channel plane.
    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// RGB triple at a pixel (first three channels).
    #[inline]
    pub fn rgb(&self, row: usize, col: usize) -> [f32; 3] {
        [
            self.get(0, row, col),
            self.get(1, row, col),
            self.get(2, row, col),
        ]
    }

    /// Build an image from per-pixel values, bypassing the range check.
    /// Callers guarantee values stay in `[0, 1]`.
    pub(crate) fn from_raw_unchecked(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Convert 8-bit interleaved RGB into a tensor (`v / 255`).
    pub fn from_rgb8(height: usize, width: usize, interleaved: &[u8]) -> Result<Self> {
        if interleaved.len() != 3 * height * width {
            return Err(Error::InvalidInput(format!(
                "rgb8 buffer length {} != 3x{}x{}",
                interleaved.len(),
                height,
                width
            )));
        }
        let plane = height * width;
        let mut data = vec![0f32; 3 * plane];
        for (i, px) in interleaved.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        Self::new(3, height, width, data)
    }

    /// Quantise to 8-bit interleaved RGB (first three channels, round half up).
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                out.push(quantize_u8(self.data[c * plane + i]));
            }
        }
        out
    }
}

#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}
