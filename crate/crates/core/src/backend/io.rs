//! PNG and checksum helpers for the on-disk interchange format.
//!
//! Images are 8-bit RGB PNGs, candidate masks 8-bit grayscale PNGs holding
//! only 0 and 255, and ground-truth instance maps 16-bit grayscale PNGs.

use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, ImageReader, Luma, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::mask::BinaryMask;
use crate::metrics::InstanceSegmentation;

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn encode_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// (height, width) from the PNG header, without decoding pixels.
pub fn png_dims(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| encode_err(path, e))?;
    Ok((h as usize, w as usize))
}

/// Read an image as RGB; alpha, if present, is dropped.
pub fn read_rgb_png(path: &Path) -> Result<ImageTensor> {
    let rgb = decode(path)?.into_rgb8();
    let (w, h) = rgb.dimensions();
    ImageTensor::from_rgb8(h as usize, w as usize, rgb.as_raw())
}

pub fn write_rgb_png(path: &Path, image: &ImageTensor) -> Result<()> {
    let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, image.to_rgb8())
        .expect("buffer length matches dims");
    buf.save(path).map_err(|e| encode_err(path, e))
}

pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = decode(path)?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::format(
                path,
                format!("mask must be 8-bit grayscale, got {:?}", other.color()),
            ))
        }
    };
    let (w, h) = gray.dimensions();
    let mut bits = Vec::with_capacity((w * h) as usize);
    for &v in gray.as_raw() {
        match v {
            0 => bits.push(false),
            255 => bits.push(true),
            v => {
                return Err(Error::format(
                    path,
                    format!("mask value {v} is neither 0 nor 255"),
                ))
            }
        }
    }
    BinaryMask::new(h as usize, w as usize, bits)
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let data = mask
        .bits()
        .iter()
        .map(|&b| if b { 255 } else { 0 })
        .collect();
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data)
        .expect("buffer length matches dims");
    buf.save(path).map_err(|e| encode_err(path, e))
}

/// Read a ground-truth instance map (16-bit; 8-bit is accepted too).
pub fn read_instance_png(path: &Path) -> Result<InstanceSegmentation> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels: Vec<u16> = match img {
        DynamicImage::ImageLuma16(g) => g.into_raw(),
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(u16::from).collect(),
        other => {
            return Err(Error::format(
                path,
                format!("instance map must be grayscale, got {:?}", other.color()),
            ))
        }
    };
    InstanceSegmentation::new(h, w, labels)
}

pub fn write_instance_png(path: &Path, seg: &InstanceSegmentation) -> Result<()> {
    let (h, w) = seg.dims();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, seg.labels().to_vec()).expect("dims match");
    buf.save(path).map_err(|e| encode_err(path, e))
}

/// Lower-case hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn verify_sha256(path: &Path, expected: &str) -> Result<()> {
    let actual = sha256_file(path)?;
    if !actual.eq_ignore_ascii_case(expected) {
        return Err(Error::format(
            path,
            format!("sha256 mismatch: expected {expected}, got {actual}"),
        ));
    }
    Ok(())
}
