//! Mask filtering and mask application `a(x, m)`.
//!
//! Filtering drops masks that are too small, too fragmented, or that look like
//! background (they touch most of the image's corners and side centres).
//! Application either replaces everything outside the mask with gray and
//! crops a square around it, or appends the mask as an alpha channel.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::mask::{BBox, BinaryMask, MaskSet};

/// Number of key points checked by the background heuristic.
pub const KEYPOINT_TOTAL: usize = 8;

/// Mid-gray used for the background of cropped masks.
pub const DEFAULT_GRAY: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_area_fraction: f64,
    pub max_components: usize,
    pub keypoint_threshold: usize,
    #[serde(default)]
    pub connectivity: Connectivity,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_area_fraction: 0.001,
            max_components: 30,
            keypoint_threshold: 6,
            connectivity: Connectivity::Eight,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_area_fraction > 0.0 && self.min_area_fraction < 1.0) {
            return Err(Error::Config(format!(
                "min_area_fraction must be in (0, 1), got {}",
                self.min_area_fraction
            )));
        }
        if self.max_components == 0 {
            return Err(Error::Config("max_components must be >= 1".into()));
        }
        if self.keypoint_threshold == 0 || self.keypoint_threshold > KEYPOINT_TOTAL {
            return Err(Error::Config(format!(
                "keypoint_threshold must be in [1, {KEYPOINT_TOTAL}], got {}",
                self.keypoint_threshold
            )));
        }
        Ok(())
    }
}

/// Number of connected components of set pixels (8-connectivity).
pub fn connected_components(mask: &BinaryMask) -> usize {
    connected_components_with(mask, Connectivity::Eight)
}

pub fn connected_components_with(mask: &BinaryMask, connectivity: Connectivity) -> usize {
    let (h, w) = mask.dims();
    let mut seen = vec![false; h * w];
    let mut queue = VecDeque::new();
    let mut count = 0;
    for start in 0..h * w {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let (r, c) = ((idx / w) as isize, (idx % w) as isize);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if (dr == 0 && dc == 0)
                        || (connectivity == Connectivity::Four && dr != 0 && dc != 0)
                    {
                        continue;
                    }
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let n = rr as usize * w + cc as usize;
                    if !seen[n] && mask.bits()[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
    }
    count
}

/// The four corners and four side centres of an `h x w` grid.
pub fn key_points(height: usize, width: usize) -> [(usize, usize); KEYPOINT_TOTAL] {
    let (h1, w1) = (height - 1, width - 1);
    let (hc, wc) = (height / 2, width / 2);
    [
        (0, 0),
        (0, w1),
        (h1, 0),
        (h1, w1),
        (0, wc),
        (h1, wc),
        (hc, 0),
        (hc, w1),
    ]
}

pub fn covered_key_points(mask: &BinaryMask) -> usize {
    let (h, w) = mask.dims();
    key_points(h, w)
        .iter()
        .filter(|&&(r, c)| mask.get(r, c))
        .count()
}

/// Why a mask was removed, in rule order. `None` means it passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterRejection {
    TooSmall,
    TooFragmented,
    Background,
}

pub fn check_mask(mask: &BinaryMask, cfg: &FilterConfig) -> Option<FilterRejection> {
    let (h, w) = mask.dims();
    let total = (h * w) as f64;
    // relative slack absorbs the binary representation error of decimal fractions
    let min_area = cfg.min_area_fraction * total - 1e-12 * total;
    if (mask.area() as f64) < min_area {
        return Some(FilterRejection::TooSmall);
    }
    if connected_components_with(mask, cfg.connectivity) > cfg.max_components {
        return Some(FilterRejection::TooFragmented);
    }
    if covered_key_points(mask) >= cfg.keypoint_threshold {
        return Some(FilterRejection::Background);
    }
    None
}

/// Indices (into `masks`) of the masks that pass every filtering rule, in order.
pub fn filter_mask_indices(
    masks: &MaskSet,
    image_dims: (usize, usize),
    cfg: &FilterConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    masks.ensure_dims(image_dims)?;
    Ok(masks
        .masks
        .iter()
        .enumerate()
        .filter(|(_, m)| check_mask(m, cfg).is_none())
        .map(|(i, _)| i)
        .collect())
}

pub fn filter_masks(
    masks: &MaskSet,
    image_dims: (usize, usize),
    cfg: &FilterConfig,
) -> Result<MaskSet> {
    let keep = filter_mask_indices(masks, image_dims, cfg)?;
    Ok(MaskSet {
        masks: keep.into_iter().map(|i| masks.masks[i].clone()).collect(),
        source: masks.source,
    })
}

/// How a mask is combined with its image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ApplicationMode {
    GrayBgCrop {
        target_h: usize,
        target_w: usize,
        gray: f32,
    },
    AlphaChannel,
}

impl ApplicationMode {
    pub fn gray_crop(target_h: usize, target_w: usize) -> Self {
        ApplicationMode::GrayBgCrop {
            target_h,
            target_w,
            gray: DEFAULT_GRAY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ApplicationMode::GrayBgCrop {
            target_h,
            target_w,
            gray,
        } = *self
        {
            if target_h == 0 || target_w == 0 {
                return Err(Error::Config("crop target dims must be >= 1".into()));
            }
            if !(0.0..=1.0).contains(&gray) {
                return Err(Error::Config(format!("gray value {gray} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ApplicationMode::GrayBgCrop { .. } => "gray-bg-crop",
            ApplicationMode::AlphaChannel => "alpha-channel",
        }
    }
}

/// The result of `a(x, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedImage {
    pub image: ImageTensor,
    /// Index of the candidate mask; `None` for the whole-image fallback.
    pub source_mask_index: Option<usize>,
}

pub fn apply_mask(
    mode: &ApplicationMode,
    image: &ImageTensor,
    mask: &BinaryMask,
    source_mask_index: Option<usize>,
) -> Result<AppliedImage> {
    let image = match *mode {
        ApplicationMode::GrayBgCrop {
            target_h,
            target_w,
            gray,
        } => apply_gray_bg_crop(image, mask, (target_h, target_w), gray)?,
        ApplicationMode::AlphaChannel => apply_alpha(image, mask)?,
    };
    Ok(AppliedImage {
        image,
        source_mask_index,
    })
}

/// Unresized square produced by the gray-background crop, with its placement.
#[derive(Debug, Clone, PartialEq)]
pub struct CropIntermediate {
    pub square: ImageTensor,
    /// Image coordinates of the square's top-left pixel (may be negative).
    pub origin: (isize, isize),
    pub side: usize,
    /// Tight bounding rectangle of the mask.
    pub bbox: BBox,
}

/// Gray out non-mask pixels, take the tight bounding rectangle and grow its
/// shorter side symmetrically into a square. Square pixels that fall outside
/// the image are gray; an odd surplus pixel goes to the bottom/right.
pub fn gray_bg_crop_intermediate(
    image: &ImageTensor,
    mask: &BinaryMask,
    gray: f32,
) -> Result<CropIntermediate> {
    if image.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "gray background crop expects 3 channels, got {}",
            image.channels()
        )));
    }
    mask.ensure_dims(image.dims())?;
    let bbox = mask.bbox().ok_or(Error::EmptyMask)?;
    let (h, w) = (bbox.height(), bbox.width());
    let side = h.max(w);
    let origin = (
        bbox.row0 as isize - ((side - h) / 2) as isize,
        bbox.col0 as isize - ((side - w) / 2) as isize,
    );
    let (ih, iw) = (image.height() as isize, image.width() as isize);
    let plane = side * side;
    let mut data = vec![gray; 3 * plane];
    for i in 0..side {
        let r = origin.0 + i as isize;
        if r < 0 || r >= ih {
            continue;
        }
        for j in 0..side {
            let c = origin.1 + j as isize;
            if c < 0 || c >= iw || !mask.get(r as usize, c as usize) {
                continue;
            }
            for ch in 0..3 {
                data[ch * plane + i * side + j] = image.get(ch, r as usize, c as usize);
            }
        }
    }
    Ok(CropIntermediate {
        square: ImageTensor::from_raw_unchecked(3, side, side, data),
        origin,
        side,
        bbox,
    })
}

pub fn apply_gray_bg_crop(
    image: &ImageTensor,
    mask: &BinaryMask,
    target: (usize, usize),
    gray: f32,
) -> Result<ImageTensor> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::Config("crop target dims must be >= 1".into()));
    }
    let inter = gray_bg_crop_intermediate(image, mask, gray)?;
    Ok(resize_bilinear(&inter.square, target))
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    // exact when a == b
    a + (b - a) * t
}

fn sample_axis(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, (src - i0 as f64) as f32)
}

/// Bilinear resize with half-pixel centres (no anti-aliasing).
pub fn resize_bilinear(image: &ImageTensor, target: (usize, usize)) -> ImageTensor {
    let (th, tw) = target;
    let (ih, iw) = image.dims();
    let ch = image.channels();
    let rows: Vec<_> = (0..th).map(|r| sample_axis(r, ih, th)).collect();
    let cols: Vec<_> = (0..tw).map(|c| sample_axis(c, iw, tw)).collect();
    let mut data = vec![0f32; ch * th * tw];
    for k in 0..ch {
        for (r, &(r0, r1, ty)) in rows.iter().enumerate() {
            for (c, &(c0, c1, tx)) in cols.iter().enumerate() {
                let top = lerp(image.get(k, r0, c0), image.get(k, r0, c1), tx);
                let bottom = lerp(image.get(k, r1, c0), image.get(k, r1, c1), tx);
                data[(k * th + r) * tw + c] = lerp(top, bottom, ty).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_raw_unchecked(ch, th, tw, data)
}

/// Append the mask as a fourth (alpha) channel; RGB is copied unchanged.
pub fn apply_alpha(image: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor> {
    if image.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "alpha application expects 3 channels, got {}",
            image.channels()
        )));
    }
    mask.ensure_dims(image.dims())?;
    let mut data = Vec::with_capacity(4 * mask.bits().len());
    data.extend_from_slice(image.data());
    data.extend(mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }));
    Ok(ImageTensor::from_raw_unchecked(
        4,
        image.height(),
        image.width(),
        data,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::MaskSource;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.gen::<f32>()).collect();
        ImageTensor::new(3, h, w, data).unwrap()
    }

    fn set_of(masks: Vec<BinaryMask>) -> MaskSet {
        MaskSet::new(masks, MaskSource::Synthetic).unwrap()
    }

    /// Union-find over set pixels; independent of the BFS labeller.
    fn components_union_find(mask: &BinaryMask, conn: Connectivity) -> usize {
        let (h, w) = mask.dims();
        let mut parent: Vec<usize> = (0..h * w).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut offsets = vec![(0isize, 1isize), (1, 0)];
        if conn == Connectivity::Eight {
            offsets.extend([(1, 1), (1, -1)]);
        }
        for r in 0..h {
            for c in 0..w {
                if !mask.get(r, c) {
                    continue;
                }
                for &(dr, dc) in &offsets {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    if mask.get(rr as usize, cc as usize) {
                        let a = find(&mut parent, r * w + c);
                        let b = find(&mut parent, rr as usize * w + cc as usize);
                        parent[a] = b;
                    }
                }
            }
        }
        let mut roots = std::collections::HashSet::new();
        for i in 0..h * w {
            if mask.bits()[i] {
                roots.insert(find(&mut parent, i));
            }
        }
        roots.len()
    }

    #[test]
    fn components_examples() {
        assert_eq!(connected_components(&BinaryMask::empty(5, 5)), 0);
        let mut diag = BinaryMask::empty(4, 4);
        diag.set(1, 1, true);
        diag.set(2, 2, true);
        assert_eq!(connected_components(&diag), 1);
        assert_eq!(connected_components_with(&diag, Connectivity::Four), 2);
    }

    #[test]
    fn components_match_union_find_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let density = 0.2 + 0.5 * (trial as f64 / 50.0);
            let m = BinaryMask::from_fn(32, 32, |_, _| rng.gen_bool(density));
            for conn in [Connectivity::Four, Connectivity::Eight] {
                assert_eq!(
                    connected_components_with(&m, conn),
                    components_union_find(&m, conn)
                );
            }
        }
    }

    #[test]
    fn filter_small_mask_removed() {
        let mut m = BinaryMask::empty(100, 100);
        for r in 40..42 {
            for c in 40..42 {
                m.set(r, c, true);
            }
        }
        let out = filter_masks(&set_of(vec![m]), (100, 100), &FilterConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn filter_full_image_removed_as_background() {
        let m = BinaryMask::full(50, 50);
        assert_eq!(
            check_mask(&m, &FilterConfig::default()),
            Some(FilterRejection::Background)
        );
    }

    #[test]
    fn filter_31_blocks_removed() {
        // 31 isolated 4x4 blocks on a 64x64 grid, spaced by 4 px
        let mut m = BinaryMask::empty(64, 64);
        let mut placed = 0;
        'outer: for br in 0..8 {
            for bc in 0..8 {
                if placed == 31 {
                    break 'outer;
                }
                // 3 px gaps, away from the border key points
                let (r0, c0) = (4 + br * 7, 4 + bc * 7);
                for r in r0..r0 + 4 {
                    for c in c0..c0 + 4 {
                        m.set(r, c, true);
                    }
                }
                placed += 1;
            }
        }
        assert_eq!(components_union_find(&m, Connectivity::Eight), 31);
        assert_eq!(
            check_mask(&m, &FilterConfig::default()),
            Some(FilterRejection::TooFragmented)
        );
    }

    #[test]
    fn filter_rejects_dimension_mismatch() {
        let s = set_of(vec![BinaryMask::empty(4, 4)]);
        assert!(filter_masks(&s, (5, 5), &FilterConfig::default()).is_err());
    }

    #[test]
    fn filter_config_validation() {
        let bad = FilterConfig {
            keypoint_threshold: 9,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FilterConfig {
            min_area_fraction: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn gray_crop_full_mask_square_image_is_resize() {
        let img = noise_image(16, 16, 1);
        let out = apply_gray_bg_crop(&img, &BinaryMask::full(16, 16), (8, 8), 0.3).unwrap();
        assert_eq!(out, resize_bilinear(&img, (8, 8)));
    }

    #[test]
    fn gray_crop_single_pixel() {
        let img = noise_image(10, 10, 2);
        let mut m = BinaryMask::empty(10, 10);
        m.set(4, 7, true);
        let inter = gray_bg_crop_intermediate(&img, &m, 0.5).unwrap();
        assert_eq!(inter.side, 1);
        assert_eq!(inter.square.rgb(0, 0), img.rgb(4, 7));
        let out = apply_gray_bg_crop(&img, &m, (5, 6), 0.5).unwrap();
        assert_eq!(out.dims(), (5, 6));
        for r in 0..5 {
            for c in 0..6 {
                assert_eq!(out.rgb(r, c), img.rgb(4, 7));
            }
        }
    }

    #[test]
    fn gray_crop_rectangle_geometry() {
        // 10 rows x 20 cols rectangle at rows 20..30, cols 30..50
        let img = noise_image(64, 64, 3);
        let m = BinaryMask::from_fn(64, 64, |r, c| {
            (20..30).contains(&r) && (30..50).contains(&c)
        });
        let inter = gray_bg_crop_intermediate(&img, &m, 0.5).unwrap();
        assert_eq!(inter.side, 20);
        assert_eq!(inter.origin, (15, 30));
        // rectangle centre (25, 40) == square centre
        assert_eq!(inter.origin.0 as f64 + 10.0, 25.0);
        assert_eq!(inter.origin.1 as f64 + 10.0, 40.0);
        for i in 0..20 {
            for j in 0..20 {
                let inside = (5..15).contains(&i);
                let px = inter.square.rgb(i, j);
                if inside {
                    assert_eq!(px, img.rgb(15 + i, 30 + j));
                } else {
                    assert_eq!(px, [0.5; 3]);
                }
            }
        }
    }

    #[test]
    fn gray_crop_out_of_bounds_is_gray() {
        // tall strip on the left edge: square extends past column 0
        let img = noise_image(20, 20, 4);
        let m = BinaryMask::from_fn(20, 20, |r, c| c < 2 && (4..14).contains(&r));
        let inter = gray_bg_crop_intermediate(&img, &m, 0.25).unwrap();
        assert_eq!(inter.side, 10);
        assert_eq!(inter.origin, (4, -4));
        for i in 0..10 {
            for j in 0..4 {
                assert_eq!(inter.square.rgb(i, j), [0.25; 3]);
            }
            assert_eq!(inter.square.rgb(i, 4), img.rgb(4 + i, 0));
        }
    }

    #[test]
    fn gray_crop_odd_surplus_goes_bottom_right() {
        let img = noise_image(20, 20, 5);
        // 3 rows x 6 cols: surplus 3 -> 1 above, 2 below
        let m = BinaryMask::from_fn(20, 20, |r, c| (8..11).contains(&r) && (5..11).contains(&c));
        let inter = gray_bg_crop_intermediate(&img, &m, 0.5).unwrap();
        assert_eq!(inter.side, 6);
        assert_eq!(inter.origin, (7, 5));
    }

    #[test]
    fn gray_crop_errors() {
        let img = noise_image(8, 8, 6);
        assert!(matches!(
            apply_gray_bg_crop(&img, &BinaryMask::empty(8, 8), (4, 4), 0.5),
            Err(Error::EmptyMask)
        ));
        let rgba = apply_alpha(&img, &BinaryMask::full(8, 8)).unwrap();
        assert!(apply_gray_bg_crop(&rgba, &BinaryMask::full(8, 8), (4, 4), 0.5).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = noise_image(7, 9, 7);
        assert_eq!(resize_bilinear(&img, (7, 9)), img);
        let gray = ImageTensor::filled(5, 3, &[0.5, 0.5, 0.5]).unwrap();
        let up = resize_bilinear(&gray, (17, 11));
        assert!(up.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn alpha_examples() {
        let img = noise_image(6, 5, 8);
        let full = apply_alpha(&img, &BinaryMask::full(6, 5)).unwrap();
        assert_eq!(full.channels(), 4);
        assert!(full.plane(3).iter().all(|&v| v == 1.0));
        let empty = apply_alpha(&img, &BinaryMask::empty(6, 5)).unwrap();
        assert!(empty.plane(3).iter().all(|&v| v == 0.0));
        assert_eq!(&empty.data()[..3 * 30], img.data());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = BinaryMask::from_fn(6, 5, |_, _| rng.gen_bool(0.5));
        let a = apply_alpha(&img, &m).unwrap();
        for (v, &b) in a.plane(3).iter().zip(m.bits()) {
            assert_eq!(*v == 1.0, b);
        }
        assert!(apply_alpha(&img, &BinaryMask::full(5, 5)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn random_masks() -> impl Strategy<Value = Vec<BinaryMask>> {
            proptest::collection::vec(
                (0u64..1000, 0.0f64..1.0).prop_map(|(seed, density)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    BinaryMask::from_fn(24, 24, |_, _| rng.gen_bool(density))
                }),
                0..8,
            )
        }

        proptest! {
            #[test]
            fn filter_idempotent_and_subsequence(masks in random_masks()) {
                let cfg = FilterConfig { min_area_fraction: 0.05, max_components: 20, ..Default::default() };
                let set = set_of(masks);
                let once = filter_masks(&set, (24, 24), &cfg).unwrap();
                let twice = filter_masks(&once, (24, 24), &cfg).unwrap();
                prop_assert_eq!(&once, &twice);
                let idx = filter_mask_indices(&set, (24, 24), &cfg).unwrap();
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                for (k, &i) in idx.iter().enumerate() {
                    prop_assert_eq!(&once.masks[k], &set.masks[i]);
                }
            }

            #[test]
            fn gray_crop_output_dims(seed in 0u64..500, th in 1usize..40, tw in 1usize..40) {
                let img = noise_image(20, 30, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut m = BinaryMask::from_fn(20, 30, |_, _| rng.gen_bool(0.05));
                m.set(rng.gen_range(0..20), rng.gen_range(0..30), true);
                let out = apply_gray_bg_crop(&img, &m, (th, tw), 0.5).unwrap();
                prop_assert_eq!(out.dims(), (th, tw));
                prop_assert_eq!(out.channels(), 3);
            }
        }
    }
}
