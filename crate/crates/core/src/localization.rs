//! Top-k intersection (tki) between heatmaps and damage masks.
//!
//! `tki = |M and E| / k`, where `E` marks the `k` pixels of highest signed
//! relevance and `M` is the ground-truth damage mask.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::lrp::Heatmap;
use crate::pnm;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} mask needs {} pixels, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            bits,
        }
    }

    /// Gray image to mask: any nonzero sample marks damage.
    pub fn from_image(img: &Image) -> Self {
        let luma = img.luminance();
        Self {
            width: img.width(),
            height: img.height(),
            bits: luma.iter().map(|&v| v > 0.0).collect(),
        }
    }

    /// Reads a PGM/PPM mask (0 background, 255 damage).
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_image(&pnm::read_image(path)?))
    }

    pub fn to_image(&self) -> Image {
        Image::new(
            self.width,
            self.height,
            1,
            self.bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
        .expect("mask dimensions are consistent")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// `min(100, 5% of the pixels)`, at least 1.
pub fn default_k(width: usize, height: usize) -> usize {
    (width * height / 20).clamp(1, 100)
}

/// Mask of the `k` most relevant pixels. Ties at the cut-off resolve to the
/// earlier pixel in row-major order.
pub fn top_k_mask(h: &Heatmap, k: usize) -> Result<BinaryMask> {
    let n = h.width() * h.height();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={n} for a {}x{} heatmap",
            h.width(),
            h.height()
        )));
    }
    let values = h.values();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps row-major order among equal values
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut bits = vec![false; n];
    for &i in &order[..k] {
        bits[i] = true;
    }
    BinaryMask::new(h.width(), h.height(), bits)
}

pub fn tki(mask: &BinaryMask, top_k: &BinaryMask, k: usize) -> Result<f64> {
    if mask.width != top_k.width || mask.height != top_k.height {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs top-k mask {}x{}",
            mask.width, mask.height, top_k.width, top_k.height
        )));
    }
    let marked = top_k.count();
    if k == 0 || marked != k {
        return Err(Error::InvalidArgument(format!(
            "top-k mask has {marked} pixels set, expected k = {k}"
        )));
    }
    let hits = mask
        .bits
        .iter()
        .zip(&top_k.bits)
        .filter(|(&m, &e)| m && e)
        .count();
    Ok(hits as f64 / k as f64)
}

/// tki of a heatmap against its mask.
pub fn heatmap_tki(h: &Heatmap, mask: &BinaryMask, k: usize) -> Result<f64> {
    if h.width() != mask.width || h.height() != mask.height {
        return Err(Error::DimensionMismatch(format!(
            "heatmap {}x{} vs mask {}x{}",
            h.width(),
            h.height(),
            mask.width,
            mask.height
        )));
    }
    tki(mask, &top_k_mask(h, k)?, k)
}

/// Unweighted mean of per-image tki scores.
pub fn mean_tki(pairs: &[(Heatmap, BinaryMask)], k: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("mean tki of an empty corpus".into()));
    }
    let mut total = 0.0;
    for (h, m) in pairs {
        total += heatmap_tki(h, m, k)?;
    }
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_values() {
        let h = Heatmap::new(2, 2, vec![4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(
            top_k_mask(&h, 2).unwrap().bits(),
            &[true, true, false, false]
        );
        assert_eq!(top_k_mask(&h, 4).unwrap().count(), 4);
    }

    #[test]
    fn ties_follow_row_major_order() {
        let h = Heatmap::new(2, 3, vec![1.0; 6]).unwrap();
        assert_eq!(
            top_k_mask(&h, 3).unwrap().bits(),
            &[true, true, true, false, false, false]
        );
    }

    #[test]
    fn k_out_of_range() {
        let h = Heatmap::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(top_k_mask(&h, 0).is_err());
        assert!(top_k_mask(&h, 5).is_err());
    }

    #[test]
    fn containment_disjoint_and_half() {
        let left = BinaryMask::from_fn(2, 2, |x, _| x == 0);
        let top = BinaryMask::from_fn(2, 2, |_, y| y == 0);
        assert_eq!(tki(&left, &top, 2).unwrap(), 0.5);
        assert_eq!(tki(&left, &left, 2).unwrap(), 1.0);
        let right = BinaryMask::from_fn(2, 2, |x, _| x == 1);
        assert_eq!(tki(&left, &right, 2).unwrap(), 0.0);
    }

    #[test]
    fn wrong_count_or_shape() {
        let m = BinaryMask::from_fn(2, 2, |_, _| true);
        let e = BinaryMask::from_fn(2, 2, |x, y| x == 0 && y == 0);
        assert!(tki(&m, &e, 2).is_err());
        let other = BinaryMask::from_fn(4, 1, |x, _| x == 0);
        assert!(tki(&m, &other, 1).is_err());
    }

    #[test]
    fn corpus_mean() {
        let h = Heatmap::new(1, 2, vec![1.0, 0.0]).unwrap();
        let hit = BinaryMask::from_fn(2, 1, |x, _| x == 0);
        let miss = BinaryMask::from_fn(2, 1, |x, _| x == 1);
        assert_eq!(mean_tki(&[(h.clone(), hit.clone())], 1).unwrap(), 1.0);
        assert_eq!(mean_tki(&[(h.clone(), hit), (h, miss)], 1).unwrap(), 0.5);
        assert!(mean_tki(&[], 1).is_err());
    }

    #[test]
    fn default_k_caps() {
        assert_eq!(default_k(24, 24), 28);
        assert_eq!(default_k(100, 100), 100);
        assert_eq!(default_k(3, 3), 1);
    }
}
