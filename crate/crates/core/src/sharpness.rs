//! Laplacian sharpness scoring and threshold gating.
//!
//! The luminance image is correlated (valid mode) with
//!
//! ```text
//!        1  [  0 -1  0 ]
//! K  =  --- [ -1  4 -1 ]
//!        6  [  0 -1  0 ]
//! ```
//!
//! and the score is `V = sum (L - mu)^2` with `mu = mean |L|` over the
//! `(W-2) x (H-2)` filtered field. Note that `mu` averages the magnitude of
//! `L` while the deviation is taken from the signed response; this is
//! intentional and matches the published definition rather than a textbook
//! variance.

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::Network;
use crate::rebalance::ClassAccuracy;

/// Luminance image, values clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} gray image needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.height, self.width, |x, y| self.get(y, x)).expect("same pixel count")
    }
}

/// Rec. 601 luminance `0.299 R + 0.587 G + 0.114 B`.
pub fn to_luminance(rgb: &Image) -> GrayImage {
    GrayImage::new(rgb.width(), rgb.height(), rgb.luminance()).expect("luminance keeps dimensions")
}

/// Valid-mode Laplacian response, `(W-2) x (H-2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl LaplacianField {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

pub fn laplacian_filter(img: &GrayImage) -> Result<LaplacianField> {
    if img.width < 3 || img.height < 3 {
        return Err(Error::ImageTooSmall {
            width: img.width,
            height: img.height,
            min: 3,
        });
    }
    let (fw, fh) = (img.width - 2, img.height - 2);
    let mut values = Vec::with_capacity(fw * fh);
    for y in 1..img.height - 1 {
        for x in 1..img.width - 1 {
            let centre = img.get(x, y);
            // pairwise sums keep constant fields exactly zero
            let cross =
                (img.get(x, y - 1) + img.get(x, y + 1)) + (img.get(x - 1, y) + img.get(x + 1, y));
            values.push((4.0 * centre - cross) / 6.0);
        }
    }
    Ok(LaplacianField {
        width: fw,
        height: fh,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessScore {
    /// Unnormalized sum of squared deviations.
    pub raw: f64,
    /// `raw` divided by the image pixel count `W * H`.
    pub normalized: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    Raw,
    #[default]
    Normalized,
}

impl SharpnessScore {
    pub fn value(&self, variant: ScoreVariant) -> f64 {
        match variant {
            ScoreVariant::Raw => self.raw,
            ScoreVariant::Normalized => self.normalized,
        }
    }
}

pub fn sharpness_score(img: &GrayImage) -> Result<SharpnessScore> {
    let l = laplacian_filter(img)?;
    let n = l.values.len() as f64;
    let mu = l.values.iter().map(|v| v.abs()).sum::<f64>() / n;
    let raw: f64 = l.values.iter().map(|v| (v - mu).powi(2)).sum();
    Ok(SharpnessScore {
        raw,
        normalized: raw / (img.width * img.height) as f64,
    })
}

pub fn image_sharpness(img: &Image) -> Result<SharpnessScore> {
    sharpness_score(&to_luminance(img))
}

/// Indices of gated items, both in input order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GateSplit {
    pub kept: Vec<usize>,
    pub discarded: Vec<usize>,
}

/// Keeps every item whose score is at least `threshold`.
pub fn gate(scores: &[f64], threshold: f64) -> Result<GateSplit> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sharpness threshold must be >= 0, got {threshold}"
        )));
    }
    let mut split = GateSplit::default();
    for (i, &s) in scores.iter().enumerate() {
        if s >= threshold {
            split.kept.push(i);
        } else {
            split.discarded.push(i);
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub kept: usize,
    pub accuracy: ClassAccuracy,
}

/// Per-class accuracy over the images that survive each threshold.
pub fn sweep_predictions(
    labels: &[usize],
    predictions: &[usize],
    scores: &[f64],
    num_classes: usize,
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>> {
    if labels.len() != predictions.len() || labels.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels, {} predictions, {} scores",
            labels.len(),
            predictions.len(),
            scores.len()
        )));
    }
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidArgument(
            "thresholds must be sorted ascending".into(),
        ));
    }
    thresholds
        .iter()
        .map(|&t| {
            let split = gate(scores, t)?;
            let kept_labels: Vec<usize> = split.kept.iter().map(|&i| labels[i]).collect();
            let kept_preds: Vec<usize> = split.kept.iter().map(|&i| predictions[i]).collect();
            Ok(SweepPoint {
                threshold: t,
                kept: split.kept.len(),
                accuracy: ClassAccuracy::from_predictions(&kept_labels, &kept_preds, num_classes)?,
            })
        })
        .collect()
}

/// Classifies every sample once, then sweeps the thresholds over `scores`.
pub fn sweep_thresholds(
    net: &Network,
    samples: &[Sample],
    scores: &[f64],
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>> {
    let predictions = samples
        .iter()
        .map(|s| net.predict_class(&s.input).map(|(c, _)| c))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    sweep_predictions(&labels, &predictions, scores, net.num_classes(), thresholds)
}

/// CSV with `threshold,kept_count,<class>...,macro_mean`; absent classes are empty cells.
pub fn sweep_csv(points: &[SweepPoint], class_names: &[String]) -> String {
    let mut out = String::from("threshold,kept_count");
    for name in class_names {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",macro_mean\n");
    let cell = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for p in points {
        out.push_str(&format!("{},{}", p.threshold, p.kept));
        for c in 0..class_names.len() {
            out.push(',');
            out.push_str(&cell(p.accuracy.per_class.get(c).copied().flatten()));
        }
        out.push(',');
        out.push_str(&cell(p.accuracy.macro_mean));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luminance_coefficients() {
        let white = Image::filled(2, 2, &[1.0, 1.0, 1.0]).unwrap();
        assert!(to_luminance(&white)
            .values()
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-15));
        let green = Image::filled(2, 2, &[0.0, 1.0, 0.0]).unwrap();
        assert!(to_luminance(&green).values().iter().all(|&v| v == 0.587));
        let gray = Image::filled(2, 2, &[0.3, 0.3, 0.3]).unwrap();
        assert!(to_luminance(&gray)
            .values()
            .iter()
            .all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn impulse_response_matches_kernel() {
        let img =
            GrayImage::from_fn(5, 5, |x, y| if (x, y) == (2, 2) { 1.0 } else { 0.0 }).unwrap();
        let l = laplacian_filter(&img).unwrap();
        assert_eq!((l.width, l.height), (3, 3));
        for y in 0..3 {
            for x in 0..3 {
                let expected = match (x, y) {
                    (1, 1) => 4.0 / 6.0,
                    (1, 0) | (0, 1) | (2, 1) | (1, 2) => -1.0 / 6.0,
                    _ => 0.0,
                };
                assert_eq!(l.get(x, y), expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn constant_and_ramp_have_zero_response() {
        let c = GrayImage::from_fn(7, 5, |_, _| 0.37).unwrap();
        assert!(laplacian_filter(&c)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
        assert_eq!(sharpness_score(&c).unwrap().raw, 0.0);
        let ramp = GrayImage::from_fn(16, 6, |x, _| x as f64 / 16.0).unwrap();
        assert!(laplacian_filter(&ramp)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn too_small_is_an_error() {
        let img = GrayImage::from_fn(2, 5, |_, _| 0.0).unwrap();
        assert!(matches!(
            laplacian_filter(&img),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn gate_extremes() {
        let scores = [0.5, 0.1, 2.0];
        let all = gate(&scores, 0.0).unwrap();
        assert_eq!(all.kept, vec![0, 1, 2]);
        let none = gate(&scores, 3.0).unwrap();
        assert_eq!(none.discarded, vec![0, 1, 2]);
        let mid = gate(&scores, 0.5).unwrap();
        assert_eq!((mid.kept, mid.discarded), (vec![0, 2], vec![1]));
        assert!(gate(&scores, -1.0).is_err());
        assert!(gate(&scores, f64::NAN).is_err());
    }

    #[test]
    fn unsorted_thresholds_are_rejected() {
        assert!(sweep_predictions(&[0], &[0], &[1.0], 1, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let points =
            sweep_predictions(&[0, 1, 1], &[0, 1, 0], &[1.0, 2.0, 3.0], 2, &[0.0, 2.5]).unwrap();
        let csv = sweep_csv(&points, &["a".into(), "b".into()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "threshold,kept_count,a,b,macro_mean");
        assert_eq!(lines[1], "0,3,1.000000,0.500000,0.750000");
        assert_eq!(lines[2], "2.5,1,,0.000000,0.000000");
    }
}
