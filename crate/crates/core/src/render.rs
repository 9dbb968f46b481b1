//! Heatmap overlays.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::lrp::Heatmap;
use crate::tensor::Tensor;

/// Peak opacity of the relevance overlay.
pub const OVERLAY_WEIGHT: f64 = 0.6;

/// Diverging colormap on `[-1, 1]`: blue, white at zero, red.
pub fn diverging_color(r: f64) -> [f64; 3] {
    let r = r.clamp(-1.0, 1.0);
    if r >= 0.0 {
        [1.0, 1.0 - r, 1.0 - r]
    } else {
        [1.0 + r, 1.0 + r, 1.0]
    }
}

/// Blends the colormapped heatmap over a grayscale copy of `image`
/// (`[c, h, w]` or `[h, w]` tensor in `[0, 1]`).
///
/// Relevance is normalized by its largest magnitude and each pixel's overlay
/// opacity is `OVERLAY_WEIGHT * |r|`, so zero relevance leaves the grayscale
/// pixel untouched and an all-zero heatmap renders the plain grayscale image.
pub fn render_heatmap(h: &Heatmap, image: &Tensor) -> Result<Image> {
    let base = match *image.shape() {
        [hh, ww] => Image::new(ww, hh, 1, image.data().to_vec())?,
        [_, _, _] => Image::from_tensor(image)?,
        ref s => {
            return Err(Error::DimensionMismatch(format!(
                "cannot render over a tensor of shape {s:?}"
            )))
        }
    };
    if base.width() != h.width() || base.height() != h.height() {
        return Err(Error::DimensionMismatch(format!(
            "heatmap {}x{} vs image {}x{}",
            h.width(),
            h.height(),
            base.width(),
            base.height()
        )));
    }
    let gray = base.luminance();
    let peak = h.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut data = Vec::with_capacity(gray.len() * 3);
    for (&g, &rel) in gray.iter().zip(h.values()) {
        let r = if peak > 0.0 { rel / peak } else { 0.0 };
        let alpha = OVERLAY_WEIGHT * r.abs();
        for c in diverging_color(r) {
            data.push((1.0 - alpha) * g + alpha * c);
        }
    }
    Image::new(h.width(), h.height(), 3, data)
}
