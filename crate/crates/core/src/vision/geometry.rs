use super::types::{BinaryMask, BoundingBox, GrayImage, HeatMap};
use crate::{Error, Result};

/// Tightest box around the set cells.
pub fn bbox_of_mask(mask: &BinaryMask) -> Result<BoundingBox> {
    let mut cells = mask.cells();
    let (r0, c0) = cells
        .next()
        .ok_or_else(|| Error::EmptyRegion("bounding box of an empty mask".into()))?;
    let mut b = BoundingBox {
        row_min: r0,
        row_max: r0,
        col_min: c0,
        col_max: c0,
    };
    for (r, c) in cells {
        b.row_max = b.row_max.max(r);
        b.col_min = b.col_min.min(c);
        b.col_max = b.col_max.max(c);
    }
    Ok(b)
}

/// Bilinear resampling of the `bx` window of a row-major plane, sampling at
/// half-pixel centres (`src = (dst + 0.5) * scale - 0.5`, edge-clamped).
pub(crate) fn resample_bilinear(
    src: &[f32],
    width: usize,
    bx: &BoundingBox,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let (bh, bw) = (bx.height(), bx.width());
    let sy = bh as f64 / out_h as f64;
    let sx = bw as f64 / out_w as f64;
    let axis = |o: usize, scale: f64, n: usize| -> (usize, usize, f32) {
        let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, (p - i0 as f64) as f32)
    };
    let cols: Vec<_> = (0..out_w).map(|ox| axis(ox, sx, bw)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = axis(oy, sy, bh);
        let r0 = (bx.row_min + y0) * width + bx.col_min;
        let r1 = (bx.row_min + y1) * width + bx.col_min;
        for &(x0, x1, fx) in &cols {
            let top = lerp(src[r0 + x0], src[r0 + x1], fx);
            let bot = lerp(src[r1 + x0], src[r1 + x1], fx);
            out.push(lerp(top, bot, fy));
        }
    }
    out
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Crops `bx` (image coordinates) and resizes the crop bilinearly.
///
/// Boxes found on a coarser grid are mapped first with
/// [`BoundingBox::scale`].
pub fn crop_resize(img: &GrayImage, bx: &BoundingBox, out_h: usize, out_w: usize) -> Result<GrayImage> {
    if !bx.fits_within(img.height(), img.width()) || bx.row_min > bx.row_max || bx.col_min > bx.col_max {
        return Err(Error::Range(format!(
            "box rows {}..={}, cols {}..={} outside {}x{} image",
            bx.row_min,
            bx.row_max,
            bx.col_min,
            bx.col_max,
            img.height(),
            img.width()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Dimension(format!("output size {out_h}x{out_w}")));
    }
    let px = resample_bilinear(img.pixels(), img.width(), bx, out_h, out_w);
    GrayImage::new(out_h, out_w, px)
}

/// Whole-image bilinear resize.
pub fn resize(img: &GrayImage, out_h: usize, out_w: usize) -> Result<GrayImage> {
    crop_resize(img, &img.full_box(), out_h, out_w)
}

/// Bilinear resize of a heat-map to a new grid.
pub fn resize_heatmap(h: &HeatMap, out_h: usize, out_w: usize) -> Result<HeatMap> {
    let bx = BoundingBox::new(0, h.height() - 1, 0, h.width() - 1)?;
    HeatMap::new(out_h, out_w, resample_bilinear(h.values(), h.width(), &bx, out_h, out_w))
}

/// Whether each half of a split fell back to the whole half-image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitFlags {
    pub left_fallback: bool,
    pub right_fallback: bool,
}

/// Left/right infected-region crops.
///
/// The mask is brought to image resolution (nearest neighbour) and split at
/// column `W / 2`. Each half yields the crop of the tight box around its set
/// cells, or the whole half when it has none, resized to `out x out`.
pub fn split_infected_lr(mask: &BinaryMask, img: &GrayImage, out: usize) -> Result<(GrayImage, GrayImage, SplitFlags)> {
    let (h, w) = (img.height(), img.width());
    if w < 2 {
        return Err(Error::Dimension(format!("cannot split a {h}x{w} image into halves")));
    }
    let mask = mask.resize_nearest(h, w);
    let mid = w / 2;
    let half = |c0: usize, c1: usize| -> Result<(GrayImage, bool)> {
        let mut b: Option<BoundingBox> = None;
        for (r, c) in mask.cells().filter(|&(_, c)| c >= c0 && c < c1) {
            b = Some(match b {
                None => BoundingBox {
                    row_min: r,
                    row_max: r,
                    col_min: c,
                    col_max: c,
                },
                Some(bb) => BoundingBox {
                    row_min: bb.row_min,
                    row_max: r,
                    col_min: bb.col_min.min(c),
                    col_max: bb.col_max.max(c),
                },
            });
        }
        let fallback = b.is_none();
        let bx = b.unwrap_or(BoundingBox {
            row_min: 0,
            row_max: h - 1,
            col_min: c0,
            col_max: c1 - 1,
        });
        Ok((crop_resize(img, &bx, out, out)?, fallback))
    };
    let (left, lf) = half(0, mid)?;
    let (right, rf) = half(mid, w)?;
    Ok((
        left,
        right,
        SplitFlags {
            left_fallback: lf,
            right_fallback: rf,
        },
    ))
}
