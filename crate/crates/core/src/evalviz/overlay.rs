use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, RgbImage};

use crate::vision::{resize_heatmap, GrayImage, HeatMap};
use crate::{Error, Result};

/// Blends a `[0, 1]` activation map over a grayscale image: the red channel
/// rises towards 1 and green/blue dim with activation. A zero map reproduces
/// the gray image. The map is resized bilinearly to the image first.
pub fn cam_overlay_rgb(img: &GrayImage, cam: &HeatMap) -> Result<RgbImage> {
    let (h, w) = (img.height(), img.width());
    let cam = if cam.height() == h && cam.width() == w {
        cam.clone()
    } else {
        resize_heatmap(cam, h, w)?
    };
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut out = RgbImage::new(w as u32, h as u32);
    for (i, (&g, &c)) in img.pixels().iter().zip(cam.values()).enumerate() {
        let c = c.clamp(0.0, 1.0);
        let red = g + (1.0 - g) * c;
        let other = g * (1.0 - 0.5 * c);
        out.put_pixel((i % w) as u32, (i / w) as u32, image::Rgb([q(red), q(other), q(other)]));
    }
    Ok(out)
}

/// Writes the overlay as PNG when `path` ends in `.png`, binary PPM otherwise.
pub fn render_cam_overlay(img: &GrayImage, cam: &HeatMap, path: &Path) -> Result<()> {
    let rgb = cam_overlay_rgb(img, cam)?;
    let err = |e: image::ImageError| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        return rgb.save_with_format(path, ImageFormat::Png).map_err(err);
    }
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(rgb.as_raw(), rgb.width(), rgb.height(), ExtendedColorType::Rgb8)
        .map_err(err)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
