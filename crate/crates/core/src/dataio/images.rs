use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

use crate::vision::{BinaryMask, GrayImage};
use crate::{Error, Result};

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads an 8-bit grayscale PGM or PNG (colour input is converted to luma).
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| image_err(path, e))?.into_luma8();
    GrayImage::from_u8(img.height() as usize, img.width() as usize, img.as_raw())
}

/// Encodes as binary PGM (P5).
pub fn encode_pgm(img: &GrayImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&img.to_u8(), img.width() as u32, img.height() as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Validation(e.to_string()))?;
    Ok(buf)
}

/// Writes PNG when `path` ends in `.png`, binary PGM otherwise.
pub fn write_gray(img: &GrayImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.to_u8())
            .expect("buffer size matches");
        return buf.save_with_format(path, ImageFormat::Png).map_err(|e| image_err(path, e));
    }
    std::fs::write(path, encode_pgm(img)?).map_err(|e| Error::io(path, e))
}

/// Masks are stored as 0 / 255 images.
pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    write_gray(&mask.to_image(), path)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    Ok(BinaryMask::from_image(&read_gray(path)?))
}
