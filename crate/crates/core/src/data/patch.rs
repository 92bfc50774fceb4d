use super::raster::{MaskImage, RasterImage};
use crate::error::{Error, Result};

/// One window cut from a larger raster; `(x, y)` is its top-left corner.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub x: usize,
    pub y: usize,
    pub image: RasterImage,
    pub mask: Option<MaskImage>,
}

/// Number of windows along one axis of length `extent`.
fn steps(extent: usize, size: usize, stride: usize) -> usize {
    (extent - size) / stride + 1
}

pub fn patch_count(width: usize, height: usize, size: usize, stride: usize) -> Result<usize> {
    check(width, height, size, stride)?;
    Ok(steps(width, size, stride) * steps(height, size, stride))
}

fn check(width: usize, height: usize, size: usize, stride: usize) -> Result<()> {
    if stride == 0 || size == 0 {
        return Err(Error::Config(format!("patch size {size} and stride {stride} must be positive")));
    }
    if size > width.min(height) {
        return Err(Error::Config(format!("patch size {size} exceeds {width}x{height} image")));
    }
    Ok(())
}

/// Tiles `image` (and `mask`, identically) into `size`×`size` windows at
/// multiples of `stride`, row by row. Windows that would cross the right or
/// bottom edge are dropped.
pub fn patchify(image: &RasterImage, mask: Option<&MaskImage>, size: usize, stride: usize) -> Result<Vec<Patch>> {
    let (w, h) = (image.width(), image.height());
    check(w, h, size, stride)?;
    if let Some(m) = mask {
        if (m.width(), m.height()) != (w, h) {
            return Err(Error::Data(format!(
                "mask is {}x{} but image is {w}x{h}",
                m.width(),
                m.height()
            )));
        }
    }
    let mut out = Vec::with_capacity(steps(w, size, stride) * steps(h, size, stride));
    for j in 0..steps(h, size, stride) {
        for i in 0..steps(w, size, stride) {
            let (x, y) = (i * stride, j * stride);
            out.push(Patch {
                x,
                y,
                image: image.crop(x, y, size)?,
                mask: mask.map(|m| m.crop(x, y, size)).transpose()?,
            });
        }
    }
    Ok(out)
}
