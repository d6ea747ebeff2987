//! PNG I/O. 8-bit channels map linearly onto `[-1, 1]`.

use std::path::Path;

use image::{imageops::FilterType, ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn from_rgb8<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![T::zero(); 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            let v = px.0[c] as f64 / 127.5 - 1.0;
            data[c * h * w + y as usize * w + x as usize] = T::from_f64_lossy(v);
        }
    }
    Tensor::new([3, h, w], data).expect("image shape")
}

/// Inverse of [`from_rgb8`]: `round((v + 1) * 127.5)` with halves away from
/// zero, clamped to `0..=255`.
pub fn to_rgb8<T: Scalar>(t: &Tensor<T>) -> Result<RgbImage> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {c}")));
    }
    let d = t.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let idx = |ch: usize| ch * h * w + y as usize * w + x as usize;
        let q = |v: T| ((v.as_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        Rgb([q(d[idx(0)]), q(d[idx(1)]), q(d[idx(2)])])
    }))
}

/// Load an RGB image, resizing to `size x size` if needed.
pub fn load_image<T: Scalar>(path: &Path, size: usize) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rgb = img.to_rgb8();
    if rgb.width() as usize != size || rgb.height() as usize != size {
        rgb = image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle);
    }
    Ok(from_rgb8(&rgb))
}

pub fn save_image<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    to_rgb8(t)?.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Concatenate `[3, H, W_i]` images left to right.
pub fn hstack<T: Scalar>(images: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::shape("no images to stack"))?;
    let (_, h, _) = first.dims3()?;
    let mut widths = Vec::with_capacity(images.len());
    for im in images {
        let (c, hh, w) = im.dims3()?;
        if c != 3 || hh != h {
            return Err(Error::shape(format!(
                "cannot stack {:?} with height {h}",
                im.shape()
            )));
        }
        widths.push(w);
    }
    let total: usize = widths.iter().sum();
    let mut out = vec![T::zero(); 3 * h * total];
    let mut x0 = 0;
    for (im, &w) in images.iter().zip(&widths) {
        for c in 0..3 {
            for y in 0..h {
                let src = &im.data()[c * h * w + y * w..c * h * w + (y + 1) * w];
                let dst = c * h * total + y * total + x0;
                out[dst..dst + w].copy_from_slice(src);
            }
        }
        x0 += w;
    }
    Tensor::new([3, h, total], out)
}

pub fn hflip<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = t.dims3()?;
    let d = t.data();
    Ok(Tensor::from_fn([c, h, w], |i| {
        let x = i % w;
        d[i - x + (w - 1 - x)]
    }))
}
