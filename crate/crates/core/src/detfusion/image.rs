//! RGB images as `[1, 3, H, W]` tensors in `[0, 1]`, and box crops.

use std::path::Path;

use image::{ImageFormat, RgbImage};
use tgraphx_tensor::{Real, Shape, Tensor};

use crate::detfusion::boxes::BBox;
use crate::error::{Context, Error, Result};

/// Reads a PNG or PPM (any format the extension names) as RGB.
pub fn load_image<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let img = image::open(path).file(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Tensor::from_fn(Shape::new(1, 3, h as usize, w as usize), |[_, c, y, x]| {
        T::of(img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0)
    }))
}

/// Rounds to 8-bit channels, exactly as [`save_image`] would store them.
pub fn quantize<T: Real>(img: &Tensor<T>) -> Tensor<T> {
    img.map(|v| T::of((v.as_f64().clamp(0.0, 1.0) * 255.0).round() / 255.0))
}

/// Writes PNG for `.png` and binary PPM for `.ppm` paths.
pub fn save_image<T: Real>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let [n, c, h, w] = img.shape().0;
    if n != 1 || c != 3 {
        return Err(Error::data(format!("expected a [1, 3, H, W] image, got {}", img.shape())));
    }
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => ImageFormat::Png,
        Some("ppm") => ImageFormat::Pnm,
        _ => return Err(Error::data(format!("{}: use a .png or .ppm extension", path.display()))),
    };
    let buf = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|ch| {
            (img.at(0, ch, y as usize, x as usize).as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    });
    buf.save_with_format(path, format).file(path)
}

/// Bilinear samples of `src` in `[lo, hi]` for `out` cells evenly covering
/// the span `[a, b)` (half-pixel centres, clamped at the span's pixels).
fn axis_weights(a: f64, b: f64, out: usize, lo: usize, hi: usize) -> Vec<(usize, usize, f64)> {
    let scale = (b - a) / out as f64;
    (0..out)
        .map(|o| {
            let s = (a + (o as f64 + 0.5) * scale - 0.5).clamp(lo as f64, hi as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(hi);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Crops `bbox` (clipped to the image) and resizes it bilinearly to
/// `[1, C, out_h, out_w]`. Samples never leave the crop's pixel footprint.
pub fn crop_resize<T: Real>(img: &Tensor<T>, bbox: &BBox, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = img.shape().0;
    if n != 1 || h == 0 || w == 0 {
        return Err(Error::data(format!("expected one image, got {}", img.shape())));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::data("crop output size must be positive"));
    }
    let b = bbox
        .clip(w as f64, h as f64)
        .ok_or_else(|| Error::data(format!("box {bbox:?} has no area inside the {w}x{h} image")))?;
    let (x_lo, x_hi) = (b.x1.floor() as usize, (b.x2.ceil() as usize - 1).max(b.x1.floor() as usize));
    let (y_lo, y_hi) = (b.y1.floor() as usize, (b.y2.ceil() as usize - 1).max(b.y1.floor() as usize));
    let wx = axis_weights(b.x1, b.x2, out_w, x_lo, x_hi);
    let wy = axis_weights(b.y1, b.y2, out_h, y_lo, y_hi);
    Ok(Tensor::from_fn(Shape::new(1, c, out_h, out_w), |[_, ch, oy, ox]| {
        let (y0, y1, fy) = wy[oy];
        let (x0, x1, fx) = wx[ox];
        let p = |y, x| img.at(0, ch, y, x).as_f64();
        let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
        let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
        T::of(top * (1.0 - fy) + bot * fy)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_aligned_crop_is_exact() {
        let img = Tensor::<f64>::from_fn(Shape::new(1, 3, 10, 12), |[_, c, y, x]| (c * 100 + y * 12 + x) as f64);
        let b = BBox::new(2.0, 3.0, 8.0, 7.0).unwrap();
        let out = crop_resize(&img, &b, 4, 6).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..6 {
                    assert_eq!(out.at(0, c, y, x), img.at(0, c, y + 3, x + 2));
                }
            }
        }
    }

    #[test]
    fn constant_region_stays_constant() {
        let img = Tensor::<f64>::full(Shape::new(1, 3, 9, 9), 0.4);
        let out = crop_resize(&img, &BBox::new(1.3, 0.2, 7.9, 5.5).unwrap(), 16, 16).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn box_outside_image_is_an_error() {
        let img = Tensor::<f64>::zeros(Shape::new(1, 3, 4, 4));
        assert!(crop_resize(&img, &BBox::new(5.0, 5.0, 6.0, 6.0).unwrap(), 2, 2).is_err());
    }
}
