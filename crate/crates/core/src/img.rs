//! Float raster container, bilinear sampling, resizing and PNG I/O.
//!
//! Pixel `(row, col)` sits at continuous coordinates `(v = row, u = col)`.
//! Samples outside the raster read as zero, so warped images show black
//! where the source runs out.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Row-major `height x width x channels` raster of `f32` values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    /// All-zero image.
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("image needs at least one channel"));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "pixel buffer has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(row, col, channel)` for every value.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Geometric center `(col, row)` of the pixel grid.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }

    #[inline]
    fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.width + col) * self.channels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.offset(row, col) + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        let o = self.offset(row, col);
        self.data[o + ch] = value;
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let o = self.offset(row, col);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let o = self.offset(row, col);
        &mut self.data[o..o + self.channels]
    }

    /// Bilinear sample at column `u`, row `v`, accumulated into `out`.
    ///
    /// Neighbours outside the raster contribute zero.
    #[inline]
    pub fn sample_into(&self, u: f64, v: f64, out: &mut [f32]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        if !(u > -1.0 && v > -1.0 && u < self.width as f64 && v < self.height as f64) {
            return;
        }
        let u0 = u.floor();
        let v0 = v.floor();
        let fu = (u - u0) as f32;
        let fv = (v - v0) as f32;
        let c0 = u0 as isize;
        let r0 = v0 as isize;
        let taps = [
            (r0, c0, (1.0 - fv) * (1.0 - fu)),
            (r0, c0 + 1, (1.0 - fv) * fu),
            (r0 + 1, c0, fv * (1.0 - fu)),
            (r0 + 1, c0 + 1, fv * fu),
        ];
        for (r, c, w) in taps {
            if w == 0.0 || r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
                continue;
            }
            let px = self.pixel(r as usize, c as usize);
            for (o, p) in out.iter_mut().zip(px) {
                *o += w * p;
            }
        }
    }

    /// Bilinear sample at column `u`, row `v`.
    pub fn bilinear_sample(&self, u: f64, v: f64) -> Vec<f32> {
        let mut out = vec![0.0; self.channels];
        self.sample_into(u, v, &mut out);
        out
    }

    /// Bilinear resize. Output pixel `(i, j)` reads the source at
    /// `((i + 0.5) * H / new_h - 0.5, (j + 0.5) * W / new_w - 0.5)`, clamped to the raster.
    pub fn resize(&self, new_h: usize, new_w: usize) -> Result<Image> {
        if new_h == 0 || new_w == 0 {
            return Err(Error::invalid(format!(
                "resize target {new_h}x{new_w} has a zero dimension"
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("cannot resize an empty image"));
        }
        let sy = self.height as f64 / new_h as f64;
        let sx = self.width as f64 / new_w as f64;
        let max_v = (self.height - 1) as f64;
        let max_u = (self.width - 1) as f64;
        let mut out = Image::new(new_h, new_w, self.channels);
        let mut buf = vec![0.0; self.channels];
        for i in 0..new_h {
            let v = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, max_v);
            for j in 0..new_w {
                let u = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, max_u);
                self.sample_into(u, v, &mut buf);
                out.pixel_mut(i, j).copy_from_slice(&buf);
            }
        }
        Ok(out)
    }

    /// Single-channel image holding the per-pixel channel mean.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let inv = 1.0 / self.channels as f32;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f32>() * inv)
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Rows `start..end` as a new image.
    pub fn rows(&self, start: usize, end: usize) -> Result<Image> {
        if start > end || end > self.height {
            return Err(Error::invalid(format!(
                "row range {start}..{end} outside image of height {}",
                self.height
            )));
        }
        let a = self.offset(start, 0);
        let b = self.offset(end, 0);
        Ok(Image {
            height: end - start,
            width: self.width,
            channels: self.channels,
            data: self.data[a..b].to_vec(),
        })
    }

    /// `width` columns starting at `start`, wrapping around the right edge.
    pub fn crop_columns_cyclic(&self, start: usize, width: usize) -> Image {
        let mut out = Image::new(self.height, width, self.channels);
        if self.width == 0 {
            return out;
        }
        for r in 0..self.height {
            for j in 0..width {
                let src = (start + j) % self.width;
                let px = self.pixel(r, src).to_vec();
                out.pixel_mut(r, j).copy_from_slice(&px);
            }
        }
        out
    }

    /// Circular column shift: output column `j` holds input column `(j + k) mod W`.
    pub fn roll_columns(&self, k: usize) -> Image {
        self.crop_columns_cyclic(k % self.width.max(1), self.width)
    }

    /// Exact 90 degree clockwise rotation (north content moves east).
    pub fn rotate90_cw(&self) -> Image {
        let (h, w) = (self.height, self.width);
        let mut out = Image::new(w, h, self.channels);
        for i in 0..w {
            for j in 0..h {
                let px = self.pixel(h - 1 - j, i).to_vec();
                out.pixel_mut(i, j).copy_from_slice(&px);
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f32> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other)?;
        let n = self.data.len().max(1) as f64;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / n)
    }

    /// Peak signal-to-noise ratio in dB for a peak value of 1.
    pub fn psnr(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other)?;
        let n = self.data.len().max(1) as f64;
        let mse = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum::<f64>()
            / n;
        Ok(if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        })
    }

    pub(crate) fn check_same_shape(&self, other: &Image) -> Result<()> {
        if (self.height, self.width, self.channels) != (other.height, other.width, other.channels)
        {
            return Err(Error::invalid(format!(
                "image shapes differ: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }
}

/// Loads an 8-bit grayscale or RGB PNG; byte `k` becomes `k / 255`.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(
        |e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    )?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = match decoded {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        DynamicImage::ImageRgb8(rgb) => (3, rgb.into_raw()),
        other => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!(
                    "unsupported pixel layout {:?}; expected 8-bit gray or RGB",
                    other.color()
                ),
            })
        }
    };
    let data = raw.into_iter().map(|b| b as f32 / 255.0).collect();
    Image::from_vec(h, w, channels, data)
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Saves as an 8-bit PNG (gray for one channel, RGB for three).
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let dynamic = match img.channels {
        1 => DynamicImage::ImageLuma8(
            GrayImage::from_raw(w, h, bytes).expect("buffer sized from image dimensions"),
        ),
        3 => DynamicImage::ImageRgb8(
            RgbImage::from_raw(w, h, bytes).expect("buffer sized from image dimensions"),
        ),
        n => {
            return Err(Error::invalid(format!(
                "cannot save {n}-channel image as PNG"
            )))
        }
    };
    dynamic
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}
