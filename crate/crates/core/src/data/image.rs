use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Planar `C x H x W` raster with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::Data(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![v.clamp(-1.0, 1.0); height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub(crate) fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v.clamp(-1.0, 1.0);
    }

    /// Contiguous window starting at `(top, left)`.
    pub fn window(&self, top: usize, left: usize, size: usize) -> Result<Self> {
        if top + size > self.height || left + size > self.width {
            return Err(Error::Shape(format!(
                "window {size} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(size * size * self.channels);
        for c in 0..self.channels {
            for y in top..top + size {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + size]);
            }
        }
        Ok(Self {
            height: size,
            width: size,
            channels: self.channels,
            data,
        })
    }

    pub fn center_crop(&self, size: usize) -> Result<Self> {
        if size > self.height || size > self.width {
            return Err(Error::Shape(format!(
                "crop {size} larger than {}x{}",
                self.height, self.width
            )));
        }
        self.window((self.height - size) / 2, (self.width - size) / 2, size)
    }

    /// Luminance in `[-1, 1]` as a single channel.
    pub fn to_gray(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let hw = self.height * self.width;
        let data = (0..hw)
            .map(|i| {
                let (r, g, b) = (self.data[i], self.data[hw + i], self.data[2 * hw + i]);
                (0.299 * r + 0.587 * g + 0.114 * b).clamp(-1.0, 1.0)
            })
            .collect();
        Self {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Converts to `channels`, replicating a single plane or averaging to gray.
    pub fn with_channels(&self, channels: usize) -> Result<Self> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (1, n) => Ok(Self {
                height: self.height,
                width: self.width,
                channels: n,
                data: self.data.repeat(n),
            }),
            (3, 1) => Ok(self.to_gray()),
            (a, b) => Err(Error::Shape(format!("cannot convert {a} channels to {b}"))),
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let (channels, raw, w, h) = match img.color().channel_count() {
            1 | 2 => {
                let g = img.to_luma8();
                (1, g.as_raw().clone(), g.width(), g.height())
            }
            _ => {
                let rgb = img.to_rgb8();
                (3, rgb.as_raw().clone(), rgb.width(), rgb.height())
            }
        };
        let (h, w) = (h as usize, w as usize);
        let mut data = vec![0.0f32; h * w * channels];
        for (i, &v) in raw.iter().enumerate() {
            let (pix, c) = (i / channels, i % channels);
            data[c * h * w + pix] = v as f32 / 127.5 - 1.0;
        }
        Self::new(h, w, channels, data)
    }

    /// Quantizes to 8 bits via `round((v + 1) * 127.5)` and writes a PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let hw = self.height * self.width;
        let mut raw = Vec::with_capacity(hw * self.channels);
        for pix in 0..hw {
            for c in 0..self.channels {
                raw.push(to_u8(self.data[c * hw + pix]));
            }
        }
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer(path, &raw, self.width as u32, self.height as u32, color).map_err(
            |e| Error::Image {
                path: path.to_path_buf(),
                msg: e.to_string(),
            },
        )
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || index >= s[0] {
            return Err(Error::Shape(format!("cannot take image {index} of {s:?}")));
        }
        let data = t
            .outer(index)
            .iter()
            .map(|v| (v.as_f64() as f32).clamp(-1.0, 1.0))
            .collect();
        Self::new(s[2], s[3], s[1], data)
    }
}

fn to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Stacks equally sized images into an `N x C x H x W` tensor.
pub fn batch_tensor<T: Scalar>(images: &[&ImageBuffer], channels: usize) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("empty image batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * channels * h * w);
    for img in images {
        if (img.height, img.width) != (h, w) {
            return Err(Error::Shape(format!(
                "batch mixes {}x{} with {h}x{w}",
                img.height, img.width
            )));
        }
        let conv = img.with_channels(channels)?;
        data.extend(conv.data.iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::new(vec![images.len(), channels, h, w], data)
}
