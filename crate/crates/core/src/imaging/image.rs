use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major image with interleaved channels and intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        check_channels(channels)?;
        Ok(Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        })
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_channels(channels)?;
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "image data has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidInput(format!(
                "pixel value {} at {} outside [0, 1]",
                data[i], i
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a grey image from a closure evaluated at every pixel `(x, y)`;
    /// values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Sets a pixel, clamping to `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B`; grey images are returned as is.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Top-left `width × height` sub-image.
    pub fn crop(&self, width: usize, height: usize) -> Result<Image> {
        if width > self.width || height > self.height {
            return Err(Error::DimensionMismatch(format!(
                "crop {}x{} larger than image {}x{}",
                width, height, self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * self.channels);
        for y in 0..height {
            let start = y * self.width * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(Image {
            width,
            height,
            channels: self.channels,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_channels(channels: usize) -> Result<()> {
    if channels == 1 || channels == 3 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "images have 1 or 3 channels, got {channels}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(Image::from_data(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::from_data(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(Image::from_data(2, 1, 1, vec![0.5]).is_err());
        assert!(Image::new(2, 2, 2).is_err());
    }

    #[test]
    fn gray_conversion_uses_luminance_weights() {
        let img = Image::from_data(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((img.to_gray().get(0, 0, 0) - 0.299).abs() < 1e-15);
    }

    #[test]
    fn crop_keeps_top_left() {
        let img = Image::from_fn(4, 3, |x, y| (x + 4 * y) as f64 / 16.0);
        let c = img.crop(2, 2).unwrap();
        assert_eq!(c.get(1, 1, 0), img.get(1, 1, 0));
        assert_eq!(c.width(), 2);
    }
}
