//! Unit-range images, luma reduction and PNG input/output.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// An H×W×C image, C ∈ {1, 3}, every sample finite and in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image(Tensor3<f32>);

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_tensor(Tensor3::new(height, width, channels, data)?)
    }

    pub fn from_tensor(t: Tensor3<f32>) -> Result<Self> {
        if t.channels() != 1 && t.channels() != 3 {
            return Err(Error::InvalidImage(format!(
                "channel count must be 1 or 3, got {}",
                t.channels()
            )));
        }
        if let Some(pos) = t.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidImage(format!(
                "sample {pos} = {} outside [0, 1]",
                t.data()[pos]
            )));
        }
        Ok(Image(t))
    }

    /// Clamps every sample into `[0, 1]` before validating.
    pub fn from_tensor_clamped(t: Tensor3<f32>) -> Result<Self> {
        Self::from_tensor(t.map(|v| v.clamp(0.0, 1.0))?)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        Self::from_tensor(Tensor3::from_fn(height, width, channels, f)?)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width()
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.0.channels()
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.0.get(y, x, c)
    }

    pub fn as_tensor(&self) -> &Tensor3<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3<f32> {
        self.0
    }

    /// Copies the `h`×`w` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Image> {
        if h == 0 || w == 0 || row + h > self.height() || col + w > self.width() {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w} at ({row}, {col}) exceeds {}x{}",
                self.height(),
                self.width()
            )));
        }
        let c = self.channels();
        let mut data = Vec::with_capacity(h * w * c);
        for y in row..row + h {
            let start = self.0.index(y, col, 0);
            data.extend_from_slice(&self.data()[start..start + w * c]);
        }
        Ok(Image(Tensor3::from_raw(h, w, c, data)))
    }

    /// Quantizes to 8 bits exactly as [`save_image`] does, then maps back to `[0, 1]`.
    pub fn quantized(&self) -> Image {
        let data = self
            .data()
            .iter()
            .map(|&v| quantize_u8(v) as f32 / 255.0)
            .collect();
        let (h, w, c) = self.shape();
        Image(Tensor3::from_raw(h, w, c, data))
    }
}

/// Single-channel luma image. Three channels use the Rec.601 weights; one channel is copied.
pub fn to_luma(img: &Image) -> Image {
    let (h, w, c) = img.shape();
    if c == 1 {
        return img.clone();
    }
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| (wr * px[0] + wg * px[1] + wb * px[2]).clamp(0.0, 1.0))
        .collect();
    Image(Tensor3::from_raw(h, w, 1, data))
}

/// `round(v·255)` with halves away from zero, clamped to the byte range.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Decodes an 8- or 16-bit grayscale or RGB PNG (alpha is dropped) into `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decode_err = |e: png::DecodingError| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(decode_err)?;

    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    let max = match depth {
        png::BitDepth::Eight => 255.0f32,
        png::BitDepth::Sixteen => 65535.0f32,
        other => {
            return Err(Error::UnsupportedBitDepth {
                path: path.to_path_buf(),
                depth: other as u8,
            })
        }
    };
    let (src_channels, keep) = match color {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(Error::UnsupportedColorType {
                path: path.to_path_buf(),
                color: "indexed".into(),
            })
        }
    };

    let size = reader.output_buffer_size().ok_or_else(|| Error::Decode {
        path: path.to_path_buf(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let line = frame.line_size;
    let bytes_per_sample = if max > 255.0 { 2 } else { 1 };

    let mut data = Vec::with_capacity(height * width * keep);
    for y in 0..height {
        let row = &buf[y * line..y * line + width * src_channels * bytes_per_sample];
        for x in 0..width {
            for c in 0..keep {
                let i = (x * src_channels + c) * bytes_per_sample;
                let raw = if bytes_per_sample == 2 {
                    u16::from_be_bytes([row[i], row[i + 1]]) as f32
                } else {
                    row[i] as f32
                };
                data.push(raw / max);
            }
        }
    }
    Image::new(height, width, keep, data).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Writes an 8-bit grayscale or RGB PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let encode_err = |e: png::EncodingError| Error::Encode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        img.width() as u32,
        img.height() as u32,
    );
    encoder.set_color(if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(encode_err)?;
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize_u8(v)).collect();
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}
