//! Dense height × width × channels arrays and the raw binary tensor format.
//!
//! The on-disk layout is shared by noise-bank patches and standalone tensors:
//!
//! ```text
//! "NGDC" | u16 version (=1) | u16 height | u16 width | u16 channels | f32 LE × (h·w·c)
//! ```
//!
//! All integers are little-endian; samples are row-major, channel-interleaved.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const TENSOR_MAGIC: &[u8; 4] = b"NGDC";
pub const TENSOR_VERSION: u16 = 1;
const HEADER_LEN: usize = 12;

/// Row-major, channel-interleaved 3-D array of finite scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidTensor(format!(
                "dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::InvalidTensor(format!(
                "data length {} does not match {height}x{width}x{channels} = {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {pos}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a tensor without the finiteness scan. Callers guarantee the invariant.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
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
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }

    pub fn ensure_same_shape(&self, other: &Tensor3<T>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Elementwise map. The result must stay finite.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_map(&self, other: &Tensor3<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Tensor3<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn add(&self, other: &Tensor3<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, k: T) -> Result<Self> {
        self.map(|v| v * k)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor3<U> {
        Tensor3::from_raw(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|v| U::of(v.to_f64_lossless())).collect(),
        )
    }

    /// Serializes into the raw binary tensor format (samples stored as f32).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dim = |v: usize, name: &str| {
            u16::try_from(v).map_err(|_| {
                Error::InvalidTensor(format!("{name} {v} exceeds the u16 range of the file format"))
            })
        };
        let (h, w, c) = (
            dim(self.height, "height")?,
            dim(self.width, "width")?,
            dim(self.channels, "channels")?,
        );
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        for v in [TENSOR_VERSION, h, w, c] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&(v.to_f64_lossless() as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }
}

/// Parsed file contents before any range checks; values may be non-finite.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err(format!("file too short ({} bytes)", bytes.len()));
        }
        if &bytes[..4] != TENSOR_MAGIC {
            return Err("bad magic".into());
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let version = u16_at(4);
        if version != TENSOR_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let (height, width, channels) = (u16_at(6) as usize, u16_at(8) as usize, u16_at(10) as usize);
        let count = height * width * channels;
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * count {
            return Err(format!(
                "payload is {} bytes, header {height}x{width}x{channels} needs {}",
                body.len(),
                4 * count
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::TensorFormat {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn into_tensor<T: Scalar>(self) -> Result<Tensor3<T>> {
        Tensor3::new(
            self.height,
            self.width,
            self.channels,
            self.data.into_iter().map(|v| T::of(v as f64)).collect(),
        )
    }
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor3<T>> {
    RawTensor::read(path)?.into_tensor()
}
