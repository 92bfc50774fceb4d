//! AQR rasters: a minimal little-endian container.
//!
//! ```text
//! "AQR1" | u32 width | u32 height | u32 bands | u32 dtype (0 = u8, 1 = f32)
//! payload: band-sequential, row-major samples
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const RASTER_MAGIC: [u8; 4] = *b"AQR1";
const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    U8,
    F32,
}

impl DType {
    pub fn code(self) -> u32 {
        match self {
            DType::U8 => 0,
            DType::F32 => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(DType::U8),
            1 => Ok(DType::F32),
            other => Err(Error::Unsupported(format!("raster dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RasterData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl RasterData {
    pub fn len(&self) -> usize {
        match self {
            RasterData::U8(v) => v.len(),
            RasterData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            RasterData::U8(_) => DType::U8,
            RasterData::F32(_) => DType::F32,
        }
    }
}

/// Multi-band raster, band-sequential.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    bands: usize,
    data: RasterData,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, bands: usize, data: RasterData) -> Result<Self> {
        if bands != 1 && bands != 4 {
            return Err(Error::Unsupported(format!("{bands}-band raster (expected 1 or 4)")));
        }
        let expected = width * height * bands;
        if data.len() != expected {
            return Err(Error::PayloadLength {
                expected: expected * data.dtype().size(),
                found: data.len() * data.dtype().size(),
            });
        }
        Ok(RasterImage {
            width,
            height,
            bands,
            data,
        })
    }

    pub fn from_f32(width: usize, height: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(width, height, bands, RasterData::F32(data))
    }

    pub fn from_u8(width: usize, height: usize, bands: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, bands, RasterData::U8(data))
    }

    /// Bands of a `(1, bands, h, w)` tensor.
    pub fn from_tensor(t: &Tensor4<f32>) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 {
            return Err(Error::Shape {
                op: "raster_from_tensor",
                detail: format!("expected a single image, got {s}"),
            });
        }
        Self::from_f32(s.w, s.h, s.c, t.data().to_vec())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &RasterData {
        &self.data
    }

    /// Sample of `band` at column `x`, row `y`, as f32.
    pub fn get(&self, band: usize, x: usize, y: usize) -> f32 {
        let i = (band * self.height + y) * self.width + x;
        match &self.data {
            RasterData::U8(v) => v[i] as f32,
            RasterData::F32(v) => v[i],
        }
    }

    /// All samples as f32, band-sequential.
    pub fn to_f32(&self) -> Vec<f32> {
        match &self.data {
            RasterData::U8(v) => v.iter().map(|&b| b as f32).collect(),
            RasterData::F32(v) => v.clone(),
        }
    }

    pub fn to_tensor(&self) -> Tensor4<f32> {
        Tensor4::from_vec([1, self.bands, self.height, self.width], self.to_f32()).expect("raster length checked on construction")
    }

    /// `size`×`size` window with top-left corner at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Result<Self> {
        if x0 + size > self.width || y0 + size > self.height {
            return Err(Error::Shape {
                op: "crop",
                detail: format!(
                    "window {size}x{size} at ({x0}, {y0}) exceeds {}x{} raster",
                    self.width, self.height
                ),
            });
        }
        fn window<V: Copy>(v: &[V], r: &RasterImage, x0: usize, y0: usize, size: usize) -> Vec<V> {
            let mut out = Vec::with_capacity(size * size * r.bands);
            for b in 0..r.bands {
                for y in y0..y0 + size {
                    let row = (b * r.height + y) * r.width;
                    out.extend_from_slice(&v[row + x0..row + x0 + size]);
                }
            }
            out
        }
        let data = match &self.data {
            RasterData::U8(v) => RasterData::U8(window(v, self, x0, y0, size)),
            RasterData::F32(v) => RasterData::F32(window(v, self, x0, y0, size)),
        };
        Self::new(size, size, self.bands, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * self.dtype().size());
        out.extend_from_slice(&RASTER_MAGIC);
        for v in [self.width as u32, self.height as u32, self.bands as u32, self.dtype().code()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.data {
            RasterData::U8(v) => out.extend_from_slice(v),
            RasterData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated(format!("raster header: {} bytes", bytes.len())));
        }
        if bytes[..4] != RASTER_MAGIC {
            return Err(Error::BadMagic {
                expected: RASTER_MAGIC,
                found: bytes[..4].to_vec(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated(format!("raster header: {} bytes", bytes.len())));
        }
        let field = |i: usize| {
            let o = 4 + 4 * i;
            u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        };
        let (width, height, bands) = (field(0), field(1), field(2));
        let dtype = DType::from_code(field(3) as u32)?;
        let payload = &bytes[HEADER_LEN..];
        let expected = width * height * bands * dtype.size();
        if payload.len() != expected {
            return Err(Error::PayloadLength {
                expected,
                found: payload.len(),
            });
        }
        let data = match dtype {
            DType::U8 => RasterData::U8(payload.to_vec()),
            DType::F32 => RasterData::F32(
                payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            ),
        };
        Self::new(width, height, bands, data)
    }
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    RasterImage::from_bytes(&bytes)
}

pub fn write_raster(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, img.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Single-band binary water mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::PayloadLength {
                expected: width * height,
                found: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("mask value {v} is not 0 or 1")));
        }
        Ok(MaskImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn from_raster(r: &RasterImage) -> Result<Self> {
        match r.data() {
            RasterData::U8(v) if r.bands() == 1 => Self::new(r.width(), r.height(), v.clone()),
            _ => Err(Error::Data(format!(
                "mask must be a 1-band u8 raster, got {} band(s) of {:?}",
                r.bands(),
                r.dtype()
            ))),
        }
    }

    pub fn to_raster(&self) -> RasterImage {
        RasterImage::from_u8(self.width, self.height, 1, self.data.clone()).expect("mask length checked")
    }

    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Result<Self> {
        Self::from_raster(&self.to_raster().crop(x0, y0, size)?)
    }

    /// `(1, 1, h, w)` tensor of 0.0 / 1.0.
    pub fn to_tensor(&self) -> Tensor4<f32> {
        let data = self.data.iter().map(|&v| v as f32).collect();
        Tensor4::from_vec([1, 1, self.height, self.width], data).expect("mask length checked")
    }

    pub fn water_fraction(&self) -> f64 {
        let n = self.data.iter().filter(|&&v| v == 1).count();
        n as f64 / self.data.len().max(1) as f64
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_raster(&read_raster(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_raster(&self.to_raster(), path)
    }

    /// Binary PGM with water drawn white.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| v * 255));
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}
