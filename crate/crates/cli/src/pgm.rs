//! Binary 8-bit PGM (`P5`).

use std::fs;
use std::path::Path;

use wacnn::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Header token reader: skips whitespace and `#` comments.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn token(&mut self) -> Result<&str> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("PGM header truncated".into())),
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Format("PGM header is not ASCII".into()))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let t = self.token()?;
        t.parse().map_err(|_| Error::Format(format!("PGM {what}: expected a number, got {t:?}")))
    }
}

impl Gray {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut h = Header { bytes, pos: 0 };
        if h.token()? != "P5" {
            return Err(Error::Format("not a binary PGM (magic P5)".into()));
        }
        let width = h.number("width")?;
        let height = h.number("height")?;
        let maxval = h.number("maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::Format(format!("PGM extents must be positive, got {width}×{height}")));
        }
        if !(1..=255).contains(&maxval) {
            return Err(Error::Format(format!("only 8-bit PGM is supported, maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        let start = h.pos + 1;
        let len = width * height;
        let pixels = bytes
            .get(start..start + len)
            .ok_or_else(|| Error::Format(format!("PGM raster truncated: need {len} bytes")))?
            .to_vec();
        Ok(Gray { width, height, pixels })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.encode())?)
    }

    /// Rounds and clamps to `[0, 255]`.
    pub fn from_values(width: usize, height: usize, values: &[f64]) -> Self {
        let pixels = values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Gray { width, height, pixels }
    }
}
