//! Binary cube, mask and checkpoint files.
//!
//! All integers are little-endian.
//!
//! | file       | layout                                                              |
//! |------------|---------------------------------------------------------------------|
//! | cube       | `HSC1`, H, W, channels (u32), then channel planes of H*W f32        |
//! | mask       | `MSK1`, H, W (u32), then H*W f32                                    |
//! | checkpoint | `CKP1`, version (u32), blob count (u32), then per blob: name length |
//! |            | (u32), UTF-8 name, payload length (u64), payload bytes              |

use std::fs;
use std::path::Path;

use ndgrad::Tensor;

use crate::error::{Error, Result};
use crate::optics::{HsiCube, Mask};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const MASK_MAGIC: &[u8; 4] = b"MSK1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKP1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Largest element count accepted when decoding dimensions.
const MAX_ELEMENTS: u64 = 1 << 32;

fn format_err(offset: usize, expected: impl Into<String>, found: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        expected: expected.into(),
        found: found.into(),
    }
}

/// Cursor over a byte slice that reports the offset of every failure.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(format_err(
                self.pos,
                format!("{n} bytes of {what}"),
                format!("{remaining} bytes (truncated)"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(format_err(
                at,
                format!("magic {:?}", String::from_utf8_lossy(magic)),
                format!("bad magic {:?}", String::from_utf8_lossy(got)),
            ));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u32(what)?;
        if v == 0 {
            return Err(format_err(at, format!("nonzero {what}"), "0"));
        }
        Ok(v as usize)
    }

    fn element_count(&self, dims: &[usize], at: usize) -> Result<usize> {
        let n = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        match n {
            Some(n) if n <= MAX_ELEMENTS => Ok(n as usize),
            _ => Err(format_err(at, format!("at most {MAX_ELEMENTS} elements"), format!("dimensions {dims:?} (overflow)"))),
        }
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| format_err(self.pos, "addressable size", "overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| format_err(self.pos, "addressable size", "overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(format_err(self.pos, "end of file", format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn push_f32s(out: &mut Vec<u8>, data: &[f64]) {
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_cube(x: &HsiCube) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * x.data().len());
    out.extend_from_slice(CUBE_MAGIC);
    push_u32(&mut out, x.height(), "height")?;
    push_u32(&mut out, x.width(), "width")?;
    push_u32(&mut out, x.channels(), "channels")?;
    push_f32s(&mut out, x.data());
    Ok(out)
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube> {
    let mut r = Reader::new(bytes);
    r.magic(CUBE_MAGIC)?;
    let at = r.pos;
    let h = r.dim("height")?;
    let w = r.dim("width")?;
    let c = r.dim("channels")?;
    let n = r.element_count(&[h, w, c], at)?;
    let data = r.f32s(n, "cube data")?;
    r.finish()?;
    HsiCube::from_raw(c, h, w, data)
}

pub fn encode_mask(m: &Mask) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * m.pixels());
    out.extend_from_slice(MASK_MAGIC);
    push_u32(&mut out, m.height(), "height")?;
    push_u32(&mut out, m.width(), "width")?;
    push_f32s(&mut out, m.data());
    Ok(out)
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let mut r = Reader::new(bytes);
    r.magic(MASK_MAGIC)?;
    let at = r.pos;
    let h = r.dim("height")?;
    let w = r.dim("width")?;
    let n = r.element_count(&[h, w], at)?;
    let data = r.f32s(n, "mask data")?;
    r.finish()?;
    Mask::new(h, w, data)
}

/// Ordered named byte blobs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub blobs: Vec<(String, Vec<u8>)>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, payload: Vec<u8>) {
        self.blobs.push((name.into(), payload));
    }

    pub fn get(&self, name: &str) -> Result<&[u8]> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| Error::Config(format!("checkpoint has no `{name}` entry")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.blobs.iter().any(|(n, _)| n == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blobs.iter().map(|(n, _)| n.as_str())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        push_u32(&mut out, self.blobs.len(), "blob count")?;
        for (name, payload) in &self.blobs {
            push_u32(&mut out, name.len(), "blob name length")?;
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let at = r.pos;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(format_err(at, format!("version {CHECKPOINT_VERSION}"), format!("version {version}")));
        }
        let count = r.u32("blob count")?;
        let mut blobs = Vec::new();
        for _ in 0..count {
            let len = r.u32("blob name length")? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len, "blob name")?)
                .map_err(|e| format_err(at, "UTF-8 blob name", e.to_string()))?
                .to_string();
            let at = r.pos;
            let size = r.u64("payload length")?;
            let size = usize::try_from(size).map_err(|_| format_err(at, "addressable payload length", size.to_string()))?;
            let payload = r.take(size, "payload")?.to_vec();
            blobs.push((name, payload));
        }
        r.finish()?;
        Ok(Self { blobs })
    }
}

/// Tensor payload: rank (u32), dims (u32 each), then f64 values.
pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(4 + 4 * t.shape().len() + 8 * t.len());
    push_u32(&mut out, t.shape().len(), "rank")?;
    for &d in t.shape() {
        push_u32(&mut out, d, "dimension")?;
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    let rank = r.u32("rank")? as usize;
    let at = r.pos;
    let dims = (0..rank).map(|_| r.dim("dimension")).collect::<Result<Vec<_>>>()?;
    let n = r.element_count(&dims, at)?;
    let data = r.f64s(n, "tensor data")?;
    r.finish()?;
    Ok(Tensor::new(dims, data)?)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_cube(path: &Path, x: &HsiCube) -> Result<()> {
    write_file(path, &encode_cube(x)?)
}

pub fn load_cube(path: &Path) -> Result<HsiCube> {
    decode_cube(&read_file(path)?)
}

pub fn save_mask(path: &Path, m: &Mask) -> Result<()> {
    write_file(path, &encode_mask(m)?)
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    decode_mask(&read_file(path)?)
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    write_file(path, &c.encode()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&read_file(path)?)
}
