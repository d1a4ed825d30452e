//! Binary checkpoint of a [`PerceptualBundle`].
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "TSGEO-PB"  u32 version  u64 total length
//! u64 height  u64 expansion  u64 downscale  u64 input_t  u64 d_z  u64 seed
//! 2 x report: u64 seed  u64 epochs  f64 lr  u64 batch  f64 frozen_grad_norm  u64 n  n x f64 curve
//! u64 tensor count, then per tensor: u32 name length, name, u32 ndim, ndim x u64 dims, f64 data
//! u32 crc32 of every preceding byte
//! ```

use std::path::Path;

use tsgeo_core::image::RenderConfig;
use tsgeo_core::perceptual::TrainReport;
use tsgeo_core::{PerceptualBundle, Tensor};

use crate::error::{io_err, BundleError, Error, Result};

pub const MAGIC: &[u8; 8] = b"TSGEO-PB";
pub const VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BundleError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(BundleError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, BundleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, BundleError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize, BundleError> {
        usize::try_from(self.u64()?).map_err(|_| BundleError::Layout("size field overflows".into()))
    }
    fn f64(&mut self) -> Result<f64, BundleError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn write_report(w: &mut Writer, r: &TrainReport) {
    w.u64(r.seed);
    w.usize(r.epochs);
    w.f64(r.lr);
    w.usize(r.batch);
    w.f64(r.frozen_grad_norm);
    w.usize(r.curve.len());
    for &v in &r.curve {
        w.f64(v);
    }
}

fn read_report(r: &mut Reader) -> Result<TrainReport, BundleError> {
    let seed = r.u64()?;
    let epochs = r.usize()?;
    let lr = r.f64()?;
    let batch = r.usize()?;
    let frozen_grad_norm = r.f64()?;
    let n = r.usize()?;
    if n > r.buf.len() / 8 {
        return Err(BundleError::Truncated);
    }
    let curve = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    Ok(TrainReport { final_loss: curve.last().copied(), curve, seed, epochs, lr, batch, frozen_grad_norm })
}

pub fn encode_bundle(b: &PerceptualBundle) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(0);
    for v in [b.render.height, b.render.expansion, b.render.downscale_window, b.input_t(), b.d_z()] {
        w.usize(v);
    }
    w.u64(b.seed);
    write_report(&mut w, &b.autoencoder_report);
    write_report(&mut w, &b.extractor_report);
    let params = b.named_params();
    w.usize(params.len());
    for (name, p) in params {
        w.u32(name.len() as u32);
        w.0.extend_from_slice(name.as_bytes());
        w.u32(p.value.shape().len() as u32);
        for &d in p.value.shape() {
            w.usize(d);
        }
        for &v in p.value.data() {
            w.f64(v);
        }
    }
    let total = (w.0.len() + 4) as u64;
    w.0[12..PREFIX].copy_from_slice(&total.to_le_bytes());
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

pub fn decode_bundle(buf: &[u8]) -> Result<PerceptualBundle, BundleError> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(BundleError::BadMagic);
    }
    let mut r = Reader { buf, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(BundleError::Version { found: version, expected: VERSION });
    }
    let total = r.u64()?;
    if (buf.len() as u64) < total {
        return Err(BundleError::Truncated);
    }
    if buf.len() as u64 != total {
        return Err(BundleError::Layout(format!("{} trailing bytes", buf.len() as u64 - total)));
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(BundleError::Checksum { stored, computed });
    }
    let mut r = Reader { buf: body, pos: PREFIX };

    let render = RenderConfig { height: r.usize()?, expansion: r.usize()?, downscale_window: r.usize()? };
    let input_t = r.usize()?;
    let d_z = r.usize()?;
    let seed = r.u64()?;
    let autoencoder_report = read_report(&mut r)?;
    let extractor_report = read_report(&mut r)?;
    let mut bundle =
        PerceptualBundle::skeleton(render, input_t, d_z, seed).map_err(|e| BundleError::Layout(e.to_string()))?;
    bundle.autoencoder_report = autoencoder_report;
    bundle.extractor_report = extractor_report;

    let count = r.usize()?;
    let mut slots = bundle.named_params_mut();
    if count != slots.len() {
        return Err(BundleError::Layout(format!("{count} tensors, expected {}", slots.len())));
    }
    for (want, param) in slots.iter_mut() {
        let len = r.u32()? as usize;
        let name =
            std::str::from_utf8(r.take(len)?).map_err(|_| BundleError::Layout("tensor name is not UTF-8".into()))?;
        if name != want {
            return Err(BundleError::Layout(format!("tensor `{name}` where `{want}` was expected")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
        if shape != param.value.shape() {
            return Err(BundleError::Layout(format!("{name}: shape {shape:?}, expected {:?}", param.value.shape())));
        }
        let data = (0..param.value.numel()).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        param.value = Tensor::new(shape, data).map_err(|e| BundleError::Layout(e.to_string()))?;
    }
    drop(slots);
    if r.pos != body.len() {
        return Err(BundleError::Layout("unread bytes after tensor table".into()));
    }
    Ok(bundle)
}

pub fn save_bundle(bundle: &PerceptualBundle, path: &Path) -> Result<()> {
    std::fs::write(path, encode_bundle(bundle)).map_err(io_err(path))
}

pub fn load_bundle(path: &Path) -> Result<PerceptualBundle> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_bundle(&bytes).map_err(|source| Error::Bundle { path: path.to_path_buf(), source })
}
