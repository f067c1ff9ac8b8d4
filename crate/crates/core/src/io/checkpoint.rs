//! Binary model checkpoints.
//!
//! Layout (little-endian): the 8-byte magic `IALUT3D\0`, then `version`,
//! `M`, `N` and `flags` as `u32`. Sections follow, each a 4-byte tag and a
//! `u64` payload length:
//!
//! - `LUTS`: the N basis LUTs as `f32`, each in internal entry order.
//! - `PRED` (flag bit 0): predictor tensors as `f32` in serialization order.
//! - `ADAM` (flag bit 1): step `t` as `u64`, β1, β2, ε as `f64`, then for
//!   every tensor its first and second moments as `f32`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lut::Lut3D;
use crate::predictor::PredictorParams;
use crate::trainer::adam::{AdamConfig, AdamState, Moments};
use crate::trainer::AdaptiveModel;

pub const MAGIC: [u8; 8] = *b"IALUT3D\0";
pub const VERSION: u32 = 1;
pub const FLAG_PREDICTOR: u32 = 1;
pub const FLAG_ADAM: u32 = 2;
pub const HEADER_LEN: usize = 24;
pub const SECTION_HEADER_LEN: usize = 12;

fn put_section(out: &mut Vec<u8>, tag: &[u8; 4], payload: impl FnOnce(&mut Vec<u8>)) {
    out.extend_from_slice(tag);
    let len_at = out.len();
    out.extend_from_slice(&0u64.to_le_bytes());
    let start = out.len();
    payload(out);
    let len = (out.len() - start) as u64;
    out[len_at..start].copy_from_slice(&len.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(model: &AdaptiveModel<f32>, adam: Option<&AdamState<f32>>) -> Result<Vec<u8>> {
    if let Some(a) = adam {
        let lens: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        let have: Vec<usize> = a.moments.iter().map(|m| m.m.len()).collect();
        if lens != have {
            return Err(Error::Shape("optimizer state does not match the model".into()));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    let flags = if model.predictor.is_some() { FLAG_PREDICTOR } else { 0 } | if adam.is_some() { FLAG_ADAM } else { 0 };
    for v in [VERSION, model.lattice() as u32, model.num_luts() as u32, flags] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_section(&mut out, b"LUTS", |o| model.luts.iter().for_each(|l| put_f32s(o, l.entries())));
    if let Some(p) = &model.predictor {
        put_section(&mut out, b"PRED", |o| p.tensors().iter().for_each(|t| put_f32s(o, t)));
    }
    if let Some(a) = adam {
        put_section(&mut out, b"ADAM", |o| {
            o.extend_from_slice(&a.t.to_le_bytes());
            for v in [a.config.beta1, a.config.beta2, a.config.eps] {
                o.extend_from_slice(&v.to_le_bytes());
            }
            for m in &a.moments {
                put_f32s(o, &m.m);
                put_f32s(o, &m.v);
            }
        });
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, model: &AdaptiveModel<f32>, adam: Option<&AdamState<f32>>) -> Result<()> {
    let bytes = to_bytes(model, adam)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint { offset: self.pos as u64, msg: msg.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} bytes, {} left", self.data.len() - self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, dst: &mut [f32]) -> Result<()> {
        let start = self.pos;
        let bytes = self.take(dst.len() * 4)?;
        for (i, (d, c)) in dst.iter_mut().zip(bytes.chunks_exact(4)).enumerate() {
            *d = f32::from_le_bytes(c.try_into().unwrap());
            if !d.is_finite() {
                return Err(Error::Checkpoint { offset: (start + 4 * i) as u64, msg: "non-finite parameter".into() });
            }
        }
        Ok(())
    }

    /// Reads a section header and checks its tag and payload length.
    fn section(&mut self, tag: &[u8; 4], expected_len: u64) -> Result<()> {
        let at = self.pos;
        let found = self.take(4)?;
        if found != tag {
            self.pos = at;
            return Err(self.err(format!(
                "expected section {:?}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let len = self.u64()?;
        if len != expected_len {
            self.pos -= 8;
            return Err(self.err(format!("section {} has length {len}, expected {expected_len}", String::from_utf8_lossy(tag))));
        }
        Ok(())
    }
}

pub fn from_bytes(data: &[u8]) -> Result<(AdaptiveModel<f32>, Option<AdamState<f32>>)> {
    let mut c = Cursor { data, pos: 0 };
    if c.take(8)? != MAGIC {
        c.pos = 0;
        return Err(c.err("bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        c.pos -= 4;
        return Err(c.err(format!("unsupported version {version}")));
    }
    let m = c.u32()? as usize;
    let n = c.u32()? as usize;
    let flags = c.u32()?;
    if flags & !(FLAG_PREDICTOR | FLAG_ADAM) != 0 {
        c.pos -= 4;
        return Err(c.err(format!("unknown flags {flags:#x}")));
    }
    if m < 2 || n == 0 {
        c.pos = 12;
        return Err(c.err(format!("invalid lattice {m} or basis count {n}")));
    }
    let lut_len = 3 * m * m * m;
    c.section(b"LUTS", (4 * n * lut_len) as u64)?;
    let mut luts = Vec::with_capacity(n);
    for _ in 0..n {
        let mut e = vec![0f32; lut_len];
        c.f32s(&mut e)?;
        luts.push(Lut3D::from_entries(m, e)?);
    }
    let predictor = if flags & FLAG_PREDICTOR != 0 {
        let mut p = PredictorParams::<f32>::zeros(n);
        c.section(b"PRED", 4 * p.param_count() as u64)?;
        for t in p.tensors_mut() {
            c.f32s(t)?;
        }
        Some(p)
    } else {
        None
    };
    let mut model = AdaptiveModel::from_parts(luts, predictor)?;
    let adam = if flags & FLAG_ADAM != 0 {
        let lens: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        let floats: usize = lens.iter().sum::<usize>() * 2;
        c.section(b"ADAM", 32 + 4 * floats as u64)?;
        let t = c.u64()?;
        let config = AdamConfig { beta1: c.f64()?, beta2: c.f64()?, eps: c.f64()? };
        let mut moments = Vec::with_capacity(lens.len());
        for len in lens {
            let mut mo = Moments::zeros(len);
            c.f32s(&mut mo.m)?;
            c.f32s(&mut mo.v)?;
            moments.push(mo);
        }
        Some(AdamState { config, t, moments })
    } else {
        None
    };
    if c.pos != data.len() {
        return Err(c.err(format!("{} trailing bytes", data.len() - c.pos)));
    }
    if let Some(p) = &mut model.predictor {
        p.mode = crate::predictor::Mode::Train;
    }
    Ok((model, adam))
}

pub fn read_checkpoint(path: &Path) -> Result<(AdaptiveModel<f32>, Option<AdamState<f32>>)> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::FcInit;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturbed_model(rng: &mut ChaCha8Rng) -> AdaptiveModel<f32> {
        let mut m = AdaptiveModel::new(3, 5, FcInit::Glorot, rng).unwrap();
        for t in m.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-1e-3f32..1e-3);
            }
        }
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = perturbed_model(&mut rng);
        let mut adam = AdamState::for_tensors(AdamConfig::default(), &model.tensors());
        adam.t = 17;
        for mo in &mut adam.moments {
            mo.m.iter_mut().for_each(|v| *v = rng.random());
            mo.v.iter_mut().for_each(|v| *v = rng.random());
        }
        let bytes = to_bytes(&model, Some(&adam)).unwrap();
        let (m2, a2) = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&m2, a2.as_ref()).unwrap(), bytes);
        assert_eq!(a2.unwrap(), adam);
        for (a, b) in model.tensors().iter().zip(m2.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn size_matches_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = AdaptiveModel::<f32>::new(3, 33, FcInit::Zero, &mut rng).unwrap();
        let bytes = to_bytes(&model, None).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 2 * SECTION_HEADER_LEN + 4 * (323_433 + 269_603));
        let plain = AdaptiveModel::<f32>::without_predictor(2, 9).unwrap();
        let (back, adam) = from_bytes(&to_bytes(&plain, None).unwrap()).unwrap();
        assert_eq!(back, plain);
        assert!(adam.is_none());
    }

    fn offset_of(data: &[u8]) -> u64 {
        match from_bytes(data) {
            Err(Error::Checkpoint { offset, .. }) => offset,
            other => panic!("expected checkpoint error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn corruption_is_rejected_with_offsets() {
        let model = AdaptiveModel::<f32>::without_predictor(2, 3).unwrap();
        let good = to_bytes(&model, None).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(offset_of(&bad), 0);
        let mut bad = good.clone();
        bad[8] = 2;
        assert_eq!(offset_of(&bad), 8);
        let last_lut = HEADER_LEN + SECTION_HEADER_LEN + 4 * 81;
        assert_eq!(offset_of(&good[..good.len() - 3]), last_lut as u64);
        assert_eq!(offset_of(&good[..10]), 8);
        let mut long = good.clone();
        long.push(0);
        assert_eq!(offset_of(&long), good.len() as u64);
        let mut nan = good.clone();
        let at = HEADER_LEN + SECTION_HEADER_LEN + 8;
        nan[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(offset_of(&nan), at as u64);
        let mut tag = good;
        tag[HEADER_LEN] = b'Q';
        assert_eq!(offset_of(&tag), HEADER_LEN as u64);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = perturbed_model(&mut rng);
        write_checkpoint(&path, &model, None).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap().0, model);
    }

    proptest! {
        #[test]
        fn arbitrary_luts_round_trip_bit_exact(size in 2usize..5, count in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let luts = (0..count)
                .map(|_| {
                    let e = (0..3 * size * size * size).map(|_| f32::from_bits(rng.random::<u32>() & 0xbfff_ffff)).collect();
                    Lut3D::from_entries(size, e).unwrap()
                })
                .collect();
            let model = AdaptiveModel::from_parts(luts, None).unwrap();
            let bytes = to_bytes(&model, None).unwrap();
            let (back, adam) = from_bytes(&bytes).unwrap();
            prop_assert!(adam.is_none());
            prop_assert_eq!(to_bytes(&back, None).unwrap(), bytes);
        }
    }
}
