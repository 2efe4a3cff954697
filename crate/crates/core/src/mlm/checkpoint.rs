//! Binary checkpoint container.
//!
//! Layout (all integers u32 little-endian):
//! magic `MDXCKPT\0`, format version, header length, header JSON
//! (`{"config", "peft", "trainable"}`), tensor count, then per tensor:
//! name length, UTF-8 name, rows, cols, row-major f32 LE values; finally
//! vocabulary size and per entry a length-prefixed UTF-8 surface.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{MlmConfig, TuningMode};
use super::model::{init_model, PeftState, ToyMlm};
use crate::error::{Error, Result};
use crate::textproc::Vocabulary;

pub const MAGIC: &[u8; 8] = b"MDXCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: MlmConfig,
    peft: Option<PeftState>,
    trainable: BTreeMap<String, bool>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn to_bytes(model: &ToyMlm, vocab: &Vocabulary) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let header = serde_json::to_string(&Header {
        config: model.config.clone(),
        peft: model.peft.clone(),
        trainable: model.trainable.clone(),
    })?;
    put_str(&mut out, &header)?;
    let tensors = model.params.tensors();
    put_u32(&mut out, tensors.len())?;
    for t in &tensors {
        put_str(&mut out, &t.name)?;
        put_u32(&mut out, t.value.nrows())?;
        put_u32(&mut out, t.value.ncols())?;
        for &v in t.value.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    put_u32(&mut out, vocab.len())?;
    for s in vocab.surfaces() {
        put_str(&mut out, s)?;
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|e| Error::Checkpoint(format!("invalid UTF-8: {e}")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(ToyMlm, Vocabulary)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let header: Header = serde_json::from_str(&r.string()?)?;
    let mut model = init_model(header.config)?;
    if let Some(peft) = header.peft {
        model = model.apply_peft(peft.mode, peft.config)?;
    }
    let n = r.u32()?;
    let mut seen = 0;
    {
        let mut tensors = model.params.tensors_mut();
        if n != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {n}",
                tensors.len()
            )));
        }
        for _ in 0..n {
            let name = r.string()?;
            let rows = r.u32()?;
            let cols = r.u32()?;
            let t = tensors
                .iter_mut()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
            if t.value.dim() != (rows, cols) {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {rows}x{cols}, expected {:?}",
                    t.value.dim()
                )));
            }
            let bytes = r.take(rows * cols * 4)?;
            for (dst, chunk) in t.value.iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
            }
            seen += 1;
        }
    }
    debug_assert_eq!(seen, n);
    let expected: std::collections::BTreeSet<String> = model.groups().into_iter().collect();
    if header.trainable.keys().ne(expected.iter()) {
        return Err(Error::Checkpoint(
            "freezing mask does not match parameter groups".into(),
        ));
    }
    model.trainable = header.trainable;
    let n_vocab = r.u32()?;
    let surfaces = (0..n_vocab).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::from_surfaces(surfaces, 1)?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    if vocab.len() > model.config.vocab_size {
        return Err(Error::Checkpoint(
            "vocabulary larger than the model's vocab_size".into(),
        ));
    }
    Ok((model, vocab))
}

pub fn save_checkpoint(model: &ToyMlm, vocab: &Vocabulary, path: &Path) -> Result<()> {
    let bytes = to_bytes(model, vocab)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ToyMlm, Vocabulary)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Mode recorded in a checkpoint, without decoding the tensors.
pub fn checkpoint_mode(buf: &[u8]) -> Result<TuningMode> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    r.u32()?;
    let header: Header = serde_json::from_str(&r.string()?)?;
    Ok(header.peft.map_or(TuningMode::Full, |p| p.mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::PeftConfig;

    fn vocab() -> Vocabulary {
        let mut s: Vec<String> = crate::textproc::SPECIALS.iter().map(|s| s.to_string()).collect();
        s.extend(["he", "she", "reads", "他"].map(String::from));
        Vocabulary::from_surfaces(s, 1).unwrap()
    }

    fn model(mode: TuningMode) -> ToyMlm {
        init_model(MlmConfig {
            vocab_size: 9,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 8,
            max_seq_len: 8,
            ..Default::default()
        })
        .unwrap()
        .apply_peft(mode, PeftConfig::default())
        .unwrap()
    }

    #[test]
    fn round_trip_is_stable() {
        for mode in TuningMode::ALL {
            let m = model(mode);
            let bytes = to_bytes(&m, &vocab()).unwrap();
            let (loaded, v) = from_bytes(&bytes).unwrap();
            assert_eq!(v, vocab());
            assert_eq!(loaded.tuning_mode(), mode);
            assert_eq!(loaded.freezing_mask(), m.freezing_mask());
            assert_eq!(to_bytes(&loaded, &v).unwrap(), bytes);
            assert_eq!(checkpoint_mode(&bytes).unwrap(), mode);
            for (a, b) in m.params().tensors().iter().zip(loaded.params().tensors()) {
                assert_eq!(a.name, b.name);
                for (x, y) in a.value.iter().zip(b.value.iter()) {
                    assert_eq!(*x as f32 as f64, *y);
                }
            }
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = to_bytes(&model(TuningMode::Adapter), &vocab()).unwrap();
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Checkpoint(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Checkpoint(_))));
    }
}
