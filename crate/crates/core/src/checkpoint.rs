//! Versioned binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "CKGRCKPT" | u32 version
//! u64 len | header text (config keys, vocab hash, epoch)
//! u64 len | vocabulary JSON
//! u32 tensor count, then per tensor:
//!   u32 len | name | u8 trainable | u32 rank | u64 dims.. | f64 values..
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::{Param, ParameterStore};
use crate::training::TrainConfig;

const MAGIC: &[u8; 8] = b"CKGRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Vocabulary,
    pub vocab_hash: String,
    pub epoch: usize,
    pub params: Vec<Param>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, train: &TrainConfig, epoch: usize) -> Self {
        Self {
            model: model.config().clone(),
            train: train.clone(),
            vocab: model.vocab().clone(),
            vocab_hash: model.vocab().hash(),
            epoch,
            params: model.params().clone().into_params(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        let mut store = ParameterStore::new();
        for p in self.params {
            store.push(p)?;
        }
        Model::from_parts(self.model, self.vocab, store)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let mut header = RunConfig::model_train_text(&self.model, &self.train);
        header.push_str(&format!("vocab_hash = {}\nepoch = {}\n", self.vocab_hash, self.epoch));
        put_blob(&mut out, header.as_bytes());
        put_blob(&mut out, &serde_json::to_vec(&self.vocab)?);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.trainable as u8);
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &p.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let header = std::str::from_utf8(r.blob()?).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let mut cfg = RunConfig::default();
        let (mut vocab_hash, mut epoch) = (None, None);
        for line in header.lines() {
            let (k, v) = line.split_once(" = ").ok_or_else(|| Error::Checkpoint(format!("bad header line `{line}`")))?;
            match k {
                "vocab_hash" => vocab_hash = Some(v.to_string()),
                "epoch" => epoch = Some(v.parse().map_err(|_| Error::Checkpoint("bad epoch".into()))?),
                _ => cfg.set(k, v)?,
            }
        }
        let vocab: Vocabulary = serde_json::from_slice(r.blob()?)?;
        let vocab_hash = vocab_hash.ok_or_else(|| Error::Checkpoint("header lacks vocab_hash".into()))?;
        if vocab.hash() != vocab_hash {
            return Err(Error::Checkpoint("stored vocabulary does not match its hash".into()));
        }
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("bad tensor name".into()))?;
            let trainable = r.take(1)?[0] != 0;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let value = (0..len).map(|_| r.u64().map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
            params.push(Param { name, shape, value, trainable });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after tensors".into()));
        }
        Ok(Self {
            model: cfg.model,
            train: cfg.train,
            vocab,
            vocab_hash,
            epoch: epoch.ok_or_else(|| Error::Checkpoint("header lacks epoch".into()))?,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_blob(out: &mut Vec<u8>, blob: &[u8]) {
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(blob);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, RawTuple};
    use crate::model::{EncoderKind, ScorerKind};

    fn tiny_model(encoder: EncoderKind, scorer: ScorerKind) -> Model {
        let train = [RawTuple::new("eat food", "UsedFor", "be full"), RawTuple::new("run", "Causes", "be tired")];
        let test = [RawTuple::new("eat quickly", "Causes", "be full")];
        let ds = build_dataset(&train, &[], &test).unwrap();
        let cfg = ModelConfig {
            encoder,
            scorer,
            word_dim: 4,
            entity_dim: 4,
            relation_dim: 4,
            cnn_widths: vec![1, 2],
            cnn_channels: 3,
            lstm_hidden: 3,
            ..ModelConfig::default()
        };
        Model::for_dataset(cfg, &ds, 5).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for enc in [EncoderKind::Lookup, EncoderKind::Cnn, EncoderKind::BiLstm] {
            for sc in [ScorerKind::TransE, ScorerKind::Tucker] {
                let m = tiny_model(enc, sc);
                let ck = Checkpoint::from_model(&m, &TrainConfig::default(), 3);
                let bytes = ck.to_bytes().unwrap();
                let back = Checkpoint::from_bytes(&bytes).unwrap();
                assert_eq!(back, ck);
                assert_eq!(back.to_bytes().unwrap(), bytes);
                let m2 = back.into_model().unwrap();
                let all = m.all_entities();
                for s in &all {
                    let a = m.score_candidates(*s, crate::data::RelationId(0), &all, None).unwrap();
                    let b = m2.score_candidates(*s, crate::data::RelationId(0), &all, None).unwrap();
                    assert_eq!(
                        a.logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        b.logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                    );
                }
            }
        }
    }

    #[test]
    fn corrupt_input_rejected() {
        let m = tiny_model(EncoderKind::Cnn, ScorerKind::Tucker);
        let bytes = Checkpoint::from_model(&m, &TrainConfig::default(), 0).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
