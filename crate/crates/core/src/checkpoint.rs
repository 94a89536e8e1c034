//! Versioned JSON checkpoints: config, vocabularies and named parameters.
//!
//! Tensor data is stored as base64 of little-endian f64 bytes so values
//! round-trip exactly.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::data::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PpRec};
use crate::tensor::Tensor;

pub const FORMAT: &str = "pprec-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

impl StoredTensor {
    fn encode(name: &str, t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        StoredTensor {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    fn decode(&self) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", self.name)))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint(format!(
                "parameter {}: truncated data",
                self.name
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(self.shape.clone(), values)
            .map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", self.name)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub entity_vocab: Vocabulary,
    pub params: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &PpRec, vocab: &Vocabulary, entity_vocab: &Vocabulary) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config: model.config.clone(),
            vocab: vocab.clone(),
            entity_vocab: entity_vocab.clone(),
            params: model
                .params
                .iter()
                .map(|(_, p)| StoredTensor::encode(&p.name, &p.value))
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        Ok(ck)
    }

    /// Fails unless `expected` describes the same architecture.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        let arch = |c: &ModelConfig| {
            (
                (
                    c.word_dim,
                    c.entity_dim,
                    c.heads,
                    c.head_dim,
                    c.query_dim,
                    c.recency_dim,
                    c.popularity_dim,
                    c.popularity_hidden,
                    c.gate_hidden,
                ),
                c.single_layer_gate,
                c.max_recency_hours,
                c.popularity_bins,
                c.ablations,
            )
        };
        if arch(&self.config) != arch(expected) {
            return Err(Error::Checkpoint(format!(
                "checkpoint architecture {:?} differs from requested {:?}",
                arch(&self.config),
                arch(expected)
            )));
        }
        Ok(())
    }

    /// Rebuilds the model; every parameter must be present with its shape.
    pub fn into_model(self) -> Result<(PpRec, Vocabulary, Vocabulary)> {
        let cfg = self.config.clone();
        let words = Tensor::zeros(&[self.vocab.len(), cfg.word_dim]);
        let entities = (!cfg.ablations.no_knowledge)
            .then(|| Tensor::zeros(&[self.entity_vocab.len(), cfg.entity_dim]));
        let mut model = PpRec::with_tables(cfg, words, entities)?;
        if self.params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for stored in &self.params {
            let id = model.params.id(&stored.name).ok_or_else(|| {
                Error::Checkpoint(format!("unexpected parameter {}", stored.name))
            })?;
            let value = stored.decode()?;
            let slot = &mut model.params.get_mut(id).value;
            if slot.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, model expects {:?}",
                    stored.name,
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value;
        }
        Ok((model, self.vocab, self.entity_vocab))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ablations;

    fn setup(ablations: Ablations) -> (PpRec, Vocabulary, Vocabulary) {
        let cfg = ModelConfig {
            word_dim: 4,
            entity_dim: 3,
            heads: 2,
            head_dim: 2,
            query_dim: 3,
            recency_dim: 2,
            popularity_dim: 2,
            popularity_hidden: 3,
            gate_hidden: 2,
            max_recency_hours: 10,
            popularity_bins: 5,
            ablations,
            ..Default::default()
        };
        let vocab = Vocabulary::from_tokens(["a", "b", "c"], 1);
        let ents = Vocabulary::from_tokens(["Q1"], 1);
        let m = PpRec::new(cfg, &vocab, &ents, None, None).unwrap();
        (m, vocab, ents)
    }

    #[test]
    fn round_trip_is_exact() {
        let (m, v, e) = setup(Ablations::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        Checkpoint::from_model(&m, &v, &e).save(&path).unwrap();
        let (back, v2, e2) = Checkpoint::load(&path).unwrap().into_model().unwrap();
        assert_eq!((v2, e2), (v, e));
        for ((_, a), (_, b)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn no_knowledge_checkpoint_has_no_entity_parameters() {
        let (m, v, e) = setup(Ablations {
            no_knowledge: true,
            ..Default::default()
        });
        let ck = Checkpoint::from_model(&m, &v, &e);
        assert!(ck.params.iter().all(|p| !p.name.contains("entit")));
    }

    #[test]
    fn mismatches_are_rejected() {
        let (m, v, e) = setup(Ablations::default());
        let ck = Checkpoint::from_model(&m, &v, &e);
        let mut other = ck.config.clone();
        other.heads = 4;
        assert!(matches!(ck.check_config(&other), Err(Error::Checkpoint(_))));
        assert!(ck.check_config(&ck.config.clone()).is_ok());

        let mut broken = ck.clone();
        broken.config.ablations.no_ctr = true;
        assert!(matches!(broken.into_model(), Err(Error::Checkpoint(_))));
        let mut broken = ck.clone();
        broken.params[0].shape = vec![1, 1];
        assert!(matches!(broken.into_model(), Err(Error::Checkpoint(_))));
        let mut broken = ck;
        broken.version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        broken.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
