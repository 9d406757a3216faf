//! Checkpoints: the tensor container holding every parameter plus the frozen
//! word vectors, and a JSON sidecar with the training configuration and
//! vocabulary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Model, TrainConfig};
use crate::corpus::{EmbeddingTable, Vocab};
use crate::tensor::{read_container, write_container, ParamSet, Tensor};
use crate::{Error, Result};

/// Container entry holding the word-vector table.
pub const EMBEDDINGS_TENSOR: &str = "frozen.embeddings";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub train_config: TrainConfig,
    pub vocab_hash: String,
    pub vocab: Vec<String>,
}

/// `model.ckpt` → `model.ckpt.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Model {
    /// Container bytes: parameters in name order, then the embeddings.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let emb = Tensor::matrix(
            self.embeddings.num_rows(),
            self.embeddings.dim(),
            self.embeddings.rows().to_vec(),
        )?;
        let mut entries: Vec<(&str, &Tensor)> = self.params.iter().collect();
        entries.push((EMBEDDINGS_TENSOR, &emb));
        let mut buf = Vec::new();
        write_container(&mut buf, &entries)?;
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<Path>, train_config: &TrainConfig) -> Result<()> {
        let path = path.as_ref();
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(&self.checkpoint_bytes()?)?;
        f.flush()?;
        let sidecar = Sidecar {
            train_config: TrainConfig {
                model: self.config.clone(),
                ..train_config.clone()
            },
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.words().to_vec(),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Loads a checkpoint and its sidecar; the vocabulary hash and the
    /// parameter names must match what the stored configuration implies.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, TrainConfig)> {
        let path = path.as_ref();
        let side_path = sidecar_path(path);
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(&side_path).map_err(|e| {
            Error::Checkpoint(format!("cannot read sidecar {}: {e}", side_path.display()))
        })?)?;
        let vocab = Vocab::from_words(sidecar.vocab.iter().cloned());
        if vocab.hash() != sidecar.vocab_hash {
            return Err(Error::Checkpoint("vocabulary does not match its recorded hash".into()));
        }
        let mut reader = BufReader::new(File::open(path)?);
        let entries = read_container(&mut reader)?;
        let mut params = ParamSet::new();
        let mut embeddings = None;
        for (name, t) in entries {
            if name == EMBEDDINGS_TENSOR {
                let dim = *t.shape().last().unwrap_or(&0);
                embeddings = Some(EmbeddingTable::from_rows(&vocab, dim, t.into_values())?);
            } else {
                params.insert(name, t)?;
            }
        }
        let embeddings = embeddings.ok_or_else(|| Error::Checkpoint(format!("missing `{EMBEDDINGS_TENSOR}`")))?;
        let config = sidecar.train_config.model.clone();
        let expected = super::init_params(&config, 0)?;
        let want: Vec<&str> = expected.names().collect();
        let have: Vec<&str> = params.names().collect();
        if want != have {
            return Err(Error::Checkpoint(
                "parameter names do not match the stored configuration".into(),
            ));
        }
        for (name, t) in expected.iter() {
            if params.get(name).map(Tensor::shape) != Some(t.shape()) {
                return Err(Error::Checkpoint(format!("parameter `{name}` has the wrong shape")));
            }
        }
        Ok((
            Model {
                config,
                params,
                vocab,
                embeddings,
            },
            sidecar.train_config,
        ))
    }
}
