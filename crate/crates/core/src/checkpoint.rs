//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `DRCKPT\0\x01`, a little-endian `u32` header length,
//! a JSON header (model config, history length, window, optional embedding
//! reference, tensor names and shapes), then every tensor listed in the header
//! as little-endian `f64`s, in header order. Trainable tensors come first in
//! canonical order, followed by batch-norm running statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::Window;
use crate::gru::{ModelConfig, ModelParams};

const MAGIC: &[u8; 8] = b"DRCKPT\0\x01";
const VERSION: u32 = 1;

/// Where the embeddings used for training came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingRef {
    pub path: String,
    pub sha256: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub history_length: usize,
    pub window: Window,
    pub embedding: Option<EmbeddingRef>,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    history_length: usize,
    window: Window,
    embedding: Option<EmbeddingRef>,
    tensors: Vec<TensorSpec>,
}

fn tensor_specs(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let h = cfg.hidden_dim;
    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>| specs.push(TensorSpec { name, shape });
    for l in 0..cfg.num_layers {
        let input = if l == 0 { cfg.input_dim } else { h };
        for w in ["w_r", "w_z", "w_h"] {
            push(format!("layer{l}.{w}"), vec![input, h]);
        }
        for u in ["u_r", "u_z", "u_h"] {
            push(format!("layer{l}.{u}"), vec![h, h]);
        }
        for b in ["b_r", "b_z", "b_h"] {
            push(format!("layer{l}.{b}"), vec![h]);
        }
        if cfg.batchnorm_enabled {
            push(format!("layer{l}.gamma"), vec![h]);
            push(format!("layer{l}.beta"), vec![h]);
        }
    }
    push("head.w".into(), vec![h]);
    push("head.b".into(), vec![1]);
    if cfg.batchnorm_enabled {
        for l in 0..cfg.num_layers {
            push(format!("layer{l}.running_mean"), vec![h]);
            push(format!("layer{l}.running_var"), vec![h]);
        }
    }
    specs
}

impl Checkpoint {
    fn all_slices(&self) -> Vec<&[f64]> {
        let mut slices = self.params.trainable_slices();
        for l in &self.params.layers {
            if let Some(bn) = &l.bn {
                slices.push(bn.running_mean.as_slice().expect("standard layout"));
                slices.push(bn.running_var.as_slice().expect("standard layout"));
            }
        }
        slices
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        self.params.check(&self.model)?;
        let header = Header {
            version: VERSION,
            model: self.model.clone(),
            history_length: self.history_length,
            window: self.window,
            embedding: self.embedding.clone(),
            tensors: tensor_specs(&self.model),
        };
        let header = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for slice in self.all_slices() {
            for v in slice {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read(mut input: impl Read) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        if header.version != VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        header.model.validate()?;
        if header.tensors != tensor_specs(&header.model) {
            return Err(bad("tensor table does not match model config".into()));
        }

        let mut params = ModelParams::zeros(&header.model);
        let mut read_into = |dst: &mut [f64]| -> Result<()> {
            let mut buf = [0u8; 8];
            for v in dst {
                input.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            Ok(())
        };
        for s in params.trainable_slices_mut() {
            read_into(s)?;
        }
        for l in &mut params.layers {
            if let Some(bn) = &mut l.bn {
                read_into(bn.running_mean.as_slice_mut().expect("standard layout"))?;
                read_into(bn.running_var.as_slice_mut().expect("standard layout"))?;
            }
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after tensors".into()));
        }
        Ok(Checkpoint {
            model: header.model,
            history_length: header.history_length,
            window: header.window,
            embedding: header.embedding,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(bn: bool) -> Checkpoint {
        let model = ModelConfig {
            input_dim: 3,
            hidden_dim: 4,
            batchnorm_enabled: bn,
            ..ModelConfig::default()
        };
        let mut params = init_params(&model, &mut ChaCha8Rng::seed_from_u64(1));
        if let Some(bn) = &mut params.layers[1].bn {
            bn.running_mean.fill(0.25);
            bn.running_var.fill(3.5);
        }
        Checkpoint {
            model,
            history_length: 5,
            window: Window::Last,
            embedding: Some(EmbeddingRef {
                path: "emb.txt".into(),
                sha256: "00".into(),
                dim: 3,
            }),
            params,
        }
    }

    #[test]
    fn byte_identical_round_trip() {
        for bn in [false, true] {
            let ckpt = sample(bn);
            let mut first = Vec::new();
            ckpt.write(&mut first).unwrap();
            let back = Checkpoint::read(&first[..]).unwrap();
            assert_eq!(back, ckpt);
            let mut second = Vec::new();
            back.write(&mut second).unwrap();
            assert_eq!(first, second);
        }
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = Vec::new();
        sample(false).write(&mut bytes).unwrap();
        assert!(Checkpoint::read(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(Checkpoint::read(&longer[..]).is_err());
        let mut wrong = bytes.clone();
        wrong[3] = b'x';
        assert!(Checkpoint::read(&wrong[..]).is_err());
    }
}
