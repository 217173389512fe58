//! Layout: the 8-byte magic `FECKPT01`, a little-endian `u64` header length,
//! the UTF-8 JSON header, then for every group and every tensor in group
//! order the parameter values followed by the two Adam moment buffers, all
//! as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Trainer;
use crate::error::{Error, Result};
use crate::io::{read_f64s, read_json_header, write_atomic, write_f64s};
use crate::model::{FeModel, FeParams, ModelConfig};
use crate::tensor::{AdamConfig, AdamState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FECKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    /// `u128` does not survive every JSON reader, so it travels as text.
    word_pos: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    rows: usize,
    cols: usize,
    adam_t: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupHeader {
    name: String,
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    config_digest: String,
    iteration: u64,
    seed: u64,
    rng: RngState,
    adam: AdamConfig,
    groups: Vec<GroupHeader>,
}

pub(super) fn save(t: &Trainer, path: &Path) -> Result<()> {
    let groups = t
        .model
        .params
        .groups()
        .iter()
        .zip(&t.states)
        .map(|((g, mlp), states)| GroupHeader {
            name: g.name(),
            tensors: mlp
                .tensors()
                .zip(states)
                .map(|(p, s)| TensorHeader { rows: p.rows(), cols: p.cols(), adam_t: s.t })
                .collect(),
        })
        .collect();
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: t.model.config.clone(),
        config_digest: t.model.config.digest(),
        iteration: t.iteration,
        seed: t.seed,
        rng: RngState {
            seed: hex::encode(t.rng.get_seed()),
            stream: t.rng.get_stream(),
            word_pos: t.rng.get_word_pos().to_string(),
        },
        adam: t.adam,
        groups,
    };
    let json = serde_json::to_vec(&header)?;
    write_atomic(path, |w| {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for ((_, mlp), states) in t.model.params.groups().iter().zip(&t.states) {
            for (p, s) in mlp.tensors().zip(states) {
                write_f64s(w, p.data())?;
                write_f64s(w, &s.m)?;
                write_f64s(w, &s.v)?;
            }
        }
        Ok(())
    })
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

pub(super) fn load(path: &Path) -> Result<Trainer> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return format_err(format!("{} is not a checkpoint", path.display()));
    }
    let header: Header = read_json_header(&mut r)?;
    if header.version != CHECKPOINT_VERSION {
        return format_err(format!("unsupported checkpoint version {}", header.version));
    }
    if header.config.digest() != header.config_digest {
        return format_err("checkpoint config digest does not match its config");
    }

    let mut params = FeParams::init(&header.config, 0)?;
    let mut states = Vec::new();
    let groups = params.groups_mut();
    if groups.len() != header.groups.len() {
        return format_err("checkpoint group count does not match its config");
    }
    for ((g, mlp), gh) in groups.into_iter().zip(&header.groups) {
        if g.name() != gh.name {
            return format_err(format!("expected group {g}, found {}", gh.name));
        }
        let mut group_states = Vec::new();
        let tensors: Vec<_> = mlp.tensors_mut().collect();
        if tensors.len() != gh.tensors.len() {
            return format_err(format!("group {g} tensor count mismatch"));
        }
        for (p, th) in tensors.into_iter().zip(&gh.tensors) {
            if p.shape() != [th.rows, th.cols] {
                return format_err(format!("group {g} tensor shape mismatch"));
            }
            let n = p.len();
            p.data_mut().copy_from_slice(&read_f64s(&mut r, n)?);
            let m = read_f64s(&mut r, n)?;
            let v = read_f64s(&mut r, n)?;
            group_states.push(AdamState { m, v, t: th.adam_t });
        }
        states.push(group_states);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return format_err("trailing bytes after checkpoint payload");
    }

    let seed: [u8; 32] = hex::decode(&header.rng.seed)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Format("bad rng seed".into()))?;
    let word_pos: u128 = header.rng.word_pos.parse().map_err(|_| Error::Format("bad rng word position".into()))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(word_pos);

    Ok(Trainer {
        model: FeModel { config: header.config, params },
        adam: header.adam,
        states,
        seed: header.seed,
        iteration: header.iteration,
        rng,
    })
}
