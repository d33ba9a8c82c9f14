//! `SIRK` checkpoint files.
//!
//! Layout, little-endian: the magic `SIRK`, a `u32` format version, a `u32`
//! length and that many bytes of TOML config block, then named tensors until
//! end of file, each as `u32` name length, name bytes, `u32` rank, `u32`
//! dims and `f32` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curriculum::{ChallengeArchive, CurriculumPlan, LossStats};
use crate::error::{Error, Result};
use crate::model::{ParameterSet, SimpleIr};
use crate::numerics::{Shape, Tensor};

use super::optim::OptimizerState;
use super::train::{GridCell, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SIRK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A resumable snapshot of a curriculum run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// The plan in the order actually trained.
    pub plan: CurriculumPlan,
    pub state: TrainState,
    /// One archive per finished stage.
    pub archives: Vec<ChallengeArchive>,
    pub grid: Vec<GridCell>,
}

/// Lowercase hex SHA-256.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct Position {
    stage: usize,
    stage_iteration: usize,
    iteration: u64,
    optimizer_step: u64,
    /// Decimal text, since TOML integers are signed.
    seed: String,
}

#[derive(Serialize, Deserialize)]
struct WindowLoss {
    id: String,
    loss: f64,
}

#[derive(Serialize, Deserialize)]
struct ArchiveBlock {
    dataset: String,
    stage: usize,
    digest: String,
    tsv: String,
}

#[derive(Serialize, Deserialize)]
struct ConfigBlock {
    tensor_digest: String,
    position: Position,
    config: TrainConfig,
    plan: CurriculumPlan,
    #[serde(default)]
    loss_window: Vec<WindowLoss>,
    #[serde(default)]
    archives: Vec<ArchiveBlock>,
    #[serde(default)]
    metrics: Vec<String>,
}

const GROUPS: [&str; 3] = ["param", "adam.m", "adam.v"];

fn push_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn encode_tensors(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let sets = [&ck.state.params, &ck.state.optimizer.m, &ck.state.optimizer.v];
    for (group, set) in GROUPS.iter().zip(sets) {
        for (name, t) in set.iter() {
            let full = format!("{group}/{name}");
            push_u32(&mut out, full.len(), "name length")?;
            out.extend_from_slice(full.as_bytes());
            push_u32(&mut out, 4, "rank")?;
            for d in t.shape().dims() {
                push_u32(&mut out, d, "dimension")?;
            }
            for v in t.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let tensors = encode_tensors(ck)?;
    let s = &ck.state;
    let block = ConfigBlock {
        tensor_digest: digest(&tensors),
        position: Position {
            stage: s.stage,
            stage_iteration: s.stage_iteration,
            iteration: s.iteration,
            optimizer_step: s.optimizer.step,
            seed: s.seed.to_string(),
        },
        config: ck.config,
        plan: ck.plan.clone(),
        loss_window: s.loss_stats.records().iter().map(|(id, loss)| WindowLoss { id: id.clone(), loss: *loss }).collect(),
        archives: ck
            .archives
            .iter()
            .map(|a| {
                let tsv = a.to_tsv();
                ArchiveBlock { dataset: a.dataset.clone(), stage: a.stage, digest: digest(tsv.as_bytes()), tsv }
            })
            .collect(),
        metrics: ck.grid.iter().map(GridCell::to_tsv).collect(),
    };
    let text = toml::to_string(&block).map_err(|e| Error::Format(format!("cannot encode checkpoint config: {e}")))?;
    let mut out = Vec::with_capacity(12 + text.len() + tensors.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    push_u32(&mut out, text.len(), "config length")?;
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&tensors);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn decode_group(found: &mut Vec<(String, Tensor)>, group: &str, net: &SimpleIr) -> Result<ParameterSet> {
    let mut entries = Vec::with_capacity(net.layout().len());
    for spec in net.layout() {
        let key = format!("{group}/{}", spec.name);
        let i = found
            .iter()
            .position(|(n, _)| *n == key)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{key}`")))?;
        let (_, t) = found.swap_remove(i);
        if t.shape() != spec.shape {
            return Err(Error::Format(format!("tensor `{key}` has shape {}, expected {}", t.shape(), spec.shape)));
        }
        entries.push((spec.name.clone(), t));
    }
    ParameterSet::new(entries)
}

/// Parses checkpoint bytes, verifying the version and stored digests.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a SIRK checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let len = r.u32("config length")?;
    let text = std::str::from_utf8(r.take(len, "config block")?)
        .map_err(|_| Error::Format("checkpoint config block is not UTF-8".into()))?;
    let block: ConfigBlock =
        toml::from_str(text).map_err(|e| Error::Format(format!("bad checkpoint config block: {e}")))?;
    let tensor_bytes = &bytes[r.pos..];
    if digest(tensor_bytes) != block.tensor_digest {
        return Err(Error::Format("checkpoint tensor data does not match its digest".into()));
    }

    let mut found = Vec::new();
    while !r.done() {
        let n = r.u32("name length")?;
        let name = String::from_utf8(r.take(n, "name")?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u32("rank")?;
        if rank != 4 {
            return Err(Error::Format(format!("tensor `{name}` has rank {rank}, expected 4")));
        }
        let d = [r.u32("dim")?, r.u32("dim")?, r.u32("dim")?, r.u32("dim")?];
        let shape = Shape::new(d[0], d[1], d[2], d[3]);
        let raw = r.take(shape.numel() * 4, "tensor data")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        found.push((name, Tensor::new(shape, data)?));
    }

    let net = SimpleIr::new(block.config.model)?;
    let params = decode_group(&mut found, GROUPS[0], &net)?;
    let m = decode_group(&mut found, GROUPS[1], &net)?;
    let v = decode_group(&mut found, GROUPS[2], &net)?;
    if let Some((extra, _)) = found.first() {
        return Err(Error::Format(format!("unexpected tensor `{extra}` in checkpoint")));
    }
    let mut archives = Vec::with_capacity(block.archives.len());
    for a in &block.archives {
        if digest(a.tsv.as_bytes()) != a.digest {
            return Err(Error::Format(format!("archive of stage {} does not match its digest", a.stage)));
        }
        let archive = ChallengeArchive::from_tsv(&a.tsv, a.stage)?;
        if archive.dataset != a.dataset || archive.stage != a.stage {
            return Err(Error::Format(format!("archive header disagrees with stage {} record", a.stage)));
        }
        archives.push(archive);
    }
    let p = &block.position;
    let seed = p.seed.parse().map_err(|_| Error::Format(format!("bad seed `{}`", p.seed)))?;
    Ok(Checkpoint {
        config: block.config,
        plan: block.plan,
        state: TrainState {
            params,
            optimizer: OptimizerState { m, v, step: p.optimizer_step },
            iteration: p.iteration,
            stage: p.stage,
            stage_iteration: p.stage_iteration,
            seed,
            loss_stats: LossStats::from_records(block.loss_window.into_iter().map(|w| (w.id, w.loss)).collect()),
        },
        archives,
        grid: block.metrics.iter().map(|l| GridCell::parse_tsv(l)).collect::<Result<_>>()?,
    })
}

/// Writes via a temporary file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
