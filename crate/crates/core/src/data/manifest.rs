use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{entropy_difference, DatasetDescriptor, EntropyStats, TaskTag};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::image_io::{load_image, save_image};
use super::synth::{synthesize, texture, DegradationKind};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Relative to the manifest directory.
    pub degraded: PathBuf,
    pub reference: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_difference: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub task: TaskTag,
    #[serde(default)]
    pub train: Vec<SampleRecord>,
    #[serde(default)]
    pub test: Vec<SampleRecord>,
}

impl DatasetEntry {
    pub fn descriptor(&self) -> DatasetDescriptor {
        DatasetDescriptor {
            name: self.name.clone(),
            task: self.task,
            train_ids: self.train.iter().map(|r| r.id.clone()).collect(),
            test_ids: self.test.iter().map(|r| r.id.clone()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

/// A degraded/reference pair held in memory.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub degraded: Tensor,
    pub reference: Tensor,
    pub entropy_difference: f64,
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub name: String,
    pub task: TaskTag,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl LoadedDataset {
    pub fn train_sample(&self, id: &str) -> Option<&Sample> {
        self.train.iter().find(|s| s.id == id)
    }

    /// Entropy differences of the training split.
    pub fn entropy_stats(&self) -> Result<EntropyStats> {
        EntropyStats::new(self.train.iter().map(|s| (s.id.clone(), s.entropy_difference)).collect())
    }
}

impl Manifest {
    pub fn empty(root: &Path) -> Self {
        Manifest { version: MANIFEST_VERSION, datasets: Vec::new(), root: root.to_path_buf() }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("cannot encode manifest: {e}")))
    }

    /// Parses and validates a manifest; paths resolve against `root`.
    pub fn from_toml(text: &str, root: &Path) -> Result<Self> {
        let mut m: Manifest = toml::from_str(text).map_err(|e| Error::Format(format!("bad manifest: {e}")))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Version { found: m.version, expected: MANIFEST_VERSION });
        }
        m.root = root.to_path_buf();
        let mut names = BTreeSet::new();
        for d in &m.datasets {
            if !names.insert(&d.name) {
                return Err(Error::Data(format!("dataset `{}` appears twice", d.name)));
            }
            let mut ids = BTreeSet::new();
            for r in d.train.iter().chain(&d.test) {
                if !ids.insert(&r.id) {
                    return Err(Error::Data(format!("sample id `{}` repeated in dataset `{}`", r.id, d.name)));
                }
            }
        }
        Ok(m)
    }

    /// Reads `path` and checks every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::from_toml(&text, &root)?;
        for d in &m.datasets {
            for r in d.train.iter().chain(&d.test) {
                for p in [&r.degraded, &r.reference] {
                    if !m.root.join(p).is_file() {
                        return Err(Error::Data(format!(
                            "dataset `{}` sample `{}`: missing file {}",
                            d.name,
                            r.id,
                            m.root.join(p).display()
                        )));
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetEntry> {
        self.datasets
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::Data(format!("manifest has no dataset `{name}`")))
    }

    pub fn names(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.name.clone()).collect()
    }

    fn load_record(&self, dataset: &str, r: &SampleRecord) -> Result<Sample> {
        let degraded = load_image(&self.root.join(&r.degraded))?;
        let reference = load_image(&self.root.join(&r.reference))?;
        if degraded.shape() != reference.shape() {
            return Err(Error::Data(format!(
                "dataset `{dataset}` sample `{}`: degraded {} vs reference {}",
                r.id,
                degraded.shape(),
                reference.shape()
            )));
        }
        let entropy_difference = match r.entropy_difference {
            Some(v) => v,
            None => entropy_difference(&reference, &degraded)?,
        };
        Ok(Sample { id: r.id.clone(), degraded, reference, entropy_difference })
    }

    pub fn load_dataset(&self, name: &str) -> Result<LoadedDataset> {
        let d = self.dataset(name)?;
        let load = |records: &[SampleRecord]| records.iter().map(|r| self.load_record(name, r)).collect::<Result<Vec<_>>>();
        Ok(LoadedDataset { name: d.name.clone(), task: d.task, train: load(&d.train)?, test: load(&d.test)? })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    /// 3000/150 split at 1% scale.
    fn default() -> Self {
        SplitCounts { train: 30, test: 3 }
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `count` seeded procedural textures of size `h x w`.
pub fn synthetic_sources(count: usize, seed: u64, h: usize, w: usize) -> Vec<Tensor> {
    (0..count).map(|i| texture(mix(seed, 0x50, i as u64), h, w)).collect()
}

fn quantized(t: &Tensor) -> Tensor {
    t.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Degrades disjoint groups of `sources` into one dataset per kind, writes
/// PNG pairs and `manifest.toml` under `out_dir`, and returns the manifest.
///
/// Fails if the mean entropy differences of the generated datasets are not
/// pairwise distinct.
pub fn build_manifest(
    sources: &[Tensor],
    kinds: &[(DegradationKind, f64)],
    counts: SplitCounts,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    let per_kind = counts.train + counts.test;
    let needed = per_kind * kinds.len();
    if sources.len() < needed {
        return Err(Error::Data(format!("need {needed} source images, have {}", sources.len())));
    }
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut manifest = Manifest::empty(out_dir);
    let mut means: Vec<(String, f64)> = Vec::new();
    for (k, (kind, strength)) in kinds.iter().enumerate() {
        if manifest.datasets.iter().any(|d| d.name == kind.name()) {
            return Err(Error::Config(format!("degradation `{kind}` requested twice")));
        }
        let mut entry = DatasetEntry { name: kind.name().into(), task: kind.task(), train: vec![], test: vec![] };
        for i in 0..per_kind {
            let (split, j) = if i < counts.train { ("train", i) } else { ("test", i - counts.train) };
            let clean = quantized(&sources[order[k * per_kind + i]]);
            let degraded = quantized(&synthesize(*kind, &clean, mix(seed, k as u64 + 1, i as u64), *strength)?);
            let id = format!("{}-{split}-{j:03}", kind.name());
            let dir = PathBuf::from(kind.name()).join(split);
            fs::create_dir_all(out_dir.join(&dir)).map_err(|e| Error::io(out_dir.join(&dir), e))?;
            let record = SampleRecord {
                degraded: dir.join(format!("{id}_lq.png")),
                reference: dir.join(format!("{id}_gt.png")),
                entropy_difference: Some(entropy_difference(&clean, &degraded)?),
                id,
            };
            save_image(&degraded, &out_dir.join(&record.degraded))?;
            save_image(&clean, &out_dir.join(&record.reference))?;
            if split == "train" {
                entry.train.push(record);
            } else {
                entry.test.push(record);
            }
        }
        if !entry.train.is_empty() {
            let vals: Vec<f64> = entry.train.iter().filter_map(|r| r.entropy_difference).collect();
            means.push((entry.name.clone(), vals.iter().sum::<f64>() / vals.len() as f64));
        }
        manifest.datasets.push(entry);
    }
    for (i, (a, ma)) in means.iter().enumerate() {
        if let Some((b, _)) = means[..i].iter().find(|(_, mb)| (ma - mb).abs() < 1e-9) {
            return Err(Error::Data(format!(
                "datasets `{a}` and `{b}` have the same mean entropy difference {ma}; ranking would be ambiguous"
            )));
        }
    }
    manifest.save(&out_dir.join("manifest.toml"))?;
    Ok(manifest)
}
