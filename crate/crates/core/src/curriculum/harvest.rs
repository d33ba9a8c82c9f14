use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::entropy::EntropyStats;

/// Per-iteration training losses observed during a harvesting window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossStats {
    records: Vec<(String, f64)>,
}

impl LossStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<(String, f64)>) -> Self {
        LossStats { records }
    }

    pub fn record(&mut self, id: &str, loss: f64) {
        self.records.push((id.to_string(), loss));
    }

    pub fn records(&self) -> &[(String, f64)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn constant(&self) -> Option<f64> {
        let first = self.records.first()?.1;
        self.records.iter().all(|(_, l)| *l == first).then_some(first)
    }

    pub fn mean(&self) -> f64 {
        if let Some(v) = self.constant() {
            return v;
        }
        self.records.iter().map(|(_, l)| l).sum::<f64>() / self.records.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.constant().is_some() {
            return 0.0;
        }
        let mu = self.mean();
        (self.records.iter().map(|(_, l)| (l - mu).powi(2)).sum::<f64>() / self.records.len() as f64).sqrt()
    }

    /// Mean loss of each sample seen in the window.
    pub fn sample_scores(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (id, l) in &self.records {
            let e = acc.entry(id.clone()).or_default();
            e.0 += l;
            e.1 += 1;
        }
        acc.into_iter().map(|(id, (s, k))| (id, s / k as f64)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HarvestRule {
    Loss,
    Entropy,
    None,
}

impl fmt::Display for HarvestRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HarvestRule::Loss => "loss",
            HarvestRule::Entropy => "entropy",
            HarvestRule::None => "none",
        })
    }
}

impl FromStr for HarvestRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(HarvestRule::Loss),
            "entropy" => Ok(HarvestRule::Entropy),
            "none" => Ok(HarvestRule::None),
            other => Err(Error::Format(format!("unknown harvest rule `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub id: String,
    pub score: f64,
    pub rule: HarvestRule,
}

/// Challenging samples harvested from one stage, highest score first.
#[derive(Clone, Debug, PartialEq)]
pub struct ChallengeArchive {
    pub dataset: String,
    /// 1-based stage that produced the archive.
    pub stage: usize,
    entries: Vec<ArchiveEntry>,
}

impl ChallengeArchive {
    /// Sorts by score descending, then id ascending.
    pub fn new(dataset: &str, stage: usize, mut entries: Vec<ArchiveEntry>) -> Self {
        entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        ChallengeArchive { dataset: dataset.to_string(), stage, entries }
    }

    pub fn empty(dataset: &str, stage: usize) -> Self {
        Self::new(dataset, stage, Vec::new())
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    /// Tab-separated `id score rule stage` records after a `# dataset=` header.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# dataset={}\n", self.dataset);
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.id, e.score, e.rule, self.stage));
        }
        out
    }

    pub fn from_tsv(text: &str, stage_if_empty: usize) -> Result<Self> {
        let mut dataset = None;
        let mut stage = None;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let bad = |what: &str| Error::Format(format!("archive line {}: {what}", lineno + 1));
            if let Some(rest) = line.strip_prefix("# dataset=") {
                dataset = Some(rest.to_string());
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, score, rule, st] = fields[..] else {
                return Err(bad("expected 4 tab-separated fields"));
            };
            let score: f64 = score.parse().map_err(|_| bad("bad score"))?;
            let st: usize = st.parse().map_err(|_| bad("bad stage"))?;
            if *stage.get_or_insert(st) != st {
                return Err(bad("mixed stages in one archive"));
            }
            entries.push(ArchiveEntry { id: id.to_string(), score, rule: rule.parse()? });
        }
        let dataset = dataset.ok_or_else(|| Error::Format("archive has no `# dataset=` header".into()))?;
        Ok(Self::new(&dataset, stage.unwrap_or(stage_if_empty), entries))
    }
}

/// Samples whose mean window loss exceeds `mu + kappa * sigma`, where `mu` and
/// `sigma` are taken over every per-iteration loss in the window.
pub fn harvest_by_loss(stats: &LossStats, kappa: f64, dataset: &str, stage: usize) -> Result<ChallengeArchive> {
    if stats.len() < 2 {
        return Err(Error::Contract(format!(
            "loss harvesting needs at least 2 observations, have {}",
            stats.len()
        )));
    }
    let threshold = stats.mean() + kappa * stats.std();
    let entries = stats
        .sample_scores()
        .into_iter()
        .filter(|(_, s)| *s > threshold)
        .map(|(id, score)| ArchiveEntry { id, score, rule: HarvestRule::Loss })
        .collect();
    Ok(ChallengeArchive::new(dataset, stage, entries))
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    Ok(())
}

/// Number of samples a fraction of `n` selects: `ceil(fraction * n)`.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    // guard against 0.2 * 30 = 6.000000000000001
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

fn top_k(scores: impl IntoIterator<Item = (String, f64)>, k: usize, rule: HarvestRule) -> Vec<ArchiveEntry> {
    let mut all: Vec<ArchiveEntry> = scores.into_iter().map(|(id, score)| ArchiveEntry { id, score, rule }).collect();
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    all.truncate(k);
    all
}

/// The `ceil(fraction * N)` samples with the largest entropy difference.
pub fn harvest_by_entropy(stats: &EntropyStats, fraction: f64, dataset: &str, stage: usize) -> Result<ChallengeArchive> {
    check_fraction(fraction)?;
    let k = fraction_count(fraction, stats.len());
    let entries = top_k(stats.samples.iter().cloned(), k, HarvestRule::Entropy);
    Ok(ChallengeArchive::new(dataset, stage, entries))
}

/// The `ceil(fraction * dataset_size)` samples with the highest mean window loss.
pub fn harvest_top_loss(
    stats: &LossStats,
    fraction: f64,
    dataset_size: usize,
    dataset: &str,
    stage: usize,
) -> Result<ChallengeArchive> {
    check_fraction(fraction)?;
    let k = fraction_count(fraction, dataset_size);
    Ok(ChallengeArchive::new(dataset, stage, top_k(stats.sample_scores(), k, HarvestRule::Loss)))
}

/// How many entries of an archive from `archive_stage` are replayed at `stage`:
/// `floor(len * decay^(stage - archive_stage))`.
pub fn review_quota(len: usize, archive_stage: usize, stage: usize, decay: f64) -> usize {
    if archive_stage >= stage {
        return 0;
    }
    let exp = (stage - archive_stage) as i32;
    ((len as f64 * decay.powi(exp)) + 1e-9).floor().max(0.0) as usize
}

/// One training sample drawn from a named dataset.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RosterEntry {
    pub dataset: String,
    pub id: String,
}

/// The current dataset plus the top of every earlier archive, in a
/// permutation fixed by `(seed, stage)`.
pub fn review_mix(
    dataset: &str,
    ids: &[String],
    archives: &[ChallengeArchive],
    known: &BTreeMap<String, BTreeSet<String>>,
    stage: usize,
    decay: f64,
    seed: u64,
) -> Result<Vec<RosterEntry>> {
    if stage < 1 {
        return Err(Error::Contract("stages are numbered from 1".into()));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::Config(format!("decay must lie in (0, 1], got {decay}")));
    }
    let mut roster: Vec<RosterEntry> = ids
        .iter()
        .map(|id| RosterEntry { dataset: dataset.to_string(), id: id.clone() })
        .collect();
    for a in archives.iter().filter(|a| a.stage < stage) {
        let pool = known
            .get(&a.dataset)
            .ok_or_else(|| Error::Data(format!("archive from stage {} names unknown dataset `{}`", a.stage, a.dataset)))?;
        if let Some(bad) = a.ids().find(|id| !pool.contains(*id)) {
            return Err(Error::Data(format!("archive `{}` references unknown sample `{bad}`", a.dataset)));
        }
        let quota = review_quota(a.len(), a.stage, stage, decay);
        roster.extend(a.ids().take(quota).map(|id| RosterEntry { dataset: a.dataset.clone(), id: id.to_string() }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    roster.shuffle(&mut rng);
    Ok(roster)
}
