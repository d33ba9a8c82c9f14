use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::entropy::EntropyStats;
use super::harvest::HarvestRule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskTag {
    Desnow,
    Deblur,
    Derain,
    Llie,
    Custom,
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskTag::Desnow => "desnow",
            TaskTag::Deblur => "deblur",
            TaskTag::Derain => "derain",
            TaskTag::Llie => "llie",
            TaskTag::Custom => "custom",
        })
    }
}

impl FromStr for TaskTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desnow" => Ok(TaskTag::Desnow),
            "deblur" => Ok(TaskTag::Deblur),
            "derain" => Ok(TaskTag::Derain),
            "llie" => Ok(TaskTag::Llie),
            "custom" => Ok(TaskTag::Custom),
            other => Err(Error::Format(format!("unknown task tag `{other}`"))),
        }
    }
}

/// A named dataset and its split sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetDescriptor {
    pub name: String,
    pub task: TaskTag,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl DatasetDescriptor {
    pub fn train_count(&self) -> usize {
        self.train_ids.len()
    }

    pub fn test_count(&self) -> usize {
        self.test_ids.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarvestConfig {
    pub kappa: f64,
    pub top_fraction: f64,
    pub decay: f64,
    /// Stage-1 harvest share the loss rule is expected to land near.
    pub stage1_fraction_target: f64,
    /// When set, both rules keep the top `ceil(f * N)` samples by their score
    /// instead of the threshold and `top_fraction` rules. Zero disables review.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_fraction: Option<f64>,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        HarvestConfig {
            kappa: 1.0,
            top_fraction: 0.2,
            decay: 0.5,
            stage1_fraction_target: 0.1,
            review_fraction: None,
        }
    }
}

impl HarvestConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.kappa.is_finite() {
            return Err(Error::Config(format!("kappa must be finite, got {}", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.top_fraction) {
            return Err(Error::Config(format!("top_fraction must lie in [0, 1], got {}", self.top_fraction)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if let Some(f) = self.review_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("review fraction must lie in [0, 1], got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedDataset {
    pub name: String,
    pub mean_entropy_difference: f64,
}

pub const PLAN_VERSION: u32 = 1;

/// Training order plus the harvest settings used along it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub version: u32,
    pub harvest: HarvestConfig,
    pub stages: Vec<PlannedDataset>,
}

impl CurriculumPlan {
    pub fn order(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.name.as_str()).collect()
    }

    /// Share of the stage-1 archive replayed at each stage; 0 at stage 1.
    pub fn review_factors(&self) -> Vec<f64> {
        (1..=self.stages.len())
            .map(|s| if s == 1 { 0.0 } else { self.harvest.decay.powi(s as i32 - 1) })
            .collect()
    }

    /// Same datasets in a seeded random order.
    pub fn shuffled(&self, seed: u64) -> CurriculumPlan {
        let mut stages = self.stages.clone();
        stages.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        CurriculumPlan { stages, ..self.clone() }
    }

    pub fn to_toml(&self) -> Result<String> {
        #[derive(Serialize)]
        struct File<'a> {
            #[serde(flatten)]
            plan: &'a CurriculumPlan,
            review_factors: Vec<f64>,
        }
        toml::to_string(&File { plan: self, review_factors: self.review_factors() })
            .map_err(|e| Error::Format(format!("cannot encode plan: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            version: u32,
            harvest: HarvestConfig,
            stages: Vec<PlannedDataset>,
        }
        let f: File = toml::from_str(text).map_err(|e| Error::Format(format!("bad plan file: {e}")))?;
        if f.version != PLAN_VERSION {
            return Err(Error::Version { found: f.version, expected: PLAN_VERSION });
        }
        f.harvest.validate()?;
        if f.stages.is_empty() {
            return Err(Error::Format("plan lists no stages".into()));
        }
        Ok(CurriculumPlan { version: f.version, harvest: f.harvest, stages: f.stages })
    }
}

/// Orders datasets by ascending mean entropy difference, ties by name.
pub fn rank_datasets(entries: &[(String, Option<&EntropyStats>)], harvest: HarvestConfig) -> Result<CurriculumPlan> {
    harvest.validate()?;
    if entries.is_empty() {
        return Err(Error::Contract("nothing to rank".into()));
    }
    let mut stages = Vec::with_capacity(entries.len());
    for (i, (name, stats)) in entries.iter().enumerate() {
        if entries[..i].iter().any(|(n, _)| n == name) {
            return Err(Error::Contract(format!("dataset `{name}` listed twice")));
        }
        let stats = stats.ok_or_else(|| Error::Contract(format!("dataset `{name}` has no entropy statistics")))?;
        stages.push(PlannedDataset { name: name.clone(), mean_entropy_difference: stats.mean });
    }
    stages.sort_by(|a, b| {
        a.mean_entropy_difference
            .total_cmp(&b.mean_entropy_difference)
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(CurriculumPlan { version: PLAN_VERSION, harvest, stages })
}

/// Iteration budgets and learning rates before scaling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub first_iterations: usize,
    pub later_iterations: usize,
    pub harvest_start: usize,
    pub first_lr: f64,
    pub later_lr: f64,
    pub crop_size: usize,
    /// Multiplies every iteration count.
    pub scale: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            first_iterations: 200_000,
            later_iterations: 10_000,
            harvest_start: 100_000,
            first_lr: 2e-4,
            later_lr: 1e-4,
            crop_size: 32,
            scale: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn scaled(&self, iterations: usize) -> usize {
        if iterations == 0 {
            return 0;
        }
        ((iterations as f64 * self.scale).round() as usize).max(1)
    }
}

/// One stage of the curriculum as the trainer runs it.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    /// 1-based position in the plan.
    pub index: usize,
    pub dataset: String,
    pub iterations: usize,
    pub lr: f64,
    pub crop_size: usize,
    pub harvest_rule: HarvestRule,
    pub harvest_start: usize,
    /// Whether earlier archives are mixed into the roster.
    pub review: bool,
}

pub fn plan_stages(plan: &CurriculumPlan, schedule: &ScheduleConfig) -> Result<Vec<StageSpec>> {
    if plan.stages.is_empty() {
        return Err(Error::Contract("empty curriculum plan".into()));
    }
    if !(schedule.scale > 0.0 && schedule.scale.is_finite()) {
        return Err(Error::Config(format!("scale must be positive, got {}", schedule.scale)));
    }
    if schedule.crop_size == 0 {
        return Err(Error::Config("crop size must be positive".into()));
    }
    let single = plan.stages.len() == 1;
    Ok(plan
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let first = i == 0;
            let iterations = schedule.scaled(if first { schedule.first_iterations } else { schedule.later_iterations });
            StageSpec {
                index: i + 1,
                dataset: s.name.clone(),
                iterations,
                lr: if first { schedule.first_lr } else { schedule.later_lr },
                crop_size: schedule.crop_size,
                harvest_rule: match (single, first) {
                    (true, _) => HarvestRule::None,
                    (false, true) => HarvestRule::Loss,
                    (false, false) => HarvestRule::Entropy,
                },
                harvest_start: if first { schedule.scaled(schedule.harvest_start).min(iterations) } else { 0 },
                review: !first,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(v: f64) -> EntropyStats {
        EntropyStats::new(vec![("a".into(), v)]).unwrap()
    }

    #[test]
    fn ranking_examples() {
        let (a, b, c) = (stats(1.5), stats(0.2), stats(0.9));
        let plan = rank_datasets(
            &[("x".into(), Some(&a)), ("y".into(), Some(&b)), ("z".into(), Some(&c))],
            HarvestConfig::default(),
        )
        .unwrap();
        assert_eq!(plan.order(), vec!["y", "z", "x"]);
        let tie = rank_datasets(&[("b".into(), Some(&a)), ("a".into(), Some(&a))], HarvestConfig::default()).unwrap();
        assert_eq!(tie.order(), vec!["a", "b"]);
        assert!(rank_datasets(&[("b".into(), None)], HarvestConfig::default()).is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = stats(0.1);
        let names = ["a", "b", "c", "d"];
        let entries: Vec<_> = names.iter().map(|n| (n.to_string(), Some(&s))).collect();
        let plan = rank_datasets(&entries, HarvestConfig::default()).unwrap();
        let full = plan_stages(&plan, &ScheduleConfig::default()).unwrap();
        assert_eq!(full.iter().map(|s| s.iterations).collect::<Vec<_>>(), vec![200_000, 10_000, 10_000, 10_000]);
        assert_eq!(full[0].harvest_start, 100_000);
        assert_eq!(full[0].harvest_rule, HarvestRule::Loss);
        assert_eq!(full[1].harvest_rule, HarvestRule::Entropy);
        assert_eq!((full[0].lr, full[1].lr), (2e-4, 1e-4));
        let tiny = plan_stages(&plan, &ScheduleConfig { scale: 0.001, ..Default::default() }).unwrap();
        assert_eq!(tiny.iter().map(|s| s.iterations).collect::<Vec<_>>(), vec![200, 10, 10, 10]);

        let one = rank_datasets(&entries[..1], HarvestConfig::default()).unwrap();
        let stages = plan_stages(&one, &ScheduleConfig::default()).unwrap();
        assert_eq!(stages.len(), 1);
        assert!(!stages[0].review);
        assert_eq!(stages[0].harvest_rule, HarvestRule::None);
    }

    #[test]
    fn plan_file_round_trip() {
        let s = stats(0.4);
        let plan = rank_datasets(
            &[("blur".into(), Some(&s)), ("snow".into(), Some(&stats(0.25)))],
            HarvestConfig { review_fraction: Some(0.2), ..Default::default() },
        )
        .unwrap();
        let text = plan.to_toml().unwrap();
        assert!(text.contains("review_factors"));
        assert_eq!(CurriculumPlan::from_toml(&text).unwrap(), plan);
        let bumped = text.replace("version = 1", "version = 9");
        assert!(matches!(CurriculumPlan::from_toml(&bumped), Err(Error::Version { found: 9, .. })));
    }
}
