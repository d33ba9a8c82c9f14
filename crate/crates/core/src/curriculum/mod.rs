//! Review Learning schedule: entropy statistics, dataset ranking, hard-sample
//! harvesting and the replay roster of each stage.

mod entropy;
mod harvest;
mod plan;

pub use entropy::{entropy_difference, image_entropy, EntropyStats, Histogram, ENTROPY_MAX_BITS, HISTOGRAM_BINS};
pub use harvest::{
    fraction_count, harvest_by_entropy, harvest_by_loss, harvest_top_loss, review_mix, review_quota, ArchiveEntry,
    ChallengeArchive, HarvestRule, LossStats, RosterEntry,
};
pub use plan::{
    plan_stages, rank_datasets, CurriculumPlan, DatasetDescriptor, HarvestConfig, PlannedDataset, ScheduleConfig,
    StageSpec, TaskTag, PLAN_VERSION,
};
