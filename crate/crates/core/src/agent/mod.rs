//! The training agent: seed collection, replay sampling, model updates and
//! planned data collection.

mod collect;
mod config;
mod dataset;
mod train;

pub use collect::{collect_episode, CollectStats, Policy};
pub use config::{AgentConfig, Collection, PlanningMethod};
pub use dataset::ReplayDataset;
pub use train::{checkpoint_path, evaluate, load_checkpoint, train, train_update, TrainSummary, UpdateStats};
