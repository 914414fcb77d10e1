#![allow(dead_code)]

use std::sync::OnceLock;

use canids_core::artifact::ModelArtifact;
use canids_core::config::RunConfig;
use canids_core::pipeline::{self, TrainOutcome};

pub const SMALL_CONFIG: &str = r#"
profile = "synthetic"
seed = 3
train_fraction = 0.3

[hyper]
epochs = 3

[distill]
teacher_epochs = 20
student_epochs = 20

[explain]
permutations = 40
instances_per_class = 2
background_size = 8

[[data.corpus.segments]]
seed = 1
duration = 4.0
benign = [
    { can_id = 0x0A0, period = 0.01 },
    { can_id = 0x316, period = 0.01 },
    { can_id = 0x43F, period = 0.02 },
    { can_id = 0x5A0, period = 0.1, dlc = 2 },
]
attack = { kind = "DoS", rate = 300.0, start = 1.0, end = 3.0 }
"#;

pub fn small_config() -> RunConfig {
    RunConfig::from_toml(SMALL_CONFIG).unwrap()
}

pub fn small_outcome() -> &'static TrainOutcome {
    static OUT: OnceLock<TrainOutcome> = OnceLock::new();
    OUT.get_or_init(|| pipeline::train(&small_config()).unwrap())
}

pub fn small_artifact() -> &'static ModelArtifact {
    &small_outcome().artifact
}
