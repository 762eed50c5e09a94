use serde::{Deserialize, Serialize};

use crate::model::{BranchName, BranchSet};
use crate::{Error, Result};

/// Training stage of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "II-heatmap")]
    IIHeatmap,
    #[serde(rename = "II-infected")]
    IIInfected,
    #[serde(rename = "III")]
    III,
    /// Every group trained together on the sum of all head losses.
    #[serde(rename = "joint")]
    Joint,
}

impl Stage {
    /// The standard order: I, II-heatmap, II-infected, III.
    pub const PROTOCOL: [Stage; 4] = [Stage::I, Stage::IIHeatmap, Stage::IIInfected, Stage::III];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::I => "I",
            Stage::IIHeatmap => "II-heatmap",
            Stage::IIInfected => "II-infected",
            Stage::III => "III",
            Stage::Joint => "joint",
        }
    }

    pub(crate) fn rng_stream(self) -> u64 {
        match self {
            Stage::I => 1,
            Stage::IIHeatmap => 2,
            Stage::IIInfected => 3,
            Stage::III => 4,
            Stage::Joint => 5,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Stage::I, Stage::IIHeatmap, Stage::IIInfected, Stage::III, Stage::Joint]
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown stage `{s}`")))
    }
}

/// What one stage trains, which heads enter its loss, and which head's
/// validation accuracy selects the checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub stage: Stage,
    pub trainable: BranchSet,
    pub heads: BranchSet,
    pub monitor: BranchName,
    pub epochs: usize,
    pub batch_size: usize,
}

impl StagePlan {
    pub fn new(stage: Stage, epochs: usize, batch_size: usize) -> Self {
        use BranchName::*;
        let (trainable, heads, monitor) = match stage {
            Stage::I => (BranchSet::of(&[Global]), BranchSet::of(&[Global]), Global),
            Stage::IIHeatmap => (BranchSet::of(&[Heatmap]), BranchSet::of(&[Heatmap]), Heatmap),
            Stage::IIInfected => (BranchSet::of(&[Infected]), BranchSet::of(&[Infected]), Infected),
            Stage::III => (BranchSet::of(&[Fusion]), BranchSet::of(&[Fusion]), Fusion),
            Stage::Joint => (BranchSet::ALL, BranchSet::ALL, Fusion),
        };
        StagePlan {
            stage,
            trainable,
            heads,
            monitor,
            epochs,
            batch_size,
        }
    }

    /// Groups held fixed during the stage.
    pub fn frozen(&self) -> BranchSet {
        BranchSet::of(
            &BranchName::ALL
                .into_iter()
                .filter(|&b| !self.trainable.contains(b))
                .collect::<Vec<_>>(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.trainable.is_empty() {
            return Err(Error::Config(format!("stage {} trains nothing", self.stage)));
        }
        if self.heads.is_empty() || !self.heads.contains(self.monitor) {
            return Err(Error::Config(format!(
                "stage {} must include its monitored head {} in the loss",
                self.stage, self.monitor
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !self.trainable.is_disjoint(&self.frozen()) {
            return Err(Error::Config("trainable and frozen sets overlap".into()));
        }
        Ok(())
    }
}
