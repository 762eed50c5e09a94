use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Plain conv/relu/maxpool stack ending in a relu conv stage with `K`
/// channels; the last activations feed a global average pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub final_channels: usize,
    pub input_size: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stage_channels: vec![8, 16, 32],
            blocks_per_stage: 1,
            final_channels: 32,
            input_size: 224,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.final_channels == 0 {
            return Err(Error::Config("final_channels must be >= 1".into()));
        }
        if self.blocks_per_stage == 0 || self.stage_channels.contains(&0) {
            return Err(Error::Config("every stage needs >= 1 block of >= 1 channel".into()));
        }
        self.check_input(self.input_size)
    }

    pub(crate) fn check_input(&self, size: usize) -> Result<()> {
        let factor = 1usize << self.stage_channels.len();
        if size == 0 || !size.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "input size {size} must be a positive multiple of 2^{} = {factor}",
                self.stage_channels.len()
            )));
        }
        Ok(())
    }

    /// Spatial side of the last activations for a square input of `size`.
    pub fn activation_size(&self, size: usize) -> usize {
        size >> self.stage_channels.len()
    }

    /// `(name, shape, is_bias)` for every backbone tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = Vec::new();
        let mut c_in = 1;
        for (s, &c) in self.stage_channels.iter().enumerate() {
            for b in 0..self.blocks_per_stage {
                out.push((format!("stage{s}.block{b}.weight"), vec![c, c_in, 3, 3], false));
                out.push((format!("stage{s}.block{b}.bias"), vec![c], true));
                c_in = c;
            }
        }
        out.push(("final.weight".into(), vec![self.final_channels, c_in, 3, 3], false));
        out.push(("final.bias".into(), vec![self.final_channels], true));
        out
    }
}

/// Everything needed to build a [`super::MultiStreamModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub num_classes: usize,
    /// Heat-map binarisation threshold.
    pub tau: f32,
    /// Side of the left/right infected crops.
    pub infected_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            num_classes: 2,
            tau: 0.75,
            infected_size: 224,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.backbone.check_input(self.infected_size)?;
        if !(1..=2).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "num_classes must be 1 or 2 for a binary task, got {}",
                self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0,1], got {}", self.tau)));
        }
        Ok(())
    }

    pub fn pool_dim(&self) -> usize {
        self.backbone.final_channels
    }

    /// Length of `[pool_g, pool_h, pool_in]` where `pool_in = [pool_l, pool_r, pool_g]`.
    pub fn fusion_dim(&self) -> usize {
        let k = self.pool_dim();
        k + k + (2 * k + k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisibility_rule() {
        let mut c = BackboneConfig {
            input_size: 64,
            ..Default::default()
        };
        assert!(c.validate().is_ok());
        c.input_size = 60;
        assert!(c.validate().is_err());
        c.stage_channels = vec![4, 4];
        assert!(c.validate().is_ok());
        assert_eq!(c.activation_size(60), 15);
    }

    #[test]
    fn fusion_dimension_bookkeeping() {
        let mut m = ModelConfig::default();
        m.backbone.final_channels = 8;
        assert_eq!(m.fusion_dim(), 40);
    }
}
