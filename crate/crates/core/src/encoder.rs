//! Plain multi-block CNN producing a feature pyramid at strides
//! `2, 4, ..., 2^L`. Every block is conv3x3-relu-conv3x3-relu followed by
//! 2x2 average pooling; the pooled output of each block is one level.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, ConvParams, Parameterized};
use crate::tensor::{PoolMode, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub levels: usize,
    pub channels: Vec<usize>,
    pub image_side: usize,
    pub input_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            channels: vec![16, 32, 64, 64],
            image_side: 64,
            input_channels: 3,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Config(format!(
                "encoder needs at least 2 levels, got {}",
                self.levels
            )));
        }
        if self.channels.len() != self.levels {
            return Err(Error::Config(format!(
                "{} channel sizes given for {} levels",
                self.channels.len(),
                self.levels
            )));
        }
        if self.channels.contains(&0) || self.input_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        let stride = 1usize << self.levels;
        if self.image_side == 0 || !self.image_side.is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "image side {} is not divisible by 2^{} = {stride}",
                self.image_side, self.levels
            )));
        }
        Ok(())
    }

    /// Spatial side of pyramid level `level`.
    pub fn level_side(&self, level: usize) -> usize {
        self.image_side >> (level + 1)
    }
}

/// One map per level, finest first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn side(&self, level: usize) -> usize {
        self.levels[level].shape()[1]
    }

    pub fn channels(&self, level: usize) -> usize {
        self.levels[level].shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: BackboneConfig,
    pub blocks: Vec<EncoderBlock>,
}

impl EncoderParams {
    pub fn init(config: &BackboneConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(config, &mut rng)
    }

    pub(crate) fn init_with(config: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut c_in = config.input_channels;
        let mut blocks = Vec::with_capacity(config.levels);
        for &c in &config.channels {
            blocks.push(EncoderBlock {
                conv1: ConvParams::init(c, c_in, 3, rng)?,
                conv2: ConvParams::init(c, c, 3, rng)?,
            });
            c_in = c;
        }
        Ok(Self {
            config: config.clone(),
            blocks,
        })
    }

    pub fn forward(&self, image: &Tensor) -> Result<FeaturePyramid> {
        let (c, h, w) = image.chw("encoder")?;
        let side = self.config.image_side;
        if (c, h, w) != (self.config.input_channels, side, side) {
            return Err(Error::ShapeMismatch {
                op: "encoder input",
                lhs: vec![self.config.input_channels, side, side],
                rhs: image.shape().to_vec(),
            });
        }
        let mut x = image.clone();
        let mut levels = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let y = block.conv1.apply(&x)?.relu();
            let y = block.conv2.apply(&y)?.relu();
            x = y.pool2d(2, PoolMode::Avg)?;
            levels.push(x.clone());
        }
        Ok(FeaturePyramid { levels })
    }
}

impl Parameterized for EncoderParams {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("level{i}"));
            b.conv1.visit_params(&join(&p, "conv1"), f);
            b.conv2.visit_params(&join(&p, "conv2"), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("level{i}"));
            b.conv1.visit_params_mut(&join(&p, "conv1"), f);
            b.conv2.visit_params_mut(&join(&p, "conv2"), f);
        }
    }
}
