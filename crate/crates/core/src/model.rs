use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderConfig, DecoderParams, DecoderState};
use crate::encoder::{BackboneConfig, EncoderParams, FeaturePyramid};
use crate::error::{Error, Result};
use crate::lang::PhraseEmbedding;
use crate::nn::{join, Parameterized};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.decoder.validate(&self.backbone)
    }

    pub fn image_side(&self) -> usize {
        self.backbone.image_side
    }

    pub fn phrase_dim(&self) -> usize {
        self.decoder.phrase_dim
    }
}

/// Whether decoder state is threaded from one phrase to the next. `Reset`
/// starts every phrase from zeros, which makes timesteps independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Recurrence {
    #[default]
    Carried,
    Reset,
}

/// One probability map `[1, S, S]` per phrase.
#[derive(Debug, Clone)]
pub struct MaskSequence(pub Vec<Tensor>);

impl MaskSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn masks(&self) -> &[Tensor] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct RefRecModel {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl RefRecModel {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init_with(&config.backbone, &mut rng)?;
        let decoder = DecoderParams::init_with(&config.decoder, &config.backbone, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            encoder,
            decoder,
        })
    }

    pub fn encode(&self, image: &Tensor) -> Result<FeaturePyramid> {
        self.encoder.forward(image)
    }

    pub fn decoder_step(
        &self,
        pyramid: &FeaturePyramid,
        phrase: &Tensor,
        state: &DecoderState,
    ) -> Result<(Tensor, DecoderState)> {
        self.decoder.step(pyramid, phrase, state)
    }

    /// Encodes the image once and decodes one mask per phrase, threading
    /// decoder state from zeros.
    pub fn forward_sequence(
        &self,
        image: &Tensor,
        phrases: &[Tensor],
        recurrence: Recurrence,
    ) -> Result<MaskSequence> {
        if phrases.is_empty() {
            return Err(Error::invalid(
                "forward_sequence",
                "at least one phrase is required",
            ));
        }
        let pyramid = self.encode(image)?;
        let mut state = self.decoder.initial_state()?;
        let mut masks = Vec::with_capacity(phrases.len());
        for phrase in phrases {
            if recurrence == Recurrence::Reset {
                state = self.decoder.initial_state()?;
            }
            let (mask, next) = self.decoder.step(&pyramid, phrase, &state)?;
            masks.push(mask);
            state = next;
        }
        Ok(MaskSequence(masks))
    }

    /// Convenience wrapper over [`RefRecModel::forward_sequence`] for
    /// embeddings that take no part in differentiation.
    pub fn predict(&self, image: &Tensor, phrases: &[PhraseEmbedding]) -> Result<MaskSequence> {
        let tensors = phrases
            .iter()
            .map(|p| p.to_tensor())
            .collect::<Result<Vec<_>>>()?;
        self.forward_sequence(image, &tensors, Recurrence::Carried)
    }

    /// Language-free rollout: `steps` masks decoded from zero phrase vectors.
    pub fn forward_blank(&self, image: &Tensor, steps: usize) -> Result<MaskSequence> {
        let blank = Tensor::zeros(vec![self.config.phrase_dim()])?;
        self.forward_sequence(image, &vec![blank; steps], Recurrence::Carried)
    }
}

impl Parameterized for RefRecModel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.decoder.visit_params(&join(prefix, "decoder"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.encoder.visit_params_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_params_mut(&join(prefix, "decoder"), f);
    }
}

impl PhraseEmbedding {
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![self.vector.len()], self.vector.clone())
    }
}
