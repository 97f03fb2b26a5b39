//! Training, evaluation and prediction.
//!
//! Optimization is Adam over mini-batches of episodes. Each episode is
//! encoded once and the decoder is rolled over its phrases (or over `t_max`
//! blank steps for the language-free baseline); per-episode graphs are
//! back-propagated one at a time and their gradients accumulate in the
//! parameters until the batch is complete. The loss of a batch is averaged
//! over its expressions.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::episode_io::{load_episodes, read_phrases, write_json, write_mask};
use crate::error::{Error, Result};
use crate::hungarian::{hungarian_assign, CostMatrix};
use crate::lang::{EmbeddingSource, PhraseEmbedder, PhraseEmbedding, ToyEncoder};
use crate::mask::Mask;
use crate::model::{MaskSequence, ModelConfig, RefRecModel};
use crate::netpbm::{read_ppm, write_pgm};
use crate::nn::Parameterized;
use crate::objective::{baseline_loss, sequence_loss, soft_iou, IouAccumulator, DEFAULT_THRESHOLD};
use crate::synth::{order_referents, Episode, OrderPolicy};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    /// A fresh seeded shuffle every time an episode is drawn.
    Random,
    ByArea,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub order_policy: OrderMode,
    /// `true`: phrases drive the decoder, ordered loss. `false`: blank
    /// phrases, `t_max` steps, Hungarian-matched loss.
    pub language: bool,
    /// Baseline sequence length; defaults to the largest referent count in
    /// the training set plus two.
    pub t_max: Option<usize>,
    pub eval_interval: usize,
    pub model: ModelConfig,
    /// Raw token-vector size of the toy phrase encoder.
    pub token_dim: usize,
    /// Pre-pooled phrase vectors to use instead of the toy encoder.
    pub embedding_file: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-3,
            max_steps: 3000,
            seed: 0,
            order_policy: OrderMode::Random,
            language: true,
            t_max: None,
            eval_interval: 250,
            model: ModelConfig::default(),
            token_dim: 32,
            embedding_file: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be at least 1".into()));
        }
        if self.token_dim == 0 {
            return Err(Error::Config("token_dim must be positive".into()));
        }
        if self.t_max == Some(0) {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        self.model.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn default_pairing(&self) -> Pairing {
        if self.language {
            Pairing::Ordered
        } else {
            Pairing::Hungarian
        }
    }

    fn embedding_source(&self) -> Result<EmbeddingSource> {
        match &self.embedding_file {
            Some(path) => EmbeddingSource::from_file(path),
            None => Ok(EmbeddingSource::Toy(ToyEncoder::new(self.token_dim)?)),
        }
    }
}

/// How predictions are paired with ground truths for metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Prediction `t` with ground truth `t`.
    Ordered,
    /// Minimum-cost matching on `1 − softIoU`.
    Hungarian,
}

impl std::str::FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordered" => Ok(Pairing::Ordered),
            "hungarian" => Ok(Pairing::Hungarian),
            other => Err(Error::Config(format!(
                "pairing must be `ordered` or `hungarian`, got {other:?}"
            ))),
        }
    }
}

/// Adam with bias correction; one moment pair per parameter tensor, in
/// visiting order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients and replaces every
    /// parameter with a fresh leaf (gradients cleared).
    pub fn step(&mut self, params: &mut impl Parameterized) -> Result<()> {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (lr, eps) = (self.learning_rate, self.eps);
        let mut index = 0;
        let mut failure = None;
        let (first, second) = (&mut self.first, &mut self.second);
        params.visit_params_mut("", &mut |_, t| {
            if index == first.len() {
                first.push(vec![0.0; t.numel()]);
                second.push(vec![0.0; t.numel()]);
            }
            let (m, v) = (&mut first[index], &mut second[index]);
            let grad = t.grad();
            let mut data = t.data().to_vec();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            match Tensor::param(t.shape().to_vec(), data) {
                Ok(fresh) => *t = fresh,
                Err(e) => failure = Some(e),
            }
            index += 1;
        });
        failure.map_or(Ok(()), Err)
    }
}

/// A model together with what it needs to turn phrases into masks.
#[derive(Debug, Clone)]
pub struct Segmenter {
    pub model: RefRecModel,
    /// `None` for the language-free baseline.
    pub embedder: Option<PhraseEmbedder>,
    pub t_max: usize,
}

impl Segmenter {
    pub fn language(&self) -> bool {
        self.embedder.is_some()
    }

    pub fn embed(&self, phrases: &[&str]) -> Result<Vec<Tensor>> {
        let embedder = self
            .embedder
            .as_ref()
            .ok_or_else(|| Error::invalid("embed", "model was trained without language"))?;
        phrases
            .iter()
            .map(|p| embedder.embed(p).and_then(|e| e.to_tensor()))
            .collect()
    }

    /// Language model: one mask per phrase, in order. Baseline: the full
    /// `t_max`-step blank rollout, ignoring the phrases.
    pub fn masks(&self, image: &Tensor, phrases: &[&str]) -> Result<MaskSequence> {
        if self.language() {
            let tensors = self.embed(phrases)?;
            self.model
                .forward_sequence(image, &tensors, crate::model::Recurrence::Carried)
        } else {
            self.model.forward_blank(image, self.t_max)
        }
    }

    pub fn embeddings(&self, phrases: &[&str]) -> Result<Vec<PhraseEmbedding>> {
        let embedder = self
            .embedder
            .as_ref()
            .ok_or_else(|| Error::invalid("embed", "model was trained without language"))?;
        phrases.iter().map(|p| embedder.embed(p)).collect()
    }

    /// Adds the pairs of one episode to `acc`.
    pub fn evaluate_episode(
        &self,
        ep: &Episode,
        pairing: Pairing,
        acc: &mut IouAccumulator,
    ) -> Result<()> {
        let preds = self.masks(&ep.image_tensor(), &ep.phrases())?;
        let gts = ep.masks();
        for (p, g) in pair_predictions(preds.masks(), &gts, pairing)? {
            acc.add_pair(p, g, DEFAULT_THRESHOLD)?;
        }
        Ok(())
    }

    pub fn evaluate(&self, episodes: &[Episode], pairing: Pairing) -> Result<IouAccumulator> {
        let mut acc = IouAccumulator::default();
        for ep in episodes {
            self.evaluate_episode(ep, pairing, &mut acc)?;
        }
        Ok(acc)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = &ckpt.manifest.config;
        config.validate()?;
        let mut model = RefRecModel::init(&config.model, 0)?;
        ckpt.restore(&mut model)?;
        let embedder = match (config.language, ckpt.pca()?) {
            (true, Some(pca)) => {
                let source = config.embedding_source()?;
                if source.dim() != pca.input_dim() || pca.output_dim() != config.model.phrase_dim()
                {
                    return Err(Error::Checkpoint(format!(
                        "PCA maps {} -> {}, config expects {} -> {}",
                        pca.input_dim(),
                        pca.output_dim(),
                        source.dim(),
                        config.model.phrase_dim()
                    )));
                }
                Some(PhraseEmbedder { source, pca })
            }
            (true, None) => return Err(Error::Checkpoint("language model without PCA".into())),
            (false, _) => None,
        };
        Ok(Self {
            model,
            embedder,
            t_max: ckpt.manifest.t_max,
        })
    }
}

/// Pairs predictions with ground truths: index-wise, or by optimal
/// matching on `1 − softIoU`.
pub fn pair_predictions<'a>(
    preds: &'a [Tensor],
    gts: &'a [Mask],
    pairing: Pairing,
) -> Result<Vec<(&'a Tensor, &'a Mask)>> {
    if preds.len() < gts.len() {
        return Err(Error::invalid(
            "pairing",
            format!(
                "{} predictions for {} ground truths",
                preds.len(),
                gts.len()
            ),
        ));
    }
    match pairing {
        Pairing::Ordered => Ok(preds.iter().zip(gts).collect()),
        Pairing::Hungarian => {
            let mut costs = Vec::with_capacity(gts.len() * preds.len());
            for g in gts {
                for p in preds {
                    costs.push(1.0 - soft_iou(p, g)?.item()?);
                }
            }
            let a = hungarian_assign(&CostMatrix::new(gts.len(), preds.len(), costs)?)?;
            Ok(a.gt_to_pred
                .iter()
                .zip(gts)
                .map(|(&p, g)| (&preds[p], g))
                .collect())
        }
    }
}

/// Which loss each trained episode went through.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossRoutes {
    pub ordered: usize,
    pub hungarian: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub loss: f64,
    pub expressions: usize,
}

pub struct Trainer {
    config: TrainConfig,
    segmenter: Segmenter,
    optimizer: Adam,
    episodes: Vec<Episode>,
    by_area: Vec<Episode>,
    rng: ChaCha8Rng,
    queue: Vec<usize>,
    steps: usize,
    routes: LossRoutes,
}

impl Trainer {
    /// Checks the config and data, fits the phrase projection on the
    /// training phrases and initializes the model. Fails before any
    /// optimization step on bad input.
    pub fn new(config: TrainConfig, episodes: Vec<Episode>) -> Result<Self> {
        config.validate()?;
        if episodes.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let side = config.model.image_side();
        if let Some(ep) = episodes.iter().find(|e| e.side != side) {
            return Err(Error::Config(format!(
                "episode seed {} has side {}, model expects {side}",
                ep.seed, ep.side
            )));
        }
        if let Some(ep) = episodes.iter().find(|e| e.referents.is_empty()) {
            return Err(Error::Config(format!(
                "episode seed {} has no referents",
                ep.seed
            )));
        }
        let max_refs = episodes
            .iter()
            .map(|e| e.referents.len())
            .max()
            .unwrap_or(0);
        let t_max = config.t_max.unwrap_or(max_refs + 2);
        if !config.language && t_max < max_refs {
            return Err(Error::Config(format!(
                "t_max {t_max} is below the {max_refs} referents of some episode"
            )));
        }
        let embedder = if config.language {
            let source = config.embedding_source()?;
            let phrases = episodes.iter().flat_map(|e| e.phrases());
            Some(PhraseEmbedder::fit(
                source,
                phrases,
                config.model.phrase_dim(),
            )?)
        } else {
            None
        };
        let model = RefRecModel::init(&config.model, config.seed)?;
        let by_area = episodes
            .iter()
            .map(|e| order_referents(e, OrderPolicy::ByArea))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            optimizer: Adam::new(config.learning_rate),
            segmenter: Segmenter {
                model,
                embedder,
                t_max,
            },
            config,
            episodes,
            by_area,
            rng,
            queue: Vec::new(),
            steps: 0,
            routes: LossRoutes::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn segmenter(&self) -> &Segmenter {
        &self.segmenter
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn loss_routes(&self) -> LossRoutes {
        self.routes
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.config,
            self.steps,
            self.segmenter.t_max,
            &self.segmenter.model,
            self.segmenter.embedder.as_ref().map(|e| &e.pca),
        )
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.config.batch_size);
        while batch.len() < self.config.batch_size {
            if self.queue.is_empty() {
                self.queue = (0..self.episodes.len()).collect();
                self.queue.shuffle(&mut self.rng);
                self.queue.reverse();
            }
            batch.push(self.queue.pop().expect("refilled above"));
        }
        batch
    }

    fn ordered_episode(&mut self, index: usize) -> Episode {
        match self.config.order_policy {
            OrderMode::ByArea => self.by_area[index].clone(),
            OrderMode::Random => {
                let seed = self.rng.next_u64();
                order_referents(&self.episodes[index], OrderPolicy::Random { seed })
            }
        }
    }

    /// Loss of one episode scaled by `weight`, back-propagated into the
    /// parameters. Returns the unscaled mean loss.
    fn accumulate_episode(&mut self, ep: &Episode, weight: f64) -> Result<f64> {
        let image = ep.image_tensor();
        let gts = ep.masks();
        let loss = if self.segmenter.language() {
            self.routes.ordered += 1;
            let phrases = self.segmenter.embed(&ep.phrases())?;
            let preds = self.segmenter.model.forward_sequence(
                &image,
                &phrases,
                crate::model::Recurrence::Carried,
            )?;
            sequence_loss(preds.masks(), &gts)?
        } else {
            self.routes.hungarian += 1;
            let preds = self
                .segmenter
                .model
                .forward_blank(&image, self.segmenter.t_max)?;
            baseline_loss(preds.masks(), &gts)?.0
        };
        loss.scale(weight).backward()?;
        loss.item()
    }

    /// One optimizer update over a mini-batch.
    pub fn step(&mut self) -> Result<StepStats> {
        self.segmenter.model.zero_grads();
        let batch: Vec<Episode> = self
            .next_batch()
            .into_iter()
            .map(|i| self.ordered_episode(i))
            .collect();
        let expressions: usize = batch.iter().map(|e| e.referents.len()).sum();
        let mut total = 0.0;
        for ep in &batch {
            let n = ep.referents.len() as f64;
            let weight = n / expressions as f64;
            total += weight * self.accumulate_episode(ep, weight)?;
        }
        self.optimizer.step(&mut self.segmenter.model)?;
        self.steps += 1;
        Ok(StepStats {
            step: self.steps,
            loss: total,
            expressions,
        })
    }

    pub fn evaluate(&self, episodes: &[Episode]) -> Result<IouAccumulator> {
        self.segmenter
            .evaluate(episodes, self.config.default_pairing())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    pub episodes: usize,
    pub expressions: usize,
    pub instance_iou: f64,
    pub overall_iou: f64,
}

impl SplitMetrics {
    pub fn new(split: &str, episodes: usize, acc: &IouAccumulator) -> Self {
        Self {
            split: split.to_string(),
            episodes,
            expressions: acc.pairs,
            instance_iou: acc.instance_iou(),
            overall_iou: acc.overall_iou(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub metrics: Vec<SplitMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub final_loss: f64,
    pub losses: Vec<f64>,
    pub routes: LossRoutes,
    pub evals: Vec<EvalPoint>,
}

/// Named splits under `data_dir`: `train/`, `val/`, `test/` when present,
/// otherwise the directory itself as a single `train` split.
pub fn discover_splits(data_dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !data_dir.is_dir() {
        return Err(Error::format(data_dir, "data directory does not exist"));
    }
    let named: Vec<(String, PathBuf)> = ["train", "val", "test"]
        .iter()
        .map(|s| (s.to_string(), data_dir.join(s)))
        .filter(|(_, p)| p.is_dir())
        .collect();
    if named.is_empty() {
        Ok(vec![("all".to_string(), data_dir.to_path_buf())])
    } else {
        Ok(named)
    }
}

/// Full training run from episode directories; writes periodic and final
/// checkpoints plus `report.json` into `out_dir`.
pub fn train(config: TrainConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainReport> {
    config.validate()?;
    let splits = discover_splits(data_dir)?;
    let mut train_set = None;
    let mut eval_sets = Vec::new();
    for (name, dir) in &splits {
        let episodes = load_episodes(dir)?;
        if name == "train" || name == "all" {
            train_set = Some(episodes.clone());
        }
        if name != "test" {
            eval_sets.push((name.clone(), episodes));
        }
    }
    let train_set = train_set.filter(|e| !e.is_empty()).ok_or_else(|| {
        Error::Config(format!("no training episodes under {}", data_dir.display()))
    })?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut trainer = Trainer::new(config, train_set)?;
    let max_steps = trainer.config().max_steps;
    let interval = trainer.config().eval_interval;
    let mut losses = Vec::with_capacity(max_steps);
    let mut evals = Vec::new();
    for _ in 0..max_steps {
        let stats = trainer.step()?;
        losses.push(stats.loss);
        if stats.step % interval == 0 || stats.step == max_steps {
            let mut metrics = Vec::new();
            for (name, episodes) in &eval_sets {
                let acc = trainer.evaluate(episodes)?;
                metrics.push(SplitMetrics::new(name, episodes.len(), &acc));
            }
            log::info!(
                "step {} loss {:.4} {}",
                stats.step,
                stats.loss,
                metrics
                    .iter()
                    .map(|m| format!(
                        "{} iIoU {:.3} oIoU {:.3}",
                        m.split, m.instance_iou, m.overall_iou
                    ))
                    .collect::<Vec<_>>()
                    .join(" | ")
            );
            trainer
                .checkpoint()
                .save(&out_dir.join(format!("checkpoint-{:06}.bin", stats.step)))?;
            evals.push(EvalPoint {
                step: stats.step,
                metrics,
            });
        }
    }
    trainer.checkpoint().save(&out_dir.join("checkpoint.bin"))?;
    let report = TrainReport {
        steps: trainer.steps(),
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        losses,
        routes: trainer.loss_routes(),
        evals,
    };
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

/// Metrics of a saved model on every split under `data_dir`, streaming one
/// episode at a time.
pub fn evaluate(checkpoint: &Path, data_dir: &Path, pairing: Pairing) -> Result<Vec<SplitMetrics>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let segmenter = Segmenter::from_checkpoint(&ckpt)?;
    let side = segmenter.model.config.image_side();
    let mut out = Vec::new();
    for (name, dir) in discover_splits(data_dir)? {
        let mut acc = IouAccumulator::default();
        let dirs = crate::episode_io::episode_dirs(&dir)?;
        for d in &dirs {
            let ep = crate::episode_io::read_episode(d)?;
            if ep.side != side {
                return Err(Error::Checkpoint(format!(
                    "{}: episode side {} does not match the model's {side}",
                    d.display(),
                    ep.side
                )));
            }
            segmenter.evaluate_episode(&ep, pairing, &mut acc)?;
        }
        out.push(SplitMetrics::new(&name, dirs.len(), &acc));
    }
    Ok(out)
}

/// Writes `mask_<i>.pgm` (0/255 at the 0.5 threshold) and `prob_<i>.pgm`
/// (probability scaled to 0–255) for every phrase, in phrase order.
pub fn predict(
    checkpoint: &Path,
    image_path: &Path,
    phrases_path: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let segmenter = Segmenter::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let side = segmenter.model.config.image_side();
    let raster = read_ppm(image_path)?;
    if (raster.width, raster.height) != (side, side) {
        return Err(Error::format(
            image_path,
            format!(
                "image is {}x{}, model expects {side}x{side}",
                raster.width, raster.height
            ),
        ));
    }
    let phrases = read_phrases(phrases_path)?;
    if phrases.is_empty() {
        return Err(Error::format(phrases_path, "no phrases"));
    }
    let ep = Episode {
        side,
        image: raster.bytes,
        referents: Vec::new(),
        seed: 0,
        policy: None,
    };
    let refs: Vec<&str> = phrases.iter().map(String::as_str).collect();
    let masks = segmenter
        .masks(&ep.image_tensor(), &refs)
        .map_err(|e| match e {
            Error::InvalidArgument { msg, .. } => Error::format(phrases_path, msg),
            other => other,
        })?;
    if masks.len() < phrases.len() {
        return Err(Error::format(
            phrases_path,
            format!(
                "{} phrases but the model emits {} masks",
                phrases.len(),
                masks.len()
            ),
        ));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(2 * phrases.len());
    for (i, prob) in masks.masks().iter().take(phrases.len()).enumerate() {
        let mask_file = out_dir.join(format!("mask_{i}.pgm"));
        write_mask(
            &mask_file,
            &Mask::from_probabilities(prob, DEFAULT_THRESHOLD)?,
        )?;
        let prob_file = out_dir.join(format!("prob_{i}.pgm"));
        let gray: Vec<u8> = prob
            .data()
            .iter()
            .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        write_pgm(&prob_file, side, side, &gray)?;
        written.push(mask_file);
        written.push(prob_file);
    }
    Ok(written)
}
