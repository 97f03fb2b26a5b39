//! Recurrent multi-resolution mask decoder.
//!
//! For every phrase the decoder walks the pyramid coarse-to-fine. At each
//! level the visual features, the phrase vector tiled over the map, and
//! (below the coarsest level) a 1x1 projection of the upsampled hidden
//! state from the level above are stacked along channels and fed to that
//! level's ConvLSTM cell. The finest hidden state is upsampled to image
//! resolution and turned into a probability map. Cell states persist from
//! one phrase to the next within an image.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{BackboneConfig, FeaturePyramid};
use crate::error::{Error, Result};
use crate::nn::{join, ConvParams, Parameterized};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    /// ConvLSTM hidden channels, one per pyramid level (finest first).
    pub hidden: Vec<usize>,
    pub phrase_dim: usize,
    pub kernel: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32, 16, 16],
            phrase_dim: 16,
            kernel: 3,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self, backbone: &BackboneConfig) -> Result<()> {
        if self.hidden.len() != backbone.levels {
            return Err(Error::Config(format!(
                "{} decoder hidden sizes for {} pyramid levels",
                self.hidden.len(),
                backbone.levels
            )));
        }
        if self.hidden.contains(&0) || self.phrase_dim == 0 {
            return Err(Error::Config("decoder sizes must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "ConvLSTM kernel must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

/// Hidden and cell tensors of one ConvLSTM.
#[derive(Debug, Clone)]
pub struct CellState {
    pub h: Tensor,
    pub c: Tensor,
}

impl CellState {
    pub fn zeros(hidden: usize, side: usize) -> Result<Self> {
        Ok(Self {
            h: Tensor::zeros(vec![hidden, side, side])?,
            c: Tensor::zeros(vec![hidden, side, side])?,
        })
    }
}

/// ConvLSTM with all four gate transforms computed by one convolution
/// over `[x, h_prev]`, plus the same convolution over a phrase vector tiled
/// across the map. Output channels are ordered input, forget, output,
/// candidate.
#[derive(Debug, Clone)]
pub struct ConvLstmCell {
    pub gates: ConvParams,
    /// `[4 * hidden, phrase_dim, k, k]`; absent for cells without a phrase
    /// input.
    pub phrase_gates: Option<Tensor>,
    pub hidden: usize,
}

impl ConvLstmCell {
    /// Initialized as one convolution over `[x, phrase, h_prev]`.
    pub fn init(
        input_channels: usize,
        phrase_dim: usize,
        hidden: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let total = input_channels + phrase_dim + hidden;
        let full = ConvParams::init(4 * hidden, total, kernel, rng)?;
        let taps = kernel * kernel;
        let (mut spatial, mut phrase) = (Vec::new(), Vec::new());
        for row in full.weight.data().chunks_exact(total * taps) {
            let (x, rest) = row.split_at(input_channels * taps);
            let (p, h) = rest.split_at(phrase_dim * taps);
            spatial.extend_from_slice(x);
            spatial.extend_from_slice(h);
            phrase.extend_from_slice(p);
        }
        let weight = Tensor::param(
            vec![4 * hidden, input_channels + hidden, kernel, kernel],
            spatial,
        )?;
        let phrase_gates = (phrase_dim > 0)
            .then(|| Tensor::param(vec![4 * hidden, phrase_dim, kernel, kernel], phrase))
            .transpose()?;
        Ok(Self {
            gates: ConvParams {
                weight,
                bias: full.bias,
            },
            phrase_gates,
            hidden,
        })
    }

    pub fn zeros(
        input_channels: usize,
        phrase_dim: usize,
        hidden: usize,
        kernel: usize,
    ) -> Result<Self> {
        let n = 4 * hidden * phrase_dim * kernel * kernel;
        let phrase_gates = (phrase_dim > 0)
            .then(|| Tensor::param(vec![4 * hidden, phrase_dim, kernel, kernel], vec![0.0; n]))
            .transpose()?;
        Ok(Self {
            gates: ConvParams::zeros(4 * hidden, input_channels + hidden, kernel)?,
            phrase_gates,
            hidden,
        })
    }

    pub fn phrase_dim(&self) -> usize {
        self.phrase_gates.as_ref().map_or(0, |w| w.shape()[1])
    }

    pub fn input_channels(&self) -> usize {
        self.gates.in_channels() - self.hidden
    }

    /// `c' = f*c + i*g`, `h' = o*tanh(c')`.
    pub fn step(
        &self,
        x: &Tensor,
        phrase: Option<&Tensor>,
        state: &CellState,
    ) -> Result<CellState> {
        let (cx, hx, wx) = x.chw("convlstm input")?;
        let want = [self.hidden, hx, wx];
        if cx != self.input_channels() {
            return Err(Error::ShapeMismatch {
                op: "convlstm input",
                lhs: vec![self.input_channels(), hx, wx],
                rhs: x.shape().to_vec(),
            });
        }
        for t in [&state.h, &state.c] {
            if t.shape() != want {
                return Err(Error::ShapeMismatch {
                    op: "convlstm state",
                    lhs: want.to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let mut z = self
            .gates
            .apply(&Tensor::concat_channels(&[x.clone(), state.h.clone()])?)?;
        match (&self.phrase_gates, phrase) {
            (Some(w), Some(p)) => {
                z = z.add(&p.conv2d_tiled(w, hx, wx, self.gates.kernel_size() / 2)?)?;
            }
            (None, None) => {}
            (w, _) => {
                return Err(Error::invalid(
                    "convlstm phrase",
                    format!(
                        "cell expects {} phrase channels, phrase {}",
                        self.phrase_dim(),
                        if w.is_some() { "missing" } else { "given" }
                    ),
                ))
            }
        }
        let n = self.hidden;
        let input_gate = z.slice_channels(0, n)?.sigmoid();
        let forget_gate = z.slice_channels(n, n)?.sigmoid();
        let output_gate = z.slice_channels(2 * n, n)?.sigmoid();
        let candidate = z.slice_channels(3 * n, n)?.tanh();
        let c = forget_gate
            .mul(&state.c)?
            .add(&input_gate.mul(&candidate)?)?;
        let h = output_gate.mul(&c.tanh())?;
        Ok(CellState { h, c })
    }
}

/// Per-level recurrent state carried across the phrases of one image.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub levels: Vec<CellState>,
}

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub config: DecoderConfig,
    pub output_side: usize,
    pub level_sides: Vec<usize>,
    pub cells: Vec<ConvLstmCell>,
    /// `projections[l]` maps the hidden state of level `l + 1` into level
    /// `l`; the coarsest level has none.
    pub projections: Vec<Option<ConvParams>>,
    pub head: ConvParams,
}

impl DecoderParams {
    pub(crate) fn init_with(
        config: &DecoderConfig,
        backbone: &BackboneConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate(backbone)?;
        let levels = backbone.levels;
        let mut cells = Vec::with_capacity(levels);
        let mut projections = Vec::with_capacity(levels);
        for l in 0..levels {
            let above = (l + 1 < levels).then(|| config.hidden[l + 1]);
            let merged = above.map_or(0, |_| config.hidden[l]);
            let inputs = backbone.channels[l] + merged;
            cells.push(ConvLstmCell::init(
                inputs,
                config.phrase_dim,
                config.hidden[l],
                config.kernel,
                rng,
            )?);
            projections.push(match above {
                Some(h_above) => Some(ConvParams::init(config.hidden[l], h_above, 1, rng)?),
                None => None,
            });
        }
        let head = ConvParams::init(1, config.hidden[0], 3, rng)?;
        Ok(Self {
            config: config.clone(),
            output_side: backbone.image_side,
            level_sides: (0..levels).map(|l| backbone.level_side(l)).collect(),
            cells,
            projections,
            head,
        })
    }

    pub fn levels(&self) -> usize {
        self.cells.len()
    }

    pub fn initial_state(&self) -> Result<DecoderState> {
        let levels = self
            .cells
            .iter()
            .zip(&self.level_sides)
            .map(|(cell, &side)| CellState::zeros(cell.hidden, side))
            .collect::<Result<_>>()?;
        Ok(DecoderState { levels })
    }

    /// One phrase: returns the `[1, S, S]` probability map and the updated
    /// state. Pure in its arguments.
    pub fn step(
        &self,
        pyramid: &FeaturePyramid,
        phrase: &Tensor,
        state: &DecoderState,
    ) -> Result<(Tensor, DecoderState)> {
        if pyramid.len() != self.levels() || state.levels.len() != self.levels() {
            return Err(Error::invalid(
                "decoder_step",
                format!(
                    "decoder has {} levels, pyramid {}, state {}",
                    self.levels(),
                    pyramid.len(),
                    state.levels.len()
                ),
            ));
        }
        if phrase.shape() != [self.config.phrase_dim] {
            return Err(Error::ShapeMismatch {
                op: "decoder phrase",
                lhs: vec![self.config.phrase_dim],
                rhs: phrase.shape().to_vec(),
            });
        }
        let mut next: Vec<Option<CellState>> = vec![None; self.levels()];
        let mut above: Option<Tensor> = None;
        for l in (0..self.levels()).rev() {
            let feature = &pyramid.levels[l];
            let side = pyramid.side(l);
            let mut parts = vec![feature.clone()];
            if let (Some(h_above), Some(proj)) = (&above, &self.projections[l]) {
                // pointwise conv commutes with nearest upsampling
                let factor = side / h_above.shape()[1];
                parts.push(proj.apply(h_above)?.upsample_nearest(factor)?);
            }
            let x = Tensor::concat_channels(&parts)?;
            let updated = self.cells[l].step(&x, Some(phrase), &state.levels[l])?;
            above = Some(updated.h.clone());
            next[l] = Some(updated);
        }
        let finest = above.expect("at least one level");
        let factor = self.output_side / finest.shape()[1];
        let logits = self.head.apply(&finest.upsample_nearest(factor)?)?;
        let state = DecoderState {
            levels: next
                .into_iter()
                .map(|s| s.expect("every level visited"))
                .collect(),
        };
        Ok((logits.sigmoid(), state))
    }
}

impl Parameterized for DecoderParams {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (l, (cell, proj)) in self.cells.iter().zip(&self.projections).enumerate() {
            let p = join(prefix, &format!("level{l}"));
            cell.gates.visit_params(&join(&p, "gates"), f);
            if let Some(w) = &cell.phrase_gates {
                f(join(&p, "gates.phrase_weight"), w);
            }
            if let Some(proj) = proj {
                proj.visit_params(&join(&p, "merge"), f);
            }
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (l, (cell, proj)) in self.cells.iter_mut().zip(&mut self.projections).enumerate() {
            let p = join(prefix, &format!("level{l}"));
            cell.gates.visit_params_mut(&join(&p, "gates"), f);
            if let Some(w) = &mut cell.phrase_gates {
                f(join(&p, "gates.phrase_weight"), w);
            }
            if let Some(proj) = proj {
                proj.visit_params_mut(&join(&p, "merge"), f);
            }
        }
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cell_stays_at_zero() {
        let cell = ConvLstmCell::zeros(3, 0, 2, 3).unwrap();
        let x = Tensor::new(vec![3, 4, 4], (0..48).map(|i| i as f64 * 0.1).collect()).unwrap();
        let s = cell
            .step(&x, None, &CellState::zeros(2, 4).unwrap())
            .unwrap();
        assert!(s.h.data().iter().all(|&v| v == 0.0));
        assert!(s.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_cell_halves_memory() {
        let cell = ConvLstmCell::zeros(1, 0, 2, 3).unwrap();
        let x = Tensor::zeros(vec![1, 2, 2]).unwrap();
        let c_prev: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let state = CellState {
            h: Tensor::zeros(vec![2, 2, 2]).unwrap(),
            c: Tensor::new(vec![2, 2, 2], c_prev.clone()).unwrap(),
        };
        let s = cell.step(&x, None, &state).unwrap();
        for ((c, h), prev) in s.c.data().iter().zip(s.h.data()).zip(&c_prev) {
            assert_eq!(*c, 0.5 * prev);
            assert!((h - 0.5 * (0.5 * prev).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_rejects_mismatched_state() {
        let cell = ConvLstmCell::zeros(1, 0, 2, 3).unwrap();
        let x = Tensor::zeros(vec![1, 2, 2]).unwrap();
        assert!(cell
            .step(&x, None, &CellState::zeros(3, 2).unwrap())
            .is_err());
        assert!(cell
            .step(&x, None, &CellState::zeros(2, 3).unwrap())
            .is_err());
        let wrong_x = Tensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(cell
            .step(&wrong_x, None, &CellState::zeros(2, 2).unwrap())
            .is_err());
    }

    #[test]
    fn phrase_kernel_acts_as_tiled_input_channels() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (cin, d, hid, k, side) = (2, 3, 2, 3, 4);
        let cell = ConvLstmCell::init(cin, d, hid, k, &mut rng).unwrap();
        let wave = |n: usize, f: f64| (0..n).map(|i| (i as f64 * f).sin()).collect::<Vec<_>>();
        let x = Tensor::new(vec![cin, side, side], wave(cin * side * side, 0.3)).unwrap();
        let p = Tensor::new(vec![d], vec![0.4, -0.9, 1.3]).unwrap();
        let state = CellState {
            h: Tensor::new(vec![hid, side, side], wave(hid * side * side, 0.7)).unwrap(),
            c: Tensor::new(vec![hid, side, side], wave(hid * side * side, 1.1)).unwrap(),
        };
        let fast = cell.step(&x, Some(&p), &state).unwrap();

        // the same cell written as one convolution over [x, tiled phrase, h]
        let taps = k * k;
        let w = cell.gates.weight.data();
        let wp = cell.phrase_gates.as_ref().unwrap().data();
        let mut merged = Vec::new();
        for o in 0..4 * hid {
            let row = &w[o * (cin + hid) * taps..(o + 1) * (cin + hid) * taps];
            merged.extend_from_slice(&row[..cin * taps]);
            merged.extend_from_slice(&wp[o * d * taps..(o + 1) * d * taps]);
            merged.extend_from_slice(&row[cin * taps..]);
        }
        let reference = ConvLstmCell {
            gates: ConvParams {
                weight: Tensor::new(vec![4 * hid, cin + d + hid, k, k], merged).unwrap(),
                bias: cell.gates.bias.clone(),
            },
            phrase_gates: None,
            hidden: hid,
        };
        let tiled =
            Tensor::concat_channels(&[x, p.broadcast_spatial(side, side).unwrap()]).unwrap();
        let slow = reference.step(&tiled, None, &state).unwrap();
        for (a, b) in fast.h.data().iter().zip(slow.h.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in fast.c.data().iter().zip(slow.c.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn phrase_presence_must_match_the_cell() {
        let with = ConvLstmCell::zeros(1, 2, 2, 3).unwrap();
        let without = ConvLstmCell::zeros(1, 0, 2, 3).unwrap();
        let x = Tensor::zeros(vec![1, 2, 2]).unwrap();
        let p = Tensor::zeros(vec![2]).unwrap();
        let s = CellState::zeros(2, 2).unwrap();
        assert!(with.step(&x, None, &s).is_err());
        assert!(without.step(&x, Some(&p), &s).is_err());
        assert!(with.step(&x, Some(&p), &s).is_ok());
        assert!(with
            .step(&x, Some(&Tensor::zeros(vec![3]).unwrap()), &s)
            .is_err());
    }
}
