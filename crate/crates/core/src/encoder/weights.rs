use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{round_f32, Parameters};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 4,
            model_dim: 64,
            heads: 4,
            ffn_dim: 256,
            max_positions: 128,
            vocab_size: 256,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers", self.layers),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("encoder {name} must be ≥ 1")));
            }
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// One pre-layer-norm transformer block. Matrices are stored `in × out`,
/// row-major, so a projection is `x · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub const LAYER_TENSORS: [&str; 16] = [
    "ln1_gain", "ln1_bias", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln2_gain", "ln2_bias", "w1", "b1", "w2",
    "b2",
];

impl LayerWeights {
    fn zeros(d: usize, f: usize) -> Self {
        LayerWeights {
            ln1_gain: vec![0.0; d],
            ln1_bias: vec![0.0; d],
            wq: vec![0.0; d * d],
            bq: vec![0.0; d],
            wk: vec![0.0; d * d],
            bk: vec![0.0; d],
            wv: vec![0.0; d * d],
            bv: vec![0.0; d],
            wo: vec![0.0; d * d],
            bo: vec![0.0; d],
            ln2_gain: vec![0.0; d],
            ln2_bias: vec![0.0; d],
            w1: vec![0.0; d * f],
            b1: vec![0.0; f],
            w2: vec![0.0; f * d],
            b2: vec![0.0; d],
        }
    }

    fn tensors(&self) -> [&[f64]; 16] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// All trainable tensors of the encoder, including the tied-embedding MLM
/// output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub token_embedding: Vec<f64>,
    pub position_embedding: Vec<f64>,
    pub layers: Vec<LayerWeights>,
    pub final_ln_gain: Vec<f64>,
    pub final_ln_bias: Vec<f64>,
    pub mlm_bias: Vec<f64>,
}

fn xavier(rng: &mut rng::Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| round_f32(rng.gen_range(-limit..limit))).collect()
}

impl EncoderWeights {
    /// Same shapes as `config`, every entry zero. Used as a gradient buffer.
    pub fn zeros(config: EncoderConfig) -> Self {
        let (d, f) = (config.model_dim, config.ffn_dim);
        EncoderWeights {
            config,
            token_embedding: vec![0.0; config.vocab_size * d],
            position_embedding: vec![0.0; config.max_positions * d],
            layers: (0..config.layers).map(|_| LayerWeights::zeros(d, f)).collect(),
            final_ln_gain: vec![0.0; d],
            final_ln_bias: vec![0.0; d],
            mlm_bias: vec![0.0; config.vocab_size],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    /// Xavier-uniform matrices and embeddings, unit gains, zero biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::substream(seed, rng::streams::INIT);
        let (d, f, v, p) = (config.model_dim, config.ffn_dim, config.vocab_size, config.max_positions);
        let mut w = Self::zeros(config);
        w.token_embedding = xavier(&mut rng, v, d, v * d);
        w.position_embedding = xavier(&mut rng, p, d, p * d);
        for layer in &mut w.layers {
            layer.ln1_gain.fill(1.0);
            layer.ln2_gain.fill(1.0);
            layer.wq = xavier(&mut rng, d, d, d * d);
            layer.wk = xavier(&mut rng, d, d, d * d);
            layer.wv = xavier(&mut rng, d, d, d * d);
            layer.wo = xavier(&mut rng, d, d, d * d);
            layer.w1 = xavier(&mut rng, d, f, d * f);
            layer.w2 = xavier(&mut rng, f, d, f * d);
        }
        w.final_ln_gain.fill(1.0);
        Ok(w)
    }

    /// Tensor names in declared (checkpoint) order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["token_embedding".to_owned(), "position_embedding".to_owned()];
        for l in 0..self.layers.len() {
            names.extend(LAYER_TENSORS.iter().map(|t| format!("layer{l}.{t}")));
        }
        names.extend(["final_ln_gain", "final_ln_bias", "mlm_bias"].map(String::from));
        names
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_scaled(&mut self, other: &EncoderWeights, s: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }
}

impl Parameters for EncoderWeights {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.token_embedding, &self.position_embedding];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.extend([&self.final_ln_gain[..], &self.final_ln_bias, &self.mlm_bias]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.token_embedding, &mut self.position_embedding];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.extend([&mut self.final_ln_gain[..], &mut self.final_ln_bias, &mut self.mlm_bias]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_finite_and_nonzero() {
        let cfg = EncoderConfig {
            vocab_size: 30,
            ..Default::default()
        };
        let a = EncoderWeights::init(cfg, 5).unwrap();
        assert_eq!(a, EncoderWeights::init(cfg, 5).unwrap());
        assert_ne!(a, EncoderWeights::init(cfg, 6).unwrap());
        assert!(a.is_finite());
        for row in a.token_embedding.chunks(cfg.model_dim) {
            assert!(row.iter().map(|v| v * v).sum::<f64>() > 0.0);
        }
        assert_eq!(a.tensor_names().len(), a.tensors().len());
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = EncoderConfig {
            heads: 3,
            ..Default::default()
        };
        assert!(EncoderWeights::init(bad, 0).is_err());
        let zero = EncoderConfig {
            layers: 0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
    }
}
