//! Three-block Conv3D-ReLU-MaxPool3D classifier with a global-average-pool
//! head emitting one binary logit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::checkpoint::Checkpoint;
use super::{check_params_match, init_params, InitKind, ParamDef};

pub(crate) const ARCH_TAG: &str = "cnn3d";

/// Fixed block geometry: 3x3x3 conv, stride 1, pad 1; 2x2x2 pool, stride 2.
const CONV_K: usize = 3;
const POOL: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cnn3dConfig {
    pub in_channels: usize,
    pub block_channels: [usize; 3],
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Cnn3dConfig {
    /// Stock configuration at a given input resolution.
    pub fn new(height: usize, width: usize) -> Self {
        Cnn3dConfig { in_channels: 3, block_channels: [16, 32, 64], frames: 16, height, width }
    }

    /// Small enough to train on a CPU in minutes.
    pub fn nano(height: usize, width: usize) -> Self {
        Cnn3dConfig { in_channels: 3, block_channels: [4, 8, 16], frames: 16, height, width }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 8 || self.height < 8 || self.width < 8 {
            return Err(Error::Geometry(format!(
                "input extents ({}, {}, {}) must each be >= 8 to survive three halvings",
                self.frames, self.height, self.width
            )));
        }
        if self.in_channels == 0 || self.block_channels.contains(&0) {
            return Err(Error::Contract("channel counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn param_defs(&self) -> Vec<ParamDef> {
        let mut defs = Vec::new();
        let mut c_in = self.in_channels;
        for (i, &c_out) in self.block_channels.iter().enumerate() {
            let fan_in = c_in * CONV_K * CONV_K * CONV_K;
            defs.push(ParamDef::new(
                format!("block{i}.conv.weight"),
                &[c_out, c_in, CONV_K, CONV_K, CONV_K],
                InitKind::KaimingConv { fan_in },
            ));
            defs.push(ParamDef::new(format!("block{i}.conv.bias"), &[c_out], InitKind::Zeros));
            c_in = c_out;
        }
        defs.push(ParamDef::new("head.weight", &[c_in, 1], InitKind::TruncNormal));
        defs.push(ParamDef::new("head.bias", &[1], InitKind::Zeros));
        defs
    }

    /// Closed-form parameter count:
    /// sum over blocks of (c_out*c_in*27 + c_out), plus c3 + 1 for the head.
    pub fn param_count(&self) -> usize {
        let k3 = CONV_K * CONV_K * CONV_K;
        let [c1, c2, c3] = self.block_channels;
        (c1 * self.in_channels * k3 + c1)
            + (c2 * c1 * k3 + c2)
            + (c3 * c2 * k3 + c3)
            + (c3 + 1)
    }
}

pub struct Cnn3d<T: Scalar> {
    pub config: Cnn3dConfig,
    params: Vec<Tensor<T>>,
}

/// Tape handles for one set of bound parameters.
pub struct BoundCnn3d {
    pub ids: Vec<VarId>,
}

impl<T: Scalar> Cnn3d<T> {
    pub fn init(config: Cnn3dConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config.param_defs(), &mut rng);
        Ok(Cnn3d { config, params })
    }

    pub fn from_params(config: Cnn3dConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        check_params_match(&config.param_defs(), &params)?;
        Ok(Cnn3d { config, params })
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Cnn3d<U> {
        Cnn3d {
            config: self.config.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    /// Register parameters on a tape; `trainable` decides whether gradients
    /// will flow to them.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundCnn3d {
        let ids = self
            .params
            .iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.input(p.clone()) })
            .collect();
        BoundCnn3d { ids }
    }

    /// conv3d -> relu -> maxpool3d, three times, then global average pool and
    /// the FC head. Input [B, C, frames, H, W] -> [B, 1].
    pub fn forward(&self, tape: &mut Tape<T>, bound: &BoundCnn3d, x: VarId) -> Result<VarId> {
        let shape = tape.value(x).shape().to_vec();
        let want = [self.config.in_channels, self.config.frames, self.config.height, self.config.width];
        if shape.len() != 5 || shape[1..] != want {
            return Err(Error::Dim(format!(
                "cnn3d input must be [B, {}, {}, {}, {}], got {shape:?}",
                want[0], want[1], want[2], want[3]
            )));
        }
        let mut cur = x;
        for i in 0..3 {
            let w = bound.ids[i * 2];
            let b = bound.ids[i * 2 + 1];
            let conv = tape
                .conv3d(cur, w, b, [1, 1, 1], [1, 1, 1])
                .map_err(|e| Error::Dim(format!("block{i}: {e}")))?;
            let act = tape.relu(conv);
            cur = tape
                .maxpool3d(act, [POOL, POOL, POOL], [POOL, POOL, POOL])
                .map_err(|e| Error::Geometry(format!("block{i}: {e}")))?;
        }
        let pooled = tape.mean_axes(cur, &[2, 3, 4])?; // [B, C3]
        tape.linear(pooled, bound.ids[6], bound.ids[7])
    }

    pub fn to_checkpoint(&self, meta: super::TrainMeta) -> Result<Checkpoint>
    where
        T: Scalar,
    {
        Checkpoint::build(
            ARCH_TAG,
            serde_json::to_value(&self.config).map_err(|e| Error::Internal(e.to_string()))?,
            &self.config.param_defs(),
            &self.params.iter().map(|p| p.cast::<f32>()).collect::<Vec<_>>(),
            meta,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Cnn3d<T>> {
        ckpt.expect_architecture(ARCH_TAG)?;
        let config: Cnn3dConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Incompatible(format!("cnn3d config: {e}")))?;
        let defs = config.param_defs();
        let params_f32 = ckpt.tensors_for(&defs)?;
        let params = params_f32.iter().map(|p| p.cast::<T>()).collect();
        Cnn3d::from_params(config, params)
    }

    /// Resume/compat path: reject before copying weights if the caller's
    /// config differs from the checkpoint's.
    pub fn from_checkpoint_with_config(ckpt: &Checkpoint, expected: &Cnn3dConfig) -> Result<Cnn3d<T>> {
        ckpt.expect_architecture(ARCH_TAG)?;
        let stored: Cnn3dConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Incompatible(format!("cnn3d config: {e}")))?;
        if &stored != expected {
            return Err(Error::Incompatible(format!(
                "checkpoint config {stored:?} != expected {expected:?}"
            )));
        }
        Self::from_checkpoint(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn output_shape_is_batch_by_one() {
        let config = Cnn3dConfig::nano(32, 32);
        let model = Cnn3d::<f32>::init(config, 7).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let x = tape.input(Tensor::from_fn(&[2, 3, 16, 32, 32], |i| ((i % 17) as f32) / 17.0));
        let y = model.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 1]);
        assert!(tape.value(y).is_finite());
    }

    #[test]
    fn zero_weights_emit_head_bias() {
        let config = Cnn3dConfig::nano(16, 16);
        let defs = config.param_defs();
        let mut params: Vec<Tensor<f64>> = defs.iter().map(|d| Tensor::zeros(&d.shape)).collect();
        *params.last_mut().unwrap() = Tensor::scalar(-1.75);
        let model = Cnn3d::from_params(config, params).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let x = tape.input(Tensor::from_fn(&[3, 3, 16, 16, 16], |i| (i % 5) as f64 / 5.0));
        let y = model.forward(&mut tape, &bound, x).unwrap();
        for &v in tape.value(y).data() {
            assert_eq!(v, -1.75);
        }
    }

    #[test]
    fn param_count_matches_defs() {
        for (cfg, _) in [
            (Cnn3dConfig::new(384, 384), 0),
            (Cnn3dConfig::nano(32, 32), 1),
            (
                Cnn3dConfig {
                    in_channels: 1,
                    block_channels: [5, 9, 2],
                    frames: 16,
                    height: 40,
                    width: 24,
                },
                2,
            ),
        ] {
            let total: usize = cfg.param_defs().iter().map(|d| d.numel()).sum();
            assert_eq!(cfg.param_count(), total, "{cfg:?}");
        }
    }

    #[test]
    fn rejects_inputs_too_small_for_three_halvings() {
        let config = Cnn3dConfig::nano(4, 32);
        assert!(matches!(Cnn3d::<f32>::init(config, 0), Err(Error::Geometry(_))));
    }

    #[test]
    fn wrong_input_shape_is_dimension_error() {
        let model = Cnn3d::<f32>::init(Cnn3dConfig::nano(32, 32), 3).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let x = tape.input(Tensor::zeros(&[1, 3, 16, 16, 16]));
        assert!(matches!(model.forward(&mut tape, &bound, x), Err(Error::Dim(_))));
    }
}
