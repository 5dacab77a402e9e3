//! The two classifier architectures and their checkpoint format.

mod checkpoint;
mod cnn3d;
mod mvit;

pub use checkpoint::{Checkpoint, TensorEntry, TrainMeta, CKPT_MAGIC};
pub use cnn3d::{Cnn3d, Cnn3dConfig};
pub use mvit::{pooled_attention, AttentionParams, Mvit, MvitConfig, MvitStage};

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::router::{ModelFamily, RouteEntry};
use crate::tensor::{Scalar, Tensor};

/// How a parameter tensor is filled at init time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Kaiming-uniform over fan-in (convolution weights).
    KaimingConv { fan_in: usize },
    /// Truncated normal, std 0.02, clipped at two sigma (projections, tables).
    TruncNormal,
    Zeros,
    Ones,
}

/// Declared name, shape, and init rule of one parameter tensor. The
/// declaration order is the canonical parameter order everywhere: init,
/// forward binding, optimizer state, and checkpoint layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDef {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

impl ParamDef {
    pub fn new(name: impl Into<String>, shape: &[usize], init: InitKind) -> Self {
        ParamDef { name: name.into(), shape: shape.to_vec(), init }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Materialize parameters for a def list, drawing from one seeded stream in
/// def order. The same seed yields the same values for f32 and f64 (draws
/// happen in f64 and are cast).
pub fn init_params<T: Scalar>(defs: &[ParamDef], rng: &mut ChaCha8Rng) -> Vec<Tensor<T>> {
    defs.iter()
        .map(|def| match def.init {
            InitKind::Zeros => Tensor::zeros(&def.shape),
            InitKind::Ones => Tensor::full(&def.shape, T::one()),
            InitKind::KaimingConv { fan_in } => {
                let bound = (6.0 / fan_in as f64).sqrt();
                Tensor::from_fn(&def.shape, |_| T::of_f64(rng.gen_range(-bound..bound)))
            }
            InitKind::TruncNormal => Tensor::from_fn(&def.shape, |_| {
                let std = 0.02;
                loop {
                    let z: f64 = rng.sample(StandardNormal);
                    if z.abs() <= 2.0 {
                        return T::of_f64(z * std);
                    }
                }
            }),
        })
        .collect()
}

pub(crate) fn check_params_match<T: Scalar>(defs: &[ParamDef], params: &[Tensor<T>]) -> Result<()> {
    if defs.len() != params.len() {
        return Err(Error::Dim(format!(
            "expected {} parameter tensors, got {}",
            defs.len(),
            params.len()
        )));
    }
    for (def, p) in defs.iter().zip(params) {
        if def.shape != p.shape() {
            return Err(Error::Dim(format!(
                "parameter {} wants shape {:?}, got {:?}",
                def.name,
                def.shape,
                p.shape()
            )));
        }
    }
    Ok(())
}

/// A checkpointed model of either family, ready for scoring.
pub enum LoadedModel {
    Cnn3d(Cnn3d<f32>),
    Mvit(Mvit<f32>),
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::read(path)?;
        match ckpt.architecture.as_str() {
            cnn3d::ARCH_TAG => Ok(LoadedModel::Cnn3d(Cnn3d::from_checkpoint(&ckpt)?)),
            mvit::ARCH_TAG => Ok(LoadedModel::Mvit(Mvit::from_checkpoint(&ckpt)?)),
            other => Err(Error::Incompatible(format!("unknown architecture tag {other:?}"))),
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            LoadedModel::Cnn3d(_) => ModelFamily::Cnn3d,
            LoadedModel::Mvit(_) => ModelFamily::Mvit,
        }
    }

    pub fn input_height(&self) -> usize {
        match self {
            LoadedModel::Cnn3d(m) => m.config.height,
            LoadedModel::Mvit(m) => m.config.height,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            LoadedModel::Cnn3d(m) => m.config.width,
            LoadedModel::Mvit(m) => m.config.width,
        }
    }

    /// Inference forward: [B, C, T, H, W] -> [B, 1] logits.
    pub fn forward_logits(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = crate::autodiff::Tape::new();
        match self {
            LoadedModel::Cnn3d(m) => {
                let bound = m.bind(&mut tape, false);
                let x = tape.input(input.clone());
                let y = m.forward(&mut tape, &bound, x)?;
                Ok(tape.value(y).clone())
            }
            LoadedModel::Mvit(m) => {
                let bound = m.bind(&mut tape, false);
                let x = tape.input(input.clone());
                let y = m.forward(&mut tape, &bound, x)?;
                Ok(tape.value(y).clone())
            }
        }
    }

    /// A checkpoint must match its route's family and geometry.
    pub fn check_route(&self, entry: &RouteEntry) -> Result<()> {
        if self.family() != entry.family {
            return Err(Error::Incompatible(format!(
                "route for \"{}\" wants {}, checkpoint holds {}",
                entry.domain,
                entry.family,
                self.family()
            )));
        }
        if self.input_height() != entry.height || self.input_width() != entry.width {
            return Err(Error::Incompatible(format!(
                "route for \"{}\" wants {}x{}, checkpoint wants {}x{}",
                entry.domain,
                entry.height,
                entry.width,
                self.input_height(),
                self.input_width()
            )));
        }
        Ok(())
    }
}
