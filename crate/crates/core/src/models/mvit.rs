//! Desk-scale multiscale vision transformer: strided 3D patchify, stages of
//! pooled-attention blocks over a shrinking token grid (with residual pooling
//! and decomposed relative position bias), mean-pooled tokens, one logit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::error::{Error, Result};
use crate::ops::{conv_out_extent, pooled_grid, RelPosGeom, Triple};
use crate::tensor::{Scalar, Tensor};

use super::checkpoint::Checkpoint;
use super::{check_params_match, init_params, InitKind, ParamDef};

pub(crate) const ARCH_TAG: &str = "mvitv2";

/// Patchify geometry is fixed: kernel (3,7,7), stride (2,4,4), pad (1,3,3).
pub const PATCH_KERNEL: Triple = [3, 7, 7];
pub const PATCH_STRIDE: Triple = [2, 4, 4];
pub const PATCH_PAD: Triple = [1, 3, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvitStage {
    pub depth: usize,
    pub heads: usize,
    /// Channel multiplier applied at the stage's first block.
    pub dim_mult: usize,
    /// Query pooling stride, applied at the stage's first block only.
    pub q_stride: Triple,
    /// Key/value pooling stride, applied at every block of the stage.
    pub kv_stride: Triple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvitConfig {
    pub in_channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub embed_dim: usize,
    pub stages: Vec<MvitStage>,
    pub mlp_ratio: usize,
    pub use_rel_pos: bool,
    pub use_residual_pool: bool,
    pub ln_eps: f64,
}

/// Everything the forward pass needs to know about one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    pub stage: usize,
    pub block: usize,
    pub dim_in: usize,
    pub dim_out: usize,
    pub heads: usize,
    pub q_stride: Triple,
    pub kv_stride: Triple,
    pub grid_in: Triple,
}

impl MvitConfig {
    /// Stock two-stage desk configuration.
    pub fn new(height: usize, width: usize) -> Self {
        MvitConfig {
            in_channels: 3,
            frames: 16,
            height,
            width,
            embed_dim: 32,
            stages: vec![
                MvitStage { depth: 2, heads: 1, dim_mult: 1, q_stride: [1, 1, 1], kv_stride: [1, 2, 2] },
                MvitStage { depth: 2, heads: 2, dim_mult: 2, q_stride: [1, 2, 2], kv_stride: [1, 1, 1] },
            ],
            mlp_ratio: 4,
            use_rel_pos: true,
            use_residual_pool: true,
            ln_eps: 1e-5,
        }
    }

    /// Trains on a CPU in minutes.
    pub fn nano(height: usize, width: usize) -> Self {
        let mut cfg = Self::new(height, width);
        cfg.embed_dim = 16;
        cfg.stages[0].depth = 1;
        cfg.stages[1].depth = 1;
        cfg
    }

    /// Small enough for exhaustive finite-difference checks.
    pub fn tiny(height: usize, width: usize) -> Self {
        let mut cfg = Self::nano(height, width);
        cfg.embed_dim = 8;
        cfg
    }

    /// Token grid after patchify: (ceil(T/2), ceil(H/4), ceil(W/4)).
    pub fn patch_grid(&self) -> Result<Triple> {
        let mut g = [0usize; 3];
        for (a, (extent, slot)) in [self.frames, self.height, self.width].iter().zip(g.iter_mut()).enumerate() {
            *slot = conv_out_extent(*extent, PATCH_KERNEL[a], PATCH_PAD[a], PATCH_STRIDE[a])?;
        }
        Ok(g)
    }

    /// Walk the stage schedule, validating geometry and head divisibility.
    pub fn block_plans(&self) -> Result<Vec<BlockPlan>> {
        if self.stages.is_empty() {
            return Err(Error::Contract("mvit needs at least one stage".into()));
        }
        if self.mlp_ratio == 0 || self.embed_dim == 0 {
            return Err(Error::Contract("embed_dim and mlp_ratio must be >= 1".into()));
        }
        let mut plans = Vec::new();
        let mut grid = self.patch_grid()?;
        let mut dim = self.embed_dim;
        for (s, stage) in self.stages.iter().enumerate() {
            if stage.depth == 0 {
                return Err(Error::Contract(format!("stage {s} has depth 0")));
            }
            let dim_out = dim * stage.dim_mult.max(1);
            if dim_out % stage.heads != 0 {
                return Err(Error::Geometry(format!(
                    "stage {s}: dim {dim_out} not divisible by {} heads",
                    stage.heads
                )));
            }
            for b in 0..stage.depth {
                let q_stride = if b == 0 { stage.q_stride } else { [1, 1, 1] };
                for a in 0..3 {
                    if q_stride[a] == 0 || stage.kv_stride[a] == 0 {
                        return Err(Error::Contract(format!("stage {s}: zero pool stride")));
                    }
                    if grid[a] % q_stride[a] != 0 || grid[a] % stage.kv_stride[a] != 0 {
                        return Err(Error::Geometry(format!(
                            "stage {s} block {b}: grid {grid:?} not divisible by strides q={q_stride:?} kv={:?}",
                            stage.kv_stride
                        )));
                    }
                }
                plans.push(BlockPlan {
                    stage: s,
                    block: b,
                    dim_in: if b == 0 { dim } else { dim_out },
                    dim_out,
                    heads: stage.heads,
                    q_stride,
                    kv_stride: stage.kv_stride,
                    grid_in: grid,
                });
                grid = pooled_grid(grid, q_stride);
            }
            dim = dim_out;
        }
        Ok(plans)
    }

    fn final_dim(&self) -> usize {
        let mut dim = self.embed_dim;
        for stage in &self.stages {
            dim *= stage.dim_mult.max(1);
        }
        dim
    }

    fn rel_geom(plan: &BlockPlan) -> RelPosGeom {
        RelPosGeom {
            q_grid: pooled_grid(plan.grid_in, plan.q_stride),
            k_grid: pooled_grid(plan.grid_in, plan.kv_stride),
            q_step: plan.q_stride,
            k_step: plan.kv_stride,
        }
    }

    pub fn param_defs(&self) -> Result<Vec<ParamDef>> {
        let plans = self.block_plans()?;
        let mut defs = Vec::new();
        let fan_in = self.in_channels * PATCH_KERNEL.iter().product::<usize>();
        defs.push(ParamDef::new(
            "patch.weight",
            &[self.embed_dim, self.in_channels, PATCH_KERNEL[0], PATCH_KERNEL[1], PATCH_KERNEL[2]],
            InitKind::KaimingConv { fan_in },
        ));
        defs.push(ParamDef::new("patch.bias", &[self.embed_dim], InitKind::Zeros));
        for plan in &plans {
            let p = format!("stage{}.block{}", plan.stage, plan.block);
            let (di, dout) = (plan.dim_in, plan.dim_out);
            defs.push(ParamDef::new(format!("{p}.norm1.gamma"), &[di], InitKind::Ones));
            defs.push(ParamDef::new(format!("{p}.norm1.beta"), &[di], InitKind::Zeros));
            for proj in ["q", "k", "v"] {
                defs.push(ParamDef::new(format!("{p}.attn.{proj}.weight"), &[di, dout], InitKind::TruncNormal));
                defs.push(ParamDef::new(format!("{p}.attn.{proj}.bias"), &[dout], InitKind::Zeros));
            }
            if self.use_rel_pos {
                let geom = Self::rel_geom(plan);
                let dh = dout / plan.heads;
                for (axis, tag) in ["t", "h", "w"].iter().enumerate() {
                    defs.push(ParamDef::new(
                        format!("{p}.attn.rel_{tag}"),
                        &[geom.table_len(axis), dh],
                        InitKind::TruncNormal,
                    ));
                }
            }
            defs.push(ParamDef::new(format!("{p}.attn.out.weight"), &[dout, dout], InitKind::TruncNormal));
            defs.push(ParamDef::new(format!("{p}.attn.out.bias"), &[dout], InitKind::Zeros));
            if di != dout {
                defs.push(ParamDef::new(format!("{p}.skip.weight"), &[di, dout], InitKind::TruncNormal));
                defs.push(ParamDef::new(format!("{p}.skip.bias"), &[dout], InitKind::Zeros));
            }
            defs.push(ParamDef::new(format!("{p}.norm2.gamma"), &[dout], InitKind::Ones));
            defs.push(ParamDef::new(format!("{p}.norm2.beta"), &[dout], InitKind::Zeros));
            let hidden = dout * self.mlp_ratio;
            defs.push(ParamDef::new(format!("{p}.mlp.fc1.weight"), &[dout, hidden], InitKind::TruncNormal));
            defs.push(ParamDef::new(format!("{p}.mlp.fc1.bias"), &[hidden], InitKind::Zeros));
            defs.push(ParamDef::new(format!("{p}.mlp.fc2.weight"), &[hidden, dout], InitKind::TruncNormal));
            defs.push(ParamDef::new(format!("{p}.mlp.fc2.bias"), &[dout], InitKind::Zeros));
        }
        let dl = self.final_dim();
        defs.push(ParamDef::new("norm.gamma", &[dl], InitKind::Ones));
        defs.push(ParamDef::new("norm.beta", &[dl], InitKind::Zeros));
        defs.push(ParamDef::new("head.weight", &[dl, 1], InitKind::TruncNormal));
        defs.push(ParamDef::new("head.bias", &[1], InitKind::Zeros));
        Ok(defs)
    }

    /// Closed-form parameter count; kept independent of `param_defs` so the
    /// two can cross-check each other.
    pub fn param_count(&self) -> Result<usize> {
        let plans = self.block_plans()?;
        let k = PATCH_KERNEL.iter().product::<usize>();
        let mut total = self.embed_dim * self.in_channels * k + self.embed_dim;
        for plan in &plans {
            let (di, dout, r) = (plan.dim_in, plan.dim_out, self.mlp_ratio);
            total += 2 * di; // norm1
            total += 3 * (di * dout + dout); // q, k, v
            if self.use_rel_pos {
                let geom = Self::rel_geom(plan);
                let dh = dout / plan.heads;
                total += (geom.table_len(0) + geom.table_len(1) + geom.table_len(2)) * dh;
            }
            total += dout * dout + dout; // out projection
            if di != dout {
                total += di * dout + dout; // skip projection
            }
            total += 2 * dout; // norm2
            total += dout * (r * dout) + r * dout + (r * dout) * dout + dout; // mlp
        }
        let dl = self.final_dim();
        total += 2 * dl + dl + 1;
        Ok(total)
    }
}

// ── Pooled attention ────────────────────────────────────────────────

/// Tape-bound weights for one attention block.
pub struct AttentionParams {
    pub wq: VarId,
    pub bq: VarId,
    pub wk: VarId,
    pub bk: VarId,
    pub wv: VarId,
    pub bv: VarId,
    pub wo: VarId,
    pub bo: VarId,
    pub rel_tables: Option<[VarId; 3]>,
    pub heads: usize,
    pub residual_pool: bool,
}

/// Multi-head attention over a token grid with strided average pooling of
/// queries (stride `q_stride`) and keys/values (stride `kv_stride`).
/// Returns [B, Lq, D_out] and the pooled query grid.
///
/// With unit strides, no relative position tables, and residual pooling off,
/// this reduces to vanilla multi-head self-attention.
pub fn pooled_attention<T: Scalar>(
    tape: &mut Tape<T>,
    x: VarId,
    grid: Triple,
    q_stride: Triple,
    kv_stride: Triple,
    params: &AttentionParams,
) -> Result<(VarId, Triple)> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Dim(format!("pooled_attention wants [B,L,D], got {shape:?}")));
    }
    let (batch, len) = (shape[0], shape[1]);
    if grid.iter().product::<usize>() != len {
        return Err(Error::Geometry(format!(
            "token count {len} does not match grid {grid:?}"
        )));
    }
    let dim_out = tape.value(params.wq).shape()[1];
    let heads = params.heads;
    if heads == 0 || dim_out % heads != 0 {
        return Err(Error::Geometry(format!("dim {dim_out} not divisible by {heads} heads")));
    }
    let dh = dim_out / heads;

    let q = tape.linear(x, params.wq, params.bq)?;
    let k = tape.linear(x, params.wk, params.bk)?;
    let v = tape.linear(x, params.wv, params.bv)?;

    let q = tape.token_pool(q, grid, q_stride)?;
    let k = tape.token_pool(k, grid, kv_stride)?;
    let v = tape.token_pool(v, grid, kv_stride)?;
    let q_grid = pooled_grid(grid, q_stride);
    let k_grid = pooled_grid(grid, kv_stride);
    let (lq, lk) = (q_grid.iter().product::<usize>(), k_grid.iter().product::<usize>());

    // [B, L, D] -> [B*heads, L, dh]
    let split = |tape: &mut Tape<T>, t: VarId, l: usize| -> Result<VarId> {
        let r = tape.reshape(t, &[batch, l, heads, dh])?;
        let p = tape.permute(r, &[0, 2, 1, 3])?;
        tape.reshape(p, &[batch * heads, l, dh])
    };
    let q_bh = split(tape, q, lq)?;
    let k_bh = split(tape, k, lk)?;
    let v_bh = split(tape, v, lk)?;

    let raw = tape.matmul(q_bh, k_bh, true)?;
    let mut scores = tape.scale(raw, T::of_f64(1.0 / (dh as f64).sqrt()));
    if let Some(tables) = params.rel_tables {
        let geom = RelPosGeom { q_grid, k_grid, q_step: q_stride, k_step: kv_stride };
        scores = tape.add_rel_pos(scores, q_bh, tables, geom)?;
    }
    let attn = tape.softmax(scores, 2)?;
    let mut z = tape.matmul(attn, v_bh, false)?;
    if params.residual_pool {
        z = tape.add(z, q_bh)?;
    }

    // [B*heads, Lq, dh] -> [B, Lq, D_out]
    let r = tape.reshape(z, &[batch, heads, lq, dh])?;
    let p = tape.permute(r, &[0, 2, 1, 3])?;
    let merged = tape.reshape(p, &[batch, lq, dim_out])?;
    let out = tape.linear(merged, params.wo, params.bo)?;
    Ok((out, q_grid))
}

// ── Model ───────────────────────────────────────────────────────────

pub struct Mvit<T: Scalar> {
    pub config: MvitConfig,
    params: Vec<Tensor<T>>,
}

pub struct BoundMvit {
    pub ids: Vec<VarId>,
}

struct Cursor<'a> {
    ids: &'a [VarId],
    defs: &'a [ParamDef],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, suffix: &str) -> VarId {
        debug_assert!(
            self.defs[self.pos].name.ends_with(suffix),
            "parameter cursor wants ...{suffix}, def order has {}",
            self.defs[self.pos].name
        );
        let id = self.ids[self.pos];
        self.pos += 1;
        id
    }
}

impl<T: Scalar> Mvit<T> {
    pub fn init(config: MvitConfig, seed: u64) -> Result<Self> {
        let defs = config.param_defs()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&defs, &mut rng);
        Ok(Mvit { config, params })
    }

    pub fn from_params(config: MvitConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        check_params_match(&config.param_defs()?, &params)?;
        Ok(Mvit { config, params })
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Mvit<U> {
        Mvit { config: self.config.clone(), params: self.params.iter().map(|p| p.cast()).collect() }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundMvit {
        let ids = self
            .params
            .iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.input(p.clone()) })
            .collect();
        BoundMvit { ids }
    }

    /// Patchify, run every block, layernorm, mean-pool tokens, FC head.
    /// Input [B, C, frames, H, W] -> [B, 1].
    pub fn forward(&self, tape: &mut Tape<T>, bound: &BoundMvit, x: VarId) -> Result<VarId> {
        let cfg = &self.config;
        let shape = tape.value(x).shape().to_vec();
        let want = [cfg.in_channels, cfg.frames, cfg.height, cfg.width];
        if shape.len() != 5 || shape[1..] != want {
            return Err(Error::Dim(format!(
                "mvit input must be [B, {}, {}, {}, {}], got {shape:?}",
                want[0], want[1], want[2], want[3]
            )));
        }
        let batch = shape[0];
        let plans = cfg.block_plans()?;
        let defs = cfg.param_defs()?;
        let mut cur = Cursor { ids: &bound.ids, defs: &defs, pos: 0 };
        let eps = T::of_f64(cfg.ln_eps);

        let patch_w = cur.next("patch.weight");
        let patch_b = cur.next("patch.bias");
        let feat = tape.conv3d(x, patch_w, patch_b, PATCH_STRIDE, PATCH_PAD)?;
        let grid0 = cfg.patch_grid()?;
        let len0 = grid0.iter().product::<usize>();
        let flat = tape.reshape(feat, &[batch, cfg.embed_dim, len0])?;
        let mut tokens = tape.permute(flat, &[0, 2, 1])?; // [B, L, D]

        let mut grid = grid0;
        for plan in &plans {
            let g1 = cur.next("norm1.gamma");
            let b1 = cur.next("norm1.beta");
            let normed = tape.layernorm(tokens, g1, b1, eps).map_err(|e| {
                Error::Geometry(format!("stage {} block {}: {e}", plan.stage, plan.block))
            })?;

            let (wq, bq) = (cur.next("q.weight"), cur.next("q.bias"));
            let (wk, bk) = (cur.next("k.weight"), cur.next("k.bias"));
            let (wv, bv) = (cur.next("v.weight"), cur.next("v.bias"));
            let rel_tables = if cfg.use_rel_pos {
                Some([cur.next("rel_t"), cur.next("rel_h"), cur.next("rel_w")])
            } else {
                None
            };
            let (wo, bo) = (cur.next("out.weight"), cur.next("out.bias"));
            let attn_params = AttentionParams {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                rel_tables,
                heads: plan.heads,
                residual_pool: cfg.use_residual_pool,
            };
            let (attn_out, new_grid) =
                pooled_attention(tape, normed, grid, plan.q_stride, plan.kv_stride, &attn_params)
                    .map_err(|e| {
                        Error::Geometry(format!("stage {} block {}: {e}", plan.stage, plan.block))
                    })?;

            // Skip path: project the normed input if the dim changes, then
            // pool with the query stride so shapes line up.
            let skip = if plan.dim_in != plan.dim_out {
                let sw = cur.next("skip.weight");
                let sb = cur.next("skip.bias");
                tape.linear(normed, sw, sb)?
            } else {
                tokens
            };
            let skip = tape.token_pool(skip, grid, plan.q_stride)?;
            tokens = tape.add(skip, attn_out)?;
            grid = new_grid;

            let g2 = cur.next("norm2.gamma");
            let b2 = cur.next("norm2.beta");
            let normed2 = tape.layernorm(tokens, g2, b2, eps)?;
            let w1 = cur.next("fc1.weight");
            let bb1 = cur.next("fc1.bias");
            let w2 = cur.next("fc2.weight");
            let bb2 = cur.next("fc2.bias");
            let h = tape.linear(normed2, w1, bb1)?;
            let h = tape.gelu(h);
            let mlp = tape.linear(h, w2, bb2)?;
            tokens = tape.add(tokens, mlp)?;
        }

        let gf = cur.next("norm.gamma");
        let bf = cur.next("norm.beta");
        let normed = tape.layernorm(tokens, gf, bf, eps)?;
        let pooled = tape.mean_axes(normed, &[1])?; // [B, D]
        let hw = cur.next("head.weight");
        let hb = cur.next("head.bias");
        tape.linear(pooled, hw, hb)
    }

    pub fn to_checkpoint(&self, meta: super::TrainMeta) -> Result<Checkpoint> {
        Checkpoint::build(
            ARCH_TAG,
            serde_json::to_value(&self.config).map_err(|e| Error::Internal(e.to_string()))?,
            &self.config.param_defs()?,
            &self.params.iter().map(|p| p.cast::<f32>()).collect::<Vec<_>>(),
            meta,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Mvit<T>> {
        ckpt.expect_architecture(ARCH_TAG)?;
        let config: MvitConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Incompatible(format!("mvit config: {e}")))?;
        let defs = config.param_defs()?;
        let params_f32 = ckpt.tensors_for(&defs)?;
        let params = params_f32.iter().map(|p| p.cast::<T>()).collect();
        Mvit::from_params(config, params)
    }

    pub fn from_checkpoint_with_config(ckpt: &Checkpoint, expected: &MvitConfig) -> Result<Mvit<T>> {
        ckpt.expect_architecture(ARCH_TAG)?;
        let stored: MvitConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Incompatible(format!("mvit config: {e}")))?;
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
    fn patch_grid_uses_ceiling_arithmetic() {
        let cfg = MvitConfig::new(64, 64);
        assert_eq!(cfg.patch_grid().unwrap(), [8, 16, 16]);
        let cfg = MvitConfig::new(224, 224);
        assert_eq!(cfg.patch_grid().unwrap(), [8, 56, 56]);
    }

    #[test]
    fn output_shape_is_batch_by_one() {
        let cfg = MvitConfig::nano(32, 32);
        let model = Mvit::<f32>::init(cfg, 11).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let x = tape.input(Tensor::from_fn(&[2, 3, 16, 32, 32], |i| ((i % 13) as f32) / 13.0));
        let y = model.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 1]);
        assert!(tape.value(y).is_finite());
    }

    #[test]
    fn desk_config_on_64_produces_2048_tokens() {
        let cfg = MvitConfig::new(64, 64);
        let plans = cfg.block_plans().unwrap();
        assert_eq!(plans[0].grid_in, [8, 16, 16]);
        assert_eq!(plans[0].grid_in.iter().product::<usize>(), 2048);
        // stage 2 entry pools queries spatially
        let entry = plans.iter().find(|p| p.stage == 1 && p.block == 0).unwrap();
        assert_eq!(pooled_grid(entry.grid_in, entry.q_stride), [8, 8, 8]);
        assert_eq!(entry.dim_out, 64);
    }

    #[test]
    fn zero_head_weights_emit_bias() {
        let cfg = MvitConfig::tiny(16, 16);
        let mut model = Mvit::<f64>::init(cfg.clone(), 5).unwrap();
        let n = model.params().len();
        model.params_mut()[n - 2] = Tensor::zeros(&[cfg.param_defs().unwrap()[n - 2].shape[0], 1]);
        model.params_mut()[n - 1] = Tensor::scalar(0.625);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let x = tape.input(Tensor::from_fn(&[2, 3, 16, 16, 16], |i| (i % 7) as f64 / 7.0));
        let y = model.forward(&mut tape, &bound, x).unwrap();
        for &v in tape.value(y).data() {
            assert_eq!(v, 0.625);
        }
    }

    #[test]
    fn param_count_matches_defs() {
        for cfg in [
            MvitConfig::new(64, 64),
            MvitConfig::nano(32, 32),
            MvitConfig::tiny(16, 16),
            MvitConfig::new(224, 224),
        ] {
            let total: usize = cfg.param_defs().unwrap().iter().map(|d| d.numel()).sum();
            assert_eq!(cfg.param_count().unwrap(), total);
        }
    }

    #[test]
    fn indivisible_grid_is_geometry_error() {
        let mut cfg = MvitConfig::nano(32, 32);
        cfg.stages[0].kv_stride = [3, 1, 1]; // grid t extent is 8
        assert!(matches!(cfg.block_plans(), Err(Error::Geometry(_))));
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut cfg = MvitConfig::nano(32, 32);
        cfg.stages[0].heads = 3;
        assert!(matches!(cfg.block_plans(), Err(Error::Geometry(_))));
    }
}
