//! Decomposed relative position bias for pooled attention.
//!
//! The bias added to attention scores factors per axis:
//! E(i,j) = q_i . (Rt[dt] + Rh[dh] + Rw[dw]), where dt/dh/dw are the offsets
//! between query token i and key token j measured on the block's input token
//! grid (pooled coordinates scaled back by their pooling strides).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::conv::Triple;
use super::{axpy, dot};

/// Query/key grid geometry for one attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelPosGeom {
    pub q_grid: Triple,
    pub k_grid: Triple,
    /// Pooling stride that produced the query grid, in input-token units.
    pub q_step: Triple,
    /// Pooling stride that produced the key grid.
    pub k_step: Triple,
}

impl RelPosGeom {
    /// Number of distinct offsets along `axis`, i.e. the embedding table rows.
    pub fn table_len(&self, axis: usize) -> usize {
        (self.q_grid[axis] - 1) * self.q_step[axis]
            + (self.k_grid[axis] - 1) * self.k_step[axis]
            + 1
    }

    /// Table row for query coordinate `qi` and key coordinate `kj`.
    #[inline]
    fn row(&self, axis: usize, qi: usize, kj: usize) -> usize {
        qi * self.q_step[axis] + (self.k_grid[axis] - 1 - kj) * self.k_step[axis]
    }

    fn q_len(&self) -> usize {
        self.q_grid.iter().product()
    }

    fn k_len(&self) -> usize {
        self.k_grid.iter().product()
    }
}

fn check_tables<T: Scalar>(geom: &RelPosGeom, tables: [&Tensor<T>; 3], head_dim: usize) -> Result<()> {
    for (axis, t) in tables.iter().enumerate() {
        let want = [geom.table_len(axis), head_dim];
        if t.shape() != want {
            return Err(Error::Dim(format!(
                "rel-pos table for axis {axis} must be {want:?}, got {:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// scores'[bh,i,j] = scores[bh,i,j] + sum_axis q[bh,i,:] . table_axis[row(i,j)]
pub fn add_rel_pos<T: Scalar>(
    scores: &Tensor<T>,
    q: &Tensor<T>,
    tables: [&Tensor<T>; 3],
    geom: &RelPosGeom,
) -> Result<Tensor<T>> {
    let ss = scores.shape();
    let qs = q.shape();
    if ss.len() != 3 || qs.len() != 3 {
        return Err(Error::Dim("add_rel_pos wants [BH,Lq,Lk] scores and [BH,Lq,dh] queries".into()));
    }
    let (bh, lq, lk) = (ss[0], ss[1], ss[2]);
    let dh = qs[2];
    if qs[0] != bh || qs[1] != lq || geom.q_len() != lq || geom.k_len() != lk {
        return Err(Error::Geometry(format!(
            "rel-pos geometry {geom:?} does not match scores {ss:?} / queries {qs:?}"
        )));
    }
    check_tables(geom, tables, dh)?;

    let [_qg_t, qg_h, qg_w] = geom.q_grid;
    let [kg_t, kg_h, kg_w] = geom.k_grid;
    let sd = scores.data();
    let qd = q.data();
    let mut out = vec![T::zero(); scores.numel()];

    out.par_chunks_mut(lk).enumerate().for_each(|(row, dst)| {
        let b = row / lq;
        let i = row % lq;
        let (ti, rem) = (i / (qg_h * qg_w), i % (qg_h * qg_w));
        let (hi, wi) = (rem / qg_w, rem % qg_w);
        let q_row = &qd[(b * lq + i) * dh..(b * lq + i + 1) * dh];

        // Per-axis q.R products, indexed by the key's axis coordinate.
        let qr_t: Vec<T> = (0..kg_t)
            .map(|kt| {
                let r = geom.row(0, ti, kt);
                dot(q_row, &tables[0].data()[r * dh..(r + 1) * dh])
            })
            .collect();
        let qr_h: Vec<T> = (0..kg_h)
            .map(|kh| {
                let r = geom.row(1, hi, kh);
                dot(q_row, &tables[1].data()[r * dh..(r + 1) * dh])
            })
            .collect();
        let qr_w: Vec<T> = (0..kg_w)
            .map(|kw| {
                let r = geom.row(2, wi, kw);
                dot(q_row, &tables[2].data()[r * dh..(r + 1) * dh])
            })
            .collect();

        let src = &sd[row * lk..(row + 1) * lk];
        let mut j = 0usize;
        for kt in 0..kg_t {
            for kh in 0..kg_h {
                for kw in 0..kg_w {
                    dst[j] = src[j] + qr_t[kt] + qr_h[kh] + qr_w[kw];
                    j += 1;
                }
            }
        }
    });

    Ok(Tensor::new(ss, out))
}

/// Gradients of `add_rel_pos` wrt queries and the three tables. The gradient
/// wrt `scores` is `d_out` itself (identity), so it is not returned.
pub fn add_rel_pos_backward<T: Scalar>(
    q: &Tensor<T>,
    tables: [&Tensor<T>; 3],
    geom: &RelPosGeom,
    d_out: &Tensor<T>,
) -> (Tensor<T>, [Tensor<T>; 3]) {
    let qs = q.shape();
    let (bh, lq, dh) = (qs[0], qs[1], qs[2]);
    let lk = geom.k_len();
    let [_qg_t, qg_h, qg_w] = geom.q_grid;
    let [kg_t, kg_h, kg_w] = geom.k_grid;
    let qd = q.data();
    let gd = d_out.data();

    let mut dq = vec![T::zero(); q.numel()];
    let mut dt = vec![T::zero(); tables[0].numel()];
    let mut dhh = vec![T::zero(); tables[1].numel()];
    let mut dw = vec![T::zero(); tables[2].numel()];

    // Table scatter shares rows across (bh, i); keep this loop serial.
    for b in 0..bh {
        for i in 0..lq {
            let (ti, rem) = (i / (qg_h * qg_w), i % (qg_h * qg_w));
            let (hi, wi) = (rem / qg_w, rem % qg_w);
            let g_row = &gd[(b * lq + i) * lk..(b * lq + i + 1) * lk];

            let mut g_t = vec![T::zero(); kg_t];
            let mut g_h = vec![T::zero(); kg_h];
            let mut g_w = vec![T::zero(); kg_w];
            let mut j = 0usize;
            for kt in 0..kg_t {
                for kh in 0..kg_h {
                    for kw in 0..kg_w {
                        let g = g_row[j];
                        g_t[kt] += g;
                        g_h[kh] += g;
                        g_w[kw] += g;
                        j += 1;
                    }
                }
            }

            let q_row = &qd[(b * lq + i) * dh..(b * lq + i + 1) * dh];
            let dq_row = &mut dq[(b * lq + i) * dh..(b * lq + i + 1) * dh];
            for (kt, &g) in g_t.iter().enumerate() {
                let r = geom.row(0, ti, kt);
                axpy(dq_row, g, &tables[0].data()[r * dh..(r + 1) * dh]);
                axpy(&mut dt[r * dh..(r + 1) * dh], g, q_row);
            }
            for (kh, &g) in g_h.iter().enumerate() {
                let r = geom.row(1, hi, kh);
                axpy(dq_row, g, &tables[1].data()[r * dh..(r + 1) * dh]);
                axpy(&mut dhh[r * dh..(r + 1) * dh], g, q_row);
            }
            for (kw, &g) in g_w.iter().enumerate() {
                let r = geom.row(2, wi, kw);
                axpy(dq_row, g, &tables[2].data()[r * dh..(r + 1) * dh]);
                axpy(&mut dw[r * dh..(r + 1) * dh], g, q_row);
            }
        }
    }

    (
        Tensor::new(qs, dq),
        [
            Tensor::new(tables[0].shape(), dt),
            Tensor::new(tables[1].shape(), dhh),
            Tensor::new(tables[2].shape(), dw),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_len_covers_offset_range() {
        // unpooled 4-token axis attending to a 2-token axis pooled by 2
        let geom = RelPosGeom {
            q_grid: [4, 1, 1],
            k_grid: [2, 1, 1],
            q_step: [1, 1, 1],
            k_step: [2, 1, 1],
        };
        // delta in [0*1 - 1*2, 3*1 - 0*2] = [-2, 3] -> 6 rows
        assert_eq!(geom.table_len(0), 6);
        assert_eq!(geom.row(0, 0, 1), 0);
        assert_eq!(geom.row(0, 3, 0), 5);
    }

    #[test]
    fn zero_tables_are_identity() {
        let geom = RelPosGeom {
            q_grid: [2, 2, 1],
            k_grid: [2, 2, 1],
            q_step: [1, 1, 1],
            k_step: [1, 1, 1],
        };
        let dh = 3;
        let scores = Tensor::from_fn(&[1, 4, 4], |i| i as f64 * 0.1);
        let q = Tensor::from_fn(&[1, 4, dh], |i| i as f64);
        let zt = Tensor::zeros(&[geom.table_len(0), dh]);
        let zh = Tensor::zeros(&[geom.table_len(1), dh]);
        let zw = Tensor::zeros(&[geom.table_len(2), dh]);
        let out = add_rel_pos(&scores, &q, [&zt, &zh, &zw], &geom).unwrap();
        assert_eq!(out, scores);
    }

    #[test]
    fn bias_matches_per_pair_dot() {
        let geom = RelPosGeom {
            q_grid: [2, 1, 3],
            k_grid: [2, 1, 3],
            q_step: [1, 1, 1],
            k_step: [1, 1, 1],
        };
        let dh = 2;
        let lq = 6;
        let scores = Tensor::zeros(&[1, lq, lq]);
        let q = Tensor::from_fn(&[1, lq, dh], |i| ((i * 3 + 1) % 7) as f64 * 0.5);
        let rt = Tensor::from_fn(&[geom.table_len(0), dh], |i| i as f64 * 0.25);
        let rh = Tensor::from_fn(&[geom.table_len(1), dh], |i| 1.0 - i as f64 * 0.5);
        let rw = Tensor::from_fn(&[geom.table_len(2), dh], |i| (i as f64).sqrt());
        let out = add_rel_pos(&scores, &q, [&rt, &rh, &rw], &geom).unwrap();

        for i in 0..lq {
            let (ti, wi) = (i / 3, i % 3);
            for j in 0..lq {
                let (tj, wj) = (j / 3, j % 3);
                let mut want = 0.0;
                for c in 0..dh {
                    let qv = q.data()[i * dh + c];
                    want += qv * rt.data()[geom.row(0, ti, tj) * dh + c];
                    want += qv * rh.data()[geom.row(1, 0, 0) * dh + c];
                    want += qv * rw.data()[geom.row(2, wi, wj) * dh + c];
                }
                let got = out.data()[i * lq + j];
                assert!((got - want).abs() < 1e-12, "({i},{j}): {got} vs {want}");
            }
        }
    }
}
