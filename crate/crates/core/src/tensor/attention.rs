use rayon::prelude::*;

use super::Tensor2;
use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::scalar::Scalar;

/// Per-entry attention probabilities on the pattern of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseScores<T> {
    pub probs: Vec<T>,
}

impl<T: Scalar> SparseScores<T> {
    /// Sum of each row's probabilities.
    pub fn row_sums(&self, mask: &Adjacency) -> Vec<T> {
        (0..mask.num_nodes())
            .map(|i| self.probs[mask.row_range(i)].iter().copied().sum())
            .collect()
    }
}

/// Splits `buf` into consecutive mutable row segments given CSR offsets.
fn split_rows<'a, T>(mut buf: &'a mut [T], offsets: &[usize]) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(offsets.len().saturating_sub(1));
    for w in offsets.windows(2) {
        let (head, tail) = buf.split_at_mut(w[1] - w[0]);
        out.push(head);
        buf = tail;
    }
    out
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

fn check_inputs<T: Scalar>(q: &Tensor2<T>, k: &Tensor2<T>, v: &Tensor2<T>, mask: &Adjacency) -> Result<()> {
    let n = mask.num_nodes();
    if q.shape() != k.shape() || q.rows() != n || v.rows() != n {
        return Err(Error::Shape(format!(
            "attention on {n} nodes got q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if let Some(i) = (0..n).find(|&i| mask.degree(i) == 0) {
        return Err(Error::Graph(format!("attention row {i} has no neighbours")));
    }
    Ok(())
}

/// Masked scaled dot-product attention restricted to the stored entries of
/// `mask`: scores on the pattern only, softmax over each row's entries, then
/// a sparse product with `v`.
pub fn sparse_attention<T: Scalar>(
    q: &Tensor2<T>,
    k: &Tensor2<T>,
    v: &Tensor2<T>,
    mask: &Adjacency,
) -> Result<(Tensor2<T>, SparseScores<T>)> {
    check_inputs(q, k, v, mask)?;
    let n = mask.num_nodes();
    let dv = v.cols();
    let scale = T::one() / T::of(q.cols() as f64).sqrt();
    let mut probs = vec![T::zero(); mask.nnz()];
    let mut out = Tensor2::zeros(n, dv);
    let rows = split_rows(&mut probs, mask.row_offsets());
    out.data_mut()
        .par_chunks_mut(dv.max(1))
        .zip(rows.into_par_iter())
        .enumerate()
        .for_each(|(i, (o, p))| {
            let qi = q.row(i);
            let cols = mask.neighbors(i);
            let mut max = T::neg_infinity();
            for (pe, &j) in p.iter_mut().zip(cols) {
                *pe = dot(qi, k.row(j)) * scale;
                max = max.max(*pe);
            }
            let mut sum = T::zero();
            for pe in p.iter_mut() {
                *pe = (*pe - max).exp();
                sum += *pe;
            }
            for (pe, &j) in p.iter_mut().zip(cols) {
                *pe /= sum;
                axpy(*pe, v.row(j), o);
            }
        });
    Ok((out, SparseScores { probs }))
}

/// Gradients of `sparse_attention` wrt `q`, `k` and `v`.
pub fn sparse_attention_backward<T: Scalar>(
    q: &Tensor2<T>,
    k: &Tensor2<T>,
    v: &Tensor2<T>,
    mask: &Adjacency,
    scores: &SparseScores<T>,
    d_out: &Tensor2<T>,
) -> Result<(Tensor2<T>, Tensor2<T>, Tensor2<T>)> {
    check_inputs(q, k, v, mask)?;
    if d_out.shape() != (mask.num_nodes(), v.cols()) {
        return Err(Error::Shape("attention output gradient has the wrong shape".into()));
    }
    let n = mask.num_nodes();
    let (dh, dv_w) = (q.cols(), v.cols());
    let scale = T::one() / T::of(dh as f64).sqrt();
    let probs = &scores.probs;

    // Score gradients, one row at a time.
    let mut ds = vec![T::zero(); mask.nnz()];
    split_rows(&mut ds, mask.row_offsets())
        .into_par_iter()
        .enumerate()
        .for_each(|(i, dsi)| {
            let gi = d_out.row(i);
            let range = mask.row_range(i);
            let p = &probs[range];
            let mut inner = T::zero();
            for ((d, &j), &pe) in dsi.iter_mut().zip(mask.neighbors(i)).zip(p) {
                *d = dot(gi, v.row(j));
                inner += pe * *d;
            }
            for (d, &pe) in dsi.iter_mut().zip(p) {
                *d = pe * (*d - inner) * scale;
            }
        });

    let tr = mask.transpose_index();
    let mut dq = Tensor2::zeros(n, dh);
    let mut dk = Tensor2::zeros(n, dh);
    let mut dv = Tensor2::zeros(n, dv_w);
    dq.data_mut()
        .par_chunks_mut(dh.max(1))
        .zip(dk.data_mut().par_chunks_mut(dh.max(1)))
        .zip(dv.data_mut().par_chunks_mut(dv_w.max(1)))
        .enumerate()
        .for_each(|(i, ((dqi, dki), dvi))| {
            // Row i as a query, then (via the mirrored entries) as a key/value.
            for (e, &j) in mask.row_range(i).zip(mask.neighbors(i)) {
                axpy(ds[e], k.row(j), dqi);
                let m = tr[e];
                axpy(ds[m], q.row(j), dki);
                axpy(probs[m], d_out.row(j), dvi);
            }
        });
    Ok((dq, dk, dv))
}

/// Probabilities of a group of heads sharing one mask, stored entry-major:
/// entry `e` of the head in slot `s` lives at `probs[e * heads.len() + s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupScores<T> {
    pub heads: Vec<usize>,
    pub probs: Vec<T>,
}

fn check_group<T: Scalar>(qkv: &Tensor2<T>, head_width: usize, heads: &[usize], mask: &Adjacency, d: usize) -> Result<()> {
    let n = mask.num_nodes();
    if qkv.rows() != n || qkv.cols() != 3 * d {
        return Err(Error::Shape(format!("grouped attention on {n} nodes of width {d} got qkv {:?}", qkv.shape())));
    }
    if head_width == 0 || heads.iter().any(|&h| (h + 1) * head_width > d) {
        return Err(Error::Shape(format!("heads {heads:?} of width {head_width} do not fit width {d}")));
    }
    if let Some(i) = (0..n).find(|&i| mask.degree(i) == 0) {
        return Err(Error::Graph(format!("attention row {i} has no neighbours")));
    }
    Ok(())
}

/// Attention for several heads sharing `mask`, read directly from a fused
/// `[q | k | v]` projection of width `3 * d`. Head `h` uses columns
/// `h * head_width..(h + 1) * head_width` of each third and writes the same
/// columns of `out` (width `d`); other columns are left untouched.
pub fn grouped_attention<T: Scalar>(
    qkv: &Tensor2<T>,
    head_width: usize,
    heads: &[usize],
    mask: &Adjacency,
    out: &mut Tensor2<T>,
) -> Result<GroupScores<T>> {
    let d = out.cols();
    check_group(qkv, head_width, heads, mask, d)?;
    if out.rows() != mask.num_nodes() {
        return Err(Error::Shape("grouped attention output has the wrong row count".into()));
    }
    let (g, dh) = (heads.len(), head_width);
    let scale = T::one() / T::of(dh as f64).sqrt();
    let offsets: Vec<usize> = mask.row_offsets().iter().map(|o| o * g).collect();
    let mut probs = vec![T::zero(); mask.nnz() * g];
    let rows = split_rows(&mut probs, &offsets);
    out.data_mut()
        .par_chunks_mut(d.max(1))
        .zip(rows.into_par_iter())
        .enumerate()
        .for_each(|(i, (o, p))| {
            let qi = qkv.row(i);
            let cols = mask.neighbors(i);
            let mut max = vec![T::neg_infinity(); g];
            for (e, &j) in cols.iter().enumerate() {
                let kj = &qkv.row(j)[d..2 * d];
                for (s, &h) in heads.iter().enumerate() {
                    let x = dot(&qi[h * dh..(h + 1) * dh], &kj[h * dh..(h + 1) * dh]) * scale;
                    p[e * g + s] = x;
                    max[s] = max[s].max(x);
                }
            }
            let mut sum = vec![T::zero(); g];
            for pe in p.chunks_mut(g) {
                for s in 0..g {
                    pe[s] = (pe[s] - max[s]).exp();
                    sum[s] += pe[s];
                }
            }
            for &h in heads {
                o[h * dh..(h + 1) * dh].fill(T::zero());
            }
            for (pe, &j) in p.chunks_mut(g).zip(cols) {
                let vj = &qkv.row(j)[2 * d..];
                for (s, &h) in heads.iter().enumerate() {
                    pe[s] /= sum[s];
                    axpy(pe[s], &vj[h * dh..(h + 1) * dh], &mut o[h * dh..(h + 1) * dh]);
                }
            }
        });
    Ok(GroupScores { heads: heads.to_vec(), probs })
}

/// Gradient of `grouped_attention`, accumulated into the matching columns of
/// `d_qkv` (width `3 * d`) from the output gradient `d_out` (width `d`).
pub fn grouped_attention_backward<T: Scalar>(
    qkv: &Tensor2<T>,
    head_width: usize,
    mask: &Adjacency,
    scores: &GroupScores<T>,
    d_out: &Tensor2<T>,
    d_qkv: &mut Tensor2<T>,
) -> Result<()> {
    let d = d_out.cols();
    let heads = &scores.heads;
    check_group(qkv, head_width, heads, mask, d)?;
    let (g, dh) = (heads.len(), head_width);
    if d_out.rows() != mask.num_nodes() || d_qkv.shape() != qkv.shape() || scores.probs.len() != mask.nnz() * g {
        return Err(Error::Shape("grouped attention gradient buffers have the wrong shape".into()));
    }
    let scale = T::one() / T::of(dh as f64).sqrt();
    let probs = &scores.probs;
    let offsets: Vec<usize> = mask.row_offsets().iter().map(|o| o * g).collect();

    let mut ds = vec![T::zero(); mask.nnz() * g];
    split_rows(&mut ds, &offsets)
        .into_par_iter()
        .enumerate()
        .for_each(|(i, dsi)| {
            let gi = d_out.row(i);
            let p = &probs[offsets[i]..offsets[i + 1]];
            let mut inner = vec![T::zero(); g];
            for ((de, pe), &j) in dsi.chunks_mut(g).zip(p.chunks(g)).zip(mask.neighbors(i)) {
                let vj = &qkv.row(j)[2 * d..];
                for (s, &h) in heads.iter().enumerate() {
                    de[s] = dot(&gi[h * dh..(h + 1) * dh], &vj[h * dh..(h + 1) * dh]);
                    inner[s] += pe[s] * de[s];
                }
            }
            for (de, pe) in dsi.chunks_mut(g).zip(p.chunks(g)) {
                for s in 0..g {
                    de[s] = pe[s] * (de[s] - inner[s]) * scale;
                }
            }
        });

    let tr = mask.transpose_index();
    d_qkv.data_mut().par_chunks_mut(3 * d).enumerate().for_each(|(i, row)| {
        let (dq, rest) = row.split_at_mut(d);
        let (dk, dv) = rest.split_at_mut(d);
        for (e, &j) in mask.row_range(i).zip(mask.neighbors(i)) {
            let m = tr[e];
            let (qj, kj, gj) = (&qkv.row(j)[..d], &qkv.row(j)[d..2 * d], d_out.row(j));
            for (s, &h) in heads.iter().enumerate() {
                let r = h * dh..(h + 1) * dh;
                axpy(ds[e * g + s], &kj[r.clone()], &mut dq[r.clone()]);
                axpy(ds[m * g + s], &qj[r.clone()], &mut dk[r.clone()]);
                axpy(probs[m * g + s], &gj[r.clone()], &mut dv[r]);
            }
        }
    });
    Ok(())
}
