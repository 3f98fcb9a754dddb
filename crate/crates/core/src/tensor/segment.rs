//! Gather and segmented reductions over matrix rows.
//!
//! These are the permutation-invariant aggregators used by every layer: a
//! neighborhood is the set of rows sharing a segment id.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Matrix, Var};
use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentMode {
    Sum,
    Mean,
    Max,
}

fn check_segments(segment_ids: &[usize], rows: usize, num_segments: usize) -> Result<()> {
    if segment_ids.len() != rows {
        bail!(Shape, "{} segment ids for {rows} rows", segment_ids.len());
    }
    if let Some(s) = segment_ids.iter().find(|&&s| s >= num_segments) {
        bail!(Structural, "segment id {s} outside [0, {num_segments})");
    }
    Ok(())
}

fn counts(segment_ids: &[usize], num_segments: usize) -> Vec<usize> {
    let mut c = vec![0; num_segments];
    for &s in segment_ids {
        c[s] += 1;
    }
    c
}

fn scatter_add(g: &Matrix, ids: &[usize], rows: usize) -> Matrix {
    let mut out = Array2::zeros((rows, g.ncols()));
    for (r, &i) in ids.iter().enumerate() {
        let mut dst = out.row_mut(i);
        dst += &g.row(r);
    }
    out
}

impl<'t> Var<'t> {
    /// Rows `ids[0], ids[1], ...` of `self`. Repeated ids are allowed.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let rows = x.nrows();
        if let Some(i) = ids.iter().find(|&&i| i >= rows) {
            bail!(Structural, "gather row {i} outside [0, {rows})");
        }
        let y = x.select(ndarray::Axis(0), ids);
        let ids = ids.to_vec();
        Ok(self
            .tape
            .record(y, &[self], move |g| vec![scatter_add(g, &ids, rows)]))
    }

    /// Reduces rows sharing a segment id. Empty segments give zero rows.
    pub fn segment_reduce(self, segment_ids: &[usize], num_segments: usize, mode: SegmentMode) -> Result<Var<'t>> {
        match mode {
            SegmentMode::Sum => self.segment_sum(segment_ids, num_segments),
            SegmentMode::Mean => self.segment_mean(segment_ids, num_segments),
            SegmentMode::Max => Ok(self.segment_max(segment_ids, num_segments)?.0),
        }
    }

    pub fn segment_sum(self, segment_ids: &[usize], num_segments: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_segments(segment_ids, x.nrows(), num_segments)?;
        let y = scatter_add(&x, segment_ids, num_segments);
        let ids = segment_ids.to_vec();
        Ok(self.tape.record(y, &[self], move |g| {
            vec![g.select(ndarray::Axis(0), &ids)]
        }))
    }

    /// Segment mean with divisor `max(count, 1)`.
    pub fn segment_mean(self, segment_ids: &[usize], num_segments: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_segments(segment_ids, x.nrows(), num_segments)?;
        let c = counts(segment_ids, num_segments);
        let mut y = scatter_add(&x, segment_ids, num_segments);
        for (mut row, &n) in y.rows_mut().into_iter().zip(&c) {
            row /= n.max(1) as f64;
        }
        let ids = segment_ids.to_vec();
        Ok(self.tape.record(y, &[self], move |g| {
            let mut dx = g.select(ndarray::Axis(0), &ids);
            for (mut row, &s) in dx.rows_mut().into_iter().zip(&ids) {
                row /= c[s] as f64;
            }
            vec![dx]
        }))
    }

    /// Column-wise segment maximum. Also returns which segments were empty;
    /// their rows are zero. The gradient goes to the lowest-index maximal row.
    pub fn segment_max(self, segment_ids: &[usize], num_segments: usize) -> Result<(Var<'t>, Vec<bool>)> {
        let x = self.value();
        let (rows, cols) = x.dim();
        check_segments(segment_ids, rows, num_segments)?;
        let mut arg: Array2<usize> = Array2::from_elem((num_segments, cols), usize::MAX);
        for (r, &s) in segment_ids.iter().enumerate() {
            for c in 0..cols {
                let best = arg[[s, c]];
                let (v, b) = (x[[r, c]], if best == usize::MAX { 0.0 } else { x[[best, c]] });
                // A NaN entry wins so that it is not silently dropped.
                if best == usize::MAX || v > b || (v.is_nan() && !b.is_nan()) {
                    arg[[s, c]] = r;
                }
            }
        }
        let empty: Vec<bool> = counts(segment_ids, num_segments).iter().map(|&n| n == 0).collect();
        let y = Array2::from_shape_fn((num_segments, cols), |(s, c)| match arg[[s, c]] {
            usize::MAX => 0.0,
            r => x[[r, c]],
        });
        let var = self.tape.record(y, &[self], move |g| {
            let mut dx = Array2::zeros((rows, cols));
            for ((s, c), &r) in arg.indexed_iter() {
                if r != usize::MAX {
                    dx[[r, c]] += g[[s, c]];
                }
            }
            vec![dx]
        });
        Ok((var, empty))
    }

    /// Softmax over the rows of each segment, independently per column.
    /// Every segment in `0..num_segments` must have at least one member.
    pub fn segment_softmax(self, segment_ids: &[usize], num_segments: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (rows, cols) = x.dim();
        check_segments(segment_ids, rows, num_segments)?;
        if let Some(s) = counts(segment_ids, num_segments).iter().position(|&n| n == 0) {
            bail!(Usage, "segment_softmax: segment {s} is empty");
        }
        let mut max = Array2::from_elem((num_segments, cols), f64::NEG_INFINITY);
        for (r, &s) in segment_ids.iter().enumerate() {
            for c in 0..cols {
                max[[s, c]] = max[[s, c]].max(x[[r, c]]);
            }
        }
        let mut y = Array2::from_shape_fn((rows, cols), |(r, c)| (x[[r, c]] - max[[segment_ids[r], c]]).exp());
        let totals = scatter_add(&y, segment_ids, num_segments);
        for (r, &s) in segment_ids.iter().enumerate() {
            for c in 0..cols {
                y[[r, c]] /= totals[[s, c]];
            }
        }
        let ids = segment_ids.to_vec();
        let yk = y.clone();
        Ok(self.tape.record(y, &[self], move |g| {
            let gy = g * &yk;
            let dots = scatter_add(&gy, &ids, num_segments);
            let mut dx = gy;
            for (r, &s) in ids.iter().enumerate() {
                for c in 0..cols {
                    dx[[r, c]] -= yk[[r, c]] * dots[[s, c]];
                }
            }
            vec![dx]
        }))
    }
}
