#![allow(clippy::should_implement_trait)]

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use super::{Matrix, Var};
use crate::error::{bail, Result};

fn broadcast_shape(a: (usize, usize), b: (usize, usize), op: &str) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, _) => Some(y),
        (_, 1) => Some(x),
        _ => None,
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => bail!(Shape, "{op}: cannot broadcast {a:?} with {b:?}"),
    }
}

fn expand(m: &Matrix, shape: (usize, usize)) -> Matrix {
    m.broadcast(shape).expect("shape checked").to_owned()
}

/// Sums `g` over the axes that were broadcast from size 1.
fn reduce_to(g: &Matrix, shape: (usize, usize)) -> Matrix {
    let mut out = g.clone();
    if shape.0 == 1 && out.nrows() != 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && out.ncols() != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    out
}

fn softmax_of(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    y
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "variables live on different tapes");
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var<'t> {
        let x = self.value();
        let y = Rc::new(x.mapv(f));
        let y_keep = Rc::clone(&y);
        self.tape.record((*y).clone(), &[self], move |g| {
            let mut dx = g.clone();
            Zip::from(&mut dx)
                .and(&*x)
                .and(&*y_keep)
                .for_each(|d, &xv, &yv| *d *= df(xv, yv));
            vec![dx]
        })
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.dim(), b.dim());
        let shape = broadcast_shape(sa, sb, "add")?;
        let y = &a.broadcast(shape).unwrap() + &b.broadcast(shape).unwrap();
        Ok(self
            .tape
            .record(y, &[self, other], move |g| vec![reduce_to(g, sa), reduce_to(g, sb)]))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.dim(), b.dim());
        let shape = broadcast_shape(sa, sb, "sub")?;
        let y = &a.broadcast(shape).unwrap() - &b.broadcast(shape).unwrap();
        Ok(self
            .tape
            .record(y, &[self, other], move |g| vec![reduce_to(g, sa), reduce_to(&-g, sb)]))
    }

    /// Elementwise product with 2-D broadcasting.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.dim(), b.dim());
        let shape = broadcast_shape(sa, sb, "mul")?;
        let (ab, bb) = (expand(&a, shape), expand(&b, shape));
        let y = &ab * &bb;
        Ok(self.tape.record(y, &[self, other], move |g| {
            vec![reduce_to(&(g * &bb), sa), reduce_to(&(g * &ab), sb)]
        }))
    }

    /// Elementwise quotient with 2-D broadcasting.
    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.dim(), b.dim());
        let shape = broadcast_shape(sa, sb, "div")?;
        let (ab, bb) = (expand(&a, shape), expand(&b, shape));
        let y = &ab / &bb;
        Ok(self.tape.record(y, &[self, other], move |g| {
            let da = g / &bb;
            let db = -(g * &ab) / (&bb * &bb);
            vec![reduce_to(&da, sa), reduce_to(&db, sb)]
        }))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.ncols() != b.nrows() {
            bail!(Shape, "matmul: {:?} x {:?}", a.dim(), b.dim());
        }
        let y = a.dot(&*b);
        Ok(self.tape.record(y, &[self, other], move |g| {
            vec![g.dot(&b.t()), a.t().dot(g)]
        }))
    }

    pub fn transpose(self) -> Var<'t> {
        let y = self.value().t().as_standard_layout().into_owned();
        self.tape
            .record(y, &[self], |g| vec![g.t().as_standard_layout().into_owned()])
    }

    /// Row-major reshape.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.dim();
        if rows * cols != shape.0 * shape.1 {
            bail!(Shape, "reshape {shape:?} into ({rows}, {cols})");
        }
        let flat: Vec<f64> = x.iter().copied().collect();
        let y = Array2::from_shape_vec((rows, cols), flat).unwrap();
        Ok(self.tape.record(y, &[self], move |g| {
            let flat: Vec<f64> = g.iter().copied().collect();
            vec![Array2::from_shape_vec(shape, flat).unwrap()]
        }))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let y = self.value().mapv(|v| v * c);
        self.tape.record(y, &[self], move |g| vec![g * c])
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let y = self.value().mapv(|v| v + c);
        self.tape.record(y, &[self], |g| vec![g.clone()])
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|x| if x < 0.0 { 0.0 } else { x }, |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'t> {
        self.unary(stable_softplus, |x, _| sigmoid(x))
    }

    /// `-x ln x` with the convention `0 ln 0 = 0`; the derivative at 0 is taken as 0.
    pub fn neg_xlogx(self) -> Var<'t> {
        self.unary(
            |x| if x > 0.0 { -x * x.ln() } else { 0.0 },
            |x, _| if x > 0.0 { -(x.ln() + 1.0) } else { 0.0 },
        )
    }

    /// Sum of all entries, as 1×1.
    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.dim();
        let y = Array2::from_elem((1, 1), x.sum());
        self.tape
            .record(y, &[self], move |g| vec![Array2::from_elem(shape, g[[0, 0]])])
    }

    /// Mean of all entries, as 1×1. Zero for an empty matrix.
    pub fn mean(self) -> Var<'t> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Per-row sums, `m×1`.
    pub fn row_sums(self) -> Var<'t> {
        let x = self.value();
        let shape = x.dim();
        let y = x.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.tape.record(y, &[self], move |g| vec![expand(g, shape)])
    }

    /// Per-column sums, `1×n`.
    pub fn col_sums(self) -> Var<'t> {
        let x = self.value();
        let shape = x.dim();
        let y = x.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.tape.record(y, &[self], move |g| vec![expand(g, shape)])
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.dim();
        if start > end || end > shape.1 {
            bail!(Shape, "slice_cols {start}..{end} of {shape:?}");
        }
        let y = x.slice(s![.., start..end]).to_owned();
        Ok(self.tape.record(y, &[self], move |g| {
            let mut dx = Array2::zeros(shape);
            dx.slice_mut(s![.., start..end]).assign(g);
            vec![dx]
        }))
    }

    /// Rows `start..end`.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.dim();
        if start > end || end > shape.0 {
            bail!(Shape, "slice_rows {start}..{end} of {shape:?}");
        }
        let y = x.slice(s![start..end, ..]).to_owned();
        Ok(self.tape.record(y, &[self], move |g| {
            let mut dx = Array2::zeros(shape);
            dx.slice_mut(s![start..end, ..]).assign(g);
            vec![dx]
        }))
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(self) -> Var<'t> {
        let y = Rc::new(softmax_of(&self.value()));
        let yk = Rc::clone(&y);
        self.tape.record((*y).clone(), &[self], move |g| {
            let dot = (g * &*yk).sum_axis(Axis(1)).insert_axis(Axis(1));
            vec![&*yk * &(g - &dot)]
        })
    }

    /// Row-wise log-softmax via log-sum-exp.
    pub fn log_softmax_rows(self) -> Var<'t> {
        let x = self.value();
        let mut y = (*x).clone();
        for mut row in y.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        let p = y.mapv(f64::exp);
        self.tape.record(y, &[self], move |g| {
            let total = g.sum_axis(Axis(1)).insert_axis(Axis(1));
            vec![g - &(&p * &total)]
        })
    }

    /// Per-row matrix-vector products: row `e` of `self` holds an `out×in`
    /// matrix flattened row-major, row `e` of `x` an `in` vector. Returns `E×out`.
    pub fn rowwise_matvec(self, x: Var<'t>, out_dim: usize) -> Result<Var<'t>> {
        self.same_tape(&x);
        let (m, v) = (self.value(), x.value());
        let (rows, width) = m.dim();
        let in_dim = v.ncols();
        if v.nrows() != rows || width != out_dim * in_dim {
            bail!(
                Shape,
                "rowwise_matvec: {:?} matrices against {:?} vectors with out_dim {out_dim}",
                m.dim(),
                v.dim()
            );
        }
        let mut y = Array2::zeros((rows, out_dim));
        for e in 0..rows {
            for i in 0..out_dim {
                y[[e, i]] = (0..in_dim).map(|j| m[[e, i * in_dim + j]] * v[[e, j]]).sum();
            }
        }
        Ok(self.tape.record(y, &[self, x], move |g| {
            let mut dm = Array2::zeros((rows, width));
            let mut dv = Array2::zeros((rows, in_dim));
            for e in 0..rows {
                for i in 0..out_dim {
                    let gi = g[[e, i]];
                    for j in 0..in_dim {
                        dm[[e, i * in_dim + j]] = gi * v[[e, j]];
                        dv[[e, j]] += gi * m[[e, i * in_dim + j]];
                    }
                }
            }
            vec![dm, dv]
        }))
    }
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let Some(first) = parts.first() else {
        bail!(Usage, "concat_cols of nothing");
    };
    let values: Vec<_> = parts.iter().map(Var::value).collect();
    let rows = values[0].nrows();
    if let Some(v) = values.iter().find(|v| v.nrows() != rows) {
        bail!(Shape, "concat_cols: {} rows against {rows}", v.nrows());
    }
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let y = ndarray::concatenate(Axis(1), &views).unwrap();
    let widths: Vec<usize> = values.iter().map(|v| v.ncols()).collect();
    Ok(first.tape.record(y, parts, move |g| {
        let mut start = 0;
        widths
            .iter()
            .map(|&w| {
                let part = g.slice(s![.., start..start + w]).to_owned();
                start += w;
                part
            })
            .collect()
    }))
}

/// Vertical stacking of matrices with equal widths.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let Some(first) = parts.first() else {
        bail!(Usage, "concat_rows of nothing");
    };
    let values: Vec<_> = parts.iter().map(Var::value).collect();
    let cols = values[0].ncols();
    if let Some(v) = values.iter().find(|v| v.ncols() != cols) {
        bail!(Shape, "concat_rows: width {} against {cols}", v.ncols());
    }
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let y = ndarray::concatenate(Axis(0), &views).unwrap();
    let heights: Vec<usize> = values.iter().map(|v| v.nrows()).collect();
    Ok(first.tape.record(y, parts, move |g| {
        let mut start = 0;
        heights
            .iter()
            .map(|&h| {
                let part = g.slice(s![start..start + h, ..]).to_owned();
                start += h;
                part
            })
            .collect()
    }))
}
