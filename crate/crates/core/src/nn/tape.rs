//! A small reverse-mode tape over dense row-major matrices.
//!
//! Every operation computes its value eagerly. While the tape is recording it
//! also stores a backward closure; a non-recording tape keeps nothing, so
//! intermediates are freed as soon as their handles drop.

use std::cell::{Cell, RefCell};
use std::ops::Range;
use std::rc::Rc;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

pub type Mat = Array2<f64>;

type BackwardFn = Box<dyn Fn(&Mat) -> Vec<Mat>>;

struct Node {
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
    ties: Cell<usize>,
}

impl Tape {
    /// A tape that records operations for [`Tape::backward`].
    pub fn recording() -> Self {
        Self { nodes: RefCell::new(Vec::new()), recording: true, ties: Cell::new(0) }
    }

    /// A forward-only tape.
    pub fn inference() -> Self {
        Self { nodes: RefCell::new(Vec::new()), recording: false, ties: Cell::new(0) }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of exact ties seen by max reductions so far.
    pub fn ties(&self) -> usize {
        self.ties.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Mat) -> Var<'_> {
        self.push(value, &[], None)
    }

    fn push(&self, value: Mat, parents: &[&Var<'_>], backward: Option<BackwardFn>) -> Var<'_> {
        let id = if self.recording {
            let mut nodes = self.nodes.borrow_mut();
            let parents = parents.iter().map(|p| p.id.expect("recording tape holds untracked var")).collect();
            nodes.push(Node { parents, backward });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Var { tape: self, id, value: Rc::new(value) }
    }

    fn op<'t>(&'t self, value: Mat, parents: &[&Var<'t>], backward: impl Fn(&Mat) -> Vec<Mat> + 'static) -> Var<'t> {
        let backward: Option<BackwardFn> = if self.recording { Some(Box::new(backward)) } else { None };
        self.push(value, parents, backward)
    }

    /// Gradients of the sum of `output`'s entries with respect to every node.
    pub fn backward(&self, output: &Var<'_>) -> Grads {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Mat>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root) = output.id else {
            return Grads { grads };
        };
        grads[root] = Some(Mat::ones(output.value.dim()));
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(back) = &nodes[id].backward {
                for (&parent, pg) in nodes[id].parents.iter().zip(back(&g)) {
                    match &mut grads[parent] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Grads { grads }
    }
}

pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, var: &Var<'_>) -> Option<&Mat> {
        var.id.and_then(|id| self.grads.get(id)).and_then(Option::as_ref)
    }
}

#[derive(Clone)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: Option<usize>,
    value: Rc<Mat>,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn softmax_rows(x: ArrayView2<'_, f64>) -> Mat {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Mat {
        &self.value
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn matmul(&self, other: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.value.clone(), other.value.clone());
        let out = a.dot(&*b);
        self.tape.op(out, &[self, other], move |g| vec![g.dot(&b.t()), a.t().dot(g)])
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.value.clone(), other.value.clone());
        let out = a.dot(&b.t());
        self.tape.op(out, &[self, other], move |g| vec![g.dot(&*b), g.t().dot(&*a)])
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.value.clone(), other.value.clone());
        let out = a.t().dot(&*b);
        self.tape.op(out, &[self, other], move |g| vec![b.dot(&g.t()), a.dot(g)])
    }

    pub fn add(&self, other: &Var<'t>) -> Var<'t> {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let out = &*self.value + &*other.value;
        self.tape.op(out, &[self, other], |g| vec![g.clone(), g.clone()])
    }

    pub fn sub(&self, other: &Var<'t>) -> Var<'t> {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        let out = &*self.value - &*other.value;
        self.tape.op(out, &[self, other], |g| vec![g.clone(), -g])
    }

    /// Add a `1 x C` row to every row.
    pub fn add_row(&self, row: &Var<'t>) -> Var<'t> {
        assert_eq!(row.shape(), (1, self.shape().1), "bias must be a single row");
        let out = &*self.value + &*row.value;
        self.tape.op(out, &[self, row], |g| vec![g.clone(), g.sum_axis(Axis(0)).insert_axis(Axis(0))])
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        let out = &*self.value * s;
        self.tape.op(out, &[self], move |g| vec![g * s])
    }

    pub fn relu(&self) -> Var<'t> {
        let x = self.value.clone();
        let out = x.mapv(|v| v.max(0.0));
        self.tape.op(out, &[self], move |g| {
            let mut d = g.clone();
            Zip::from(&mut d).and(&*x).for_each(|d, &x| {
                if x <= 0.0 {
                    *d = 0.0
                }
            });
            vec![d]
        })
    }

    pub fn gelu(&self) -> Var<'t> {
        let x = self.value.clone();
        let out = x.mapv(gelu);
        self.tape.op(out, &[self], move |g| {
            let mut d = g.clone();
            Zip::from(&mut d).and(&*x).for_each(|d, &x| *d *= gelu_grad(x));
            vec![d]
        })
    }

    pub fn softmax_rows(&self) -> Var<'t> {
        let out = softmax_rows(self.value.view());
        let s = Rc::new(out.clone());
        self.tape.op(out, &[self], move |g| {
            let dots = (g * &*s).sum_axis(Axis(1)).insert_axis(Axis(1));
            vec![&*s * &(g - &dots)]
        })
    }

    /// Row-wise normalization followed by a per-channel affine map.
    pub fn layer_norm(&self, gamma: &Var<'t>, beta: &Var<'t>, eps: f64) -> Var<'t> {
        let c = self.shape().1;
        assert_eq!(gamma.shape(), (1, c));
        assert_eq!(beta.shape(), (1, c));
        let x = &*self.value;
        let mean = x.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = &centered * &inv_std;
        let out = &xhat * &*gamma.value + &*beta.value;
        let gamma_v = gamma.value.clone();
        self.tape.op(out, &[self, gamma, beta], move |g| {
            let dxhat = g * &*gamma_v;
            let m1 = dxhat.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
            let m2 = (&dxhat * &xhat).mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
            let dx = &(&(&dxhat - &m1) - &(&xhat * &m2)) * &inv_std;
            let dgamma = (g * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
            let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
            vec![dx, dgamma, dbeta]
        })
    }

    pub fn slice_cols(&self, range: Range<usize>) -> Var<'t> {
        let (rows, cols) = self.shape();
        let out = self.value.slice(s![.., range.clone()]).to_owned();
        self.tape.op(out, &[self], move |g| {
            let mut d = Mat::zeros((rows, cols));
            d.slice_mut(s![.., range.clone()]).assign(g);
            vec![d]
        })
    }

    pub fn slice_rows(&self, range: Range<usize>) -> Var<'t> {
        let (rows, cols) = self.shape();
        let out = self.value.slice(s![range.clone(), ..]).to_owned();
        self.tape.op(out, &[self], move |g| {
            let mut d = Mat::zeros((rows, cols));
            d.slice_mut(s![range.clone(), ..]).assign(g);
            vec![d]
        })
    }

    /// Row `i` of the result is row `index[i]` of `self`. Rows may repeat.
    pub fn gather_rows(&self, index: &[usize]) -> Var<'t> {
        let (rows, cols) = self.shape();
        let index: Rc<[usize]> = index.into();
        let out = self.value.select(Axis(0), &index);
        self.tape.op(out, &[self], move |g| {
            let mut d = Mat::zeros((rows, cols));
            for (src, &dst) in g.rows().into_iter().zip(index.iter()) {
                let mut row = d.row_mut(dst);
                row += &src;
            }
            vec![d]
        })
    }

    /// Column-wise maximum over each group of rows.
    ///
    /// `group[i]` names the output row that input row `i` reduces into. Empty
    /// groups produce zero rows. The gradient flows to the first maximal member.
    pub fn segment_max(&self, group: &[usize], n_groups: usize) -> Var<'t> {
        let (rows, cols) = self.shape();
        assert_eq!(group.len(), rows, "one group id per row");
        let x = &*self.value;
        let mut out = Mat::from_elem((n_groups, cols), f64::NEG_INFINITY);
        let mut arg = vec![usize::MAX; n_groups * cols];
        let mut ties = 0;
        for (i, &gid) in group.iter().enumerate() {
            for j in 0..cols {
                let v = x[[i, j]];
                let cur = &mut out[[gid, j]];
                if v > *cur {
                    *cur = v;
                    arg[gid * cols + j] = i;
                } else if v == *cur {
                    ties += 1;
                }
            }
        }
        out.mapv_inplace(|v| if v == f64::NEG_INFINITY { 0.0 } else { v });
        if ties > 0 {
            self.tape.ties.set(self.tape.ties.get() + ties);
        }
        self.tape.op(out, &[self], move |g| {
            let mut d = Mat::zeros((rows, cols));
            for gid in 0..n_groups {
                for j in 0..cols {
                    let src = arg[gid * cols + j];
                    if src != usize::MAX {
                        d[[src, j]] += g[[gid, j]];
                    }
                }
            }
            vec![d]
        })
    }

    /// Column-wise mean over each group of rows; empty groups produce zero rows.
    pub fn segment_mean(&self, group: &[usize], n_groups: usize) -> Var<'t> {
        let (rows, cols) = self.shape();
        assert_eq!(group.len(), rows, "one group id per row");
        let mut counts = vec![0usize; n_groups];
        let mut out = Mat::zeros((n_groups, cols));
        for (i, &gid) in group.iter().enumerate() {
            counts[gid] += 1;
            let mut row = out.row_mut(gid);
            row += &self.value.row(i);
        }
        for (gid, &c) in counts.iter().enumerate() {
            if c > 1 {
                out.row_mut(gid).mapv_inplace(|v| v / c as f64);
            }
        }
        let group: Rc<[usize]> = group.into();
        self.tape.op(out, &[self], move |g| {
            let mut d = Mat::zeros((rows, cols));
            for (i, &gid) in group.iter().enumerate() {
                let scale = 1.0 / counts[gid] as f64;
                d.row_mut(i).zip_mut_with(&g.row(gid), |a, &b| *a = b * scale);
            }
            vec![d]
        })
    }

    pub fn mean_rows(&self) -> Var<'t> {
        let (rows, cols) = self.shape();
        let out = self.value.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        self.tape.op(out, &[self], move |g| vec![Mat::from_shape_fn((rows, cols), |(_, j)| g[[0, j]] / rows as f64)])
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(&self) -> Var<'t> {
        let shape = self.shape();
        let out = Mat::from_elem((1, 1), self.value.sum());
        self.tape.op(out, &[self], move |g| vec![Mat::from_elem(shape, g[[0, 0]])])
    }

    /// Sum of squared entries as a `1 x 1` value.
    pub fn sum_squares(&self) -> Var<'t> {
        let x = self.value.clone();
        let out = Mat::from_elem((1, 1), x.iter().map(|v| v * v).sum());
        self.tape.op(out, &[self], move |g| vec![&*x * (2.0 * g[[0, 0]])])
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        Self::concat(parts, Axis(1))
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        Self::concat(parts, Axis(0))
    }

    fn concat(parts: &[Var<'t>], axis: Axis) -> Var<'t> {
        assert!(!parts.is_empty(), "nothing to concatenate");
        let tape = parts[0].tape;
        let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.value.view()).collect();
        let out = concatenate(axis, &views).expect("concatenate shape mismatch");
        let widths: Vec<usize> = parts.iter().map(|p| p.value.len_of(axis)).collect();
        let refs: Vec<&Var<'t>> = parts.iter().collect();
        tape.op(out, &refs, move |g| {
            let mut start = 0;
            widths
                .iter()
                .map(|&w| {
                    let piece = match axis {
                        Axis(0) => g.slice(s![start..start + w, ..]).to_owned(),
                        _ => g.slice(s![.., start..start + w]).to_owned(),
                    };
                    start += w;
                    piece
                })
                .collect()
        })
    }
}
