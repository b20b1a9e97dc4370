//! Stacked LSTM with exact backpropagation through time.
//!
//! Gate blocks are laid out in the order (input, forget, cell, output) along
//! the `4·d` axis of every weight matrix and bias vector. The checkpoint
//! format depends on this order.
//!
//! All computations are batched: states and inputs are `(rows, dim)` arrays.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{glorot_bound, shape2, sigmoid, slice2, slice2_mut, ParamSet, TensorInfo};

pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Weights of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `(4d, in_dim)`
    pub w_ih: Array2<f64>,
    /// `(4d, d)`
    pub w_hh: Array2<f64>,
    /// `(4d)`
    pub bias: Array1<f64>,
}

impl LstmLayer {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        LstmLayer {
            w_ih: Array2::zeros((4 * hidden, in_dim)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    /// Glorot-uniform weights per gate block, forget-gate bias 1, other biases 0.
    pub fn init<R: Rng>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let b_ih = glorot_bound(in_dim, hidden);
        let b_hh = glorot_bound(hidden, hidden);
        let w_ih = Array2::from_shape_simple_fn((4 * hidden, in_dim), || rng.random_range(-b_ih..=b_ih));
        let w_hh = Array2::from_shape_simple_fn((4 * hidden, hidden), || rng.random_range(-b_hh..=b_hh));
        let mut bias = Array1::zeros(4 * hidden);
        bias.slice_mut(s![hidden..2 * hidden]).fill(FORGET_BIAS_INIT);
        LstmLayer { w_ih, w_hh, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.w_ih.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    /// One time step: `c' = σ(f)·c + σ(i)·tanh(g)`, `h' = σ(o)·tanh(c')`.
    pub fn cell_forward(
        &self,
        x: ArrayView2<'_, f64>,
        h: ArrayView2<'_, f64>,
        c: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, CellCache)> {
        let d = self.hidden();
        let rows = x.nrows();
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "LSTM layer expects input width {}, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        if h.dim() != (rows, d) || c.dim() != (rows, d) {
            return Err(Error::Shape(format!(
                "LSTM state must be ({rows}, {d}), got h {:?} c {:?}",
                h.dim(),
                c.dim()
            )));
        }
        let mut gates = Array2::from_shape_fn((rows, 4 * d), |(_, j)| self.bias[j]);
        general_mat_mul(1.0, &x, &self.w_ih.t(), 1.0, &mut gates);
        general_mat_mul(1.0, &h, &self.w_hh.t(), 1.0, &mut gates);

        let mut c_new = Array2::zeros((rows, d));
        let mut h_new = Array2::zeros((rows, d));
        let mut tanh_c = Array2::zeros((rows, d));
        for r in 0..rows {
            let mut g = gates.row_mut(r);
            let g = g.as_slice_mut().unwrap();
            for k in 0..d {
                g[k] = sigmoid(g[k]);
                g[d + k] = sigmoid(g[d + k]);
                g[2 * d + k] = g[2 * d + k].tanh();
                g[3 * d + k] = sigmoid(g[3 * d + k]);
                let cn = g[d + k] * c[[r, k]] + g[k] * g[2 * d + k];
                let tc = cn.tanh();
                c_new[[r, k]] = cn;
                tanh_c[[r, k]] = tc;
                h_new[[r, k]] = g[3 * d + k] * tc;
            }
        }
        let cache = CellCache {
            x: x.to_owned(),
            h_prev: h.to_owned(),
            c_prev: c.to_owned(),
            gates,
            tanh_c,
        };
        Ok((h_new, c_new, cache))
    }

    /// Accumulates parameter gradients into `grads` and returns
    /// `(grad_x, grad_h_prev, grad_c_prev)`.
    pub fn cell_backward(
        &self,
        cache: &CellCache,
        grad_h: ArrayView2<'_, f64>,
        grad_c: ArrayView2<'_, f64>,
        grads: &mut LstmLayer,
    ) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        let d = self.hidden();
        let rows = cache.x.nrows();
        if cache.x.ncols() != self.in_dim() || cache.gates.ncols() != 4 * d {
            return Err(Error::Cache("cell cache was produced by a different layer shape".into()));
        }
        if grad_h.dim() != (rows, d) || grad_c.dim() != (rows, d) {
            return Err(Error::Shape(format!(
                "state gradients must be ({rows}, {d}), got {:?} / {:?}",
                grad_h.dim(),
                grad_c.dim()
            )));
        }
        // gradients w.r.t. gate pre-activations
        let mut da = Array2::zeros((rows, 4 * d));
        let mut dc_prev = Array2::zeros((rows, d));
        for r in 0..rows {
            let g = cache.gates.row(r);
            let g = g.as_slice().unwrap();
            let mut dar = da.row_mut(r);
            let dar = dar.as_slice_mut().unwrap();
            for k in 0..d {
                let (i, f, gg, o) = (g[k], g[d + k], g[2 * d + k], g[3 * d + k]);
                let tc = cache.tanh_c[[r, k]];
                let dh = grad_h[[r, k]];
                let dct = grad_c[[r, k]] + dh * o * (1.0 - tc * tc);
                dar[k] = dct * gg * i * (1.0 - i);
                dar[d + k] = dct * cache.c_prev[[r, k]] * f * (1.0 - f);
                dar[2 * d + k] = dct * i * (1.0 - gg * gg);
                dar[3 * d + k] = dh * tc * o * (1.0 - o);
                dc_prev[[r, k]] = dct * f;
            }
        }
        general_mat_mul(1.0, &da.t(), &cache.x, 1.0, &mut grads.w_ih);
        general_mat_mul(1.0, &da.t(), &cache.h_prev, 1.0, &mut grads.w_hh);
        grads.bias += &da.sum_axis(Axis(0));
        let dx = da.dot(&self.w_ih);
        let dh_prev = da.dot(&self.w_hh);
        Ok((dx, dh_prev, dc_prev))
    }
}

/// Everything the backward pass of one cell step needs.
#[derive(Debug, Clone)]
pub struct CellCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// activated gates (σ(i), σ(f), tanh(g), σ(o))
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

/// Hidden and cell state of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
}

impl LstmState {
    pub fn zeros(layers: usize, rows: usize, hidden: usize) -> Self {
        LstmState {
            h: vec![Array2::zeros((rows, hidden)); layers],
            c: vec![Array2::zeros((rows, hidden)); layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.h.len()
    }

    pub fn top_h(&self) -> &Array2<f64> {
        self.h.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

/// Per-step, per-layer cell caches from [`LstmStack::unroll`].
#[derive(Debug, Clone)]
pub struct UnrollCache {
    steps: Vec<Vec<CellCache>>,
}

impl UnrollCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Gradients of an unroll with respect to its initial state and inputs.
/// Parameter gradients are accumulated separately.
#[derive(Debug, Clone)]
pub struct UnrollGrads {
    pub init: LstmState,
    pub inputs: Vec<Array2<f64>>,
}

impl LstmStack {
    pub fn init(in_dim: usize, hidden: usize, num_layers: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(in_dim, hidden, num_layers, &mut rng)
    }

    pub fn init_with_rng<R: Rng>(in_dim: usize, hidden: usize, num_layers: usize, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || hidden == 0 || num_layers == 0 {
            return Err(Error::Spec(format!(
                "LSTM needs positive sizes, got in_dim={in_dim} hidden={hidden} layers={num_layers}"
            )));
        }
        let layers = (0..num_layers)
            .map(|k| LstmLayer::init(if k == 0 { in_dim } else { hidden }, hidden, rng))
            .collect();
        Ok(LstmStack { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Runs the stack over `inputs`, returning the state after every step.
    ///
    /// An empty sequence yields no states; the final state is then `init`.
    pub fn unroll(&self, init: &LstmState, inputs: &[Array2<f64>]) -> Result<(Vec<LstmState>, UnrollCache)> {
        if init.layers() != self.layers.len() {
            return Err(Error::Shape(format!(
                "initial state has {} layers, stack has {}",
                init.layers(),
                self.layers.len()
            )));
        }
        let mut states = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        let mut cur = init.clone();
        for (t, x) in inputs.iter().enumerate() {
            if x.ncols() != self.in_dim() {
                return Err(Error::Shape(format!(
                    "input step {t} has width {}, expected {}",
                    x.ncols(),
                    self.in_dim()
                )));
            }
            let mut step_caches = Vec::with_capacity(self.layers.len());
            let mut next = LstmState {
                h: Vec::with_capacity(self.layers.len()),
                c: Vec::with_capacity(self.layers.len()),
            };
            let mut below = x.view();
            for (k, layer) in self.layers.iter().enumerate() {
                let (h, c, cache) = layer.cell_forward(below, cur.h[k].view(), cur.c[k].view())?;
                next.h.push(h);
                next.c.push(c);
                step_caches.push(cache);
                below = next.h[k].view();
            }
            caches.push(step_caches);
            states.push(next.clone());
            cur = next;
        }
        Ok((states, UnrollCache { steps: caches }))
    }

    /// Backpropagates a gradient on the final state through every step.
    ///
    /// Parameter gradients are added to `grads`.
    pub fn unroll_backward(
        &self,
        cache: &UnrollCache,
        grad_final: &LstmState,
        grads: &mut LstmStack,
    ) -> Result<UnrollGrads> {
        if grad_final.layers() != self.layers.len() {
            return Err(Error::Shape("final-state gradient has the wrong layer count".into()));
        }
        if cache.steps.iter().any(|s| s.len() != self.layers.len()) {
            return Err(Error::Cache("unroll cache layer count differs from stack".into()));
        }
        let mut dh = grad_final.h.clone();
        let mut dc = grad_final.c.clone();
        let mut dinputs = vec![Array2::zeros((0, 0)); cache.steps.len()];
        for (t, step) in cache.steps.iter().enumerate().rev() {
            // gradient arriving from the layer above at this step
            let mut from_above: Option<Array2<f64>> = None;
            for k in (0..self.layers.len()).rev() {
                let mut gh = std::mem::replace(&mut dh[k], Array2::zeros((0, 0)));
                if let Some(a) = from_above.take() {
                    gh += &a;
                }
                let (dx, dhp, dcp) =
                    self.layers[k].cell_backward(&step[k], gh.view(), dc[k].view(), &mut grads.layers[k])?;
                dh[k] = dhp;
                dc[k] = dcp;
                from_above = Some(dx);
            }
            dinputs[t] = from_above.expect("at least one layer");
        }
        Ok(UnrollGrads {
            init: LstmState { h: dh, c: dc },
            inputs: dinputs,
        })
    }
}

impl ParamSet for LstmLayer {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![slice2(&self.w_ih), slice2(&self.w_hh), self.bias.as_slice().unwrap()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice2_mut(&mut self.w_ih),
            slice2_mut(&mut self.w_hh),
            self.bias.as_slice_mut().unwrap(),
        ]
    }

    fn layout(&self) -> Vec<TensorInfo> {
        vec![
            TensorInfo {
                name: "w_ih".into(),
                shape: shape2(&self.w_ih),
            },
            TensorInfo {
                name: "w_hh".into(),
                shape: shape2(&self.w_hh),
            },
            TensorInfo {
                name: "bias".into(),
                shape: vec![self.bias.len()],
            },
        ]
    }
}

impl ParamSet for LstmStack {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    fn layout(&self) -> Vec<TensorInfo> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.layout().into_iter().map(move |t| TensorInfo {
                    name: format!("layer{i}.{}", t.name),
                    shape: t.shape,
                })
            })
            .collect()
    }
}
