//! Dense layers, MLPs and the parameter plumbing shared by every learned
//! component.
//!
//! Layers work on row-major batches: an input batch is `(rows, in_dim)` and a
//! layer computes `act(x · Wᵀ + b)` with `W` shaped `(out_dim, in_dim)`.
//! Single-vector calls are one-row batches.
//!
//! Gradients live in containers of the same type as the parameters they belong
//! to (an [`Mlp`] of gradients for an [`Mlp`] of weights), so shapes match by
//! construction.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z`, given the already computed output `y`.
    #[inline]
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Layer widths (input first) and one activation per transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let spec = MlpSpec {
            layer_dims,
            activations,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// ReLU on hidden layers, identity on the output layer.
    pub fn relu_hidden(layer_dims: Vec<usize>) -> Result<Self> {
        let n = layer_dims.len().saturating_sub(1);
        let activations = (0..n)
            .map(|i| {
                if i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                }
            })
            .collect();
        Self::new(layer_dims, activations)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Spec("an MLP needs at least an input and an output width".into()));
        }
        if self.activations.len() != self.layer_dims.len() - 1 {
            return Err(Error::Spec(format!(
                "{} widths need {} activations, got {}",
                self.layer_dims.len(),
                self.layer_dims.len() - 1,
                self.activations.len()
            )));
        }
        if let Some(i) = self.layer_dims.iter().position(|&d| d == 0) {
            return Err(Error::Spec(format!("layer width {i} is zero")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }
}

/// One fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `(out_dim, in_dim)`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    /// Uniform Glorot weights, zero bias.
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = glorot_bound(in_dim, out_dim);
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || rng.random_range(-bound..=bound));
        DenseLayer {
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Returns `(pre_activation, output)`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "dense layer expects {} inputs, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        let act = self.activation;
        let y = z.mapv(|v| act.apply(v));
        Ok((z, y))
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward_batch(
        &self,
        x: ArrayView2<'_, f64>,
        z: &Array2<f64>,
        y: &Array2<f64>,
        grad_y: ArrayView2<'_, f64>,
        grads: &mut DenseLayer,
    ) -> Array2<f64> {
        let act = self.activation;
        let mut dz = grad_y.to_owned();
        if act != Activation::Identity {
            ndarray::Zip::from(&mut dz)
                .and(z)
                .and(y)
                .for_each(|d, &zv, &yv| *d *= act.derivative(zv, yv));
        }
        general_mat_mul(1.0, &dz.t(), &x, 1.0, &mut grads.weights);
        grads.bias += &dz.sum_axis(Axis(0));
        dz.dot(&self.weights)
    }
}

pub fn glorot_bound(in_dim: usize, out_dim: usize) -> f64 {
    (6.0 / (in_dim + out_dim) as f64).sqrt()
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Per-layer inputs and pre/post activations of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn rows(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }

    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("non-empty cache")
    }
}

impl Mlp {
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(spec, &mut rng)
    }

    pub fn init_with_rng<R: Rng>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims
            .windows(2)
            .zip(&spec.activations)
            .map(|(w, &act)| DenseLayer::glorot(w[0], w[1], act, rng))
            .collect();
        Ok(Mlp { layers })
    }

    pub fn spec(&self) -> MlpSpec {
        let mut dims = vec![self.layers[0].in_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim()));
        MlpSpec {
            layer_dims: dims,
            activations: self.layers.iter().map(|l| l.activation).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let xb = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        let (y, cache) = self.forward_batch(xb)?;
        Ok((y.into_raw_vec_and_offset().0, cache))
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, MlpCache)> {
        let n = self.layers.len();
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            post: Vec::with_capacity(n),
        };
        let mut cur = x.to_owned();
        for layer in &self.layers {
            let (z, y) = layer.forward_batch(cur.view())?;
            cache.inputs.push(cur);
            cache.pre.push(z);
            cur = y.clone();
            cache.post.push(y);
        }
        Ok((cur, cache))
    }

    /// Returns fresh parameter gradients and the input gradient.
    pub fn backward(&self, cache: &MlpCache, grad_y: &[f64]) -> Result<(Mlp, Vec<f64>)> {
        let gy = ArrayView2::from_shape((1, grad_y.len()), grad_y).expect("contiguous slice");
        let mut grads = self.zeros_like();
        let gx = self.backward_batch(cache, gy, &mut grads)?;
        Ok((grads, gx.into_raw_vec_and_offset().0))
    }

    /// Accumulates into `grads`; returns the gradient with respect to the batch input.
    pub fn backward_batch(
        &self,
        cache: &MlpCache,
        grad_y: ArrayView2<'_, f64>,
        grads: &mut Mlp,
    ) -> Result<Array2<f64>> {
        self.check_cache(cache)?;
        if grad_y.dim() != cache.output().dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_y.dim(),
                cache.output().dim()
            )));
        }
        let mut g = grad_y.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward_batch(
                cache.inputs[i].view(),
                &cache.pre[i],
                &cache.post[i],
                g.view(),
                &mut grads.layers[i],
            );
        }
        Ok(g)
    }

    fn check_cache(&self, cache: &MlpCache) -> Result<()> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Cache(format!(
                "cache has {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if cache.inputs[i].ncols() != layer.in_dim() || cache.pre[i].ncols() != layer.out_dim() {
                return Err(Error::Cache(format!("layer {i} shape differs from cached pass")));
            }
        }
        Ok(())
    }
}

/// Shape and name of one tensor in a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// A fixed collection of named f64 tensors: learnable weights, or the
/// gradients for them.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    fn layout(&self) -> Vec<TensorInfo>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha * other`
    fn axpy(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= alpha;
            }
        }
    }

    fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

pub(crate) fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are kept in standard layout")
}

pub(crate) fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are kept in standard layout")
}

pub(crate) fn shape2(a: &Array2<f64>) -> Vec<usize> {
    a.shape().to_vec()
}

impl ParamSet for DenseLayer {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![slice2(&self.weights), self.bias.as_slice().unwrap()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![slice2_mut(&mut self.weights), self.bias.as_slice_mut().unwrap()]
    }

    fn layout(&self) -> Vec<TensorInfo> {
        vec![
            TensorInfo {
                name: "weights".into(),
                shape: shape2(&self.weights),
            },
            TensorInfo {
                name: "bias".into(),
                shape: vec![self.bias.len()],
            },
        ]
    }
}

impl ParamSet for Mlp {
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

/// Central-difference gradient of `f` at `params`, one entry at a time.
pub fn finite_diff_grad<P, F>(mut f: F, params: &P, eps: f64) -> Result<P>
where
    P: ParamSet,
    F: FnMut(&P) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Input(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut work = params.clone();
    let mut grads = params.zeros_like();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (ti, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let orig = work.tensors()[ti][j];
            work.tensors_mut()[ti][j] = orig + eps;
            let up = f(&work);
            work.tensors_mut()[ti][j] = orig - eps;
            let down = f(&work);
            work.tensors_mut()[ti][j] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective not finite while perturbing tensor {ti} entry {j}"
                )));
            }
            grads.tensors_mut()[ti][j] = (up - down) / (2.0 * eps);
        }
    }
    Ok(grads)
}

/// A bare vector as a single-tensor parameter set. Handy for checking
/// gradients with respect to inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(pub Vec<f64>);

impl ParamSet for FlatParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.0]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.0]
    }

    fn layout(&self) -> Vec<TensorInfo> {
        vec![TensorInfo {
            name: "values".into(),
            shape: vec![self.0.len()],
        }]
    }
}

/// Largest elementwise relative error, with `floor` guarding near-zero entries.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_mlp(dims: Vec<usize>, acts: Vec<Activation>, seed: u64) -> Mlp {
        let spec = MlpSpec::new(dims, acts).unwrap();
        let mut m = Mlp::init(&spec, seed).unwrap();
        // non-zero biases so every path is exercised
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        for l in &mut m.layers {
            l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        m
    }

    /// Straight-line forward pass written without the layer abstraction.
    fn reference_forward(m: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in &m.layers {
            let mut next = vec![0.0; l.out_dim()];
            for o in 0..l.out_dim() {
                let mut s = l.bias[o];
                for i in 0..l.in_dim() {
                    s += l.weights[[o, i]] * cur[i];
                }
                next[o] = match l.activation {
                    Activation::Identity => s,
                    Activation::Relu => {
                        if s > 0.0 {
                            s
                        } else {
                            0.0
                        }
                    }
                    Activation::Tanh => s.tanh(),
                    Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer {
            weights: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
        };
        let m = Mlp { layers: vec![layer] };
        let (y, _) = m.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let m = Mlp {
            layers: vec![DenseLayer {
                weights: array![[1.0, 1.0]],
                bias: array![0.0],
                activation: Activation::Sigmoid,
            }],
        };
        let (y, _) = m.forward(&[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![0.5]);
    }

    #[test]
    fn forward_matches_straight_line_reference() {
        let m = random_mlp(vec![3, 5, 2], vec![Activation::Tanh, Activation::Sigmoid], 42);
        let x = [0.3, -1.2, 0.7];
        let (y, _) = m.forward(&x).unwrap();
        let want = reference_forward(&m, &x);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let m = random_mlp(vec![3, 2], vec![Activation::Identity], 1);
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn linear_layer_backward_has_outer_product_form() {
        let w = array![[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]];
        let m = Mlp {
            layers: vec![DenseLayer {
                weights: w.clone(),
                bias: array![0.0, 0.0],
                activation: Activation::Identity,
            }],
        };
        let x = [1.0, -2.0, 0.5];
        let g = [0.7, -1.1];
        let (_, cache) = m.forward(&x).unwrap();
        let (grads, gx) = m.backward(&cache, &g).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(grads.layers[0].weights[[o, i]], g[o] * x[i]);
            }
        }
        for i in 0..3 {
            let want = w[[0, i]] * g[0] + w[[1, i]] * g[1];
            assert!((gx[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let m = random_mlp(vec![4, 6, 3], vec![Activation::Relu, Activation::Tanh], 3);
        let (_, cache) = m.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let (grads, gx) = m.backward(&cache, &[0.0; 3]).unwrap();
        assert!(grads.to_flat().iter().all(|&v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let a = random_mlp(vec![3, 4, 2], vec![Activation::Relu, Activation::Identity], 1);
        let b = random_mlp(vec![3, 5, 2], vec![Activation::Relu, Activation::Identity], 1);
        let (_, cache) = a.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(b.backward(&cache, &[1.0, 1.0]), Err(Error::Cache(_))));
    }

    #[test]
    fn backward_matches_finite_differences_for_every_activation() {
        let acts = [
            Activation::Identity,
            Activation::Relu,
            Activation::Tanh,
            Activation::Sigmoid,
        ];
        for seed in 0..10u64 {
            for &act in &acts {
                let m = random_mlp(vec![3, 5, 2], vec![act, act], seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let c: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let loss = |p: &Mlp| {
                    let (y, _) = p.forward(&x).unwrap();
                    y.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
                };
                let (_, cache) = m.forward(&x).unwrap();
                let (grads, gx) = m.backward(&cache, &c).unwrap();
                let fd = finite_diff_grad(loss, &m, 1e-6).unwrap();
                let err = max_rel_error(&grads.to_flat(), &fd.to_flat(), 1e-6);
                assert!(err < 1e-4, "seed {seed} {act:?}: rel err {err}");

                let fx = finite_diff_grad(
                    |xp: &FlatParams| {
                        let (y, _) = m.forward(&xp.0).unwrap();
                        y.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
                    },
                    &FlatParams(x.clone()),
                    1e-6,
                )
                .unwrap();
                assert!(max_rel_error(&gx, &fx.0, 1e-6) < 1e-4);
            }
        }
    }

    #[test]
    fn multi_layer_backward_equals_chained_single_layers() {
        let m = random_mlp(vec![3, 4, 2], vec![Activation::Tanh, Activation::Sigmoid], 9);
        let x = [0.2, -0.4, 0.9];
        let g = [1.0, -0.5];
        let (_, cache) = m.forward(&x).unwrap();
        let (grads, gx) = m.backward(&cache, &g).unwrap();

        let first = Mlp {
            layers: vec![m.layers[0].clone()],
        };
        let second = Mlp {
            layers: vec![m.layers[1].clone()],
        };
        let (h, c1) = first.forward(&x).unwrap();
        let (_, c2) = second.forward(&h).unwrap();
        let (g2, gh) = second.backward(&c2, &g).unwrap();
        let (g1, gx1) = first.backward(&c1, &gh).unwrap();
        assert_eq!(grads.layers[0], g1.layers[0]);
        assert_eq!(grads.layers[1], g2.layers[0]);
        assert_eq!(gx, gx1);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let spec = MlpSpec::relu_hidden(vec![8, 30, 20]).unwrap();
        let a = Mlp::init(&spec, 7).unwrap();
        let b = Mlp::init(&spec, 7).unwrap();
        let c = Mlp::init(&spec, 8).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        assert_ne!(a.to_flat(), c.to_flat());
    }

    #[test]
    fn glorot_bound_holds_for_encoder_layer() {
        let bound = glorot_bound(300, 200);
        assert!((bound - (6.0f64 / 500.0).sqrt()).abs() < 1e-15);
        assert!((bound - 0.1095).abs() < 1e-4);
        let spec = MlpSpec::relu_hidden(vec![300, 200]).unwrap();
        let m = Mlp::init(&spec, 0).unwrap();
        let max = m.layers[0].weights.iter().fold(0.0f64, |a, w| a.max(w.abs()));
        assert!(max <= bound);
        assert!(m.layers[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_width_layer_is_a_spec_error() {
        assert!(matches!(MlpSpec::relu_hidden(vec![4, 0, 2]), Err(Error::Spec(_))));
        assert!(MlpSpec::new(vec![4, 2], vec![]).is_err());
    }

    #[test]
    fn finite_diff_of_sum_is_one() {
        let p = FlatParams(vec![0.5, -2.0, 3.0]);
        let g = finite_diff_grad(|q: &FlatParams| q.0.iter().sum(), &p, 1e-6).unwrap();
        assert!(g.0.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn finite_diff_of_half_square_norm_is_identity() {
        let p = FlatParams(vec![0.5, -2.0, 3.0]);
        let g = finite_diff_grad(
            |q: &FlatParams| 0.5 * q.0.iter().map(|v| v * v).sum::<f64>(),
            &p,
            1e-6,
        )
        .unwrap();
        for (a, b) in g.0.iter().zip(&p.0) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn finite_diff_surfaces_non_finite_objective() {
        let p = FlatParams(vec![1.0]);
        let r = finite_diff_grad(|_: &FlatParams| f64::NAN, &p, 1e-6);
        assert!(matches!(r, Err(Error::Numeric(_))));
        assert!(finite_diff_grad(|_: &FlatParams| 0.0, &p, 0.0).is_err());
    }
}
