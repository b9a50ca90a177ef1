use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernels::{matmul, transpose};
use super::{softplus, softplus_derivative, Field};
use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Rows evaluated per kernel pass; bounds the activation trace memory.
const CHUNK_ROWS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Geometric,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    /// Recognized so configurations naming it fail loudly; not implemented.
    Sine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    /// Number of hidden layers.
    pub depth: usize,
    pub width: usize,
    /// Hidden layer whose input is the previous activation concatenated with
    /// the network input.
    pub skip_layer: usize,
    pub softplus_beta: f64,
    pub input_dim: usize,
    pub activation: Activation,
    pub init_mode: InitMode,
    pub init_sphere_radius: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            depth: 8,
            width: 512,
            skip_layer: 4,
            softplus_beta: 1000.0,
            input_dim: 3,
            activation: Activation::Softplus,
            init_mode: InitMode::Geometric,
            init_sphere_radius: 1.0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.depth < 2 {
            return fail(format!("depth must be at least 2, got {}", self.depth));
        }
        if !(1 < self.skip_layer && self.skip_layer < self.depth) {
            return fail(format!(
                "skip_layer must satisfy 1 < skip_layer < depth, got {} with depth {}",
                self.skip_layer, self.depth
            ));
        }
        if !(self.softplus_beta > 0.0 && self.softplus_beta.is_finite()) {
            return fail(format!("softplus_beta must be positive, got {}", self.softplus_beta));
        }
        if !matches!(self.input_dim, 2 | 3) {
            return fail(format!("input_dim must be 2 or 3, got {}", self.input_dim));
        }
        if self.width <= self.input_dim {
            return fail(format!("width {} must exceed input_dim", self.width));
        }
        if self.activation != Activation::Softplus {
            return fail("only the softplus activation is supported".into());
        }
        if !(self.init_sphere_radius > 0.0) {
            return fail("init_sphere_radius must be positive".into());
        }
        Ok(())
    }

    /// `(in, out)` of every linear map, the last one producing the scalar output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..=self.depth)
            .map(|l| {
                let input = if l == 0 { self.input_dim } else { self.width };
                let output = if l == self.depth {
                    1
                } else if l + 1 == self.skip_layer {
                    self.width - self.input_dim
                } else {
                    self.width
                };
                (input, output)
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out × in`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// `in × out` copy used by the forward pass.
    weight_t: Vec<f64>,
}

impl Linear {
    fn new(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        let weight_t = transpose(&weight, out_dim, in_dim);
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
            weight_t,
        }
    }

    fn refresh(&mut self) {
        self.weight_t = transpose(&self.weight, self.out_dim, self.in_dim);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    config: MlpConfig,
    layers: Vec<Linear>,
}

/// Parameter gradients, laid out like [`MlpParams`]: per layer a weight
/// tensor (`out × in`) followed by a bias tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub(crate) tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn from_tensors(tensors: Vec<Vec<f64>>) -> Self {
        Self { tensors }
    }

    /// Value at a flat parameter index (tensor order, row-major inside).
    pub fn get(&self, mut index: usize) -> f64 {
        for t in &self.tensors {
            if index < t.len() {
                return t[index];
            }
            index -= t.len();
        }
        panic!("gradient index out of range");
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

struct Trace {
    /// Input of every linear map.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of every linear map.
    pre: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn init(config: &MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(l, &(in_dim, out_dim))| {
                let (mean, std, bias) = match config.init_mode {
                    InitMode::Geometric if l == last => (
                        std::f64::consts::PI.sqrt() / (in_dim as f64).sqrt(),
                        1e-4,
                        -config.init_sphere_radius,
                    ),
                    InitMode::Geometric => (0.0, 2f64.sqrt() / (out_dim as f64).sqrt(), 0.0),
                    InitMode::Random if l == last => (0.0, (1.0 / in_dim as f64).sqrt(), 0.0),
                    InitMode::Random => (0.0, (2.0 / in_dim as f64).sqrt(), 0.0),
                };
                let normal = Normal::new(mean, std).expect("positive std");
                let weight = (0..in_dim * out_dim).map(|_| normal.sample(&mut rng)).collect();
                Linear::new(in_dim, out_dim, weight, vec![bias; out_dim])
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    /// Rebuilds parameters from tensors in [`Gradients`] order.
    pub fn from_tensors(config: &MlpConfig, tensors: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if tensors.len() != 2 * shapes.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                2 * shapes.len(),
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(shapes.len());
        for (l, &(in_dim, out_dim)) in shapes.iter().enumerate() {
            let w = it.next().unwrap();
            let b = it.next().unwrap();
            if w.len() != in_dim * out_dim || b.len() != out_dim {
                return Err(Error::Shape(format!("layer {l} tensor sizes do not match {in_dim}x{out_dim}")));
            }
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("layer {l} holds non-finite values")));
            }
            layers.push(Linear::new(in_dim, out_dim, w, b));
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensor_lengths(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_lengths().iter().sum()
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            if index < layer.weight.len() {
                return (l, true, index);
            }
            index -= layer.weight.len();
            if index < layer.bias.len() {
                return (l, false, index);
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter at a flat index (same order as [`Gradients::get`]).
    pub fn parameter(&self, index: usize) -> f64 {
        let (l, is_w, i) = self.locate(index);
        let layer = &self.layers[l];
        if is_w {
            layer.weight[i]
        } else {
            layer.bias[i]
        }
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        let (l, is_w, i) = self.locate(index);
        let layer = &mut self.layers[l];
        if is_w {
            layer.weight[i] = value;
            let (r, c) = (i / layer.in_dim, i % layer.in_dim);
            layer.weight_t[c * layer.out_dim + r] = value;
        } else {
            layer.bias[i] = value;
        }
    }

    /// Applies `f(tensor_index, tensor)` to every parameter tensor, then
    /// refreshes derived layouts.
    pub(crate) fn update_tensors(&mut self, mut f: impl FnMut(usize, &mut [f64])) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            f(2 * l, &mut layer.weight);
            f(2 * l + 1, &mut layer.bias);
            layer.refresh();
        }
    }

    fn pack(&self, points: &[Point3]) -> Result<Vec<f64>> {
        let d = self.config.input_dim;
        let mut x = Vec::with_capacity(points.len() * d);
        for p in points {
            let coords = &p.as_slice()[..d];
            if coords.iter().any(|c| !c.is_finite()) {
                return Err(Error::Input(format!("non-finite input point {p:?}")));
            }
            x.extend_from_slice(coords);
        }
        Ok(x)
    }

    fn check_query(&self, q: &[f64]) -> Result<Point3> {
        if q.len() != self.config.input_dim {
            return Err(Error::Input(format!(
                "query has dimension {}, network expects {}",
                q.len(),
                self.config.input_dim
            )));
        }
        let mut p = Point3::zeros();
        p.as_mut_slice()[..q.len()].copy_from_slice(q);
        Ok(p)
    }

    fn activate(&self, pre: &[f64], rows: usize, width: usize, x: &[f64], skip: bool) -> Vec<f64> {
        let beta = self.config.softplus_beta;
        if !skip {
            return pre.iter().map(|&z| softplus(z, beta)).collect();
        }
        let d = self.config.input_dim;
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let mut a = Vec::with_capacity(rows * (width + d));
        for i in 0..rows {
            a.extend(pre[i * width..(i + 1) * width].iter().map(|&z| softplus(z, beta) * scale));
            a.extend(x[i * d..(i + 1) * d].iter().map(|&v| v * scale));
        }
        a
    }

    fn trace(&self, x: &[f64], rows: usize) -> Trace {
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        inputs.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                let prev = &self.layers[l - 1];
                let a = self.activate(&pre[l - 1], rows, prev.out_dim, x, l == self.config.skip_layer);
                inputs.push(a);
            }
            let mut z = vec![0.0; rows * layer.out_dim];
            matmul(&inputs[l], rows, layer.in_dim, &layer.weight_t, layer.out_dim, &mut z);
            for row in z.chunks_exact_mut(layer.out_dim) {
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            pre.push(z);
        }
        Trace { inputs, pre }
    }

    /// Propagates `delta` (gradient w.r.t. the pre-activation of `layer`)
    /// to the pre-activation of `layer - 1`, stripping and returning the part
    /// that flows into the skip input.
    fn backprop_layer(&self, trace: &Trace, layer: usize, delta: &[f64], rows: usize) -> (Vec<f64>, Option<Vec<f64>>) {
        let lin = &self.layers[layer];
        let mut grad_in = vec![0.0; rows * lin.in_dim];
        matmul(delta, rows, lin.out_dim, &lin.weight, lin.in_dim, &mut grad_in);
        let d = self.config.input_dim;
        let mut skip_part = None;
        let prev_out = self.layers[layer - 1].out_dim;
        let mut grad_h = if layer == self.config.skip_layer {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let mut gx = Vec::with_capacity(rows * d);
            let mut gh = Vec::with_capacity(rows * prev_out);
            for row in grad_in.chunks_exact(lin.in_dim) {
                gh.extend(row[..prev_out].iter().map(|v| v * s));
                gx.extend(row[prev_out..].iter().map(|v| v * s));
            }
            skip_part = Some(gx);
            gh
        } else {
            grad_in
        };
        let beta = self.config.softplus_beta;
        for (g, &z) in grad_h.iter_mut().zip(&trace.pre[layer - 1]) {
            *g *= softplus_derivative(z, beta);
        }
        (grad_h, skip_part)
    }

    fn values_chunk(&self, x: &[f64], rows: usize) -> Vec<f64> {
        self.trace(x, rows).pre.pop().expect("at least one layer")
    }

    fn gradients_chunk(&self, x: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        let trace = self.trace(x, rows);
        let d = self.config.input_dim;
        let last = self.layers.len() - 1;
        let mut grad_x = vec![0.0; rows * d];
        let mut delta = vec![1.0; rows];
        for layer in (1..=last).rev() {
            let (next, skip) = self.backprop_layer(&trace, layer, &delta, rows);
            if let Some(gx) = skip {
                for (a, b) in grad_x.iter_mut().zip(gx) {
                    *a += b;
                }
            }
            delta = next;
        }
        let first = &self.layers[0];
        let mut g0 = vec![0.0; rows * d];
        matmul(&delta, rows, first.out_dim, &first.weight, d, &mut g0);
        // Skip term first, then first-layer term: fixed order per row.
        for (a, b) in grad_x.iter_mut().zip(g0) {
            *a += b;
        }
        (trace.pre[last].clone(), grad_x)
    }

    pub fn forward(&self, q: &[f64]) -> Result<f64> {
        let p = self.check_query(q)?;
        Ok(self.forward_batch(&[p])?[0])
    }

    pub fn forward_batch(&self, points: &[Point3]) -> Result<Vec<f64>> {
        let x = self.pack(points)?;
        let d = self.config.input_dim;
        let parts: Vec<Vec<f64>> = x
            .par_chunks(CHUNK_ROWS * d)
            .map(|chunk| self.values_chunk(chunk, chunk.len() / d))
            .collect();
        Ok(parts.concat())
    }

    pub fn input_gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let p = self.check_query(q)?;
        let g = self.input_gradients(&[p])?[0];
        Ok(g.as_slice()[..self.config.input_dim].to_vec())
    }

    /// Field value and exact gradient with respect to the input at every point.
    pub fn values_and_gradients(&self, points: &[Point3]) -> Result<Vec<(f64, Point3)>> {
        let x = self.pack(points)?;
        let d = self.config.input_dim;
        let parts: Vec<Vec<(f64, Point3)>> = x
            .par_chunks(CHUNK_ROWS * d)
            .map(|chunk| {
                let rows = chunk.len() / d;
                let (v, g) = self.gradients_chunk(chunk, rows);
                (0..rows)
                    .map(|i| {
                        let mut p = Point3::zeros();
                        p.as_mut_slice()[..d].copy_from_slice(&g[i * d..(i + 1) * d]);
                        (v[i], p)
                    })
                    .collect()
            })
            .collect();
        Ok(parts.concat())
    }

    pub fn input_gradients(&self, points: &[Point3]) -> Result<Vec<Point3>> {
        Ok(self.values_and_gradients(points)?.into_iter().map(|(_, g)| g).collect())
    }

    pub fn normalized_gradient(&self, q: &[f64]) -> Result<super::UnitGradient> {
        let p = self.check_query(q)?;
        Ok(self.unit_gradients(&[p])?[0])
    }

    /// Mean squared residual `(1/n)·Σ (target − f(q))²` and its exact gradient
    /// with respect to every parameter. Targets are constants.
    pub fn loss_and_param_gradients(&self, queries: &[(Point3, f64)]) -> Result<(f64, Gradients)> {
        if queries.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let rows = queries.len();
        let points: Vec<Point3> = queries.iter().map(|q| q.0).collect();
        let x = self.pack(&points)?;
        let trace = self.trace(&x, rows);
        let last = self.layers.len() - 1;
        let values = &trace.pre[last];
        let n = rows as f64;
        let mut loss = 0.0;
        let mut delta = Vec::with_capacity(rows);
        for (&(_, target), &f) in queries.iter().zip(values) {
            let r = target - f;
            loss += r * r;
            delta.push(-2.0 * r / n);
        }
        loss /= n;

        let mut tensors = vec![Vec::new(); 2 * self.layers.len()];
        for layer in (0..=last).rev() {
            let lin = &self.layers[layer];
            let delta_t = transpose(&delta, rows, lin.out_dim);
            let mut gw = vec![0.0; lin.out_dim * lin.in_dim];
            matmul(&delta_t, lin.out_dim, rows, &trace.inputs[layer], lin.in_dim, &mut gw);
            let gb = delta_t
                .chunks_exact(rows)
                .map(|col| col.iter().fold(0.0, |s, v| s + v))
                .collect();
            tensors[2 * layer] = gw;
            tensors[2 * layer + 1] = gb;
            if layer > 0 {
                delta = self.backprop_layer(&trace, layer, &delta, rows).0;
            }
        }
        Ok((loss, Gradients { tensors }))
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self.tensor_lengths().into_iter().map(|n| vec![0.0; n]).collect(),
        }
    }
}

impl Field for MlpParams {
    fn dim(&self) -> usize {
        self.config.input_dim
    }

    fn values(&self, points: &[Point3]) -> Result<Vec<f64>> {
        self.forward_batch(points)
    }

    fn gradients(&self, points: &[Point3]) -> Result<Vec<Point3>> {
        self.input_gradients(points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small(dim: usize, mode: InitMode) -> MlpConfig {
        MlpConfig {
            depth: 4,
            width: 24,
            skip_layer: 2,
            softplus_beta: 10.0,
            input_dim: dim,
            init_mode: mode,
            ..MlpConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(MlpConfig::default().validate().is_ok());
        let bad = |f: fn(&mut MlpConfig)| {
            let mut c = MlpConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.depth = 1));
        assert!(bad(|c| c.skip_layer = 1));
        assert!(bad(|c| c.skip_layer = 8));
        assert!(bad(|c| c.softplus_beta = 0.0));
        assert!(bad(|c| c.input_dim = 4));
        assert!(bad(|c| c.activation = Activation::Sine));
    }

    #[test]
    fn default_architecture_shapes() {
        let c = MlpConfig::default();
        let shapes = c.layer_shapes();
        assert_eq!(shapes.len(), 9);
        assert_eq!(shapes[0], (3, 512));
        assert_eq!(shapes[3], (512, 509));
        assert_eq!(shapes[4], (512, 512));
        assert_eq!(shapes[8], (512, 1));
        // Roughly the 1.8M parameters of the reference architecture.
        let n = c.parameter_count();
        assert!((1_700_000..1_900_000).contains(&n), "{n}");
    }

    #[test]
    fn same_seed_same_bits() {
        let c = small(3, InitMode::Geometric);
        let a = MlpParams::init(&c, 7).unwrap();
        let b = MlpParams::init(&c, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, MlpParams::init(&c, 8).unwrap());
    }

    #[test]
    fn batch_equals_singles_bitwise() {
        let c = small(3, InitMode::Geometric);
        let p = MlpParams::init(&c, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..100)
            .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let batch = p.forward_batch(&pts).unwrap();
        for (q, v) in pts.iter().zip(&batch) {
            assert_eq!(p.forward(q.as_slice()).unwrap().to_bits(), v.to_bits());
        }
        let grads = p.input_gradients(&pts).unwrap();
        for (q, g) in pts.iter().zip(&grads) {
            assert_eq!(p.input_gradient(q.as_slice()).unwrap(), g.as_slice().to_vec());
        }
    }

    #[test]
    fn non_finite_and_wrong_dimension_rejected() {
        let p = MlpParams::init(&small(3, InitMode::Geometric), 1).unwrap();
        assert!(matches!(p.forward(&[f64::NAN, 0.0, 0.0]), Err(Error::Input(_))));
        assert!(matches!(p.forward(&[0.0, 0.0]), Err(Error::Input(_))));
        assert!(p.input_gradient(&[0.0, f64::INFINITY, 0.0]).is_err());
    }

    /// One hidden layer of width 1 plus output, checked against the chain
    /// rule written out by hand.
    #[test]
    fn tiny_network_gradient_closed_form() {
        let config = MlpConfig {
            depth: 3,
            width: 3,
            skip_layer: 2,
            softplus_beta: 2.0,
            input_dim: 2,
            ..MlpConfig::default()
        };
        let shapes = config.layer_shapes();
        assert_eq!(shapes, vec![(2, 3), (3, 1), (3, 3), (3, 1)]);
        // Layer 0: 2→3, layer 1: 3→1 (feeds skip), layer 2: [h, x]/√2 → 3, layer 3: 3→1.
        let w0 = vec![0.3, -0.2, 0.1, 0.4, -0.5, 0.2];
        let b0 = vec![0.05, -0.1, 0.0];
        let w1 = vec![0.7, -0.3, 0.2];
        let b1 = vec![0.1];
        let w2 = vec![0.2, 0.4, -0.6, -0.1, 0.3, 0.5, 0.6, -0.2, 0.1];
        let b2 = vec![0.0, 0.2, -0.1];
        let w3 = vec![0.5, -0.4, 0.3];
        let b3 = vec![-0.2];
        let p = MlpParams::from_tensors(
            &config,
            vec![w0.clone(), b0.clone(), w1.clone(), b1.clone(), w2.clone(), b2.clone(), w3.clone(), b3.clone()],
        )
        .unwrap();
        let x = [0.3, -0.7];
        let beta = 2.0;
        let sp = |z: f64| softplus(z, beta);
        let ds = |z: f64| softplus_derivative(z, beta);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let z0: Vec<f64> = (0..3).map(|j| b0[j] + w0[2 * j] * x[0] + w0[2 * j + 1] * x[1]).collect();
        let a1: Vec<f64> = z0.iter().map(|&z| sp(z)).collect();
        let z1 = b1[0] + (0..3).map(|k| w1[k] * a1[k]).sum::<f64>();
        let a2 = [sp(z1) * s, x[0] * s, x[1] * s];
        let z2: Vec<f64> = (0..3).map(|j| b2[j] + (0..3).map(|k| w2[3 * j + k] * a2[k]).sum::<f64>()).collect();
        let a3: Vec<f64> = z2.iter().map(|&z| sp(z)).collect();
        let f = b3[0] + (0..3).map(|k| w3[k] * a3[k]).sum::<f64>();
        assert!((p.forward(&x).unwrap() - f).abs() < 1e-14);

        // df/da2[k] = Σ_j w3[j]·σ'(z2[j])·w2[j,k]
        let dz2: Vec<f64> = (0..3).map(|j| w3[j] * ds(z2[j])).collect();
        let da2: Vec<f64> = (0..3).map(|k| (0..3).map(|j| dz2[j] * w2[3 * j + k]).sum()).collect();
        let dz1 = da2[0] * s * ds(z1);
        let dz0: Vec<f64> = (0..3).map(|k| dz1 * w1[k] * ds(z0[k])).collect();
        let grad: Vec<f64> = (0..2)
            .map(|i| da2[1 + i] * s + (0..3).map(|j| dz0[j] * w0[2 * j + i]).sum::<f64>())
            .collect();
        let g = p.input_gradient(&x).unwrap();
        for i in 0..2 {
            assert!((g[i] - grad[i]).abs() < 1e-14, "{g:?} vs {grad:?}");
        }
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let p = MlpParams::init(&small(3, InitMode::Geometric), 2).unwrap();
        let pts = [Point3::new(0.1, 0.2, 0.3), Point3::new(-0.5, 0.4, 0.0), Point3::new(0.9, -0.9, 0.2)];
        let vals = p.forward_batch(&pts).unwrap();
        let q: Vec<(Point3, f64)> = pts.iter().copied().zip(vals).collect();
        let (loss, grads) = p.loss_and_param_gradients(&q).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn doubled_residuals_quadruple_loss() {
        let p = MlpParams::init(&small(2, InitMode::Geometric), 2).unwrap();
        let pts = [Point3::new(0.1, 0.2, 0.0), Point3::new(-0.5, 0.4, 0.0)];
        let vals = p.forward_batch(&pts).unwrap();
        let one: Vec<(Point3, f64)> = pts.iter().zip(&vals).map(|(x, v)| (*x, v + 0.25)).collect();
        let two: Vec<(Point3, f64)> = pts.iter().zip(&vals).map(|(x, v)| (*x, v + 0.5)).collect();
        let (l1, _) = p.loss_and_param_gradients(&one).unwrap();
        let (l2, _) = p.loss_and_param_gradients(&two).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-12 * l2);
        assert!(matches!(p.loss_and_param_gradients(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn set_parameter_moves_forward() {
        let mut p = MlpParams::init(&small(3, InitMode::Geometric), 4).unwrap();
        let q = [0.2, 0.1, -0.3];
        let before = p.forward(&q).unwrap();
        let idx = p.parameter_count() - 1;
        let b = p.parameter(idx);
        p.set_parameter(idx, b + 0.5);
        assert!((p.forward(&q).unwrap() - before - 0.5).abs() < 1e-12);
    }
}
