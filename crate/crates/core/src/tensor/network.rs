use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::{self, conv_out, ConvDims};
use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One layer of a sequential network. Convolutions are 3×3, padding 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    /// Flattens its input and maps it to `out_features` values.
    Affine { out_features: usize },
    Conv2d { out_channels: usize, stride: usize },
    /// Stride 2 uses output padding 1, so the spatial size exactly doubles.
    TransposedConv2d { out_channels: usize, stride: usize },
    LayerNorm,
    LeakyRelu { slope: f64 },
    Sigmoid,
    /// Shape-only reinterpretation of the per-sample values.
    Reshape { shape: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Per-sample input shape (no batch axis).
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Named parameter tensors, ordered by layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T = f32> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Element-wise `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

enum LayerCache<T> {
    Input(Vec<T>),
    Cols(Vec<T>),
    Norm { xhat: Vec<T>, inv: Vec<T> },
    Output(Vec<T>),
    None,
}

/// Activations recorded by [`Network::forward_cached`].
pub struct ForwardCache<T> {
    batch: usize,
    layers: Vec<LayerCache<T>>,
}

/// A validated [`NetworkSpec`] with its per-layer shapes resolved.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
    params: Vec<Range<usize>>,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        if spec.input_shape.is_empty() || spec.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("invalid input shape {:?}", spec.input_shape)));
        }
        let mut shapes = vec![spec.input_shape.clone()];
        let mut params = Vec::with_capacity(spec.layers.len());
        let mut next_param = 0;
        for (i, layer) in spec.layers.iter().enumerate() {
            let input = shapes.last().expect("nonempty");
            let size: usize = input.iter().product();
            let (out, n_params) = match layer {
                LayerSpec::Affine { out_features } => {
                    if *out_features == 0 {
                        return Err(Error::Config(format!("layer {i}: affine with zero outputs")));
                    }
                    (vec![*out_features], 2)
                }
                LayerSpec::Conv2d { out_channels, stride } | LayerSpec::TransposedConv2d { out_channels, stride } => {
                    if input.len() != 3 {
                        return Err(Error::Config(format!("layer {i}: convolution needs [C,H,W] input, got {input:?}")));
                    }
                    if !matches!(stride, 1 | 2) {
                        return Err(Error::Config(format!("layer {i}: stride {stride} not in {{1,2}}")));
                    }
                    if *out_channels == 0 {
                        return Err(Error::Config(format!("layer {i}: zero output channels")));
                    }
                    let (h, w) = (input[1], input[2]);
                    let out = if matches!(layer, LayerSpec::Conv2d { .. }) {
                        vec![*out_channels, conv_out(h, *stride), conv_out(w, *stride)]
                    } else {
                        vec![*out_channels, h * stride, w * stride]
                    };
                    (out, 2)
                }
                LayerSpec::LayerNorm => (input.clone(), 2),
                LayerSpec::LeakyRelu { slope } => {
                    if !(*slope > 0.0 && slope.is_finite()) {
                        return Err(Error::Config(format!("layer {i}: leaky-relu slope must be positive")));
                    }
                    (input.clone(), 0)
                }
                LayerSpec::Sigmoid => (input.clone(), 0),
                LayerSpec::Reshape { shape } => {
                    if shape.iter().product::<usize>() != size || shape.contains(&0) {
                        return Err(Error::Config(format!("layer {i}: cannot reshape {input:?} to {shape:?}")));
                    }
                    (shape.clone(), 0)
                }
            };
            params.push(next_param..next_param + n_params);
            next_param += n_params;
            shapes.push(out);
        }
        Ok(Self { spec, shapes, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("nonempty")
    }

    /// Parameter names and shapes in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let input = &self.shapes[i];
            let output = &self.shapes[i + 1];
            match layer {
                LayerSpec::Affine { out_features } => {
                    out.push((format!("{i}.weight"), vec![*out_features, input.iter().product()]));
                    out.push((format!("{i}.bias"), vec![*out_features]));
                }
                LayerSpec::Conv2d { out_channels, .. } => {
                    out.push((format!("{i}.weight"), vec![*out_channels, input[0], 3, 3]));
                    out.push((format!("{i}.bias"), vec![*out_channels]));
                }
                LayerSpec::TransposedConv2d { out_channels, .. } => {
                    out.push((format!("{i}.weight"), vec![input[0], *out_channels, 3, 3]));
                    out.push((format!("{i}.bias"), vec![*out_channels]));
                }
                LayerSpec::LayerNorm => {
                    out.push((format!("{i}.gain"), vec![output[0]]));
                    out.push((format!("{i}.shift"), vec![output[0]]));
                }
                _ => {}
            }
        }
        out
    }

    /// Glorot-uniform weights, zero biases, unit norm gains.
    pub fn init_params<T: Real>(&self, rng: &mut Rng) -> ParamSet<T> {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in self.param_shapes() {
            let n: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with(".weight") {
                let (fan_in, fan_out) = if shape.len() == 4 {
                    (shape[1] * 9, shape[0] * 9)
                } else {
                    (shape[1], shape[0])
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect()
            } else if name.ends_with(".gain") {
                vec![T::one(); n]
            } else {
                vec![T::zero(); n]
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data).expect("consistent shape"));
        }
        ParamSet { names, tensors }
    }

    pub fn check_params<T: Real>(&self, params: &ParamSet<T>) -> Result<()> {
        let expected = self.param_shapes();
        if expected.len() != params.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.tensors.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&params.tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("parameter {name}: expected {shape:?}, got {:?}", t.shape())));
            }
        }
        Ok(())
    }

    fn check_input<T: Real>(&self, input: &Tensor<T>) -> Result<usize> {
        let shape = input.shape();
        if shape.len() != self.shapes[0].len() + 1 || shape[1..] != self.shapes[0][..] {
            return Err(Error::Shape(format!(
                "network expects [N, {:?}], got {:?}",
                self.shapes[0],
                shape
            )));
        }
        Ok(shape[0])
    }

    pub fn forward<T: Real>(&self, params: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(params, input, false).map(|(out, _)| out)
    }

    pub fn forward_cached<T: Real>(&self, params: &ParamSet<T>, input: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.run(params, input, true)
    }

    fn run<T: Real>(&self, params: &ParamSet<T>, input: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_params(params)?;
        let n = self.check_input(input)?;
        let mut x = input.data().to_vec();
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let (ins, outs) = (&self.shapes[i], &self.shapes[i + 1]);
            let p = &params.tensors[self.params[i].clone()];
            let (y, cache) = match layer {
                LayerSpec::Affine { out_features } => {
                    let fin: usize = ins.iter().product();
                    let y = layers::affine_forward(&x, n, fin, *out_features, p[0].data(), p[1].data());
                    (y, LayerCache::Input(x))
                }
                LayerSpec::Conv2d { stride, .. } => {
                    let d = dims(ins, outs, *stride);
                    let (y, cols) = layers::conv_forward(&x, n, &d, p[0].data(), p[1].data());
                    (y, LayerCache::Cols(cols))
                }
                LayerSpec::TransposedConv2d { stride, .. } => {
                    let d = ConvDims { cin: ins[0], cout: outs[0], h: ins[1], w: ins[2], oh: outs[1], ow: outs[2], stride: *stride };
                    let y = layers::tconv_forward(&x, n, &d, p[0].data(), p[1].data());
                    (y, LayerCache::Input(x))
                }
                LayerSpec::LayerNorm => {
                    let (y, xhat, inv) = layers::layer_norm_forward(&x, n, ins[0], p[0].data(), p[1].data());
                    (y, LayerCache::Norm { xhat, inv })
                }
                LayerSpec::LeakyRelu { slope } => {
                    let s = T::of(*slope);
                    let y = x.iter().map(|&v| if v > T::zero() { v } else { s * v }).collect();
                    (y, LayerCache::Input(x))
                }
                LayerSpec::Sigmoid => {
                    let y: Vec<T> = x.iter().map(|&v| layers::sigmoid(v)).collect();
                    let c = LayerCache::Output(y.clone());
                    (y, c)
                }
                LayerSpec::Reshape { .. } => (x, LayerCache::None),
            };
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: i, detail: "forward activation".into() });
            }
            caches.push(if keep { cache } else { LayerCache::None });
            x = y;
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.output_shape());
        Ok((Tensor::new(shape, x)?, ForwardCache { batch: n, layers: caches }))
    }

    /// Reverse pass. Returns parameter gradients and the input gradient.
    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        cache: &ForwardCache<T>,
        upstream: &Tensor<T>,
    ) -> Result<(ParamSet<T>, Tensor<T>)> {
        let n = cache.batch;
        let mut expected = vec![n];
        expected.extend_from_slice(self.output_shape());
        if upstream.shape() != expected.as_slice() {
            return Err(Error::Shape(format!("upstream gradient {:?}, expected {expected:?}", upstream.shape())));
        }
        let mut grads = params.zeros_like();
        let mut g = upstream.data().to_vec();
        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            let (ins, outs) = (&self.shapes[i], &self.shapes[i + 1]);
            let range = self.params[i].clone();
            let p = &params.tensors[range.clone()];
            let gp = &mut grads.tensors[range];
            let dx = match (layer, &cache.layers[i]) {
                (LayerSpec::Affine { out_features }, LayerCache::Input(x)) => {
                    let fin: usize = ins.iter().product();
                    let (gw, gb) = split_pair(gp);
                    layers::affine_backward(&g, x, n, fin, *out_features, p[0].data(), gw, gb)
                }
                (LayerSpec::Conv2d { stride, .. }, LayerCache::Cols(cols)) => {
                    let d = dims(ins, outs, *stride);
                    let (gw, gb) = split_pair(gp);
                    layers::conv_backward(&g, cols, n, &d, p[0].data(), gw, gb)
                }
                (LayerSpec::TransposedConv2d { stride, .. }, LayerCache::Input(x)) => {
                    let d = ConvDims { cin: ins[0], cout: outs[0], h: ins[1], w: ins[2], oh: outs[1], ow: outs[2], stride: *stride };
                    let (gw, gb) = split_pair(gp);
                    layers::tconv_backward(&g, x, n, &d, p[0].data(), gw, gb)
                }
                (LayerSpec::LayerNorm, LayerCache::Norm { xhat, inv }) => {
                    let (gg, gs) = split_pair(gp);
                    layers::layer_norm_backward(&g, xhat, inv, n, ins[0], p[0].data(), gg, gs)
                }
                (LayerSpec::LeakyRelu { slope }, LayerCache::Input(x)) => {
                    let s = T::of(*slope);
                    g.iter().zip(x).map(|(&d, &v)| if v > T::zero() { d } else { s * d }).collect()
                }
                (LayerSpec::Sigmoid, LayerCache::Output(y)) => {
                    g.iter().zip(y).map(|(&d, &v)| d * v * (T::one() - v)).collect()
                }
                (LayerSpec::Reshape { .. }, _) => g,
                _ => return Err(Error::Config(format!("layer {i}: forward cache missing; use forward_cached"))),
            };
            if dx.iter().any(|v| !v.is_finite()) || gp.iter().any(|t| !t.is_finite()) {
                return Err(Error::NonFinite { layer: i, detail: "gradient".into() });
            }
            g = dx;
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.input_shape());
        Ok((grads, Tensor::new(shape, g)?))
    }

    /// Forward then backward from `input`, recomputing activations.
    pub fn backward_from_input<T: Real>(
        &self,
        params: &ParamSet<T>,
        input: &Tensor<T>,
        upstream: &Tensor<T>,
    ) -> Result<(ParamSet<T>, Tensor<T>)> {
        let (_, cache) = self.forward_cached(params, input)?;
        self.backward(params, &cache, upstream)
    }
}

fn dims(ins: &[usize], outs: &[usize], stride: usize) -> ConvDims {
    ConvDims { cin: ins[0], cout: outs[0], h: ins[1], w: ins[2], oh: outs[1], ow: outs[2], stride }
}

fn split_pair<T: Real>(gp: &mut [Tensor<T>]) -> (&mut [T], &mut [T]) {
    let (a, b) = gp.split_at_mut(1);
    (a[0].data_mut(), b[0].data_mut())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn net(input: &[usize], layers: Vec<LayerSpec>) -> Network {
        Network::new(NetworkSpec { input_shape: input.to_vec(), layers }).unwrap()
    }

    #[test]
    fn identity_affine() {
        let n = net(&[3], vec![LayerSpec::Affine { out_features: 3 }]);
        let mut p = n.init_params::<f64>(&mut rng_from_seed(0));
        p.tensors[0] = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let y = n.forward(&p, &Tensor::new(vec![1, 3], vec![1., 2., 3.]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1., 2., 3.]);
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let n = net(&[1], vec![LayerSpec::LeakyRelu { slope: 0.01 }]);
        let p = n.init_params::<f64>(&mut rng_from_seed(0));
        let y = n.forward(&p, &Tensor::new(vec![1, 1], vec![-1.0]).unwrap()).unwrap();
        assert!((y.data()[0] + 0.01).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let n = net(&[4], vec![LayerSpec::LayerNorm]);
        let p = n.init_params::<f64>(&mut rng_from_seed(0));
        let y = n.forward(&p, &Tensor::full(&[2, 4], 3.5)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_weight_gradient_is_outer_product() {
        let n = net(&[2], vec![LayerSpec::Affine { out_features: 2 }]);
        let p = n.init_params::<f64>(&mut rng_from_seed(1));
        let x = Tensor::new(vec![1, 2], vec![3.0, -2.0]).unwrap();
        let up = Tensor::new(vec![1, 2], vec![0.5, 4.0]).unwrap();
        let (g, _) = n.backward_from_input(&p, &x, &up).unwrap();
        assert_eq!(g.tensors[0].data(), &[1.5, -1.0, 12.0, -8.0]);
        assert_eq!(g.tensors[1].data(), &[0.5, 4.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let n = net(
            &[2, 4, 4],
            vec![
                LayerSpec::Conv2d { out_channels: 3, stride: 2 },
                LayerSpec::LayerNorm,
                LayerSpec::LeakyRelu { slope: 0.01 },
                LayerSpec::Affine { out_features: 5 },
            ],
        );
        let p = n.init_params::<f64>(&mut rng_from_seed(2));
        let x = Tensor::full(&[2, 2, 4, 4], 0.3);
        let (g, dx) = n.backward_from_input(&p, &x, &Tensor::zeros(&[2, 5])).unwrap();
        assert!(g.tensors.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_conv_doubles() {
        let n = net(&[4, 3, 5], vec![LayerSpec::TransposedConv2d { out_channels: 2, stride: 2 }]);
        assert_eq!(n.output_shape(), &[2, 6, 10]);
        let c = net(&[2, 6, 10], vec![LayerSpec::Conv2d { out_channels: 4, stride: 2 }]);
        assert_eq!(c.output_shape(), &[4, 3, 5]);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = |input: &[usize], layers| Network::new(NetworkSpec { input_shape: input.to_vec(), layers }).is_err();
        assert!(bad(&[3], vec![LayerSpec::Conv2d { out_channels: 2, stride: 1 }]));
        assert!(bad(&[1, 4, 4], vec![LayerSpec::Conv2d { out_channels: 2, stride: 3 }]));
        assert!(bad(&[4], vec![LayerSpec::LeakyRelu { slope: 0.0 }]));
        assert!(bad(&[4], vec![LayerSpec::Reshape { shape: vec![3] }]));
    }

    #[test]
    fn input_shape_mismatch_is_error() {
        let n = net(&[3], vec![LayerSpec::Sigmoid]);
        let p = n.init_params::<f32>(&mut rng_from_seed(0));
        assert!(matches!(n.forward(&p, &Tensor::zeros(&[1, 4])), Err(Error::Shape(_))));
    }
}
