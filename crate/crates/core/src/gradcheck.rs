//! Central finite-difference gradient checks in double precision.

use rand::Rng as _;
use serde::Serialize;

use crate::background::{background_batch_loss, BackgroundSample, BackgroundSource};
use crate::error::Result;
use crate::image::{BBox, Grid, ImageF};
use crate::object::{object_batch_loss, CropSource, LossConfig, ObjectCrop};
use crate::rng::{rng_from_seed, Rng};
use crate::tensor::{LayerSpec, Network, NetworkSpec, ParamSet, Tensor};
use crate::vae::{Vae, VaeParams, VaeSpec};

pub const DEFAULT_STEP: f64 = 1e-6;

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn finite_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheck {
    pub name: String,
    /// Worst relative error over all parameter tensors and the input.
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Checks every parameter gradient and the input gradient of `net` under
/// the scalar objective `Σ upstream ⊙ net(input)`.
pub fn check_network(
    name: &str,
    net: &Network,
    params: &ParamSet<f64>,
    input: &Tensor<f64>,
    upstream: &Tensor<f64>,
) -> Result<GradCheck> {
    let objective = |p: &ParamSet<f64>, x: &Tensor<f64>| -> f64 {
        let y = net.forward(p, x).expect("forward succeeded at the base point");
        y.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
    };
    let (grads, dx) = net.backward_from_input(params, input, upstream)?;
    let mut worst = (0.0, String::from("-"));
    for (ti, t) in params.tensors.iter().enumerate() {
        let numeric = finite_difference(
            |v| {
                let mut p = params.clone();
                p.tensors[ti].data_mut().copy_from_slice(v);
                objective(&p, input)
            },
            t.data(),
            DEFAULT_STEP,
        );
        let e = relative_error(grads.tensors[ti].data(), &numeric);
        if e > worst.0 {
            worst = (e, params.names[ti].clone());
        }
    }
    let numeric = finite_difference(
        |v| objective(params, &Tensor::new(input.shape().to_vec(), v.to_vec()).expect("same shape")),
        input.data(),
        DEFAULT_STEP,
    );
    let e = relative_error(dx.data(), &numeric);
    if e > worst.0 {
        worst = (e, "input".into());
    }
    Ok(GradCheck { name: name.into(), max_rel_error: worst.0, worst: worst.1 })
}

fn random_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape")
}

/// Perturbs every parameter away from its initial value so norm gains and
/// biases are exercised too.
fn jitter(params: &mut ParamSet<f64>, rng: &mut Rng) {
    for t in &mut params.tensors {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

/// A random small network exercising one layer kind (`kind` in 0..6) or,
/// for `kind == 6`, a three-layer composite.
pub fn random_case(kind: usize, seed: u64) -> (String, NetworkSpec) {
    let mut rng = rng_from_seed(seed);
    let c = rng.random_range(1..=3usize);
    let h = 2 * rng.random_range(1..=3usize);
    let w = 2 * rng.random_range(1..=3usize);
    let stride = rng.random_range(1..=2usize);
    let out = rng.random_range(1..=3usize);
    let slope = rng.random_range(0.01..0.3);
    let (name, input, layers) = match kind {
        0 => ("affine", vec![c * h], vec![LayerSpec::Affine { out_features: out }]),
        1 => ("conv2d", vec![c, h, w], vec![LayerSpec::Conv2d { out_channels: out, stride }]),
        2 => ("transposed-conv2d", vec![c, h / 2, w / 2], vec![LayerSpec::TransposedConv2d { out_channels: out, stride }]),
        3 => ("layer-norm", vec![c, h, w], vec![LayerSpec::LayerNorm]),
        4 => ("leaky-relu", vec![c, h, w], vec![LayerSpec::LeakyRelu { slope }]),
        5 => ("sigmoid", vec![c * w], vec![LayerSpec::Sigmoid]),
        _ => (
            "composite",
            vec![c, h, w],
            vec![
                LayerSpec::Conv2d { out_channels: out + 1, stride },
                LayerSpec::LayerNorm,
                LayerSpec::LeakyRelu { slope },
                LayerSpec::TransposedConv2d { out_channels: out, stride },
                LayerSpec::Sigmoid,
                LayerSpec::Affine { out_features: 3 },
            ],
        ),
    };
    (name.to_string(), NetworkSpec { input_shape: input, layers })
}

/// Runs `count` random configurations cycling through all layer kinds.
pub fn check_random_networks(count: usize, seed: u64) -> Result<Vec<GradCheck>> {
    (0..count)
        .map(|i| {
            let case_seed = crate::rng::derive_seed(seed, "gradcheck", i as u64);
            let (name, spec) = random_case(i % 7, case_seed);
            let net = Network::new(spec)?;
            let mut rng = rng_from_seed(case_seed ^ 0x5eed);
            let mut params = net.init_params::<f64>(&mut rng);
            jitter(&mut params, &mut rng);
            let batch = rng.random_range(1..=2usize);
            let mut in_shape = vec![batch];
            in_shape.extend_from_slice(net.input_shape());
            let mut out_shape = vec![batch];
            out_shape.extend_from_slice(net.output_shape());
            let input = random_tensor(&mut rng, &in_shape, 1.0);
            let upstream = random_tensor(&mut rng, &out_shape, 1.0);
            check_network(&format!("{name}#{i}"), &net, &params, &input, &upstream)
        })
        .collect()
}

fn check_vae(name: &str, p: &VaeParams<f64>, f: impl Fn(&VaeParams<f64>) -> Result<(f64, VaeParams<f64>)>) -> Result<GradCheck> {
    let (_, g) = f(p)?;
    let mut worst = (0.0, String::from("-"));
    for part in 0..p.parts().len() {
        for ti in 0..p.parts()[part].tensors.len() {
            let base = p.parts()[part].tensors[ti].data().to_vec();
            let numeric = finite_difference(
                |v| {
                    let mut q = p.clone();
                    q.parts_mut()[part].tensors[ti].data_mut().copy_from_slice(v);
                    f(&q).expect("loss succeeded at the base point").0
                },
                &base,
                DEFAULT_STEP,
            );
            let e = relative_error(g.parts()[part].tensors[ti].data(), &numeric);
            if e > worst.0 {
                worst = (e, format!("{}/{}", part, p.parts()[part].names[ti]));
            }
        }
    }
    Ok(GradCheck { name: name.into(), max_rel_error: worst.0, worst: worst.1 })
}

fn random_vae(rng: &mut Rng, mask_decoder: bool) -> Result<Vae> {
    let depth = rng.random_range(1..=2usize);
    Vae::new(VaeSpec {
        in_channels: 3,
        height: 4,
        width: 8,
        channels: (0..depth).map(|_| rng.random_range(2..=4)).collect(),
        strides: (0..depth).map(|i| if i == 0 { 2 } else { rng.random_range(1..=2) }).collect(),
        latent_dim: rng.random_range(2..=4),
        slope: rng.random_range(0.01..0.3),
        mask_decoder,
    })
}

/// Object loss through a random small VAE, noise path included.
pub fn check_object_loss(seed: u64) -> Result<GradCheck> {
    let mut rng = rng_from_seed(seed);
    let vae = random_vae(&mut rng, true)?;
    let p = vae.init_params::<f64>(&mut rng);
    let b = rng.random_range(1..=3usize);
    let crops: Vec<ObjectCrop> = (0..b)
        .map(|_| {
            let labels = Grid::from_fn(8, 4, |x, y| if (2..6).contains(&x) && y >= 1 { 1 } else { rng.random_range(0..3u16) });
            ObjectCrop {
                image: ImageF::from_vec(3, 8, 4, (0..96).map(|_| rng.random::<f32>()).collect()).expect("shape"),
                m0: labels.mask_of(0),
                m1: labels.mask_of(1),
                m_other: labels.mask_of(2),
                source: CropSource { video: "gradcheck".into(), frame: 0, label: 1, bbox: BBox { x0: 0, y0: 0, x1: 7, y1: 3 } },
            }
        })
        .collect();
    let targets: Vec<&ObjectCrop> = crops.iter().collect();
    let inputs: Vec<&ImageF> = crops.iter().map(|c| &c.image).collect();
    let eps: Vec<f64> = (0..b * vae.latent_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
    let cfg = LossConfig { beta: rng.random_range(0.0..0.5), gamma: rng.random_range(0.05..1.0) };
    check_vae(&format!("object-loss#{seed}"), &p, |q| {
        object_batch_loss(&vae, q, &inputs, &targets, Some(&eps), &cfg).map(|(t, g)| (t.total, g))
    })
}

/// Background loss through a random small appearance-only VAE.
pub fn check_background_loss(seed: u64) -> Result<GradCheck> {
    let mut rng = rng_from_seed(seed);
    let vae = random_vae(&mut rng, false)?;
    let p = vae.init_params::<f64>(&mut rng);
    let b = rng.random_range(1..=3usize);
    let samples: Vec<BackgroundSample> = (0..b)
        .map(|_| BackgroundSample {
            image: ImageF::from_vec(3, 8, 4, (0..96).map(|_| rng.random::<f32>()).collect()).expect("shape"),
            mask: Grid::from_fn(8, 4, |x, _| x == 0 || rng.random_bool(0.7)),
            source: BackgroundSource { video: "gradcheck".into(), frame: 0 },
        })
        .collect();
    let targets: Vec<&BackgroundSample> = samples.iter().collect();
    let eps: Vec<f64> = (0..b * vae.latent_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
    let beta = rng.random_range(0.0..0.5);
    check_vae(&format!("background-loss#{seed}"), &p, |q| {
        background_batch_loss(&vae, q, &targets, Some(&eps), beta).map(|(t, g)| (t.total, g))
    })
}

/// `layers` random layer configurations plus `losses` each of the object
/// and background objectives.
pub fn full_suite(layers: usize, losses: usize, seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = check_random_networks(layers, seed)?;
    for i in 0..losses as u64 {
        out.push(check_object_loss(crate::rng::derive_seed(seed, "object-loss", i))?);
        out.push(check_background_loss(crate::rng::derive_seed(seed, "background-loss", i))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_difference_of_quadratic() {
        let g = finite_difference(|v| v[0] * v[0] + 3.0 * v[1], &[2.0, -1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn every_layer_kind_matches_finite_differences() {
        for check in check_random_networks(21, 3).unwrap() {
            assert!(check.passes(1e-4), "{check:?}");
        }
    }

    #[test]
    fn losses_match_finite_differences() {
        for i in 0..3 {
            let o = check_object_loss(100 + i).unwrap();
            assert!(o.passes(1e-4), "{o:?}");
            let b = check_background_loss(200 + i).unwrap();
            assert!(b.passes(1e-4), "{b:?}");
        }
    }

    #[test]
    fn single_precision_is_within_loose_tolerance() {
        let (_, spec) = random_case(6, 77);
        let net = Network::new(spec).unwrap();
        let mut rng = rng_from_seed(1);
        let p64 = net.init_params::<f64>(&mut rng);
        let p32: ParamSet<f32> = p64.cast();
        let mut shape = vec![1];
        shape.extend_from_slice(net.input_shape());
        let x = random_tensor(&mut rng, &shape, 1.0);
        let mut oshape = vec![1];
        oshape.extend_from_slice(net.output_shape());
        let up = random_tensor(&mut rng, &oshape, 1.0);
        let (g64, _) = net.backward_from_input(&p64, &x, &up).unwrap();
        let (g32, _) = net.backward_from_input(&p32, &x.cast::<f32>(), &up.cast::<f32>()).unwrap();
        for (a, b) in g64.tensors.iter().zip(&g32.tensors) {
            let b: Vec<f64> = b.data().iter().map(|&v| f64::from(v)).collect();
            assert!(relative_error(a.data(), &b) < 1e-2);
        }
    }
}
