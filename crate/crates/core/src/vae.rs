//! Convolutional β-VAE shared by the object and background models.
//!
//! The encoder stacks `conv → layer-norm → leaky-relu` blocks and ends in an
//! affine map to `2·latent` values (μ then logσ²). Each decoder mirrors the
//! encoder: an affine map back to the last feature grid, the reversed
//! blocks with transposed convolutions, and one plain output convolution.
//! The appearance head ends in a sigmoid; the mask head emits logits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{
    kl_standard_normal, reparameterize, weights, AdamConfig, AdamState, LayerSpec, Network, NetworkSpec,
    ParamSet, Real, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub latent_dim: usize,
    pub slope: f64,
    /// Adds the single-channel mask decoder.
    pub mask_decoder: bool,
}

impl VaeSpec {
    /// Desk-scale object model on 32×16 crops.
    pub fn desk_object() -> Self {
        Self {
            in_channels: 3,
            height: 16,
            width: 32,
            channels: vec![8, 16, 32, 64, 64],
            strides: vec![2, 1, 2, 1, 2],
            latent_dim: 16,
            slope: 0.01,
            mask_decoder: true,
        }
    }

    /// Desk-scale background model on 24×16 images.
    pub fn desk_background() -> Self {
        Self { width: 24, mask_decoder: false, ..Self::desk_object() }
    }

    /// The full-size object network on 128×64 crops.
    pub fn full_object() -> Self {
        Self {
            in_channels: 3,
            height: 64,
            width: 128,
            channels: vec![32, 32, 64, 64, 128, 128, 256, 256, 512, 512],
            strides: vec![2, 1, 2, 1, 2, 1, 2, 1, 2, 1],
            latent_dim: 128,
            slope: 0.01,
            mask_decoder: true,
        }
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::Config("vae: channels and strides must be nonempty and equally long".into()));
        }
        if self.latent_dim == 0 || self.in_channels == 0 {
            return Err(Error::Config("vae: zero latent or input channels".into()));
        }
        let down: usize = self.strides.iter().product();
        if self.height % down != 0 || self.width % down != 0 {
            return Err(Error::Config(format!(
                "vae: input {}x{} is not divisible by the total stride {down}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    fn encoder_spec(&self) -> NetworkSpec {
        let mut layers = Vec::new();
        for (&c, &s) in self.channels.iter().zip(&self.strides) {
            layers.push(LayerSpec::Conv2d { out_channels: c, stride: s });
            layers.push(LayerSpec::LayerNorm);
            layers.push(LayerSpec::LeakyRelu { slope: self.slope });
        }
        layers.push(LayerSpec::Affine { out_features: 2 * self.latent_dim });
        NetworkSpec { input_shape: vec![self.in_channels, self.height, self.width], layers }
    }

    fn decoder_spec(&self, out_channels: usize, sigmoid: bool) -> NetworkSpec {
        let down: usize = self.strides.iter().product();
        let last = *self.channels.last().expect("validated");
        let grid = vec![last, self.height / down, self.width / down];
        let mut layers = vec![
            LayerSpec::Affine { out_features: grid.iter().product() },
            LayerSpec::Reshape { shape: grid },
        ];
        for i in (0..self.channels.len()).rev() {
            let out = self.channels[i.saturating_sub(1)];
            layers.push(LayerSpec::TransposedConv2d { out_channels: out, stride: self.strides[i] });
            layers.push(LayerSpec::LayerNorm);
            layers.push(LayerSpec::LeakyRelu { slope: self.slope });
        }
        layers.push(LayerSpec::Conv2d { out_channels, stride: 1 });
        if sigmoid {
            layers.push(LayerSpec::Sigmoid);
        }
        NetworkSpec { input_shape: vec![self.latent_dim], layers }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams<T = f32> {
    pub encoder: ParamSet<T>,
    pub appearance: ParamSet<T>,
    pub mask: Option<ParamSet<T>>,
}

impl<T: Real> VaeParams<T> {
    pub fn cast<U: Real>(&self) -> VaeParams<U> {
        VaeParams {
            encoder: self.encoder.cast(),
            appearance: self.appearance.cast(),
            mask: self.mask.as_ref().map(ParamSet::cast),
        }
    }

    pub fn parts(&self) -> Vec<&ParamSet<T>> {
        let mut v = vec![&self.encoder, &self.appearance];
        v.extend(self.mask.as_ref());
        v
    }

    pub fn parts_mut(&mut self) -> Vec<&mut ParamSet<T>> {
        let mut v = vec![&mut self.encoder, &mut self.appearance];
        v.extend(self.mask.as_mut());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|p| p.is_finite())
    }
}

const PREFIXES: [&str; 3] = ["encoder/", "appearance/", "mask/"];

/// Per-batch loss terms, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub appearance: f64,
    pub mask: f64,
    pub kl: f64,
    pub total: f64,
}

/// Decoder outputs for a batch.
pub struct Decoded<T> {
    /// `[N, C, H, W]`, values in (0, 1).
    pub appearance: Tensor<T>,
    /// `[N, 1, H, W]` mask logits.
    pub mask_logits: Option<Tensor<T>>,
}

/// Reconstruction loss of a batch: returns the batch-mean value with its
/// sub-terms and the gradients w.r.t. the appearance and mask logits.
pub struct ReconLoss<T> {
    pub appearance: f64,
    pub mask: f64,
    pub d_appearance: Vec<T>,
    pub d_mask_logits: Option<Vec<T>>,
}

#[derive(Clone, Debug)]
pub struct Vae {
    spec: VaeSpec,
    encoder: Network,
    appearance: Network,
    mask: Option<Network>,
}

impl Vae {
    pub fn new(spec: VaeSpec) -> Result<Self> {
        spec.validate()?;
        let encoder = Network::new(spec.encoder_spec())?;
        let appearance = Network::new(spec.decoder_spec(spec.in_channels, true))?;
        let mask = if spec.mask_decoder { Some(Network::new(spec.decoder_spec(1, false))?) } else { None };
        let want = [spec.in_channels, spec.height, spec.width];
        if appearance.output_shape() != want {
            return Err(Error::Config(format!(
                "vae: decoder emits {:?}, encoder takes {want:?}",
                appearance.output_shape()
            )));
        }
        Ok(Self { spec, encoder, appearance, mask })
    }

    pub fn spec(&self) -> &VaeSpec {
        &self.spec
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn init_params<T: Real>(&self, rng: &mut Rng) -> VaeParams<T> {
        VaeParams {
            encoder: self.encoder.init_params(rng),
            appearance: self.appearance.init_params(rng),
            mask: self.mask.as_ref().map(|m| m.init_params(rng)),
        }
    }

    pub fn check_params<T: Real>(&self, p: &VaeParams<T>) -> Result<()> {
        self.encoder.check_params(&p.encoder)?;
        self.appearance.check_params(&p.appearance)?;
        match (&self.mask, &p.mask) {
            (Some(net), Some(mp)) => net.check_params(mp),
            (None, None) => Ok(()),
            _ => Err(Error::Shape("vae: mask decoder parameters do not match the network spec".into())),
        }
    }

    /// Returns per-sample `(μ, logσ²)`, each flattened `[N·latent]`.
    pub fn encode<T: Real>(&self, p: &VaeParams<T>, x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
        let out = self.encoder.forward(&p.encoder, x)?;
        Ok(split_moments(out.data(), self.spec.latent_dim))
    }

    pub fn decode<T: Real>(&self, p: &VaeParams<T>, z: &Tensor<T>) -> Result<Decoded<T>> {
        let appearance = self.appearance.forward(&p.appearance, z)?;
        let mask_logits = match (&self.mask, &p.mask) {
            (Some(net), Some(mp)) => Some(net.forward(mp, z)?),
            _ => None,
        };
        Ok(Decoded { appearance, mask_logits })
    }

    /// Decodes the posterior mean of each input.
    pub fn reconstruct<T: Real>(&self, p: &VaeParams<T>, x: &Tensor<T>) -> Result<(Decoded<T>, Vec<T>, Vec<T>)> {
        let (mu, lv) = self.encode(p, x)?;
        let z = Tensor::new(vec![x.shape()[0], self.spec.latent_dim], mu.clone())?;
        Ok((self.decode(p, &z)?, mu, lv))
    }

    /// Loss and parameter gradients for one batch.
    ///
    /// `eps` is the reparameterization noise (`[N·latent]`); `None` uses the
    /// posterior mean. The returned objective is
    /// `recon + β · mean_n KL_n`.
    pub fn loss_and_grad<T: Real>(
        &self,
        p: &VaeParams<T>,
        x: &Tensor<T>,
        eps: Option<&[T]>,
        beta: f64,
        recon: impl FnOnce(&Decoded<T>) -> Result<ReconLoss<T>>,
    ) -> Result<(LossTerms, VaeParams<T>)> {
        let n = x.shape()[0];
        let l = self.spec.latent_dim;
        let (enc_out, enc_cache) = self.encoder.forward_cached(&p.encoder, x)?;
        let (mu, lv) = split_moments(enc_out.data(), l);
        let z = match eps {
            Some(e) => {
                if e.len() != n * l {
                    return Err(Error::Shape(format!("noise has {} values, expected {}", e.len(), n * l)));
                }
                reparameterize(&mu, &lv, e)
            }
            None => mu.clone(),
        };
        let z = Tensor::new(vec![n, l], z)?;
        let (app, app_cache) = self.appearance.forward_cached(&p.appearance, &z)?;
        let masked = match (&self.mask, &p.mask) {
            (Some(net), Some(mp)) => Some(net.forward_cached(mp, &z)?),
            _ => None,
        };
        let decoded = Decoded { appearance: app, mask_logits: masked.as_ref().map(|(t, _)| t.clone()) };
        let rl = recon(&decoded)?;

        let up = Tensor::new(decoded.appearance.shape().to_vec(), rl.d_appearance)?;
        let (g_app, mut dz) = self.appearance.backward(&p.appearance, &app_cache, &up)?;
        let g_mask = match (&self.mask, &p.mask, masked, rl.d_mask_logits) {
            (Some(net), Some(mp), Some((logits, cache)), Some(dm)) => {
                let up = Tensor::new(logits.shape().to_vec(), dm)?;
                let (g, dzm) = net.backward(mp, &cache, &up)?;
                for (a, &b) in dz.data_mut().iter_mut().zip(dzm.data()) {
                    *a += b;
                }
                Some(g)
            }
            (None, _, _, None) => None,
            _ => return Err(Error::Shape("vae: mask gradient does not match the mask decoder".into())),
        };

        let kl = kl_standard_normal(&mu, &lv)?.as_f64() / n as f64;
        let bn = T::of(beta / n as f64);
        let half = T::of(0.5);
        let mut d_enc = vec![T::zero(); n * 2 * l];
        for s in 0..n {
            for j in 0..l {
                let i = s * l + j;
                let gz = dz.data()[i];
                let (d_mu, d_lv) = match eps {
                    Some(e) => (gz, gz * half * (half * lv[i]).exp() * e[i]),
                    None => (gz, T::zero()),
                };
                d_enc[s * 2 * l + j] = d_mu + bn * mu[i];
                d_enc[s * 2 * l + l + j] = d_lv + bn * half * (lv[i].exp() - T::one());
            }
        }
        let up = Tensor::new(vec![n, 2 * l], d_enc)?;
        let (g_enc, _) = self.encoder.backward(&p.encoder, &enc_cache, &up)?;
        let terms = LossTerms {
            appearance: rl.appearance,
            mask: rl.mask,
            kl,
            total: rl.appearance + rl.mask + beta * kl,
        };
        if !terms.total.is_finite() {
            return Err(Error::NonFinite { layer: 0, detail: "loss".into() });
        }
        Ok((terms, VaeParams { encoder: g_enc, appearance: g_app, mask: g_mask }))
    }

    pub fn save(&self, path: &Path, p: &VaeParams<f32>) -> Result<()> {
        self.check_params(p)?;
        weights::save(path, &combine(p))
    }

    pub fn load(&self, path: &Path) -> Result<VaeParams<f32>> {
        let flat = weights::load(path)?;
        let p = split(flat)?;
        self.check_params(&p).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(p)
    }
}

fn split_moments<T: Real>(out: &[T], l: usize) -> (Vec<T>, Vec<T>) {
    let mut mu = Vec::with_capacity(out.len() / 2);
    let mut lv = Vec::with_capacity(out.len() / 2);
    for row in out.chunks(2 * l) {
        mu.extend_from_slice(&row[..l]);
        lv.extend_from_slice(&row[l..]);
    }
    (mu, lv)
}

fn combine(p: &VaeParams<f32>) -> ParamSet<f32> {
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (part, prefix) in p.parts().into_iter().zip(PREFIXES) {
        for (n, t) in part.names.iter().zip(&part.tensors) {
            names.push(format!("{prefix}{n}"));
            tensors.push(t.clone());
        }
    }
    ParamSet { names, tensors }
}

fn split(flat: ParamSet<f32>) -> Result<VaeParams<f32>> {
    let mut parts: [ParamSet<f32>; 3] = std::array::from_fn(|_| ParamSet { names: vec![], tensors: vec![] });
    for (name, t) in flat.names.into_iter().zip(flat.tensors) {
        let k = PREFIXES
            .iter()
            .position(|p| name.starts_with(p))
            .ok_or_else(|| Error::Format(format!("unexpected tensor name {name:?}")))?;
        parts[k].names.push(name[PREFIXES[k].len()..].to_string());
        parts[k].tensors.push(t);
    }
    let [encoder, appearance, mask] = parts;
    let mask = if mask.tensors.is_empty() { None } else { Some(mask) };
    Ok(VaeParams { encoder, appearance, mask })
}

/// Learning-rate schedule and batching for VAE training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epoch (0-based) from which the rate is divided by `lr_drop_factor`.
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: f64,
}

impl Schedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_drop_epoch {
            Some(e) if epoch >= e => self.lr / self.lr_drop_factor,
            _ => self.lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) || !(self.lr_drop_factor > 0.0) {
            return Err(Error::Config(format!("invalid training schedule {self:?}")));
        }
        Ok(())
    }
}

/// One Adam state per sub-network.
pub struct VaeOptimizer {
    states: Vec<AdamState<f32>>,
}

impl VaeOptimizer {
    pub fn new(config: AdamConfig, p: &VaeParams<f32>) -> Self {
        Self { states: p.parts().into_iter().map(|ps| AdamState::new(config, ps)).collect() }
    }

    pub fn step(&mut self, p: &mut VaeParams<f32>, g: &VaeParams<f32>, lr: f64) -> Result<()> {
        for ((state, ps), gs) in self.states.iter_mut().zip(p.parts_mut()).zip(g.parts()) {
            state.config.lr = lr;
            state.step(ps, gs)?;
        }
        Ok(())
    }
}

/// Binary cross-entropy clamp for mask probabilities.
pub const PROB_CLAMP: f64 = 1e-6;
