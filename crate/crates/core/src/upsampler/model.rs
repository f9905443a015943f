use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{mel_tensor, Conditioner, Provenance};
use crate::dsp::{MelConfig, MelSpectrogram};
use crate::nn::{leaky_relu, BatchNorm2d, Checkpoint, Conv2d, ConvTranspose2d, Mode, ParamStore};
use crate::{Error, Result};

pub const UPSAMPLER_COMPONENT: &str = "upsampler";

/// 15-layer CNN: eight same-size convolutions, then four ×4 transposed
/// convolutions interleaved with three channel-reducing convolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepUpsamplerConfig {
    /// Output channels of the head convolutions; the input has one channel.
    pub head_channels: Vec<usize>,
    /// Output channels of the convolutions between the transposed layers.
    pub tail_conv_channels: Vec<usize>,
    pub conv_kernel: usize,
    /// (mel, time)
    pub transpose_kernel: (usize, usize),
    pub transpose_stride: usize,
    pub transpose_padding: (usize, usize),
    pub leaky_slope: f64,
    pub mel: MelConfig,
}

impl Default for DeepUpsamplerConfig {
    fn default() -> Self {
        Self {
            head_channels: vec![1, 4, 8, 16, 64, 64, 64, 64],
            tail_conv_channels: vec![16, 8, 4],
            conv_kernel: 5,
            transpose_kernel: (3, 8),
            transpose_stride: 4,
            transpose_padding: (1, 2),
            leaky_slope: 0.4,
            mel: MelConfig::default(),
        }
    }
}

impl DeepUpsamplerConfig {
    pub fn transpose_count(&self) -> usize {
        self.tail_conv_channels.len() + 1
    }

    pub fn layer_count(&self) -> usize {
        self.head_channels.len() + self.tail_conv_channels.len() + self.transpose_count()
    }

    pub fn time_factor(&self) -> usize {
        self.transpose_stride.pow(self.transpose_count() as u32)
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        if self.head_channels.is_empty() || self.head_channels.contains(&0) || self.tail_conv_channels.contains(&0) {
            return Err(Error::Config("upsampler channel counts must be positive".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config("upsampler conv kernel must be odd".into()));
        }
        if self.time_factor() != self.mel.hop_length {
            return Err(Error::Config(format!(
                "upsampler time factor {} does not equal hop length {}",
                self.time_factor(),
                self.mel.hop_length
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Conv(Conv2d),
    Transpose(ConvTranspose2d),
}

#[derive(Debug, Clone)]
struct Layer {
    op: Op,
    /// `None` on the output layer, which also skips the activation.
    norm: Option<BatchNorm2d>,
}

impl Layer {
    fn detached(&self) -> Self {
        Self {
            op: match &self.op {
                Op::Conv(c) => Op::Conv(c.detached()),
                Op::Transpose(t) => Op::Transpose(t.detached()),
            },
            norm: self.norm.as_ref().map(BatchNorm2d::detached),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeepUpsampler {
    config: DeepUpsamplerConfig,
    params: ParamStore,
    buffers: ParamStore,
    layers: Vec<Layer>,
}

impl DeepUpsampler {
    pub fn new(config: DeepUpsamplerConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new(dtype);
        let mut buffers = ParamStore::new(dtype);
        let mut layers = Vec::with_capacity(config.layer_count());
        let k = config.conv_kernel;
        let mut c_in = 1;
        let total = config.layer_count();
        let mut push = |op: Op, c_out: usize, params: &mut ParamStore, buffers: &mut ParamStore, idx: usize| -> Result<()> {
            let norm = if idx + 1 < total {
                Some(BatchNorm2d::new(params, buffers, &format!("layers.{idx:02}.bn"), c_out)?)
            } else {
                None
            };
            layers.push(Layer { op, norm });
            Ok(())
        };
        let mut idx = 0;
        for &c_out in &config.head_channels {
            let conv = Conv2d::new(&mut params, &format!("layers.{idx:02}.conv"), c_in, c_out, k, &mut rng)?;
            push(Op::Conv(conv), c_out, &mut params, &mut buffers, idx)?;
            c_in = c_out;
            idx += 1;
        }
        let n_t = config.transpose_count();
        for t in 0..n_t {
            // Transposed layers keep the channel count, except the last,
            // which produces the single output channel.
            let c_out = if t + 1 == n_t { 1 } else { c_in };
            let tr = ConvTranspose2d::new(
                &mut params,
                &format!("layers.{idx:02}.transpose"),
                c_in,
                c_out,
                config.transpose_kernel,
                config.transpose_stride,
                config.transpose_padding,
                &mut rng,
            )?;
            push(Op::Transpose(tr), c_out, &mut params, &mut buffers, idx)?;
            c_in = c_out;
            idx += 1;
            if let Some(&c_out) = config.tail_conv_channels.get(t) {
                let conv = Conv2d::new(&mut params, &format!("layers.{idx:02}.conv"), c_in, c_out, k, &mut rng)?;
                push(Op::Conv(conv), c_out, &mut params, &mut buffers, idx)?;
                c_in = c_out;
                idx += 1;
            }
        }
        Ok(Self {
            config,
            params,
            buffers,
            layers,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_component(UPSAMPLER_COMPONENT)?;
        let config: DeepUpsamplerConfig = serde_json::from_value(
            ck.config
                .get("model")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("upsampler checkpoint has no model config".into()))?,
        )?;
        let params = ck.with_prefix("param.");
        let dtype = params
            .values()
            .next()
            .map(|t| t.dtype())
            .ok_or_else(|| Error::Checkpoint("upsampler checkpoint has no parameters".into()))?;
        let u = Self::new(config, dtype, 0)?;
        u.params.load(&params)?;
        u.buffers.load(&ck.with_prefix("buffer."))?;
        Ok(u)
    }

    pub fn config(&self) -> &DeepUpsamplerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Batch-norm running statistics.
    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Product of the strides of the transposed layers.
    pub fn time_factor(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match &l.op {
                Op::Transpose(t) => t.stride(),
                Op::Conv(_) => 1,
            })
            .product()
    }

    /// `[B, n_mels, F] → [B, n_mels, factor · F]`. Train mode normalizes with
    /// batch statistics and updates the running ones.
    pub fn forward(&self, mel: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, n_mels, _) = mel.dims3()?;
        if n_mels != self.config.mel.n_mels {
            return Err(Error::Shape(format!(
                "mel has {n_mels} bands, upsampler expects {}",
                self.config.mel.n_mels
            )));
        }
        // Inference runs on detached weights so intermediates are freed as
        // soon as they are consumed instead of being kept for backprop.
        let frozen: Vec<Layer>;
        let layers = match mode {
            Mode::Train => &self.layers,
            Mode::Eval => {
                frozen = self.layers.iter().map(Layer::detached).collect();
                &frozen
            }
        };
        let mut x = mel.unsqueeze(1)?;
        for layer in layers {
            x = match &layer.op {
                Op::Conv(c) => c.forward(&x)?,
                Op::Transpose(t) => t.forward(&x)?,
            };
            if let Some(bn) = &layer.norm {
                x = leaky_relu(&bn.forward(&x, mode)?, self.config.leaky_slope)?;
            }
        }
        Ok(x.squeeze(1)?)
    }
}

/// Degraded mel → conditioner through the deep upsampler.
pub fn upsample_deep(m: &MelSpectrogram, u: &DeepUpsampler, mode: Mode) -> Result<Conditioner> {
    if m.n_mels() != u.config().mel.n_mels || m.hop_length != u.time_factor() {
        return Err(Error::Shape(format!(
            "mel with {} bands and hop {} does not fit upsampler ({} bands, ×{})",
            m.n_mels(),
            m.hop_length,
            u.config().mel.n_mels,
            u.time_factor()
        )));
    }
    let c = u.forward(&mel_tensor(m, u.dtype())?, mode)?.squeeze(0)?;
    Conditioner::new(c.detach(), Provenance::DeepCnn, m.hop_length)
}

/// Mean absolute difference over every element.
pub fn conditioner_match_loss(c: &Conditioner, c_t: &Conditioner) -> Result<f64> {
    if c.values().dims() != c_t.values().dims() {
        return Err(Error::Shape(format!(
            "conditioner shapes {:?} and {:?} differ",
            c.values().dims(),
            c_t.values().dims()
        )));
    }
    let a = c.values().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let b = c_t.values().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Differentiable form of [`conditioner_match_loss`] on batched tensors.
pub fn match_loss(c: &Tensor, c_t: &Tensor) -> Result<Tensor> {
    if c.dims() != c_t.dims() {
        return Err(Error::Shape(format!(
            "conditioner shapes {:?} and {:?} differ",
            c.dims(),
            c_t.dims()
        )));
    }
    Ok((c - c_t)?.abs()?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{upsample_reference, VocoderConfig, VocoderModel};
    use candle_core::Device;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn mel(frames: usize) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(frames as u64);
        MelSpectrogram {
            values: Array2::from_shape_fn((80, frames), |_| rng.random_range(-6.0..0.0)),
            hop_length: 256,
            sample_rate: 16000,
        }
    }

    #[test]
    fn structure() {
        let u = DeepUpsampler::new(DeepUpsamplerConfig::default(), DType::F32, 0).unwrap();
        assert_eq!(u.layer_count(), 15);
        assert_eq!(u.time_factor(), 256);
        assert_eq!(u.config().layer_count(), 15);
        let norms = u.layers.iter().filter(|l| l.norm.is_some()).count();
        assert_eq!(norms, 14);
        assert!(u.layers.last().unwrap().norm.is_none());
        let kinds: String = u
            .layers
            .iter()
            .map(|l| match l.op {
                Op::Conv(_) => 'C',
                Op::Transpose(_) => 'T',
            })
            .collect();
        assert_eq!(kinds, "CCCCCCCCTCTCTCT");
        let voc = VocoderModel::new(VocoderConfig::tiny(), DType::F32, 0).unwrap();
        assert!(u.params().param_count() > voc.upsampler().param_count());
    }

    #[test]
    fn shapes_match_reference() {
        let u = DeepUpsampler::new(DeepUpsamplerConfig::default(), DType::F32, 0).unwrap();
        let voc = VocoderModel::new(VocoderConfig::tiny(), DType::F32, 0).unwrap();
        for frames in [1, 4, 7] {
            let m = mel(frames);
            let d = upsample_deep(&m, &u, Mode::Eval).unwrap();
            let r = upsample_reference(&m, voc.upsampler(), Provenance::ReferenceFromClean, DType::F32).unwrap();
            assert_eq!(d.values().dims(), r.values().dims());
            assert_eq!(d.len(), 256 * frames);
            assert_eq!(d.provenance(), Provenance::DeepCnn);
        }
    }

    #[test]
    fn eval_mode_is_deterministic_and_train_mode_moves_statistics() {
        let u = DeepUpsampler::new(DeepUpsamplerConfig::default(), DType::F32, 1).unwrap();
        let m = mel(3);
        let a = upsample_deep(&m, &u, Mode::Eval).unwrap().to_array().unwrap();
        let b = upsample_deep(&m, &u, Mode::Eval).unwrap().to_array().unwrap();
        assert_eq!(a, b);
        let before = u.buffers().snapshot().unwrap();
        upsample_deep(&m, &u, Mode::Train).unwrap();
        let after = u.buffers().snapshot().unwrap();
        let moved = before.iter().any(|(k, t)| {
            let d = (t - &after[k]).unwrap().abs().unwrap().sum_all().unwrap();
            d.to_scalar::<f32>().unwrap() > 0.0
        });
        assert!(moved);
    }

    #[test]
    fn rejects_wrong_band_count() {
        let u = DeepUpsampler::new(DeepUpsamplerConfig::default(), DType::F32, 1).unwrap();
        let mut m = mel(2);
        m.values = Array2::zeros((40, 2));
        assert!(upsample_deep(&m, &u, Mode::Eval).is_err());
    }

    fn cond(v: Vec<f64>, rows: usize) -> Conditioner {
        let cols = v.len() / rows;
        let t = Tensor::from_vec(v, (rows, cols), &Device::Cpu).unwrap();
        Conditioner::new(t, Provenance::DeepCnn, 1).unwrap()
    }

    #[test]
    fn loss_hand_values() {
        let a = cond(vec![1.0, 2.0], 1);
        let b = cond(vec![0.0, 0.0], 1);
        assert_eq!(conditioner_match_loss(&a, &b).unwrap(), 1.5);
        assert_eq!(conditioner_match_loss(&a, &a).unwrap(), 0.0);
        assert!(conditioner_match_loss(&a, &cond(vec![0.0; 4], 1)).is_err());
        let ta = Tensor::new(&[[1.0f64, 2.0]], &Device::Cpu).unwrap();
        let tb = Tensor::zeros((1, 2), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(match_loss(&ta, &tb).unwrap().to_scalar::<f64>().unwrap(), 1.5);
    }

    proptest! {
        #[test]
        fn loss_is_a_metric(
            rows in 1usize..4,
            seed in any::<u64>(),
            cols in 1usize..20,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || (0..rows * cols).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
            let (va, vb, vc) = (draw(), draw(), draw());
            let (a, b, c) = (cond(va.clone(), rows), cond(vb.clone(), rows), cond(vc, rows));
            let l = |x: &Conditioner, y: &Conditioner| conditioner_match_loss(x, y).unwrap();
            prop_assert!(l(&a, &b) >= 0.0);
            prop_assert_eq!(l(&a, &b), l(&b, &a));
            prop_assert_eq!(l(&a, &a), 0.0);
            prop_assert!(l(&a, &c) <= l(&a, &b) + l(&b, &c) + 1e-12);
            let mut brute = 0.0;
            for i in 0..va.len() {
                brute += (va[i] - vb[i]).abs();
            }
            prop_assert!((l(&a, &b) - brute / va.len() as f64).abs() < 1e-12);
        }
    }
}
