use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;

use super::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Frozen running statistics.
    Eval,
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    // slope·x + (1 − slope)·relu(x)
    Ok(((x * slope)? + (x.relu()? * (1.0 - slope))?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Stride-1 cross-correlation of an already padded input, computed as one
/// matmul per kernel tap. On CPU this beats im2col in both time and memory.
fn conv2d_valid(xp: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (b, c, hp, wp) = xp.dims4()?;
    let (co, ci, kh, kw) = w.dims4()?;
    if ci != c || hp < kh || wp < kw {
        return Err(Error::Shape(format!(
            "conv2d: input {:?} does not fit kernel {:?}",
            xp.dims(),
            w.dims()
        )));
    }
    let (h, wd) = (hp - kh + 1, wp - kw + 1);
    let mut acc: Option<Tensor> = None;
    for i in 0..kh {
        for j in 0..kw {
            let xs = xp
                .narrow(2, i, h)?
                .narrow(3, j, wd)?
                .contiguous()?
                .reshape((b, c, h * wd))?;
            let wij = w.narrow(2, i, 1)?.narrow(3, j, 1)?.reshape((co, c))?;
            let y = wij.broadcast_matmul(&xs)?;
            acc = Some(match acc {
                None => y,
                Some(a) => (a + y)?,
            });
        }
    }
    Ok(acc.expect("non-empty kernel").reshape((b, co, h, wd))?)
}

/// Dilated 1-D counterpart of [`conv2d_valid`].
fn conv1d_valid(xp: &Tensor, w: &Tensor, dilation: usize) -> Result<Tensor> {
    let (_, c, lp) = xp.dims3()?;
    let (co, ci, k) = w.dims3()?;
    let span = dilation * (k - 1);
    if ci != c || lp <= span {
        return Err(Error::Shape(format!(
            "conv1d: input {:?} does not fit kernel {:?}",
            xp.dims(),
            w.dims()
        )));
    }
    let l = lp - span;
    let mut acc: Option<Tensor> = None;
    for i in 0..k {
        let xs = xp.narrow(2, i * dilation, l)?.contiguous()?;
        let wi = w.narrow(2, i, 1)?.reshape((co, c))?;
        let y = wi.broadcast_matmul(&xs)?;
        acc = Some(match acc {
            None => y,
            Some(a) => (a + y)?,
        });
    }
    Ok(acc.expect("non-empty kernel"))
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let b = fan_in_bound(d_in);
        Ok(Self {
            weight: store.uniform(&format!("{name}.weight"), &[d_out, d_in], b, rng)?,
            bias: store.uniform(&format!("{name}.bias"), &[d_out], b, rng)?,
        })
    }

    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
        }
    }

    /// `[B, d_in] → [B, d_out]`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
    dilation: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        zero_init: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let b = fan_in_bound(c_in * kernel);
        let (w, bias) = if zero_init {
            (
                store.constant(&format!("{name}.weight"), &[c_out, c_in, kernel], 0.0)?,
                store.constant(&format!("{name}.bias"), &[c_out], 0.0)?,
            )
        } else {
            (
                store.uniform(&format!("{name}.weight"), &[c_out, c_in, kernel], b, rng)?,
                store.uniform(&format!("{name}.bias"), &[c_out], b, rng)?,
            )
        };
        Ok(Self {
            weight: w,
            bias,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        })
    }

    /// Length-preserving for odd kernels. `[B, C_in, L] → [B, C_out, L]`
    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
            ..*self
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let xp = if self.padding > 0 {
            x.pad_with_zeros(2, self.padding, self.padding)?
        } else {
            x.clone()
        };
        let y = conv1d_valid(&xp, &self.weight, self.dilation)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
}

impl Conv2d {
    /// Square kernel, stride 1, "same" padding.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let b = fan_in_bound(c_in * kernel * kernel);
        Ok(Self {
            weight: store.uniform(&format!("{name}.weight"), &[c_out, c_in, kernel, kernel], b, rng)?,
            bias: store.uniform(&format!("{name}.bias"), &[c_out], b, rng)?,
            padding: (kernel - 1) / 2,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0).unwrap_or(0)
    }

    /// Copy sharing the weights but recording no autodiff graph.
    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
            padding: self.padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.padding;
        let y = conv2d_valid(&x.pad_with_zeros(2, p, p)?.pad_with_zeros(3, p, p)?, &self.weight)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

/// 2-D transposed convolution with stride 1 along height and `stride`
/// along width, PyTorch weight layout `[C_in, C_out, kh, kw]`.
///
/// Shapes are restricted so the output is exactly `[H, stride · W]`
/// (`kh = 2·pad_h + 1`, `kw − 2·pad_w = stride`). The forward pass is
/// computed as an ordinary stride-1 convolution producing `stride` phases
/// per output channel, followed by interleaving the phases along width.
/// Both steps are differentiable, so gradients reach the transposed kernel.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Tensor,
    c_in: usize,
    c_out: usize,
    kernel: (usize, usize),
    stride: usize,
    padding: (usize, usize),
    plan: PhasePlan,
}

#[derive(Debug, Clone)]
struct PhasePlan {
    /// Input taps per phase, covering input offsets `−left .. right`.
    taps: usize,
    left: usize,
    right: usize,
    /// For phase `r` and tap `b`: index into the (zero-extended) kernel
    /// width; `kw` selects the appended zero column.
    width_index: Tensor,
    height_flip: Tensor,
}

impl PhasePlan {
    fn new(kh: usize, kw: usize, stride: usize, pad_w: usize) -> Result<Self> {
        let s = stride as isize;
        let p = pad_w as isize;
        let kw_i = kw as isize;
        // Output o = s·q + r receives input i = q − m through kernel column
        // k = r + p + s·m, for every m that keeps k inside the kernel.
        let div_floor = |a: isize, b: isize| a.div_euclid(b);
        let div_ceil = |a: isize, b: isize| -((-a).div_euclid(b));
        let mut m_min = isize::MAX;
        let mut m_max = isize::MIN;
        for r in 0..s {
            m_min = m_min.min(div_ceil(-(r + p), s));
            m_max = m_max.max(div_floor(kw_i - 1 - r - p, s));
        }
        let taps = (m_max - m_min + 1) as usize;
        let mut idx = Vec::with_capacity(stride * taps);
        for r in 0..s {
            for b in 0..taps as isize {
                let k = r + p + s * (m_max - b);
                idx.push(if (0..kw_i).contains(&k) { k as u32 } else { kw as u32 });
            }
        }
        let flip: Vec<u32> = (0..kh as u32).rev().collect();
        Ok(Self {
            taps,
            left: m_max.max(0) as usize,
            right: (-m_min).max(0) as usize,
            width_index: Tensor::new(idx, &candle_core::Device::Cpu)?,
            height_flip: Tensor::new(flip, &candle_core::Device::Cpu)?,
        })
    }
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        if kh != 2 * padding.0 + 1 || kw < 2 * padding.1 || kw - 2 * padding.1 != stride {
            return Err(Error::InvalidArgument(format!(
                "transposed conv {name}: kernel {kernel:?}, stride {stride}, padding {padding:?} \
                 do not give an exact ×{stride} upsampling"
            )));
        }
        let b = fan_in_bound(c_in * kh * kw);
        Ok(Self {
            weight: store.uniform(&format!("{name}.weight"), &[c_in, c_out, kh, kw], b, rng)?,
            bias: store.uniform(&format!("{name}.bias"), &[c_out], b, rng)?,
            c_in,
            c_out,
            kernel,
            stride,
            padding,
            plan: PhasePlan::new(kh, kw, stride, padding.1)?,
        })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Copy sharing the weights but recording no autodiff graph.
    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
            c_in: self.c_in,
            c_out: self.c_out,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            plan: self.plan.clone(),
        }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    /// Rearranges the transposed kernel into a stride-1 kernel of shape
    /// `[C_out · stride, C_in, kh, taps]`.
    fn phase_kernel(&self) -> Result<Tensor> {
        let (kh, _) = self.kernel;
        let plan = &self.plan;
        let w = self
            .weight
            .pad_with_zeros(3, 0, 1)?
            .index_select(&plan.height_flip, 2)?
            .index_select(&plan.width_index, 3)?;
        let w = w
            .reshape((self.c_in, self.c_out, kh, self.stride, plan.taps))?
            .permute((1, 3, 0, 2, 4))?
            .contiguous()?
            .reshape((self.c_out * self.stride, self.c_in, kh, plan.taps))?;
        Ok(w)
    }

    /// `[B, C_in, H, W] → [B, C_out, H, stride · W]`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, h, w) = x.dims4()?;
        let plan = &self.plan;
        let ph = self.kernel.0 - 1 - self.padding.0;
        let xp = x
            .pad_with_zeros(2, ph, ph)?
            .pad_with_zeros(3, plan.left, plan.right)?;
        let y = conv2d_valid(&xp, &self.phase_kernel()?)?;
        let y = y
            .reshape((b, self.c_out, self.stride, h, w))?
            .permute((0, 1, 3, 4, 2))?
            .contiguous()?
            .reshape((b, self.c_out, h, w * self.stride))?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

/// Batch normalization over `(N, H, W)` per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: Tensor,
    beta: Tensor,
    running_mean: candle_core::Var,
    running_var: candle_core::Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    /// Copy sharing parameters and running statistics but recording no
    /// autodiff graph. Only meaningful in eval mode.
    pub fn detached(&self) -> Self {
        Self {
            gamma: self.gamma.detach(),
            beta: self.beta.detach(),
            ..self.clone()
        }
    }

    /// Affine parameters go to `params`, running statistics to `buffers`.
    pub fn new(
        params: &mut ParamStore,
        buffers: &mut ParamStore,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        let gamma = params.constant(&format!("{name}.weight"), &[channels], 1.0)?;
        let beta = params.constant(&format!("{name}.bias"), &[channels], 0.0)?;
        buffers.constant(&format!("{name}.running_mean"), &[channels], 0.0)?;
        buffers.constant(&format!("{name}.running_var"), &[channels], 1.0)?;
        let get = |s: &str| buffers.get(&format!("{name}.{s}")).cloned().unwrap();
        Ok(Self {
            gamma,
            beta,
            running_mean: get("running_mean"),
            running_var: get("running_var"),
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let shape = (1, (), 1, 1);
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x.mean_keepdim((0, 2, 3))?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
                let (n, _, h, w) = x.dims4()?;
                let count = (n * h * w) as f64;
                let unbiased = if count > 1.0 {
                    (var.detach() * (count / (count - 1.0)))?
                } else {
                    var.detach()
                };
                let m = self.momentum;
                let rm = ((self.running_mean.as_tensor() * (1.0 - m))?
                    + (mean.detach().flatten_all()? * m)?)?;
                let rv = ((self.running_var.as_tensor() * (1.0 - m))?
                    + (unbiased.flatten_all()? * m)?)?;
                self.running_mean.set(&rm)?;
                self.running_var.set(&rv)?;
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.as_tensor().detach().reshape(shape)?,
                self.running_var.as_tensor().detach().reshape(shape)?,
            ),
        };
        let normed = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape(shape)?)?
            .broadcast_add(&self.beta.reshape(shape)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use rand::SeedableRng;

    /// Direct scatter-form transposed convolution.
    #[allow(clippy::too_many_arguments)]
    fn naive_conv_transpose(
        x: &[f64],
        (b, ci, h, w): (usize, usize, usize, usize),
        k: &[f64],
        co: usize,
        (kh, kw): (usize, usize),
        s: usize,
        (ph, pw): (usize, usize),
        bias: &[f64],
    ) -> (Vec<f64>, usize, usize) {
        let ho = h - 1 + kh - 2 * ph;
        let wo = (w - 1) * s + kw - 2 * pw;
        let mut out = vec![0.0; b * co * ho * wo];
        for n in 0..b {
            for c in 0..ci {
                for y in 0..h {
                    for xw in 0..w {
                        let v = x[((n * ci + c) * h + y) * w + xw];
                        for o in 0..co {
                            for a in 0..kh {
                                for kk in 0..kw {
                                    let oy = y as isize + a as isize - ph as isize;
                                    let ox = (xw * s + kk) as isize - pw as isize;
                                    if oy < 0 || ox < 0 || oy >= ho as isize || ox >= wo as isize {
                                        continue;
                                    }
                                    let kidx = ((c * co + o) * kh + a) * kw + kk;
                                    out[((n * co + o) * ho + oy as usize) * wo + ox as usize] +=
                                        v * k[kidx];
                                }
                            }
                        }
                    }
                }
            }
        }
        for n in 0..b {
            for o in 0..co {
                for i in 0..ho * wo {
                    out[(n * co + o) * ho * wo + i] += bias[o];
                }
            }
        }
        (out, ho, wo)
    }

    fn check_against_naive(ci: usize, co: usize, kernel: (usize, usize), s: usize, pad: (usize, usize)) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new(DType::F64);
        let layer = ConvTranspose2d::new(&mut store, "t", ci, co, kernel, s, pad, &mut rng).unwrap();
        let dims = (2, ci, 5, 3);
        let x = Tensor::randn(0f64, 1.0, dims, &Device::Cpu).unwrap();
        let y = layer.forward(&x).unwrap();
        let xs = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let ks = layer.weight.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let bs = layer.bias.to_vec1::<f64>().unwrap();
        let (want, ho, wo) = naive_conv_transpose(&xs, dims, &ks, co, kernel, s, pad, &bs);
        assert_eq!(y.dims(), &[2, co, ho, wo]);
        let got = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
    }

    #[test]
    fn phase_split_matches_direct_transposed_conv() {
        check_against_naive(1, 1, (3, 32), 16, (1, 8));
        check_against_naive(3, 2, (3, 8), 4, (1, 2));
        check_against_naive(2, 1, (3, 8), 4, (1, 2));
        check_against_naive(2, 3, (1, 6), 2, (0, 2));
    }

    #[test]
    fn tap_convolutions_match_native() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new(DType::F64);
        let c1 = Conv1d::new(&mut store, "c1", 3, 4, 3, 4, false, &mut rng).unwrap();
        let x = Tensor::randn(0f64, 1.0, (2, 3, 40), &Device::Cpu).unwrap();
        let want = x
            .conv1d(&c1.weight, 4, 1, 4, 1)
            .unwrap()
            .broadcast_add(&c1.bias.reshape((1, (), 1)).unwrap())
            .unwrap();
        let got = c1.forward(&x).unwrap();
        let d = (got - want).unwrap().abs().unwrap().max_all().unwrap();
        assert!(d.to_scalar::<f64>().unwrap() < 1e-12);

        let c2 = Conv2d::new(&mut store, "c2", 3, 5, 5, &mut rng).unwrap();
        let x = Tensor::randn(0f64, 1.0, (2, 3, 9, 7), &Device::Cpu).unwrap();
        let want = x
            .conv2d(&c2.weight, 2, 1, 1, 1)
            .unwrap()
            .broadcast_add(&c2.bias.reshape((1, (), 1, 1)).unwrap())
            .unwrap();
        let got = c2.forward(&x).unwrap();
        let d = (got - want).unwrap().abs().unwrap().max_all().unwrap();
        assert!(d.to_scalar::<f64>().unwrap() < 1e-12);
    }

    #[test]
    fn rejects_inexact_upsampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new(DType::F64);
        assert!(ConvTranspose2d::new(&mut store, "t", 1, 1, (3, 8), 4, (1, 1), &mut rng).is_err());
    }

    #[test]
    fn batch_norm_normalizes_and_tracks() {
        let mut p = ParamStore::new(DType::F64);
        let mut b = ParamStore::new(DType::F64);
        let bn = BatchNorm2d::new(&mut p, &mut b, "bn", 2).unwrap();
        let x = ((Tensor::randn(0f64, 1.0, (3, 2, 4, 5), &Device::Cpu).unwrap() * 3.0).unwrap() + 1.0).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        let mean = y.mean_keepdim((0, 2, 3)).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-9));
        let rm = bn.running_mean.as_tensor().to_vec1::<f64>().unwrap();
        assert!(rm.iter().all(|m| (m - 0.1).abs() < 0.1));
        let e1 = bn.forward(&x, Mode::Eval).unwrap();
        let e2 = bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(
            e1.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            e2.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
    }

    #[test]
    fn leaky_relu_slopes() {
        let x = Tensor::new(&[-2.0f64, 0.0, 3.0], &Device::Cpu).unwrap();
        assert_eq!(leaky_relu(&x, 0.4).unwrap().to_vec1::<f64>().unwrap(), vec![-0.8, 0.0, 3.0]);
        let s = sigmoid(&x).unwrap().to_vec1::<f64>().unwrap();
        assert!((s[0] - 1.0 / (1.0 + 2f64.exp())).abs() < 1e-12);
    }
}
