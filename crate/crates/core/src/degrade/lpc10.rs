//! A 2.4 kbit/s LPC-10 style vocoder: 180-sample frames at 8 kHz, order-10
//! all-pole synthesis, pulse-train or noise excitation, 54 bits per frame.
//!
//! This is not bit-compatible with FS-1015. It reproduces the rate, frame
//! size, model order and excitation model, which is what determines the
//! character of the degradation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::lpc::{
    amdf_pitch, autocorrelation, levinson_durbin, reflection_to_lpc, LPC_ORDER, MAX_PITCH_LAG,
    MIN_PITCH_LAG,
};
use crate::dsp::{resample, Waveform};
use crate::{Error, Result};

pub const CODEC_RATE: u32 = 8_000;
pub const FRAME_LEN: usize = 180;
pub const BITS_PER_FRAME: usize = 54;
pub const COEFF_BITS: [u32; LPC_ORDER] = [5, 5, 5, 5, 4, 4, 4, 4, 3, 2];
pub const LAR_LIMIT: f64 = 7.0;
pub const GAIN_BITS: u32 = 5;
pub const PITCH_BITS: u32 = 7;
/// Look-back window handed to the pitch search.
pub const PITCH_BUFFER: usize = 320;
const GAIN_FLOOR_DB: f64 = -60.0;

const FILE_MAGIC: &[u8; 4] = b"LPCX";
const FILE_VERSION: u8 = 1;
const BYTES_PER_FRAME: usize = 7;

/// Voicing decision thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoicingThresholds {
    pub min_energy_dbfs: f64,
    pub min_pitch_confidence: f64,
    pub max_zero_crossing_rate: f64,
}

impl Default for VoicingThresholds {
    fn default() -> Self {
        Self {
            min_energy_dbfs: -60.0,
            min_pitch_confidence: 0.35,
            max_zero_crossing_rate: 0.3,
        }
    }
}

/// Unquantized per-frame codec parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcFrame {
    pub reflection_coeffs: [f64; LPC_ORDER],
    /// Target RMS of the synthesized frame.
    pub gain: f64,
    /// Pitch period in samples, or 0 when unvoiced.
    pub pitch_lag: usize,
    pub voiced: bool,
}

impl LpcFrame {
    pub fn silence() -> Self {
        Self {
            reflection_coeffs: [0.0; LPC_ORDER],
            gain: 0.0,
            pitch_lag: 0,
            voiced: false,
        }
    }
}

/// Quantizer indices of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameCodes {
    pub voiced: bool,
    pub pitch: u8,
    pub gain: u8,
    pub coeffs: [u8; LPC_ORDER],
}

impl FrameCodes {
    /// Packs into the low 54 bits, most significant field first: voicing,
    /// pitch, gain, then k1..k10.
    pub fn pack(&self) -> u64 {
        let mut bits = 0u64;
        let mut push = |value: u64, width: u32| {
            bits = (bits << width) | (value & ((1 << width) - 1));
        };
        push(self.voiced as u64, 1);
        push(self.pitch as u64, PITCH_BITS);
        push(self.gain as u64, GAIN_BITS);
        for (c, &w) in self.coeffs.iter().zip(&COEFF_BITS) {
            push(*c as u64, w);
        }
        bits
    }

    pub fn unpack(mut bits: u64) -> Self {
        let mut pop = |width: u32| {
            let v = bits & ((1 << width) - 1);
            bits >>= width;
            v as u8
        };
        let mut coeffs = [0u8; LPC_ORDER];
        for i in (0..LPC_ORDER).rev() {
            coeffs[i] = pop(COEFF_BITS[i]);
        }
        let gain = pop(GAIN_BITS);
        let pitch = pop(PITCH_BITS);
        let voiced = pop(1) == 1;
        Self {
            voiced,
            pitch,
            gain,
            coeffs,
        }
    }
}

/// Encoded speech: one 54-bit record per 22.5 ms frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpcBitstream {
    pub frames: Vec<u64>,
}

impl LpcBitstream {
    pub fn frame_duration_samples(&self) -> usize {
        FRAME_LEN
    }

    pub fn total_bits(&self) -> usize {
        self.frames.len() * BITS_PER_FRAME
    }

    pub fn bits_per_second(&self) -> f64 {
        BITS_PER_FRAME as f64 * CODEC_RATE as f64 / FRAME_LEN as f64
    }

    /// `LPCX`, version byte, frame count (u32 LE), then 7 bytes per frame
    /// holding the 54 bits MSB-first followed by two zero pad bits.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + BYTES_PER_FRAME * self.frames.len());
        out.extend_from_slice(FILE_MAGIC);
        out.push(FILE_VERSION);
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        for &f in &self.frames {
            let shifted = f << 2;
            out.extend_from_slice(&shifted.to_be_bytes()[1..]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || &bytes[..4] != FILE_MAGIC {
            return Err(Error::Bitstream("missing LPCX header".into()));
        }
        if bytes[4] != FILE_VERSION {
            return Err(Error::Bitstream(format!("unsupported version {}", bytes[4])));
        }
        let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let body = &bytes[9..];
        if body.len() != count * BYTES_PER_FRAME {
            return Err(Error::Bitstream(format!(
                "truncated bitstream: header says {count} frames, body holds {} bytes",
                body.len()
            )));
        }
        let frames = body
            .chunks_exact(BYTES_PER_FRAME)
            .map(|c| {
                let mut buf = [0u8; 8];
                buf[1..].copy_from_slice(c);
                u64::from_be_bytes(buf) >> 2
            })
            .collect();
        Ok(Self { frames })
    }
}

fn lar(k: f64) -> f64 {
    ((1.0 + k) / (1.0 - k)).ln()
}

fn lar_to_reflection(g: f64) -> f64 {
    (g / 2.0).tanh()
}

fn quantize_uniform(value: f64, lo: f64, hi: f64, bits: u32) -> u8 {
    let levels = 1u32 << bits;
    let step = (hi - lo) / levels as f64;
    (((value - lo) / step).floor() as i64).clamp(0, levels as i64 - 1) as u8
}

fn dequantize_uniform(code: u8, lo: f64, hi: f64, bits: u32) -> f64 {
    let step = (hi - lo) / (1u32 << bits) as f64;
    lo + (code as f64 + 0.5) * step
}

pub fn quantize_frame(frame: &LpcFrame) -> FrameCodes {
    let coeffs = std::array::from_fn(|i| {
        let g = lar(frame.reflection_coeffs[i].clamp(-0.999_999, 0.999_999))
            .clamp(-LAR_LIMIT, LAR_LIMIT);
        quantize_uniform(g, -LAR_LIMIT, LAR_LIMIT, COEFF_BITS[i])
    });
    let gain_db = if frame.gain > 0.0 {
        (20.0 * frame.gain.log10()).clamp(GAIN_FLOOR_DB, 0.0)
    } else {
        GAIN_FLOOR_DB
    };
    let top = ((1u32 << GAIN_BITS) - 1) as f64;
    let gain = ((gain_db - GAIN_FLOOR_DB) / -GAIN_FLOOR_DB * top).round() as u8;
    let pitch = if frame.voiced {
        (frame.pitch_lag.clamp(MIN_PITCH_LAG, MAX_PITCH_LAG) - MIN_PITCH_LAG) as u8
    } else {
        0
    };
    FrameCodes {
        voiced: frame.voiced,
        pitch,
        gain,
        coeffs,
    }
}

/// Gain code 0 decodes to silence rather than −60 dBFS.
pub fn dequantize_frame(codes: &FrameCodes) -> LpcFrame {
    let reflection_coeffs = std::array::from_fn(|i| {
        lar_to_reflection(dequantize_uniform(
            codes.coeffs[i],
            -LAR_LIMIT,
            LAR_LIMIT,
            COEFF_BITS[i],
        ))
    });
    let top = ((1u32 << GAIN_BITS) - 1) as f64;
    let gain = if codes.gain == 0 {
        0.0
    } else {
        10f64.powf((GAIN_FLOOR_DB + codes.gain as f64 / top * -GAIN_FLOOR_DB) / 20.0)
    };
    LpcFrame {
        reflection_coeffs,
        gain,
        pitch_lag: if codes.voiced {
            codes.pitch as usize + MIN_PITCH_LAG
        } else {
            0
        },
        voiced: codes.voiced,
    }
}

/// Codec instance; the seed fixes the unvoiced excitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lpc10Codec {
    pub voicing: VoicingThresholds,
    pub noise_seed: u64,
}

impl Default for Lpc10Codec {
    fn default() -> Self {
        Self {
            voicing: VoicingThresholds::default(),
            noise_seed: 0x4C50_4331,
        }
    }
}

fn zero_crossing_rate(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let crossings = x
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count();
    crossings as f64 / (x.len() - 1) as f64
}

fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

impl Lpc10Codec {
    /// Analyzes one frame given the samples that precede it.
    pub fn analyze_frame(&self, history: &[f64], frame: &[f64]) -> LpcFrame {
        debug_assert_eq!(frame.len(), FRAME_LEN);
        let rms = (frame.iter().map(|v| v * v).sum::<f64>() / FRAME_LEN as f64).sqrt();
        let window = hamming(FRAME_LEN);
        let windowed: Vec<f64> = frame.iter().zip(&window).map(|(x, w)| x * w).collect();
        let r = autocorrelation(&windowed);
        if rms == 0.0 {
            return LpcFrame::silence();
        }
        let Ok(analysis) = levinson_durbin(&r) else {
            return LpcFrame::silence();
        };

        let mut buf = vec![0.0; PITCH_BUFFER];
        let hist_len = (PITCH_BUFFER - FRAME_LEN).min(history.len());
        let start = PITCH_BUFFER - FRAME_LEN - hist_len;
        buf[start..PITCH_BUFFER - FRAME_LEN].copy_from_slice(&history[history.len() - hist_len..]);
        buf[PITCH_BUFFER - FRAME_LEN..].copy_from_slice(frame);
        let pitch = amdf_pitch(&buf);

        let energy_db = 20.0 * rms.log10();
        let v = &self.voicing;
        let voiced = energy_db > v.min_energy_dbfs
            && pitch.confidence > v.min_pitch_confidence
            && zero_crossing_rate(frame) < v.max_zero_crossing_rate;
        LpcFrame {
            reflection_coeffs: analysis.reflection,
            gain: rms,
            pitch_lag: if voiced { pitch.lag } else { 0 },
            voiced,
        }
    }

    pub fn encode(&self, w: &Waveform) -> Result<LpcBitstream> {
        if w.sample_rate != CODEC_RATE {
            return Err(Error::InvalidArgument(format!(
                "LPC-10 encoder needs {CODEC_RATE} Hz input, got {} Hz",
                w.sample_rate
            )));
        }
        let n_frames = w.len().div_ceil(FRAME_LEN);
        let mut padded = w.samples.clone();
        padded.resize(n_frames * FRAME_LEN, 0.0);
        let frames = (0..n_frames)
            .map(|i| {
                let start = i * FRAME_LEN;
                let frame = self.analyze_frame(&padded[..start], &padded[start..start + FRAME_LEN]);
                quantize_frame(&frame).pack()
            })
            .collect();
        let stream = LpcBitstream { frames };
        assert_eq!(stream.bits_per_second(), 2400.0);
        Ok(stream)
    }

    pub fn decode(&self, b: &LpcBitstream) -> Waveform {
        let mut synth = Synthesizer::new(self.noise_seed);
        let mut out = Vec::with_capacity(b.frames.len() * FRAME_LEN);
        for &bits in &b.frames {
            let frame = dequantize_frame(&FrameCodes::unpack(bits));
            out.extend(synth.frame(&frame));
        }
        Waveform::new(out, CODEC_RATE)
    }
}

/// Decoder state carried across frames.
struct Synthesizer {
    /// Most recent output first.
    memory: [f64; LPC_ORDER],
    since_pulse: usize,
    rng: ChaCha8Rng,
}

impl Synthesizer {
    fn new(seed: u64) -> Self {
        Self {
            memory: [0.0; LPC_ORDER],
            since_pulse: usize::MAX / 2,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn filter(a: &[f64; LPC_ORDER], memory: &mut [f64; LPC_ORDER], input: &[f64]) -> Vec<f64> {
        input
            .iter()
            .map(|&e| {
                let y = e + a.iter().zip(memory.iter()).map(|(ai, yi)| ai * yi).sum::<f64>();
                memory.rotate_right(1);
                memory[0] = y;
                y
            })
            .collect()
    }

    fn frame(&mut self, frame: &LpcFrame) -> Vec<f64> {
        let excitation: Vec<f64> = if frame.voiced {
            (0..FRAME_LEN)
                .map(|_| {
                    self.since_pulse += 1;
                    if self.since_pulse >= frame.pitch_lag {
                        self.since_pulse = 0;
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        } else {
            (0..FRAME_LEN)
                .map(|_| StandardNormal.sample(&mut self.rng))
                .collect()
        };
        let a = reflection_to_lpc(&frame.reflection_coeffs);

        // Output = ringing from the previous frame + scale × zero-state
        // response. Pick the scale that makes the frame RMS hit the gain.
        let ringing = Self::filter(&a, &mut self.memory.clone(), &[0.0; FRAME_LEN]);
        let response = Self::filter(&a, &mut [0.0; LPC_ORDER], &excitation);
        let aa: f64 = response.iter().map(|v| v * v).sum();
        let bb: f64 = 2.0 * ringing.iter().zip(&response).map(|(r, s)| r * s).sum::<f64>();
        let cc: f64 = ringing.iter().map(|v| v * v).sum::<f64>()
            - FRAME_LEN as f64 * frame.gain * frame.gain;
        let scale = if aa <= 0.0 {
            0.0
        } else {
            let disc = bb * bb - 4.0 * aa * cc;
            if disc >= 0.0 {
                ((-bb + disc.sqrt()) / (2.0 * aa)).max(0.0)
            } else {
                (-bb / (2.0 * aa)).max(0.0)
            }
        };
        let scaled: Vec<f64> = excitation.iter().map(|e| e * scale).collect();
        Self::filter(&a, &mut self.memory, &scaled)
    }
}

/// 16 kHz → 8 kHz → LPC-10 round trip → 16 kHz, same length as the input.
pub fn degrade_lpc10(w: &Waveform, codec: &Lpc10Codec) -> Result<Waveform> {
    w.ensure_non_empty("degrade_lpc10")?;
    let narrow = resample(w, CODEC_RATE)?;
    let decoded = codec.decode(&codec.encode(&narrow)?).fit_to_len(narrow.len());
    Ok(resample(&decoded, w.sample_rate)?.fit_to_len(w.len()))
}
