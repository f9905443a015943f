//! Order-10 linear prediction analysis and AMDF pitch estimation.

use thiserror::Error;

pub const LPC_ORDER: usize = 10;
pub const MIN_PITCH_LAG: usize = 20;
pub const MAX_PITCH_LAG: usize = 147;

/// Predictor `x[n] ≈ Σ lpc[i] · x[n-1-i]` and the matching reflection
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcAnalysis {
    pub lpc: [f64; LPC_ORDER],
    pub reflection: [f64; LPC_ORDER],
    pub prediction_error: f64,
}

/// The recursion hit a (near-)singular step; the frame should be coded as
/// silence.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("degenerate LPC frame at order {order}")]
pub struct DegenerateFrame {
    pub order: usize,
}

/// Levinson-Durbin recursion on `r[0..=10]`.
pub fn levinson_durbin(autocorr: &[f64; LPC_ORDER + 1]) -> Result<LpcAnalysis, DegenerateFrame> {
    let r = autocorr;
    if !(r[0] > 0.0) {
        return Err(DegenerateFrame { order: 0 });
    }
    let mut a = [0.0; LPC_ORDER];
    let mut k = [0.0; LPC_ORDER];
    let mut err = r[0];
    for i in 0..LPC_ORDER {
        let mut acc = r[i + 1];
        for j in 0..i {
            acc -= a[j] * r[i - j];
        }
        let ki = acc / err;
        if 1.0 - ki * ki < 1e-12 {
            return Err(DegenerateFrame { order: i + 1 });
        }
        let prev = a;
        a[i] = ki;
        for j in 0..i {
            a[j] = prev[j] - ki * prev[i - 1 - j];
        }
        k[i] = ki;
        err *= 1.0 - ki * ki;
    }
    Ok(LpcAnalysis {
        lpc: a,
        reflection: k,
        prediction_error: err.max(0.0),
    })
}

/// Step-up recursion: reflection coefficients back to predictor coefficients.
pub fn reflection_to_lpc(k: &[f64; LPC_ORDER]) -> [f64; LPC_ORDER] {
    let mut a = [0.0; LPC_ORDER];
    for i in 0..LPC_ORDER {
        let prev = a;
        a[i] = k[i];
        for j in 0..i {
            a[j] = prev[j] - k[i] * prev[i - 1 - j];
        }
    }
    a
}

/// Autocorrelation `r[0..=order]` of a (windowed) frame.
pub fn autocorrelation(x: &[f64]) -> [f64; LPC_ORDER + 1] {
    let mut r = [0.0; LPC_ORDER + 1];
    for (lag, slot) in r.iter_mut().enumerate() {
        *slot = x.iter().zip(&x[lag.min(x.len())..]).map(|(a, b)| a * b).sum();
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchEstimate {
    /// Period in samples at 8 kHz, within `[20, 147]`.
    pub lag: usize,
    /// `1 − AMDF(lag) / mean(AMDF)`, clamped to `[0, 1]`.
    pub confidence: f64,
}

/// Near-minima within this fraction of the AMDF's dynamic range count as
/// ties; the shortest tied lag wins, which suppresses sub-harmonic picks.
const TIE_FRACTION: f64 = 0.1;

/// Average magnitude difference pitch search over lags 20..=147.
///
/// Every lag is averaged over the same samples, `buf[147..]`, so the buffer
/// must be longer than 147 samples (the encoder passes 320).
pub fn amdf_pitch(buf: &[f64]) -> PitchEstimate {
    assert!(
        buf.len() > MAX_PITCH_LAG,
        "AMDF buffer needs more than {MAX_PITCH_LAG} samples"
    );
    if buf.iter().all(|&v| v == 0.0) {
        return PitchEstimate {
            lag: MIN_PITCH_LAG,
            confidence: 0.0,
        };
    }
    let amdf = amdf_curve(buf);
    let mean = amdf.iter().sum::<f64>() / amdf.len() as f64;
    let is_local_min = |i: usize| {
        (i == 0 || amdf[i] <= amdf[i - 1]) && (i + 1 == amdf.len() || amdf[i] <= amdf[i + 1])
    };
    // AMDF dips are V shaped. When the period falls between two integer
    // lags the sampled dip is shallower than the true one, which would
    // favour a multiple of the period that happens to land closer to an
    // integer. Compare dips by the vertex of a symmetric V through the
    // three samples instead.
    let depth = |i: usize| {
        if i == 0 || i + 1 == amdf.len() {
            return amdf[i];
        }
        let (l, c, r) = (amdf[i - 1], amdf[i], amdf[i + 1]);
        let slope = l.max(r) - c;
        ((c + l.min(r) - slope) / 2.0).clamp(0.0, c)
    };
    let depths: Vec<f64> = (0..amdf.len()).map(depth).collect();
    let min = depths.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = min + TIE_FRACTION * (mean - min);
    let best = (0..amdf.len())
        .find(|&i| depths[i] <= tol && is_local_min(i))
        .unwrap_or_else(|| {
            (0..amdf.len())
                .min_by(|&a, &b| amdf[a].total_cmp(&amdf[b]))
                .unwrap_or(0)
        });
    let confidence = if mean > 0.0 {
        (1.0 - amdf[best] / mean).clamp(0.0, 1.0)
    } else {
        0.0
    };
    PitchEstimate {
        lag: best + MIN_PITCH_LAG,
        confidence,
    }
}

/// AMDF values for lags `MIN_PITCH_LAG..=MAX_PITCH_LAG`.
pub(crate) fn amdf_curve(buf: &[f64]) -> Vec<f64> {
    let n = (buf.len() - MAX_PITCH_LAG) as f64;
    (MIN_PITCH_LAG..=MAX_PITCH_LAG)
        .map(|lag| {
            (MAX_PITCH_LAG..buf.len())
                .map(|i| (buf[i] - buf[i - lag]).abs())
                .sum::<f64>()
                / n
        })
        .collect()
}
