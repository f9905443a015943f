use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::dsp::{resample, stft_magnitude, Waveform, DEFAULT_SAMPLE_RATE};
use crate::{Error, Result};

const N_FFT: usize = 512;
const HOP: usize = 128;
/// Dynamic range shown below the loudest bin of all panels.
const RANGE_DB: f64 = 80.0;
const MARGIN: u32 = 12;
const GAP: u32 = 6;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const TICK: Rgb<u8> = Rgb([0, 0, 0]);

/// Magnitude STFT at 16 kHz, `[bins × frames]`, bin 0 at 0 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitude: Array2<f64>,
    pub sample_rate: u32,
    pub n_fft: usize,
}

impl Spectrogram {
    pub fn compute(w: &Waveform) -> Result<Self> {
        w.ensure_non_empty("spectrogram")?;
        let w = if w.sample_rate == DEFAULT_SAMPLE_RATE {
            w.clone()
        } else {
            resample(w, DEFAULT_SAMPLE_RATE)?
        };
        Ok(Self {
            magnitude: stft_magnitude(&w.samples, N_FFT, N_FFT, HOP),
            sample_rate: DEFAULT_SAMPLE_RATE,
            n_fft: N_FFT,
        })
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.n_fft as f64
    }

    /// Share of the total energy in bins above `cutoff_hz`.
    pub fn energy_fraction_above(&self, cutoff_hz: f64) -> f64 {
        let mut total = 0.0;
        let mut high = 0.0;
        for (k, row) in self.magnitude.rows().into_iter().enumerate() {
            let e: f64 = row.iter().map(|m| m * m).sum();
            total += e;
            if k as f64 * self.bin_hz() > cutoff_hz {
                high += e;
            }
        }
        if total > 0.0 {
            high / total
        } else {
            0.0
        }
    }

    fn db(&self) -> Array2<f64> {
        self.magnitude.mapv(|m| 20.0 * (m + 1e-10).log10())
    }
}

/// Piecewise-linear dark-to-bright colour map.
fn colour(v: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 4.0],
        [81.0, 18.0, 124.0],
        [183.0, 55.0, 121.0],
        [252.0, 137.0, 97.0],
        [252.0, 253.0, 191.0],
    ];
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |j: usize| (STOPS[i][j] + f * (STOPS[i + 1][j] - STOPS[i][j])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Where each panel sits in the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PanelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone)]
pub struct SpectrogramFigure {
    pub spectrograms: Vec<Spectrogram>,
    pub panels: Vec<PanelRect>,
    /// Shared colour scale in dB.
    pub db_range: (f64, f64),
    pub image: RgbImage,
}

/// Stacks log-magnitude spectrograms vertically with one colour scale.
/// Frequency runs from 0 Hz at the bottom of each panel to 8 kHz at the
/// top, with a tick per kHz in the left margin (longer at 0, 4 and 8).
pub fn render_spectrograms(waves: &[&Waveform]) -> Result<SpectrogramFigure> {
    if waves.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let spectrograms: Vec<Spectrogram> = waves.iter().map(|w| Spectrogram::compute(w)).collect::<Result<_>>()?;
    let dbs: Vec<Array2<f64>> = spectrograms.iter().map(Spectrogram::db).collect();
    let vmax = dbs.iter().flat_map(|d| d.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    let vmin = vmax - RANGE_DB;
    let bins = (N_FFT / 2 + 1) as u32;
    let width = dbs.iter().map(|d| d.ncols()).max().unwrap_or(0) as u32;
    let n = dbs.len() as u32;
    let mut image = RgbImage::from_pixel(MARGIN + width, n * bins + (n - 1) * GAP, BACKGROUND);
    let mut panels = Vec::new();
    for (p, db) in dbs.iter().enumerate() {
        let top = p as u32 * (bins + GAP);
        for ((k, j), v) in db.indexed_iter() {
            let y = top + bins - 1 - k as u32;
            image.put_pixel(MARGIN + j as u32, y, colour((v - vmin) / RANGE_DB));
        }
        let bin_hz = spectrograms[p].bin_hz();
        for khz in 0..=8u32 {
            let k = ((khz as f64 * 1000.0 / bin_hz).round() as u32).min(bins - 1);
            let len = if khz % 4 == 0 { 8 } else { 4 };
            for x in MARGIN - len..MARGIN {
                image.put_pixel(x, top + bins - 1 - k, TICK);
            }
        }
        panels.push(PanelRect {
            x: MARGIN,
            y: top,
            width: db.ncols() as u32,
            height: bins,
        });
    }
    Ok(SpectrogramFigure {
        spectrograms,
        panels,
        db_range: (vmin, vmax),
        image,
    })
}

/// Writes the figure as PNG.
pub fn plot_spectrograms(waves: &[&Waveform], out: &Path) -> Result<SpectrogramFigure> {
    let fig = render_spectrograms(waves)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fig.image.save(out)?;
    Ok(fig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::DegradationSpec;
    use crate::experiment::synth_utterance;

    fn region(img: &RgbImage, r: PanelRect) -> Vec<u8> {
        let mut v = Vec::new();
        for y in r.y..r.y + r.height {
            for x in r.x..r.x + r.width {
                v.extend_from_slice(&img.get_pixel(x, y).0);
            }
        }
        v
    }

    #[test]
    fn identical_inputs_give_identical_panels() {
        let w = synth_utterance(3, 0).waveform;
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("fig/spec.png");
        let fig = plot_spectrograms(&[&w, &w, &w, &w], &out).unwrap();
        assert!(std::fs::metadata(&out).unwrap().len() > 0);
        let img = image::open(&out).unwrap().to_rgb8();
        assert_eq!(img, fig.image);
        let first = region(&img, fig.panels[0]);
        assert!(first.iter().any(|&b| b != 255));
        for r in &fig.panels[1..] {
            assert_eq!(region(&img, *r), first);
        }
    }

    #[test]
    fn lpc10_panel_has_no_high_band() {
        let clean = synth_utterance(3, 1).waveform;
        let degraded = DegradationSpec::default().apply(&clean).unwrap();
        let fig = render_spectrograms(&[&clean, &degraded]).unwrap();
        let high = |i: usize| fig.spectrograms[i].energy_fraction_above(4000.0);
        assert!(high(0) >= 0.01, "clean high band {}", high(0));
        assert!(high(1) < 0.01, "degraded high band {}", high(1));
    }

    #[test]
    fn band_fraction_of_a_pure_tone() {
        let tone = |f: f64| {
            Waveform::new(
                (0..8000).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin()).collect(),
                16000,
            )
        };
        // Reflection at the edges leaks a little energy across the band.
        assert!(Spectrogram::compute(&tone(1000.0)).unwrap().energy_fraction_above(4000.0) < 1e-3);
        assert!(Spectrogram::compute(&tone(6000.0)).unwrap().energy_fraction_above(4000.0) > 0.999);
    }

    #[test]
    fn colour_map_ends() {
        assert_eq!(colour(0.0), Rgb([0, 0, 4]));
        assert_eq!(colour(1.0), Rgb([252, 253, 191]));
        assert_eq!(colour(-3.0), colour(0.0));
    }
}
