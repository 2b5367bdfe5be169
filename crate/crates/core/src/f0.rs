//! F0 contour estimation and per-class F0 distribution histograms.
//!
//! Contours are analysis output only; the classifier consumes the LPS F0
//! subband, not these values.

use crate::dataset::Waveform;
use crate::error::{Error, Result};

/// Normalized-autocorrelation estimator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Config {
    pub frame_len_s: f64,
    pub hop_s: f64,
    pub min_hz: f64,
    pub max_hz: f64,
    /// Frames whose peak normalized autocorrelation falls below this are unvoiced.
    pub voicing_threshold: f64,
    /// Frames quieter than this RMS level (dBFS) are unvoiced.
    pub energy_floor_dbfs: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        F0Config {
            frame_len_s: 0.040,
            hop_s: 0.010,
            min_hz: 50.0,
            max_hz: 500.0,
            voicing_threshold: 0.3,
            energy_floor_dbfs: -60.0,
        }
    }
}

/// Per-frame F0 estimates in Hz; 0 encodes unvoiced.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    pub values: Vec<f64>,
    pub frame_hop_s: f64,
    pub search_range_hz: (f64, f64),
}

impl F0Contour {
    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied().filter(|&v| v > 0.0)
    }

    /// Max minus min over voiced frames; 0 if fewer than two voiced frames.
    pub fn voiced_range_hz(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in self.voiced() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi > lo {
            hi - lo
        } else {
            0.0
        }
    }
}

/// Aggregated voiced-frame counts over frequency bins.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Histogram {
    pub bin_edges_hz: Vec<f64>,
    pub counts: Vec<u64>,
    pub n_utterances: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramSummary {
    pub fraction_below_400hz: f64,
    pub modal_bin: usize,
    pub modal_bin_range_hz: (f64, f64),
    /// Mean absolute difference of adjacent normalized bin counts; spiky
    /// distributions score higher than smooth ones.
    pub roughness: f64,
}

/// Default histogram edges: 0..500 Hz in 5 Hz steps.
pub fn default_edges() -> Vec<f64> {
    (0..=100).map(|i| i as f64 * 5.0).collect()
}

/// Estimate a per-frame F0 contour via normalized autocorrelation with
/// parabolic peak interpolation.
pub fn estimate_f0(w: &Waveform, cfg: &F0Config) -> Result<F0Contour> {
    let fs = w.sample_rate_hz as f64;
    if fs < 2.0 * cfg.max_hz {
        return Err(Error::Config(format!(
            "sample rate {fs} too low for max search frequency {}",
            cfg.max_hz
        )));
    }
    let frame_len = (cfg.frame_len_s * fs).round() as usize;
    let hop = ((cfg.hop_s * fs).round() as usize).max(1);
    let min_lag = (fs / cfg.max_hz).floor() as usize;
    let max_lag = (fs / cfg.min_hz).ceil() as usize;
    if frame_len <= max_lag {
        return Err(Error::Config(
            "frame too short for the low end of the search range".into(),
        ));
    }
    let corr_len = frame_len - max_lag;

    let mut values = Vec::new();
    let mut start = 0;
    while start + frame_len <= w.samples.len() {
        let frame = &w.samples[start..start + frame_len];
        values.push(frame_f0(frame, fs, min_lag, max_lag, corr_len, cfg));
        start += hop;
    }
    if values.is_empty() && !w.samples.is_empty() {
        // Shorter than one frame: analyze what we have if it covers the lag range.
        if w.samples.len() > max_lag + 8 {
            let corr = w.samples.len() - max_lag;
            values.push(frame_f0(&w.samples, fs, min_lag, max_lag, corr, cfg));
        }
    }
    Ok(F0Contour {
        values,
        frame_hop_s: cfg.hop_s,
        search_range_hz: (cfg.min_hz, cfg.max_hz),
    })
}

fn frame_f0(
    frame: &[f64],
    fs: f64,
    min_lag: usize,
    max_lag: usize,
    corr_len: usize,
    cfg: &F0Config,
) -> f64 {
    let rms = (frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64).sqrt();
    if rms <= 0.0 || 20.0 * rms.log10() < cfg.energy_floor_dbfs {
        return 0.0;
    }
    let corr = normalized_autocorr(frame, min_lag, max_lag, corr_len);
    let Some((peak_idx, peak_val)) = pick_peak(&corr, cfg.voicing_threshold) else {
        return 0.0;
    };
    let _ = peak_val;
    let lag = peak_idx + min_lag;
    // Parabolic interpolation around the chosen lag.
    let refined = if peak_idx > 0 && peak_idx + 1 < corr.len() {
        let (a, b, c) = (corr[peak_idx - 1], corr[peak_idx], corr[peak_idx + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            lag as f64 + 0.5 * (a - c) / denom
        } else {
            lag as f64
        }
    } else {
        lag as f64
    };
    (fs / refined).clamp(cfg.min_hz, cfg.max_hz)
}

/// Normalized autocorrelation r(lag) over `corr_len` samples, for lags in
/// `[min_lag, max_lag]`.
pub fn normalized_autocorr(
    frame: &[f64],
    min_lag: usize,
    max_lag: usize,
    corr_len: usize,
) -> Vec<f64> {
    let base_energy: f64 = frame[..corr_len].iter().map(|v| v * v).sum();
    (min_lag..=max_lag)
        .map(|lag| {
            let mut cross = 0.0;
            let mut lag_energy = 0.0;
            for n in 0..corr_len {
                cross += frame[n] * frame[n + lag];
                lag_energy += frame[n + lag] * frame[n + lag];
            }
            let denom = (base_energy * lag_energy).sqrt();
            if denom > 0.0 {
                cross / denom
            } else {
                0.0
            }
        })
        .collect()
}

/// Choose the shortest local maximum within 2% of the global peak; guards
/// against octave (subharmonic) errors on harmonic-rich frames.
pub fn pick_peak(corr: &[f64], voicing_threshold: f64) -> Option<(usize, f64)> {
    let (best_idx, best) = corr
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())?;
    if best < voicing_threshold {
        return None;
    }
    let cutoff = best - 0.02 * best.abs().max(1e-12);
    for i in 0..corr.len() {
        let left_ok = i == 0 || corr[i] >= corr[i - 1];
        let right_ok = i + 1 == corr.len() || corr[i] >= corr[i + 1];
        if left_ok && right_ok && corr[i] >= cutoff {
            return Some((i, corr[i]));
        }
    }
    Some((best_idx, best))
}

/// Bin voiced frames from many contours; unvoiced frames are excluded.
pub fn accumulate_histogram(contours: &[F0Contour], edges: &[f64]) -> Result<F0Histogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("histogram edges must be strictly increasing".into()));
    }
    if let Some(first) = contours.first() {
        if contours.iter().any(|c| c.frame_hop_s != first.frame_hop_s) {
            return Err(Error::Config("contours have mismatched frame hops".into()));
        }
    }
    let mut counts = vec![0u64; edges.len() - 1];
    let top = *edges.last().unwrap();
    for contour in contours {
        for v in contour.voiced() {
            if v < edges[0] || v > top {
                continue;
            }
            let bin = if v >= top {
                counts.len() - 1
            } else {
                edges.partition_point(|&e| e <= v) - 1
            };
            counts[bin] += 1;
        }
    }
    Ok(F0Histogram {
        bin_edges_hz: edges.to_vec(),
        counts,
        n_utterances: contours.len(),
    })
}

/// Mass fraction below 400 Hz, modal bin, and a spikiness statistic.
pub fn histogram_summary(h: &F0Histogram) -> Result<HistogramSummary> {
    let total: u64 = h.counts.iter().sum();
    if total == 0 {
        return Err(Error::Metric("empty histogram".into()));
    }
    let total_f = total as f64;
    let mut below = 0.0;
    for (i, &c) in h.counts.iter().enumerate() {
        let (lo, hi) = (h.bin_edges_hz[i], h.bin_edges_hz[i + 1]);
        let overlap = (hi.min(400.0) - lo.max(0.0)).max(0.0);
        below += c as f64 * overlap / (hi - lo);
    }
    let modal_bin = h
        .counts
        .iter()
        .enumerate()
        .max_by_key(|(_, &c)| c)
        .map(|(i, _)| i)
        .unwrap();
    let norm: Vec<f64> = h.counts.iter().map(|&c| c as f64 / total_f).collect();
    let roughness = norm
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .sum::<f64>()
        / (norm.len() - 1).max(1) as f64;
    Ok(HistogramSummary {
        fraction_below_400hz: below / total_f,
        modal_bin,
        modal_bin_range_hz: (h.bin_edges_hz[modal_bin], h.bin_edges_hz[modal_bin + 1]),
        roughness,
    })
}
