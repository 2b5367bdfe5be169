//! STFT and the four feature views (LPS, phase angle, real, imaginary),
//! frame-count normalization, and subband slicing.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::Waveform;
use crate::error::{Error, Result};

/// Floor added inside the log of the LPS so silence stays finite.
pub const LPS_EPSILON: f64 = 1e-10;

/// Frame count every feature matrix is normalized to.
pub const TARGET_FRAMES: usize = 600;

/// Last (exclusive) bin of the F0 subband for the 865-bin layout.
pub const F0_END_BIN: usize = 45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowKind {
    Blackman,
}

/// STFT analysis parameters. Defaults give 865 frequency bins at 16 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window: WindowKind,
    pub window_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    pub sample_rate_hz: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window: WindowKind::Blackman,
            window_len: 1728,
            hop: 130,
            fft_len: 1728,
            sample_rate_hz: 16000,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "hop must satisfy 0 < hop <= window_len, got hop={} window_len={}",
                self.hop, self.window_len
            )));
        }
        if self.fft_len < self.window_len {
            return Err(Error::Config(format!(
                "fft_len {} shorter than window_len {}",
                self.fft_len, self.window_len
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample_rate_hz must be positive".into()));
        }
        Ok(())
    }

    /// Number of frequency bins: fft_len/2 + 1.
    pub fn freq_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }
}

/// Real and imaginary STFT parts, each `freq_bins x frames` row-major.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
    pub freq_bins: usize,
    pub frames: usize,
    pub config: StftConfig,
}

impl ComplexSpectrogram {
    #[inline]
    pub fn at(&self, bin: usize, frame: usize) -> (f64, f64) {
        let i = bin * self.frames + frame;
        (self.real[i], self.imag[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Lps,
    PhaseAngle,
    Real,
    Imag,
    Magnitude,
}

impl FeatureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::Lps => "lps",
            FeatureKind::PhaseAngle => "pa",
            FeatureKind::Real => "real",
            FeatureKind::Imag => "imag",
            FeatureKind::Magnitude => "mag",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "lps" => FeatureKind::Lps,
            "pa" | "phase" => FeatureKind::PhaseAngle,
            "real" => FeatureKind::Real,
            "imag" => FeatureKind::Imag,
            "mag" | "magnitude" => FeatureKind::Magnitude,
            other => return Err(Error::Config(format!("unknown feature kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubbandName {
    F0,
    Rest,
    Low,
    High,
    Full,
}

impl SubbandName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SubbandName::F0 => "f0",
            SubbandName::Rest => "rest",
            SubbandName::Low => "low",
            SubbandName::High => "high",
            SubbandName::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "f0" => SubbandName::F0,
            "rest" => SubbandName::Rest,
            "low" | "l" => SubbandName::Low,
            "high" | "h" => SubbandName::High,
            "full" => SubbandName::Full,
            other => return Err(Error::Config(format!("unknown subband `{other}`"))),
        })
    }
}

/// Named half-open frequency-bin range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubbandSpec {
    pub name: SubbandName,
    pub start_bin: usize,
    pub end_bin: usize,
}

impl SubbandSpec {
    pub fn f0() -> Self {
        SubbandSpec {
            name: SubbandName::F0,
            start_bin: 0,
            end_bin: F0_END_BIN,
        }
    }

    pub fn rest(freq_bins: usize) -> Self {
        SubbandSpec {
            name: SubbandName::Rest,
            start_bin: F0_END_BIN,
            end_bin: freq_bins,
        }
    }

    pub fn low(freq_bins: usize) -> Self {
        SubbandSpec {
            name: SubbandName::Low,
            start_bin: 0,
            end_bin: freq_bins.div_ceil(2),
        }
    }

    pub fn high(freq_bins: usize) -> Self {
        SubbandSpec {
            name: SubbandName::High,
            start_bin: freq_bins.div_ceil(2),
            end_bin: freq_bins,
        }
    }

    pub fn full(freq_bins: usize) -> Self {
        SubbandSpec {
            name: SubbandName::Full,
            start_bin: 0,
            end_bin: freq_bins,
        }
    }

    pub fn named(name: SubbandName, freq_bins: usize) -> Self {
        match name {
            SubbandName::F0 => Self::f0(),
            SubbandName::Rest => Self::rest(freq_bins),
            SubbandName::Low => Self::low(freq_bins),
            SubbandName::High => Self::high(freq_bins),
            SubbandName::Full => Self::full(freq_bins),
        }
    }

    pub fn bin_count(&self) -> usize {
        self.end_bin - self.start_bin
    }

    pub fn validate(&self, freq_bins: usize) -> Result<()> {
        if self.start_bin >= self.end_bin || self.end_bin > freq_bins {
            return Err(Error::Config(format!(
                "subband [{}, {}) out of range for {} bins",
                self.start_bin, self.end_bin, freq_bins
            )));
        }
        Ok(())
    }
}

/// A real-valued `rows x cols` time-frequency feature, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub kind: FeatureKind,
    pub band: SubbandSpec,
    pub trial_id: String,
}

impl FeatureMatrix {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

fn blackman_window(len: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    (0..len)
        .map(|n| {
            let x = 2.0 * PI * n as f64 / len as f64;
            0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
        })
        .collect()
}

/// Short-time Fourier transform with a Blackman window.
///
/// The signal is zero-padded at the tail so at least one full window fits;
/// frame `t` covers samples `[t*hop, t*hop + window_len)`. Frame count is
/// `floor((len_padded - window_len)/hop) + 1`.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if w.samples.is_empty() {
        return Err(Error::Config("cannot transform empty waveform".into()));
    }
    let len_padded = w.samples.len().max(cfg.window_len);
    let frames = (len_padded - cfg.window_len) / cfg.hop + 1;
    let freq_bins = cfg.freq_bins();
    let window = blackman_window(cfg.window_len);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_len);
    let mut real = vec![0.0; freq_bins * frames];
    let mut imag = vec![0.0; freq_bins * frames];
    let mut buf = vec![Complex64::default(); cfg.fft_len];

    for t in 0..frames {
        let start = t * cfg.hop;
        for (n, slot) in buf.iter_mut().enumerate() {
            let v = if n < cfg.window_len {
                w.samples.get(start + n).copied().unwrap_or(0.0) * window[n]
            } else {
                0.0
            };
            *slot = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        for f in 0..freq_bins {
            real[f * frames + t] = buf[f].re;
            imag[f * frames + t] = buf[f].im;
        }
    }
    Ok(ComplexSpectrogram {
        real,
        imag,
        freq_bins,
        frames,
        config: *cfg,
    })
}

fn full_feature(
    spec: &ComplexSpectrogram,
    kind: FeatureKind,
    trial_id: &str,
    f: impl Fn(f64, f64) -> f64,
) -> FeatureMatrix {
    let data = spec
        .real
        .iter()
        .zip(&spec.imag)
        .map(|(&re, &im)| f(re, im))
        .collect();
    FeatureMatrix {
        data,
        rows: spec.freq_bins,
        cols: spec.frames,
        kind,
        band: SubbandSpec::full(spec.freq_bins),
        trial_id: trial_id.to_string(),
    }
}

/// Log power spectrogram: `ln(sqrt(re^2 + im^2) + eps)`.
pub fn to_lps(spec: &ComplexSpectrogram, trial_id: &str) -> FeatureMatrix {
    full_feature(spec, FeatureKind::Lps, trial_id, |re, im| {
        (re.hypot(im) + LPS_EPSILON).ln()
    })
}

/// Phase angle in (-pi, pi]; (0, 0) maps to 0.
pub fn to_phase_angle(spec: &ComplexSpectrogram, trial_id: &str) -> FeatureMatrix {
    full_feature(spec, FeatureKind::PhaseAngle, trial_id, |re, im| {
        if re == 0.0 && im == 0.0 {
            0.0
        } else {
            let v = im.atan2(re);
            if v <= -std::f64::consts::PI {
                std::f64::consts::PI
            } else {
                v
            }
        }
    })
}

/// Magnitude spectrogram.
pub fn to_magnitude(spec: &ComplexSpectrogram, trial_id: &str) -> FeatureMatrix {
    full_feature(spec, FeatureKind::Magnitude, trial_id, |re, im| re.hypot(im))
}

/// Real and imaginary spectrograms reconstructed as `M*cos(PA)` / `M*sin(PA)`.
pub fn to_real_imag(spec: &ComplexSpectrogram, trial_id: &str) -> (FeatureMatrix, FeatureMatrix) {
    let real = full_feature(spec, FeatureKind::Real, trial_id, |re, im| {
        let m = re.hypot(im);
        if m == 0.0 {
            0.0
        } else {
            m * im.atan2(re).cos()
        }
    });
    let imag = full_feature(spec, FeatureKind::Imag, trial_id, |re, im| {
        let m = re.hypot(im);
        if m == 0.0 {
            0.0
        } else {
            m * im.atan2(re).sin()
        }
    });
    (real, imag)
}

/// Normalize the frame count: truncate to the first `target` frames, or tile
/// the whole matrix along time until `target` frames are filled.
pub fn fix_frames(m: &FeatureMatrix, target: usize) -> Result<FeatureMatrix> {
    if target == 0 {
        return Err(Error::Config("target frame count must be positive".into()));
    }
    if m.cols == 0 {
        return Err(Error::Shape("matrix has no frames".into()));
    }
    if m.cols == target {
        return Ok(m.clone());
    }
    let mut data = Vec::with_capacity(m.rows * target);
    for r in 0..m.rows {
        let row = &m.data[r * m.cols..(r + 1) * m.cols];
        for t in 0..target {
            data.push(row[t % m.cols]);
        }
    }
    Ok(FeatureMatrix {
        data,
        rows: m.rows,
        cols: target,
        ..m.clone()
    })
}

/// Extract rows `[start_bin, end_bin)` of a full-band matrix.
pub fn slice_subband(m: &FeatureMatrix, band: SubbandSpec) -> Result<FeatureMatrix> {
    if m.band.name != SubbandName::Full {
        return Err(Error::Shape(format!(
            "subband slicing requires a full-band matrix, got {}",
            m.band.name.as_str()
        )));
    }
    band.validate(m.rows)?;
    let mut data = Vec::with_capacity(band.bin_count() * m.cols);
    for r in band.start_bin..band.end_bin {
        data.extend_from_slice(&m.data[r * m.cols..(r + 1) * m.cols]);
    }
    Ok(FeatureMatrix {
        data,
        rows: band.bin_count(),
        cols: m.cols,
        kind: m.kind,
        band,
        trial_id: m.trial_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform {
            samples,
            sample_rate_hz: 16000,
            source_id: "t".into(),
        }
    }

    fn short_cfg() -> StftConfig {
        StftConfig {
            window_len: 64,
            hop: 16,
            fft_len: 64,
            ..StftConfig::default()
        }
    }

    fn random_spec(seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = 2048;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        stft(&wave(x), &short_cfg()).unwrap()
    }

    /// Naive O(N^2) per-frame DFT, kept independent of the FFT path.
    fn naive_stft(x: &[f64], cfg: &StftConfig) -> (Vec<f64>, Vec<f64>, usize, usize) {
        use std::f64::consts::PI;
        let len_padded = x.len().max(cfg.window_len);
        let frames = (len_padded - cfg.window_len) / cfg.hop + 1;
        let bins = cfg.freq_bins();
        let win = blackman_window(cfg.window_len);
        let mut re = vec![0.0; bins * frames];
        let mut im = vec![0.0; bins * frames];
        for t in 0..frames {
            for f in 0..bins {
                let mut sr = 0.0;
                let mut si = 0.0;
                for n in 0..cfg.window_len {
                    let v = x.get(t * cfg.hop + n).copied().unwrap_or(0.0) * win[n];
                    let ang = -2.0 * PI * f as f64 * n as f64 / cfg.fft_len as f64;
                    sr += v * ang.cos();
                    si += v * ang.sin();
                }
                re[f * frames + t] = sr;
                im[f * frames + t] = si;
            }
        }
        (re, im, bins, frames)
    }

    #[test]
    fn default_config_gives_865_bins() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.freq_bins(), 865);
        let x: Vec<f64> = (0..16000).map(|i| (i as f64 * 0.01).sin()).collect();
        let spec = stft(&wave(x), &cfg).unwrap();
        assert_eq!(spec.freq_bins, 865);
        assert_eq!(spec.frames, (16000 - 1728) / 130 + 1);
    }

    #[test]
    fn zero_waveform_gives_zero_spectrogram() {
        let spec = stft(&wave(vec![0.0; 1000]), &short_cfg()).unwrap();
        assert!(spec.real.iter().all(|&v| v == 0.0));
        assert!(spec.imag.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_waveform_is_padded_to_one_frame() {
        let spec = stft(&wave(vec![1.0; 10]), &short_cfg()).unwrap();
        assert_eq!(spec.frames, 1);
    }

    #[test]
    fn tone_peaks_at_its_bin() {
        let cfg = StftConfig::default();
        let fs = 16000.0;
        let f_bin = 100.0 * fs / 1728.0;
        let x: Vec<f64> = (0..32000)
            .map(|k| (2.0 * std::f64::consts::PI * f_bin * k as f64 / fs).cos())
            .collect();
        let spec = stft(&wave(x), &cfg).unwrap();
        // interior frames only
        for t in 2..spec.frames - 2 {
            let mags: Vec<f64> = (0..spec.freq_bins)
                .map(|f| {
                    let (re, im) = spec.at(f, t);
                    re.hypot(im)
                })
                .collect();
            let peak = mags
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(peak, 100, "frame {t}");
        }
    }

    #[test]
    fn stft_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = short_cfg();
        let x: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = stft(&wave(x.clone()), &cfg).unwrap();
        let (re, im, bins, frames) = naive_stft(&x, &cfg);
        assert_eq!((bins, frames), (spec.freq_bins, spec.frames));
        let energy: f64 = spec.real.iter().zip(&spec.imag).map(|(r, i)| r * r + i * i).sum();
        let scale = energy.sqrt().max(1.0);
        for i in 0..re.len() {
            assert!((re[i] - spec.real[i]).abs() < 1e-6 * scale);
            assert!((im[i] - spec.imag[i]).abs() < 1e-6 * scale);
        }
    }

    #[test]
    fn stft_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = short_cfg();
        let x: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(&u, &v)| a * u + b * v).collect();
        let sx = stft(&wave(x), &cfg).unwrap();
        let sy = stft(&wave(y), &cfg).unwrap();
        let sc = stft(&wave(combo), &cfg).unwrap();
        let scale: f64 = sc.real.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        for i in 0..sc.real.len() {
            assert!((sc.real[i] - (a * sx.real[i] + b * sy.real[i])).abs() < 1e-9 * scale);
            assert!((sc.imag[i] - (a * sx.imag[i] + b * sy.imag[i])).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn lps_unit_magnitude_and_floor() {
        let spec = ComplexSpectrogram {
            real: vec![1.0, 0.0],
            imag: vec![0.0, 0.0],
            freq_bins: 2,
            frames: 1,
            config: short_cfg(),
        };
        let lps = to_lps(&spec, "t");
        assert!((lps.data[0] - (1.0 + LPS_EPSILON).ln()).abs() < 1e-12);
        assert_eq!(lps.data[1], LPS_EPSILON.ln());
        assert!(lps.data[1].is_finite());
    }

    #[test]
    fn lps_inverse_check() {
        let spec = random_spec(21);
        let lps = to_lps(&spec, "t");
        let mag = to_magnitude(&spec, "t");
        for i in 0..lps.data.len() {
            let recovered = lps.data[i].exp() - LPS_EPSILON;
            let denom = mag.data[i].abs().max(1e-6);
            assert!((recovered - mag.data[i]).abs() / denom < 1e-9);
        }
    }

    #[test]
    fn phase_angle_quadrants() {
        use std::f64::consts::PI;
        let spec = ComplexSpectrogram {
            real: vec![1.0, -1.0, 0.0],
            imag: vec![1.0, 0.0, 0.0],
            freq_bins: 3,
            frames: 1,
            config: short_cfg(),
        };
        let pa = to_phase_angle(&spec, "t");
        assert!((pa.data[0] - PI / 4.0).abs() < 1e-15);
        assert_eq!(pa.data[1], PI);
        assert_eq!(pa.data[2], 0.0);
    }

    #[test]
    fn magnitude_examples() {
        let spec = ComplexSpectrogram {
            real: vec![3.0, 0.0],
            imag: vec![4.0, 0.0],
            freq_bins: 2,
            frames: 1,
            config: short_cfg(),
        };
        let m = to_magnitude(&spec, "t");
        assert_eq!(m.data, vec![5.0, 0.0]);
    }

    #[test]
    fn real_imag_reconstruction() {
        let spec = random_spec(33);
        let (real, imag) = to_real_imag(&spec, "t");
        let m = to_magnitude(&spec, "t");
        let pa = to_phase_angle(&spec, "t");
        let scale: f64 = spec.real.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for i in 0..real.data.len() {
            assert!((real.data[i] - spec.real[i]).abs() <= 1e-9 * scale);
            assert!((imag.data[i] - spec.imag[i]).abs() <= 1e-9 * scale);
            // Pythagorean identity
            let lhs = real.data[i].powi(2) + imag.data[i].powi(2);
            let rhs = m.data[i].powi(2);
            assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1e-12));
            assert!((m.data[i] * pa.data[i].cos() - spec.real[i]).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn real_imag_axis_cases() {
        let spec = ComplexSpectrogram {
            real: vec![2.0, 0.0],
            imag: vec![0.0, -1.0],
            freq_bins: 2,
            frames: 1,
            config: short_cfg(),
        };
        let (real, imag) = to_real_imag(&spec, "t");
        assert!((real.data[0] - 2.0).abs() < 1e-15);
        assert!(imag.data[0].abs() < 1e-15);
        assert!(real.data[1].abs() < 1e-15);
        assert!((imag.data[1] + 1.0).abs() < 1e-15);
    }

    fn numbered(rows: usize, cols: usize) -> FeatureMatrix {
        FeatureMatrix {
            data: (0..rows * cols).map(|i| i as f64).collect(),
            rows,
            cols,
            kind: FeatureKind::Lps,
            band: SubbandSpec::full(rows),
            trial_id: "t".into(),
        }
    }

    #[test]
    fn fix_frames_truncates() {
        let m = numbered(3, 700);
        let out = fix_frames(&m, 600).unwrap();
        assert_eq!(out.cols, 600);
        for r in 0..3 {
            for t in 0..600 {
                assert_eq!(out.at(r, t), m.at(r, t));
            }
        }
    }

    #[test]
    fn fix_frames_tiles() {
        let m = numbered(2, 300);
        let out = fix_frames(&m, 600).unwrap();
        assert_eq!(out.cols, 600);
        for r in 0..2 {
            for t in 0..600 {
                assert_eq!(out.at(r, t), m.at(r, t % 300));
            }
        }
    }

    #[test]
    fn fix_frames_identity_and_idempotent() {
        let m = numbered(45, 600);
        let out = fix_frames(&m, 600).unwrap();
        assert_eq!(out, m);
        let twice = fix_frames(&fix_frames(&numbered(4, 250), 600).unwrap(), 600).unwrap();
        assert_eq!(twice.cols, 600);
    }

    #[test]
    fn fix_frames_rejects_zero_target() {
        assert!(fix_frames(&numbered(2, 10), 0).is_err());
    }

    #[test]
    fn subband_shapes_match_layout() {
        let m = numbered(865, 600);
        assert_eq!(slice_subband(&m, SubbandSpec::f0()).unwrap().rows, 45);
        assert_eq!(slice_subband(&m, SubbandSpec::low(865)).unwrap().rows, 433);
        assert_eq!(slice_subband(&m, SubbandSpec::high(865)).unwrap().rows, 432);
        assert_eq!(slice_subband(&m, SubbandSpec::rest(865)).unwrap().rows, 820);
    }

    #[test]
    fn subband_partitions_restore_full() {
        let m = numbered(865, 4);
        for (a, b) in [
            (SubbandSpec::f0(), SubbandSpec::rest(865)),
            (SubbandSpec::low(865), SubbandSpec::high(865)),
        ] {
            let top = slice_subband(&m, a).unwrap();
            let bottom = slice_subband(&m, b).unwrap();
            let mut joined = top.data.clone();
            joined.extend_from_slice(&bottom.data);
            assert_eq!(joined, m.data);
        }
    }

    #[test]
    fn subband_out_of_range_is_error() {
        let m = numbered(100, 4);
        let bad = SubbandSpec {
            name: SubbandName::High,
            start_bin: 50,
            end_bin: 200,
        };
        assert!(slice_subband(&m, bad).is_err());
    }
}
