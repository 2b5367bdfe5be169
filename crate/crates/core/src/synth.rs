//! Synthetic desk-scale corpus: "bonafide" utterances are harmonic tones with
//! a drifting fundamental, "spoof" utterances hold a constant fundamental with
//! mild additive noise.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{write_wav_i16, Label, TrialRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    pub harmonics: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate_hz: 16000,
            duration_s: 2.0,
            harmonics: 4,
        }
    }
}

/// Synthesize one utterance. Bonafide pitch follows a sinusoidal drift plus a
/// random walk (range well above 5 Hz); spoof pitch is constant with noise.
pub fn synth_utterance(label: Label, rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<f64> {
    let fs = cfg.sample_rate_hz as f64;
    let n = (cfg.duration_s * fs) as usize;
    let hop = (0.010 * fs) as usize;

    let f0_track: Vec<f64> = match label {
        Label::Bonafide => {
            let base = rng.gen_range(140.0..260.0);
            let depth = rng.gen_range(15.0..30.0);
            let rate = rng.gen_range(0.5..1.5);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let mut walk = 0.0f64;
            (0..n.div_ceil(hop))
                .map(|i| {
                    walk = (walk + rng.gen_range(-1.5..1.5)).clamp(-8.0, 8.0);
                    let t = i as f64 * hop as f64 / fs;
                    (base + depth * (2.0 * PI * rate * t + phase).sin() + walk)
                        .clamp(100.0, 300.0)
                })
                .collect()
        }
        Label::Spoof => {
            let f = rng.gen_range(110.0..290.0);
            vec![f; n.div_ceil(hop)]
        }
    };

    let amp_norm: f64 = (1..=cfg.harmonics).map(|h| 1.0 / h as f64).sum();
    let noise_amp = match label {
        Label::Bonafide => 0.0,
        Label::Spoof => 0.003,
    };
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let f0 = f0_track[k / hop];
        phase += 2.0 * PI * f0 / fs;
        let mut s = 0.0;
        for h in 1..=cfg.harmonics {
            s += (h as f64 * phase).sin() / h as f64;
        }
        s = 0.5 * s / amp_norm;
        if noise_amp > 0.0 {
            s += rng.gen_range(-noise_amp..noise_amp);
        }
        out.push(s);
    }
    out
}

/// Generate `n_per_class` WAV files per class plus a protocol file
/// (`protocol.txt`) in `out_dir`. Deterministic for a given seed.
pub fn synth_corpus(out_dir: &Path, n_per_class: usize, seed: u64) -> Result<Vec<TrialRecord>> {
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cfg = SynthConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(2 * n_per_class);
    let mut protocol = String::new();
    for i in 0..n_per_class {
        for label in [Label::Bonafide, Label::Spoof] {
            let tag = match label {
                Label::Bonafide => 'B',
                Label::Spoof => 'S',
            };
            let trial_id = format!("SY_{tag}_{i:05}");
            let speaker_id = format!("SYNTH_{:04}", i % 20);
            let attack_id = match label {
                Label::Bonafide => "-".to_string(),
                Label::Spoof => "A01".to_string(),
            };
            let samples = synth_utterance(label, &mut rng, &cfg);
            write_wav_i16(
                &out_dir.join(format!("{trial_id}.wav")),
                &samples,
                cfg.sample_rate_hz,
            )?;
            protocol.push_str(&format!(
                "{speaker_id} {trial_id} - {attack_id} {}\n",
                label.as_str()
            ));
            records.push(TrialRecord {
                speaker_id,
                trial_id,
                attack_id,
                label,
            });
        }
    }
    std::fs::write(out_dir.join("protocol.txt"), protocol)
        .map_err(|e| Error::io(out_dir.join("protocol.txt"), e))?;
    Ok(records)
}
