//! Audio decoding, protocol parsing, and the feature / score file formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::spectral::{FeatureKind, FeatureMatrix, SubbandName, SubbandSpec};

/// Decoded mono audio.
#[derive(Debug, Clone)]
pub struct Waveform {
    /// Amplitudes in [-1, 1].
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub source_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        }
    }
}

/// One line of an ASVspoof-style protocol file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRecord {
    pub speaker_id: String,
    pub trial_id: String,
    /// "-" for bonafide, "A01".."A19" for spoofing attacks.
    pub attack_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreEntry {
    pub score: f64,
    pub label: Option<Label>,
}

/// Per-trial detection scores, insertion-ordered.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    entries: IndexMap<String, ScoreEntry>,
}

impl ScoreSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, trial_id: &str, score: f64, label: Option<Label>) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::Metric(format!("non-finite score for {trial_id}")));
        }
        if self
            .entries
            .insert(trial_id.to_string(), ScoreEntry { score, label })
            .is_some()
        {
            return Err(Error::DuplicateTrial(trial_id.to_string()));
        }
        Ok(())
    }

    pub fn get(&self, trial_id: &str) -> Option<&ScoreEntry> {
        self.entries.get(trial_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ScoreEntry)> {
        self.entries.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Attach labels from protocol records; unknown trial ids are an error.
    pub fn with_labels(&self, records: &[TrialRecord]) -> Result<ScoreSet> {
        let by_id: IndexMap<&str, Label> = records
            .iter()
            .map(|r| (r.trial_id.as_str(), r.label))
            .collect();
        let mut out = ScoreSet::new();
        for (id, e) in self.iter() {
            let label = by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::TrialMismatch(format!("trial {id} not in protocol")))?;
            out.insert(id, e.score, Some(label))?;
        }
        Ok(out)
    }
}

/// Decode a WAV (or, with the `flac` feature, FLAC) file to a mono waveform.
///
/// Multi-channel audio is averaged to mono; integer samples are scaled by the
/// full-scale value of their bit depth.
pub fn decode_audio(path: &Path) -> Result<Waveform> {
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    let (samples, channels, sample_rate_hz) = match ext.as_str() {
        "flac" => decode_flac(path)?,
        _ => decode_wav(path)?,
    };
    if samples.is_empty() {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "zero-length audio".into(),
        });
    }
    let ch = channels as usize;
    let mono: Vec<f64> = if ch == 1 {
        samples
    } else {
        samples
            .chunks_exact(ch)
            .map(|frame| frame.iter().sum::<f64>() / ch as f64)
            .collect()
    };
    Ok(Waveform {
        samples: mono,
        sample_rate_hz,
        source_id,
    })
}

fn decode_wav(path: &Path) -> Result<(Vec<f64>, u16, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let spec = reader.spec();
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Int, bits) if bits <= 32 => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
        (fmt, bits) => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!("unsupported encoding {fmt:?}/{bits}-bit"),
            })
        }
    }
    .map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok((samples, spec.channels, spec.sample_rate))
}

#[cfg(feature = "flac")]
fn decode_flac(path: &Path) -> Result<(Vec<f64>, u16, u32)> {
    let mut reader = claxon::FlacReader::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let info = reader.streaminfo();
    let scale = (1i64 << (info.bits_per_sample - 1)) as f64;
    let mut samples = Vec::new();
    for s in reader.samples() {
        let v = s.map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        samples.push(v as f64 / scale);
    }
    Ok((samples, info.channels as u16, info.sample_rate))
}

#[cfg(not(feature = "flac"))]
fn decode_flac(path: &Path) -> Result<(Vec<f64>, u16, u32)> {
    Err(Error::Decode {
        path: path.to_path_buf(),
        reason: "FLAC support not compiled in (enable the `flac` feature)".into(),
    })
}

/// Write a mono waveform as 16-bit PCM WAV.
pub fn write_wav_i16(path: &Path, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| Error::format(path, e.to_string()))?;
    for &s in samples {
        // Same full-scale divisor as the reader (2^15) so round trips stay
        // within half an LSB; +1.0 saturates at i16::MAX.
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(())
}

/// Parse a 5-column protocol file: speaker, trial, ignored, attack, key.
pub fn parse_protocol(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let err = |reason: String| Error::Protocol {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        };
        if cols.len() != 5 {
            return Err(err(format!("expected 5 columns, found {}", cols.len())));
        }
        let label = match cols[4] {
            "bonafide" => Label::Bonafide,
            "spoof" => Label::Spoof,
            other => return Err(err(format!("unknown key `{other}` at line {lineno}"))),
        };
        let attack_id = cols[3].to_string();
        match label {
            Label::Bonafide if attack_id != "-" => {
                return Err(err(format!("bonafide trial with attack id `{attack_id}`")))
            }
            Label::Spoof if attack_id == "-" => {
                return Err(err("spoof trial without attack id".into()))
            }
            _ => {}
        }
        let trial_id = cols[1].to_string();
        if !seen.insert(trial_id.clone()) {
            return Err(err(format!("duplicate trial id {trial_id}")));
        }
        records.push(TrialRecord {
            speaker_id: cols[0].to_string(),
            trial_id,
            attack_id,
            label,
        });
    }
    Ok(records)
}

const FEATURE_MAGIC: &[u8; 4] = b"SBSF";
const FEATURE_VERSION: u16 = 1;
const DTYPE_F32: u8 = 1;

fn kind_code(kind: FeatureKind) -> u8 {
    match kind {
        FeatureKind::Lps => 0,
        FeatureKind::PhaseAngle => 1,
        FeatureKind::Real => 2,
        FeatureKind::Imag => 3,
        FeatureKind::Magnitude => 4,
    }
}

fn kind_from_code(code: u8) -> Option<FeatureKind> {
    Some(match code {
        0 => FeatureKind::Lps,
        1 => FeatureKind::PhaseAngle,
        2 => FeatureKind::Real,
        3 => FeatureKind::Imag,
        4 => FeatureKind::Magnitude,
        _ => return None,
    })
}

fn band_code(name: SubbandName) -> u8 {
    match name {
        SubbandName::F0 => 0,
        SubbandName::Rest => 1,
        SubbandName::Low => 2,
        SubbandName::High => 3,
        SubbandName::Full => 4,
    }
}

fn band_from_code(code: u8) -> Option<SubbandName> {
    Some(match code {
        0 => SubbandName::F0,
        1 => SubbandName::Rest,
        2 => SubbandName::Low,
        3 => SubbandName::High,
        4 => SubbandName::Full,
        _ => return None,
    })
}

/// Write a feature matrix: little-endian, magic "SBSF", f32 row-major payload.
pub fn write_feature_file(matrix: &FeatureMatrix, path: &Path) -> Result<()> {
    if !matrix.data.iter().all(|v| v.is_finite()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "non-finite feature value".into(),
        });
    }
    let rows = u32::try_from(matrix.rows)
        .map_err(|_| Error::format(path, "row count overflows u32"))?;
    let cols = u32::try_from(matrix.cols)
        .map_err(|_| Error::format(path, "column count overflows u32"))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(FEATURE_MAGIC).map_err(io)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&[DTYPE_F32, kind_code(matrix.kind), band_code(matrix.band.name)])
        .map_err(io)?;
    w.write_all(&(matrix.band.start_bin as u32).to_le_bytes())
        .map_err(io)?;
    w.write_all(&(matrix.band.end_bin as u32).to_le_bytes())
        .map_err(io)?;
    let id = matrix.trial_id.as_bytes();
    let id_len = u16::try_from(id.len()).map_err(|_| Error::format(path, "trial id too long"))?;
    w.write_all(&id_len.to_le_bytes()).map_err(io)?;
    w.write_all(id).map_err(io)?;
    w.write_all(&rows.to_le_bytes()).map_err(io)?;
    w.write_all(&cols.to_le_bytes()).map_err(io)?;
    for &v in &matrix.data {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |reason: &str| Error::format(path, reason);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != FEATURE_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes(read_array(&mut r, path)?);
    if version != FEATURE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut tags = [0u8; 3];
    read_exact(&mut r, &mut tags, path)?;
    if tags[0] != DTYPE_F32 {
        return Err(bad("unsupported dtype"));
    }
    let kind = kind_from_code(tags[1]).ok_or_else(|| bad("unknown feature kind"))?;
    let band_name = band_from_code(tags[2]).ok_or_else(|| bad("unknown band name"))?;
    let start_bin = u32::from_le_bytes(read_array(&mut r, path)?) as usize;
    let end_bin = u32::from_le_bytes(read_array(&mut r, path)?) as usize;
    let id_len = u16::from_le_bytes(read_array(&mut r, path)?) as usize;
    let mut id = vec![0u8; id_len];
    read_exact(&mut r, &mut id, path)?;
    let trial_id = String::from_utf8(id).map_err(|_| bad("trial id not UTF-8"))?;
    let rows = u32::from_le_bytes(read_array(&mut r, path)?) as usize;
    let cols = u32::from_le_bytes(read_array(&mut r, path)?) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| bad("dimension overflow"))?;
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut buf)
            .map_err(|_| bad("unexpected end of payload"))?;
        data.push(f32::from_le_bytes(buf) as f64);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes after payload"));
    }
    Ok(FeatureMatrix {
        data,
        rows,
        cols,
        kind,
        band: SubbandSpec {
            name: band_name,
            start_bin,
            end_bin,
        },
        trial_id,
    })
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(path, "unexpected end of payload"))
}

fn read_array<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf, path)?;
    Ok(buf)
}

/// Read `trial_id<TAB>score` lines.
pub fn read_scores(path: &Path) -> Result<ScoreSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut set = ScoreSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Protocol {
            path: path.to_path_buf(),
            line: idx + 1,
            reason,
        };
        let (id, score_str) = line
            .split_once('\t')
            .ok_or_else(|| err("expected trial_id<TAB>score".into()))?;
        let score: f64 = score_str
            .trim()
            .parse()
            .map_err(|_| err(format!("non-numeric score `{score_str}`")))?;
        set.insert(id, score, None)?;
    }
    Ok(set)
}

/// Write scores with 17 significant digits (lossless f64 round trip).
pub fn write_scores(set: &ScoreSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, e) in set.iter() {
        writeln!(w, "{id}\t{:.16e}", e.score).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
