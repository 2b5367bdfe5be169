//! `spoofband`: batch front end for the subband anti-spoofing pipeline.
//!
//! Subcommands cover the full flow: synth-corpus -> extract -> train ->
//! score -> fuse -> evaluate, plus f0-hist for pitch-distribution analysis.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use spoofband_core::dataset::{
    decode_audio, parse_protocol, read_feature_file, read_scores, write_feature_file,
    write_scores, Label, TrialRecord,
};
use spoofband_core::f0::{
    accumulate_histogram, default_edges, estimate_f0, histogram_summary, F0Config, F0Contour,
};
use spoofband_core::net::{
    load_checkpoint, save_checkpoint, score_trials, train as train_net, Senet, SenetConfig,
    TrainConfig,
};
use spoofband_core::scoring::{
    compute_eer, compute_min_tdcf, det_points, fuse, FusionWeights, TdcfCostModel,
};
use spoofband_core::spectral::{
    fix_frames, slice_subband, stft, to_lps, to_magnitude, to_phase_angle, to_real_imag,
    FeatureKind, FeatureMatrix, StftConfig, SubbandName, SubbandSpec, TARGET_FRAMES,
};
use spoofband_core::synth::synth_corpus;

#[derive(Parser)]
#[command(name = "spoofband", version, about = "Subband anti-spoofing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract one feature file per protocol trial.
    Extract(ExtractArgs),
    /// Train a classifier on extracted features with dev-set model selection.
    Train(TrainArgs),
    /// Score trials with a trained checkpoint.
    Score(ScoreArgs),
    /// Weighted fusion of two score files: w*a + (1-w)*b.
    Fuse(FuseArgs),
    /// Report EER and min t-DCF for a labeled score file.
    Evaluate(EvaluateArgs),
    /// Pitch histograms over a corpus.
    F0Hist(F0HistArgs),
    /// Generate the deterministic synthetic corpus.
    SynthCorpus(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Text,
    Csv,
    Json,
}

#[derive(Args)]
struct StftArgs {
    #[arg(long, default_value_t = 1728)]
    window_len: usize,
    #[arg(long, default_value_t = 130)]
    hop: usize,
    #[arg(long, default_value_t = 1728)]
    fft_len: usize,
}

impl StftArgs {
    fn to_config(&self) -> StftConfig {
        StftConfig {
            window_len: self.window_len,
            hop: self.hop,
            fft_len: self.fft_len,
            ..StftConfig::default()
        }
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    protocol: PathBuf,
    #[arg(long)]
    audio_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Feature view: lps, pa, real, imag, mag.
    #[arg(long, default_value = "lps")]
    kind: String,
    /// Subband: f0, rest, low, high, full.
    #[arg(long, default_value = "f0")]
    band: String,
    /// Frame count every matrix is normalized to.
    #[arg(long, default_value_t = TARGET_FRAMES)]
    frames: usize,
    /// Worker threads; 0 = one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Audio file extension to look for.
    #[arg(long, default_value = "wav")]
    audio_ext: String,
    #[command(flatten)]
    stft: StftArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features_dir: PathBuf,
    #[arg(long)]
    protocol_train: PathBuf,
    #[arg(long)]
    protocol_dev: PathBuf,
    #[arg(long)]
    checkpoint_out: PathBuf,
    /// CSV epoch log destination.
    #[arg(long)]
    log_out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    /// Angular margin multiplier; 1 disables the margin.
    #[arg(long, default_value_t = 4)]
    margin: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    width_multiplier: f64,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features_dir: PathBuf,
    #[arg(long)]
    protocol: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Weight on `a`; `b` gets 1-weight.
    #[arg(long, default_value_t = FusionWeights::default().alpha)]
    weight: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    protocol: PathBuf,
    /// key=value cost model file; defaults baked in otherwise.
    #[arg(long)]
    cost_config: Option<PathBuf>,
    /// Write the DET curve as CSV (threshold,far,frr).
    #[arg(long)]
    det_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Args)]
struct F0HistArgs {
    #[arg(long)]
    protocol: PathBuf,
    #[arg(long)]
    audio_dir: PathBuf,
    /// Output CSV; with --split-by-label, `.bonafide.csv` / `.spoof.csv`
    /// suffixes are appended to the stem.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    split_by_label: bool,
    #[arg(long, default_value = "wav")]
    audio_ext: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    let cli = Cli::parse_from(args);
    let result = match cli.command {
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::F0Hist(a) => cmd_f0_hist(a),
        Command::SynthCorpus(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Replace `--config FILE` with the file's `key=value` pairs. Pairs whose key
/// also appears as an explicit flag are dropped, so explicit flags win.
fn expand_config(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = argv.iter().position(|a| a == "--config") else {
        return Ok(argv);
    };
    let file = argv
        .get(pos + 1)
        .context("--config requires a file argument")?
        .clone();
    let mut out: Vec<String> = argv[..pos].to_vec();
    let rest: Vec<String> = argv[pos + 2..].to_vec();
    if out.len() < 2 {
        bail!("--config must follow a subcommand");
    }
    let text = std::fs::read_to_string(&file).with_context(|| format!("reading {file}"))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("{file}:{}: expected key=value", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        let flag = format!("--{key}");
        if out.contains(&flag) || rest.contains(&flag) {
            continue;
        }
        out.push(flag);
        if value != "true" {
            out.push(value.to_string());
        }
    }
    out.extend(rest);
    Ok(out)
}

fn audio_path(dir: &Path, trial_id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{trial_id}.{ext}"))
}

fn extract_one(
    rec: &TrialRecord,
    args: &ExtractArgs,
    cfg: &StftConfig,
    band: SubbandSpec,
    kind: FeatureKind,
) -> Result<(usize, usize)> {
    let wav = decode_audio(&audio_path(&args.audio_dir, &rec.trial_id, &args.audio_ext))?;
    let spec = stft(&wav, cfg)?;
    let full = match kind {
        FeatureKind::Lps => to_lps(&spec, &rec.trial_id),
        FeatureKind::PhaseAngle => to_phase_angle(&spec, &rec.trial_id),
        FeatureKind::Magnitude => to_magnitude(&spec, &rec.trial_id),
        FeatureKind::Real => to_real_imag(&spec, &rec.trial_id).0,
        FeatureKind::Imag => to_real_imag(&spec, &rec.trial_id).1,
    };
    let sliced = slice_subband(&full, band)?;
    let fixed = fix_frames(&sliced, args.frames)?;
    write_feature_file(&fixed, &args.out_dir.join(format!("{}.sbsf", rec.trial_id)))?;
    Ok((fixed.rows, fixed.cols))
}

fn cmd_extract(args: ExtractArgs) -> Result<()> {
    let records = parse_protocol(&args.protocol)?;
    let cfg = args.stft.to_config();
    cfg.validate()?;
    let kind = FeatureKind::parse(&args.kind)?;
    let band = SubbandSpec::named(SubbandName::parse(&args.band)?, cfg.freq_bins());
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .context("building thread pool")?;
    let results: Vec<(String, Result<(usize, usize)>)> = pool.install(|| {
        records
            .par_iter()
            .map(|rec| {
                let r = extract_one(rec, &args, &cfg, band, kind);
                (rec.trial_id.clone(), r)
            })
            .collect()
    });

    let mut shape = None;
    let mut failures = Vec::new();
    for (id, r) in &results {
        match r {
            Ok(s) => shape = Some(*s),
            Err(e) => failures.push(format!("{id}: {e:#}")),
        }
    }
    let ok = results.len() - failures.len();
    if let Some((rows, cols)) = shape {
        println!(
            "extracted {ok}/{} trials as {} {} features of {rows}x{cols}",
            results.len(),
            args.kind,
            args.band
        );
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("failed {f}");
        }
        bail!("{} of {} trials failed", failures.len(), results.len());
    }
    Ok(())
}

fn load_features(
    dir: &Path,
    records: &[TrialRecord],
) -> Result<Vec<(FeatureMatrix, Label)>> {
    records
        .iter()
        .map(|rec| {
            let path = dir.join(format!("{}.sbsf", rec.trial_id));
            let m = read_feature_file(&path)
                .with_context(|| format!("loading features for {}", rec.trial_id))?;
            Ok((m, rec.label))
        })
        .collect()
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let train_recs = parse_protocol(&args.protocol_train)?;
    let dev_recs = parse_protocol(&args.protocol_dev)?;
    let train_set = load_features(&args.features_dir, &train_recs)?;
    let dev_set = load_features(&args.features_dir, &dev_recs)?;

    let net_config = SenetConfig {
        width_multiplier: args.width_multiplier,
        ..SenetConfig::default()
    };
    let train_config = TrainConfig {
        lr: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        weight_decay: args.weight_decay,
        margin: args.margin,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let outcome = train_net::<f32>(&net_config, &train_set, &dev_set, &train_config)?;

    save_checkpoint(&args.checkpoint_out, &outcome.best)?;
    if let Some(log_path) = &args.log_out {
        let mut w = std::fs::File::create(log_path)
            .with_context(|| format!("creating {}", log_path.display()))?;
        writeln!(w, "epoch,train_loss,dev_eer,lambda")?;
        for l in &outcome.logs {
            writeln!(w, "{},{:.6},{:.6},{:.3}", l.epoch, l.train_loss, l.dev_eer, l.lambda)?;
        }
    }
    println!(
        "trained {} epochs; best dev EER {:.2}% at epoch {}; checkpoint {}",
        outcome.logs.len(),
        100.0 * outcome.best_dev_eer,
        outcome.best_epoch,
        args.checkpoint_out.display()
    );
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let records = parse_protocol(&args.protocol)?;
    let set = load_features(&args.features_dir, &records)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let mut net: Senet<f32> = ckpt.build_net()?;
    let feats: Vec<&FeatureMatrix> = set.iter().map(|(m, _)| m).collect();
    let scores = score_trials(&mut net, &feats, args.batch_size)?;
    write_scores(&scores, &args.out)?;
    println!("scored {} trials -> {}", scores.len(), args.out.display());
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<()> {
    let a = read_scores(&args.a)?;
    let b = read_scores(&args.b)?;
    let fused = fuse(&a, &b, args.weight)?;
    write_scores(&fused, &args.out)?;
    println!(
        "fused {} trials with weight {} -> {}",
        fused.len(),
        args.weight,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let records = parse_protocol(&args.protocol)?;
    let scores = read_scores(&args.scores)?.with_labels(&records)?;
    let cost = match &args.cost_config {
        Some(path) => TdcfCostModel::from_file(path)?,
        None => TdcfCostModel::default(),
    };
    let (eer, eer_t) = compute_eer(&scores)?;
    let (tdcf, tdcf_t) = compute_min_tdcf(&scores, &cost)?;

    match args.format {
        OutputFormat::Text => {
            println!("EER {:.2}% (threshold {:.6})", 100.0 * eer, eer_t);
            println!("min t-DCF {:.4} (threshold {:.6})", tdcf, tdcf_t);
        }
        OutputFormat::Csv => {
            println!("metric,value,threshold");
            println!("eer,{eer:.10},{eer_t:.10}");
            println!("min_tdcf,{tdcf:.10},{tdcf_t:.10}");
        }
        OutputFormat::Json => {
            println!(
                "{}",
                serde_json::json!({
                    "eer": eer,
                    "eer_threshold": eer_t,
                    "min_tdcf": tdcf,
                    "min_tdcf_threshold": tdcf_t,
                    "n_trials": scores.len(),
                })
            );
        }
    }

    if let Some(det_path) = &args.det_out {
        let det = det_points(&scores)?;
        let mut w = std::fs::File::create(det_path)
            .with_context(|| format!("creating {}", det_path.display()))?;
        writeln!(w, "threshold,far,frr")?;
        for i in 0..det.thresholds.len() {
            writeln!(w, "{},{},{}", det.thresholds[i], det.far[i], det.frr[i])?;
        }
    }
    Ok(())
}

fn write_histogram_csv(path: &Path, contours: &[F0Contour]) -> Result<()> {
    let edges = default_edges();
    let hist = accumulate_histogram(contours, &edges)?;
    let mut w =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(w, "bin_start_hz,bin_end_hz,count")?;
    for (i, &count) in hist.counts.iter().enumerate() {
        writeln!(w, "{},{},{count}", hist.bin_edges_hz[i], hist.bin_edges_hz[i + 1])?;
    }
    let summary = histogram_summary(&hist)?;
    println!(
        "{}: {} utterances, modal bin {}-{} Hz, {:.1}% below 400 Hz, roughness {:.4}",
        path.display(),
        hist.n_utterances,
        summary.modal_bin_range_hz.0,
        summary.modal_bin_range_hz.1,
        100.0 * summary.fraction_below_400hz,
        summary.roughness
    );
    Ok(())
}

fn cmd_f0_hist(args: F0HistArgs) -> Result<()> {
    let records = parse_protocol(&args.protocol)?;
    let cfg = F0Config::default();
    let mut by_label: BTreeMap<&'static str, Vec<F0Contour>> = BTreeMap::new();
    for rec in &records {
        let wav = decode_audio(&audio_path(&args.audio_dir, &rec.trial_id, &args.audio_ext))?;
        let contour = estimate_f0(&wav, &cfg)
            .with_context(|| format!("estimating F0 for {}", rec.trial_id))?;
        by_label.entry(rec.label.as_str()).or_default().push(contour);
    }
    if args.split_by_label {
        for (label, contours) in &by_label {
            let stem = args.out.with_extension("");
            let path = PathBuf::from(format!("{}.{label}.csv", stem.display()));
            write_histogram_csv(&path, contours)?;
        }
    } else {
        let all: Vec<F0Contour> = by_label.into_values().flatten().collect();
        write_histogram_csv(&args.out, &all)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let records = synth_corpus(&args.out_dir, args.n_per_class, args.seed)?;
    println!(
        "wrote {} utterances + protocol.txt to {}",
        records.len(),
        args.out_dir.display()
    );
    Ok(())
}
