//! Two-stage score fusion and evaluation metrics (EER, min t-DCF, DET points).
//!
//! Threshold convention throughout: a trial is accepted as bonafide when its
//! score is >= the threshold.

use std::path::Path;

use crate::dataset::{Label, ScoreSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights {
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

/// Cost model for the tandem detection cost function. The ASV error terms
/// describe a fixed ASV operating point and are configuration, not computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdcfCostModel {
    pub p_target: f64,
    pub p_nontarget: f64,
    pub p_spoof: f64,
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub c_miss_cm: f64,
    pub c_fa_cm: f64,
    pub p_miss_asv: f64,
    pub p_fa_asv: f64,
    pub p_miss_spoof_asv: f64,
}

impl Default for TdcfCostModel {
    fn default() -> Self {
        // Priors and costs from the ASVspoof 2019 evaluation plan; the ASV
        // error rates are placeholders for an operating point the user must
        // supply for their own ASV system.
        TdcfCostModel {
            p_target: 0.9405,
            p_nontarget: 0.0095,
            p_spoof: 0.05,
            c_miss_asv: 1.0,
            c_fa_asv: 10.0,
            c_miss_cm: 1.0,
            c_fa_cm: 10.0,
            p_miss_asv: 0.01,
            p_fa_asv: 0.01,
            p_miss_spoof_asv: 0.05,
        }
    }
}

impl TdcfCostModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p_target", self.p_target),
            ("p_nontarget", self.p_nontarget),
            ("p_spoof", self.p_spoof),
        ] {
            if !(0.0..1.0).contains(&v) || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        for (name, v) in [
            ("c_miss_asv", self.c_miss_asv),
            ("c_fa_asv", self.c_fa_asv),
            ("c_miss_cm", self.c_miss_cm),
            ("c_fa_cm", self.c_fa_cm),
        ] {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("p_miss_asv", self.p_miss_asv),
            ("p_fa_asv", self.p_fa_asv),
            ("p_miss_spoof_asv", self.p_miss_spoof_asv),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Constrained t-DCF coefficients: t-DCF(t) = c_miss * P_miss_cm(t) + c_fa * P_fa_cm(t).
    pub fn coefficients(&self) -> Result<(f64, f64)> {
        self.validate()?;
        let c1 = self.p_target * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv)
            - self.p_nontarget * self.c_fa_asv * self.p_fa_asv;
        let c2 = self.c_fa_cm * self.p_spoof * (1.0 - self.p_miss_spoof_asv);
        if c1 <= 0.0 || c2 <= 0.0 {
            return Err(Error::Config(format!(
                "degenerate cost model: C1={c1}, C2={c2}"
            )));
        }
        Ok((c1, c2))
    }

    /// Parse a key=value cost-model file; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut model = TdcfCostModel::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Protocol {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: "expected key=value".into(),
            })?;
            let v: f64 = value.trim().parse().map_err(|_| Error::Protocol {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: format!("non-numeric value `{}`", value.trim()),
            })?;
            match key.trim() {
                "p_target" => model.p_target = v,
                "p_nontarget" => model.p_nontarget = v,
                "p_spoof" => model.p_spoof = v,
                "c_miss_asv" => model.c_miss_asv = v,
                "c_fa_asv" => model.c_fa_asv = v,
                "c_miss_cm" => model.c_miss_cm = v,
                "c_fa_cm" => model.c_fa_cm = v,
                "p_miss_asv" => model.p_miss_asv = v,
                "p_fa_asv" => model.p_fa_asv = v,
                "p_miss_spoof_asv" => model.p_miss_spoof_asv = v,
                other => {
                    return Err(Error::Protocol {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        reason: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        model.validate()?;
        Ok(model)
    }
}

/// DET operating points over the sorted threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub thresholds: Vec<f64>,
    pub far: Vec<f64>,
    pub frr: Vec<f64>,
}

/// Weighted combination of two score sets over the same trials.
pub fn fuse(a: &ScoreSet, b: &ScoreSet, weight_a: f64) -> Result<ScoreSet> {
    if !(0.0..=1.0).contains(&weight_a) {
        return Err(Error::Config(format!(
            "fusion weight must be in [0, 1], got {weight_a}"
        )));
    }
    for id in a.ids() {
        if b.get(id).is_none() {
            return Err(Error::TrialMismatch(format!(
                "trial {id} missing from second score set"
            )));
        }
    }
    for id in b.ids() {
        if a.get(id).is_none() {
            return Err(Error::TrialMismatch(format!(
                "trial {id} missing from first score set"
            )));
        }
    }
    let mut out = ScoreSet::new();
    for (id, ea) in a.iter() {
        let eb = b.get(id).unwrap();
        out.insert(
            id,
            weight_a * ea.score + (1.0 - weight_a) * eb.score,
            ea.label.or(eb.label),
        )?;
    }
    Ok(out)
}

/// First fusion stage: imaginary-low with real-high.
pub fn fuse_stage1(q_imag_low: &ScoreSet, q_real_high: &ScoreSet, alpha: f64) -> Result<ScoreSet> {
    fuse(q_imag_low, q_real_high, alpha)
}

/// Second fusion stage: stage-1 result with the LPS F0-subband score.
pub fn fuse_stage2(q1: &ScoreSet, q_f0: &ScoreSet, beta: f64) -> Result<ScoreSet> {
    fuse(q1, q_f0, beta)
}

struct Sweep {
    thresholds: Vec<f64>,
    far: Vec<f64>,
    frr: Vec<f64>,
}

fn sweep(scores: &ScoreSet) -> Result<Sweep> {
    let mut bonafide = Vec::new();
    let mut spoof = Vec::new();
    for (id, e) in scores.iter() {
        match e.label {
            Some(Label::Bonafide) => bonafide.push(e.score),
            Some(Label::Spoof) => spoof.push(e.score),
            None => return Err(Error::Metric(format!("trial {id} has no label"))),
        }
    }
    if bonafide.is_empty() || spoof.is_empty() {
        return Err(Error::Metric(
            "need at least one bonafide and one spoof trial".into(),
        ));
    }
    bonafide.sort_by(|a, b| a.partial_cmp(b).unwrap());
    spoof.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut all: Vec<f64> = bonafide.iter().chain(spoof.iter()).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();

    let mut thresholds = Vec::with_capacity(all.len() + 1);
    thresholds.push(f64::NEG_INFINITY);
    for pair in all.windows(2) {
        thresholds.push(0.5 * (pair[0] + pair[1]));
    }
    thresholds.push(f64::INFINITY);

    let n_b = bonafide.len() as f64;
    let n_s = spoof.len() as f64;
    let mut far = Vec::with_capacity(thresholds.len());
    let mut frr = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let spoof_ge = spoof.len() - spoof.partition_point(|&s| s < t);
        let bona_lt = bonafide.partition_point(|&s| s < t);
        far.push(spoof_ge as f64 / n_s);
        frr.push(bona_lt as f64 / n_b);
    }
    Ok(Sweep {
        thresholds,
        far,
        frr,
    })
}

/// Equal error rate and the threshold where FAR and FRR cross, with linear
/// interpolation between straddling operating points.
pub fn compute_eer(scores: &ScoreSet) -> Result<(f64, f64)> {
    let sw = sweep(scores)?;
    // far - frr is non-increasing in the threshold; find the sign change.
    for i in 0..sw.thresholds.len() {
        let d = sw.far[i] - sw.frr[i];
        if d == 0.0 {
            return Ok((sw.far[i], sw.thresholds[i]));
        }
        if d < 0.0 {
            if i == 0 {
                return Ok((sw.far[0], sw.thresholds[0]));
            }
            let d1 = sw.far[i - 1] - sw.frr[i - 1];
            let d2 = d;
            let s = d1 / (d1 - d2);
            let eer = sw.far[i - 1] + s * (sw.far[i] - sw.far[i - 1]);
            let t = if sw.thresholds[i - 1].is_finite() && sw.thresholds[i].is_finite() {
                sw.thresholds[i - 1] + s * (sw.thresholds[i] - sw.thresholds[i - 1])
            } else if sw.thresholds[i - 1].is_finite() {
                sw.thresholds[i - 1]
            } else {
                sw.thresholds[i]
            };
            return Ok((eer, t));
        }
    }
    // far stayed above frr through the whole sweep; the final point is (0, 1).
    let last = sw.thresholds.len() - 1;
    Ok((sw.far[last].max(sw.frr[last]), sw.thresholds[last]))
}

/// Minimum normalized tandem detection cost and its threshold.
pub fn compute_min_tdcf(scores: &ScoreSet, cost: &TdcfCostModel) -> Result<(f64, f64)> {
    let (c1, c2) = cost.coefficients()?;
    let sw = sweep(scores)?;
    let norm = c1.min(c2);
    let mut best = f64::INFINITY;
    let mut best_t = f64::NEG_INFINITY;
    for i in 0..sw.thresholds.len() {
        // P_miss_cm = FRR on bonafide, P_fa_cm = FAR on spoof.
        let v = (c1 * sw.frr[i] + c2 * sw.far[i]) / norm;
        if v < best {
            best = v;
            best_t = sw.thresholds[i];
        }
    }
    Ok((best, best_t))
}

/// One operating point per distinct score midpoint plus the +/- infinity endpoints.
pub fn det_points(scores: &ScoreSet) -> Result<DetCurve> {
    let sw = sweep(scores)?;
    Ok(DetCurve {
        thresholds: sw.thresholds,
        far: sw.far,
        frr: sw.frr,
    })
}
