//! Objective evaluation: scale-invariant SDR, segmental SNR and the
//! permutation-corrected accuracy of the recovered switch sequence.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::SwitchPosterior;
use crate::numerics::dot;
use crate::signal::Waveform;

pub const SDR_CAP_DB: f64 = 100.0;

fn check_pair(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::shape("metric signal lengths", reference.len(), estimate.len()));
    }
    if reference.sample_rate != estimate.sample_rate {
        return Err(Error::InvalidInput(format!(
            "sample rates differ: {} vs {}",
            reference.sample_rate, estimate.sample_rate
        )));
    }
    Ok(())
}

/// SDR of `estimate` after projecting it onto `reference`, clamped to
/// `[-SDR_CAP_DB, SDR_CAP_DB]`.
pub fn sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate)?;
    let s = &reference.samples;
    let e = &estimate.samples;
    let ss = dot(s, s);
    if ss == 0.0 {
        return Err(Error::InvalidInput("SDR reference is silent".into()));
    }
    let alpha = dot(e, s) / ss;
    let target = alpha * alpha * ss;
    let dist: f64 = s.iter().zip(e).map(|(a, b)| (alpha * a - b).powi(2)).sum();
    let db = if target == 0.0 {
        -SDR_CAP_DB
    } else if dist == 0.0 {
        SDR_CAP_DB
    } else {
        10.0 * (target / dist).log10()
    };
    Ok(db.clamp(-SDR_CAP_DB, SDR_CAP_DB))
}

/// Mean per-segment SNR over segments of `segment` samples whose reference
/// is not silent, each clamped to `[-10, 35]` dB.
pub fn segmental_snr(reference: &Waveform, estimate: &Waveform, segment: usize) -> Result<f64> {
    check_pair(reference, estimate)?;
    if segment == 0 {
        return Err(Error::InvalidInput("segment length must be positive".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (s, e) in reference.samples.chunks(segment).zip(estimate.samples.chunks(segment)) {
        let sig = dot(s, s);
        if sig <= 1e-12 * s.len() as f64 {
            continue;
        }
        let err: f64 = s.iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum();
        let db = if err == 0.0 { 35.0 } else { 10.0 * (sig / err).log10() };
        total += db.clamp(-10.0, 35.0);
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput("reference is silent in every segment".into()));
    }
    Ok(total / count as f64)
}

fn for_each_permutation(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        for_each_permutation(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Fraction of frames whose most probable switch state equals the true
/// regime, maximized over relabelings of the states.
pub fn switch_accuracy(labels: &[usize], posterior: &SwitchPosterior) -> Result<f64> {
    let decoded = posterior.argmax();
    if decoded.len() != labels.len() {
        return Err(Error::shape("switch_accuracy frames", labels.len(), decoded.len()));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no frames to score".into()));
    }
    let n = posterior.states().max(labels.iter().max().map_or(0, |m| m + 1));
    if n > 8 {
        return Err(Error::InvalidInput(format!("{n} labels is too many to permute")));
    }
    let mut confusion = vec![vec![0usize; n]; n];
    for (&d, &l) in decoded.iter().zip(labels) {
        confusion[d][l] += 1;
    }
    let mut best = 0;
    let mut perm: Vec<usize> = (0..n).collect();
    for_each_permutation(&mut perm, 0, &mut |p| {
        let hits: usize = p.iter().enumerate().map(|(state, &label)| confusion[state][label]).sum();
        best = best.max(hits);
    });
    Ok(best as f64 / labels.len() as f64)
}

/// Identifies the test condition of one enhancement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub noise: String,
    pub snr_db: f64,
    /// `"clean"` or `"occluded"`.
    pub visual: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub id: String,
    pub condition: Condition,
    pub input_sdr_db: f64,
    pub sdr_db: f64,
    pub input_seg_snr_db: f64,
    pub seg_snr_db: f64,
    pub switch_accuracy: Option<f64>,
}

/// Segment length used by [`evaluate_run`] for segmental SNR.
pub const SEGMENT_LEN: usize = 256;

pub fn evaluate_run(
    id: &str,
    condition: Condition,
    clean: &Waveform,
    mixture: &Waveform,
    enhanced: &Waveform,
    switching: Option<(&[usize], &SwitchPosterior)>,
) -> Result<RunMetrics> {
    Ok(RunMetrics {
        id: id.to_string(),
        condition,
        input_sdr_db: sdr(clean, mixture)?,
        sdr_db: sdr(clean, enhanced)?,
        input_seg_snr_db: segmental_snr(clean, mixture, SEGMENT_LEN)?,
        seg_snr_db: segmental_snr(clean, enhanced, SEGMENT_LEN)?,
        switch_accuracy: switching.map(|(l, p)| switch_accuracy(l, p)).transpose()?,
    })
}

/// Means over the runs sharing one `(snr, visual)` condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub snr_db: f64,
    pub visual: String,
    pub runs: usize,
    pub input_sdr_db: f64,
    pub sdr_db: f64,
    pub input_seg_snr_db: f64,
    pub seg_snr_db: f64,
    pub switch_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sdr_db: f64,
    pub input_sdr_db: f64,
    pub seg_snr_db: f64,
    pub switch_accuracy: Option<f64>,
    pub conditions: Vec<ConditionSummary>,
    pub runs: Vec<RunMetrics>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn mean_opt<'a>(runs: impl Iterator<Item = &'a RunMetrics> + Clone) -> Option<f64> {
    let vals: Vec<f64> = runs.filter_map(|r| r.switch_accuracy).collect();
    (!vals.is_empty()).then(|| mean(vals.into_iter()))
}

fn snr_key(snr: f64) -> i64 {
    (snr * 1000.0).round() as i64
}

impl EvalReport {
    pub fn from_runs(runs: Vec<RunMetrics>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidInput("no runs to report".into()));
        }
        let mut groups: BTreeMap<(i64, String), Vec<&RunMetrics>> = BTreeMap::new();
        for r in &runs {
            groups.entry((snr_key(r.condition.snr_db), r.condition.visual.clone())).or_default().push(r);
        }
        let conditions = groups
            .into_values()
            .map(|g| ConditionSummary {
                snr_db: g[0].condition.snr_db,
                visual: g[0].condition.visual.clone(),
                runs: g.len(),
                input_sdr_db: mean(g.iter().map(|r| r.input_sdr_db)),
                sdr_db: mean(g.iter().map(|r| r.sdr_db)),
                input_seg_snr_db: mean(g.iter().map(|r| r.input_seg_snr_db)),
                seg_snr_db: mean(g.iter().map(|r| r.seg_snr_db)),
                switch_accuracy: mean_opt(g.iter().copied()),
            })
            .collect();
        Ok(EvalReport {
            sdr_db: mean(runs.iter().map(|r| r.sdr_db)),
            input_sdr_db: mean(runs.iter().map(|r| r.input_sdr_db)),
            seg_snr_db: mean(runs.iter().map(|r| r.seg_snr_db)),
            switch_accuracy: mean_opt(runs.iter()),
            conditions,
            runs,
        })
    }

    pub fn condition(&self, snr_db: f64, visual: &str) -> Option<&ConditionSummary> {
        self.conditions
            .iter()
            .find(|c| snr_key(c.snr_db) == snr_key(snr_db) && c.visual == visual)
    }

    /// Aligned text grid of mean SDR: one column per input SNR, one row for
    /// the unprocessed mixtures and one per visual condition.
    pub fn table(&self) -> String {
        let mut snrs: Vec<f64> = Vec::new();
        let mut visuals: Vec<String> = Vec::new();
        for c in &self.conditions {
            if !snrs.iter().any(|&s| snr_key(s) == snr_key(c.snr_db)) {
                snrs.push(c.snr_db);
            }
            if !visuals.contains(&c.visual) {
                visuals.push(c.visual.clone());
            }
        }
        snrs.sort_by(f64::total_cmp);
        let mut out = String::new();
        let _ = write!(out, "{:<28}", "SDR (dB)");
        for s in &snrs {
            let _ = write!(out, "{:>10}", format!("{s} dB"));
        }
        out.push('\n');
        let mut row = |label: &str, pick: &dyn Fn(f64) -> Option<f64>| {
            let _ = write!(out, "{label:<28}");
            for &s in &snrs {
                match pick(s) {
                    Some(v) => {
                        let _ = write!(out, "{v:>10.2}");
                    }
                    None => {
                        let _ = write!(out, "{:>10}", "-");
                    }
                }
            }
            out.push('\n');
        };
        row("input", &|s| {
            let cs: Vec<&ConditionSummary> =
                self.conditions.iter().filter(|c| snr_key(c.snr_db) == snr_key(s)).collect();
            let n: usize = cs.iter().map(|c| c.runs).sum();
            (n > 0).then(|| cs.iter().map(|c| c.input_sdr_db * c.runs as f64).sum::<f64>() / n as f64)
        });
        for v in &visuals {
            row(&format!("swvae ({v} visual)"), &|s| self.condition(s, v).map(|c| c.sdr_db));
        }
        out
    }
}
