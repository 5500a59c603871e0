//! Sweep-based labelling: each scenario runs under every candidate window
//! and the best candidate by a weighted SLO score becomes the label.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::engine::SimOptions;
use crate::error::{Error, Result};
use crate::metrics::{emit_report, Report};
use crate::policies::{WindowConfig, WindowDecision};
use crate::scenario::Scenario;
use crate::sim::{RngStream, StreamId};

/// Candidate decision codes: window sizes 2..=12, then fused (0).
pub const CANDIDATES: [u32; 12] = [2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub tpot: f64,
    pub ttft: f64,
    pub throughput: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            tpot: 0.5,
            ttft: 0.2,
            throughput: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    /// Window size, or 0 for fused.
    pub candidate: u32,
    pub throughput_rps: f64,
    pub ttft_ms: f64,
    pub tpot_ms: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub scenario_id: u64,
    pub scenario: Scenario,
    pub features: FeatureVector,
    pub candidate_gamma: u32,
    pub objective: f64,
    pub label_gamma: u32,
}

impl SweepSample {
    /// Regression target; fused labels map to 1.
    pub fn target(&self) -> f64 {
        f64::from(self.label_gamma.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSweep {
    pub scenario: Scenario,
    pub candidates: Vec<CandidateResult>,
    pub label: u32,
    pub samples: Vec<SweepSample>,
}

fn minmax(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.iter()
        .map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

/// `w_tpot * TPOT_n + w_ttft * TTFT_n - w_thr * throughput_n`, each term
/// min-max scaled within the candidate set.
pub fn objective_scores(tpot: &[f64], ttft: &[f64], throughput: &[f64], w: ObjectiveWeights) -> Vec<f64> {
    let (a, b, c) = (minmax(tpot), minmax(ttft), minmax(throughput));
    (0..tpot.len())
        .map(|i| w.tpot * a[i] + w.ttft * b[i] - w.throughput * c[i])
        .collect()
}

fn tie_rank(code: u32) -> u32 {
    code.max(1)
}

/// Candidate with the lowest objective; ties go to the smaller window
/// (fused counts as 1).
pub fn label_scenario(results: &[CandidateResult]) -> u32 {
    results
        .iter()
        .min_by(|x, y| {
            x.objective
                .total_cmp(&y.objective)
                .then(tie_rank(x.candidate).cmp(&tie_rank(y.candidate)))
        })
        .map(|r| r.candidate)
        .expect("at least one candidate")
}

pub fn window_for(code: u32) -> WindowConfig {
    match WindowDecision::from_code(code) {
        WindowDecision::Fused => WindowConfig::Fused,
        WindowDecision::Distributed { gamma } => WindowConfig::Static { gamma },
    }
}

fn summarize(report: &Report) -> (f64, f64, f64) {
    let s = &report.system;
    (
        s.throughput_rps.unwrap_or(0.0),
        s.ttft_ms.map_or(0.0, |t| t.mean.0),
        s.tpot_ms.map_or(0.0, |t| t.mean.0),
    )
}

/// Runs every candidate on one scenario. Features are sampled from the
/// distributed runs only; fused runs record no acceptance history.
pub fn sweep_scenario(
    scenario: &Scenario,
    weights: ObjectiveWeights,
    features_per_run: usize,
) -> Result<ScenarioSweep> {
    let mut metrics = Vec::with_capacity(CANDIDATES.len());
    let mut feats = Vec::new();
    for &code in &CANDIDATES {
        let options = SimOptions {
            event_log: false,
            feature_samples: if code == 0 { 0 } else { features_per_run },
        };
        let out = scenario.run(window_for(code), None, options)?;
        let report = emit_report(out.records, &out.stats, String::new(), scenario.seed);
        metrics.push(summarize(&report));
        feats.extend(out.features.into_iter().map(|f| (code, f)));
    }
    let thr: Vec<f64> = metrics.iter().map(|m| m.0).collect();
    let ttft: Vec<f64> = metrics.iter().map(|m| m.1).collect();
    let tpot: Vec<f64> = metrics.iter().map(|m| m.2).collect();
    let scores = objective_scores(&tpot, &ttft, &thr, weights);
    let candidates: Vec<CandidateResult> = CANDIDATES
        .iter()
        .enumerate()
        .map(|(i, &c)| CandidateResult {
            candidate: c,
            throughput_rps: thr[i],
            ttft_ms: ttft[i],
            tpot_ms: tpot[i],
            objective: scores[i],
        })
        .collect();
    let label = label_scenario(&candidates);
    let samples = feats
        .into_iter()
        .map(|(code, features)| SweepSample {
            scenario_id: scenario.id,
            scenario: scenario.clone(),
            features,
            candidate_gamma: code,
            objective: candidates
                .iter()
                .find(|c| c.candidate == code)
                .map_or(0.0, |c| c.objective),
            label_gamma: label,
        })
        .collect();
    Ok(ScenarioSweep {
        scenario: scenario.clone(),
        candidates,
        label,
        samples,
    })
}

/// Sequential sweep over all scenarios.
pub fn generate_dataset(
    scenarios: &[Scenario],
    weights: ObjectiveWeights,
    features_per_run: usize,
) -> Result<Vec<ScenarioSweep>> {
    scenarios
        .iter()
        .map(|s| sweep_scenario(s, weights, features_per_run))
        .collect()
}

/// Train/validation/test scenario ids in proportion 80/10/10.
pub fn split_by_scenario(ids: &[u64], seed: u64) -> (Vec<u64>, Vec<u64>, Vec<u64>) {
    let mut ids: Vec<u64> = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = RngStream::new(seed, StreamId::Scenario);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_train = (n * 8).div_ceil(10);
    let n_val = (n - n_train) / 2;
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    (ids, val, test)
}

pub fn save_dataset(samples: &[SweepSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(f);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<SweepSample>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(c: u32, objective: f64) -> CandidateResult {
        CandidateResult {
            candidate: c,
            throughput_rps: 0.0,
            ttft_ms: 0.0,
            tpot_ms: 0.0,
            objective,
        }
    }

    #[test]
    fn ties_prefer_smaller_window() {
        assert_eq!(label_scenario(&[cand(5, 0.1), cand(3, 0.1), cand(8, 0.2)]), 3);
        assert_eq!(label_scenario(&[cand(2, 0.0), cand(0, 0.0)]), 0);
    }

    #[test]
    fn dominating_candidate_scores_lowest() {
        let s = objective_scores(&[5.0, 8.0, 9.0], &[50.0, 60.0, 70.0], &[10.0, 9.0, 8.0], ObjectiveWeights::default());
        assert_eq!(s[0], -0.3);
        assert!(s[0] < s[1] && s[1] < s[2]);
    }

    #[test]
    fn identical_metrics_identical_scores() {
        let s = objective_scores(&[3.0; 4], &[1.0; 4], &[2.0; 4], ObjectiveWeights::default());
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tpot_only_weights_pick_min_tpot() {
        let w = ObjectiveWeights {
            tpot: 1.0,
            ttft: 0.0,
            throughput: 0.0,
        };
        let tpot = [9.0, 4.0, 6.0];
        let s = objective_scores(&tpot, &[1.0, 9.0, 3.0], &[5.0, 1.0, 9.0], w);
        let cands: Vec<_> = [2, 3, 4].iter().zip(&s).map(|(c, o)| cand(*c, *o)).collect();
        assert_eq!(label_scenario(&cands), 3);
    }

    #[test]
    fn split_is_by_scenario_and_disjoint() {
        let ids: Vec<u64> = (0..50).collect();
        let (tr, va, te) = split_by_scenario(&ids, 3);
        assert_eq!((tr.len(), va.len(), te.len()), (40, 5, 5));
        let mut all: Vec<u64> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, ids);
    }
}
