//! Workload traces: JSON Lines loading and validation, synthetic Poisson
//! generation, and arrival-event emission.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{EventKind, Kernel, RngStream, SimTime, StreamId};

/// One workload request with its ground-truth acceptance bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub prompt_length: u32,
    pub output_length: u32,
    pub acceptance_seq: Vec<u8>,
    pub arrival_time_ms: f64,
    pub drafter_id: u32,
}

impl TraceRecord {
    pub fn validate(&self, index: usize) -> Result<()> {
        let invalid = |field, message: &str| Error::Validation {
            index,
            field,
            message: message.to_string(),
        };
        if self.prompt_length == 0 {
            return Err(invalid("prompt_length", "must be at least 1"));
        }
        if self.acceptance_seq.iter().any(|b| *b > 1) {
            return Err(invalid("acceptance_seq", "bits must be 0 or 1"));
        }
        if self.output_length > 0 && self.acceptance_seq.is_empty() {
            return Err(invalid(
                "acceptance_seq",
                "must be non-empty when output_length > 0",
            ));
        }
        if !self.arrival_time_ms.is_finite() || self.arrival_time_ms < 0.0 {
            return Err(invalid(
                "arrival_time_ms",
                "must be a finite non-negative number",
            ));
        }
        Ok(())
    }
}

/// Checks every record's drafter against the bound draft pool size.
/// A pool of zero drafters (fused-only deployment) accepts any id.
pub fn bind_drafters(records: &[TraceRecord], n_drafts: usize) -> Result<()> {
    if n_drafts == 0 {
        return Ok(());
    }
    for (index, r) in records.iter().enumerate() {
        if r.drafter_id as usize >= n_drafts {
            return Err(Error::Validation {
                index,
                field: "drafter_id",
                message: format!("{} is outside a pool of {n_drafts} drafters", r.drafter_id),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ArrivalMode {
    TraceDriven,
    Poisson { rate_rps: f64 },
}

impl ArrivalMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ArrivalMode::TraceDriven => Ok(()),
            ArrivalMode::Poisson { rate_rps } => check_rate(rate_rps),
        }
    }
}

fn check_rate(rate_rps: f64) -> Result<()> {
    if rate_rps.is_finite() && rate_rps > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "arrival rate must be finite and positive, got {rate_rps}"
        )))
    }
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    parse_trace(file, &path.display().to_string())
}

/// Parses JSON Lines trace text. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_trace(reader: impl Read, source_name: &str) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: source_name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        record.validate(records.len())?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_trace(records: &[TraceRecord], writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(records: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    write_trace(records, file)
}

/// Token-count distribution for one length axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthDist {
    Fixed { tokens: u32 },
    /// Log-normal parameterised by its median; samples are rounded and
    /// clamped to `[min, max]`.
    LogNormal {
        median: f64,
        sigma: f64,
        min: u32,
        max: u32,
    },
}

impl LengthDist {
    fn validate(&self) -> Result<()> {
        match *self {
            LengthDist::Fixed { .. } => Ok(()),
            LengthDist::LogNormal {
                median,
                sigma,
                min,
                max,
            } => {
                if !(median > 0.0 && median.is_finite() && sigma >= 0.0 && sigma.is_finite())
                    || min > max
                {
                    Err(Error::InvalidParameter(format!(
                        "bad log-normal length distribution (median {median}, sigma {sigma}, range {min}..={max})"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> u32 {
        match *self {
            LengthDist::Fixed { tokens } => tokens,
            LengthDist::LogNormal {
                median,
                sigma,
                min,
                max,
            } => {
                if sigma == 0.0 {
                    return (median.round() as u32).clamp(min, max);
                }
                let d = LogNormal::new(median.ln(), sigma).expect("validated parameters");
                let v: f64 = d.sample(rng);
                (v.round().min(u32::MAX as f64) as u32).clamp(min, max)
            }
        }
    }
}

/// A request class: jointly drawn prompt and output lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthClass {
    pub weight: f64,
    pub prompt: LengthDist,
    pub output: LengthDist,
}

/// Mixture of request classes. Presets hold a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthProfile {
    pub classes: Vec<LengthClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthPreset {
    /// Short prompt, medium output.
    Gsm8kLike,
    /// Long prompt, long output.
    CnndmLike,
    /// Medium prompt, long output.
    HumanevalLike,
}

impl LengthPreset {
    pub fn profile(self) -> LengthProfile {
        let (p_med, p_max, o_med, o_max) = match self {
            LengthPreset::Gsm8kLike => (80.0, 512, 120.0, 512),
            LengthPreset::CnndmLike => (800.0, 4096, 200.0, 1024),
            LengthPreset::HumanevalLike => (200.0, 1024, 220.0, 1024),
        };
        LengthProfile::single(
            LengthDist::LogNormal {
                median: p_med,
                sigma: 0.4,
                min: 1,
                max: p_max,
            },
            LengthDist::LogNormal {
                median: o_med,
                sigma: 0.4,
                min: 1,
                max: o_max,
            },
        )
    }
}

impl LengthProfile {
    pub fn single(prompt: LengthDist, output: LengthDist) -> Self {
        LengthProfile {
            classes: vec![LengthClass {
                weight: 1.0,
                prompt,
                output,
            }],
        }
    }

    pub fn fixed(prompt: u32, output: u32) -> Self {
        Self::single(
            LengthDist::Fixed { tokens: prompt },
            LengthDist::Fixed { tokens: output },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidParameter(
                "length profile needs at least one class".into(),
            ));
        }
        for c in &self.classes {
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "class weight must be positive, got {}",
                    c.weight
                )));
            }
            c.prompt.validate()?;
            c.output.validate()?;
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> (u32, u32) {
        let total: f64 = self.classes.iter().map(|c| c.weight).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut class = self.classes.last().expect("validated non-empty");
        for c in &self.classes {
            if pick < c.weight {
                class = c;
                break;
            }
            pick -= c.weight;
        }
        let prompt = class.prompt.sample(rng).max(1);
        let output = class.output.sample(rng);
        (prompt, output)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub rate_rps: f64,
    pub n_requests: usize,
    pub acceptance_rate: f64,
    pub lengths: LengthProfile,
    /// Draft pool size used for uniform drafter assignment.
    pub n_drafters: u32,
}

/// Exponential inter-arrival gap in milliseconds by inverse-CDF sampling.
pub fn sample_gap_ms(rng: &mut impl Rng, rate_rps: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate_rps * 1000.0
}

/// Poisson arrivals, Bernoulli acceptance bits (one per output token),
/// and uniform drafter assignment. Each stochastic source uses its own
/// stream so changing one knob never perturbs the others.
pub fn generate_synthetic(params: &SyntheticParams, seed: u64) -> Result<Vec<TraceRecord>> {
    check_rate(params.rate_rps)?;
    if !(0.0..=1.0).contains(&params.acceptance_rate) {
        return Err(Error::InvalidParameter(format!(
            "acceptance rate must lie in [0, 1], got {}",
            params.acceptance_rate
        )));
    }
    params.lengths.validate()?;

    let mut arrivals = RngStream::new(seed, StreamId::Arrivals);
    let mut bits = RngStream::new(seed, StreamId::Acceptance);
    let mut lengths = RngStream::new(seed, StreamId::Lengths);
    let mut drafters = RngStream::new(seed, StreamId::DrafterAssignment);

    let mut t_ms = 0.0;
    let mut out = Vec::with_capacity(params.n_requests);
    for _ in 0..params.n_requests {
        t_ms += sample_gap_ms(&mut arrivals, params.rate_rps);
        let (prompt_length, output_length) = params.lengths.sample(&mut lengths);
        let acceptance_seq = (0..output_length)
            .map(|_| u8::from(bits.random_bool(params.acceptance_rate)))
            .collect();
        let drafter_id = if params.n_drafters > 0 {
            drafters.random_range(0..params.n_drafters)
        } else {
            0
        };
        out.push(TraceRecord {
            prompt_length,
            output_length,
            acceptance_seq,
            arrival_time_ms: t_ms,
            drafter_id,
        });
    }
    Ok(out)
}

/// Arrival instants for each record, in record order.
pub fn arrival_times(
    records: &[TraceRecord],
    mode: ArrivalMode,
    rng: &mut RngStream,
) -> Result<Vec<SimTime>> {
    mode.validate()?;
    Ok(match mode {
        ArrivalMode::TraceDriven => records
            .iter()
            .map(|r| SimTime::from_ms(r.arrival_time_ms))
            .collect(),
        ArrivalMode::Poisson { rate_rps } => {
            let mut t = 0.0;
            records
                .iter()
                .map(|_| {
                    t += sample_gap_ms(rng, rate_rps);
                    SimTime::from_ms(t)
                })
                .collect()
        }
    })
}

/// Schedules one `RequestArrival` per record. Records sharing a timestamp
/// pop in record order.
pub fn emit_arrivals<P>(
    kernel: &mut Kernel<P>,
    records: &[TraceRecord],
    mode: ArrivalMode,
    rng: &mut RngStream,
    mut payload: impl FnMut(usize) -> P,
) -> Result<()> {
    for (i, t) in arrival_times(records, mode, rng)?.into_iter().enumerate() {
        kernel.schedule(t, EventKind::RequestArrival, payload(i))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table_record() -> TraceRecord {
        TraceRecord {
            prompt_length: 27,
            output_length: 94,
            acceptance_seq: vec![1, 0, 1],
            arrival_time_ms: 5.3,
            drafter_id: 38,
        }
    }

    #[test]
    fn parses_table_example() {
        let line = r#"{"prompt_length":27,"output_length":94,"acceptance_seq":[1,0,1],"arrival_time_ms":5.3,"drafter_id":38}"#;
        let recs = parse_trace(line.as_bytes(), "mem").unwrap();
        assert_eq!(recs, vec![table_record()]);
    }

    #[test]
    fn empty_file_is_empty_trace() {
        assert!(parse_trace("".as_bytes(), "mem").unwrap().is_empty());
    }

    #[test]
    fn zero_output_record_is_valid() {
        let line = r#"{"prompt_length":4,"output_length":0,"acceptance_seq":[],"arrival_time_ms":0,"drafter_id":0}"#;
        let recs = parse_trace(line.as_bytes(), "mem").unwrap();
        assert_eq!(recs[0].output_length, 0);
    }

    #[test]
    fn parse_error_reports_line() {
        let text = format!(
            "{}\n\nnot json\n",
            serde_json::to_string(&table_record()).unwrap()
        );
        match parse_trace(text.as_bytes(), "t.jsonl").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn validation_names_field_and_index() {
        let mut bad = table_record();
        bad.acceptance_seq = vec![];
        let text = format!(
            "{}\n{}\n",
            serde_json::to_string(&table_record()).unwrap(),
            serde_json::to_string(&bad).unwrap()
        );
        match parse_trace(text.as_bytes(), "mem").unwrap_err() {
            Error::Validation { index, field, .. } => {
                assert_eq!(index, 1);
                assert_eq!(field, "acceptance_seq");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let line = r#"{"prompt_length":1,"output_length":0,"acceptance_seq":[],"arrival_time_ms":0,"drafter_id":0,"extra":1}"#;
        assert!(matches!(
            parse_trace(line.as_bytes(), "mem"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn drafter_binding() {
        let recs = vec![table_record()];
        assert!(bind_drafters(&recs, 39).is_ok());
        assert!(bind_drafters(&recs, 38).is_err());
        assert!(bind_drafters(&recs, 0).is_ok());
    }

    fn params(n: usize, alpha: f64) -> SyntheticParams {
        SyntheticParams {
            rate_rps: 100.0,
            n_requests: n,
            acceptance_rate: alpha,
            lengths: LengthPreset::Gsm8kLike.profile(),
            n_drafters: 8,
        }
    }

    #[test]
    fn synthetic_zero_requests() {
        assert!(generate_synthetic(&params(0, 0.5), 1).unwrap().is_empty());
    }

    #[test]
    fn synthetic_all_accept() {
        let recs = generate_synthetic(&params(50, 1.0), 1).unwrap();
        assert!(recs.iter().all(|r| r.acceptance_seq.iter().all(|b| *b == 1)));
        assert!(recs
            .iter()
            .all(|r| r.acceptance_seq.len() == r.output_length as usize));
    }

    #[test]
    fn synthetic_rejects_bad_parameters() {
        assert!(generate_synthetic(&params(1, 1.5), 1).is_err());
        let mut p = params(1, 0.5);
        p.rate_rps = 0.0;
        assert!(generate_synthetic(&p, 1).is_err());
        p.rate_rps = f64::INFINITY;
        assert!(generate_synthetic(&p, 1).is_err());
    }

    #[test]
    fn synthetic_mean_gap() {
        let recs = generate_synthetic(&params(10_000, 0.5), 3).unwrap();
        let mean = recs.last().unwrap().arrival_time_ms / recs.len() as f64;
        assert!((mean - 10.0).abs() < 0.5, "mean gap {mean}");
    }

    #[test]
    fn synthetic_is_reproducible() {
        let a = generate_synthetic(&params(200, 0.7), 9).unwrap();
        let b = generate_synthetic(&params(200, 0.7), 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.drafter_id < 8));
    }

    #[test]
    fn acceptance_rate_converges() {
        let mut p = params(2000, 0.8);
        p.lengths = LengthProfile::fixed(10, 100);
        let recs = generate_synthetic(&p, 5).unwrap();
        let (ones, total) = recs.iter().fold((0usize, 0usize), |(o, t), r| {
            (
                o + r.acceptance_seq.iter().filter(|b| **b == 1).count(),
                t + r.acceptance_seq.len(),
            )
        });
        assert!(total >= 100_000);
        let rate = ones as f64 / total as f64;
        assert!((rate - 0.8).abs() <= 0.02 * 0.8, "rate {rate}");
    }

    #[test]
    fn trace_driven_arrivals_use_recorded_times() {
        let mut k: Kernel<usize> = Kernel::new();
        let mut rng = RngStream::new(0, StreamId::Arrivals);
        let mut r2 = table_record();
        r2.drafter_id = 1;
        emit_arrivals(
            &mut k,
            &[table_record(), r2],
            ArrivalMode::TraceDriven,
            &mut rng,
            |i| i,
        )
        .unwrap();
        let a = k.pop().unwrap();
        let b = k.pop().unwrap();
        assert_eq!((a.time, a.payload), (SimTime(5300), 0));
        assert_eq!((b.time, b.payload), (SimTime(5300), 1));
    }

    #[test]
    fn poisson_mode_ignores_recorded_times() {
        let mut recs = vec![table_record(); 3];
        let mut rng = RngStream::new(0, StreamId::Arrivals);
        let a = arrival_times(&recs, ArrivalMode::Poisson { rate_rps: 50.0 }, &mut rng).unwrap();
        for r in &mut recs {
            r.arrival_time_ms = 9999.0;
        }
        let mut rng = RngStream::new(0, StreamId::Arrivals);
        let b = arrival_times(&recs, ArrivalMode::Poisson { rate_rps: 50.0 }, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(
            recs in proptest::collection::vec(
                (1u32..5000, 0u32..300, proptest::collection::vec(0u8..2, 1..40), 0.0f64..1e7, 0u32..1000),
                0..20,
            )
        ) {
            let recs: Vec<TraceRecord> = recs
                .into_iter()
                .map(|(p, o, bits, t, d)| TraceRecord {
                    prompt_length: p,
                    output_length: o,
                    acceptance_seq: bits,
                    arrival_time_ms: t,
                    drafter_id: d,
                })
                .collect();
            let mut buf = Vec::new();
            write_trace(&recs, &mut buf).unwrap();
            let back = parse_trace(buf.as_slice(), "mem").unwrap();
            prop_assert_eq!(back, recs);
        }
    }
}
