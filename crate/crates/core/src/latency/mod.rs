//! Table-driven compute latency model.
//!
//! A [`LatencyProfile`] holds one dense `(batch rows, context)` grid per
//! `(model, hardware, op)`. Prefill grids are indexed by prompt tokens on
//! the column axis. Decode grids give the latency of one autoregressive
//! step; a decode shape with `tokens_per_request = k` costs `k` sequential
//! steps. Verification is one parallel pass over `k` tokens per request,
//! priced on the decode grid at `batch_size * k` rows.

mod analytic;
mod grid;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use analytic::{expected_speedup, expected_tau, SpecDecParams};
pub use grid::{Grid, Interpolated};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Prefill,
    Decode,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchShape {
    pub batch_size: u32,
    pub tokens_per_request: u32,
    pub context_length: u32,
}

impl BatchShape {
    pub fn new(batch_size: u32, tokens_per_request: u32, context_length: u32) -> Self {
        BatchShape {
            batch_size,
            tokens_per_request,
            context_length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub latency_ms: f64,
    pub extrapolated: bool,
}

/// One profiled table. `latency_ms` is row-major over
/// `batch_axis x context_axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    pub model: String,
    pub hardware: String,
    pub op: OpKind,
    #[serde(default = "one")]
    pub calibration_factor: f64,
    pub batch_axis: Vec<f64>,
    pub context_axis: Vec<f64>,
    pub latency_ms: Vec<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    pub units: String,
    #[serde(default)]
    pub provenance: String,
    pub entries: Vec<ProfileEntry>,
}

type ProfileKey = (String, String, OpKind);

#[derive(Debug, Clone)]
struct Table {
    calibration_factor: f64,
    grid: Grid<f64>,
}

#[derive(Debug, Clone)]
pub struct LatencyProfile {
    file: ProfileFile,
    tables: BTreeMap<ProfileKey, Table>,
}

impl PartialEq for LatencyProfile {
    fn eq(&self, other: &Self) -> bool {
        self.file == other.file
    }
}

impl LatencyProfile {
    pub fn from_file_repr(file: ProfileFile) -> Result<Self> {
        if file.units != "ms" {
            return Err(Error::InvalidProfile(format!(
                "units must be `ms`, got `{}`",
                file.units
            )));
        }
        let mut tables = BTreeMap::new();
        for e in &file.entries {
            let ctx = || format!("{}/{}/{:?}", e.model, e.hardware, e.op);
            if !(e.calibration_factor.is_finite() && e.calibration_factor > 0.0) {
                return Err(Error::InvalidProfile(format!(
                    "{}: calibration factor must be positive",
                    ctx()
                )));
            }
            if e.latency_ms.len() != e.batch_axis.len()
                || e.latency_ms.iter().any(|r| r.len() != e.context_axis.len())
            {
                return Err(Error::InvalidProfile(format!(
                    "{}: grid body does not match its axes",
                    ctx()
                )));
            }
            let values: Vec<f64> = e.latency_ms.iter().flatten().copied().collect();
            if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidProfile(format!(
                    "{}: latencies must be finite and positive",
                    ctx()
                )));
            }
            let grid = Grid::new(e.batch_axis.clone(), e.context_axis.clone(), values)
                .map_err(|m| Error::InvalidProfile(format!("{}: {m}", ctx())))?;
            let key = (e.model.clone(), e.hardware.clone(), e.op);
            if tables
                .insert(
                    key,
                    Table {
                        calibration_factor: e.calibration_factor,
                        grid,
                    },
                )
                .is_some()
            {
                return Err(Error::InvalidProfile(format!("{}: duplicate entry", ctx())));
            }
        }
        Ok(LatencyProfile { file, tables })
    }

    pub fn file_repr(&self) -> &ProfileFile {
        &self.file
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        let file: ProfileFile = serde_json::from_reader(BufReader::new(f)).map_err(|e| {
            Error::Parse {
                path: path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            }
        })?;
        Self::from_file_repr(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, &self.file)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn contains(&self, model: &str, hardware: &str, op: OpKind) -> bool {
        self.table(model, hardware, op).is_some()
    }

    fn table(&self, model: &str, hardware: &str, op: OpKind) -> Option<&Table> {
        let key = (model.to_string(), hardware.to_string(), op);
        self.tables.get(&key).or_else(|| {
            (op == OpKind::Verify)
                .then(|| {
                    self.tables
                        .get(&(model.to_string(), hardware.to_string(), OpKind::Decode))
                })
                .flatten()
        })
    }

    /// Latency of one batch of `op` with the given (padded) shape.
    pub fn predict(
        &self,
        op: OpKind,
        shape: BatchShape,
        model: &str,
        hardware: &str,
    ) -> Result<Prediction> {
        let table = self
            .table(model, hardware, op)
            .ok_or_else(|| Error::UnknownProfileKey {
                model: model.to_string(),
                hardware: hardware.to_string(),
                op,
            })?;
        let batch = f64::from(shape.batch_size.max(1));
        let tokens = f64::from(shape.tokens_per_request.max(1));
        let ctx = f64::from(shape.context_length);
        let (p, repeat) = match op {
            OpKind::Prefill => (table.grid.interpolate(batch, ctx + tokens), 1.0),
            OpKind::Decode => (table.grid.interpolate(batch, ctx), tokens),
            OpKind::Verify => (table.grid.interpolate(batch * tokens, ctx), 1.0),
        };
        Ok(Prediction {
            latency_ms: p.value * repeat * table.calibration_factor,
            extrapolated: p.extrapolated,
        })
    }
}

/// Analytic description of one `(model, hardware)` pair from which a dense
/// profile is generated.
///
/// Decode step latency: `decode_ms + batch_slope_ms * (b - 1) +
/// context_coeff_ms * b * ctx^context_exponent`.
/// Prefill latency: `prefill_base_ms + prefill_ms_per_token * b * tokens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthEntry {
    pub model: String,
    pub hardware: String,
    pub decode_ms: f64,
    #[serde(default)]
    pub batch_slope_ms: f64,
    #[serde(default)]
    pub context_coeff_ms: f64,
    #[serde(default = "half")]
    pub context_exponent: f64,
    #[serde(default)]
    pub prefill_base_ms: f64,
    #[serde(default)]
    pub prefill_ms_per_token: f64,
    #[serde(default = "one")]
    pub calibration_factor: f64,
}

fn half() -> f64 {
    0.5
}

impl SynthEntry {
    /// Same curve shape with every latency coefficient scaled by `ratio`.
    pub fn scaled(&self, model: &str, hardware: &str, ratio: f64) -> SynthEntry {
        SynthEntry {
            model: model.to_string(),
            hardware: hardware.to_string(),
            decode_ms: self.decode_ms * ratio,
            batch_slope_ms: self.batch_slope_ms * ratio,
            context_coeff_ms: self.context_coeff_ms * ratio,
            context_exponent: self.context_exponent,
            prefill_base_ms: self.prefill_base_ms * ratio,
            prefill_ms_per_token: self.prefill_ms_per_token * ratio,
            calibration_factor: self.calibration_factor,
        }
    }

    fn decode_at(&self, b: f64, ctx: f64) -> f64 {
        self.decode_ms
            + self.batch_slope_ms * (b - 1.0)
            + self.context_coeff_ms * b * ctx.powf(self.context_exponent)
    }

    fn prefill_at(&self, b: f64, tokens: f64) -> f64 {
        self.prefill_base_ms + self.prefill_ms_per_token * b * tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_batch_axis")]
    pub batch_axis: Vec<f64>,
    #[serde(default = "default_context_axis")]
    pub context_axis: Vec<f64>,
    pub entries: Vec<SynthEntry>,
}

pub fn default_batch_axis() -> Vec<f64> {
    (0..=11).map(|i| f64::from(1u32 << i)).collect()
}

pub fn default_context_axis() -> Vec<f64> {
    let mut v = vec![0.0];
    v.extend((6..=14).map(|i| f64::from(1u32 << i)));
    v
}

impl SynthSpec {
    pub fn new(entries: Vec<SynthEntry>) -> Self {
        SynthSpec {
            batch_axis: default_batch_axis(),
            context_axis: default_context_axis(),
            entries,
        }
    }

    /// Target entry plus a draft entry whose every coefficient is
    /// `cost_ratio` times the target's.
    pub fn target_and_draft(
        target: SynthEntry,
        draft_model: &str,
        draft_hardware: &str,
        cost_ratio: f64,
    ) -> Self {
        let draft = target.scaled(draft_model, draft_hardware, cost_ratio);
        Self::new(vec![target, draft])
    }

    fn validate(&self) -> Result<()> {
        for e in &self.entries {
            let coeffs = [
                e.decode_ms,
                e.batch_slope_ms,
                e.context_coeff_ms,
                e.context_exponent,
                e.prefill_base_ms,
                e.prefill_ms_per_token,
            ];
            if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "{}/{}: coefficients must be finite and non-negative",
                    e.model, e.hardware
                )));
            }
            if e.decode_ms <= 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "{}/{}: decode_ms must be positive",
                    e.model, e.hardware
                )));
            }
            if e.prefill_base_ms <= 0.0 && e.prefill_ms_per_token <= 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "{}/{}: prefill latency would be zero",
                    e.model, e.hardware
                )));
            }
        }
        Ok(())
    }
}

/// Generates a dense profile (prefill and decode tables per entry).
pub fn synth_profile(spec: &SynthSpec) -> Result<LatencyProfile> {
    spec.validate()?;
    let table = |f: &dyn Fn(f64, f64) -> f64| -> Vec<Vec<f64>> {
        spec.batch_axis
            .iter()
            .map(|b| spec.context_axis.iter().map(|c| f(*b, *c)).collect())
            .collect()
    };
    let mut entries = Vec::new();
    for e in &spec.entries {
        entries.push(ProfileEntry {
            model: e.model.clone(),
            hardware: e.hardware.clone(),
            op: OpKind::Prefill,
            calibration_factor: e.calibration_factor,
            batch_axis: spec.batch_axis.clone(),
            context_axis: spec.context_axis.clone(),
            latency_ms: table(&|b, t| e.prefill_at(b, t.max(1.0))),
        });
        entries.push(ProfileEntry {
            model: e.model.clone(),
            hardware: e.hardware.clone(),
            op: OpKind::Decode,
            calibration_factor: e.calibration_factor,
            batch_axis: spec.batch_axis.clone(),
            context_axis: spec.context_axis.clone(),
            latency_ms: table(&|b, c| e.decode_at(b, c)),
        });
    }
    LatencyProfile::from_file_repr(ProfileFile {
        units: "ms".into(),
        provenance: "synthetic: generated from analytic per-device coefficients".into(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target() -> SynthEntry {
        SynthEntry {
            model: "t".into(),
            hardware: "gpu".into(),
            decode_ms: 20.0,
            batch_slope_ms: 0.2,
            context_coeff_ms: 0.01,
            context_exponent: 0.5,
            prefill_base_ms: 5.0,
            prefill_ms_per_token: 0.05,
            calibration_factor: 1.0,
        }
    }

    #[test]
    fn flat_profile_is_constant_in_batch() {
        let e = SynthEntry {
            decode_ms: 1.0,
            batch_slope_ms: 0.0,
            context_coeff_ms: 0.0,
            prefill_base_ms: 1.0,
            ..target()
        };
        let p = synth_profile(&SynthSpec::new(vec![e])).unwrap();
        for b in [1, 3, 16, 100] {
            let pred = p
                .predict(OpKind::Decode, BatchShape::new(b, 1, 128), "t", "gpu")
                .unwrap();
            assert_eq!(pred.latency_ms, 1.0);
        }
    }

    #[test]
    fn draft_over_target_ratio_everywhere() {
        let spec = SynthSpec::target_and_draft(target(), "d", "edge", 0.1);
        let p = synth_profile(&spec).unwrap();
        let t = &p.file_repr().entries[1];
        let d = &p.file_repr().entries[3];
        assert_eq!((t.op, d.op), (OpKind::Decode, OpKind::Decode));
        for (rt, rd) in t.latency_ms.iter().zip(&d.latency_ms) {
            for (vt, vd) in rt.iter().zip(rd) {
                assert!((vd / vt - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let p = synth_profile(&SynthSpec::target_and_draft(target(), "d", "edge", 0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.save(&path).unwrap();
        let q = LatencyProfile::load(&path).unwrap();
        assert_eq!(p, q);
        let path2 = dir.path().join("q.json");
        q.save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn decode_tokens_are_sequential_steps() {
        let e = SynthEntry {
            decode_ms: 1.0,
            batch_slope_ms: 0.0,
            context_coeff_ms: 0.0,
            ..target()
        };
        let p = synth_profile(&SynthSpec::new(vec![e])).unwrap();
        let pred = p
            .predict(OpKind::Decode, BatchShape::new(1, 4, 50), "t", "gpu")
            .unwrap();
        assert_eq!(pred.latency_ms, 4.0);
    }

    #[test]
    fn verify_is_one_pass_over_all_rows() {
        let p = synth_profile(&SynthSpec::new(vec![target()])).unwrap();
        let verify = p
            .predict(OpKind::Verify, BatchShape::new(2, 4, 256), "t", "gpu")
            .unwrap();
        let decode8 = p
            .predict(OpKind::Decode, BatchShape::new(8, 1, 256), "t", "gpu")
            .unwrap();
        assert_eq!(verify.latency_ms, decode8.latency_ms);
    }

    #[test]
    fn unknown_key() {
        let p = synth_profile(&SynthSpec::new(vec![target()])).unwrap();
        let err = p
            .predict(OpKind::Decode, BatchShape::new(1, 1, 0), "x", "gpu")
            .unwrap_err();
        assert!(matches!(err, Error::UnknownProfileKey { .. }));
    }

    #[test]
    fn calibration_factor_scales() {
        let mut e = target();
        e.calibration_factor = 1.5;
        let p = synth_profile(&SynthSpec::new(vec![e])).unwrap();
        let q = synth_profile(&SynthSpec::new(vec![target()])).unwrap();
        let s = BatchShape::new(3, 1, 700);
        let a = p.predict(OpKind::Decode, s, "t", "gpu").unwrap().latency_ms;
        let b = q.predict(OpKind::Decode, s, "t", "gpu").unwrap().latency_ms;
        assert!((a - 1.5 * b).abs() < 1e-12);
    }

    #[test]
    fn extrapolation_is_flagged() {
        let p = synth_profile(&SynthSpec::new(vec![target()])).unwrap();
        let pred = p
            .predict(OpKind::Decode, BatchShape::new(1, 1, 100_000), "t", "gpu")
            .unwrap();
        assert!(pred.extrapolated);
    }

    #[test]
    fn loader_rejects_non_monotone_axes() {
        let mut file = synth_profile(&SynthSpec::new(vec![target()]))
            .unwrap()
            .file_repr()
            .clone();
        file.entries[0].batch_axis.swap(0, 1);
        assert!(matches!(
            LatencyProfile::from_file_repr(file),
            Err(Error::InvalidProfile(_))
        ));
    }

    #[test]
    fn invalid_spec() {
        let mut e = target();
        e.decode_ms = -1.0;
        assert!(matches!(
            synth_profile(&SynthSpec::new(vec![e])),
            Err(Error::InvalidSpec(_))
        ));
    }
}
