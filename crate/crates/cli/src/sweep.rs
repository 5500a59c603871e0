//! Cartesian parameter sweeps over a base deployment config.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use specsim::engine::SimOptions;
use specsim::metrics::{read_report, write_report, Report};
use specsim::policies::{BatchingKind, RoutingKind, WindowConfig};
use specsim::scenario::run_config;
use specsim::sim::derive_seed;
use specsim::topology::{Config, GroupSpec, PoolSpec};
use specsim::Error;

use crate::{load_config, output, pool, CliError, CliResult, Format};

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep spec (YAML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for per-point reports and the summary.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Summary table format.
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowAxis {
    Static,
    Dynamic,
    Awc,
    Fused,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Axes {
    pub gamma: Vec<u32>,
    pub rtt_ms: Vec<f64>,
    pub routing: Vec<RoutingKind>,
    pub batching: Vec<BatchingKind>,
    pub window: Vec<WindowAxis>,
    pub drafts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Base deployment config, relative to the spec file.
    pub base: PathBuf,
    #[serde(default)]
    pub axes: Axes,
    #[serde(default = "one")]
    pub repetitions: u32,
    /// Model used by `awc` points.
    #[serde(default)]
    pub awc_model: Option<PathBuf>,
}

fn one() -> u32 {
    1
}

/// One coordinate assignment; unset axes keep the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtt_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub routing: Option<RoutingKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batching: Option<BatchingKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowAxis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drafts: Option<u32>,
}

fn tag<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

impl Point {
    /// Canonical `axis=value` key in fixed axis order. Independent of the
    /// order axes or values are listed in the spec.
    pub fn key(&self) -> String {
        let mut parts = Vec::new();
        if let Some(v) = self.batching {
            parts.push(format!("batching={}", tag(&v)));
        }
        if let Some(v) = self.drafts {
            parts.push(format!("drafts={v}"));
        }
        if let Some(v) = self.gamma {
            parts.push(format!("gamma={v}"));
        }
        if let Some(v) = self.routing {
            parts.push(format!("routing={}", tag(&v)));
        }
        if let Some(v) = self.rtt_ms {
            parts.push(format!("rtt_ms={v}"));
        }
        if let Some(v) = self.window {
            parts.push(format!("window={}", tag(&v)));
        }
        parts.join(",")
    }

    /// Applies the point to a copy of `base`.
    pub fn apply(&self, base: &Config, awc_model: Option<&Path>) -> CliResult<Config> {
        let mut c = base.clone();
        if let Some(rtt) = self.rtt_ms {
            c.network.rtt_ms = rtt;
        }
        if let Some(r) = self.routing {
            c.policies.routing = r;
        }
        if let Some(b) = self.batching {
            c.policies.batching.kind = b;
        }
        if let Some(n) = self.drafts {
            c.drafts = resize_pool(&c.drafts, n);
        }
        let gamma = self.gamma.or(match c.policies.window {
            WindowConfig::Static { gamma } => Some(gamma),
            WindowConfig::Dynamic { gamma_init, .. } | WindowConfig::Awc { gamma_init, .. } => {
                Some(gamma_init)
            }
            WindowConfig::Fused => None,
        });
        let g = gamma.unwrap_or(4);
        c.policies.window = match (self.window, c.policies.window.clone()) {
            (None, WindowConfig::Static { .. }) | (Some(WindowAxis::Static), _) => {
                WindowConfig::Static { gamma: g }
            }
            (None, WindowConfig::Dynamic { raise_above, lower_below, .. }) => WindowConfig::Dynamic {
                gamma_init: g,
                raise_above,
                lower_below,
            },
            (Some(WindowAxis::Dynamic), _) => WindowConfig::Dynamic {
                gamma_init: g,
                raise_above: 0.75,
                lower_below: 0.25,
            },
            (None, WindowConfig::Awc { model, .. }) => WindowConfig::Awc { model, gamma_init: g },
            (Some(WindowAxis::Awc), _) => WindowConfig::Awc {
                model: awc_model
                    .ok_or_else(|| CliError::config("`awc` window points need `awc_model` in the sweep spec"))?
                    .to_path_buf(),
                gamma_init: g,
            },
            (None, WindowConfig::Fused) | (Some(WindowAxis::Fused), _) => WindowConfig::Fused,
        };
        Ok(c)
    }
}

fn resize_pool(pool: &PoolSpec, n: u32) -> PoolSpec {
    match pool {
        PoolSpec::Count(_) => PoolSpec::Count(n),
        PoolSpec::Groups(groups) => {
            let first = groups.first().cloned().unwrap_or_default();
            PoolSpec::Groups(vec![GroupSpec {
                count: Some(n),
                devices: None,
                ..first
            }])
        }
    }
}

impl SweepSpec {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::from(Error::File {
            path: path.to_path_buf(),
            source: e,
        }))?;
        let mut spec: SweepSpec = serde_yaml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if spec.base.is_relative() {
            spec.base = dir.join(&spec.base);
        }
        if let Some(m) = spec.awc_model.as_mut().filter(|m| m.is_relative()) {
            *m = dir.join(&*m);
        }
        if spec.repetitions == 0 {
            return Err(CliError::config("repetitions must be at least 1"));
        }
        Ok(spec)
    }

    /// Cartesian product of all non-empty axes.
    pub fn points(&self) -> Vec<Point> {
        let a = &self.axes;
        let mut pts = vec![Point::default()];
        fn expand<T: Copy>(pts: Vec<Point>, vals: &[T], set: impl Fn(&mut Point, T)) -> Vec<Point> {
            if vals.is_empty() {
                return pts;
            }
            pts.into_iter()
                .flat_map(|p| {
                    vals.iter().map(|&v| {
                        let mut q = p.clone();
                        set(&mut q, v);
                        q
                    }).collect::<Vec<_>>()
                })
                .collect()
        }
        pts = expand(pts, &a.window, |p, v| p.window = Some(v));
        pts = expand(pts, &a.gamma, |p, v| p.gamma = Some(v));
        pts = expand(pts, &a.rtt_ms, |p, v| p.rtt_ms = Some(v));
        pts = expand(pts, &a.routing, |p, v| p.routing = Some(v));
        pts = expand(pts, &a.batching, |p, v| p.batching = Some(v));
        pts = expand(pts, &a.drafts, |p, v| p.drafts = Some(v));
        pts
    }
}

/// Seed for one repetition of one point. Repetition 0 of the empty point
/// (a sweep without axes) uses the base seed, so it reproduces `run`.
pub fn point_seed(base: u64, key: &str, rep: u32) -> u64 {
    if key.is_empty() && rep == 0 {
        base
    } else {
        derive_seed(base, &format!("{key}#rep={rep}"))
    }
}

fn file_stem(key: &str, rep: u32) -> String {
    let k = if key.is_empty() { "base" } else { key };
    let clean: String = k
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{clean}__rep{rep}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub key: String,
    #[serde(flatten)]
    pub point: Point,
    pub repetitions: u32,
    pub failed: u32,
    pub throughput_rps: Option<f64>,
    pub ttft_ms: Option<f64>,
    pub tpot_ms: Option<f64>,
    pub e2e_latency_ms: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub errors: Vec<String>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Averages per-repetition reports of one point.
pub fn summarize_point(key: &str, point: &Point, reports: &[Result<Report, String>]) -> SummaryRow {
    let ok: Vec<&Report> = reports.iter().filter_map(|r| r.as_ref().ok()).collect();
    let pick = |f: &dyn Fn(&Report) -> Option<f64>| mean(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
    SummaryRow {
        key: key.to_string(),
        point: point.clone(),
        repetitions: reports.len() as u32,
        failed: (reports.len() - ok.len()) as u32,
        throughput_rps: pick(&|r| r.system.throughput_rps),
        ttft_ms: pick(&|r| r.system.ttft_ms.map(|s| s.mean.0)),
        tpot_ms: pick(&|r| r.system.tpot_ms.map(|s| s.mean.0)),
        e2e_latency_ms: pick(&|r| r.system.e2e_latency_ms.map(|s| s.mean.0)),
        errors: reports.iter().filter_map(|r| r.as_ref().err().cloned()).collect(),
    }
}

/// Rebuilds the summary from the report files of a finished sweep.
pub fn summarize_dir(dir: &Path, spec: &SweepSpec) -> Vec<SummaryRow> {
    spec.points()
        .iter()
        .map(|p| {
            let key = p.key();
            let reports: Vec<Result<Report, String>> = (0..spec.repetitions)
                .map(|rep| {
                    let path = dir.join("points").join(format!("{}.json", file_stem(&key, rep)));
                    read_report(&path).map_err(|e| e.to_string())
                })
                .collect();
            summarize_point(&key, p, &reports)
        })
        .collect()
}

pub struct SweepOutcome {
    pub rows: Vec<SummaryRow>,
}

/// Runs every (point, repetition) in parallel; writes reports under
/// `out/points/` and the summary table as `out/summary.{json,csv}`.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &Config,
    base_seed: u64,
    out: &Path,
    parallel: Option<usize>,
    format: Format,
) -> CliResult<SweepOutcome> {
    let points = spec.points();
    eprintln!(
        "sweep: {} points x {} repetitions = {} runs",
        points.len(),
        spec.repetitions,
        points.len() * spec.repetitions as usize
    );
    let dir = out.join("points");
    std::fs::create_dir_all(&dir).map_err(|e| crate::io_err(&dir, e))?;
    let jobs: Vec<(usize, u32)> = (0..points.len())
        .flat_map(|i| (0..spec.repetitions).map(move |r| (i, r)))
        .collect();
    let results: Vec<Result<Report, String>> = pool(parallel)?.install(|| {
        jobs.par_iter()
            .map(|&(i, rep)| {
                let p = &points[i];
                let key = p.key();
                let config = p.apply(base, spec.awc_model.as_deref()).map_err(|e| e.message)?;
                let seed = point_seed(base_seed, &key, rep);
                let (report, _) = run_config(&config, seed, SimOptions::default()).map_err(|e| e.to_string())?;
                let path = dir.join(format!("{}.json", file_stem(&key, rep)));
                write_report(&report, &path).map_err(|e| e.to_string())?;
                Ok(report)
            })
            .collect()
    });
    let mut by_point: BTreeMap<usize, Vec<Result<Report, String>>> = BTreeMap::new();
    for (&(i, _), r) in jobs.iter().zip(results) {
        by_point.entry(i).or_default().push(r);
    }
    let rows: Vec<SummaryRow> = points
        .iter()
        .enumerate()
        .map(|(i, p)| summarize_point(&p.key(), p, &by_point[&i]))
        .collect();
    write_summary(&rows, out, format)?;
    Ok(SweepOutcome { rows })
}

fn write_summary(rows: &[SummaryRow], out: &Path, format: Format) -> CliResult<()> {
    match format {
        Format::Json => {
            let mut w = output(Some(&out.join("summary.json")))?;
            serde_json::to_writer_pretty(&mut w, rows).map_err(|e| CliError::runtime(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| CliError::runtime(e.to_string()))?;
            w.flush().map_err(|e| CliError::runtime(e.to_string()))
        }
        Format::Csv => {
            let w = output(Some(&out.join("summary.csv")))?;
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record([
                "key", "repetitions", "failed", "throughput_rps", "ttft_ms", "tpot_ms", "e2e_latency_ms",
            ])
            .map_err(|e| CliError::runtime(e.to_string()))?;
            let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            for r in rows {
                csv.write_record([
                    r.key.clone(),
                    r.repetitions.to_string(),
                    r.failed.to_string(),
                    f(r.throughput_rps),
                    f(r.ttft_ms),
                    f(r.tpot_ms),
                    f(r.e2e_latency_ms),
                ])
                .map_err(|e| CliError::runtime(e.to_string()))?;
            }
            csv.flush().map_err(|e| CliError::runtime(e.to_string()))
        }
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let spec = SweepSpec::load(&args.config)?;
    let base = load_config(&spec.base, args.lenient)?;
    let seed = args.seed.unwrap_or_else(|| base.seed_or_default());
    let outcome = run_sweep(&spec, &base, seed, &args.out, args.parallel, args.format)?;
    let failed: u32 = outcome.rows.iter().map(|r| r.failed).sum();
    if failed > 0 {
        eprintln!("sweep: {failed} run(s) failed; see summary");
    }
    Ok(())
}
