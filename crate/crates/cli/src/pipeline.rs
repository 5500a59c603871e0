//! Dataset generation, training and policy evaluation for learned window
//! control.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use specsim::awc::{
    load_dataset, save_dataset, split_by_scenario, sweep_scenario, train, AwcModel,
    ObjectiveWeights, ScenarioSweep, SweepSample, TrainConfig, TrainReport,
};
use specsim::engine::SimOptions;
use specsim::metrics::Report;
use specsim::policies::WindowConfig;
use specsim::scenario::Scenario;
use specsim::sim::derive_seed;
use specsim::topology::DEFAULT_SEED;
use specsim::workload::LengthPreset;
use specsim::Error;

use crate::{output, pool, CliError, CliResult, Format};

/// Scenario grid swept to build the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetGrid {
    pub alpha: Vec<f64>,
    pub rtt_ms: Vec<f64>,
    pub cost_ratio: Vec<f64>,
    pub rate_rps: Vec<f64>,
    pub presets: Vec<LengthPreset>,
    pub n_requests: usize,
    pub n_targets: u32,
    pub n_drafts: u32,
    /// Feature snapshots kept per distributed run.
    pub features_per_run: usize,
    pub weights: ObjectiveWeights,
}

impl Default for DatasetGrid {
    fn default() -> Self {
        DatasetGrid {
            alpha: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            rtt_ms: vec![5.0, 20.0, 50.0, 100.0],
            cost_ratio: vec![0.05, 0.1, 0.3],
            rate_rps: vec![1.0, 4.0],
            presets: vec![LengthPreset::Gsm8kLike, LengthPreset::HumanevalLike],
            n_requests: 150,
            n_targets: 1,
            n_drafts: 8,
            features_per_run: 4,
            weights: ObjectiveWeights::default(),
        }
    }
}

impl DatasetGrid {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::from(Error::File {
            path: path.to_path_buf(),
            source: e,
        }))?;
        serde_yaml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Every grid combination as a scenario. Ids follow grid order; each
    /// scenario seed derives from its parameter values.
    pub fn scenarios(&self, seed: u64) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &preset in &self.presets {
            for &rate_rps in &self.rate_rps {
                for &cost_ratio in &self.cost_ratio {
                    for &rtt_ms in &self.rtt_ms {
                        for &alpha in &self.alpha {
                            let key = format!(
                                "alpha={alpha},rtt={rtt_ms},c={cost_ratio},rate={rate_rps},preset={preset:?}"
                            );
                            out.push(Scenario {
                                id: out.len() as u64,
                                alpha,
                                rtt_ms,
                                cost_ratio,
                                rate_rps,
                                n_requests: self.n_requests,
                                n_targets: self.n_targets,
                                n_drafts: self.n_drafts,
                                preset,
                                seed: derive_seed(seed, &key),
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Sweeps all scenarios in parallel; output order follows scenario order.
pub fn generate(scenarios: &[Scenario], grid: &DatasetGrid, parallel: Option<usize>) -> CliResult<Vec<ScenarioSweep>> {
    let res: Result<Vec<ScenarioSweep>, Error> = pool(parallel)?.install(|| {
        scenarios
            .par_iter()
            .map(|s| sweep_scenario(s, grid.weights, grid.features_per_run))
            .collect()
    });
    Ok(res?)
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    /// Scenario grid (YAML); the built-in grid when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset file (JSON lines of samples).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub parallel: Option<usize>,
}

pub fn cmd_gen_dataset(args: &GenDatasetArgs) -> CliResult<()> {
    let grid = match &args.config {
        Some(p) => DatasetGrid::load(p)?,
        None => DatasetGrid::default(),
    };
    let scenarios = grid.scenarios(args.seed.unwrap_or(DEFAULT_SEED));
    eprintln!("gen-dataset: {} scenarios x 12 candidates", scenarios.len());
    let sweeps = generate(&scenarios, &grid, args.parallel)?;
    let samples: Vec<SweepSample> = sweeps.into_iter().flat_map(|s| s.samples).collect();
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| crate::io_err(dir, e))?;
    }
    save_dataset(&samples, &args.out)?;
    eprintln!("gen-dataset: wrote {} samples", samples.len());
    Ok(())
}

type Labeled = Vec<(specsim::awc::FeatureVector, f64)>;

/// Train/validation/test sample sets for a scenario-level split.
pub fn split_samples(samples: &[SweepSample], split_seed: u64) -> (Labeled, Labeled, Labeled) {
    let ids: Vec<u64> = samples.iter().map(|s| s.scenario_id).collect();
    let (tr, va, te) = split_by_scenario(&ids, split_seed);
    let (tr, va, te): (BTreeSet<u64>, BTreeSet<u64>, BTreeSet<u64>) =
        (tr.into_iter().collect(), va.into_iter().collect(), te.into_iter().collect());
    let pick = |set: &BTreeSet<u64>| -> Labeled {
        samples
            .iter()
            .filter(|s| set.contains(&s.scenario_id))
            .map(|s| (s.features, s.target()))
            .collect()
    };
    (pick(&tr), pick(&va), pick(&te))
}

/// Distinct scenarios in the held-out test split, with their labels.
pub fn test_scenarios(samples: &[SweepSample], split_seed: u64) -> Vec<(Scenario, u32)> {
    let ids: Vec<u64> = samples.iter().map(|s| s.scenario_id).collect();
    let (_, _, test) = split_by_scenario(&ids, split_seed);
    let mut by_id: BTreeMap<u64, (Scenario, u32)> = BTreeMap::new();
    for s in samples {
        if test.contains(&s.scenario_id) {
            by_id
                .entry(s.scenario_id)
                .or_insert_with(|| (s.scenario.clone(), s.label_gamma));
        }
    }
    by_id.into_values().collect()
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Weight-init and shuffle seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the scenario-level train/val/test split.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Training report (JSON); stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn train_on(samples: &[SweepSample], split_seed: u64, cfg: &TrainConfig) -> CliResult<(AwcModel, TrainReport)> {
    let (tr, va, te) = split_samples(samples, split_seed);
    Ok(train(&tr, &va, &te, cfg)?)
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let samples = load_dataset(&args.dataset)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        seed: args.seed.unwrap_or(DEFAULT_SEED),
        ..TrainConfig::default()
    };
    let (model, report) = train_on(&samples, args.split_seed.unwrap_or(DEFAULT_SEED), &cfg)?;
    model.save(&args.out)?;
    let mut w = output(args.report.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| CliError::runtime(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| CliError::runtime(e.to_string()))?;
    w.flush().map_err(|e| CliError::runtime(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPolicy {
    Static,
    Dynamic,
    Awc,
}

impl EvalPolicy {
    pub const ALL: [EvalPolicy; 3] = [EvalPolicy::Static, EvalPolicy::Dynamic, EvalPolicy::Awc];

    fn window(self, model_path: &Path) -> WindowConfig {
        match self {
            EvalPolicy::Static => WindowConfig::Static { gamma: 4 },
            EvalPolicy::Dynamic => WindowConfig::Dynamic {
                gamma_init: 4,
                raise_above: 0.75,
                lower_below: 0.25,
            },
            EvalPolicy::Awc => WindowConfig::Awc {
                model: model_path.to_path_buf(),
                gamma_init: 4,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: EvalPolicy,
    pub throughput_rps: f64,
    pub ttft_ms: f64,
    pub tpot_ms: f64,
    /// Mean window over all decisions; fused counts as 1.
    pub mean_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEval {
    pub scenario_id: u64,
    pub label_gamma: u32,
    pub results: Vec<PolicyResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: EvalPolicy,
    pub throughput_rps: f64,
    pub ttft_ms: f64,
    pub tpot_ms: f64,
    pub throughput_delta_pct: f64,
    pub ttft_delta_pct: f64,
    pub tpot_delta_pct: f64,
    pub mean_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenarios: usize,
    pub rows: Vec<ComparisonRow>,
    pub per_scenario: Vec<ScenarioEval>,
}

impl Comparison {
    pub fn row(&self, p: EvalPolicy) -> &ComparisonRow {
        self.rows.iter().find(|r| r.policy == p).expect("every policy has a row")
    }
}

fn mean_gamma(report: &Report) -> f64 {
    let codes: Vec<f64> = report
        .requests
        .iter()
        .flat_map(|r| r.gamma_sequence.iter().map(|&g| f64::from(g.max(1))))
        .collect();
    if codes.is_empty() {
        0.0
    } else {
        codes.iter().sum::<f64>() / codes.len() as f64
    }
}

fn evaluate_one(policy: EvalPolicy, scenario: &Scenario, model: &Arc<AwcModel>, model_path: &Path) -> Result<PolicyResult, Error> {
    let awc = (policy == EvalPolicy::Awc).then(|| model.clone());
    let out = scenario.run(policy.window(model_path), awc, SimOptions::default())?;
    let report = out.report(String::new(), scenario.seed);
    let s = &report.system;
    Ok(PolicyResult {
        policy,
        throughput_rps: s.throughput_rps.unwrap_or(0.0),
        ttft_ms: s.ttft_ms.map_or(0.0, |t| t.mean.0),
        tpot_ms: s.tpot_ms.map_or(0.0, |t| t.mean.0),
        mean_gamma: mean_gamma(&report),
    })
}

fn pct(x: f64, base: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (x - base) / base * 100.0
    }
}

/// Runs every test scenario under each policy. Aggregates are means over
/// scenarios; deltas are relative to the static policy.
pub fn evaluate(
    scenarios: &[(Scenario, u32)],
    model: Arc<AwcModel>,
    model_path: &Path,
    parallel: Option<usize>,
) -> CliResult<Comparison> {
    let jobs: Vec<(usize, EvalPolicy)> = (0..scenarios.len())
        .flat_map(|i| EvalPolicy::ALL.into_iter().map(move |p| (i, p)))
        .collect();
    let results: Result<Vec<PolicyResult>, Error> = pool(parallel)?.install(|| {
        jobs.par_iter()
            .map(|&(i, p)| evaluate_one(p, &scenarios[i].0, &model, model_path))
            .collect()
    });
    let results = results?;
    let per_scenario: Vec<ScenarioEval> = scenarios
        .iter()
        .enumerate()
        .map(|(i, (s, label))| ScenarioEval {
            scenario_id: s.id,
            label_gamma: *label,
            results: jobs
                .iter()
                .zip(&results)
                .filter(|((j, _), _)| *j == i)
                .map(|(_, r)| r.clone())
                .collect(),
        })
        .collect();
    let n = scenarios.len().max(1) as f64;
    let agg = |p: EvalPolicy| {
        let rs: Vec<&PolicyResult> = results.iter().filter(|r| r.policy == p).collect();
        let m = |f: fn(&PolicyResult) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
        (m(|r| r.throughput_rps), m(|r| r.ttft_ms), m(|r| r.tpot_ms), m(|r| r.mean_gamma))
    };
    let base = agg(EvalPolicy::Static);
    let rows = EvalPolicy::ALL
        .into_iter()
        .map(|p| {
            let (thr, ttft, tpot, g) = agg(p);
            ComparisonRow {
                policy: p,
                throughput_rps: thr,
                ttft_ms: ttft,
                tpot_ms: tpot,
                throughput_delta_pct: pct(thr, base.0),
                ttft_delta_pct: pct(ttft, base.1),
                tpot_delta_pct: pct(tpot, base.2),
                mean_gamma: g,
            }
        })
        .collect();
    Ok(Comparison {
        scenarios: scenarios.len(),
        rows,
        per_scenario,
    })
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Comparison table; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    #[arg(long)]
    pub parallel: Option<usize>,
}

pub fn write_comparison(c: &Comparison, format: Format, out: Option<&Path>) -> CliResult<()> {
    let w = output(out)?;
    let err = |e: String| CliError::runtime(e);
    match format {
        Format::Json => {
            let mut w = w;
            serde_json::to_writer_pretty(&mut w, c).map_err(|e| err(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| err(e.to_string()))?;
            w.flush().map_err(|e| err(e.to_string()))
        }
        Format::Csv => {
            let mut csv = csv::Writer::from_writer(w);
            for r in &c.rows {
                csv.serialize(r).map_err(|e| err(e.to_string()))?;
            }
            csv.flush().map_err(|e| err(e.to_string()))
        }
    }
}

pub fn cmd_eval_policy(args: &EvalArgs) -> CliResult<()> {
    let samples = load_dataset(&args.dataset)?;
    let model = Arc::new(AwcModel::load(&args.model)?);
    let scenarios = test_scenarios(&samples, args.split_seed.unwrap_or(DEFAULT_SEED));
    if scenarios.is_empty() {
        return Err(CliError::config("dataset has no held-out test scenarios"));
    }
    let c = evaluate(&scenarios, model, &args.model, args.parallel)?;
    write_comparison(&c, args.format, args.out.as_deref())
}
