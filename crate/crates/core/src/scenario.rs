//! Turning a config into a runnable simulation, and compact synthetic
//! scenarios used by sweeps and dataset generation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::awc::AwcModel;
use crate::engine::{simulate, SimInput, SimOptions, SimOutput};
use crate::error::{Error, Result};
use crate::latency::{synth_profile, LatencyProfile, SynthSpec};
use crate::metrics::Report;
use crate::policies::{PolicyConfig, WindowConfig};
use crate::topology::{
    auto_topology, default_synth_spec, default_target_entry, Config, GroupSpec, NetworkConfig,
    PoolSpec, ProfileSource, Topology, WorkloadConfig, WorkloadMode, DEFAULT_DRAFT_MODEL,
    DEFAULT_HARDWARE, DEFAULT_TARGET_MODEL,
};
use crate::workload::{
    generate_synthetic, load_trace, ArrivalMode, LengthPreset, SyntheticParams, TraceRecord,
};

/// Everything a simulation needs, resolved from a [`Config`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: Config,
    pub topology: Topology,
    pub profile: LatencyProfile,
    pub records: Vec<TraceRecord>,
    pub arrival: ArrivalMode,
    pub awc_model: Option<Arc<AwcModel>>,
}

pub fn load_profile(config: &Config, topology: &Topology) -> Result<LatencyProfile> {
    match &config.latency_profile {
        Some(ProfileSource::Path(p)) => LatencyProfile::load(p),
        Some(ProfileSource::Synthetic { synthetic }) => synth_profile(synthetic),
        None => synth_profile(&default_synth_spec(topology)),
    }
}

pub fn load_workload(
    w: &WorkloadConfig,
    n_drafts: usize,
    seed: u64,
) -> Result<(Vec<TraceRecord>, ArrivalMode)> {
    match (w.mode, &w.trace) {
        (WorkloadMode::Trace, Some(path)) => Ok((load_trace(path)?, ArrivalMode::TraceDriven)),
        (WorkloadMode::Trace, None) => Err(Error::Config(
            "workload mode `trace` needs a `trace` path".into(),
        )),
        (WorkloadMode::Poisson, Some(path)) => Ok((
            load_trace(path)?,
            ArrivalMode::Poisson {
                rate_rps: w.rate_rps,
            },
        )),
        (WorkloadMode::Poisson, None) => {
            let params = SyntheticParams {
                rate_rps: w.rate_rps,
                n_requests: w.n_requests,
                acceptance_rate: w.acceptance_rate,
                lengths: w.length_profile(),
                n_drafters: n_drafts as u32,
            };
            Ok((generate_synthetic(&params, seed)?, ArrivalMode::TraceDriven))
        }
    }
}

/// Expands the topology, loads profile, trace and (for AWC) the model.
pub fn prepare(config: &Config, seed: u64) -> Result<Prepared> {
    let topology = auto_topology(config)?;
    let profile = load_profile(config, &topology)?;
    topology.check_profile(&profile)?;
    let (records, arrival) = load_workload(&config.workload, topology.n_drafts(), seed)?;
    let awc_model = match &config.policies.window {
        WindowConfig::Awc { model, .. } => Some(Arc::new(AwcModel::load(model)?)),
        _ => None,
    };
    Ok(Prepared {
        config: config.clone(),
        topology,
        profile,
        records,
        arrival,
        awc_model,
    })
}

impl Prepared {
    pub fn simulate(&self, seed: u64, options: SimOptions) -> Result<SimOutput> {
        simulate(SimInput {
            topology: &self.topology,
            profile: &self.profile,
            records: &self.records,
            arrival: self.arrival,
            seed,
            awc_model: self.awc_model.clone(),
            options,
        })
    }
}

/// Prepares and runs a config; returns the report and raw output.
pub fn run_config(config: &Config, seed: u64, options: SimOptions) -> Result<(Report, SimOutput)> {
    let prepared = prepare(config, seed)?;
    let out = prepared.simulate(seed, options)?;
    Ok((out.report(config.digest(), seed), out))
}

/// A synthetic single-pool deployment described by a handful of knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u64,
    pub alpha: f64,
    pub rtt_ms: f64,
    /// Draft per-token cost over target per-token cost.
    pub cost_ratio: f64,
    pub rate_rps: f64,
    pub n_requests: usize,
    pub n_targets: u32,
    pub n_drafts: u32,
    pub preset: LengthPreset,
    pub seed: u64,
}

impl Scenario {
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec::target_and_draft(
            default_target_entry(DEFAULT_TARGET_MODEL, DEFAULT_HARDWARE),
            DEFAULT_DRAFT_MODEL,
            DEFAULT_HARDWARE,
            self.cost_ratio,
        )
    }

    pub fn config(&self, window: WindowConfig) -> Config {
        Config {
            seed: Some(self.seed),
            targets: PoolSpec::Groups(vec![GroupSpec::uniform(
                self.n_targets,
                DEFAULT_TARGET_MODEL,
                DEFAULT_HARDWARE,
            )]),
            drafts: PoolSpec::Groups(vec![GroupSpec::uniform(
                self.n_drafts,
                DEFAULT_DRAFT_MODEL,
                DEFAULT_HARDWARE,
            )]),
            network: NetworkConfig {
                rtt_ms: self.rtt_ms,
                ..NetworkConfig::default()
            },
            policies: PolicyConfig {
                window,
                ..PolicyConfig::default()
            },
            workload: WorkloadConfig {
                mode: WorkloadMode::Poisson,
                trace: None,
                rate_rps: self.rate_rps,
                n_requests: self.n_requests,
                acceptance_rate: self.alpha,
                preset: self.preset,
                lengths: None,
            },
            latency_profile: Some(ProfileSource::Synthetic {
                synthetic: self.synth_spec(),
            }),
        }
    }

    /// Runs the scenario under one window policy. The workload and all
    /// random streams depend only on the scenario seed.
    pub fn run(
        &self,
        window: WindowConfig,
        awc_model: Option<Arc<AwcModel>>,
        options: SimOptions,
    ) -> Result<SimOutput> {
        let config = self.config(window);
        let mut prepared = prepare_without_model(&config, self.seed)?;
        prepared.awc_model = awc_model;
        prepared.simulate(self.seed, options).map_err(|e| Error::Scenario {
            id: self.id.to_string(),
            source: Box::new(e),
        })
    }
}

fn prepare_without_model(config: &Config, seed: u64) -> Result<Prepared> {
    let topology = auto_topology(config)?;
    let profile = load_profile(config, &topology)?;
    let (records, arrival) = load_workload(&config.workload, topology.n_drafts(), seed)?;
    Ok(Prepared {
        config: config.clone(),
        topology,
        profile,
        records,
        arrival,
        awc_model: None,
    })
}
