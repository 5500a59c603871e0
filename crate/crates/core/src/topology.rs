//! Deployment configuration: YAML parsing with defaults, and expansion of
//! pool declarations into explicit draft/target devices and links.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::{LatencyProfile, OpKind, SynthEntry, SynthSpec};
use crate::policies::PolicyConfig;
use crate::workload::{LengthPreset, LengthProfile};

pub const DEFAULT_TARGET_MODEL: &str = "target";
pub const DEFAULT_DRAFT_MODEL: &str = "draft";
pub const DEFAULT_HARDWARE: &str = "default";
pub const DEFAULT_SEED: u64 = 0x5EED_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Draft,
    Target,
}

/// A draft-target connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub draft: u32,
    pub target: u32,
}

impl Pair {
    pub fn new(draft: u32, target: u32) -> Self {
        Pair { draft, target }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub device_id: u32,
    pub model: String,
    pub hardware: String,
    pub role: Role,
    pub gpu_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub rtt_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
}

impl LinkSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtt_ms.is_finite() && self.rtt_ms >= 0.0) {
            return Err(Error::Config(format!("rtt_ms must be >= 0, got {}", self.rtt_ms)));
        }
        if !(self.jitter_ms.is_finite() && self.jitter_ms >= 0.0) {
            return Err(Error::Config(format!(
                "jitter_ms must be >= 0, got {}",
                self.jitter_ms
            )));
        }
        if self.jitter_ms > self.rtt_ms {
            return Err(Error::Config(format!(
                "jitter_ms ({}) exceeds rtt_ms ({})",
                self.jitter_ms, self.rtt_ms
            )));
        }
        Ok(())
    }
}

fn default_gpu_count() -> u32 {
    1
}

/// Explicit per-device entry inside a group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub model: String,
    pub hardware: String,
    #[serde(default = "default_gpu_count")]
    pub gpu_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardware: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub devices: Option<Vec<DeviceEntry>>,
}

impl GroupSpec {
    pub fn uniform(count: u32, model: &str, hardware: &str) -> Self {
        GroupSpec {
            count: Some(count),
            model: Some(model.into()),
            hardware: Some(hardware.into()),
            gpu_count: None,
            devices: None,
        }
    }
}

/// Either a bare device count or an ordered list of groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoolSpec {
    Count(u32),
    Groups(Vec<GroupSpec>),
}

impl Default for PoolSpec {
    fn default() -> Self {
        PoolSpec::Count(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkOverride {
    pub draft_group: usize,
    pub target_group: usize,
    pub rtt_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub rtt_ms: f64,
    pub jitter_ms: f64,
    pub overrides: Vec<LinkOverride>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            rtt_ms: 10.0,
            jitter_ms: 0.0,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadMode {
    /// Replay `arrival_time_ms` from the trace.
    #[default]
    Trace,
    /// Poisson arrivals: resample the trace's timestamps, or generate a
    /// synthetic trace when no trace path is given.
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub mode: WorkloadMode,
    pub trace: Option<PathBuf>,
    pub rate_rps: f64,
    pub n_requests: usize,
    pub acceptance_rate: f64,
    pub preset: LengthPreset,
    /// Overrides `preset` when present.
    pub lengths: Option<LengthProfile>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            mode: WorkloadMode::Poisson,
            trace: None,
            rate_rps: 10.0,
            n_requests: 100,
            acceptance_rate: 0.8,
            preset: LengthPreset::Gsm8kLike,
            lengths: None,
        }
    }
}

impl WorkloadConfig {
    pub fn length_profile(&self) -> LengthProfile {
        self.lengths.clone().unwrap_or_else(|| self.preset.profile())
    }
}

/// Where latency tables come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSource {
    Path(PathBuf),
    Synthetic { synthetic: SynthSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    #[serde(default)]
    pub seed: Option<u64>,
    pub targets: PoolSpec,
    #[serde(default)]
    pub drafts: PoolSpec,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub policies: PolicyConfig,
    #[serde(default)]
    pub workload: WorkloadConfig,
    /// Defaults to [`default_synth_spec`] over the topology's devices.
    #[serde(default)]
    pub latency_profile: Option<ProfileSource>,
}

impl Config {
    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    /// Rewrites relative file paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = &mut self.workload.trace {
            fix(t);
        }
        if let Some(ProfileSource::Path(p)) = &mut self.latency_profile {
            fix(p);
        }
        if let crate::policies::WindowConfig::Awc { model, .. } = &mut self.policies.window {
            fix(model);
        }
    }

    /// Stable digest of the effective configuration.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Parses YAML config text. In strict mode unknown keys are an error; in
/// lenient mode they are returned as warnings.
pub fn parse_config_str(text: &str, strict: bool) -> Result<(Config, Vec<String>)> {
    let mut unknown = Vec::new();
    let de = serde_yaml::Deserializer::from_str(text);
    let config: Config = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| Error::Parse {
            path: "config".into(),
            line: e.location().map_or(0, |l| l.line()),
            message: e.to_string(),
        })?;
    if strict {
        if let Some(first) = unknown.first() {
            return Err(Error::UnknownKey(first.clone()));
        }
    }
    config.policies.validate()?;
    config.network_link().validate()?;
    Ok((config, unknown))
}

/// Reads a config file; relative paths inside it resolve against the
/// file's directory.
pub fn parse_config(path: impl AsRef<Path>, strict: bool) -> Result<(Config, Vec<String>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let (mut config, warnings) = parse_config_str(&text, strict).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })?;
    config.resolve_paths(path.parent().unwrap_or_else(|| Path::new(".")));
    Ok((config, warnings))
}

impl Config {
    fn network_link(&self) -> LinkSpec {
        LinkSpec {
            rtt_ms: self.network.rtt_ms,
            jitter_ms: self.network.jitter_ms,
        }
    }
}

/// Expanded deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub drafts: Vec<DeviceSpec>,
    pub targets: Vec<DeviceSpec>,
    pub draft_groups: Vec<Range<u32>>,
    pub target_groups: Vec<Range<u32>>,
    pub default_link: LinkSpec,
    pub link_overrides: BTreeMap<(usize, usize), LinkSpec>,
    pub policy_config: PolicyConfig,
}

fn expand_pool(
    pool: &PoolSpec,
    role: Role,
    default_model: &str,
) -> Result<(Vec<DeviceSpec>, Vec<Range<u32>>)> {
    let groups = match pool {
        PoolSpec::Count(n) => vec![GroupSpec::uniform(*n, default_model, DEFAULT_HARDWARE)],
        PoolSpec::Groups(g) => g.clone(),
    };
    let mut devices = Vec::new();
    let mut ranges = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let start = devices.len() as u32;
        let entries: Vec<DeviceEntry> = match &g.devices {
            Some(list) => {
                if let Some(c) = g.count {
                    if c as usize != list.len() {
                        return Err(Error::InconsistentPool(format!(
                            "{role:?} group {gi}: count {c} but {} explicit devices",
                            list.len()
                        )));
                    }
                }
                if g.model.is_some() || g.hardware.is_some() {
                    return Err(Error::InconsistentPool(format!(
                        "{role:?} group {gi}: model/hardware given alongside explicit devices"
                    )));
                }
                list.clone()
            }
            None => {
                let count = g.count.ok_or_else(|| {
                    Error::InconsistentPool(format!("{role:?} group {gi}: missing count"))
                })?;
                let entry = DeviceEntry {
                    model: g.model.clone().unwrap_or_else(|| default_model.to_string()),
                    hardware: g
                        .hardware
                        .clone()
                        .unwrap_or_else(|| DEFAULT_HARDWARE.to_string()),
                    gpu_count: g.gpu_count.unwrap_or(1),
                };
                vec![entry; count as usize]
            }
        };
        for e in entries {
            if e.gpu_count == 0 {
                return Err(Error::InconsistentPool(format!(
                    "{role:?} group {gi}: gpu_count must be >= 1"
                )));
            }
            devices.push(DeviceSpec {
                device_id: devices.len() as u32,
                model: e.model,
                hardware: e.hardware,
                role,
                gpu_count: e.gpu_count,
            });
        }
        ranges.push(start..devices.len() as u32);
    }
    Ok((devices, ranges))
}

/// Expands pool declarations into dense device lists (ids in declaration
/// order) and resolves link overrides by group.
pub fn auto_topology(config: &Config) -> Result<Topology> {
    let (targets, target_groups) = expand_pool(&config.targets, Role::Target, DEFAULT_TARGET_MODEL)?;
    let (drafts, draft_groups) = expand_pool(&config.drafts, Role::Draft, DEFAULT_DRAFT_MODEL)?;
    if targets.is_empty() {
        return Err(Error::InconsistentPool("at least one target is required".into()));
    }
    let default_link = config.network_link();
    default_link.validate()?;
    let mut link_overrides = BTreeMap::new();
    for o in &config.network.overrides {
        if o.draft_group >= draft_groups.len() || o.target_group >= target_groups.len() {
            return Err(Error::Config(format!(
                "link override references group ({}, {}) which does not exist",
                o.draft_group, o.target_group
            )));
        }
        let link = LinkSpec {
            rtt_ms: o.rtt_ms,
            jitter_ms: o.jitter_ms,
        };
        link.validate()?;
        link_overrides.insert((o.draft_group, o.target_group), link);
    }
    Ok(Topology {
        drafts,
        targets,
        draft_groups,
        target_groups,
        default_link,
        link_overrides,
        policy_config: config.policies.clone(),
    })
}

fn group_of(groups: &[Range<u32>], id: u32) -> Option<usize> {
    groups.iter().position(|r| r.contains(&id))
}

fn collapse(devices: &[DeviceSpec], groups: &[Range<u32>]) -> PoolSpec {
    PoolSpec::Groups(
        groups
            .iter()
            .map(|r| {
                let members = &devices[r.start as usize..r.end as usize];
                let uniform = members.windows(2).all(|w| {
                    w[0].model == w[1].model
                        && w[0].hardware == w[1].hardware
                        && w[0].gpu_count == w[1].gpu_count
                });
                match members.first() {
                    Some(first) if uniform => GroupSpec {
                        count: Some(members.len() as u32),
                        model: Some(first.model.clone()),
                        hardware: Some(first.hardware.clone()),
                        gpu_count: Some(first.gpu_count),
                        devices: None,
                    },
                    None => GroupSpec {
                        count: Some(0),
                        ..GroupSpec::default()
                    },
                    Some(_) => GroupSpec {
                        devices: Some(
                            members
                                .iter()
                                .map(|d| DeviceEntry {
                                    model: d.model.clone(),
                                    hardware: d.hardware.clone(),
                                    gpu_count: d.gpu_count,
                                })
                                .collect(),
                        ),
                        ..GroupSpec::default()
                    },
                }
            })
            .collect(),
    )
}

impl Topology {
    pub fn n_drafts(&self) -> usize {
        self.drafts.len()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn link(&self, pair: Pair) -> LinkSpec {
        let dg = group_of(&self.draft_groups, pair.draft);
        let tg = group_of(&self.target_groups, pair.target);
        match (dg, tg) {
            (Some(d), Some(t)) => self
                .link_overrides
                .get(&(d, t))
                .copied()
                .unwrap_or(self.default_link),
            _ => self.default_link,
        }
    }

    /// Serialises the expanded topology back to a config; expanding that
    /// config reproduces this topology.
    pub fn to_config(&self) -> Config {
        Config {
            seed: None,
            targets: collapse(&self.targets, &self.target_groups),
            drafts: collapse(&self.drafts, &self.draft_groups),
            network: NetworkConfig {
                rtt_ms: self.default_link.rtt_ms,
                jitter_ms: self.default_link.jitter_ms,
                overrides: self
                    .link_overrides
                    .iter()
                    .map(|(&(d, t), l)| LinkOverride {
                        draft_group: d,
                        target_group: t,
                        rtt_ms: l.rtt_ms,
                        jitter_ms: l.jitter_ms,
                    })
                    .collect(),
            },
            policies: self.policy_config.clone(),
            workload: WorkloadConfig::default(),
            latency_profile: None,
        }
    }

    /// Every device's `(model, hardware)` must have prefill and decode
    /// tables.
    pub fn check_profile(&self, profile: &LatencyProfile) -> Result<()> {
        for d in self.drafts.iter().chain(&self.targets) {
            for op in [OpKind::Prefill, OpKind::Decode] {
                if !profile.contains(&d.model, &d.hardware, op) {
                    return Err(Error::UnknownProfileKey {
                        model: d.model.clone(),
                        hardware: d.hardware.clone(),
                        op,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Reference target curve used when a config names no profile.
pub fn default_target_entry(model: &str, hardware: &str) -> SynthEntry {
    SynthEntry {
        model: model.into(),
        hardware: hardware.into(),
        decode_ms: 25.0,
        batch_slope_ms: 0.25,
        context_coeff_ms: 0.01,
        context_exponent: 0.5,
        prefill_base_ms: 5.0,
        prefill_ms_per_token: 0.02,
        calibration_factor: 1.0,
    }
}

/// Draft/target per-token cost ratio of the default profile.
pub const DEFAULT_COST_RATIO: f64 = 0.1;

/// Synthetic profile covering every distinct device type: targets get the
/// reference curve, drafts a copy scaled by [`DEFAULT_COST_RATIO`].
pub fn default_synth_spec(topology: &Topology) -> SynthSpec {
    let reference = default_target_entry(DEFAULT_TARGET_MODEL, DEFAULT_HARDWARE);
    let mut seen = std::collections::BTreeSet::new();
    let mut entries = Vec::new();
    for d in topology.targets.iter().chain(&topology.drafts) {
        if !seen.insert((d.model.clone(), d.hardware.clone())) {
            continue;
        }
        let ratio = match d.role {
            Role::Target => 1.0,
            Role::Draft => DEFAULT_COST_RATIO,
        };
        entries.push(reference.scaled(&d.model, &d.hardware, ratio));
    }
    SynthSpec::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_fused_config() {
        let (c, w) = parse_config_str(
            "targets: 1\npolicies:\n  window: {kind: fused}\n",
            true,
        )
        .unwrap();
        assert!(w.is_empty());
        let t = auto_topology(&c).unwrap();
        assert_eq!((t.n_targets(), t.n_drafts()), (1, 0));
    }

    #[test]
    fn jitter_defaults_to_zero() {
        let (c, _) = parse_config_str("targets: 1\nnetwork: {rtt_ms: 10}\n", true).unwrap();
        assert_eq!(c.network.jitter_ms, 0.0);
        assert_eq!(c.network.rtt_ms, 10.0);
        let t = auto_topology(&c).unwrap();
        assert_eq!(t.link(Pair::new(0, 0)).rtt_ms, 10.0);
    }

    #[test]
    fn documented_defaults() {
        let (c, _) = parse_config_str("targets: 2\n", true).unwrap();
        assert_eq!(c.policies.routing, crate::policies::RoutingKind::Random);
        assert_eq!(c.policies.batching.kind, crate::policies::BatchingKind::Fifo);
        assert_eq!(
            c.policies.window,
            crate::policies::WindowConfig::Static { gamma: 4 }
        );
    }

    #[test]
    fn unknown_keys_strict_and_lenient() {
        let text = "targets: 1\nnetwork: {rtt_ms: 10, jiter_ms: 2}\n";
        assert!(matches!(
            parse_config_str(text, true),
            Err(Error::UnknownKey(k)) if k.contains("jiter_ms")
        ));
        let (_, warnings) = parse_config_str(text, false).unwrap();
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn table_two_counts() {
        let (c, _) = parse_config_str("targets: 20\ndrafts: 600\n", true).unwrap();
        let t = auto_topology(&c).unwrap();
        assert_eq!((t.n_targets(), t.n_drafts()), (20, 600));
        assert!(t.drafts.iter().enumerate().all(|(i, d)| d.device_id == i as u32));
    }

    #[test]
    fn mixed_edge_pool() {
        let text = "\
targets: 1
drafts:
  - {count: 300, model: qwen-7b, hardware: a40}
  - {count: 300, model: llama2-7b, hardware: v100}
";
        let (c, _) = parse_config_str(text, true).unwrap();
        let t = auto_topology(&c).unwrap();
        assert_eq!(t.n_drafts(), 600);
        assert!(t.drafts[..300].iter().all(|d| d.hardware == "a40"));
        assert!(t.drafts[300..].iter().all(|d| d.hardware == "v100"));
        assert_eq!(t.draft_groups, vec![0..300, 300..600]);
    }

    #[test]
    fn inconsistent_pool() {
        let text = "\
targets:
  - count: 3
    devices:
      - {model: a, hardware: h}
";
        let (c, _) = parse_config_str(text, true).unwrap();
        assert!(matches!(auto_topology(&c), Err(Error::InconsistentPool(_))));
    }

    #[test]
    fn no_targets_is_rejected() {
        let (c, _) = parse_config_str("targets: 0\ndrafts: 3\n", true).unwrap();
        assert!(auto_topology(&c).is_err());
    }

    #[test]
    fn jitter_above_rtt_rejected() {
        assert!(parse_config_str("targets: 1\nnetwork: {rtt_ms: 1, jitter_ms: 2}\n", true).is_err());
    }

    #[test]
    fn group_link_overrides() {
        let text = "\
targets: [{count: 2, model: t, hardware: a100}, {count: 1, model: t, hardware: h100}]
drafts: [{count: 4}, {count: 4, hardware: v100}]
network:
  rtt_ms: 10
  overrides:
    - {draft_group: 1, target_group: 1, rtt_ms: 30, jitter_ms: 4}
";
        let (c, _) = parse_config_str(text, true).unwrap();
        let t = auto_topology(&c).unwrap();
        assert_eq!(t.link(Pair::new(5, 2)).rtt_ms, 30.0);
        assert_eq!(t.link(Pair::new(5, 1)).rtt_ms, 10.0);
        assert_eq!(t.link(Pair::new(0, 2)).rtt_ms, 10.0);
    }

    #[test]
    fn expansion_is_idempotent() {
        let text = "\
targets: [{count: 2, model: t, hardware: a100}, {devices: [{model: t, hardware: h100}, {model: u, hardware: h100, gpu_count: 4}]}]
drafts: [{count: 3, model: q, hardware: a40}, {count: 2, model: l, hardware: v100}]
network:
  rtt_ms: 12
  jitter_ms: 2
  overrides: [{draft_group: 0, target_group: 1, rtt_ms: 40}]
";
        let (c, _) = parse_config_str(text, true).unwrap();
        let t1 = auto_topology(&c).unwrap();
        let yaml = serde_yaml::to_string(&t1.to_config()).unwrap();
        let (c2, _) = parse_config_str(&yaml, true).unwrap();
        let t2 = auto_topology(&c2).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn default_profile_covers_topology() {
        let (c, _) = parse_config_str(
            "targets: [{count: 1, model: big, hardware: h100}]\ndrafts: [{count: 2, model: small, hardware: a40}]\n",
            true,
        )
        .unwrap();
        let t = auto_topology(&c).unwrap();
        let p = crate::latency::synth_profile(&default_synth_spec(&t)).unwrap();
        t.check_profile(&p).unwrap();
    }
}
