//! Scenario configuration, read from TOML or JSON.

use crate::failover::FailoverParams;
use crate::scheduler::BackoffPolicy;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Partition sets with clients, replication and failover management.
    #[default]
    Failover,
    /// Proposers renewing a shared lease register as often as they can.
    Dueling,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Failover => "failover",
            ScenarioKind::Dueling => "dueling",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Consistency {
    /// Writes are acknowledged once every leased read region has them.
    #[default]
    Strong,
    /// Writes are acknowledged by the write region alone.
    Eventual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub id: String,
    /// 1 is most preferred.
    pub priority: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub a: String,
    pub b: String,
    pub p50_ms: f64,
    #[serde(default)]
    pub jitter: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub default_p50_ms: f64,
    /// Standard deviation as a fraction of the median.
    pub jitter: f64,
    pub drop_rate: f64,
    /// When set, every proposer-to-store link draws its median uniformly
    /// from this range once per run.
    pub random_p50_ms: Option<[f64; 2]>,
    /// Time a store takes to apply one acceptor message.
    pub store_service_ms: f64,
    pub links: Vec<LinkConfig>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            default_p50_ms: 40.0,
            jitter: 0.25,
            drop_rate: 0.0,
            random_p50_ms: None,
            store_service_ms: 2.0,
            links: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultConfig {
    RegionPowerOutage {
        target: String,
        start_s: f64,
        duration_s: f64,
    },
    /// Cuts the link between two endpoints. Endpoints are region ids,
    /// `store-N` or `client`.
    LinkPartition {
        a: String,
        b: String,
        start_s: f64,
        duration_s: f64,
    },
    /// Cuts a region off from every other endpoint while it keeps running.
    RegionIsolation {
        target: String,
        start_s: f64,
        duration_s: f64,
    },
    StoreOutage {
        store: u16,
        start_s: f64,
        duration_s: f64,
    },
}

impl FaultConfig {
    pub fn window_s(&self) -> (f64, f64) {
        match self {
            FaultConfig::RegionPowerOutage { start_s, duration_s, .. }
            | FaultConfig::LinkPartition { start_s, duration_s, .. }
            | FaultConfig::RegionIsolation { start_s, duration_s, .. }
            | FaultConfig::StoreOutage { start_s, duration_s, .. } => (*start_s, *duration_s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntentConfig {
    AddRegion { at_s: f64, region: String, priority: usize },
    RemoveRegion { at_s: f64, region: String },
    RevokeWriteStatus { at_s: f64 },
}

impl IntentConfig {
    pub fn at_s(&self) -> f64 {
        match self {
            IntentConfig::AddRegion { at_s, .. }
            | IntentConfig::RemoveRegion { at_s, .. }
            | IntentConfig::RevokeWriteStatus { at_s } => *at_s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientConfig {
    pub enabled: bool,
    pub write_interval_ms: f64,
    /// 0 disables reads.
    pub read_interval_ms: f64,
    pub request_timeout_ms: f64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            enabled: true,
            write_interval_ms: 1000.0,
            read_interval_ms: 5000.0,
            request_timeout_ms: 2000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FailoverTuning {
    pub target_wait_s: f64,
    pub graceful_timeout_s: f64,
    pub graceful_backoff_base_s: f64,
    pub graceful_backoff_cap: u32,
    pub graceful_backoff_enabled: bool,
    /// A leased follower silent this long is reported for revocation.
    pub lease_revoke_after_s: f64,
    /// Under eventual consistency, how far behind a follower may be when
    /// its lease is restored.
    pub catch_up_lsns: u64,
    pub replication_interval_ms: f64,
    /// Stable windows after which writes must be enabled.
    pub liveness_windows: u32,
    /// Delay of an extra update scheduled after a local role change.
    pub expedite_ms: f64,
    /// Rounds one update may take before it is abandoned until the next
    /// scheduled update.
    pub max_rounds_per_update: u32,
}

impl Default for FailoverTuning {
    fn default() -> Self {
        FailoverTuning {
            target_wait_s: 30.0,
            graceful_timeout_s: 60.0,
            graceful_backoff_base_s: 60.0,
            graceful_backoff_cap: 6,
            graceful_backoff_enabled: true,
            lease_revoke_after_s: 10.0,
            catch_up_lsns: 20,
            replication_interval_ms: 1000.0,
            liveness_windows: 4,
            expedite_ms: 1000.0,
            max_rounds_per_update: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerTuning {
    /// Smoothing weight of the phase-2 statistics; 1 is a plain average.
    pub alpha: f64,
    /// Base retry delay of the static policy.
    pub static_delta_ms: f64,
    /// Upper bound of the random delay the static policy adds to every
    /// scheduled proposal.
    pub static_jitter_s: f64,
    /// A round with no quorum of replies after this long is retried.
    pub round_timeout_ms: f64,
}

impl Default for SchedulerTuning {
    fn default() -> Self {
        SchedulerTuning {
            alpha: 0.1,
            static_delta_ms: 5.0,
            static_jitter_s: 14.0,
            round_timeout_ms: 2000.0,
        }
    }
}

fn default_acceptors() -> usize {
    7
}
fn default_lease_window() -> f64 {
    45.0
}
fn default_interval() -> f64 {
    30.0
}
fn default_min_durability() -> u32 {
    1
}
fn default_partition_sets() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub regions: Vec<RegionConfig>,
    /// Dueling scenarios only.
    #[serde(default)]
    pub proposers: Option<usize>,
    #[serde(default = "default_acceptors")]
    pub acceptors: usize,
    #[serde(default = "default_lease_window")]
    pub lease_window_s: f64,
    #[serde(default = "default_interval")]
    pub proposer_interval_s: f64,
    #[serde(default)]
    pub backoff_policy: BackoffPolicy,
    #[serde(default)]
    pub consistency: Consistency,
    #[serde(default = "default_min_durability")]
    pub min_durability: u32,
    #[serde(default = "default_partition_sets")]
    pub partition_sets: usize,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub faults: Vec<FaultConfig>,
    #[serde(default)]
    pub intents: Vec<IntentConfig>,
    #[serde(default)]
    pub client: ClientConfig,
    #[serde(default)]
    pub failover: FailoverTuning,
    #[serde(default)]
    pub scheduler: SchedulerTuning,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
}

pub(crate) fn secs(s: f64) -> Duration {
    Duration::from_secs_f64(s.max(0.0))
}

pub(crate) fn millis(ms: f64) -> Duration {
    Duration::from_secs_f64((ms / 1e3).max(0.0))
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let c: ScenarioConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let c: ScenarioConfig =
            serde_json::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn display_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.scenario.as_str().to_owned())
    }

    /// Region ids in configuration order; `RegionId(i)` is the i-th entry.
    pub fn region_index(&self, id: &str) -> Option<u16> {
        self.regions.iter().position(|r| r.id == id).map(|i| i as u16)
    }

    /// Region indices ordered by preference.
    pub fn priority_order(&self) -> Vec<u16> {
        let mut idx: Vec<u16> = (0..self.regions.len() as u16).collect();
        idx.sort_by_key(|&i| self.regions[i as usize].priority);
        idx
    }

    /// Regions in the initial failover manager state: every configured
    /// region except those added later by an intent.
    pub fn initial_members(&self) -> Vec<u16> {
        let added: Vec<&str> = self
            .intents
            .iter()
            .filter_map(|i| match i {
                IntentConfig::AddRegion { region, .. } => Some(region.as_str()),
                _ => None,
            })
            .collect();
        self.priority_order()
            .into_iter()
            .filter(|&i| !added.contains(&self.regions[i as usize].id.as_str()))
            .collect()
    }

    pub fn failover_params(&self) -> FailoverParams {
        FailoverParams {
            lease_window: secs(self.lease_window_s),
            target_wait: secs(self.failover.target_wait_s),
            graceful_timeout: secs(self.failover.graceful_timeout_s),
            graceful_backoff_base: secs(self.failover.graceful_backoff_base_s),
            graceful_backoff_cap_exponent: self.failover.graceful_backoff_cap,
            graceful_backoff_enabled: self.failover.graceful_backoff_enabled,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be positive".into());
        }
        if !(self.lease_window_s > 0.0 && self.proposer_interval_s > 0.0) {
            return bad("lease_window_s and proposer_interval_s must be positive".into());
        }
        if self.acceptors == 0 {
            return bad("acceptors must be at least 1".into());
        }
        if !(self.scheduler.alpha > 0.0 && self.scheduler.alpha <= 1.0) {
            return bad(format!("scheduler.alpha {} is outside (0, 1]", self.scheduler.alpha));
        }
        if !(0.0..1.0).contains(&self.network.drop_rate) {
            return bad("network.drop_rate must be in [0, 1)".into());
        }
        if self.scheduler.round_timeout_ms <= 0.0 {
            return bad("scheduler.round_timeout_ms must be positive".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.regions {
            if !seen.insert(r.id.as_str()) {
                return bad(format!("region id {:?} appears twice", r.id));
            }
        }
        match self.scenario {
            ScenarioKind::Dueling => {
                if self.proposers.unwrap_or(0) == 0 {
                    return bad("dueling scenarios need proposers >= 1".into());
                }
            }
            ScenarioKind::Failover => {
                if self.regions.is_empty() {
                    return bad("failover scenarios need at least one region".into());
                }
                if self.min_durability as usize > self.regions.len() {
                    return bad(format!(
                        "min_durability {} exceeds the {} configured regions",
                        self.min_durability,
                        self.regions.len()
                    ));
                }
                if self.partition_sets == 0 {
                    return bad("partition_sets must be at least 1".into());
                }
            }
        }
        for f in &self.faults {
            let (start, dur) = f.window_s();
            if !(start >= 0.0 && dur >= 0.0) {
                return bad("fault start_s and duration_s must be non-negative".into());
            }
            match f {
                FaultConfig::RegionPowerOutage { target, .. }
                | FaultConfig::RegionIsolation { target, .. } => {
                    if self.region_index(target).is_none() {
                        return bad(format!("fault targets unknown region {target:?}"));
                    }
                }
                FaultConfig::LinkPartition { a, b, .. } => {
                    for e in [a, b] {
                        if self.endpoint(e).is_none() {
                            return bad(format!("fault names unknown endpoint {e:?}"));
                        }
                    }
                }
                FaultConfig::StoreOutage { store, .. } => {
                    if *store as usize >= self.acceptors {
                        return bad(format!("fault targets store {store} of {}", self.acceptors));
                    }
                }
            }
        }
        for l in &self.network.links {
            for e in [&l.a, &l.b] {
                if self.endpoint(e).is_none() {
                    return bad(format!("network link names unknown endpoint {e:?}"));
                }
            }
        }
        for i in &self.intents {
            let region = match i {
                IntentConfig::RevokeWriteStatus { .. } => None,
                IntentConfig::AddRegion { region, .. } | IntentConfig::RemoveRegion { region, .. } => {
                    Some(region)
                }
            };
            if let Some(r) = region {
                if self.region_index(r).is_none() {
                    return bad(format!("intent names unknown region {r:?}"));
                }
            }
        }
        Ok(())
    }

    /// Parses an endpoint name: a region id, `store-N` or `client`.
    pub fn endpoint(&self, name: &str) -> Option<super::network::Endpoint> {
        use super::network::Endpoint;
        if name == "client" {
            return Some(Endpoint::Client);
        }
        if let Some(n) = name.strip_prefix("store-") {
            return n
                .parse::<u16>()
                .ok()
                .filter(|&s| (s as usize) < self.acceptors)
                .map(Endpoint::Store);
        }
        self.region_index(name).map(Endpoint::Region)
    }
}
