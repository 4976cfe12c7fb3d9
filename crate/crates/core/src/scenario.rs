//! Declarative scenario files.
//!
//! A scenario is a TOML document describing clusters, links, detector
//! parameters, a fault schedule and scripted queries. [`validate`] parses it
//! and cross-checks every reference, reporting all problems at once;
//! the result is a resolved [`Scenario`] the simulator can run.
//!
//! ```toml
//! horizon = 200.0
//! seed = 7
//!
//! [detector]
//! heartbeat_period = 1.0
//! threshold = 1.0
//!
//! [link]
//! delay = 0.05
//! jitter = 0.02
//!
//! [[clusters]]
//! name = "A"
//! processes = 2
//! detectors = 3
//!
//! [[faults]]
//! kind = "crash"
//! process = "A/p0"
//! at = 100.0
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterMembers, ClusterTopology};
use crate::model::{
    ClusterId, ContributionCap, DetectorId, DetectorParams, FailurePattern, NodeId, PredictorKind, ProcessId, SimTime,
};
use crate::simnet::LinkModel;

/// All problems found in a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics(pub Vec<String>);

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "error: {d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Diagnostics {}

fn default_delta() -> f64 {
    0.001
}
fn default_cadence() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_borders() -> Vec<u32> {
    vec![0]
}
fn is_false(b: &bool) -> bool {
    !*b
}
fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// Scenario file contents, as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    /// Minimum spacing between two steps of one process.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Interval between suspicion samples.
    #[serde(default = "default_cadence")]
    pub cadence: f64,
    #[serde(default = "default_true")]
    pub gossip: bool,
    /// Threshold for the binary view used by metrics; defaults to each
    /// cluster's gossip threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_threshold: Option<f64>,
    /// Half-width of uniform jitter on heartbeat send times.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub heartbeat_jitter: f64,
    #[serde(default)]
    pub detector: ParamsOverride,
    #[serde(default)]
    pub link: LinkConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkOverrideConfig>,
    pub clusters: Vec<ClusterConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<FaultConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub queries: Vec<QueryConfig>,
}

/// Partial detector parameters; unset fields fall back to the enclosing
/// level, then to defaults derived from the heartbeat period.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heartbeat_period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor: Option<PredictorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ema_alpha: Option<f64>,
    #[serde(default, alias = "threshold_tv", skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, alias = "gossip_fanout", skip_serializing_if = "Option::is_none")]
    pub fanout: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gossip_period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze_timeout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_value_ttl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_interval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub membership_timeout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_deadline: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contribution_cap: Option<ContributionCap>,
}

impl ParamsOverride {
    fn or(&self, fallback: &ParamsOverride) -> ParamsOverride {
        macro_rules! pick {
            ($($f:ident),*) => { ParamsOverride { $($f: self.$f.or(fallback.$f)),* } };
        }
        pick!(
            heartbeat_period,
            window_size,
            predictor,
            ema_alpha,
            threshold,
            fanout,
            gossip_period,
            freeze_timeout,
            remote_value_ttl,
            probe_interval,
            membership_timeout,
            query_deadline,
            contribution_cap
        )
    }

    fn resolve(&self) -> Result<DetectorParams, String> {
        let hb = self.heartbeat_period.unwrap_or(1.0);
        let time =
            |name: &str, v: f64| SimTime::new(v).map_err(|_| format!("{name} must be a non-negative number (got {v})"));
        let defaults = DetectorParams::with_period(hb.max(0.0));
        let gossip_period = self.gossip_period.unwrap_or(defaults.gossip_period.as_f64());
        Ok(DetectorParams {
            heartbeat_period: time("heartbeat_period", hb)?,
            window_size: self.window_size.unwrap_or(defaults.window_size),
            predictor: self.predictor.unwrap_or(defaults.predictor),
            ema_alpha: self.ema_alpha.unwrap_or(defaults.ema_alpha),
            threshold: self.threshold.unwrap_or(defaults.threshold),
            gossip_fanout: self.fanout.unwrap_or(defaults.gossip_fanout),
            gossip_period: time("gossip_period", gossip_period)?,
            freeze_timeout: time("freeze_timeout", self.freeze_timeout.unwrap_or(defaults.freeze_timeout.as_f64()))?,
            remote_value_ttl: time(
                "remote_value_ttl",
                self.remote_value_ttl.unwrap_or(defaults.remote_value_ttl.as_f64()),
            )?,
            probe_interval: time("probe_interval", self.probe_interval.unwrap_or(defaults.probe_interval.as_f64()))?,
            membership_timeout: time("membership_timeout", self.membership_timeout.unwrap_or(3.0 * gossip_period))?,
            query_deadline: time("query_deadline", self.query_deadline.unwrap_or(defaults.query_deadline.as_f64()))?,
            contribution_cap: self.contribution_cap.unwrap_or(defaults.contribution_cap),
        })
    }
}

fn default_delay() -> f64 {
    0.05
}
fn default_jitter() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    #[serde(default = "default_delay")]
    pub delay: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default, alias = "loss_probability")]
    pub loss: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig { delay: default_delay(), jitter: default_jitter(), loss: 0.0 }
    }
}

/// Link parameters for the directed pairs matched by two node selectors.
///
/// Selectors: `*`, `*/p*`, `*/d*`, `<cluster>`, `<cluster>/p*`,
/// `<cluster>/d*` or an exact node such as `A/p3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverrideConfig {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<f64>,
    #[serde(default, alias = "loss_probability", skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub both_ways: bool,
}

/// Which processes each detector of a cluster monitors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Monitoring {
    /// Every detector monitors every process.
    #[default]
    All,
    /// Detector `i` monitors `k` consecutive processes starting at
    /// `i * processes / detectors`, wrapping around.
    Ring(u32),
    /// Detector index (as a string key) to process indices.
    Explicit(BTreeMap<String, Vec<u32>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub name: String,
    pub processes: u32,
    pub detectors: u32,
    #[serde(default = "default_borders")]
    pub borders: Vec<u32>,
    #[serde(default)]
    pub monitoring: Monitoring,
    #[serde(default)]
    pub detector: ParamsOverride,
}

fn default_both_ways() -> bool {
    true
}

/// One entry of the fault schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultConfig {
    Crash {
        process: String,
        at: f64,
    },
    Transient {
        process: String,
        start: f64,
        end: f64,
    },
    LinkDown {
        from: String,
        to: String,
        at: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        until: Option<f64>,
        #[serde(default = "default_both_ways")]
        both_ways: bool,
    },
    Partition {
        side_a: Vec<String>,
        side_b: Vec<String>,
        start: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        end: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryConfig {
    pub at: f64,
    pub origin: String,
    pub subject: String,
}

/// Node selector used by link overrides and network faults.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    Any { processes: bool, detectors: bool },
    Cluster { cluster: ClusterId, processes: bool, detectors: bool },
    Exact(NodeId),
}

impl Selector {
    pub fn parse(raw: &str) -> Result<Selector, String> {
        let kinds = |suffix: &str| match suffix {
            "" => Some((true, true)),
            "/p*" => Some((true, false)),
            "/d*" => Some((false, true)),
            _ => None,
        };
        if let Some(rest) = raw.strip_prefix('*') {
            let (processes, detectors) = kinds(rest).ok_or_else(|| format!("bad selector `{raw}`"))?;
            return Ok(Selector::Any { processes, detectors });
        }
        for suffix in ["/p*", "/d*"] {
            if let Some(cluster) = raw.strip_suffix(suffix) {
                let (processes, detectors) = kinds(suffix).expect("known suffix");
                return Ok(Selector::Cluster { cluster: ClusterId::new(cluster), processes, detectors });
            }
        }
        if raw.contains('/') {
            return raw.parse::<NodeId>().map(Selector::Exact).map_err(|e| e.to_string());
        }
        if raw.is_empty() {
            return Err("empty selector".to_string());
        }
        Ok(Selector::Cluster { cluster: ClusterId::new(raw), processes: true, detectors: true })
    }

    pub fn matches(&self, n: &NodeId) -> bool {
        let kind_ok = |p: bool, d: bool| match n {
            NodeId::Process(_) => p,
            NodeId::Detector(_) => d,
        };
        match self {
            Selector::Any { processes, detectors } => kind_ok(*processes, *detectors),
            Selector::Cluster { cluster, processes, detectors } => {
                n.cluster() == cluster && kind_ok(*processes, *detectors)
            }
            Selector::Exact(e) => e == n,
        }
    }

    fn check(&self, topo: &ClusterTopology) -> Result<(), String> {
        match self {
            Selector::Any { .. } => Ok(()),
            Selector::Cluster { cluster, .. } if topo.cluster(cluster).is_none() => {
                Err(format!("unknown cluster `{cluster}`"))
            }
            Selector::Cluster { .. } => Ok(()),
            Selector::Exact(n) if !topo.contains_node(n) => Err(format!("unknown node `{n}`")),
            Selector::Exact(_) => Ok(()),
        }
    }
}

/// Resolved link override.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkOverride {
    pub from: Selector,
    pub to: Selector,
    pub delay: Option<f64>,
    pub jitter: Option<f64>,
    pub loss: Option<f64>,
    pub both_ways: bool,
}

impl LinkOverride {
    fn applies(&self, from: &NodeId, to: &NodeId) -> bool {
        (self.from.matches(from) && self.to.matches(to))
            || (self.both_ways && self.from.matches(to) && self.to.matches(from))
    }
}

/// Link parameters of the whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub default: LinkModel,
    pub overrides: Vec<LinkOverride>,
}

impl NetworkSpec {
    /// Parameters of the directed link `from -> to`; later overrides win.
    pub fn link(&self, from: &NodeId, to: &NodeId) -> LinkModel {
        let mut model = self.default;
        for o in self.overrides.iter().filter(|o| o.applies(from, to)) {
            if let Some(d) = o.delay {
                model.base_delay = d;
            }
            if let Some(j) = o.jitter {
                model.jitter = j;
            }
            if let Some(l) = o.loss {
                model.loss_probability = l;
            }
        }
        model
    }
}

/// Network-level faults, resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkFault {
    LinkDown { from: NodeId, to: NodeId, at: SimTime, until: Option<SimTime>, both_ways: bool },
    Partition { side_a: Vec<Selector>, side_b: Vec<Selector>, start: SimTime, end: Option<SimTime> },
}

/// A scripted suspicion query.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledQuery {
    pub at: SimTime,
    pub origin: DetectorId,
    pub subject: ProcessId,
}

/// A validated scenario ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub horizon: SimTime,
    pub seed: u64,
    pub delta: SimTime,
    pub cadence: SimTime,
    pub gossip: bool,
    pub heartbeat_jitter: f64,
    pub topology: ClusterTopology,
    pub params: BTreeMap<ClusterId, DetectorParams>,
    pub network: NetworkSpec,
    pub pattern: FailurePattern,
    pub network_faults: Vec<NetworkFault>,
    pub queries: Vec<ScheduledQuery>,
}

impl Scenario {
    pub fn name(&self) -> &str {
        self.config.name.as_deref().unwrap_or("scenario")
    }

    pub fn params_for(&self, cluster: &ClusterId) -> &DetectorParams {
        &self.params[cluster]
    }

    /// Threshold of the binary view used when computing metrics.
    pub fn metrics_threshold(&self, cluster: &ClusterId) -> f64 {
        self.config.metrics_threshold.unwrap_or(self.params[cluster].threshold)
    }

    /// Same scenario with a different seed.
    pub fn with_seed(&self, seed: u64) -> Scenario {
        let mut s = self.clone();
        s.seed = seed;
        s.config.seed = seed;
        s
    }

    pub fn with_gossip(&self, gossip: bool) -> Scenario {
        let mut s = self.clone();
        s.gossip = gossip;
        s.config.gossip = gossip;
        s
    }

    pub fn with_cadence(&self, cadence: f64) -> Result<Scenario, Diagnostics> {
        let mut cfg = self.config.clone();
        cfg.cadence = cadence;
        resolve(cfg)
    }
}

/// Parses and validates scenario text.
pub fn validate(text: &str) -> Result<Scenario, Diagnostics> {
    let config: ScenarioConfig =
        toml::from_str(text).map_err(|e| Diagnostics(vec![format!("syntax: {}", e.message().trim())]))?;
    resolve(config)
}

/// Renders a config back to scenario text.
pub fn serialize(config: &ScenarioConfig) -> String {
    toml::to_string(config).expect("scenario config is always representable")
}

fn time_or(errors: &mut Vec<String>, what: &str, v: f64) -> SimTime {
    SimTime::new(v).unwrap_or_else(|_| {
        errors.push(format!("{what} must be a finite, non-negative time (got {v})"));
        SimTime::ZERO
    })
}

/// Cross-checks a parsed config and resolves it into a [`Scenario`].
pub fn resolve(config: ScenarioConfig) -> Result<Scenario, Diagnostics> {
    let mut errors = Vec::new();
    let horizon = time_or(&mut errors, "horizon", config.horizon);
    if config.horizon <= 0.0 {
        errors.push(format!("horizon must be > 0 (got {})", config.horizon));
    }
    let delta = time_or(&mut errors, "delta", config.delta);
    if config.delta <= 0.0 {
        errors.push(format!("delta must be > 0 (got {})", config.delta));
    }
    let cadence = time_or(&mut errors, "cadence", config.cadence);
    if config.cadence <= 0.0 {
        errors.push(format!("cadence must be > 0 (got {})", config.cadence));
    }
    if config.heartbeat_jitter.is_nan() || config.heartbeat_jitter < 0.0 {
        errors.push(format!("heartbeat_jitter must be >= 0 (got {})", config.heartbeat_jitter));
    }
    if let Some(m) = config.metrics_threshold {
        if m.is_nan() || m <= 0.0 {
            errors.push(format!("metrics_threshold must be > 0 (got {m})"));
        }
    }

    // clusters and detector parameters
    let mut clusters = BTreeMap::new();
    let mut params = BTreeMap::new();
    if config.clusters.is_empty() {
        errors.push("at least one cluster is required".to_string());
    }
    for c in &config.clusters {
        if c.name.is_empty() || c.name.contains('/') || c.name.contains('*') {
            errors.push(format!("cluster name `{}` must be non-empty and contain no `/` or `*`", c.name));
            continue;
        }
        let id = ClusterId::new(&c.name);
        if clusters.contains_key(&id) {
            errors.push(format!("duplicate cluster `{}`", c.name));
            continue;
        }
        if c.processes == 0 || c.detectors == 0 {
            errors.push(format!(
                "cluster `{}` is empty: needs at least one process and one detector (got {} and {})",
                c.name, c.processes, c.detectors
            ));
        }
        match c.detector.or(&config.detector).resolve() {
            Ok(p) => {
                for problem in p.problems() {
                    errors.push(format!("cluster `{}`: {problem}", c.name));
                }
                if p.heartbeat_period < delta {
                    errors.push(format!("cluster `{}`: heartbeat_period must be >= delta", c.name));
                }
                params.insert(id.clone(), p);
            }
            Err(e) => errors.push(format!("cluster `{}`: {e}", c.name)),
        }
        let detectors: BTreeSet<DetectorId> = (0..c.detectors).map(|i| DetectorId::new(&id, i)).collect();
        let processes: BTreeSet<ProcessId> = (0..c.processes).map(|i| ProcessId::new(&id, i)).collect();
        let mut borders = Vec::new();
        if c.borders.is_empty() {
            errors.push(format!("cluster `{}` needs at least one border detector", c.name));
        }
        for &b in &c.borders {
            if b >= c.detectors {
                errors.push(format!("cluster `{}`: border d{b} does not exist", c.name));
            } else {
                borders.push(DetectorId::new(&id, b));
            }
        }
        let monitoring = match monitoring_sets(&id, c, &mut errors) {
            Some(m) => m,
            None => continue,
        };
        clusters.insert(id, ClusterMembers { detectors, processes, borders, monitoring });
    }
    let topology = match ClusterTopology::new(clusters) {
        Ok(t) => t,
        Err(e) => {
            if errors.is_empty() {
                errors.push(e.to_string());
            }
            ClusterTopology::default()
        }
    };

    // links
    let link_model = |what: &str, delay: f64, jitter: f64, loss: f64, errors: &mut Vec<String>| {
        if !(delay > 0.0 && delay.is_finite()) {
            errors.push(format!("{what}: delay must be > 0 (got {delay})"));
        }
        if !(jitter >= 0.0 && jitter < delay) {
            errors.push(format!("{what}: jitter must satisfy 0 <= jitter < delay (got {jitter})"));
        }
        if !(0.0..=1.0).contains(&loss) {
            errors.push(format!("{what}: loss_probability must lie in [0, 1] (got {loss})"));
        }
        LinkModel { base_delay: delay, jitter, loss_probability: loss }
    };
    let default_link = link_model("link", config.link.delay, config.link.jitter, config.link.loss, &mut errors);
    let mut overrides = Vec::new();
    for (i, o) in config.links.iter().enumerate() {
        let what = format!("links[{i}]");
        let from = parse_selector(&what, &o.from, &topology, &mut errors);
        let to = parse_selector(&what, &o.to, &topology, &mut errors);
        if o.delay.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
            errors.push(format!("{what}: delay must be > 0 (got {})", o.delay.unwrap_or_default()));
        }
        if o.jitter.is_some_and(|j| j.is_nan() || j < 0.0) {
            errors.push(format!("{what}: jitter must be >= 0 (got {})", o.jitter.unwrap_or_default()));
        }
        if o.loss.is_some_and(|l| !(0.0..=1.0).contains(&l)) {
            errors.push(format!("{what}: loss_probability must lie in [0, 1] (got {})", o.loss.unwrap_or_default()));
        }
        if let (Some(from), Some(to)) = (from, to) {
            overrides.push(LinkOverride {
                from,
                to,
                delay: o.delay,
                jitter: o.jitter,
                loss: o.loss,
                both_ways: o.both_ways,
            });
        }
    }
    let network = NetworkSpec { default: default_link, overrides };
    // effective per-link jitter must stay below delay once overrides combine
    for from in topology
        .processes()
        .map(|p| NodeId::from(p.clone()))
        .chain(topology.detectors().map(|d| NodeId::from(d.clone())))
    {
        if errors.len() > 50 {
            break;
        }
        for o in &network.overrides {
            if !o.from.matches(&from) {
                continue;
            }
            let sample_to = topology
                .processes()
                .map(|p| NodeId::from(p.clone()))
                .chain(topology.detectors().map(|d| NodeId::from(d.clone())))
                .find(|n| o.to.matches(n));
            if let Some(to) = sample_to {
                let m = network.link(&from, &to);
                if m.jitter >= m.base_delay {
                    errors.push(format!("link {from} -> {to}: jitter {} must be < delay {}", m.jitter, m.base_delay));
                }
            }
        }
    }

    // faults
    let mut crash_times: BTreeMap<ProcessId, SimTime> = BTreeMap::new();
    let mut transients: BTreeMap<ProcessId, Vec<(SimTime, SimTime)>> = BTreeMap::new();
    let mut network_faults = Vec::new();
    let in_horizon = |what: &str, v: f64, errors: &mut Vec<String>| {
        if !(v >= 0.0 && v <= config.horizon) {
            errors.push(format!("{what}: time {v} is outside [0, horizon]"));
        }
        SimTime::new(v.max(0.0)).unwrap_or(SimTime::ZERO)
    };
    for (i, f) in config.faults.iter().enumerate() {
        let what = format!("faults[{i}]");
        match f {
            FaultConfig::Crash { process, at } => {
                let at = in_horizon(&what, *at, &mut errors);
                if let Some(p) = parse_process(&what, process, &topology, &mut errors) {
                    if crash_times.insert(p.clone(), at).is_some() {
                        errors.push(format!("{what}: {p} crashes more than once"));
                    }
                }
            }
            FaultConfig::Transient { process, start, end } => {
                let s = in_horizon(&what, *start, &mut errors);
                let e = in_horizon(&what, *end, &mut errors);
                if e <= s {
                    errors.push(format!("{what}: transient interval [{start}, {end}] is empty"));
                }
                if let Some(p) = parse_process(&what, process, &topology, &mut errors) {
                    transients.entry(p).or_default().push((s, e));
                }
            }
            FaultConfig::LinkDown { from, to, at, until, both_ways } => {
                let at = in_horizon(&what, *at, &mut errors);
                let until = until.map(|u| in_horizon(&what, u, &mut errors));
                if until.is_some_and(|u| u <= at) {
                    errors.push(format!("{what}: link comes back up before it goes down"));
                }
                let from = parse_node(&what, from, &topology, &mut errors);
                let to = parse_node(&what, to, &topology, &mut errors);
                if let (Some(from), Some(to)) = (from, to) {
                    network_faults.push(NetworkFault::LinkDown { from, to, at, until, both_ways: *both_ways });
                }
            }
            FaultConfig::Partition { side_a, side_b, start, end } => {
                let start = in_horizon(&what, *start, &mut errors);
                let end = end.map(|e| in_horizon(&what, e, &mut errors));
                if end.is_some_and(|e| e <= start) {
                    errors.push(format!("{what}: partition ends before it starts"));
                }
                if side_a.is_empty() || side_b.is_empty() {
                    errors.push(format!("{what}: both partition sides need at least one selector"));
                }
                let a: Vec<Selector> =
                    side_a.iter().filter_map(|s| parse_selector(&what, s, &topology, &mut errors)).collect();
                let b: Vec<Selector> =
                    side_b.iter().filter_map(|s| parse_selector(&what, s, &topology, &mut errors)).collect();
                network_faults.push(NetworkFault::Partition { side_a: a, side_b: b, start, end });
            }
        }
    }
    for (p, intervals) in transients.iter_mut() {
        intervals.sort();
        if intervals.windows(2).any(|w| w[1].0 < w[0].1) {
            errors.push(format!("transient intervals for {p} overlap"));
        }
        if let Some(&crash) = crash_times.get(p) {
            if intervals.iter().any(|&(_, end)| end > crash) {
                errors.push(format!("{p} has a transient interval extending past its crash at {crash}"));
            }
        }
    }
    let pattern = if errors.is_empty() {
        FailurePattern::new(topology.processes().cloned(), crash_times, transients).unwrap_or_else(|e| {
            errors.push(e.to_string());
            FailurePattern::default()
        })
    } else {
        FailurePattern::default()
    };

    // queries
    let mut queries = Vec::new();
    for (i, q) in config.queries.iter().enumerate() {
        let what = format!("queries[{i}]");
        let at = in_horizon(&what, q.at, &mut errors);
        let origin = match q.origin.parse::<DetectorId>() {
            Ok(d) if topology.contains_node(&d.clone().into()) => Some(d),
            Ok(d) => {
                errors.push(format!("{what}: unknown detector `{d}`"));
                None
            }
            Err(_) => {
                errors.push(format!("{what}: `{}` is not a detector id", q.origin));
                None
            }
        };
        let subject = parse_process(&what, &q.subject, &topology, &mut errors);
        if let (Some(origin), Some(subject)) = (origin, subject) {
            if let Some(p) = params.get(&origin.cluster) {
                if at.as_f64() + p.query_deadline.as_f64() > config.horizon {
                    errors.push(format!("{what}: query deadline falls after the horizon"));
                }
            }
            queries.push(ScheduledQuery { at, origin, subject });
        }
    }

    if !errors.is_empty() {
        return Err(Diagnostics(errors));
    }
    Ok(Scenario {
        horizon,
        seed: config.seed,
        delta,
        cadence,
        gossip: config.gossip,
        heartbeat_jitter: config.heartbeat_jitter,
        topology,
        params,
        network,
        pattern,
        network_faults,
        queries,
        config,
    })
}

fn monitoring_sets(
    id: &ClusterId,
    c: &ClusterConfig,
    errors: &mut Vec<String>,
) -> Option<BTreeMap<DetectorId, BTreeSet<ProcessId>>> {
    let all: BTreeSet<ProcessId> = (0..c.processes).map(|i| ProcessId::new(id, i)).collect();
    let mut out = BTreeMap::new();
    match &c.monitoring {
        Monitoring::All => {
            for d in 0..c.detectors {
                out.insert(DetectorId::new(id, d), all.clone());
            }
        }
        Monitoring::Ring(width) => {
            if *width == 0 || *width > c.processes {
                errors.push(format!("cluster `{}`: ring width must lie in [1, processes] (got {width})", c.name));
                return None;
            }
            for d in 0..c.detectors {
                let start = (d as u64 * c.processes as u64 / c.detectors.max(1) as u64) as u32;
                let set = (0..*width).map(|k| ProcessId::new(id, (start + k) % c.processes)).collect();
                out.insert(DetectorId::new(id, d), set);
            }
        }
        Monitoring::Explicit(map) => {
            for d in 0..c.detectors {
                out.insert(DetectorId::new(id, d), BTreeSet::new());
            }
            for (key, procs) in map {
                let idx = key.trim_start_matches('d').parse::<u32>().ok().filter(|&i| i < c.detectors);
                let Some(idx) = idx else {
                    errors.push(format!("cluster `{}`: monitoring names unknown detector `{key}`", c.name));
                    continue;
                };
                let set = out.get_mut(&DetectorId::new(id, idx)).expect("inserted above");
                for &p in procs {
                    if p >= c.processes {
                        errors.push(format!("cluster `{}`: monitoring names unknown process p{p}", c.name));
                    } else {
                        set.insert(ProcessId::new(id, p));
                    }
                }
            }
        }
    }
    Some(out)
}

fn parse_selector(what: &str, raw: &str, topo: &ClusterTopology, errors: &mut Vec<String>) -> Option<Selector> {
    match Selector::parse(raw).and_then(|s| s.check(topo).map(|_| s)) {
        Ok(s) => Some(s),
        Err(e) => {
            errors.push(format!("{what}: {e}"));
            None
        }
    }
}

fn parse_node(what: &str, raw: &str, topo: &ClusterTopology, errors: &mut Vec<String>) -> Option<NodeId> {
    match raw.parse::<NodeId>() {
        Ok(n) if topo.contains_node(&n) => Some(n),
        Ok(n) => {
            errors.push(format!("{what}: unknown node `{n}`"));
            None
        }
        Err(e) => {
            errors.push(format!("{what}: {e}"));
            None
        }
    }
}

fn parse_process(what: &str, raw: &str, topo: &ClusterTopology, errors: &mut Vec<String>) -> Option<ProcessId> {
    match raw.parse::<ProcessId>() {
        Ok(p) if topo.contains_node(&p.clone().into()) => Some(p),
        Ok(p) => {
            errors.push(format!("{what}: unknown process `{p}`"));
            None
        }
        Err(_) => {
            errors.push(format!("{what}: `{raw}` is not a process id"));
            None
        }
    }
}

/// Scenario files shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("no_fault", include_str!("../scenarios/no_fault.toml")),
    ("crash", include_str!("../scenarios/crash.toml")),
    ("link_failure", include_str!("../scenarios/link_failure.toml")),
    ("transient_load", include_str!("../scenarios/transient_load.toml")),
    ("partition_heal", include_str!("../scenarios/partition_heal.toml")),
    ("cross_cluster_query", include_str!("../scenarios/cross_cluster_query.toml")),
    ("scaling_10", include_str!("../scenarios/scaling_10.toml")),
    ("scaling_50", include_str!("../scenarios/scaling_50.toml")),
    ("scaling_100", include_str!("../scenarios/scaling_100.toml")),
];

/// A bundled scenario, validated.
pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| validate(text).expect("bundled scenarios are valid"))
}
