//! Co-simulation runner: the dynamics side on bus A, the ADS side on bus B
//! and the bridge between them, advanced in lock-step.

pub mod analyze;
pub mod log;
pub mod report;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::ads::{AdsStack, PlannerConfig};
use crate::bridge::{Bridge, BridgeConfig, Direction};
use crate::bus::socket::{SocketClient, SocketServer};
use crate::bus::{Bus, MessagePort, Subscription};
use crate::dynamics::{tick_time, DynamicsSim, SensorConfig, VehicleParams, DEFAULT_DT};
use crate::map::{convert, convert_file, MapError, MapProducts, DEFAULT_SAMPLE_SPACING, DEFAULT_SIM_EPSILON, FIXTURES};
use crate::message::{MessageEnvelope, Payload, SyncMsg, SyncOrigin};
use crate::scenario::{ScenarioError, ScenarioSpec};
use crate::topics::*;

pub use analyze::{analyze, AnalysisReport};
pub use log::{ActorSample, AdsRow, DynamicsRow, SimLog};
pub use report::{emit_report, validate_report_json};

pub const LOG_DIR_ENV: &str = "ADCOSIM_LOG_DIR";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bus: {0}")]
    Bus(String),
    #[error("bridge: {0}")]
    Bridge(String),
    #[error("tick {tick}: {message}")]
    Ads { tick: u64, message: String },
    #[error("tick {tick}: timed out waiting for {waiting_for}")]
    Timeout { tick: u64, waiting_for: String },
    #[error("aborted")]
    Aborted,
    #[error("incomplete log: {0}")]
    IncompleteLog(String),
}

impl HarnessError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    InProcess,
    Socket,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "in_process" | "in-process" | "inprocess" => Some(Mode::InProcess),
            "socket" => Some(Mode::Socket),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::InProcess => "in_process",
            Mode::Socket => "socket",
        }
    }
}

/// Everything a run needs besides the scenario and map.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub dt: f64,
    /// Overrides the scenario duration.
    pub duration_s: Option<f64>,
    pub mode: Mode,
    /// Reserved for noise models; the shipped models are noise-free.
    pub seed: u64,
    pub bridge: BridgeConfig,
    pub vehicle: VehicleParams,
    pub planner: PlannerConfig,
    pub sensor: SensorConfig,
    /// Per-message wait in the lock-step loop.
    pub timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            duration_s: None,
            mode: Mode::InProcess,
            seed: 0,
            bridge: BridgeConfig::default_config(),
            vehicle: VehicleParams::default(),
            planner: PlannerConfig::default(),
            sensor: SensorConfig::default(),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub scenario_path: PathBuf,
    pub map_dir: Option<PathBuf>,
    pub log_dir: Option<PathBuf>,
    pub options: RunOptions,
}

impl SimConfig {
    pub fn new(scenario_path: impl Into<PathBuf>) -> Self {
        Self { scenario_path: scenario_path.into(), map_dir: None, log_dir: None, options: RunOptions::default() }
    }

    /// Log directory after applying the environment override.
    pub fn effective_log_dir(&self) -> Option<PathBuf> {
        resolve_log_dir(self.log_dir.as_deref(), std::env::var_os(LOG_DIR_ENV).map(PathBuf::from))
    }
}

pub fn resolve_log_dir(configured: Option<&Path>, env: Option<PathBuf>) -> Option<PathBuf> {
    env.filter(|p| !p.as_os_str().is_empty()).or_else(|| configured.map(Path::to_path_buf))
}

/// Finds the scenario's map: under `map_dir` when given, else next to the
/// scenario file, else a shipped map of that name.
pub fn resolve_map(map_ref: &str, scenario_dir: Option<&Path>, map_dir: Option<&Path>) -> Result<MapProducts, HarnessError> {
    let load = |p: &Path| convert_file(p, DEFAULT_SAMPLE_SPACING, DEFAULT_SIM_EPSILON).map_err(HarnessError::from);
    if let Some(dir) = map_dir {
        let p = dir.join(map_ref);
        if !p.exists() {
            return Err(HarnessError::io(&p, "map not found"));
        }
        return load(&p);
    }
    let p = scenario_dir.map_or_else(|| PathBuf::from(map_ref), |d| d.join(map_ref));
    if p.exists() {
        return load(&p);
    }
    if let Some((_, text)) = FIXTURES.iter().find(|(n, _)| *n == map_ref) {
        return Ok(convert(text, DEFAULT_SAMPLE_SPACING, DEFAULT_SIM_EPSILON)?);
    }
    Err(HarnessError::io(&p, "map not found"))
}

pub fn load_inputs(config: &SimConfig) -> Result<(ScenarioSpec, MapProducts), HarnessError> {
    let spec = ScenarioSpec::load(&config.scenario_path)?;
    let maps = resolve_map(&spec.map_ref, config.scenario_path.parent(), config.map_dir.as_deref())?;
    spec.validate(&maps.base)?;
    Ok((spec, maps))
}

/// Loads inputs and runs. Logs are written when a log directory is set.
pub fn run(config: &SimConfig) -> Result<(ScenarioSpec, MapProducts, SimLog), HarnessError> {
    let (spec, maps) = load_inputs(config)?;
    let log = run_scenario(&spec, &maps, &config.options)?;
    if let Some(dir) = config.effective_log_dir() {
        log.write(&dir)?;
    }
    Ok((spec, maps, log))
}

struct Waiter {
    abort: Arc<AtomicBool>,
    timeout: Duration,
}

impl Waiter {
    fn recv(&self, inbox: &Subscription, tick: u64, what: &str) -> Result<MessageEnvelope, HarnessError> {
        let deadline = Instant::now() + self.timeout;
        loop {
            if self.abort.load(Ordering::SeqCst) {
                return Err(HarnessError::Aborted);
            }
            match inbox.recv_timeout(Duration::from_millis(20)) {
                Ok(env) => return Ok(env),
                Err(crate::bus::BusError::Timeout) if Instant::now() < deadline => {}
                Err(crate::bus::BusError::Timeout) => {
                    return Err(HarnessError::Timeout { tick, waiting_for: what.into() });
                }
                Err(e) => return Err(HarnessError::Bus(e.to_string())),
            }
        }
    }
}

fn is_sync(env: &MessageEnvelope, tick: u64, origin: SyncOrigin) -> bool {
    matches!(&env.payload, Payload::Sync(s) if s.tick == tick && s.origin == origin)
}

fn publish(port: &dyn MessagePort, topic: &str, t: f64, payload: Payload) -> Result<(), HarnessError> {
    port.publish(topic, MessageEnvelope::new(topic, t, payload)).map_err(|e| HarnessError::Bus(format!("{topic}: {e}")))
}

struct DynamicsNode {
    sim: DynamicsSim,
    port: Arc<dyn MessagePort>,
    inbox: Subscription,
    rows: Vec<DynamicsRow>,
}

impl DynamicsNode {
    fn start(&self) -> Result<(), HarnessError> {
        publish(&*self.port, CM_STARTUP, self.sim.time(), Payload::Startup(self.sim.startup()))
    }

    fn tick(&mut self, k: u64) -> Result<(), HarnessError> {
        if k > 0 {
            self.sim.advance();
        }
        let t = self.sim.time();
        let s = self.sim.state;
        let traffic = self.sim.traffic();
        self.rows.push(DynamicsRow {
            tick: k,
            t,
            x: s.x,
            y: s.y,
            yaw: s.yaw,
            v: s.v,
            a: s.a,
            gear: s.gear,
            steer: s.steer,
            actors: traffic.iter().map(|a| ActorSample { x: a.x, y: a.y, v: a.speed }).collect(),
        });
        let port = &*self.port;
        publish(port, CM_LOCALIZATION, t, Payload::LocalizationA(self.sim.localization()))?;
        publish(port, CM_CHASSIS, t, Payload::ChassisA(self.sim.chassis()))?;
        publish(port, CM_OBJECTS, t, Payload::Objects(self.sim.objects()))?;
        publish(port, SYNC_TICK, t, Payload::Sync(SyncMsg { tick: k, origin: SyncOrigin::Dynamics }))
    }

    /// Takes control records until the ADS barrier for tick `k`.
    fn await_control(&mut self, k: u64, waiter: &Waiter) -> Result<(), HarnessError> {
        loop {
            let env = waiter.recv(&self.inbox, k, "the ADS tick barrier")?;
            if is_sync(&env, k, SyncOrigin::Ads) {
                return Ok(());
            }
            if let Payload::ControlA(c) = env.payload {
                self.sim.control = c;
            }
        }
    }
}

struct AdsNode {
    stack: AdsStack,
    port: Arc<dyn MessagePort>,
    inbox: Subscription,
    dt: f64,
    rows: Vec<AdsRow>,
}

impl AdsNode {
    fn tick(&mut self, k: u64, waiter: &Waiter) -> Result<(), HarnessError> {
        let ads_err = |e: crate::ads::AdsError| HarnessError::Ads { tick: k, message: e.to_string() };
        loop {
            let env = waiter.recv(&self.inbox, k, "the dynamics tick barrier")?;
            if is_sync(&env, k, SyncOrigin::Dynamics) {
                break;
            }
            if !matches!(env.payload, Payload::Sync(_)) {
                self.stack.on_message(&env).map_err(ads_err)?;
            }
        }
        let t = tick_time(k, self.dt);
        let out = self.stack.control_tick(t).map_err(ads_err)?;
        let row = match &out {
            Some((_, r)) => AdsRow {
                tick: k,
                t,
                active: true,
                stale: r.stale,
                lead_id: r.lead.map(|l| l.id),
                gap: r.lead.map(|l| l.gap),
                lead_speed: r.lead.map(|l| l.speed),
                idm_accel: r.idm_accel,
                lateral_error: r.lateral_error,
                throttle_percent: r.throttle_percent,
                brake_percent: r.brake_percent,
                steer_percent: r.steer_percent,
            },
            None => AdsRow {
                tick: k,
                t,
                active: false,
                stale: false,
                lead_id: None,
                gap: None,
                lead_speed: None,
                idm_accel: 0.0,
                lateral_error: f64::NAN,
                throttle_percent: 0.0,
                brake_percent: 0.0,
                steer_percent: 0.0,
            },
        };
        self.rows.push(row);
        if let Some((c, _)) = out {
            publish(&*self.port, APOLLO_CONTROL, t, Payload::ControlB(c))?;
        }
        publish(&*self.port, SYNC_TICK, t, Payload::Sync(SyncMsg { tick: k, origin: SyncOrigin::Ads }))
    }
}

fn bus_err(e: crate::bus::BusError) -> HarnessError {
    HarnessError::Bus(e.to_string())
}

fn bridge_err(e: crate::bridge::BridgeError) -> HarnessError {
    HarnessError::Bridge(e.to_string())
}

/// Runs `spec` for `duration / dt` ticks.
///
/// Tick k: the dynamics side advances with the control it holds (none at
/// k = 0), publishes its state and a barrier; the bridge relays to bus B; the
/// ADS side consumes everything up to the barrier, publishes control and its
/// own barrier; the bridge relays both back. Control from tick k acts at
/// tick k + 1.
pub fn run_scenario(spec: &ScenarioSpec, maps: &MapProducts, opts: &RunOptions) -> Result<SimLog, HarnessError> {
    if !(opts.dt.is_finite() && opts.dt > 0.0) {
        return Err(HarnessError::InvalidConfig(format!("dt must be positive, got {}", opts.dt)));
    }
    let duration = opts.duration_s.unwrap_or(spec.duration_s);
    if !(duration.is_finite() && duration > 0.0) {
        return Err(HarnessError::InvalidConfig(format!("duration must be positive, got {duration}")));
    }
    opts.vehicle.validate().map_err(HarnessError::InvalidConfig)?;
    let ticks = (duration / opts.dt).round() as u64;

    let bus_a = Bus::with_topics(&dynamics_topics()).map_err(bus_err)?;
    let bus_b = Bus::with_topics(&ads_topics()).map_err(bus_err)?;
    let dyn_inbox = bus_a.subscribe_queue(&[CM_CONTROL, SYNC_TICK]).map_err(bus_err)?;
    let ads_inbox = bus_b
        .subscribe_queue(&[APOLLO_STARTUP, APOLLO_LOCALIZATION, APOLLO_CHASSIS, APOLLO_OBSTACLES, SYNC_TICK])
        .map_err(bus_err)?;

    let mut planner = opts.planner.clone();
    planner.dt = opts.dt;
    planner.ego_length = spec.ego.length;
    planner.validate().map_err(HarnessError::InvalidConfig)?;
    let mut dyn_node = DynamicsNode {
        sim: DynamicsSim::new(spec.clone(), opts.vehicle.clone(), opts.sensor, opts.dt),
        port: Arc::new(bus_a.clone()),
        inbox: dyn_inbox,
        rows: Vec::with_capacity(ticks as usize),
    };
    let mut ads_node = AdsNode {
        stack: AdsStack::new(planner, Arc::new(maps.base.clone()), Arc::new(maps.routing.clone())),
        port: Arc::new(bus_b.clone()),
        inbox: ads_inbox,
        dt: opts.dt,
        rows: Vec::with_capacity(ticks as usize),
    };
    let waiter = Waiter { abort: Arc::new(AtomicBool::new(false)), timeout: opts.timeout };

    let mut servers = Vec::new();
    let (port_a, port_b): (Arc<dyn MessagePort>, Arc<dyn MessagePort>) = match opts.mode {
        Mode::InProcess => (Arc::new(bus_a.clone()), Arc::new(bus_b.clone())),
        Mode::Socket => {
            let sa = SocketServer::serve("127.0.0.1:0", bus_a.clone()).map_err(bus_err)?;
            let sb = SocketServer::serve("127.0.0.1:0", bus_b.clone()).map_err(bus_err)?;
            let topics_a = opts.bridge.source_topics(Direction::AToB);
            let topics_b = opts.bridge.source_topics(Direction::BToA);
            let ca = SocketClient::connect(&sa.endpoint(), &topics_a.iter().map(String::as_str).collect::<Vec<_>>()).map_err(bus_err)?;
            let cb = SocketClient::connect(&sb.endpoint(), &topics_b.iter().map(String::as_str).collect::<Vec<_>>()).map_err(bus_err)?;
            servers.push(sa);
            servers.push(sb);
            (Arc::new(ca), Arc::new(cb))
        }
    };
    let mut bridge = Bridge::new(opts.bridge.clone(), port_a, port_b).map_err(bridge_err)?;
    bridge.start().map_err(bridge_err)?;

    let result = match opts.mode {
        Mode::InProcess => (|| {
            dyn_node.start()?;
            for k in 0..ticks {
                dyn_node.tick(k)?;
                ads_node.tick(k, &waiter)?;
                dyn_node.await_control(k, &waiter)?;
            }
            Ok(())
        })(),
        Mode::Socket => std::thread::scope(|scope| {
            let w = &waiter;
            let dyn_side = scope.spawn(|| {
                let r = (|| {
                    dyn_node.start()?;
                    for k in 0..ticks {
                        dyn_node.tick(k)?;
                        dyn_node.await_control(k, w)?;
                    }
                    Ok(())
                })();
                if r.is_err() {
                    w.abort.store(true, Ordering::SeqCst);
                }
                r
            });
            let ads_side = scope.spawn(|| {
                let r = (|| {
                    for k in 0..ticks {
                        ads_node.tick(k, w)?;
                    }
                    Ok(())
                })();
                if r.is_err() {
                    w.abort.store(true, Ordering::SeqCst);
                }
                r
            });
            let d: Result<(), HarnessError> = dyn_side.join().expect("dynamics thread panicked");
            let a: Result<(), HarnessError> = ads_side.join().expect("ADS thread panicked");
            // report the root cause, not the peer's abort
            match (d, a) {
                (Err(HarnessError::Aborted), Err(e)) | (Err(e), _) | (_, Err(e)) => Err(e),
                _ => Ok(()),
            }
        }),
    };
    bridge.shutdown();
    for s in &mut servers {
        s.shutdown();
    }
    result?;
    let errors = bridge.errors();
    if !errors.is_empty() {
        return Err(HarnessError::Bridge(format!("{} relay failure(s), first: {}", errors.len(), errors[0])));
    }
    Ok(SimLog {
        dt: opts.dt,
        actor_ids: spec.traffic.iter().map(|a| a.actor_id).collect(),
        dynamics: dyn_node.rows,
        bridge: bridge.take_relay_log(),
        ads: ads_node.rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{make_case, CaseKind};

    fn short(kind: CaseKind, seconds: f64, mode: Mode) -> SimLog {
        let spec = make_case(kind);
        let maps = resolve_map(&spec.map_ref, None, None).unwrap();
        run_scenario(&spec, &maps, &RunOptions { duration_s: Some(seconds), mode, ..Default::default() }).unwrap()
    }

    #[test]
    fn tick_counts_and_ordering() {
        let log = short(CaseKind::CutIn, 2.0, Mode::InProcess);
        assert_eq!(log.dynamics.len(), 200);
        assert_eq!(log.ads.len(), 200);
        assert!(log.dynamics.windows(2).all(|w| w[1].t > w[0].t));
        assert!(log.bridge.windows(2).all(|w| w[1].t >= w[0].t));
        assert_eq!(log.dynamics[199].t, 1.99);
    }

    #[test]
    fn every_control_is_relayed_once() {
        let log = short(CaseKind::CutIn, 1.0, Mode::InProcess);
        let controls = log.bridge.iter().filter(|r| r.source == APOLLO_CONTROL).count();
        assert_eq!(controls, log.ads.iter().filter(|r| r.active).count());
        for (k, row) in log.ads.iter().enumerate() {
            let relayed = log.bridge.iter().filter(|r| r.source == APOLLO_CONTROL && r.t == row.t).count();
            assert_eq!(relayed, 1, "tick {k}");
        }
        let startups = log.bridge.iter().filter(|r| r.source == CM_STARTUP).count();
        assert_eq!(startups, 1);
    }

    #[test]
    fn socket_mode_matches_in_process() {
        let a = short(CaseKind::CutOut, 1.0, Mode::InProcess);
        let b = short(CaseKind::CutOut, 1.0, Mode::Socket);
        assert_eq!(a.dynamics_csv(), b.dynamics_csv());
        assert_eq!(a.digests(), b.digests());
    }

    #[test]
    fn map_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let err = resolve_map("highway_2520m.xodr", None, Some(dir.path())).unwrap_err();
        assert!(err.to_string().contains(&dir.path().join("highway_2520m.xodr").display().to_string()));
        assert!(resolve_map("highway_2520m.xodr", Some(dir.path()), None).is_ok());
        let err = resolve_map("nowhere.xodr", Some(dir.path()), None).unwrap_err();
        assert!(err.to_string().contains("nowhere.xodr"));
    }

    #[test]
    fn env_overrides_log_dir() {
        let cfg = Some(Path::new("/tmp/a"));
        assert_eq!(resolve_log_dir(cfg, Some("/tmp/b".into())), Some(PathBuf::from("/tmp/b")));
        assert_eq!(resolve_log_dir(cfg, None), Some(PathBuf::from("/tmp/a")));
        assert_eq!(resolve_log_dir(None, None), None);
    }

    #[test]
    fn invalid_dt() {
        let spec = make_case(CaseKind::CutIn);
        let maps = resolve_map(&spec.map_ref, None, None).unwrap();
        let r = run_scenario(&spec, &maps, &RunOptions { dt: 0.0, ..Default::default() });
        assert!(matches!(r, Err(HarnessError::InvalidConfig(_))));
    }
}
