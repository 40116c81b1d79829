//! Config-driven relay between a Dialect-A port and a Dialect-B port.
//!
//! Each configured converter subscribes on its source side, converts the
//! payload with a registered [`MessageConverter`] and publishes the result on
//! the destination side. Every relay is recorded with a digest of the
//! destination record.

pub mod converters;

use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bus::{is_valid_topic_name, BusError, Handler, MessagePort, SubscriptionId};
use crate::message::{encode_a, encode_b, Dialect, MessageEnvelope, Payload, SyncOrigin};

pub use converters::{
    chassis_a_to_b, chassis_b_to_a, control_a_to_b, control_b_to_a, convert_localization, convert_sensor,
    convert_startup, registry, resolve_plugin, ConversionParams, MessageConverter,
};

pub const BRIDGE_SCHEMA_VERSION: u32 = 1;

/// The shipped configuration: five converters plus the tick barrier relay.
pub const DEFAULT_CONFIG_JSON: &str = include_str!("../../data/config/bridge_default.json");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BridgeError {
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError { line: usize, column: usize, message: String },
    #[error("unknown plugin `{0}`")]
    UnknownPlugin(String),
    #[error("duplicate mapping {a_topic} <-> {b_channel}")]
    DuplicateMapping { a_topic: String, b_channel: String },
    #[error("plugin `{plugin}` does not support direction `{direction}`")]
    InvalidDirection { plugin: String, direction: String },
    #[error("invalid topic name `{0}`")]
    InvalidTopic(String),
    #[error("unsupported schema_version {0}")]
    UnsupportedSchema(u32),
    #[error("bridge already running")]
    AlreadyRunning,
    #[error("bridge has been shut down")]
    Destroyed,
    #[error("cannot subscribe `{topic}`: {reason}")]
    SubscribeFailure { topic: String, reason: String },
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Bus(#[from] BusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "a_to_b")]
    AToB,
    #[serde(rename = "b_to_a")]
    BToA,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::AToB => "a_to_b",
            Direction::BToA => "b_to_a",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "a_to_b" => Some(Direction::AToB),
            "b_to_a" => Some(Direction::BToA),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConverterSpec {
    pub plugin_name: String,
    pub a_topic: String,
    pub b_channel: String,
    pub direction: Direction,
}

impl ConverterSpec {
    fn source_destination(&self) -> (&str, &str) {
        match self.direction {
            Direction::AToB => (&self.a_topic, &self.b_channel),
            Direction::BToA => (&self.b_channel, &self.a_topic),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Endpoints {
    pub a: Option<String>,
    pub b: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeConfig {
    pub schema_version: u32,
    pub params: ConversionParams,
    pub endpoints: Endpoints,
    /// Tick-barrier channel relayed in both directions, if any.
    pub sync_topic: Option<String>,
    pub converters: Vec<ConverterSpec>,
}

#[derive(Deserialize)]
struct RawConfig {
    schema_version: u32,
    #[serde(default)]
    max_steer_angle: Option<f64>,
    #[serde(default)]
    endpoints: RawEndpoints,
    #[serde(default)]
    sync_topic: Option<String>,
    #[serde(default)]
    converters: Vec<RawSpec>,
}

#[derive(Deserialize, Default)]
struct RawEndpoints {
    a: Option<String>,
    b: Option<String>,
}

#[derive(Deserialize)]
struct RawSpec {
    plugin_name: String,
    a_topic: String,
    b_channel: String,
    #[serde(default)]
    direction: Option<String>,
}

impl BridgeConfig {
    pub fn from_json(text: &str) -> Result<Self, BridgeError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| BridgeError::ParseError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if raw.schema_version != BRIDGE_SCHEMA_VERSION {
            return Err(BridgeError::UnsupportedSchema(raw.schema_version));
        }
        let mut params = ConversionParams::default();
        if let Some(m) = raw.max_steer_angle {
            if !(m.is_finite() && m > 0.0) {
                return Err(BridgeError::OutOfRange(format!("max_steer_angle {m} must be positive")));
            }
            params.max_steer_angle = m;
        }
        if let Some(t) = &raw.sync_topic {
            if !is_valid_topic_name(t) {
                return Err(BridgeError::InvalidTopic(t.clone()));
            }
        }
        let mut converters: Vec<ConverterSpec> = Vec::with_capacity(raw.converters.len());
        for r in raw.converters {
            let plugin = resolve_plugin(&r.plugin_name).ok_or_else(|| BridgeError::UnknownPlugin(r.plugin_name.clone()))?;
            let direction = match r.direction.as_deref() {
                None => plugin.default_direction(),
                Some(s) => Direction::parse(s)
                    .filter(|d| plugin.supports(*d))
                    .ok_or_else(|| BridgeError::InvalidDirection { plugin: r.plugin_name.clone(), direction: s.into() })?,
            };
            for t in [&r.a_topic, &r.b_channel] {
                if !is_valid_topic_name(t) {
                    return Err(BridgeError::InvalidTopic(t.clone()));
                }
            }
            if converters.iter().any(|c| c.a_topic == r.a_topic && c.b_channel == r.b_channel) {
                return Err(BridgeError::DuplicateMapping { a_topic: r.a_topic, b_channel: r.b_channel });
            }
            converters.push(ConverterSpec { plugin_name: r.plugin_name, a_topic: r.a_topic, b_channel: r.b_channel, direction });
        }
        Ok(Self {
            schema_version: raw.schema_version,
            params,
            endpoints: Endpoints { a: raw.endpoints.a, b: raw.endpoints.b },
            sync_topic: raw.sync_topic,
            converters,
        })
    }

    /// Topics the bridge subscribes to on the source side of `direction`,
    /// including the tick barrier.
    pub fn source_topics(&self, direction: Direction) -> Vec<String> {
        let mut v: Vec<String> = self
            .converters
            .iter()
            .filter(|c| c.direction == direction)
            .map(|c| c.source_destination().0.to_string())
            .chain(self.sync_topic.clone())
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn load(path: &Path) -> Result<Self, BridgeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BridgeError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn default_config() -> Self {
        Self::from_json(DEFAULT_CONFIG_JSON).expect("shipped bridge config is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConverterState {
    Created,
    Running,
    Destroyed,
}

/// One relayed message.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayRecord {
    pub t: f64,
    /// Sequence number of the source envelope.
    pub seq: u64,
    pub source: String,
    pub destination: String,
    /// Hex SHA-256 of the destination record as encoded before publishing.
    pub digest: String,
}

struct ConverterEntry {
    spec: ConverterSpec,
    plugin: &'static dyn MessageConverter,
    state: ConverterState,
    subscription: Option<(Side, SubscriptionId)>,
}

#[derive(Clone, Copy)]
enum Side {
    A,
    B,
}

#[derive(Default)]
struct Shared {
    log: Mutex<Vec<RelayRecord>>,
    errors: Mutex<Vec<String>>,
}

/// The converter list plus the tick-barrier relay.
pub struct Bridge {
    config: BridgeConfig,
    port_a: Arc<dyn MessagePort>,
    port_b: Arc<dyn MessagePort>,
    entries: Vec<ConverterEntry>,
    sync_subscriptions: Vec<(Side, SubscriptionId)>,
    state: ConverterState,
    shared: Arc<Shared>,
}

impl Bridge {
    /// Instantiates every converter in the `created` state.
    pub fn new(config: BridgeConfig, port_a: Arc<dyn MessagePort>, port_b: Arc<dyn MessagePort>) -> Result<Self, BridgeError> {
        let mut entries = Vec::with_capacity(config.converters.len());
        for spec in &config.converters {
            let plugin = resolve_plugin(&spec.plugin_name).ok_or_else(|| BridgeError::UnknownPlugin(spec.plugin_name.clone()))?;
            entries.push(ConverterEntry { spec: spec.clone(), plugin, state: ConverterState::Created, subscription: None });
        }
        Ok(Self {
            config,
            port_a,
            port_b,
            entries,
            sync_subscriptions: Vec::new(),
            state: ConverterState::Created,
            shared: Arc::default(),
        })
    }

    pub fn state(&self) -> ConverterState {
        self.state
    }

    pub fn converter_states(&self) -> Vec<(String, ConverterState)> {
        self.entries.iter().map(|e| (e.spec.plugin_name.clone(), e.state)).collect()
    }

    fn port(&self, side: Side) -> &Arc<dyn MessagePort> {
        match side {
            Side::A => &self.port_a,
            Side::B => &self.port_b,
        }
    }

    /// Subscribes every converter on its source side.
    pub fn start(&mut self) -> Result<(), BridgeError> {
        match self.state {
            ConverterState::Running => return Err(BridgeError::AlreadyRunning),
            ConverterState::Destroyed => return Err(BridgeError::Destroyed),
            ConverterState::Created => {}
        }
        if let Err(e) = self.subscribe_all() {
            self.unsubscribe_all();
            for e in &mut self.entries {
                e.state = ConverterState::Created;
            }
            return Err(e);
        }
        self.state = ConverterState::Running;
        Ok(())
    }

    fn subscribe_all(&mut self) -> Result<(), BridgeError> {
        let params = self.config.params;
        for i in 0..self.entries.len() {
            let spec = self.entries[i].spec.clone();
            let plugin = self.entries[i].plugin;
            let (src_side, dst_side) = match spec.direction {
                Direction::AToB => (Side::A, Side::B),
                Direction::BToA => (Side::B, Side::A),
            };
            let (src, dst) = spec.source_destination();
            let (src, dst) = (src.to_string(), dst.to_string());
            let dst_port = self.port(dst_side).clone();
            let dst_dialect = dst_port.topic_dialect(&dst).ok_or_else(|| BridgeError::SubscribeFailure {
                topic: dst.clone(),
                reason: "destination topic is not available".into(),
            })?;
            let direction = spec.direction;
            let shared = self.shared.clone();
            let handler: Handler = Arc::new(move |env: &MessageEnvelope| {
                let result = plugin
                    .convert(direction, &env.payload, &params)
                    .and_then(|payload| relay(&*dst_port, dst_dialect, &dst, env, payload, &shared));
                if let Err(e) = result {
                    shared.errors.lock().unwrap().push(format!("{} seq {}: {e}", env.channel, env.seq));
                }
            });
            let id = self
                .port(src_side)
                .subscribe(&src, handler)
                .map_err(|e| BridgeError::SubscribeFailure { topic: src.clone(), reason: e.to_string() })?;
            self.entries[i].subscription = Some((src_side, id));
            self.entries[i].state = ConverterState::Running;
        }
        if let Some(topic) = self.config.sync_topic.clone() {
            for (src_side, dst_side, origin) in [(Side::A, Side::B, SyncOrigin::Dynamics), (Side::B, Side::A, SyncOrigin::Ads)] {
                let dst_port = self.port(dst_side).clone();
                let t = topic.clone();
                let shared = self.shared.clone();
                let handler: Handler = Arc::new(move |env: &MessageEnvelope| {
                    if let Payload::Sync(s) = &env.payload {
                        if s.origin == origin {
                            let out = MessageEnvelope::new(t.clone(), env.stamp_s, env.payload.clone());
                            if let Err(e) = dst_port.publish(&t, out) {
                                shared.errors.lock().unwrap().push(format!("{t}: {e}"));
                            }
                        }
                    }
                });
                let id = self
                    .port(src_side)
                    .subscribe(&topic, handler)
                    .map_err(|e| BridgeError::SubscribeFailure { topic: topic.clone(), reason: e.to_string() })?;
                self.sync_subscriptions.push((src_side, id));
            }
        }
        Ok(())
    }

    fn unsubscribe_all(&mut self) {
        let subs: Vec<(Side, SubscriptionId)> = self
            .entries
            .iter_mut()
            .filter_map(|e| e.subscription.take())
            .chain(self.sync_subscriptions.drain(..))
            .collect();
        for (side, id) in subs {
            self.port(side).unsubscribe(id);
        }
    }

    /// Unsubscribes everything. Safe to call more than once.
    pub fn shutdown(&mut self) {
        if self.state == ConverterState::Destroyed {
            return;
        }
        self.unsubscribe_all();
        for e in &mut self.entries {
            e.state = ConverterState::Destroyed;
        }
        self.state = ConverterState::Destroyed;
    }

    pub fn relay_log(&self) -> Vec<RelayRecord> {
        self.shared.log.lock().unwrap().clone()
    }

    pub fn take_relay_log(&self) -> Vec<RelayRecord> {
        std::mem::take(&mut *self.shared.log.lock().unwrap())
    }

    /// Conversion or publish failures seen by relay handlers.
    pub fn errors(&self) -> Vec<String> {
        self.shared.errors.lock().unwrap().clone()
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn relay(
    port: &dyn MessagePort,
    dialect: Dialect,
    destination: &str,
    source: &MessageEnvelope,
    payload: Payload,
    shared: &Shared,
) -> Result<(), BridgeError> {
    let out = MessageEnvelope::new(destination, source.stamp_s, payload);
    let bytes = match dialect {
        Dialect::A => encode_a(&out),
        Dialect::B => encode_b(&out),
    }
    .map_err(|e| BridgeError::InvalidPayload(e.to_string()))?;
    shared.log.lock().unwrap().push(RelayRecord {
        t: source.stamp_s,
        seq: source.seq,
        source: source.channel.clone(),
        destination: destination.to_string(),
        digest: hex::encode(Sha256::digest(&bytes)),
    });
    port.publish(destination, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{Bus, Topic};
    use crate::message::{ControlB, Gear, Lamps, SyncMsg};
    use crate::topics;

    fn buses() -> (Bus, Bus) {
        (Bus::with_topics(&topics::dynamics_topics()).unwrap(), Bus::with_topics(&topics::ads_topics()).unwrap())
    }

    fn control(throttle: f64) -> MessageEnvelope {
        MessageEnvelope::new(
            "",
            0.5,
            Payload::ControlB(ControlB {
                steering_rate_percent: 20.0,
                steering_target_percent: 50.0,
                throttle_percent: throttle,
                brake_percent: 0.0,
                gear: Gear::D,
                lamps: Lamps::default(),
            }),
        )
    }

    #[test]
    fn default_config_has_five_converters() {
        let c = BridgeConfig::default_config();
        assert_eq!(c.converters.len(), 5);
        assert_eq!(c.params.max_steer_angle, 0.52);
        for s in &c.converters {
            assert!(resolve_plugin(&s.plugin_name).is_some());
        }
    }

    #[test]
    fn config_errors() {
        let unknown = r#"{"schema_version":1,"converters":[{"plugin_name":"foo","a_topic":"/a","b_channel":"/b"}]}"#;
        assert_eq!(BridgeConfig::from_json(unknown), Err(BridgeError::UnknownPlugin("foo".into())));

        let dup = r#"{"schema_version":1,"converters":[
            {"plugin_name":"chassis_converter","a_topic":"/a","b_channel":"/b"},
            {"plugin_name":"chassis_converter","a_topic":"/a","b_channel":"/b","direction":"b_to_a"}]}"#;
        assert!(matches!(BridgeConfig::from_json(dup), Err(BridgeError::DuplicateMapping { .. })));

        let bad = "{\"schema_version\":1,\n \"converters\": [}";
        match BridgeConfig::from_json(bad) {
            Err(BridgeError::ParseError { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }

        let dir = r#"{"schema_version":1,"converters":[{"plugin_name":"localization_converter","a_topic":"/a","b_channel":"/b","direction":"b_to_a"}]}"#;
        assert!(matches!(BridgeConfig::from_json(dir), Err(BridgeError::InvalidDirection { .. })));

        let empty = BridgeConfig::from_json(r#"{"schema_version":1,"converters":[]}"#).unwrap();
        assert!(empty.converters.is_empty());
    }

    #[test]
    fn empty_bridge_subscribes_nothing() {
        let (a, b) = buses();
        let cfg = BridgeConfig::from_json(r#"{"schema_version":1,"converters":[]}"#).unwrap();
        let mut bridge = Bridge::new(cfg, Arc::new(a.clone()), Arc::new(b.clone())).unwrap();
        bridge.start().unwrap();
        for t in a.topics().iter().chain(b.topics().iter()) {
            let bus = if a.topic_dialect(&t.name).is_some() { &a } else { &b };
            assert_eq!(bus.subscriber_count(&t.name), 0);
        }
    }

    #[test]
    fn relays_exactly_once_and_logs() {
        let (a, b) = buses();
        let mut bridge = Bridge::new(BridgeConfig::default_config(), Arc::new(a.clone()), Arc::new(b.clone())).unwrap();
        bridge.start().unwrap();
        assert_eq!(bridge.start(), Err(BridgeError::AlreadyRunning));

        let sink = a.subscribe_queue(&[topics::CM_CONTROL]).unwrap();
        b.publish(topics::APOLLO_CONTROL, control(37.0)).unwrap();
        let got = sink.drain();
        assert_eq!(got.len(), 1);
        match &got[0].payload {
            Payload::ControlA(c) => {
                assert!((c.throttle - 0.37).abs() < 1e-15);
                assert!((c.steering_angle - 0.26).abs() < 1e-15);
            }
            p => panic!("{p:?}"),
        }
        let log = bridge.relay_log();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].source, topics::APOLLO_CONTROL);
        assert_eq!(log[0].destination, topics::CM_CONTROL);
        assert_eq!(log[0].digest.len(), 64);
        assert!(bridge.errors().is_empty());
    }

    #[test]
    fn shutdown_is_idempotent_and_stops_relaying() {
        let (a, b) = buses();
        let mut bridge = Bridge::new(BridgeConfig::default_config(), Arc::new(a.clone()), Arc::new(b.clone())).unwrap();
        bridge.start().unwrap();
        bridge.shutdown();
        bridge.shutdown();
        assert_eq!(bridge.state(), ConverterState::Destroyed);
        assert!(bridge.converter_states().iter().all(|(_, s)| *s == ConverterState::Destroyed));
        for t in a.topics() {
            assert_eq!(a.subscriber_count(&t.name), 0, "{}", t.name);
        }
        for t in b.topics() {
            assert_eq!(b.subscriber_count(&t.name), 0, "{}", t.name);
        }
        let sink = a.subscribe_queue(&[topics::CM_CONTROL]).unwrap();
        b.publish(topics::APOLLO_CONTROL, control(10.0)).unwrap();
        assert!(sink.drain().is_empty());
        assert_eq!(bridge.start(), Err(BridgeError::Destroyed));
    }

    #[test]
    fn missing_topic_is_subscribe_failure() {
        let a = Bus::with_topics(&[Topic::new("/cm/control", Dialect::A).unwrap()]).unwrap();
        let (_, b) = buses();
        let mut bridge = Bridge::new(BridgeConfig::default_config(), Arc::new(a.clone()), Arc::new(b)).unwrap();
        assert!(matches!(bridge.start(), Err(BridgeError::SubscribeFailure { .. })));
        assert_eq!(bridge.state(), ConverterState::Created);
        assert_eq!(a.subscriber_count("/cm/control"), 0);
    }

    #[test]
    fn sync_relay_filters_by_origin() {
        let (a, b) = buses();
        let mut bridge = Bridge::new(BridgeConfig::default_config(), Arc::new(a.clone()), Arc::new(b.clone())).unwrap();
        bridge.start().unwrap();
        let on_a = a.subscribe_queue(&[topics::SYNC_TICK]).unwrap();
        let on_b = b.subscribe_queue(&[topics::SYNC_TICK]).unwrap();
        let tick = |origin| MessageEnvelope::new("", 0.0, Payload::Sync(SyncMsg { tick: 3, origin }));
        a.publish(topics::SYNC_TICK, tick(SyncOrigin::Dynamics)).unwrap();
        assert_eq!(on_a.drain().len(), 1);
        assert_eq!(on_b.drain().len(), 1);
        b.publish(topics::SYNC_TICK, tick(SyncOrigin::Ads)).unwrap();
        assert_eq!(on_a.drain().len(), 1);
        assert_eq!(on_b.drain().len(), 1);
        assert!(bridge.relay_log().is_empty());
    }
}
