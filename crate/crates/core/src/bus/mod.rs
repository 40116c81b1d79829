//! Topic-based publish/subscribe.
//!
//! [`Bus`] is the in-process transport: delivery is synchronous, so every
//! subscriber callback has run before `publish` returns. [`socket`] exposes a
//! bus over TCP and provides a client that implements the same
//! [`MessagePort`] contract.

pub mod socket;

use std::collections::BTreeMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::message::{CodecError, Dialect, MessageEnvelope};

pub use socket::{SocketClient, SocketServer};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("invalid topic name `{0}`")]
    InvalidTopic(String),
    #[error("topic `{topic}` already registered with dialect {existing}")]
    DialectConflict { topic: String, existing: Dialect },
    #[error("payload with {found} units published on {expected} topic `{topic}`")]
    DialectMismatch { topic: String, expected: Dialect, found: Dialect },
    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),
    #[error("connection refused: {0}")]
    ConnectionRefused(String),
    #[error("handshake mismatch: {0}")]
    HandshakeMismatch(String),
    #[error("invalid endpoint `{0}`")]
    InvalidEndpoint(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("connection closed")]
    Closed,
    #[error("timed out waiting for messages")]
    Timeout,
}

impl From<std::io::Error> for BusError {
    fn from(e: std::io::Error) -> Self {
        BusError::Io(e.to_string())
    }
}

/// A named channel and the dialect its payloads use.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Topic {
    pub name: String,
    pub dialect: Dialect,
}

impl Topic {
    pub fn new(name: impl Into<String>, dialect: Dialect) -> Result<Self, BusError> {
        let name = name.into();
        if !is_valid_topic_name(&name) {
            return Err(BusError::InvalidTopic(name));
        }
        Ok(Self { name, dialect })
    }
}

/// Topic names are `/` followed by lowercase letters, digits, `_` or `/`.
pub fn is_valid_topic_name(name: &str) -> bool {
    name.len() > 1
        && name.starts_with('/')
        && name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'/')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriptionId(u64);

pub type Handler = Arc<dyn Fn(&MessageEnvelope) + Send + Sync>;

/// The publish/subscribe surface shared by the in-process bus and socket
/// clients.
pub trait MessagePort: Send + Sync {
    fn publish(&self, topic: &str, env: MessageEnvelope) -> Result<(), BusError>;
    fn subscribe(&self, topic: &str, handler: Handler) -> Result<SubscriptionId, BusError>;
    fn unsubscribe(&self, id: SubscriptionId);
    fn topic_dialect(&self, topic: &str) -> Option<Dialect>;
}

struct TopicEntry {
    dialect: Dialect,
    last_seq: u64,
    subscribers: Vec<(SubscriptionId, Handler)>,
    // Held for the whole of one delivery so per-topic order equals seq order
    // even with concurrent publishers.
    delivery: Arc<Mutex<()>>,
}

#[derive(Default)]
struct BusState {
    topics: BTreeMap<String, TopicEntry>,
    next_subscription: u64,
}

/// In-process bus. Cloning yields another handle to the same bus.
///
/// A handler must not publish on the topic it is being invoked for.
#[derive(Clone, Default)]
pub struct Bus {
    state: Arc<Mutex<BusState>>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_topics(topics: &[Topic]) -> Result<Self, BusError> {
        let bus = Self::new();
        for t in topics {
            bus.register(t.clone())?;
        }
        Ok(bus)
    }

    /// Registers a topic. Re-registering with the same dialect is a no-op.
    pub fn register(&self, topic: Topic) -> Result<(), BusError> {
        if !is_valid_topic_name(&topic.name) {
            return Err(BusError::InvalidTopic(topic.name));
        }
        let mut st = self.state.lock().unwrap();
        if let Some(existing) = st.topics.get(&topic.name) {
            if existing.dialect != topic.dialect {
                return Err(BusError::DialectConflict { topic: topic.name, existing: existing.dialect });
            }
            return Ok(());
        }
        st.topics.insert(
            topic.name,
            TopicEntry {
                dialect: topic.dialect,
                last_seq: 0,
                subscribers: Vec::new(),
                delivery: Arc::default(),
            },
        );
        Ok(())
    }

    pub fn topics(&self) -> Vec<Topic> {
        let st = self.state.lock().unwrap();
        st.topics
            .iter()
            .map(|(name, e)| Topic { name: name.clone(), dialect: e.dialect })
            .collect()
    }

    pub fn subscriber_count(&self, topic: &str) -> usize {
        let st = self.state.lock().unwrap();
        st.topics.get(topic).map_or(0, |e| e.subscribers.len())
    }

    /// Delivers `env` to every current subscriber of `topic` and returns the
    /// sequence number assigned to it. The envelope's `seq` and `channel` are
    /// overwritten by the bus.
    pub fn publish(&self, topic: &str, mut env: MessageEnvelope) -> Result<u64, BusError> {
        let delivery = {
            let st = self.state.lock().unwrap();
            let entry = st.topics.get(topic).ok_or_else(|| BusError::UnknownTopic(topic.into()))?;
            if let Some(found) = env.payload.dialect() {
                if found != entry.dialect {
                    return Err(BusError::DialectMismatch {
                        topic: topic.into(),
                        expected: entry.dialect,
                        found,
                    });
                }
            }
            entry.delivery.clone()
        };
        env.channel = topic.to_string();
        env.validate().map_err(BusError::InvalidEnvelope)?;

        let _order = delivery.lock().unwrap();
        let handlers: Vec<Handler> = {
            let mut st = self.state.lock().unwrap();
            let entry = st.topics.get_mut(topic).expect("topics are never removed");
            entry.last_seq += 1;
            env.seq = entry.last_seq;
            entry.subscribers.iter().map(|(_, h)| h.clone()).collect()
        };
        for h in &handlers {
            h(&env);
        }
        Ok(env.seq)
    }

    pub fn subscribe(&self, topic: &str, handler: Handler) -> Result<SubscriptionId, BusError> {
        let mut st = self.state.lock().unwrap();
        st.next_subscription += 1;
        let id = SubscriptionId(st.next_subscription);
        let entry = st.topics.get_mut(topic).ok_or_else(|| BusError::UnknownTopic(topic.into()))?;
        entry.subscribers.push((id, handler));
        Ok(id)
    }

    pub fn unsubscribe(&self, id: SubscriptionId) {
        let mut st = self.state.lock().unwrap();
        for entry in st.topics.values_mut() {
            entry.subscribers.retain(|(sid, _)| *sid != id);
        }
    }

    /// Queue subscription over several topics. Envelopes arrive in one FIFO in
    /// the order they were published.
    pub fn subscribe_queue(&self, topics: &[&str]) -> Result<Subscription, BusError> {
        for t in topics {
            if self.topic_dialect(t).is_none() {
                return Err(BusError::UnknownTopic(t.to_string()));
            }
        }
        let (tx, rx) = mpsc::channel();
        let tx = Mutex::new(tx);
        let handler: Handler = Arc::new(move |env: &MessageEnvelope| {
            // receiver gone means the subscription is being torn down
            let _ = tx.lock().unwrap().send(env.clone());
        });
        let mut ids = Vec::with_capacity(topics.len());
        for t in topics {
            ids.push(self.subscribe(t, handler.clone())?);
        }
        Ok(Subscription { ids, rx, port: Arc::new(self.clone()) })
    }

    pub fn topic_dialect(&self, topic: &str) -> Option<Dialect> {
        self.state.lock().unwrap().topics.get(topic).map(|e| e.dialect)
    }
}

impl MessagePort for Bus {
    fn publish(&self, topic: &str, env: MessageEnvelope) -> Result<(), BusError> {
        Bus::publish(self, topic, env).map(|_| ())
    }

    fn subscribe(&self, topic: &str, handler: Handler) -> Result<SubscriptionId, BusError> {
        Bus::subscribe(self, topic, handler)
    }

    fn unsubscribe(&self, id: SubscriptionId) {
        Bus::unsubscribe(self, id)
    }

    fn topic_dialect(&self, topic: &str) -> Option<Dialect> {
        Bus::topic_dialect(self, topic)
    }
}

/// Pending envelopes for a queue subscription. Unsubscribes on drop.
pub struct Subscription {
    ids: Vec<SubscriptionId>,
    rx: Receiver<MessageEnvelope>,
    port: Arc<dyn MessagePort>,
}

impl Subscription {
    /// Everything queued so far, without blocking.
    pub fn drain(&self) -> Vec<MessageEnvelope> {
        self.rx.try_iter().collect()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<MessageEnvelope, BusError> {
        self.rx.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => BusError::Timeout,
            RecvTimeoutError::Disconnected => BusError::Closed,
        })
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        for id in &self.ids {
            self.port.unsubscribe(*id);
        }
    }
}

/// Queue subscription over any [`MessagePort`].
pub fn subscribe_queue(port: Arc<dyn MessagePort>, topics: &[&str]) -> Result<Subscription, BusError> {
    let (tx, rx) = mpsc::channel();
    let tx = Mutex::new(tx);
    let handler: Handler = Arc::new(move |env: &MessageEnvelope| {
        let _ = tx.lock().unwrap().send(env.clone());
    });
    let mut ids = Vec::with_capacity(topics.len());
    for t in topics {
        match port.subscribe(t, handler.clone()) {
            Ok(id) => ids.push(id),
            Err(e) => {
                for id in ids {
                    port.unsubscribe(id);
                }
                return Err(e);
            }
        }
    }
    Ok(Subscription { ids, rx, port })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{Payload, SyncMsg, SyncOrigin};

    fn tick(n: u64) -> MessageEnvelope {
        MessageEnvelope::new("", 0.0, Payload::Sync(SyncMsg { tick: n, origin: SyncOrigin::Dynamics }))
    }

    fn bus() -> Bus {
        Bus::with_topics(&[Topic::new("/t", Dialect::A).unwrap()]).unwrap()
    }

    #[test]
    fn fifo_delivery_with_sequence_numbers() {
        let bus = bus();
        let sub = bus.subscribe_queue(&["/t"]).unwrap();
        for n in 0..3 {
            bus.publish("/t", tick(n)).unwrap();
        }
        let got: Vec<u64> = sub.drain().iter().map(|e| e.seq).collect();
        assert_eq!(got, vec![1, 2, 3]);
    }

    #[test]
    fn seq_advances_without_subscribers() {
        let bus = bus();
        assert_eq!(bus.publish("/t", tick(0)).unwrap(), 1);
        assert_eq!(bus.publish("/t", tick(1)).unwrap(), 2);
        let sub = bus.subscribe_queue(&["/t"]).unwrap();
        bus.publish("/t", tick(2)).unwrap();
        assert_eq!(sub.drain()[0].seq, 3);
    }

    #[test]
    fn fan_out_to_two_subscribers() {
        let bus = bus();
        let a = bus.subscribe_queue(&["/t"]).unwrap();
        let b = bus.subscribe_queue(&["/t"]).unwrap();
        bus.publish("/t", tick(7)).unwrap();
        let (ea, eb) = (a.drain(), b.drain());
        assert_eq!(ea, eb);
        assert_eq!(ea.len(), 1);
        assert_eq!(ea[0].channel, "/t");
    }

    #[test]
    fn callback_runs_before_publish_returns() {
        let bus = bus();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let s = seen.clone();
        bus.subscribe("/t", Arc::new(move |e| s.lock().unwrap().push(e.seq))).unwrap();
        bus.publish("/t", tick(0)).unwrap();
        assert_eq!(*seen.lock().unwrap(), vec![1]);
    }

    #[test]
    fn unknown_topic_and_bad_names() {
        let bus = bus();
        assert_eq!(bus.publish("/nope", tick(0)), Err(BusError::UnknownTopic("/nope".into())));
        assert!(Topic::new("Bad", Dialect::A).is_err());
        assert!(Topic::new("/cm/Loc", Dialect::A).is_err());
        assert!(Topic::new("/apollo/canbus/chassis", Dialect::B).is_ok());
        assert!(matches!(
            bus.register(Topic::new("/t", Dialect::B).unwrap()),
            Err(BusError::DialectConflict { .. })
        ));
    }

    #[test]
    fn dropped_subscription_stops_delivery() {
        let bus = bus();
        let sub = bus.subscribe_queue(&["/t"]).unwrap();
        assert_eq!(bus.subscriber_count("/t"), 1);
        drop(sub);
        assert_eq!(bus.subscriber_count("/t"), 0);
    }

    #[test]
    fn concurrent_publishers_keep_per_topic_order() {
        let bus = bus();
        let sub = bus.subscribe_queue(&["/t"]).unwrap();
        std::thread::scope(|s| {
            for _ in 0..4 {
                let b = bus.clone();
                s.spawn(move || {
                    for n in 0..250 {
                        b.publish("/t", tick(n)).unwrap();
                    }
                });
            }
        });
        let seqs: Vec<u64> = sub.drain().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, (1..=1000).collect::<Vec<_>>());
    }
}
