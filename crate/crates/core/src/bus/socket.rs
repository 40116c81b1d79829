//! TCP transport for the bus.
//!
//! A connection starts with a handshake: the client sends one Dialect-A line
//! `{"subscribe":[...],"type":"handshake"}` and the server answers with
//! `{"accepted":true,"topics":{name: "A"|"B"},"type":"handshake_ack"}` or
//! `{"accepted":false,"error":..,"type":"handshake_ack"}`. After that both
//! directions carry records in the dialect of their topic. A records begin
//! with `{`, B records with a 4-byte big-endian length, so one stream can mix
//! them.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};

use super::{Bus, BusError, Handler, MessagePort, SubscriptionId};
use crate::message::{decode_a, decode_b, encode_a, encode_b, Dialect, MessageEnvelope, B_LENGTH_PREFIX};

/// Upper bound on a single B record body.
const MAX_RECORD_BYTES: usize = 16 << 20;

pub fn encode_record(dialect: Dialect, env: &MessageEnvelope) -> Result<Vec<u8>, BusError> {
    Ok(match dialect {
        Dialect::A => encode_a(env)?,
        Dialect::B => encode_b(env)?,
    })
}

/// Reads one record. `Ok(None)` on a clean end of stream.
pub fn read_record<R: BufRead>(r: &mut R) -> Result<Option<MessageEnvelope>, BusError> {
    let first = match r.fill_buf() {
        Ok([]) => return Ok(None),
        Ok(buf) => buf[0],
        Err(e) => return Err(e.into()),
    };
    if first == b'{' {
        let line = read_line(r)?.ok_or(BusError::Closed)?;
        return Ok(Some(decode_a(&line)?));
    }
    let mut buf = vec![0u8; B_LENGTH_PREFIX];
    r.read_exact(&mut buf).map_err(eof_as_closed)?;
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len > MAX_RECORD_BYTES {
        return Err(BusError::Io(format!("record length {len} exceeds limit")));
    }
    buf.resize(B_LENGTH_PREFIX + len, 0);
    r.read_exact(&mut buf[B_LENGTH_PREFIX..]).map_err(eof_as_closed)?;
    Ok(Some(decode_b(&buf)?))
}

fn read_line<R: BufRead>(r: &mut R) -> Result<Option<Vec<u8>>, BusError> {
    let mut line = Vec::new();
    let n = r.read_until(b'\n', &mut line)?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        return Err(BusError::Closed);
    }
    Ok(Some(line))
}

fn eof_as_closed(e: std::io::Error) -> BusError {
    if e.kind() == ErrorKind::UnexpectedEof {
        BusError::Closed
    } else {
        e.into()
    }
}

fn write_json_line(stream: &mut TcpStream, v: &Value) -> Result<(), BusError> {
    let mut bytes = serde_json::to_vec(v).expect("json values always serialize");
    bytes.push(b'\n');
    stream.write_all(&bytes)?;
    Ok(())
}

fn dialect_str(d: Dialect) -> &'static str {
    match d {
        Dialect::A => "A",
        Dialect::B => "B",
    }
}

fn resolve(endpoint: &str) -> Result<SocketAddr, BusError> {
    endpoint
        .to_socket_addrs()
        .ok()
        .and_then(|mut it| it.next())
        .ok_or_else(|| BusError::InvalidEndpoint(endpoint.to_string()))
}

struct Connection {
    stream: TcpStream,
    thread: Option<JoinHandle<()>>,
}

/// Serves a [`Bus`] to socket clients. Stops on drop.
pub struct SocketServer {
    addr: SocketAddr,
    stopping: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    connections: Arc<Mutex<Vec<Connection>>>,
}

impl SocketServer {
    /// Binds `endpoint` (port 0 picks a free port) and starts accepting.
    pub fn serve(endpoint: &str, bus: Bus) -> Result<Self, BusError> {
        let listener = TcpListener::bind(resolve(endpoint)?)?;
        let addr = listener.local_addr()?;
        let stopping = Arc::new(AtomicBool::new(false));
        let connections: Arc<Mutex<Vec<Connection>>> = Arc::default();

        let accept = {
            let stopping = stopping.clone();
            let connections = connections.clone();
            std::thread::Builder::new()
                .name(format!("bus-accept-{}", addr.port()))
                .spawn(move || {
                    for stream in listener.incoming() {
                        if stopping.load(Ordering::SeqCst) {
                            break;
                        }
                        let Ok(stream) = stream else { continue };
                        let Ok(handle) = stream.try_clone() else { continue };
                        let bus = bus.clone();
                        let thread = std::thread::spawn(move || serve_connection(stream, bus));
                        connections.lock().unwrap().push(Connection { stream: handle, thread: Some(thread) });
                    }
                })?
        };
        Ok(Self { addr, stopping, accept: Some(accept), connections })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    pub fn shutdown(&mut self) {
        if self.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
        let conns = std::mem::take(&mut *self.connections.lock().unwrap());
        for mut c in conns {
            let _ = c.stream.shutdown(Shutdown::Both);
            if let Some(t) = c.thread.take() {
                let _ = t.join();
            }
        }
    }
}

impl Drop for SocketServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_connection(stream: TcpStream, bus: Bus) {
    let _ = stream.set_nodelay(true);
    let Ok(mut writer) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);

    let requested = match read_handshake(&mut reader) {
        Ok(t) => t,
        Err(msg) => {
            let _ = write_json_line(&mut writer, &json!({"accepted": false, "error": msg, "type": "handshake_ack"}));
            return;
        }
    };
    let unknown: Vec<&String> = requested.iter().filter(|t| bus.topic_dialect(t).is_none()).collect();
    if !unknown.is_empty() {
        let msg = format!("unknown topics: {}", unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "));
        let _ = write_json_line(&mut writer, &json!({"accepted": false, "error": msg, "type": "handshake_ack"}));
        return;
    }

    let writer = Arc::new(Mutex::new(writer));
    // Holding the writer across subscription keeps forwarded records behind the ack.
    let mut guard = writer.lock().unwrap();
    let mut ids = Vec::new();
    for topic in &requested {
        let dialect = bus.topic_dialect(topic).expect("checked above");
        let w = writer.clone();
        let handler: Handler = Arc::new(move |env: &MessageEnvelope| {
            if let Ok(bytes) = encode_record(dialect, env) {
                let _ = w.lock().unwrap().write_all(&bytes);
            }
        });
        match bus.subscribe(topic, handler) {
            Ok(id) => ids.push(id),
            Err(_) => break,
        }
    }
    let table: BTreeMap<String, &str> =
        bus.topics().into_iter().map(|t| (t.name, dialect_str(t.dialect))).collect();
    let ack = json!({"accepted": true, "topics": table, "type": "handshake_ack"});
    let sent = write_json_line(&mut guard, &ack);
    drop(guard);

    if sent.is_ok() {
        while let Ok(Some(env)) = read_record(&mut reader) {
            let channel = env.channel.clone();
            if bus.publish(&channel, env).is_err() {
                break;
            }
        }
    }
    for id in ids {
        bus.unsubscribe(id);
    }
    let _ = writer.lock().unwrap().shutdown(Shutdown::Both);
}

fn read_handshake<R: BufRead>(r: &mut R) -> Result<Vec<String>, String> {
    let line = read_line(r).map_err(|e| e.to_string())?.ok_or("connection closed before handshake")?;
    let v: Value = serde_json::from_slice(&line).map_err(|e| format!("handshake is not JSON: {e}"))?;
    if v.get("type").and_then(Value::as_str) != Some("handshake") {
        return Err("first record must be a handshake".into());
    }
    let topics = v
        .get("subscribe")
        .and_then(Value::as_array)
        .ok_or("handshake lacks a `subscribe` array")?;
    topics
        .iter()
        .map(|t| t.as_str().map(str::to_string).ok_or_else(|| "topic names must be strings".to_string()))
        .collect()
}

type HandlerTable = HashMap<String, Vec<(SubscriptionId, Handler)>>;

/// Client side of a bus connection.
///
/// Only topics named in the handshake are delivered. Register handlers before
/// the remote side starts publishing; records that arrive for a topic with no
/// handler are dropped.
pub struct SocketClient {
    writer: Mutex<TcpStream>,
    dialects: HashMap<String, Dialect>,
    subscribed: Vec<String>,
    handlers: Arc<Mutex<HandlerTable>>,
    next_id: AtomicU64,
    closed: Arc<AtomicBool>,
    reader: Mutex<Option<JoinHandle<()>>>,
}

impl SocketClient {
    pub fn connect(endpoint: &str, subscribe: &[&str]) -> Result<Self, BusError> {
        let addr = resolve(endpoint)?;
        let stream = TcpStream::connect(addr).map_err(|e| BusError::ConnectionRefused(format!("{endpoint}: {e}")))?;
        stream.set_nodelay(true)?;
        let mut writer = stream.try_clone()?;
        write_json_line(&mut writer, &json!({"subscribe": subscribe, "type": "handshake"}))?;

        let mut reader = BufReader::new(stream);
        let line = read_line(&mut reader)?
            .ok_or_else(|| BusError::HandshakeMismatch("server closed during handshake".into()))?;
        let ack: Value = serde_json::from_slice(&line)
            .map_err(|e| BusError::HandshakeMismatch(format!("unreadable handshake ack: {e}")))?;
        if ack.get("type").and_then(Value::as_str) != Some("handshake_ack") {
            return Err(BusError::HandshakeMismatch("expected handshake_ack".into()));
        }
        if ack.get("accepted").and_then(Value::as_bool) != Some(true) {
            let msg = ack.get("error").and_then(Value::as_str).unwrap_or("rejected");
            return Err(BusError::HandshakeMismatch(msg.to_string()));
        }
        let mut dialects = HashMap::new();
        if let Some(table) = ack.get("topics").and_then(Value::as_object) {
            for (name, d) in table {
                let d = match d.as_str() {
                    Some("A") => Dialect::A,
                    Some("B") => Dialect::B,
                    _ => return Err(BusError::HandshakeMismatch(format!("bad dialect for `{name}`"))),
                };
                dialects.insert(name.clone(), d);
            }
        }

        let handlers: Arc<Mutex<HandlerTable>> = Arc::default();
        let closed = Arc::new(AtomicBool::new(false));
        let reader_thread = {
            let handlers = handlers.clone();
            let closed = closed.clone();
            std::thread::Builder::new().name(format!("bus-client-{endpoint}")).spawn(move || {
                while let Ok(Some(env)) = read_record(&mut reader) {
                    let targets: Vec<Handler> = handlers
                        .lock()
                        .unwrap()
                        .get(&env.channel)
                        .map(|v| v.iter().map(|(_, h)| h.clone()).collect())
                        .unwrap_or_default();
                    for h in &targets {
                        h(&env);
                    }
                }
                closed.store(true, Ordering::SeqCst);
            })?
        };

        Ok(Self {
            writer: Mutex::new(writer),
            dialects,
            subscribed: subscribe.iter().map(|s| s.to_string()).collect(),
            handlers,
            next_id: AtomicU64::new(0),
            closed,
            reader: Mutex::new(Some(reader_thread)),
        })
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Blocks until the server closes the connection.
    pub fn wait_closed(&self) {
        if let Some(t) = self.reader.lock().unwrap().take() {
            let _ = t.join();
        }
    }

    pub fn close(&self) {
        let _ = self.writer.lock().unwrap().shutdown(Shutdown::Both);
        self.wait_closed();
    }
}

impl Drop for SocketClient {
    fn drop(&mut self) {
        self.close();
    }
}

impl MessagePort for SocketClient {
    fn publish(&self, topic: &str, mut env: MessageEnvelope) -> Result<(), BusError> {
        let dialect = self.topic_dialect(topic).ok_or_else(|| BusError::UnknownTopic(topic.into()))?;
        if let Some(found) = env.payload.dialect() {
            if found != dialect {
                return Err(BusError::DialectMismatch { topic: topic.into(), expected: dialect, found });
            }
        }
        if self.is_closed() {
            return Err(BusError::Closed);
        }
        env.channel = topic.to_string();
        let bytes = encode_record(dialect, &env)?;
        self.writer.lock().unwrap().write_all(&bytes)?;
        Ok(())
    }

    fn subscribe(&self, topic: &str, handler: Handler) -> Result<SubscriptionId, BusError> {
        if !self.subscribed.iter().any(|t| t == topic) {
            return Err(BusError::UnknownTopic(topic.into()));
        }
        let id = SubscriptionId(self.next_id.fetch_add(1, Ordering::SeqCst) + 1);
        self.handlers.lock().unwrap().entry(topic.to_string()).or_default().push((id, handler));
        Ok(id)
    }

    fn unsubscribe(&self, id: SubscriptionId) {
        for list in self.handlers.lock().unwrap().values_mut() {
            list.retain(|(sid, _)| *sid != id);
        }
    }

    fn topic_dialect(&self, topic: &str) -> Option<Dialect> {
        self.dialects.get(topic).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{subscribe_queue, Topic};
    use crate::message::{ChassisB, Gear, Payload, SyncMsg, SyncOrigin, TurnSignal};
    use std::time::Duration;

    fn bus() -> Bus {
        Bus::with_topics(&[
            Topic::new("/sync/tick", Dialect::A).unwrap(),
            Topic::new("/apollo/canbus/chassis", Dialect::B).unwrap(),
        ])
        .unwrap()
    }

    fn chassis() -> MessageEnvelope {
        MessageEnvelope::new(
            "",
            1.5,
            Payload::ChassisB(ChassisB {
                speed: 20.0,
                throttle_percent: 37.0,
                brake_percent: 0.0,
                steering_percent: -3.0,
                steering_rate_percent: 0.0,
                gear: Gear::D,
                turn_signal: TurnSignal::Off,
            }),
        )
    }

    #[test]
    fn loopback_round_trip_both_dialects() {
        let bus = bus();
        let server = SocketServer::serve("127.0.0.1:0", bus.clone()).unwrap();
        let local = bus.subscribe_queue(&["/sync/tick"]).unwrap();

        let client = Arc::new(
            SocketClient::connect(&server.endpoint(), &["/sync/tick", "/apollo/canbus/chassis"]).unwrap(),
        );
        let remote = subscribe_queue(client.clone(), &["/apollo/canbus/chassis"]).unwrap();

        bus.publish("/apollo/canbus/chassis", chassis()).unwrap();
        let got = remote.recv_timeout(Duration::from_secs(5)).unwrap();
        let mut want = chassis();
        want.seq = 1;
        want.channel = "/apollo/canbus/chassis".into();
        assert_eq!(got, want);

        let tick = MessageEnvelope::new("", 0.0, Payload::Sync(SyncMsg { tick: 4, origin: SyncOrigin::Ads }));
        client.publish("/sync/tick", tick).unwrap();
        let got = local.recv_timeout(Duration::from_secs(5)).unwrap();
        assert_eq!(got.payload, Payload::Sync(SyncMsg { tick: 4, origin: SyncOrigin::Ads }));
        assert_eq!(got.seq, 1);
    }

    #[test]
    fn refused_when_nothing_listens() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let err = SocketClient::connect(&format!("127.0.0.1:{port}"), &[]).err().unwrap();
        assert!(matches!(err, BusError::ConnectionRefused(_)), "{err:?}");
    }

    #[test]
    fn unknown_topic_fails_handshake() {
        let server = SocketServer::serve("127.0.0.1:0", bus()).unwrap();
        let err = SocketClient::connect(&server.endpoint(), &["/no/such/topic"]).err().unwrap();
        assert!(matches!(err, BusError::HandshakeMismatch(ref m) if m.contains("/no/such/topic")), "{err:?}");
    }

    #[test]
    fn client_rejects_wrong_dialect_payload() {
        let server = SocketServer::serve("127.0.0.1:0", bus()).unwrap();
        let client = SocketClient::connect(&server.endpoint(), &[]).unwrap();
        let err = client.publish("/sync/tick", chassis()).unwrap_err();
        assert!(matches!(err, BusError::DialectMismatch { .. }));
    }

    #[test]
    fn server_shutdown_closes_clients() {
        let mut server = SocketServer::serve("127.0.0.1:0", bus()).unwrap();
        let client = SocketClient::connect(&server.endpoint(), &["/sync/tick"]).unwrap();
        server.shutdown();
        client.wait_closed();
        assert!(client.is_closed());
    }

    #[test]
    fn mixed_stream_reader() {
        let mut env = chassis();
        env.channel = "/apollo/canbus/chassis".into();
        let mut bytes = encode_record(Dialect::B, &env).unwrap();
        let tick = MessageEnvelope::new("/sync/tick", 0.0, Payload::Sync(SyncMsg { tick: 1, origin: SyncOrigin::Dynamics }));
        bytes.extend(encode_record(Dialect::A, &tick).unwrap());
        let mut r = BufReader::new(&bytes[..]);
        assert!(matches!(read_record(&mut r).unwrap().unwrap().payload, Payload::ChassisB(_)));
        assert!(matches!(read_record(&mut r).unwrap().unwrap().payload, Payload::Sync(_)));
        assert!(read_record(&mut r).unwrap().is_none());
    }
}
