//! Agent protocol: newline-delimited JSON messages over TCP, a file-based
//! registry of running interpreters, the interpreter-side server and the
//! agent-side client.
//!
//! Every message is `{"v":"oi/1","id":N,"kind":K,"payload":P}`. A request
//! is answered by exactly one `MopResponse`, `OnceDone` or `Error` carrying
//! the same id. A `HookEvent` is answered by one `Resume` with the event's id.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mop::{apply, apply_batch, node_info, MopError, MopOp, MopResult, NodeInfo};
use crate::nvm::{AgentId, AgentLink, HookEvent, HookKind, HookReply, Interp, InterpHandle, RegId, RuntimeError};
use crate::parser::NodeId;
use crate::patterns::{compile_pattern, Binding};

pub const VERSION: &str = "oi/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Body {
    Register { bindings: Vec<Binding>, pattern: String, hook: HookKind, role: String },
    /// Removes the registration, or only its hook at `anchor`.
    Unregister { registration: RegId, anchor: Option<NodeId> },
    HookEvent { registration: RegId, hook: HookKind, role: String, anchor: NodeInfo, env: BTreeMap<String, NodeInfo> },
    Resume { note: Option<String> },
    MopRequest(MopOp),
    MopResponse(MopResult),
    /// `hold` keeps the interpreter paused after the batch until a
    /// `Resume` carrying this message's id arrives.
    Once { commands: Vec<MopOp>, hold: bool },
    OnceDone { results: Vec<MopResult> },
    InterpreterChanged { spec_version: u64, cause: String },
    Error(MopError),
    /// The agent finished its setup; counted by `--wait-agents`.
    Ready,
    /// The interpreter completed its roles and is serving agents only.
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub v: String,
    pub id: u64,
    #[serde(flatten)]
    pub body: Body,
}

impl Message {
    pub fn new(id: u64, body: Body) -> Self {
        Message { v: VERSION.to_string(), id, body }
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }

    pub fn decode(line: &str) -> Result<Message, WireError> {
        let m: Message = serde_json::from_str(line).map_err(|e| WireError::Protocol(e.to_string()))?;
        if m.v != VERSION {
            return Err(WireError::Protocol(format!("unsupported protocol version {}", m.v)));
        }
        Ok(m)
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("interpreter {0} is already registered by a live process")]
    NameTaken(String),
    #[error("interpreter {0} not found in registry")]
    NotFound(String),
    #[error("remote error: {0}")]
    Remote(MopError),
    #[error("connection closed")]
    Closed,
}

// ---- registry ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    pub host: String,
    pub port: u16,
    pub pid: u32,
    /// Milliseconds since the Unix epoch.
    #[serde(rename = "startedAt")]
    pub started_at: u64,
}

pub fn pid_alive(pid: u32) -> bool {
    if cfg!(target_os = "linux") {
        Path::new(&format!("/proc/{pid}")).exists()
    } else {
        true
    }
}

#[derive(Debug, Clone)]
pub struct Registry {
    dir: PathBuf,
}

/// A published entry; its file is removed on drop.
#[derive(Debug)]
pub struct Published {
    pub entry: RegistryEntry,
    path: PathBuf,
}

impl Drop for Published {
    fn drop(&mut self) {
        let ours = fs::read_to_string(&self.path)
            .ok()
            .and_then(|t| serde_json::from_str::<RegistryEntry>(&t).ok())
            .is_some_and(|e| e == self.entry);
        if ours {
            let _ = fs::remove_file(&self.path);
        }
    }
}

impl Registry {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Registry { dir: dir.into() }
    }

    /// `$OI_REGISTRY_DIR`, else `~/.oi-registry`.
    pub fn from_env() -> Self {
        if let Some(dir) = std::env::var_os("OI_REGISTRY_DIR") {
            return Registry::new(dir);
        }
        let home = std::env::var_os("HOME").map_or_else(|| PathBuf::from("."), PathBuf::from);
        Registry::new(home.join(".oi-registry"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.json"))
    }

    pub fn publish(&self, name: &str, port: u16) -> Result<Published, WireError> {
        self.publish_as(name, port, std::process::id())
    }

    /// Stale entries (dead pid) are overwritten; live ones are an error.
    pub fn publish_as(&self, name: &str, port: u16, pid: u32) -> Result<Published, WireError> {
        if let Some(existing) = self.lookup(name)? {
            if existing.pid != pid {
                return Err(WireError::NameTaken(name.to_string()));
            }
        }
        fs::create_dir_all(&self.dir)?;
        let started_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        let entry = RegistryEntry { name: name.to_string(), host: "127.0.0.1".into(), port, pid, started_at };
        let path = self.path(name);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(&entry).expect("entry serializes"))?;
        fs::rename(&tmp, &path)?;
        Ok(Published { entry, path })
    }

    /// The live entry for `name`, if any.
    pub fn lookup(&self, name: &str) -> Result<Option<RegistryEntry>, WireError> {
        match fs::read_to_string(self.path(name)) {
            Ok(text) => {
                let entry: RegistryEntry = serde_json::from_str(&text).map_err(|e| WireError::Protocol(e.to_string()))?;
                Ok(pid_alive(entry.pid).then_some(entry))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// All live entries, sorted by name.
    pub fn list(&self) -> Vec<RegistryEntry> {
        let Ok(dir) = fs::read_dir(&self.dir) else { return Vec::new() };
        let mut out: Vec<RegistryEntry> = dir
            .flatten()
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().strip_suffix(".json")?.to_string();
                self.lookup(&name).ok().flatten()
            })
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }
}

// ---- server ------------------------------------------------------------------

type Writer = Arc<Mutex<TcpStream>>;

fn send(writer: &Writer, msg: &Message) -> bool {
    let mut line = msg.encode();
    line.push('\n');
    let mut w = writer.lock().unwrap();
    w.write_all(line.as_bytes()).and_then(|_| w.flush()).is_ok()
}

/// Server-chosen message ids (hook events, notifications), unique per server.
type EventIds = Arc<AtomicU64>;

/// Interpreter-side stand-in for a remote agent.
struct RemoteAgent {
    writer: Writer,
    ids: EventIds,
}

impl RemoteAgent {
    fn event_id(&self) -> u64 {
        self.ids.fetch_add(1, Ordering::Relaxed)
    }
}

impl AgentLink for RemoteAgent {
    fn on_hook(&mut self, interp: &mut Interp, event: &HookEvent) -> HookReply {
        let Ok(anchor) = node_info(interp, event.anchor) else { return HookReply::Resumed };
        let env = event
            .env
            .iter()
            .filter_map(|(k, n)| Some((k.clone(), node_info(interp, *n).ok()?)))
            .collect();
        let id = self.event_id();
        let body = Body::HookEvent { registration: event.registration, hook: event.hook, role: event.role.clone(), anchor, env };
        if send(&self.writer, &Message::new(id, body)) {
            HookReply::Await(id)
        } else {
            HookReply::Disconnected
        }
    }

    fn on_changed(&mut self, version: u64, cause: &str) {
        send(&self.writer, &Message::new(self.event_id(), Body::InterpreterChanged { spec_version: version, cause: cause.to_string() }));
    }

    fn on_idle(&mut self) {
        send(&self.writer, &Message::new(self.event_id(), Body::Idle));
    }
}

fn reply(writer: &Writer, id: u64, result: Result<MopResult, MopError>) {
    let body = match result {
        Ok(r) => Body::MopResponse(r),
        Err(e) => Body::Error(e),
    };
    send(writer, &Message::new(id, body));
}

/// Turns one incoming message into a safe-point op.
fn dispatch(handle: &InterpHandle, agent: AgentId, writer: &Writer, msg: Message) {
    let w = writer.clone();
    let id = msg.id;
    match msg.body {
        Body::Register { bindings, pattern, hook, role } => {
            let compiled = compile_pattern(&bindings, &pattern);
            handle.enqueue(move |interp: &mut Interp| {
                let result = compiled
                    .map_err(|e| MopError::new("BadPattern", e.to_string()))
                    .and_then(|p| interp.register(agent, p, hook, &role))
                    .map(|(registration, anchors)| MopResult::Registered { registration, anchors });
                reply(&w, id, result);
            });
        }
        Body::Unregister { registration, anchor } => {
            handle.enqueue(move |interp: &mut Interp| {
                let remaining = interp.unregister(registration, anchor);
                reply(&w, id, Ok(MopResult::Unregistered { remaining }));
            });
        }
        Body::Resume { .. } => {
            handle.enqueue(move |interp: &mut Interp| interp.mark_resumed(agent, id));
        }
        Body::MopRequest(op) => {
            handle.enqueue(move |interp: &mut Interp| reply(&w, id, apply(interp, op)));
        }
        Body::Once { commands, hold } => {
            handle.enqueue(move |interp: &mut Interp| match apply_batch(interp, commands) {
                Ok(results) => {
                    send(&w, &Message::new(id, Body::OnceDone { results }));
                    if hold {
                        interp.wait_for_resume(agent, id);
                    }
                }
                Err(e) => {
                    send(&w, &Message::new(id, Body::Error(e)));
                }
            });
        }
        Body::Ready => {
            handle.enqueue(|interp: &mut Interp| interp.mark_ready());
        }
        other => {
            let e = MopError::new("Protocol", format!("unexpected message kind from agent: {}", kind_name(&other)));
            send(writer, &Message::new(id, Body::Error(e)));
        }
    }
}

pub fn kind_name(body: &Body) -> String {
    let v = serde_json::to_value(body).unwrap_or_default();
    v["kind"].as_str().unwrap_or("?").to_string()
}

fn serve_connection(stream: TcpStream, handle: InterpHandle, ids: EventIds) {
    let agent = AgentId::fresh();
    let Ok(write_half) = stream.try_clone() else { return };
    let writer: Writer = Arc::new(Mutex::new(write_half));
    let link = RemoteAgent { writer: writer.clone(), ids };
    handle.enqueue(move |interp: &mut Interp| interp.attach_agent(agent, Box::new(link)));
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match Message::decode(&line) {
            Ok(msg) => dispatch(&handle, agent, &writer, msg),
            Err(e) => {
                send(&writer, &Message::new(0, Body::Error(MopError::new("Protocol", e.to_string()))));
            }
        }
    }
    handle.enqueue(move |interp: &mut Interp| interp.detach_agent(agent));
}

/// TCP listener feeding agent messages into an interpreter's op queue.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    /// Binds `127.0.0.1:port` (0 picks a free port).
    pub fn start(port: u16, handle: InterpHandle) -> std::io::Result<Server> {
        let listener = TcpListener::bind(("127.0.0.1", port))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
        let (stop2, conns2) = (stop.clone(), conns.clone());
        let ids: EventIds = Arc::new(AtomicU64::new(1));
        let thread = std::thread::spawn(move || {
            while !stop2.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = stream.set_nonblocking(false);
                        let _ = stream.set_nodelay(true);
                        if let Ok(c) = stream.try_clone() {
                            conns2.lock().unwrap().push(c);
                        }
                        let (h, ids) = (handle.clone(), ids.clone());
                        std::thread::spawn(move || serve_connection(stream, h, ids));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
                    Err(_) => std::thread::sleep(Duration::from_millis(5)),
                }
            }
        });
        Ok(Server { addr, stop, conns, thread: Some(thread) })
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    /// Stops accepting and closes every open connection.
    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        for c in self.conns.lock().unwrap().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Debug, Clone)]
pub struct OpenOptions {
    pub port: u16,
    pub name: Option<String>,
    pub registry: Registry,
    /// Number of `Ready` messages to await before execution starts.
    pub wait_agents: usize,
    pub ready_timeout: Duration,
    /// How long to keep serving after execution once no agent is connected.
    pub linger: Duration,
}

impl Default for OpenOptions {
    fn default() -> Self {
        OpenOptions {
            port: 0,
            name: None,
            registry: Registry::from_env(),
            wait_agents: 0,
            ready_timeout: Duration::from_secs(30),
            linger: Duration::ZERO,
        }
    }
}

#[derive(Debug, Error)]
pub enum OpenError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("timed out waiting for {0} agent(s)")]
    AgentTimeout(usize),
}

/// Runs the interpreter with a bound port: serve, publish, optionally wait
/// for agents, execute every role, then serve until idle. `started` is
/// called with the op-queue handle and port once the server is up.
pub fn run_open(interp: &mut Interp, opts: &OpenOptions, started: impl FnOnce(&InterpHandle, u16)) -> Result<(), OpenError> {
    let mut server = Server::start(opts.port, interp.handle()).map_err(WireError::from)?;
    let _published = match &opts.name {
        Some(name) => Some(opts.registry.publish(name, server.port())?),
        None => None,
    };
    started(&interp.handle(), server.port());
    if opts.wait_agents > 0 && !interp.wait_for_ready(opts.wait_agents, opts.ready_timeout) {
        server.stop();
        return Err(OpenError::AgentTimeout(opts.wait_agents));
    }
    let result = interp.run();
    if let Err(e) = &result {
        interp.report_error(e.clone());
    }
    interp.serve_idle(opts.linger);
    server.stop();
    result.map_err(OpenError::from)
}

// ---- client ------------------------------------------------------------------

/// Agent-side connection. Responses are matched to requests by id; other
/// messages received meanwhile are queued for [`Client::next_event`].
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
    pending: VecDeque<Message>,
    transcript: Option<Vec<Message>>,
}

impl Client {
    pub fn connect(addr: impl std::net::ToSocketAddrs) -> Result<Client, WireError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            next_id: 1,
            pending: VecDeque::new(),
            transcript: None,
        })
    }

    pub fn connect_target(registry: &Registry, name: &str) -> Result<Client, WireError> {
        let entry = registry.lookup(name)?.ok_or_else(|| WireError::NotFound(name.to_string()))?;
        Client::connect((entry.host.as_str(), entry.port))
    }

    /// Records every message sent from now on.
    pub fn record_transcript(&mut self) {
        self.transcript = Some(Vec::new());
    }

    pub fn transcript(&self) -> &[Message] {
        self.transcript.as_deref().unwrap_or(&[])
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> Result<(), WireError> {
        self.writer.set_read_timeout(t)?;
        Ok(())
    }

    pub fn send_with_id(&mut self, id: u64, body: Body) -> Result<(), WireError> {
        let msg = Message::new(id, body);
        if let Some(t) = &mut self.transcript {
            t.push(msg.clone());
        }
        let mut line = msg.encode();
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn send(&mut self, body: Body) -> Result<u64, WireError> {
        let id = self.next_id;
        self.next_id += 1;
        self.send_with_id(id, body)?;
        Ok(id)
    }

    fn read(&mut self) -> Result<Message, WireError> {
        let mut line = String::new();
        loop {
            line.clear();
            if self.reader.read_line(&mut line)? == 0 {
                return Err(WireError::Closed);
            }
            if !line.trim().is_empty() {
                return Message::decode(line.trim_end());
            }
        }
    }

    /// Sends a request and waits for its response.
    pub fn request(&mut self, body: Body) -> Result<Body, WireError> {
        let id = self.send(body)?;
        loop {
            let msg = self.read()?;
            let is_response = matches!(msg.body, Body::MopResponse(_) | Body::OnceDone { .. } | Body::Error(_));
            if msg.id == id && is_response {
                return match msg.body {
                    Body::Error(e) => Err(WireError::Remote(e)),
                    body => Ok(body),
                };
            }
            if is_response && msg.id == 0 {
                if let Body::Error(e) = msg.body {
                    return Err(WireError::Remote(e));
                }
            }
            self.pending.push_back(msg);
        }
    }

    pub fn mop(&mut self, op: MopOp) -> Result<MopResult, WireError> {
        match self.request(Body::MopRequest(op))? {
            Body::MopResponse(r) => Ok(r),
            other => Err(WireError::Protocol(format!("unexpected {}", kind_name(&other)))),
        }
    }

    pub fn register(&mut self, bindings: Vec<Binding>, pattern: &str, hook: HookKind, role: &str) -> Result<(RegId, usize), WireError> {
        let body = Body::Register { bindings, pattern: pattern.to_string(), hook, role: role.to_string() };
        match self.request(body)? {
            Body::MopResponse(MopResult::Registered { registration, anchors }) => Ok((registration, anchors)),
            other => Err(WireError::Protocol(format!("unexpected {}", kind_name(&other)))),
        }
    }

    /// Returns the number of anchors the registration still has.
    pub fn unregister(&mut self, registration: RegId, anchor: Option<NodeId>) -> Result<usize, WireError> {
        match self.request(Body::Unregister { registration, anchor })? {
            Body::MopResponse(MopResult::Unregistered { remaining }) => Ok(remaining),
            other => Err(WireError::Protocol(format!("unexpected {}", kind_name(&other)))),
        }
    }

    /// Runs `commands` as one batch. With `hold`, the interpreter stays
    /// paused until [`Client::resume`] is called with the returned id.
    pub fn once(&mut self, commands: Vec<MopOp>, hold: bool) -> Result<(u64, Vec<MopResult>), WireError> {
        let id = self.next_id;
        match self.request(Body::Once { commands, hold })? {
            Body::OnceDone { results } => Ok((id, results)),
            other => Err(WireError::Protocol(format!("unexpected {}", kind_name(&other)))),
        }
    }

    pub fn resume(&mut self, event_id: u64, note: Option<String>) -> Result<(), WireError> {
        self.send_with_id(event_id, Body::Resume { note })
    }

    pub fn ready(&mut self) -> Result<(), WireError> {
        self.send(Body::Ready).map(|_| ())
    }

    /// Next unsolicited message; `None` once the interpreter closed the
    /// connection.
    pub fn next_event(&mut self) -> Result<Option<Message>, WireError> {
        if let Some(m) = self.pending.pop_front() {
            return Ok(Some(m));
        }
        match self.read() {
            Ok(m) => Ok(Some(m)),
            Err(WireError::Closed) => Ok(None),
            Err(WireError::Io(e)) if e.kind() == std::io::ErrorKind::ConnectionReset => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_encoding_shape() {
        let m = Message::new(3, Body::Ready);
        let v: serde_json::Value = serde_json::from_str(&m.encode()).unwrap();
        assert_eq!(v["v"], "oi/1");
        assert_eq!(v["id"], 3);
        assert_eq!(v["kind"], "Ready");
        let r = Message::new(4, Body::MopRequest(MopOp::GetRoles));
        let v: serde_json::Value = serde_json::from_str(&r.encode()).unwrap();
        assert_eq!(v["payload"]["op"], "getRoles");
        assert_eq!(Message::decode(&r.encode()).unwrap(), r);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let line = r#"{"v":"oi/0","id":1,"kind":"Ready"}"#;
        assert!(matches!(Message::decode(line), Err(WireError::Protocol(_))));
    }

    #[test]
    fn registry_publish_lookup_drop() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::new(dir.path());
        let p = reg.publish("calc", 7001).unwrap();
        assert!(dir.path().join("calc.json").exists());
        assert_eq!(reg.lookup("calc").unwrap().unwrap().port, 7001);
        assert!(matches!(reg.publish_as("calc", 7002, 1), Err(WireError::NameTaken(_))));
        drop(p);
        assert!(reg.lookup("calc").unwrap().is_none());
        assert!(!dir.path().join("calc.json").exists());
    }
}
