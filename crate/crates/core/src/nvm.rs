//! The virtual machine: role execution as demand-driven tree visits, hook
//! tables, endemic state and the safe-point operation queue.
//!
//! Each visit is: drain queued operations, fire Before hooks, run the bound
//! action (a per-node override wins over the slice binding; without either
//! the children are visited in order), fire After hooks. After hooks are
//! skipped when the action aborts.

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::lang::{replace_component, ActionKey, Language, LanguageSpec, Slice, TokenClass};
use crate::mop::MopError;
use crate::parser::{parse_source, NodeId, Span, SyntaxError, TokenKind, Tree};
use crate::patterns::{eval_constraints, match_nodes, AttrSource, TreePattern};
use crate::value::Value;

pub type ActionFn = fn(&mut Interp, NodeId) -> Result<(), Abort>;
pub type EndemicFactory = fn(&InterpConfig) -> Box<dyn Any>;
pub type EndemicOp = fn(&mut Interp, &[Value]) -> Result<Value, RuntimeError>;
pub type SafePointOp = Box<dyn FnOnce(&mut Interp) + Send>;

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeError {
    pub message: String,
    pub span: Option<Span>,
    /// Enriched frames, innermost first.
    pub trace: Vec<String>,
}

impl RuntimeError {
    pub fn new(message: impl Into<String>) -> Self {
        RuntimeError { message: message.into(), span: None, trace: Vec::new() }
    }
}

impl fmt::Display for RuntimeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "runtime error: {}", self.message)?;
        if let Some(span) = self.span {
            write!(f, " at {span}")?;
        }
        for frame in &self.trace {
            write!(f, "\n    at {frame}")?;
        }
        Ok(())
    }
}

impl std::error::Error for RuntimeError {}

/// Non-local exits out of an action.
#[derive(Debug, Clone, PartialEq)]
pub enum Abort {
    Return(Value),
    Error(RuntimeError),
}

impl From<RuntimeError> for Abort {
    fn from(e: RuntimeError) -> Self {
        Abort::Error(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HookKind {
    Before,
    After,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentId(pub u64);

impl AgentId {
    /// Process-wide unique id.
    pub fn fresh() -> AgentId {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        AgentId(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

pub type Env = BTreeMap<String, NodeId>;

#[derive(Debug, Clone)]
pub struct Registration {
    pub id: RegId,
    pub agent: AgentId,
    pub pattern: TreePattern,
    pub hook: HookKind,
    pub role: String,
    pub anchors: BTreeMap<NodeId, Env>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HookEvent {
    pub registration: RegId,
    pub hook: HookKind,
    pub role: String,
    pub anchor: NodeId,
    pub env: Env,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookReply {
    Resumed,
    /// Block until the given resume arrives through the op queue.
    Await(u64),
    Disconnected,
}

/// The interpreter-side end of an agent connection.
pub trait AgentLink {
    fn on_hook(&mut self, interp: &mut Interp, event: &HookEvent) -> HookReply;
    fn on_changed(&mut self, _version: u64, _cause: &str) {}
    fn on_idle(&mut self) {}
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecState {
    pub current_role: Option<String>,
    pub current_node: Option<NodeId>,
    pub paused: bool,
    pub spec_version: u64,
    /// All roles have completed at least once.
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Visit { node: NodeId, role: String },
    Notify { node: NodeId, hook: HookKind, registration: RegId },
    Action { node: NodeId, key: Option<ActionKey> },
    Leave { node: NodeId },
    Batch { version: u64, cause: String },
}

#[derive(Debug, Clone)]
pub struct InterpConfig {
    pub store_dir: PathBuf,
}

impl Default for InterpConfig {
    fn default() -> Self {
        let store_dir = std::env::var_os("OI_STORE_DIR").map_or_else(|| PathBuf::from("./oi-store"), PathBuf::from);
        InterpConfig { store_dir }
    }
}

/// Receiving end of the safe-point queue.
pub struct OpQueue {
    rx: Receiver<SafePointOp>,
    tx: Sender<SafePointOp>,
    shutdown: Arc<AtomicBool>,
}

/// Cloneable, thread-safe access to a running interpreter.
#[derive(Clone)]
pub struct InterpHandle {
    tx: Sender<SafePointOp>,
    shutdown: Arc<AtomicBool>,
}

pub struct Ticket<R>(Receiver<R>);

impl<R> Ticket<R> {
    /// `None` if the interpreter dropped the op without running it.
    pub fn wait(self) -> Option<R> {
        self.0.recv().ok()
    }

    pub fn wait_timeout(self, timeout: Duration) -> Option<R> {
        self.0.recv_timeout(timeout).ok()
    }
}

pub fn op_queue() -> (InterpHandle, OpQueue) {
    let (tx, rx) = mpsc::channel();
    let shutdown = Arc::new(AtomicBool::new(false));
    (InterpHandle { tx: tx.clone(), shutdown: shutdown.clone() }, OpQueue { rx, tx, shutdown })
}

impl InterpHandle {
    /// Queues `f` to run at the next safe point; FIFO.
    pub fn enqueue<R, F>(&self, f: F) -> Ticket<R>
    where
        R: Send + 'static,
        F: FnOnce(&mut Interp) -> R + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        let _ = self.tx.send(Box::new(move |interp: &mut Interp| {
            let _ = tx.send(f(interp));
        }));
        Ticket(rx)
    }

    pub fn shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = self.tx.send(Box::new(|_: &mut Interp| {}));
    }
}

/// A `Write` sink that can be read back while the interpreter holds it.
#[derive(Clone, Default)]
pub struct SharedOutput(Arc<Mutex<Vec<u8>>>);

impl SharedOutput {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> String {
        String::from_utf8_lossy(&self.0.lock().unwrap()).into_owned()
    }
}

impl Write for SharedOutput {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// State captured before a batch so it can be rolled back whole.
struct Snapshot {
    spec: Arc<LanguageSpec>,
    overrides: BTreeMap<(NodeId, String), ActionKey>,
    attrs: Vec<BTreeMap<(String, String), Value>>,
    redo_queue: VecDeque<String>,
}

pub struct Interp {
    spec: Arc<LanguageSpec>,
    registry: Arc<BTreeMap<String, Slice>>,
    tree: Tree,
    source: String,
    attrs: Vec<BTreeMap<(String, String), Value>>,
    overrides: BTreeMap<(NodeId, String), ActionKey>,
    registrations: BTreeMap<RegId, Registration>,
    hooks: HashMap<(NodeId, String, HookKind), Vec<RegId>>,
    agents: BTreeMap<AgentId, Box<dyn AgentLink>>,
    endemics: HashMap<String, Box<dyn Any>>,
    state: ExecState,
    out: Box<dyn Write>,
    queue: OpQueue,
    log: Option<Vec<Event>>,
    probe: Option<Box<dyn FnMut(&Interp)>>,
    resumed: HashSet<(AgentId, u64)>,
    redo_queue: VecDeque<String>,
    ready: usize,
    next_reg: u64,
    errors: Vec<RuntimeError>,
    config: InterpConfig,
}

impl Interp {
    /// Lexes and parses `source`, creates endemic state and runs the actions
    /// bound in the "syntax" role.
    pub fn new(language: &Language, source: &str, config: InterpConfig) -> Result<Interp, SyntaxError> {
        let spec = Arc::new(language.spec.clone());
        let tree = parse_source(source, &spec)?;
        let mut endemics: HashMap<String, Box<dyn Any>> = HashMap::new();
        for e in &spec.endemics {
            if let Some(factory) = spec.catalog.get_factory(&e.state_factory) {
                endemics.insert(e.binding_id.clone(), factory(&config));
            }
        }
        let (_, queue) = op_queue();
        let mut interp = Interp {
            attrs: vec![BTreeMap::new(); tree.len()],
            spec,
            registry: Arc::new(language.registry.clone()),
            tree,
            source: source.to_string(),
            overrides: BTreeMap::new(),
            registrations: BTreeMap::new(),
            hooks: HashMap::new(),
            agents: BTreeMap::new(),
            endemics,
            state: ExecState::default(),
            out: Box::new(std::io::sink()),
            queue,
            log: None,
            probe: None,
            resumed: HashSet::new(),
            redo_queue: VecDeque::new(),
            ready: 0,
            next_reg: 1,
            errors: Vec::new(),
            config,
        };
        if interp.spec.role_order.first().map(String::as_str) == Some("syntax") {
            if let Err(e) = interp.run_role("syntax") {
                interp.errors.push(e);
            }
        }
        Ok(interp)
    }

    pub fn with_output(mut self, out: impl Write + 'static) -> Self {
        self.out = Box::new(out);
        self
    }

    /// Replaces the safe-point queue, e.g. with one whose handle was already
    /// given to a server thread.
    pub fn with_queue(mut self, queue: OpQueue) -> Self {
        self.queue = queue;
        self
    }

    pub fn handle(&self) -> InterpHandle {
        InterpHandle { tx: self.queue.tx.clone(), shutdown: self.queue.shutdown.clone() }
    }

    pub fn enable_log(&mut self) {
        self.log = Some(Vec::new());
    }

    pub fn take_log(&mut self) -> Vec<Event> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Installs a callback run at every visit right after the safe point.
    pub fn set_probe(&mut self, probe: impl FnMut(&Interp) + 'static) {
        self.probe = Some(Box::new(probe));
    }

    fn record(&mut self, event: impl FnOnce() -> Event) {
        if let Some(log) = &mut self.log {
            log.push(event());
        }
    }

    pub fn spec(&self) -> &LanguageSpec {
        &self.spec
    }

    pub fn slice_registry(&self) -> &BTreeMap<String, Slice> {
        &self.registry
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn state(&self) -> &ExecState {
        &self.state
    }

    pub fn config(&self) -> &InterpConfig {
        &self.config
    }

    /// Runtime errors reported by completed roles.
    pub fn errors(&self) -> &[RuntimeError] {
        &self.errors
    }

    // ---- roles ------------------------------------------------------------

    /// Runs every role after "syntax" in order, then any queued redo.
    pub fn run(&mut self) -> Result<(), RuntimeError> {
        let roles: Vec<String> = self.spec.role_order.iter().skip(1).cloned().collect();
        for role in roles {
            self.run_role(&role)?;
            self.drain_redos();
        }
        self.state.finished = true;
        Ok(())
    }

    /// One visit of the whole tree in `role`.
    pub fn run_role(&mut self, role: &str) -> Result<(), RuntimeError> {
        if self.spec.role_index(role).is_none() {
            return Err(RuntimeError::new(format!("unknown role {role}")));
        }
        self.state.current_role = Some(role.to_string());
        let result = self.visit(self.tree.root());
        self.state.current_role = None;
        self.state.current_node = None;
        match result {
            Ok(()) | Err(Abort::Return(_)) => Ok(()),
            Err(Abort::Error(e)) => Err(e),
        }
    }

    /// Queues a re-execution of `role`; it starts once no role is running.
    pub fn request_redo(&mut self, role: &str) -> Result<(), MopError> {
        if self.spec.role_index(role).is_none() {
            return Err(MopError::new("UnknownRole", format!("unknown role {role}")));
        }
        self.redo_queue.push_back(role.to_string());
        Ok(())
    }

    /// Re-executes `role` from the root now. Attributes are overwritten,
    /// endemic state is kept.
    pub fn redo_role(&mut self, role: &str) -> Result<(), RuntimeError> {
        let saved = (self.state.current_role.take(), self.state.current_node.take());
        let r = self.run_role(role);
        (self.state.current_role, self.state.current_node) = saved;
        r
    }

    fn drain_redos(&mut self) {
        if self.state.current_role.is_some() {
            return;
        }
        while let Some(role) = self.redo_queue.pop_front() {
            if let Err(e) = self.run_role(&role) {
                self.report_error(e);
            }
        }
    }

    pub fn report_error(&mut self, e: RuntimeError) {
        let _ = writeln!(std::io::stderr(), "{e}");
        self.errors.push(e);
    }

    // ---- visiting ---------------------------------------------------------

    pub fn safe_point(&mut self) {
        while let Ok(op) = self.queue.rx.try_recv() {
            op(self);
        }
    }

    pub fn visit(&mut self, node: NodeId) -> Result<(), Abort> {
        if self.tree.node(node).token().is_some() {
            return Ok(());
        }
        self.safe_point();
        if let Some(mut probe) = self.probe.take() {
            probe(self);
            self.probe = Some(probe);
        }
        let role = self.state.current_role.clone().unwrap_or_default();
        let outer = self.state.current_node.replace(node);
        self.record(|| Event::Visit { node, role: role.clone() });

        self.fire(node, &role, HookKind::Before);
        let key = self.resolve_action(node, &role);
        self.record(|| Event::Action { node, key: key.clone() });
        let result = match &key {
            Some(k) => match self.spec.catalog.func(k) {
                Some(f) => f(self, node),
                None => Err(Abort::Error(RuntimeError::new(format!("action {k} has no implementation")))),
            },
            None => self.default_visit(node),
        };
        let result = result.map_err(|abort| match abort {
            Abort::Error(mut e) => {
                e.span.get_or_insert(self.tree.node(node).span);
                Abort::Error(e)
            }
            other => other,
        });
        if result.is_ok() {
            self.fire(node, &role, HookKind::After);
        }
        self.record(|| Event::Leave { node });
        self.state.current_node = outer;
        result
    }

    fn default_visit(&mut self, node: NodeId) -> Result<(), Abort> {
        for i in 0..self.tree.node(node).children.len() {
            self.eval_child(node, i)?;
        }
        Ok(())
    }

    /// Visits the `index`-th child (body position) of `node`. Token children
    /// need no evaluation.
    pub fn eval_child(&mut self, node: NodeId, index: usize) -> Result<(), Abort> {
        let child = self.child(node, index)?;
        self.visit(child)
    }

    /// Evaluates a child and returns its attribute `name`.
    pub fn eval_child_attr(&mut self, node: NodeId, index: usize, name: &str) -> Result<Value, Abort> {
        self.eval_child(node, index)?;
        Ok(self.child_attr(node, index, name)?)
    }

    pub fn child(&self, node: NodeId, index: usize) -> Result<NodeId, RuntimeError> {
        self.tree
            .node(node)
            .children
            .get(index)
            .copied()
            .ok_or_else(|| RuntimeError::new(format!("node {node} has no child {index}")))
    }

    /// The override for `(node, role)` if any, else the slice binding.
    pub fn resolve_action(&self, node: NodeId, role: &str) -> Option<ActionKey> {
        if let Some(k) = self.overrides.get(&(node, role.to_string())) {
            return Some(k.clone());
        }
        let pid = self.tree.node(node).production()?;
        self.spec.binding(role, pid).cloned()
    }

    pub fn has_override(&self, node: NodeId, role: &str) -> bool {
        self.overrides.contains_key(&(node, role.to_string()))
    }

    // ---- attributes -------------------------------------------------------

    fn token_attr(&self, node: NodeId, name: &str) -> Option<Value> {
        let tok = self.tree.node(node).token()?;
        match name {
            "lexeme" => Some(Value::Str(tok.text())),
            "val" if tok.kind == TokenKind::Class(TokenClass::Num) => tok.number().map(Value::Number),
            _ => None,
        }
    }

    fn active_role(&self) -> String {
        self.state
            .current_role
            .clone()
            .or_else(|| self.spec.role_order.last().cloned())
            .unwrap_or_default()
    }

    /// Attribute in `role`, falling back to earlier roles.
    pub fn attr_in(&self, node: NodeId, role: &str, name: &str) -> Option<Value> {
        if let Some(v) = self.token_attr(node, name) {
            return Some(v);
        }
        let slot = self.attrs.get(node.0)?;
        let idx = self.spec.role_index(role)?;
        self.spec.role_order[..=idx]
            .iter()
            .rev()
            .find_map(|r| slot.get(&(r.clone(), name.to_string())).cloned())
    }

    /// Attribute in the current role (the last role when idle).
    pub fn attr(&self, node: NodeId, name: &str) -> Option<Value> {
        self.attr_in(node, &self.active_role(), name)
    }

    pub fn child_attr(&self, node: NodeId, index: usize, name: &str) -> Result<Value, RuntimeError> {
        let child = self.child(node, index)?;
        self.attr(child, name)
            .ok_or_else(|| RuntimeError::new(format!("attribute {name} missing on child {index} of {node}")))
    }

    /// Decoded text of a token child.
    pub fn lexeme(&self, node: NodeId, index: usize) -> Result<String, RuntimeError> {
        let child = self.child(node, index)?;
        match self.tree.node(child).token() {
            Some(t) => Ok(t.text()),
            None => Err(RuntimeError::new(format!("child {index} of {node} is not a token"))),
        }
    }

    pub fn set_attr(&mut self, node: NodeId, name: &str, value: Value) {
        let role = self.active_role();
        self.set_attr_in(node, &role, name, value);
    }

    pub fn set_attr_in(&mut self, node: NodeId, role: &str, name: &str, value: Value) {
        if let Some(slot) = self.attrs.get_mut(node.0) {
            slot.insert((role.to_string(), name.to_string()), value);
        }
    }

    /// All stored attributes of a node as `(role, name, value)`.
    pub fn node_attrs(&self, node: NodeId) -> Vec<(String, String, Value)> {
        let mut v: Vec<_> = self
            .attrs
            .get(node.0)
            .map(|m| m.iter().map(|((r, n), v)| (r.clone(), n.clone(), v.clone())).collect())
            .unwrap_or_default();
        if self.tree.get(node).and_then(|n| n.token()).is_some() {
            for name in ["lexeme", "val"] {
                if let Some(val) = self.token_attr(node, name) {
                    v.push(("syntax".into(), name.into(), val));
                }
            }
        }
        v
    }

    // ---- output & endemics -------------------------------------------------

    pub fn print(&mut self, text: &str) {
        let _ = writeln!(self.out, "{text}");
        let _ = self.out.flush();
    }

    pub fn endemic_any(&mut self, binding_id: &str) -> Result<&mut Box<dyn Any>, RuntimeError> {
        self.endemics
            .get_mut(binding_id)
            .ok_or_else(|| RuntimeError::new(format!("unknown endemic {binding_id}")))
    }

    /// The singleton state bound to `binding_id`.
    pub fn endemic<T: 'static>(&mut self, binding_id: &str) -> Result<&mut T, RuntimeError> {
        self.endemic_any(binding_id)?
            .downcast_mut::<T>()
            .ok_or_else(|| RuntimeError::new(format!("endemic {binding_id} has an unexpected type")))
    }

    /// Temporarily removes endemic state so host code can use it alongside
    /// `&mut Interp`. Must be paired with [`Interp::put_endemic`].
    pub fn take_endemic<T: 'static>(&mut self, binding_id: &str) -> Result<Box<T>, RuntimeError> {
        let b = self
            .endemics
            .remove(binding_id)
            .ok_or_else(|| RuntimeError::new(format!("unknown endemic {binding_id}")))?;
        b.downcast::<T>().map_err(|b| {
            self.endemics.insert(binding_id.to_string(), b);
            RuntimeError::new(format!("endemic {binding_id} has an unexpected type"))
        })
    }

    pub fn put_endemic<T: 'static>(&mut self, binding_id: &str, state: Box<T>) {
        self.endemics.insert(binding_id.to_string(), state);
    }

    /// Calls an operation exported by an endemic slice.
    pub fn call_endemic(&mut self, binding_id: &str, op: &str, args: &[Value]) -> Result<Value, MopError> {
        let e = self
            .spec
            .endemic(binding_id)
            .ok_or_else(|| MopError::new("UnknownEndemic", format!("unknown endemic {binding_id}")))?;
        let catalog_ref = e
            .exported_ops
            .get(op)
            .ok_or_else(|| MopError::new("UnknownOp", format!("{binding_id} exports no operation {op}")))?;
        let f = self
            .spec
            .catalog
            .get_op(catalog_ref)
            .ok_or_else(|| MopError::new("UnknownOp", format!("{catalog_ref} is not in the catalog")))?;
        f(self, args).map_err(|e| MopError::new("RuntimeError", e.message))
    }

    // ---- hooks & agents ----------------------------------------------------

    pub fn attach_agent(&mut self, id: AgentId, mut link: Box<dyn AgentLink>) {
        if self.state.finished && self.state.current_role.is_none() {
            link.on_idle();
        }
        self.agents.insert(id, link);
    }

    /// Drops the agent and all of its registrations.
    pub fn detach_agent(&mut self, id: AgentId) {
        self.agents.remove(&id);
        let regs: Vec<RegId> = self.registrations.values().filter(|r| r.agent == id).map(|r| r.id).collect();
        for r in regs {
            self.unregister(r, None);
        }
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn mark_ready(&mut self) {
        self.ready += 1;
    }

    pub fn mark_resumed(&mut self, agent: AgentId, msg: u64) {
        self.resumed.insert((agent, msg));
    }

    /// Computes the match set and installs every hook entry at once.
    pub fn register(&mut self, agent: AgentId, pattern: TreePattern, hook: HookKind, role: &str) -> Result<(RegId, usize), MopError> {
        if self.spec.role_index(role).is_none() {
            return Err(MopError::new("UnknownRole", format!("unknown role {role}")));
        }
        let matches = match_nodes(&self.tree, &self.spec, &pattern);
        let id = RegId(self.next_reg);
        self.next_reg += 1;
        let anchors: BTreeMap<NodeId, Env> = matches.entries.into_iter().map(|e| (e.anchor, e.env)).collect();
        for anchor in anchors.keys() {
            self.hooks.entry((*anchor, role.to_string(), hook)).or_default().push(id);
        }
        let count = anchors.len();
        self.registrations.insert(id, Registration { id, agent, pattern, hook, role: role.to_string(), anchors });
        self.bump_version("register", false);
        Ok((id, count))
    }

    /// Removes a registration, or only its entry at `anchor`. Returns the
    /// number of anchors left; unknown ids are a no-op.
    pub fn unregister(&mut self, id: RegId, anchor: Option<NodeId>) -> usize {
        let Some(reg) = self.registrations.get_mut(&id) else { return 0 };
        let removed: Vec<NodeId> = match anchor {
            Some(a) => reg.anchors.remove(&a).map(|_| a).into_iter().collect(),
            None => std::mem::take(&mut reg.anchors).into_keys().collect(),
        };
        let key_role = reg.role.clone();
        let hook = reg.hook;
        let left = reg.anchors.len();
        if left == 0 {
            self.registrations.remove(&id);
        }
        for a in removed {
            let key = (a, key_role.clone(), hook);
            if let Some(list) = self.hooks.get_mut(&key) {
                list.retain(|r| *r != id);
                if list.is_empty() {
                    self.hooks.remove(&key);
                }
            }
        }
        self.bump_version("unregister", false);
        left
    }

    pub fn registrations(&self) -> &BTreeMap<RegId, Registration> {
        &self.registrations
    }

    /// Registration ids installed at `(node, role, hook)`, in order.
    pub fn hook_entries(&self, node: NodeId, role: &str, hook: HookKind) -> &[RegId] {
        self.hooks.get(&(node, role.to_string(), hook)).map_or(&[], Vec::as_slice)
    }

    /// Every `(node, role, hook)` hook list containing `id`.
    pub fn hooks_of(&self, id: RegId) -> BTreeSet<(NodeId, String, HookKind)> {
        self.hooks
            .iter()
            .filter(|(_, regs)| regs.contains(&id))
            .map(|(k, _)| k.clone())
            .collect()
    }

    fn fire(&mut self, node: NodeId, role: &str, hook: HookKind) {
        if self.hooks.is_empty() {
            return;
        }
        let Some(list) = self.hooks.get(&(node, role.to_string(), hook)).cloned() else { return };
        for reg in list {
            let Some(r) = self.registrations.get(&reg) else { continue };
            let Some(env) = r.anchors.get(&node).cloned() else { continue };
            if !eval_constraints(&r.pattern, &env, self, role) {
                continue;
            }
            let agent = r.agent;
            self.record(|| Event::Notify { node, hook, registration: reg });
            let event = HookEvent { registration: reg, hook, role: role.to_string(), anchor: node, env };
            self.notify(agent, &event);
        }
    }

    fn notify(&mut self, agent: AgentId, event: &HookEvent) {
        let Some(mut link) = self.agents.remove(&agent) else { return };
        let reply = link.on_hook(self, event);
        if reply == HookReply::Disconnected {
            self.detach_agent(agent);
            return;
        }
        self.agents.insert(agent, link);
        if let HookReply::Await(msg) = reply {
            self.wait_for_resume(agent, msg);
        }
    }

    /// Processes queued ops until the agent resumes (or goes away).
    pub fn wait_for_resume(&mut self, agent: AgentId, msg: u64) {
        self.state.paused = true;
        loop {
            if self.resumed.remove(&(agent, msg)) || !self.agents.contains_key(&agent) {
                break;
            }
            if self.queue.shutdown.load(Ordering::SeqCst) {
                break;
            }
            match self.queue.rx.recv() {
                Ok(op) => op(self),
                Err(_) => break,
            }
        }
        self.state.paused = false;
    }

    /// Blocks (processing ops) until `n` agents have reported ready.
    pub fn wait_for_ready(&mut self, n: usize, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while self.ready < n {
            if self.queue.shutdown.load(Ordering::SeqCst) {
                return false;
            }
            let left = deadline.saturating_duration_since(Instant::now());
            match self.queue.rx.recv_timeout(left) {
                Ok(op) => op(self),
                Err(_) => return false,
            }
        }
        true
    }

    /// Serves agents after execution. Returns once shut down, or once no
    /// agent has been connected for `linger`.
    pub fn serve_idle(&mut self, linger: Duration) {
        self.state.finished = true;
        self.broadcast_idle();
        let mut quiet_since = Instant::now();
        loop {
            if !self.redo_queue.is_empty() {
                self.drain_redos();
                self.broadcast_idle();
            }
            if self.queue.shutdown.load(Ordering::SeqCst) {
                break;
            }
            if !self.agents.is_empty() {
                quiet_since = Instant::now();
            } else if quiet_since.elapsed() >= linger {
                break;
            }
            match self.queue.rx.recv_timeout(Duration::from_millis(20)) {
                Ok(op) => op(self),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        self.safe_point();
    }

    fn broadcast_idle(&mut self) {
        for link in self.agents.values_mut() {
            link.on_idle();
        }
    }

    /// Advances the spec version by one batch. Intercession batches are
    /// announced to every connected agent.
    pub fn bump_version(&mut self, cause: &str, announce: bool) -> u64 {
        self.state.spec_version += 1;
        let version = self.state.spec_version;
        self.record(|| Event::Batch { version, cause: cause.to_string() });
        if announce {
            for link in self.agents.values_mut() {
                link.on_changed(version, cause);
            }
        }
        version
    }

    // ---- intercession --------------------------------------------------------

    fn check_node(&self, node: NodeId) -> Result<(), MopError> {
        match self.tree.get(node) {
            Some(n) if n.production().is_some() => Ok(()),
            Some(_) => Err(MopError::new("NotAProduction", format!("node {node} is a token")).at(node)),
            None => Err(MopError::new("UnknownNode", format!("no node {node}")).at(node)),
        }
    }

    fn check_role(&self, role: &str) -> Result<(), MopError> {
        match self.spec.role_index(role) {
            Some(_) => Ok(()),
            None => Err(MopError::new("UnknownRole", format!("unknown role {role}"))),
        }
    }

    /// Installs a per-node override. The action must provide at least what
    /// the default binding provides.
    pub fn set_specialized_action(&mut self, node: NodeId, key: ActionKey, role: &str) -> Result<(), MopError> {
        self.check_node(node)?;
        self.check_role(role)?;
        let catalog = self.spec.catalog.clone();
        let action = catalog
            .get(&key)
            .filter(|_| catalog.func(&key).is_some())
            .ok_or_else(|| MopError::new("UnknownAction", format!("action {key} is not in the catalog")))?;
        let pid = self.tree.node(node).production().expect("checked");
        if let Some(default) = self.spec.binding(role, pid).and_then(|k| catalog.get(k)) {
            let missing: Vec<&String> = default.provides.difference(&action.provides).collect();
            if !missing.is_empty() {
                return Err(MopError::new(
                    "SignatureMismatch",
                    format!("{key} does not provide {missing:?} required by {}", default.key),
                )
                .at(node));
            }
        }
        self.overrides.insert((node, role.to_string()), key);
        Ok(())
    }

    /// Removes the override at `(node, role)`; idempotent.
    pub fn reset_node(&mut self, node: NodeId, role: &str) -> Result<(), MopError> {
        if self.tree.get(node).is_none() {
            return Err(MopError::new("UnknownNode", format!("no node {node}")).at(node));
        }
        self.check_role(role)?;
        self.overrides.remove(&(node, role.to_string()));
        Ok(())
    }

    /// Swaps a slice for one from the registry, system-wide.
    pub fn replace_slice(&mut self, old: &str, new: &str) -> Result<(), MopError> {
        let slice = self
            .registry
            .get(new)
            .cloned()
            .ok_or_else(|| MopError::new("UnknownSlice", format!("slice {new} is not in the registry")))?;
        let next = replace_component(&self.spec, old, slice).map_err(MopError::from)?;
        self.spec = Arc::new(next);
        Ok(())
    }

    /// Runs `f` as one batch: on error every change it made to the spec,
    /// overrides, attributes and queued redos is rolled back.
    pub fn batch<R>(&mut self, cause: &str, f: impl FnOnce(&mut Interp) -> Result<R, MopError>) -> Result<R, MopError> {
        let snap = Snapshot {
            spec: self.spec.clone(),
            overrides: self.overrides.clone(),
            attrs: self.attrs.clone(),
            redo_queue: self.redo_queue.clone(),
        };
        match f(self) {
            Ok(r) => {
                self.bump_version(cause, true);
                Ok(r)
            }
            Err(e) => {
                self.spec = snap.spec;
                self.overrides = snap.overrides;
                self.attrs = snap.attrs;
                self.redo_queue = snap.redo_queue;
                Err(e)
            }
        }
    }
}

impl AttrSource for Interp {
    fn attr(&self, node: NodeId, role: &str, name: &str) -> Option<Value> {
        self.attr_in(node, role, name)
    }
}

/// Runs `f` on a thread with a stack large enough for deep trees.
pub fn with_big_stack<R: Send + 'static>(f: impl FnOnce() -> R + Send + 'static) -> R {
    std::thread::Builder::new()
        .stack_size(256 << 20)
        .spawn(f)
        .expect("spawn interpreter thread")
        .join()
        .unwrap_or_else(|e| std::panic::resume_unwind(e))
}
