//! Shared harness: closed and open MiniJS runs, in-process agents.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use oi::minijs;
use oi::muda::{self, RunReport};
use oi::nvm::{Event, Interp, InterpConfig, InterpHandle, SharedOutput};
use oi::wire::{run_open, Client, OpenOptions, Registry};

pub const STACK: usize = 256 << 20;

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn program(name: &str) -> String {
    std::fs::read_to_string(crate_dir().join("programs").join(name)).expect("program file")
}

pub fn script(name: &str) -> String {
    std::fs::read_to_string(crate_dir().join("scripts").join(name)).expect("script file")
}

/// Programs of the corpus that complete without agents or a prepared store.
pub const CORPUS: &[&str] = &[
    "arith.mjs",
    "control.mjs",
    "functions.mjs",
    "linked_list.mjs",
    "person_position.mjs",
    "persistence_writer.mjs",
];

/// Outcome of one interpreter run.
#[derive(Debug)]
pub struct Outcome {
    pub stdout: String,
    pub error: Option<String>,
    pub log: Vec<Event>,
    pub spec_version: u64,
}

pub fn spawn_big<R: Send + 'static>(f: impl FnOnce() -> R + Send + 'static) -> JoinHandle<R> {
    std::thread::Builder::new().stack_size(STACK).spawn(f).expect("spawn")
}

/// Runs `src` with no port bound.
pub fn run_closed(src: &str, store: &Path) -> Outcome {
    let (src, store) = (src.to_string(), store.to_path_buf());
    spawn_big(move || {
        let out = SharedOutput::new();
        let mut interp = Interp::new(&minijs::language(), &src, InterpConfig { store_dir: store })
            .expect("program parses")
            .with_output(out.clone());
        let error = interp.run().err().map(|e| e.to_string());
        Outcome { stdout: out.contents(), error, log: Vec::new(), spec_version: interp.state().spec_version }
    })
    .join()
    .expect("interpreter thread")
}

pub struct OpenConfig {
    pub wait_agents: usize,
    pub linger: Duration,
    pub log: bool,
}

impl Default for OpenConfig {
    fn default() -> Self {
        OpenConfig { wait_agents: 0, linger: Duration::ZERO, log: false }
    }
}

/// An interpreter running open on an ephemeral port in its own thread.
pub struct OpenRun {
    pub port: u16,
    pub handle: InterpHandle,
    pub out: SharedOutput,
    pub registry: Registry,
    join: JoinHandle<Outcome>,
    _dirs: (tempfile::TempDir, tempfile::TempDir),
}

impl OpenRun {
    pub fn start(src: &str, cfg: OpenConfig) -> OpenRun {
        let store = tempfile::tempdir().unwrap();
        let reg_dir = tempfile::tempdir().unwrap();
        let registry = Registry::new(reg_dir.path());
        let out = SharedOutput::new();
        let (tx, rx) = mpsc::channel();
        let (src, store_dir, reg, sink) = (src.to_string(), store.path().to_path_buf(), registry.clone(), out.clone());
        let join = spawn_big(move || {
            let mut interp = Interp::new(&minijs::language(), &src, InterpConfig { store_dir })
                .expect("program parses")
                .with_output(sink.clone());
            if cfg.log {
                interp.enable_log();
            }
            let opts = OpenOptions {
                name: Some("under-test".into()),
                registry: reg,
                wait_agents: cfg.wait_agents,
                linger: cfg.linger,
                ..OpenOptions::default()
            };
            let res = run_open(&mut interp, &opts, |h, port| {
                let _ = tx.send((h.clone(), port));
            });
            Outcome {
                stdout: sink.contents(),
                error: res.err().map(|e| e.to_string()),
                log: interp.take_log(),
                spec_version: interp.state().spec_version,
            }
        });
        let (handle, port) = rx.recv_timeout(Duration::from_secs(10)).expect("server started");
        OpenRun { port, handle, out, registry, join, _dirs: (store, reg_dir) }
    }

    pub fn client(&self) -> Client {
        Client::connect(("127.0.0.1", self.port)).expect("connect")
    }

    /// Polls stdout until `pred` holds or `timeout` passes.
    pub fn wait_output(&self, timeout: Duration, pred: impl Fn(&str) -> bool) -> bool {
        let start = Instant::now();
        while start.elapsed() < timeout {
            if pred(&self.out.contents()) {
                return true;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        pred(&self.out.contents())
    }

    pub fn shutdown(self) -> Outcome {
        self.handle.shutdown();
        self.join.join().expect("interpreter thread")
    }

    /// Waits for the interpreter to exit on its own.
    pub fn join(self) -> Outcome {
        self.join.join().expect("interpreter thread")
    }
}

/// Runs a µDA script on its own connection; returns the report and what the
/// script printed.
pub fn spawn_agent(port: u16, text: &str) -> JoinHandle<(Result<RunReport, String>, String)> {
    let text = text.to_string();
    std::thread::spawn(move || {
        let mut client = Client::connect(("127.0.0.1", port)).expect("connect");
        let mut printed = Vec::new();
        let report = muda::run_script(&text, &mut client, &mut printed).map_err(|e| e.to_string());
        (report, String::from_utf8(printed).unwrap())
    })
}

/// Numbers as MiniJS prints them.
pub fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}
