//! Runs a MiniJS program open to agents in a background thread.
#![allow(dead_code)]

use std::path::Path;
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::Duration;

use oi::minijs;
use oi::nvm::{with_big_stack, Interp, InterpConfig, SharedOutput};
use oi::wire::{run_open, OpenOptions};

pub struct Open {
    pub port: u16,
    join: JoinHandle<(String, Option<String>)>,
}

impl Open {
    /// Waits for the program to finish; returns its stdout and error.
    pub fn finish(self) -> (String, Option<String>) {
        self.join.join().expect("interpreter thread")
    }
}

pub fn program(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("programs").join(name)).expect("program")
}

pub fn script(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("scripts").join(name)).expect("script")
}

/// Starts `src` and holds execution until `agents` agents report ready.
pub fn open(src: &str, store: &Path, agents: usize) -> Open {
    let (tx, rx) = mpsc::channel();
    let (src, store) = (src.to_string(), store.to_path_buf());
    let join = std::thread::spawn(move || {
        with_big_stack(move || {
            let out = SharedOutput::new();
            let mut interp =
                Interp::new(&minijs::language(), &src, InterpConfig { store_dir: store }).expect("program parses").with_output(out.clone());
            let opts = OpenOptions { wait_agents: agents, linger: Duration::ZERO, ..OpenOptions::default() };
            let err = run_open(&mut interp, &opts, |_, port| tx.send(port).unwrap()).err().map(|e| e.to_string());
            (out.contents(), err)
        })
    });
    Open { port: rx.recv().expect("server up"), join }
}
