//! Runs a MiniJS program with no port bound.
//!
//! `cargo run --example run_program [path.mjs]`

use std::io;

use oi::minijs;
use oi::nvm::{with_big_stack, Interp, InterpConfig};

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/programs/functions.mjs").into());
    let source = std::fs::read_to_string(&path).expect("readable program");
    let code = with_big_stack(move || {
        let mut interp = match Interp::new(&minijs::language(), &source, InterpConfig::default()) {
            Ok(i) => i.with_output(io::stdout()),
            Err(e) => {
                eprintln!("{e}");
                return 2;
            }
        };
        match interp.run() {
            Ok(()) => 0,
            Err(e) => {
                interp.report_error(e);
                2
            }
        }
    });
    std::process::exit(code);
}
