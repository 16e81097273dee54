//! An agent maintains a call stack in an endemic slice, so the program's
//! failure is reported with its frames. Errors go to stderr.

mod support;

use oi::muda::run_script;
use oi::wire::Client;

fn main() {
    let store = tempfile::tempdir().unwrap();
    let src = support::program("stack_trace.mjs");
    eprintln!("-- without agent");
    support::open(&src, store.path(), 0).finish();

    eprintln!("-- with agent");
    let run = support::open(&src, store.path(), 1);
    let mut client = Client::connect(("127.0.0.1", run.port)).unwrap();
    run_script(&support::script("stack_trace.nda"), &mut client, &mut std::io::sink()).unwrap();
    drop(client);
    run.finish();
}
