//! Drives the debugger with a fixed command list instead of a terminal.

mod support;

use std::io::Cursor;

use oi::cli::debug_session;
use oi::wire::Client;

fn main() {
    let store = tempfile::tempdir().unwrap();
    let run = support::open("x = (1 + 2) + 3; print(x);", store.path(), 1);
    let client = Client::connect(("127.0.0.1", run.port)).unwrap();
    let commands = "break after Add from module miniJS.AddSyntax\n\
                    continue\n\
                    print attrs\n\
                    continue\n\
                    print action\n\
                    delete 1\n\
                    step\n\
                    print subtree\n\
                    continue\n";
    for line in commands.lines() {
        println!("(oi) {line}");
    }
    println!("---");
    let summary = debug_session(client, Cursor::new(commands), &mut std::io::stdout()).unwrap();
    let (stdout, _) = run.finish();
    println!("--- {} pauses; program printed {stdout:?}", summary.pauses);
}
