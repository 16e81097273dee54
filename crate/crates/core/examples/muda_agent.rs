//! A µDA script changes the meaning of `+` in a waiting program.

mod support;

use oi::muda::run_script;
use oi::wire::Client;

fn main() {
    let store = tempfile::tempdir().unwrap();
    let text = support::script("sub_add.nda");
    println!("script:\n{text}");
    let run = support::open("print(9 + 5); print(2 + 6);", store.path(), 1);
    let mut client = Client::connect(("127.0.0.1", run.port)).unwrap();
    let report = run_script(&text, &mut client, &mut std::io::stdout()).unwrap();
    drop(client);
    let (stdout, _) = run.finish();
    println!("agent report: {report:?}");
    // The first pass already uses the new slice; the queued redo runs it again.
    print!("program output:\n{stdout}");
}
