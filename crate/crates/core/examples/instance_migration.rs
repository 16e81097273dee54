//! Counts instances of a prototype, then migrates them to a fixed layout
//! while the program is paused at its loop.

mod support;

use oi::muda::run_script;
use oi::wire::Client;

fn main() {
    let store = tempfile::tempdir().unwrap();
    let src = support::program("person_position.mjs");
    let (plain, _) = support::open(&src, store.path(), 0).finish();

    let run = support::open(&src, store.path(), 1);
    let mut client = Client::connect(("127.0.0.1", run.port)).unwrap();
    let mut printed = Vec::new();
    run_script(&support::script("migrate.nda"), &mut client, &mut printed).unwrap();
    drop(client);
    let (migrated, _) = run.finish();
    print!("agent printed (migrated, then already migrated):\n{}", String::from_utf8(printed).unwrap());
    println!("program output unchanged: {}", plain == migrated);
}
