//! One interpreter writes persistent objects; a second one, started
//! afterwards on the same store, reads them back.

mod support;

use oi::muda::run_script;
use oi::wire::Client;

fn with_persistence(src: &str, store: &std::path::Path) -> String {
    let run = support::open(src, store, 1);
    let mut client = Client::connect(("127.0.0.1", run.port)).unwrap();
    run_script(&support::script("persistence.nda"), &mut client, &mut std::io::sink()).unwrap();
    drop(client);
    let (out, err) = run.finish();
    if let Some(e) = err {
        eprintln!("{e}");
    }
    out
}

fn main() {
    let store = tempfile::tempdir().unwrap();
    print!("writer:\n{}", with_persistence(&support::program("persistence_writer.mjs"), store.path()));
    for entry in std::fs::read_dir(store.path()).unwrap() {
        let path = entry.unwrap().path();
        println!("{}: {}", path.file_name().unwrap().to_string_lossy(), std::fs::read_to_string(&path).unwrap().trim());
    }
    print!("reader:\n{}", with_persistence(&support::program("persistence_reader.mjs"), store.path()));
}
