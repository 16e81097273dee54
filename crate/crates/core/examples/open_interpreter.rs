//! Introspects a running interpreter over the wire: roles, grammar,
//! the parse tree and the attributes left behind by evaluation.

use std::sync::mpsc;
use std::time::Duration;

use oi::minijs;
use oi::mop::{MopOp, MopResult};
use oi::nvm::{with_big_stack, Interp, InterpConfig, SharedOutput};
use oi::wire::{run_open, Client, OpenOptions};

fn main() {
    let (tx, rx) = mpsc::channel();
    let interp = std::thread::spawn(move || {
        with_big_stack(move || {
            let out = SharedOutput::new();
            let mut interp =
                Interp::new(&minijs::language(), "x = 2 * 3; print(x + 1);", InterpConfig::default()).unwrap().with_output(out.clone());
            let opts = OpenOptions { linger: Duration::from_secs(2), ..OpenOptions::default() };
            run_open(&mut interp, &opts, |_, port| tx.send(port).unwrap()).unwrap();
            out.contents()
        })
    });
    let port = rx.recv().unwrap();
    std::thread::sleep(Duration::from_millis(100));
    let mut client = Client::connect(("127.0.0.1", port)).unwrap();

    if let MopResult::Roles(roles) = client.mop(MopOp::GetRoles).unwrap() {
        println!("roles: {:?}", roles.iter().map(|r| &r.name).collect::<Vec<_>>());
    }
    if let MopResult::Productions(ps) = client.mop(MopOp::GetGrammarProductions).unwrap() {
        println!("{} productions, e.g. {:?}", ps.len(), ps.iter().filter_map(|p| p.label.clone()).take(6).collect::<Vec<_>>());
    }
    if let MopResult::Nodes(nodes) = client.mop(MopOp::GetTree).unwrap() {
        for n in nodes.iter().filter(|n| n.production.is_some()) {
            let attrs: Vec<String> = n.attrs.iter().map(|a| format!("{}.{}={}", a.role, a.name, a.value)).collect();
            println!("{} {:<8} {}", n.id, n.label(), attrs.join(" "));
        }
    }
    drop(client);
    print!("program printed: {}", interp.join().unwrap());
}
