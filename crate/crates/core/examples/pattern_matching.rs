//! Compiles tree patterns and lists the nodes they anchor on. Without a
//! `| id` filter every bound node is an anchor; attribute constraints are
//! only checked when a hook fires, so they do not narrow the match set.

use oi::minijs;
use oi::nvm::{Interp, InterpConfig};
use oi::patterns::{compile_pattern, match_nodes, Binding};

fn main() {
    let source = "print(1 + 2 + 3); x = (4 + 5) * 6;";
    let interp = Interp::new(&minijs::language(), source, InterpConfig::default()).unwrap();
    let bindings = vec![
        Binding::production("add", "miniJS.AddSyntax", "Add"),
        Binding::production("print", "miniJS.PrintSyntax", "Print"),
        Binding::nonterminal("head", "miniJS.AddSyntax", "Add", 0),
        Binding::nonterminal("left", "miniJS.AddSyntax", "Add", 1),
    ];
    for pattern in ["add", "print < add", "head < left | head", "print << add | add", "add[+<val == 3>+]"] {
        let compiled = match compile_pattern(&bindings, pattern) {
            Ok(p) => p,
            Err(e) => {
                println!("{pattern:<22} error: {e}");
                continue;
            }
        };
        let found = match_nodes(interp.tree(), interp.spec(), &compiled);
        let spans: Vec<String> = found
            .anchors()
            .into_iter()
            .map(|n| {
                let s = interp.tree().node(n).span;
                source[s.start..s.end].to_string()
            })
            .collect();
        println!("{pattern:<22} {} anchor(s): {spans:?}", spans.len());
    }
}
