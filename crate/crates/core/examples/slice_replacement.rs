//! Swaps the slice implementing `+` for one that subtracts, then
//! re-evaluates the program in place.

use oi::minijs::{self, EVAL};
use oi::mop::{apply_batch, MopOp};
use oi::nvm::{with_big_stack, Interp, InterpConfig, SharedOutput};
use std::time::Duration;

fn main() {
    with_big_stack(|| {
        let out = SharedOutput::new();
        let mut interp =
            Interp::new(&minijs::language(), "print(10 + 4); print(2 + 3 * 4);", InterpConfig::default()).unwrap().with_output(out.clone());
        interp.run().unwrap();
        let before = out.contents();
        println!("before:\n{before}");

        // Both commands apply together or not at all.
        apply_batch(
            &mut interp,
            vec![
                MopOp::ReplaceSlice { old: "miniJS.AddEval".into(), new: "miniJS.SubAddEval".into() },
                MopOp::RedoRole { role: EVAL.into() },
            ],
        )
        .unwrap();
        interp.serve_idle(Duration::ZERO);
        let after = out.contents()[before.len()..].to_string();
        println!("after (spec version {}):\n{after}", interp.state().spec_version);
    });
}
