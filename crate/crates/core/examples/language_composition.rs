//! Builds a calculator language from three slices (roles `syntax` and
//! `evaluation`), runs it, and shows a composition rejected because an
//! action's requirement is unmet.

use std::sync::Arc;

use oi::lang::{compose_language, ActionCatalog, ActionKey, Assoc, Language, Slice, SyntaxModule};
use oi::nvm::{Abort, Interp, InterpConfig, SharedOutput};
use oi::parser::NodeId;
use oi::value::Value;

const EVAL: &str = "evaluation";

fn num(i: &mut Interp, n: NodeId) -> Result<(), Abort> {
    let v = i.child_attr(n, 0, "val")?;
    i.set_attr(n, "val", v);
    Ok(())
}

fn times(i: &mut Interp, n: NodeId) -> Result<(), Abort> {
    let (Value::Number(a), Value::Number(b)) = (i.eval_child_attr(n, 0, "val")?, i.eval_child_attr(n, 2, "val")?) else {
        return Err(oi::nvm::RuntimeError::new("numbers expected").into());
    };
    i.set_attr(n, "val", Value::Number(a * b));
    Ok(())
}

fn show(i: &mut Interp, n: NodeId) -> Result<(), Abort> {
    let v = i.eval_child_attr(n, 1, "val")?;
    i.print(&v.to_string());
    Ok(())
}

/// Declares nothing, so `show` would read an attribute no one provides.
fn silent(_: &mut Interp, _: NodeId) -> Result<(), Abort> {
    Ok(())
}

fn catalog() -> ActionCatalog {
    let mut c = ActionCatalog::new();
    c.action(ActionKey::new("calc.Numbers", "Lit", EVAL), &["val"], &[], num)
        .action(ActionKey::new("calc.Times", "Times", EVAL), &["val"], &[(0, "val"), (2, "val")], times)
        .action(ActionKey::new("calc.SilentTimes", "Times", EVAL), &[], &[], silent)
        .action(ActionKey::new("calc.Show", "Show", EVAL), &[], &[(1, "val")], show);
    c
}

fn slices(times_impl: &str) -> Vec<Slice> {
    let top = SyntaxModule::new("calc.Top")
        .rule("Prog", "Prog <- Lines")
        .and_then(|m| m.rule("More", "Lines <- Line Lines"))
        .and_then(|m| m.rule("Done", "Lines <-"))
        .and_then(|m| m.rule("Show", "Line <- \"show\" E \";\""))
        .unwrap();
    let numbers = SyntaxModule::new("calc.Numbers").rule("Lit", "E <- NUM").unwrap();
    let times = SyntaxModule::new(times_impl).op_rule("Times", "E <- E \"*\" E", 3, Assoc::Left).unwrap();
    vec![
        Slice::new("calc.Show", Arc::new(top)).bind_own(EVAL, "Show"),
        Slice::new("calc.Numbers", Arc::new(numbers)).bind_own(EVAL, "Lit"),
        Slice::new(times_impl, Arc::new(times)).bind_own(EVAL, "Times"),
    ]
}

fn main() {
    let catalog = Arc::new(catalog());
    let spec = compose_language("calc", catalog.clone(), slices("calc.Times"), vec![], &["syntax", EVAL], "Prog").unwrap();
    print!("{}", spec.dump());

    let lang = Language::new(spec, []);
    let out = SharedOutput::new();
    let mut interp = Interp::new(&lang, "show 6 * 7; show 2 * 3 * 4;", InterpConfig::default()).unwrap().with_output(out.clone());
    interp.run().unwrap();
    print!("output:\n{}", out.contents());

    match compose_language("calc", catalog, slices("calc.SilentTimes"), vec![], &["syntax", EVAL], "Prog") {
        Ok(_) => println!("unexpectedly composed"),
        Err(e) => println!("rejected: {e}"),
    }
}
