//! MiniJS evaluation against host-computed oracles.

mod common;

use common::*;
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum E {
    Num(u8),
    Bin(Box<E>, char, Box<E>),
}

impl E {
    /// Fully parenthesized so the oracle need not model precedence.
    fn src(&self) -> String {
        match self {
            E::Num(n) => n.to_string(),
            E::Bin(l, op, r) => format!("({} {op} {})", l.src(), r.src()),
        }
    }

    fn value(&self) -> f64 {
        match self {
            E::Num(n) => *n as f64,
            E::Bin(l, op, r) => {
                let (a, b) = (l.value(), r.value());
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    _ => a * b,
                }
            }
        }
    }
}

fn expr() -> impl Strategy<Value = E> {
    (0u8..20).prop_map(E::Num).prop_recursive(4, 24, 2, |inner| {
        (inner.clone(), prop::sample::select(vec!['+', '-', '*']), inner).prop_map(|(l, op, r)| E::Bin(Box::new(l), op, Box::new(r)))
    })
}

fn run(src: &str) -> Outcome {
    let store = tempfile::tempdir().unwrap();
    run_closed(src, store.path())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn arithmetic_matches_host(e in expr()) {
        let out = run(&format!("print({});", e.src()));
        prop_assert_eq!(out.error, None);
        prop_assert_eq!(out.stdout, format!("{}\n", fmt_num(e.value())));
    }

    /// Unparenthesized chains: `+`/`-` associate left, `*` binds tighter.
    #[test]
    fn precedence_and_associativity(terms in prop::collection::vec((0u8..10, prop::sample::select(vec!['+', '-', '*'])), 1..8), last in 0u8..10) {
        let mut src = String::new();
        for (n, op) in &terms {
            src.push_str(&format!("{n} {op} "));
        }
        src.push_str(&last.to_string());
        // Oracle: fold products first, then sum the signed terms left to right.
        let mut nums: Vec<f64> = terms.iter().map(|(n, _)| *n as f64).collect();
        nums.push(last as f64);
        let ops: Vec<char> = terms.iter().map(|(_, op)| *op).collect();
        let mut sums: Vec<(char, f64)> = vec![('+', nums[0])];
        for (k, op) in ops.iter().enumerate() {
            if *op == '*' {
                sums.last_mut().unwrap().1 *= nums[k + 1];
            } else {
                sums.push((*op, nums[k + 1]));
            }
        }
        let expected = sums.iter().fold(0.0, |acc, (op, v)| if *op == '-' { acc - v } else { acc + v });
        let out = run(&format!("print({src});"));
        prop_assert_eq!(out.stdout, format!("{}\n", fmt_num(expected)));
    }

    #[test]
    fn while_loop_accumulates(n in 0u32..60) {
        let out = run(&format!("s = 0; i = 0; while (i < {n}) {{ i = i + 1; s = s + i; }} print(s);"));
        prop_assert_eq!(out.stdout, format!("{}\n", (1..=n).sum::<u32>()));
    }

    #[test]
    fn fields_read_back_what_was_written(vals in prop::collection::vec(0u16..1000, 1..6)) {
        let mut src = String::from("function Box() { }\nb = new Box();\n");
        for (k, v) in vals.iter().enumerate() {
            src.push_str(&format!("b.f{k} = {v};\n"));
        }
        for k in 0..vals.len() {
            src.push_str(&format!("print(b.f{k});\n"));
        }
        let expected: String = vals.iter().map(|v| format!("{v}\n")).collect();
        prop_assert_eq!(run(&src).stdout, expected);
    }
}

fn fib(n: u32) -> u64 {
    if n < 2 {
        n as u64
    } else {
        fib(n - 1) + fib(n - 2)
    }
}

#[test]
fn functions_corpus_matches_host() {
    let out = run(&program("functions.mjs"));
    assert_eq!(out.stdout, format!("{}\n{}\n{}\n", 12 * 12, (1..=10).sum::<u32>(), fib(15)));
}

#[test]
fn recursion_depth() {
    let out = run("function down(n) { if (n == 0) { return 0; } return 1 + down(n - 1); } print(down(800));");
    assert_eq!(out.error, None);
    assert_eq!(out.stdout, "800\n");
}

#[test]
fn object_identity_and_rendering() {
    let out = run("function P() { } a = new P(); b = a; c = new P(); print(a == b); print(a == c); print(a);");
    assert_eq!(out.stdout, "true\nfalse\n[object P]\n");
}

#[test]
fn undefined_variable_is_a_runtime_error() {
    let out = run("print(1);\nprint(nope);\nprint(2);");
    assert_eq!(out.stdout, "1\n");
    assert!(out.error.unwrap().contains("nope"));
}

#[test]
fn fail_without_agent_has_no_frames() {
    let out = run(&program("stack_trace.mjs"));
    assert_eq!(out.stdout, "start\n");
    let err = out.error.unwrap();
    assert!(err.contains("too deep"));
    assert!(!err.contains("    at "), "{err}");
}

#[test]
fn stack_trace_agent_enriches_errors() {
    let run = OpenRun::start(&program("stack_trace.mjs"), OpenConfig { wait_agents: 1, ..Default::default() });
    let agent = spawn_agent(run.port, &script("stack_trace.nda"));
    let (report, _) = agent.join().unwrap();
    let out = run.join();
    report.unwrap();
    let err = out.error.expect("program fails");
    // Oracle: inner recurses from 0 until x > 2, so 4 inner frames under outer.
    let frames: Vec<&str> = err.lines().filter_map(|l| l.trim().strip_prefix("at ")).collect();
    assert_eq!(frames, ["inner", "inner", "inner", "inner", "outer"]);
}

#[test]
fn syntax_errors_are_reported_before_running() {
    let lang = oi::minijs::language();
    let err = oi::nvm::Interp::new(&lang, "print(1 +);", oi::nvm::InterpConfig::default()).err().expect("syntax error");
    assert!(!err.to_string().is_empty());
}
