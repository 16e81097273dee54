//! The breakpoint debugger driven through scripted command input.

mod common;

use std::io::Cursor;

use common::*;
use oi::cli::debug_session;
use oi::minijs::{self, EVAL};
use oi::nvm::{Event, Interp, InterpConfig, SharedOutput};
use oi::parser::NodeId;

/// Runs a session to completion; returns pauses and the transcript.
fn session(src: &str, commands: &str) -> (usize, String, Outcome) {
    let run = OpenRun::start(src, OpenConfig { wait_agents: 1, ..Default::default() });
    let mut transcript = Vec::new();
    let summary = debug_session(run.client(), Cursor::new(commands.to_string()), &mut transcript).expect("session");
    let out = run.join();
    (summary.pauses, String::from_utf8(transcript).unwrap(), out)
}

/// Closed run with the event log on, for oracles over visits and attributes.
fn traced(src: &str, inspect: impl FnOnce(&Interp, &[Event]) -> usize + Send + 'static) -> usize {
    let src = src.to_string();
    spawn_big(move || {
        let dir = tempfile::tempdir().unwrap();
        let mut i = Interp::new(&minijs::language(), &src, InterpConfig { store_dir: dir.path().into() })
            .unwrap()
            .with_output(SharedOutput::new());
        i.enable_log();
        i.run().unwrap();
        let log = i.take_log();
        inspect(&i, &log)
    })
    .join()
    .unwrap()
}

fn head_of(i: &Interp, n: NodeId) -> Option<String> {
    i.tree().node(n).production().map(|p| i.spec().production(p).head.clone())
}

const LOOP: &str = "x = 0; while (x < 3) { x = x + 1; } print(x);";

#[test]
fn stepping_pauses_once_per_evaluation_visit() {
    let visits = traced(LOOP, |_, log| log.iter().filter(|e| matches!(e, Event::Visit { role, .. } if role == EVAL)).count());
    let commands = "step\n".repeat(visits + 5);
    let (pauses, transcript, out) = session(LOOP, &commands);
    assert_eq!(pauses, visits, "{transcript}");
    assert!(transcript.contains("program finished"));
    assert_eq!(out.stdout, "3\n");
}

#[test]
fn nonterminal_breakpoint_pauses_on_every_statement() {
    let stmts = traced(LOOP, |i, log| {
        log.iter()
            .filter(|e| matches!(e, Event::Visit { node, role } if role == EVAL && head_of(i, *node).as_deref() == Some("Stmt")))
            .count()
    });
    let commands = format!("break nt Stmt\n{}", "continue\n".repeat(stmts + 2));
    let (pauses, transcript, _) = session(LOOP, &commands);
    assert_eq!(pauses, stmts, "{transcript}");
}

#[test]
fn deleted_breakpoint_never_pauses_again() {
    let src = "print(1 + 2); print(3 + 4); print(5 + 6);";
    let (pauses, transcript, out) = session(src, "break Add from module miniJS.AddSyntax\ncontinue\ndelete 1\ncontinue\ncontinue\n");
    assert_eq!(pauses, 1, "{transcript}");
    assert!(transcript.contains("deleted breakpoint 1"));
    assert_eq!(out.stdout, "3\n7\n11\n");
}

#[test]
fn debugging_does_not_change_program_output() {
    for name in CORPUS {
        let src = program(name);
        let store = tempfile::tempdir().unwrap();
        let plain = run_closed(&src, store.path());
        let (_, transcript, debugged) = session(&src, "break nt Expr\ncontinue\ncontinue\nprint attrs\nstep\nstep\nprint tree\nquit\n");
        assert_eq!(debugged.stdout, plain.stdout, "{name}\n{transcript}");
        assert_eq!(debugged.error, plain.error, "{name}");
    }
}

#[test]
fn attrs_show_children_after_their_evaluation() {
    let src = "print((1 + 2) + 3);";
    // Oracle: the outer addition's first child, dumped directly after a closed run.
    let expected = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
    let sink = expected.clone();
    traced(src, move |i, _| {
        let adds: Vec<NodeId> = i
            .tree()
            .preorder()
            .filter(|n| i.tree().node(*n).production().is_some_and(|p| i.spec().production(p).label.as_deref() == Some("Add")))
            .collect();
        let child = i.tree().node(adds[0]).children[0];
        let mut lines = sink.lock().unwrap();
        lines.push(format!("child 0 {child} "));
        for (role, name, value) in i.node_attrs(child) {
            lines.push(format!("  {role}.{name} = {value}"));
        }
        lines.len()
    });
    let expected = expected.lock().unwrap().clone();
    assert!(expected.iter().any(|l| l.contains("evaluation.val = 3")), "{expected:?}");
    let commands = "break after Add from module miniJS.AddSyntax\ncontinue\ncontinue\nprint attrs\nquit\n";
    let (pauses, transcript, out) = session(src, commands);
    assert_eq!(pauses, 2);
    for line in &expected {
        assert!(transcript.contains(line.as_str()), "missing {line:?} in\n{transcript}");
    }
    assert_eq!(out.stdout, "6\n");
}
