//! The `oi` command line: `run`, `agent`, `debug` and `inspect`.
//!
//! Exit codes: 0 success, 1 usage, 2 runtime, 3 protocol.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::time::Duration;

use clap::{Parser, Subcommand};

use crate::lang::Language;
use crate::mop::{MopOp, MopResult, NodeInfo};
use crate::muda::{self, MudaError};
use crate::nvm::{with_big_stack, HookKind, Interp, InterpConfig, RegId};
use crate::parser::parse_source;
use crate::patterns::{Binding, BindingTarget};
use crate::wire::{self, Body, Client, OpenError, OpenOptions, Registry, WireError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;

/// Languages known to the tool, by command-line name.
pub const LANGUAGES: &[&str] = &["minijs"];

pub fn language_named(name: &str) -> Option<Language> {
    match name {
        "minijs" => Some(crate::minijs::language()),
        _ => None,
    }
}

#[derive(Debug, Parser)]
#[command(name = "oi", about = "Open interpreters with a metaobject protocol")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a program; with --port or --name the interpreter is open to agents.
    Run {
        lang: String,
        program: PathBuf,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        name: Option<String>,
        /// Wait for this many agents to report ready before executing.
        #[arg(long, default_value_t = 0)]
        wait_agents: usize,
        /// Seconds to keep serving after execution with no agent attached.
        #[arg(long, default_value_t = 0.0)]
        linger: f64,
    },
    /// Run a µDA script against a published interpreter.
    Agent {
        script: PathBuf,
        #[arg(long)]
        target: String,
    },
    /// Interactive debugger attached to a published interpreter.
    Debug {
        #[arg(long)]
        target: String,
    },
    /// Print a language's composed grammar, or the parse tree of a program.
    Inspect {
        lang: String,
        #[arg(long)]
        tree: Option<PathBuf>,
    },
}

fn unknown_language(name: &str) -> i32 {
    eprintln!("unknown language {name}; available: {}", LANGUAGES.join(", "));
    EXIT_USAGE
}

fn read_file(path: &PathBuf) -> Result<String, i32> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        EXIT_USAGE
    })
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    execute(cli.command)
}

pub fn execute(command: Command) -> i32 {
    match command {
        Command::Run { lang, program, port, name, wait_agents, linger } => {
            let Some(language) = language_named(&lang) else { return unknown_language(&lang) };
            let source = match read_file(&program) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let open = (port.is_some() || name.is_some()).then(|| OpenOptions {
                port: port.unwrap_or(0),
                name,
                wait_agents,
                linger: Duration::from_secs_f64(linger.max(0.0)),
                ..OpenOptions::default()
            });
            with_big_stack(move || cmd_run(&language, &source, open))
        }
        Command::Agent { script, target } => {
            let text = match read_file(&script) {
                Ok(s) => s,
                Err(code) => return code,
            };
            cmd_agent(&text, &Registry::from_env(), &target)
        }
        Command::Debug { target } => match Client::connect_target(&Registry::from_env(), &target) {
            Ok(client) => {
                let stdin = io::stdin();
                match debug_session(client, stdin.lock(), &mut io::stdout()) {
                    Ok(_) => EXIT_OK,
                    Err(e) => {
                        eprintln!("{e}");
                        EXIT_PROTOCOL
                    }
                }
            }
            Err(e) => {
                eprintln!("{e}");
                EXIT_PROTOCOL
            }
        },
        Command::Inspect { lang, tree } => {
            let Some(language) = language_named(&lang) else { return unknown_language(&lang) };
            match tree {
                None => {
                    print!("{}", language.spec.dump());
                    EXIT_OK
                }
                Some(path) => {
                    let source = match read_file(&path) {
                        Ok(s) => s,
                        Err(code) => return code,
                    };
                    match parse_source(&source, &language.spec) {
                        Ok(t) => {
                            print!("{}", t.render(&language.spec));
                            EXIT_OK
                        }
                        Err(e) => {
                            eprintln!("{e}");
                            EXIT_RUNTIME
                        }
                    }
                }
            }
        }
    }
}

/// Runs `source` closed (`open` absent) or open to agents.
pub fn cmd_run(language: &Language, source: &str, open: Option<OpenOptions>) -> i32 {
    let mut interp = match Interp::new(language, source, InterpConfig::default()) {
        Ok(i) => i.with_output(io::stdout()),
        Err(e) => {
            eprintln!("{e}");
            return EXIT_RUNTIME;
        }
    };
    let result = match open {
        None => interp.run().map_err(|e| {
            interp.report_error(e.clone());
            OpenError::from(e)
        }),
        Some(opts) => wire::run_open(&mut interp, &opts, |_, port| {
            eprintln!("listening on 127.0.0.1:{port}");
        }),
    };
    let _ = io::stdout().flush();
    match result {
        Ok(()) => EXIT_OK,
        // Already reported on stderr by the interpreter.
        Err(OpenError::Runtime(_)) => EXIT_RUNTIME,
        Err(e) => {
            eprintln!("{e}");
            EXIT_PROTOCOL
        }
    }
}

pub fn cmd_agent(script: &str, registry: &Registry, target: &str) -> i32 {
    let parsed = match muda::parse_script(script) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_RUNTIME;
        }
    };
    let mut client = match Client::connect_target(registry, target) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_PROTOCOL;
        }
    };
    let mut out = io::stdout();
    match muda::Agent::new(&mut client, &parsed, &mut out).run() {
        Ok(_) => EXIT_OK,
        Err(MudaError::Wire(e)) => {
            eprintln!("{e}");
            EXIT_PROTOCOL
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_RUNTIME
        }
    }
}

// ---- debugger ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BreakKind {
    Production { module: String, label: String, hook: HookKind },
    Nonterminal(String),
}

#[derive(Debug, Clone)]
pub struct Breakpoint {
    pub number: usize,
    pub kind: BreakKind,
    pub registrations: Vec<RegId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    /// Connected; the program waits for the first `continue` or `step`.
    NotStarted,
    Running,
    Paused { event: u64, anchor: NodeInfo },
    Finished,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct DebugSummary {
    pub pauses: usize,
}

const DEBUG_USAGE: &str = "commands: break [before|after] <Label> from module <module> | break nt <Nonterminal> | \
step | continue | print tree|subtree|attrs|action | delete <n> | quit";

pub struct DebugSession<'a> {
    client: Client,
    out: &'a mut dyn Write,
    breakpoints: Vec<Breakpoint>,
    next_number: usize,
    step_registrations: Vec<RegId>,
    mode: Mode,
    role: String,
    summary: DebugSummary,
}

fn describe(info: &NodeInfo) -> String {
    let label = info.label();
    format!("{} {label} [{}..{}]", info.id, info.span.start, info.span.end)
}

impl<'a> DebugSession<'a> {
    pub fn new(mut client: Client, out: &'a mut dyn Write) -> Result<Self, WireError> {
        let MopResult::Roles(roles) = client.mop(MopOp::GetRoles)? else {
            return Err(WireError::Protocol("unexpected reply to getRoles".into()));
        };
        let role = roles.last().map(|r| r.name.clone()).unwrap_or_default();
        Ok(DebugSession {
            client,
            out,
            breakpoints: Vec::new(),
            next_number: 1,
            step_registrations: Vec::new(),
            mode: Mode::NotStarted,
            role,
            summary: DebugSummary::default(),
        })
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    fn say(&mut self, text: impl AsRef<str>) -> Result<(), WireError> {
        writeln!(self.out, "{}", text.as_ref())?;
        Ok(())
    }

    fn productions(&mut self) -> Result<Vec<crate::lang::ProductionInfo>, WireError> {
        match self.client.mop(MopOp::GetGrammarProductions)? {
            MopResult::Productions(p) => Ok(p),
            _ => Err(WireError::Protocol("unexpected reply to getGrammarProductions".into())),
        }
    }

    fn register_production(&mut self, module: &str, label: &str, hook: HookKind) -> Result<RegId, WireError> {
        let bindings = vec![Binding::new("bp", BindingTarget::WholeProduction { module: module.into(), label: label.into() })];
        let role = self.role.clone();
        Ok(self.client.register(bindings, "bp", hook, &role)?.0)
    }

    /// Executes one command line; returns false once the session is over.
    pub fn command(&mut self, line: &str) -> Result<bool, WireError> {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] => {}
            ["quit"] => {
                self.quit()?;
                return Ok(false);
            }
            ["break", "nt", nt] => self.break_nt(nt)?,
            ["break", rest @ ..] => {
                let (hook, rest) = match rest {
                    ["before", r @ ..] => (HookKind::Before, r),
                    ["after", r @ ..] => (HookKind::After, r),
                    r => (HookKind::Before, r),
                };
                match rest {
                    [label, "from", "module", module] => self.break_production(module, label, hook)?,
                    _ => self.say(DEBUG_USAGE)?,
                }
            }
            ["delete", n] => match n.parse::<usize>() {
                Ok(n) => self.delete(n)?,
                Err(_) => self.say(DEBUG_USAGE)?,
            },
            ["continue"] => {
                self.clear_step()?;
                self.advance()?;
            }
            ["step"] => {
                if self.step_registrations.is_empty() {
                    for p in self.productions()? {
                        let Some(label) = p.label.clone() else { continue };
                        let reg = self.register_production(&p.module, &label, HookKind::Before)?;
                        self.step_registrations.push(reg);
                    }
                }
                self.advance()?;
            }
            ["print", what] => self.print(what)?,
            _ => self.say(DEBUG_USAGE)?,
        }
        Ok(true)
    }

    fn break_production(&mut self, module: &str, label: &str, hook: HookKind) -> Result<(), WireError> {
        let known = self.productions()?.iter().any(|p| p.module == module && p.label.as_deref() == Some(label));
        if !known {
            return self.say(format!("no production {label} in module {module}"));
        }
        let reg = self.register_production(module, label, hook)?;
        let kind = BreakKind::Production { module: module.into(), label: label.into(), hook };
        self.add_breakpoint(kind, vec![reg])
    }

    /// One registration per production whose head is `nt`.
    fn break_nt(&mut self, nt: &str) -> Result<(), WireError> {
        let targets: Vec<(String, String)> = self
            .productions()?
            .into_iter()
            .filter(|p| p.head == nt)
            .filter_map(|p| Some((p.module, p.label?)))
            .collect();
        if targets.is_empty() {
            return self.say(format!("no productions for nonterminal {nt}"));
        }
        let mut regs = Vec::new();
        for (module, label) in targets {
            regs.push(self.register_production(&module, &label, HookKind::Before)?);
        }
        self.add_breakpoint(BreakKind::Nonterminal(nt.into()), regs)
    }

    fn add_breakpoint(&mut self, kind: BreakKind, registrations: Vec<RegId>) -> Result<(), WireError> {
        let number = self.next_number;
        self.next_number += 1;
        let text = match &kind {
            BreakKind::Production { module, label, hook } => format!("breakpoint {number}: {hook:?} {label} from module {module}"),
            BreakKind::Nonterminal(nt) => format!("breakpoint {number}: nonterminal {nt}"),
        };
        self.breakpoints.push(Breakpoint { number, kind, registrations });
        self.say(text)
    }

    fn delete(&mut self, number: usize) -> Result<(), WireError> {
        let Some(pos) = self.breakpoints.iter().position(|b| b.number == number) else {
            return self.say(format!("no breakpoint {number}"));
        };
        let bp = self.breakpoints.remove(pos);
        for reg in bp.registrations {
            self.client.unregister(reg, None)?;
        }
        self.say(format!("deleted breakpoint {number}"))
    }

    fn clear_step(&mut self) -> Result<(), WireError> {
        for reg in std::mem::take(&mut self.step_registrations) {
            self.client.unregister(reg, None)?;
        }
        Ok(())
    }

    /// Lets the program run until the next pause or its end.
    fn advance(&mut self) -> Result<(), WireError> {
        match std::mem::replace(&mut self.mode, Mode::Running) {
            Mode::NotStarted => self.client.ready()?,
            Mode::Paused { event, .. } => self.client.resume(event, None)?,
            Mode::Finished => {
                self.mode = Mode::Finished;
                return self.say("program has finished");
            }
            Mode::Running => {}
        }
        loop {
            let Some(msg) = self.client.next_event()? else {
                self.mode = Mode::Finished;
                return self.say("interpreter closed the connection");
            };
            match msg.body {
                Body::HookEvent { anchor, .. } => {
                    self.summary.pauses += 1;
                    let text = format!("paused at {}", describe(&anchor));
                    self.mode = Mode::Paused { event: msg.id, anchor };
                    return self.say(text);
                }
                Body::Idle => {
                    self.mode = Mode::Finished;
                    return self.say("program finished");
                }
                _ => {}
            }
        }
    }

    fn print(&mut self, what: &str) -> Result<(), WireError> {
        let anchor = match &self.mode {
            Mode::Paused { anchor, .. } => Some(anchor.id),
            _ => None,
        };
        let op = match (what, anchor) {
            ("tree", _) => MopOp::GetTree,
            ("subtree", Some(node)) => MopOp::GetSubtree { node },
            ("attrs", Some(node)) => MopOp::GetNode { node },
            ("action", Some(node)) => MopOp::GetAction { node, role: None },
            ("subtree" | "attrs" | "action", None) => return self.say("not paused"),
            _ => return self.say(DEBUG_USAGE),
        };
        match self.client.mop(op)? {
            MopResult::Nodes(nodes) => {
                for n in nodes {
                    self.say(describe(&n))?;
                }
            }
            MopResult::Node(n) => {
                self.print_attrs(&n, "")?;
                for (i, child) in n.children.iter().enumerate() {
                    if let MopResult::Node(c) = self.client.mop(MopOp::GetNode { node: *child })? {
                        if c.production.is_some() {
                            self.print_attrs(&c, &format!("child {i} "))?;
                        }
                    }
                }
            }
            MopResult::Action(Some(a)) => self.say(format!("action {}", a.key))?,
            MopResult::Action(None) => self.say("default visit")?,
            other => self.say(format!("{other:?}"))?,
        }
        Ok(())
    }

    fn print_attrs(&mut self, n: &NodeInfo, prefix: &str) -> Result<(), WireError> {
        self.say(format!("{prefix}{}", describe(n)))?;
        for a in &n.attrs {
            self.say(format!("  {}.{} = {}", a.role, a.name, a.value))?;
        }
        Ok(())
    }

    /// Drops every registration and releases a pending pause.
    fn quit(&mut self) -> Result<(), WireError> {
        self.clear_step()?;
        for bp in std::mem::take(&mut self.breakpoints) {
            for reg in bp.registrations {
                self.client.unregister(reg, None)?;
            }
        }
        match std::mem::replace(&mut self.mode, Mode::Finished) {
            Mode::Paused { event, .. } => self.client.resume(event, None),
            Mode::NotStarted => self.client.ready(),
            _ => Ok(()),
        }
    }
}

/// Reads commands from `input` until `quit` or end of input.
pub fn debug_session(client: Client, input: impl BufRead, out: &mut dyn Write) -> Result<DebugSummary, WireError> {
    let mut session = DebugSession::new(client, out)?;
    for line in input.lines() {
        if !session.command(&line?)? {
            return Ok(session.summary);
        }
    }
    session.quit()?;
    Ok(session.summary)
}
