//! µDA: the declarative agent language.
//!
//! ```text
//! import some.host.Type;                                  // accepted, ignored
//! production addition : Add from module miniJS.AddSyntax;
//! nt head, left, _ : Add from module miniJS.AddSyntax;    // positions 0, 1 (2 skipped)
//! action arrayNew : New role evaluation from module miniJS.ArrayLikeNewEval;
//! slice oldAdd : miniJS.AddEval;
//! endemic slice symbols : SymbolTable;
//!
//! before addition { print(getAttr(addition, "val")); }
//! after head < left[val == 4] | head in role evaluation { unregister; }
//! once { replaceSlice(oldAdd, newAdd); redoRole("evaluation"); }
//! ```
//!
//! Blocks hold `let`, `if`/`else`, `unregister;` and builtin calls. Each
//! builtin except `print` is one request to the interpreter.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::io::Write;

use thiserror::Error;

use crate::lang::ActionKey;
use crate::mop::{MopOp, MopResult};
use crate::nvm::{HookKind, RegId};
use crate::parser::NodeId;
use crate::patterns::{compile_pattern, render_constant, Binding, BindingTarget, RelOp};
use crate::value::Value;
use crate::wire::{Body, Client, WireError};

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub imports: Vec<String>,
    pub declarations: Vec<Declaration>,
    pub operations: Vec<Operation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Declaration {
    Production { id: String, label: String, module: String },
    /// `None` entries are `_` placeholders.
    Nt { ids: Vec<Option<String>>, label: String, module: String },
    Action { id: String, label: String, role: String, module: String },
    Slice { id: String, name: String },
    Endemic { id: String, name: String },
}

impl Declaration {
    pub fn ids(&self) -> Vec<&str> {
        match self {
            Declaration::Nt { ids, .. } => ids.iter().flatten().map(String::as_str).collect(),
            Declaration::Production { id, .. }
            | Declaration::Action { id, .. }
            | Declaration::Slice { id, .. }
            | Declaration::Endemic { id, .. } => vec![id],
        }
    }

    pub fn bindings(&self) -> Vec<Binding> {
        match self {
            Declaration::Production { id, label, module } => vec![Binding::production(id, module, label)],
            Declaration::Nt { ids, label, module } => ids
                .iter()
                .enumerate()
                .filter_map(|(pos, id)| Some(Binding::nonterminal(id.as_ref()?, module, label, pos)))
                .collect(),
            Declaration::Action { id, label, role, module } => vec![Binding::new(
                id,
                BindingTarget::Action { module: module.clone(), label: label.clone(), role: role.clone() },
            )],
            Declaration::Slice { id, name } => vec![Binding::new(id, BindingTarget::Slice { name: name.clone() })],
            Declaration::Endemic { id, name } => vec![Binding::new(id, BindingTarget::Endemic { name: name.clone() })],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Before,
    After,
    Once,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Operation {
    pub kind: OpKind,
    /// Pattern source text; absent for `once`.
    pub pattern: Option<String>,
    pub role: Option<String>,
    pub block: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Let(String, Expr),
    Call(String, Vec<Expr>),
    If(Expr, Vec<Stmt>, Vec<Stmt>),
    Unregister,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Value),
    Ref(String),
    Call(String, Vec<Expr>),
    Cmp(Box<Expr>, RelOp, Box<Expr>),
}

/// Builtins and their arity (`None`: at least two arguments).
const BUILTINS: &[(&str, Option<usize>)] = &[
    ("getAttr", Some(2)),
    ("setAttr", Some(3)),
    ("setSpecializedAction", Some(2)),
    ("resetNode", Some(2)),
    ("replaceSlice", Some(2)),
    ("redoRole", Some(1)),
    ("endemicCall", None),
    ("print", Some(1)),
];

#[derive(Debug, Error)]
pub enum MudaError {
    #[error("{line}:{column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unbound identifier {0}")]
    Unbound(String),
    #[error("declaration does not resolve: {0}")]
    Resolve(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

// ---- lexing ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Lexed {
    tok: Tok,
    start: usize,
    line: usize,
    column: usize,
}

const PUNCT: &[&str] = &[
    "[+<", ">+]", "<<", "==", "!=", "<=", ">=", "{", "}", "(", ")", ";", ",", ":", "=", "<", ">", "|", "[", "]", "+", "*",
];

fn lex(src: &str) -> Result<Vec<Lexed>, MudaError> {
    let mut out = Vec::new();
    let (mut line, mut line_start) = (1, 0);
    let mut pos = 0;
    let bytes = src.as_bytes();
    while pos < src.len() {
        let c = bytes[pos] as char;
        if c == '\n' {
            line += 1;
            line_start = pos + 1;
            pos += 1;
            continue;
        }
        if c.is_whitespace() {
            pos += 1;
            continue;
        }
        if src[pos..].starts_with("//") {
            pos = src[pos..].find('\n').map_or(src.len(), |n| pos + n);
            continue;
        }
        let column = pos - line_start + 1;
        let err = |message: &str| MudaError::Syntax { line, column, message: message.to_string() };
        let rest = &src[pos..];
        let (tok, len) = if c == '"' {
            let mut de = serde_json::Deserializer::from_str(rest).into_iter::<String>();
            let s = de.next().and_then(Result::ok).ok_or_else(|| err("bad string literal"))?;
            (Tok::Str(s), de.byte_offset())
        } else if c.is_ascii_digit() || (c == '-' && rest[1..].starts_with(|d: char| d.is_ascii_digit())) {
            let n = 1 + rest[1..].chars().take_while(|d| d.is_ascii_digit() || *d == '.').count();
            (Tok::Num(rest[..n].parse().map_err(|_| err("bad number"))?), n)
        } else if c.is_ascii_alphabetic() || c == '_' {
            let n = rest.chars().take_while(|d| d.is_ascii_alphanumeric() || *d == '_' || *d == '.').count();
            (Tok::Ident(rest[..n].to_string()), n)
        } else if let Some(p) = PUNCT.iter().find(|p| rest.starts_with(**p)) {
            (Tok::Punct(p), p.len())
        } else {
            return Err(err(&format!("unexpected character {c:?}")));
        };
        out.push(Lexed { tok, start: pos, line, column });
        pos += len;
    }
    out.push(Lexed { tok: Tok::Eof, start: src.len(), line, column: src.len() - line_start + 1 });
    Ok(out)
}

// ---- parsing -----------------------------------------------------------------

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Lexed>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn err(&self, message: impl Into<String>) -> MudaError {
        let t = &self.toks[self.pos];
        MudaError::Syntax { line: t.line, column: t.column, message: message.into() }
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == w)
    }

    fn punct(&mut self, p: &str) -> Result<(), MudaError> {
        if self.is_punct(p) {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected '{p}'")))
        }
    }

    fn word(&mut self, w: &str) -> Result<(), MudaError> {
        if self.is_word(w) {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected '{w}'")))
        }
    }

    fn ident(&mut self) -> Result<String, MudaError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.err("expected identifier")),
        }
    }

    /// `from module X` or `from slice X`.
    fn from_module(&mut self) -> Result<String, MudaError> {
        self.word("from")?;
        if self.is_word("module") || self.is_word("slice") {
            self.bump();
        } else {
            return Err(self.err("expected 'module'"));
        }
        self.ident()
    }

    fn script(&mut self) -> Result<Script, MudaError> {
        let mut script = Script { imports: Vec::new(), declarations: Vec::new(), operations: Vec::new() };
        let mut bindings: Vec<Binding> = Vec::new();
        let mut declared: BTreeSet<String> = BTreeSet::new();
        while *self.peek() != Tok::Eof {
            let Tok::Ident(kw) = self.peek().clone() else { return Err(self.err("expected declaration or operation")) };
            match kw.as_str() {
                "import" => {
                    self.bump();
                    let start = self.toks[self.pos].start;
                    while !self.is_punct(";") && *self.peek() != Tok::Eof {
                        self.bump();
                    }
                    let text = self.src[start..self.toks[self.pos].start].trim().to_string();
                    self.punct(";")?;
                    script.imports.push(text);
                }
                "production" | "nt" | "action" | "slice" | "endemic" => {
                    let d = self.declaration()?;
                    for id in d.ids() {
                        if !declared.insert(id.to_string()) {
                            return Err(self.err(format!("{id} declared twice")));
                        }
                    }
                    bindings.extend(d.bindings());
                    script.declarations.push(d);
                }
                "before" | "after" | "once" => {
                    let op = self.operation(&bindings, &declared)?;
                    script.operations.push(op);
                }
                other => return Err(self.err(format!("unexpected {other}"))),
            }
        }
        Ok(script)
    }

    fn declaration(&mut self) -> Result<Declaration, MudaError> {
        let kw = self.ident()?;
        let d = match kw.as_str() {
            "production" => {
                let id = self.ident()?;
                self.punct(":")?;
                let label = self.ident()?;
                let module = self.from_module()?;
                Declaration::Production { id, label, module }
            }
            "nt" => {
                let mut ids = Vec::new();
                loop {
                    let id = self.ident()?;
                    ids.push((id != "_").then_some(id));
                    if self.is_punct(",") {
                        self.bump();
                    } else {
                        break;
                    }
                }
                self.punct(":")?;
                let label = self.ident()?;
                let module = self.from_module()?;
                Declaration::Nt { ids, label, module }
            }
            "action" => {
                let id = self.ident()?;
                self.punct(":")?;
                let label = self.ident()?;
                self.word("role")?;
                let role = self.ident()?;
                let module = self.from_module()?;
                Declaration::Action { id, label, role, module }
            }
            "slice" => {
                let id = self.ident()?;
                self.punct(":")?;
                Declaration::Slice { id, name: self.ident()? }
            }
            "endemic" => {
                self.word("slice")?;
                let id = self.ident()?;
                self.punct(":")?;
                Declaration::Endemic { id, name: self.ident()? }
            }
            _ => unreachable!("caller checked the keyword"),
        };
        self.punct(";")?;
        Ok(d)
    }

    fn operation(&mut self, bindings: &[Binding], declared: &BTreeSet<String>) -> Result<Operation, MudaError> {
        let kw = self.ident()?;
        let kind = match kw.as_str() {
            "before" => OpKind::Before,
            "after" => OpKind::After,
            _ => OpKind::Once,
        };
        let mut scope: BTreeSet<String> = declared.clone();
        let (mut pattern, mut role) = (None, None);
        if kind != OpKind::Once {
            let start = self.toks[self.pos].start;
            let (line, column) = (self.toks[self.pos].line, self.toks[self.pos].column);
            while !self.is_punct("{") && *self.peek() != Tok::Eof {
                self.bump();
            }
            let mut text = self.src[start..self.toks[self.pos].start].trim().to_string();
            let words: Vec<&str> = text.split_whitespace().collect();
            if words.len() >= 3 && words[words.len() - 3] == "in" && words[words.len() - 2] == "role" {
                role = Some(words[words.len() - 1].to_string());
                let cut = text.rfind(" in ").expect("found above");
                text = text[..cut].trim().to_string();
            }
            let compiled = compile_pattern(bindings, &text).map_err(|e| match e {
                crate::patterns::PatternError::Unbound(id) => MudaError::Unbound(id),
                other => MudaError::Syntax { line, column, message: other.to_string() },
            })?;
            scope.extend(compiled.targets.keys().cloned());
            pattern = Some(text);
        }
        let block = self.block(&mut scope)?;
        Ok(Operation { kind, pattern, role, block })
    }

    fn block(&mut self, scope: &mut BTreeSet<String>) -> Result<Vec<Stmt>, MudaError> {
        self.punct("{")?;
        let mut stmts = Vec::new();
        let outer = scope.clone();
        while !self.is_punct("}") {
            if *self.peek() == Tok::Eof {
                return Err(self.err("unterminated block"));
            }
            stmts.push(self.stmt(scope)?);
        }
        self.bump();
        *scope = outer;
        Ok(stmts)
    }

    fn stmt(&mut self, scope: &mut BTreeSet<String>) -> Result<Stmt, MudaError> {
        if self.is_word("let") {
            self.bump();
            let id = self.ident()?;
            self.punct("=")?;
            let e = self.expr(scope)?;
            self.punct(";")?;
            scope.insert(id.clone());
            return Ok(Stmt::Let(id, e));
        }
        if self.is_word("unregister") {
            self.bump();
            self.punct(";")?;
            return Ok(Stmt::Unregister);
        }
        if self.is_word("if") {
            self.bump();
            self.punct("(")?;
            let cond = self.expr(scope)?;
            self.punct(")")?;
            let then = self.block(scope)?;
            let otherwise = if self.is_word("else") {
                self.bump();
                self.block(scope)?
            } else {
                Vec::new()
            };
            return Ok(Stmt::If(cond, then, otherwise));
        }
        let name = self.ident()?;
        let args = self.call_args(&name, scope)?;
        self.punct(";")?;
        Ok(Stmt::Call(name, args))
    }

    fn call_args(&mut self, name: &str, scope: &BTreeSet<String>) -> Result<Vec<Expr>, MudaError> {
        let Some((_, arity)) = BUILTINS.iter().find(|(b, _)| *b == name) else {
            return Err(self.err(format!("unknown builtin {name}")));
        };
        self.punct("(")?;
        let mut args = Vec::new();
        while !self.is_punct(")") {
            args.push(self.expr(scope)?);
            if !self.is_punct(")") {
                self.punct(",")?;
            }
        }
        self.bump();
        let ok = match arity {
            Some(n) => args.len() == *n,
            None => args.len() >= 2,
        };
        if !ok {
            return Err(self.err(format!("wrong number of arguments to {name}")));
        }
        Ok(args)
    }

    fn expr(&mut self, scope: &BTreeSet<String>) -> Result<Expr, MudaError> {
        let lhs = self.primary(scope)?;
        let op = match self.peek() {
            Tok::Punct("==") => RelOp::Eq,
            Tok::Punct("!=") => RelOp::Ne,
            Tok::Punct("<") => RelOp::Lt,
            Tok::Punct("<=") => RelOp::Le,
            Tok::Punct(">") => RelOp::Gt,
            Tok::Punct(">=") => RelOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.primary(scope)?;
        Ok(Expr::Cmp(Box::new(lhs), op, Box::new(rhs)))
    }

    fn primary(&mut self, scope: &BTreeSet<String>) -> Result<Expr, MudaError> {
        match self.bump() {
            Tok::Num(n) => Ok(Expr::Lit(Value::Number(n))),
            Tok::Str(s) => Ok(Expr::Lit(Value::Str(s))),
            Tok::Punct("(") => {
                let e = self.expr(scope)?;
                self.punct(")")?;
                Ok(e)
            }
            Tok::Ident(w) => match w.as_str() {
                "true" => Ok(Expr::Lit(Value::Bool(true))),
                "false" => Ok(Expr::Lit(Value::Bool(false))),
                "null" => Ok(Expr::Lit(Value::Null)),
                _ if self.is_punct("(") => Ok(Expr::Call(w.clone(), self.call_args(&w, scope)?)),
                _ if scope.contains(&w) => Ok(Expr::Ref(w)),
                _ => Err(MudaError::Unbound(w)),
            },
            _ => {
                self.pos -= 1;
                Err(self.err("expected expression"))
            }
        }
    }
}

pub fn parse_script(text: &str) -> Result<Script, MudaError> {
    let toks = lex(text)?;
    Parser { src: text, toks, pos: 0 }.script()
}

// ---- pretty printing ----------------------------------------------------------

fn fmt_expr(e: &Expr) -> String {
    match e {
        Expr::Lit(v) => match v {
            Value::Null => "null".into(),
            Value::Bool(b) => b.to_string(),
            other => render_constant(other),
        },
        Expr::Ref(id) => id.clone(),
        Expr::Call(name, args) => format!("{name}({})", args.iter().map(fmt_expr).collect::<Vec<_>>().join(", ")),
        Expr::Cmp(l, op, r) => format!("{} {} {}", fmt_operand(l), op.symbol(), fmt_operand(r)),
    }
}

/// Comparisons do not chain, so a nested one needs parentheses.
fn fmt_operand(e: &Expr) -> String {
    match e {
        Expr::Cmp(..) => format!("({})", fmt_expr(e)),
        other => fmt_expr(other),
    }
}

fn fmt_block(out: &mut String, block: &[Stmt], depth: usize) {
    out.push_str("{\n");
    for s in block {
        out.push_str(&"    ".repeat(depth + 1));
        match s {
            Stmt::Let(id, e) => {
                let _ = writeln!(out, "let {id} = {};", fmt_expr(e));
            }
            Stmt::Call(name, args) => {
                let _ = writeln!(out, "{};", fmt_expr(&Expr::Call(name.clone(), args.clone())));
            }
            Stmt::Unregister => out.push_str("unregister;\n"),
            Stmt::If(c, t, f) => {
                let _ = write!(out, "if ({}) ", fmt_expr(c));
                fmt_block(out, t, depth + 1);
                if !f.is_empty() {
                    out.pop();
                    out.push_str(" else ");
                    fmt_block(out, f, depth + 1);
                }
            }
        }
    }
    out.push_str(&"    ".repeat(depth));
    out.push_str("}\n");
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for i in &self.imports {
            let _ = writeln!(out, "import {i};");
        }
        for d in &self.declarations {
            let _ = match d {
                Declaration::Production { id, label, module } => writeln!(out, "production {id} : {label} from module {module};"),
                Declaration::Nt { ids, label, module } => {
                    let ids: Vec<&str> = ids.iter().map(|i| i.as_deref().unwrap_or("_")).collect();
                    writeln!(out, "nt {} : {label} from module {module};", ids.join(", "))
                }
                Declaration::Action { id, label, role, module } => {
                    writeln!(out, "action {id} : {label} role {role} from module {module};")
                }
                Declaration::Slice { id, name } => writeln!(out, "slice {id} : {name};"),
                Declaration::Endemic { id, name } => writeln!(out, "endemic slice {id} : {name};"),
            };
        }
        for op in &self.operations {
            match op.kind {
                OpKind::Once => out.push_str("once "),
                k => {
                    out.push_str(if k == OpKind::Before { "before " } else { "after " });
                    out.push_str(op.pattern.as_deref().unwrap_or_default());
                    if let Some(r) = &op.role {
                        let _ = write!(out, " in role {r}");
                    }
                    out.push(' ');
                }
            }
            fmt_block(&mut out, &op.block, 0);
        }
        f.write_str(&out)
    }
}

// ---- runtime -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum MVal {
    V(Value),
    Node(NodeId),
    Action(ActionKey),
    Slice(String),
    Endemic(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub registrations: usize,
    pub anchors: usize,
    pub notifications: usize,
    pub once_results: Vec<Vec<MopResult>>,
}

/// Where a block runs: inside a hook notification or a `once` window.
#[derive(Clone, Copy)]
enum Site {
    Hook { registration: RegId, anchor: NodeId },
    Once,
}

pub struct Agent<'a> {
    client: &'a mut Client,
    script: &'a Script,
    out: &'a mut dyn Write,
    decls: HashMap<String, Declaration>,
    /// Registration id → (operation index, anchors left).
    active: BTreeMap<RegId, (usize, usize)>,
}

fn is_straight_line(block: &[Stmt]) -> bool {
    block.iter().all(|s| match s {
        Stmt::Call(name, args) => name != "print" && args.iter().all(|a| matches!(a, Expr::Lit(_) | Expr::Ref(_))),
        _ => false,
    })
}

fn value_of(r: MopResult) -> Value {
    match r {
        MopResult::Value(v) => v.unwrap_or(Value::Null),
        _ => Value::Null,
    }
}

impl<'a> Agent<'a> {
    pub fn new(client: &'a mut Client, script: &'a Script, out: &'a mut dyn Write) -> Self {
        let mut decls = HashMap::new();
        for d in &script.declarations {
            for id in d.ids() {
                decls.insert(id.to_string(), d.clone());
            }
        }
        Agent { client, script, out, decls, active: BTreeMap::new() }
    }

    /// Checks every declaration against the interpreter's structure.
    pub fn resolve(&mut self) -> Result<(), MudaError> {
        let MopResult::Productions(prods) = self.client.mop(MopOp::GetGrammarProductions)? else {
            return Err(MudaError::Runtime("unexpected reply to getGrammarProductions".into()));
        };
        let MopResult::Actions(actions) = self.client.mop(MopOp::GetActions)? else {
            return Err(MudaError::Runtime("unexpected reply to getActions".into()));
        };
        let MopResult::Slices(slices) = self.client.mop(MopOp::GetAvailableSlices)? else {
            return Err(MudaError::Runtime("unexpected reply to getAvailableSlices".into()));
        };
        let MopResult::Endemics(endemics) = self.client.mop(MopOp::GetEndemics)? else {
            return Err(MudaError::Runtime("unexpected reply to getEndemics".into()));
        };
        for d in &self.script.declarations {
            match d {
                Declaration::Production { label, module, .. } | Declaration::Nt { label, module, .. } => {
                    let p = prods
                        .iter()
                        .find(|p| &p.module == module && p.label.as_deref() == Some(label.as_str()))
                        .ok_or_else(|| MudaError::Resolve(format!("no production {label} in module {module}")))?;
                    if let Declaration::Nt { ids, .. } = d {
                        let arity = 1 + p.body.iter().filter(|s| matches!(s, crate::lang::Symbol::Nonterminal(_))).count();
                        if ids.len() > arity {
                            return Err(MudaError::Resolve(format!("{label} has only {arity} nonterminal positions")));
                        }
                    }
                }
                Declaration::Action { label, role, module, .. } => {
                    let key = ActionKey::new(module, label, role);
                    if !actions.iter().any(|a| a.key == key) {
                        return Err(MudaError::Resolve(format!("no action {key}")));
                    }
                }
                Declaration::Slice { name, .. } => {
                    if !slices.iter().any(|s| &s.name == name) {
                        return Err(MudaError::Resolve(format!("no slice {name}")));
                    }
                }
                Declaration::Endemic { name, .. } => {
                    if !endemics.iter().any(|e| &e.binding_id == name) {
                        return Err(MudaError::Resolve(format!("no endemic slice {name}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn bindings(&self) -> Vec<Binding> {
        self.script.declarations.iter().flat_map(Declaration::bindings).collect()
    }

    /// Resolves, registers, runs `once` blocks, reports ready and serves
    /// notifications until no registration is left or the interpreter
    /// finishes.
    pub fn run(&mut self) -> Result<RunReport, MudaError> {
        let mut report = RunReport::default();
        for i in &self.script.imports {
            eprintln!("warning: import {i} ignored");
        }
        self.resolve()?;
        let MopResult::Roles(roles) = self.client.mop(MopOp::GetRoles)? else {
            return Err(MudaError::Runtime("unexpected reply to getRoles".into()));
        };
        let default_role = roles.last().map(|r| r.name.clone()).unwrap_or_default();
        let bindings = self.bindings();
        for (idx, op) in self.script.operations.iter().enumerate() {
            let hook = match op.kind {
                OpKind::Before => HookKind::Before,
                OpKind::After => HookKind::After,
                OpKind::Once => continue,
            };
            let role = op.role.clone().unwrap_or_else(|| default_role.clone());
            let pattern = op.pattern.as_deref().unwrap_or_default();
            let (reg, anchors) = self.client.register(bindings.clone(), pattern, hook, &role)?;
            report.registrations += 1;
            report.anchors += anchors;
            if anchors > 0 {
                self.active.insert(reg, (idx, anchors));
            }
        }
        for op in self.script.operations.iter().filter(|o| o.kind == OpKind::Once) {
            report.once_results.push(self.run_once(&op.block)?);
        }
        self.client.ready()?;
        while !self.active.is_empty() {
            let Some(msg) = self.client.next_event()? else { break };
            match msg.body {
                Body::HookEvent { registration, anchor, env, .. } => {
                    report.notifications += 1;
                    let Some(&(idx, _)) = self.active.get(&registration) else {
                        self.client.resume(msg.id, None)?;
                        continue;
                    };
                    let mut scope: HashMap<String, MVal> =
                        env.iter().map(|(k, info)| (k.clone(), MVal::Node(info.id))).collect();
                    let block = &self.script.operations[idx].block;
                    let site = Site::Hook { registration, anchor: anchor.id };
                    let note = self.exec_block(block, &mut scope, site).err().map(|e| {
                        eprintln!("agent block failed: {e}");
                        e.to_string()
                    });
                    self.client.resume(msg.id, note)?;
                }
                Body::Idle => break,
                _ => {}
            }
        }
        Ok(report)
    }

    fn run_once(&mut self, block: &[Stmt]) -> Result<Vec<MopResult>, MudaError> {
        let mut scope = HashMap::new();
        if is_straight_line(block) {
            let mut ops = Vec::new();
            for s in block {
                let Stmt::Call(name, args) = s else { unreachable!("straight-line blocks only hold calls") };
                let vals = args.iter().map(|a| self.eval(a, &mut scope, Site::Once)).collect::<Result<Vec<_>, _>>()?;
                ops.extend(self.to_op(name, vals)?);
            }
            let (_, results) = self.client.once(ops, false)?;
            return Ok(results);
        }
        let (id, _) = self.client.once(Vec::new(), true)?;
        let result = self.exec_block(block, &mut scope, Site::Once);
        self.client.resume(id, result.as_ref().err().map(|e| e.to_string()))?;
        result.map(|_| Vec::new())
    }

    fn exec_block(&mut self, block: &[Stmt], scope: &mut HashMap<String, MVal>, site: Site) -> Result<(), MudaError> {
        for s in block {
            match s {
                Stmt::Let(id, e) => {
                    let v = self.eval(e, scope, site)?;
                    scope.insert(id.clone(), v);
                }
                Stmt::Call(name, args) => {
                    self.eval(&Expr::Call(name.clone(), args.clone()), scope, site)?;
                }
                Stmt::If(c, t, f) => {
                    let branch = match self.eval(c, scope, site)? {
                        MVal::V(v) => v.truthy(),
                        _ => true,
                    };
                    self.exec_block(if branch { t } else { f }, scope, site)?;
                }
                Stmt::Unregister => self.unregister(site)?,
            }
        }
        Ok(())
    }

    fn unregister(&mut self, site: Site) -> Result<(), MudaError> {
        match site {
            Site::Hook { registration, anchor } => {
                let left = self.client.unregister(registration, Some(anchor))?;
                if left == 0 {
                    self.active.remove(&registration);
                } else if let Some(entry) = self.active.get_mut(&registration) {
                    entry.1 = left;
                }
            }
            Site::Once => {
                for reg in std::mem::take(&mut self.active).into_keys() {
                    self.client.unregister(reg, None)?;
                }
            }
        }
        Ok(())
    }

    fn lookup(&self, id: &str, scope: &HashMap<String, MVal>) -> Result<MVal, MudaError> {
        if let Some(v) = scope.get(id) {
            return Ok(v.clone());
        }
        match self.decls.get(id) {
            Some(Declaration::Action { label, role, module, .. }) => Ok(MVal::Action(ActionKey::new(module, label, role))),
            Some(Declaration::Slice { name, .. }) => Ok(MVal::Slice(name.clone())),
            Some(Declaration::Endemic { name, .. }) => Ok(MVal::Endemic(name.clone())),
            Some(_) => Err(MudaError::Runtime(format!("{id} is not bound to a node here"))),
            None => Err(MudaError::Unbound(id.to_string())),
        }
    }

    fn eval(&mut self, e: &Expr, scope: &mut HashMap<String, MVal>, site: Site) -> Result<MVal, MudaError> {
        match e {
            Expr::Lit(v) => Ok(MVal::V(v.clone())),
            Expr::Ref(id) => self.lookup(id, scope),
            Expr::Cmp(l, op, r) => {
                let (l, r) = (self.eval(l, scope, site)?, self.eval(r, scope, site)?);
                let b = match (&l, &r) {
                    (MVal::V(a), MVal::V(b)) => op.apply(a, b),
                    _ => match op {
                        RelOp::Eq => l == r,
                        RelOp::Ne => l != r,
                        _ => false,
                    },
                };
                Ok(MVal::V(Value::Bool(b)))
            }
            Expr::Call(name, args) => {
                let vals = args.iter().map(|a| self.eval(a, scope, site)).collect::<Result<Vec<_>, _>>()?;
                if name == "print" {
                    let text = match &vals[0] {
                        MVal::V(v) => v.to_string(),
                        MVal::Node(n) => format!("node {n}"),
                        MVal::Action(k) => k.to_string(),
                        MVal::Slice(s) | MVal::Endemic(s) => s.clone(),
                    };
                    writeln!(self.out, "{text}").map_err(|e| MudaError::Runtime(e.to_string()))?;
                    return Ok(MVal::V(Value::Null));
                }
                let op = self.to_op(name, vals)?.expect("print handled above");
                Ok(MVal::V(value_of(self.client.mop(op)?)))
            }
        }
    }

    /// The request a builtin call stands for; `None` for `print`.
    fn to_op(&self, name: &str, args: Vec<MVal>) -> Result<Option<MopOp>, MudaError> {
        let bad = |what: &str| MudaError::Runtime(format!("{name}: argument must be {what}"));
        let node = |v: &MVal| match v {
            MVal::Node(n) => Ok(*n),
            _ => Err(bad("a node")),
        };
        let string = |v: &MVal| match v {
            MVal::V(Value::Str(s)) => Ok(s.clone()),
            _ => Err(bad("a string")),
        };
        let slice = |v: &MVal| match v {
            MVal::Slice(s) | MVal::V(Value::Str(s)) => Ok(s.clone()),
            _ => Err(bad("a slice")),
        };
        let value = |v: &MVal| match v {
            MVal::V(v) => Ok(v.clone()),
            _ => Err(bad("a value")),
        };
        Ok(Some(match name {
            "print" => return Ok(None),
            "getAttr" => MopOp::GetAttr { node: node(&args[0])?, name: string(&args[1])?, role: None },
            "setAttr" => MopOp::SetAttr { node: node(&args[0])?, name: string(&args[1])?, value: value(&args[2])?, role: None },
            "setSpecializedAction" => {
                let MVal::Action(key) = &args[1] else { return Err(bad("an action")) };
                MopOp::SetSpecializedAction { node: node(&args[0])?, role: key.role.clone(), action: key.clone() }
            }
            "resetNode" => MopOp::ResetNode { node: node(&args[0])?, role: string(&args[1])? },
            "replaceSlice" => MopOp::ReplaceSlice { old: slice(&args[0])?, new: slice(&args[1])? },
            "redoRole" => MopOp::RedoRole { role: string(&args[0])? },
            "endemicCall" => {
                let endemic = match &args[0] {
                    MVal::Endemic(e) | MVal::V(Value::Str(e)) => e.clone(),
                    _ => return Err(bad("an endemic slice")),
                };
                let rest = args[2..].iter().map(value).collect::<Result<Vec<_>, _>>()?;
                MopOp::EndemicCall { endemic, operation: string(&args[1])?, args: rest }
            }
            other => return Err(MudaError::Runtime(format!("unknown builtin {other}"))),
        }))
    }
}

/// Parses `text` and runs it against the interpreter behind `client`.
pub fn run_script(text: &str, client: &mut Client, out: &mut dyn Write) -> Result<RunReport, MudaError> {
    let script = parse_script(text)?;
    Agent::new(client, &script, out).run()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTING: &str = r#"
        import java.util.List;
        production addition : Add from module mylang.AddSyntax;
        nt head, left, _ : Add from module mylang.AddSyntax;
        before addition { print(getAttr(addition, "val")); }
        after head < left[val==4] | head { setAttr(head, "seen", true); unregister; }
    "#;

    #[test]
    fn parses_declarations_and_operations() {
        let s = parse_script(LISTING).unwrap();
        assert_eq!(s.imports, vec!["java.util.List".to_string()]);
        assert_eq!(s.operations.len(), 2);
        assert_eq!(
            s.declarations[1],
            Declaration::Nt {
                ids: vec![Some("head".into()), Some("left".into()), None],
                label: "Add".into(),
                module: "mylang.AddSyntax".into()
            }
        );
        let b = s.declarations[1].bindings();
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], Binding::nonterminal("left", "mylang.AddSyntax", "Add", 1));
        assert_eq!(s.operations[1].pattern.as_deref(), Some("head < left[val==4] | head"));
    }

    #[test]
    fn undeclared_pattern_identifier() {
        let err = parse_script("production a : Add from module m; before b { }").unwrap_err();
        assert!(matches!(err, MudaError::Unbound(id) if id == "b"));
    }

    #[test]
    fn undeclared_block_identifier() {
        let err = parse_script("once { print(x); }").unwrap_err();
        assert!(matches!(err, MudaError::Unbound(id) if id == "x"));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_script("once {\n  print(1)\n}").unwrap_err();
        assert!(matches!(err, MudaError::Syntax { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn role_clause_and_round_trip() {
        let src = "slice a : miniJS.AddEval;\nslice b : miniJS.SubAddEval;\nproduction p : Add from module miniJS.AddSyntax;\n\
                   before p in role evaluation { let v = getAttr(p, \"val\"); if (v == 3) { print(\"three\"); } else { unregister; } }\n\
                   once { replaceSlice(a, b); redoRole(\"evaluation\"); }";
        let s = parse_script(src).unwrap();
        assert_eq!(s.operations[0].role.as_deref(), Some("evaluation"));
        let again = parse_script(&s.to_string()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn straight_line_detection() {
        let s = parse_script("slice a : x; slice b : y; once { replaceSlice(a, b); redoRole(\"evaluation\"); }").unwrap();
        assert!(is_straight_line(&s.operations[0].block));
        let s = parse_script("endemic slice t : T; once { let n = endemicCall(t, \"count\", \"P\"); print(n); }").unwrap();
        assert!(!is_straight_line(&s.operations[0].block));
    }
}
