//! Language specifications: syntax modules, semantic actions, slices,
//! endemic slices and the composed [`LanguageSpec`].
//!
//! A language is the set of slices it is composed from. Each slice pairs a
//! syntax module with role-labelled semantic actions. Actions live in a
//! build-time [`ActionCatalog`]; runtime adaptation never compiles code, it
//! only rebinds catalog keys.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nvm::{ActionFn, EndemicFactory, EndemicOp};

/// Index of a production in [`LanguageSpec::productions`]. Stable across
/// slice replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProdId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenClass {
    #[serde(rename = "NUM")]
    Num,
    #[serde(rename = "STRING")]
    Str,
    #[serde(rename = "ID")]
    Id,
}

impl TokenClass {
    pub fn name(self) -> &'static str {
        match self {
            TokenClass::Num => "NUM",
            TokenClass::Str => "STRING",
            TokenClass::Id => "ID",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "sym", content = "v")]
pub enum Symbol {
    Nonterminal(String),
    Literal(String),
    Token(TokenClass),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Nonterminal(n) => f.write_str(n),
            Symbol::Literal(t) => write!(f, "{t:?}"),
            Symbol::Token(c) => f.write_str(c.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Assoc {
    Left,
    Right,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Production {
    pub module: String,
    pub label: Option<String>,
    pub head: String,
    pub body: Vec<Symbol>,
    pub precedence: u32,
    pub assoc: Assoc,
}

impl Production {
    /// Parses `Head <- sym sym ...`. Quoted symbols are literals, `NUM`,
    /// `STRING` and `ID` are token classes, anything else is a nonterminal.
    pub fn parse(module: &str, label: Option<&str>, rule: &str) -> Result<Production, LangError> {
        let bad = |msg: &str| LangError::BadRule { rule: rule.to_string(), message: msg.to_string() };
        let (head, body) = rule.split_once("<-").ok_or_else(|| bad("missing '<-'"))?;
        let head = head.trim();
        if !head.chars().next().is_some_and(|c| c.is_ascii_uppercase()) {
            return Err(bad("head must be a capitalized nonterminal"));
        }
        let mut symbols = Vec::new();
        let mut rest = body.trim();
        while !rest.is_empty() {
            if let Some(stripped) = rest.strip_prefix('"') {
                let end = stripped.find('"').ok_or_else(|| bad("unterminated literal"))?;
                let text = &stripped[..end];
                if text.is_empty() {
                    return Err(bad("empty literal"));
                }
                symbols.push(Symbol::Literal(text.to_string()));
                rest = stripped[end + 1..].trim_start();
            } else {
                let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                let word = &rest[..end];
                symbols.push(match word {
                    "NUM" => Symbol::Token(TokenClass::Num),
                    "STRING" => Symbol::Token(TokenClass::Str),
                    "ID" => Symbol::Token(TokenClass::Id),
                    w if w.chars().next().is_some_and(|c| c.is_ascii_uppercase()) => {
                        Symbol::Nonterminal(w.to_string())
                    }
                    _ => return Err(bad("symbols must be quoted, a token class or capitalized")),
                });
                rest = rest[end..].trim_start();
            }
        }
        Ok(Production {
            module: module.to_string(),
            label: label.map(str::to_string),
            head: head.to_string(),
            body: symbols,
            precedence: 0,
            assoc: Assoc::None,
        })
    }

    /// Same head and body. Labels and precedence annotations are ignored.
    pub fn same_syntax(&self, other: &Production) -> bool {
        self.head == other.head && self.body == other.body
    }

    /// Body indices of nonterminal symbols, in order.
    pub fn nonterminal_positions(&self) -> Vec<usize> {
        self.body
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, Symbol::Nonterminal(_)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn display_label(&self) -> &str {
        self.label.as_deref().unwrap_or("_")
    }
}

impl fmt::Display for Production {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} :: {} : {} <-", self.module, self.display_label(), self.head)?;
        for s in &self.body {
            write!(f, " {s}")?;
        }
        if self.precedence > 0 || self.assoc != Assoc::None {
            let assoc = match self.assoc {
                Assoc::Left => "left",
                Assoc::Right => "right",
                Assoc::None => "none",
            };
            write!(f, " [prec {}, {}]", self.precedence, assoc)?;
        }
        Ok(())
    }
}

/// A named group of productions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxModule {
    pub name: String,
    pub productions: Vec<Production>,
}

impl SyntaxModule {
    pub fn new(name: &str) -> Self {
        SyntaxModule { name: name.to_string(), productions: Vec::new() }
    }

    pub fn rule(mut self, label: &str, rule: &str) -> Result<Self, LangError> {
        let p = Production::parse(&self.name, Some(label), rule)?;
        self.productions.push(p);
        Ok(self)
    }

    /// Adds a rule carrying a precedence level and associativity.
    pub fn op_rule(mut self, label: &str, rule: &str, precedence: u32, assoc: Assoc) -> Result<Self, LangError> {
        let mut p = Production::parse(&self.name, Some(label), rule)?;
        p.precedence = precedence;
        p.assoc = assoc;
        self.productions.push(p);
        Ok(self)
    }

    pub fn production(&self, label: &str) -> Option<&Production> {
        self.productions.iter().find(|p| p.label.as_deref() == Some(label))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionKey {
    pub module: String,
    pub label: String,
    pub role: String,
}

impl ActionKey {
    pub fn new(module: &str, label: &str, role: &str) -> Self {
        ActionKey { module: module.to_string(), label: label.to_string(), role: role.to_string() }
    }
}

impl fmt::Display for ActionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}@{}", self.module, self.label, self.role)
    }
}

/// Catalog metadata of one semantic action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticAction {
    pub key: ActionKey,
    pub provides: BTreeSet<String>,
    /// `(body index, attribute)` pairs read from children.
    pub requires: BTreeSet<(usize, String)>,
    pub impl_ref: String,
}

/// Build-time host code: action implementations, endemic state factories and
/// endemic operations, all addressed by string references.
#[derive(Default)]
pub struct ActionCatalog {
    actions: BTreeMap<ActionKey, SemanticAction>,
    impls: HashMap<String, ActionFn>,
    factories: HashMap<String, EndemicFactory>,
    ops: HashMap<String, EndemicOp>,
}

impl fmt::Debug for ActionCatalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActionCatalog")
            .field("actions", &self.actions.keys().collect::<Vec<_>>())
            .field("factories", &self.factories.keys().collect::<Vec<_>>())
            .field("ops", &self.ops.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl ActionCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an action whose implementation reference is the key itself.
    pub fn action(&mut self, key: ActionKey, provides: &[&str], requires: &[(usize, &str)], func: ActionFn) -> &mut Self {
        let impl_ref = key.to_string();
        self.impls.insert(impl_ref.clone(), func);
        self.declare(SemanticAction {
            key,
            provides: provides.iter().map(|s| s.to_string()).collect(),
            requires: requires.iter().map(|(i, s)| (*i, s.to_string())).collect(),
            impl_ref,
        })
    }

    /// Declares action metadata pointing at an implementation registered
    /// separately (or not at all, which composition reports).
    pub fn declare(&mut self, action: SemanticAction) -> &mut Self {
        self.actions.insert(action.key.clone(), action);
        self
    }

    pub fn implementation(&mut self, impl_ref: &str, func: ActionFn) -> &mut Self {
        self.impls.insert(impl_ref.to_string(), func);
        self
    }

    pub fn factory(&mut self, name: &str, f: EndemicFactory) -> &mut Self {
        self.factories.insert(name.to_string(), f);
        self
    }

    pub fn op(&mut self, name: &str, f: EndemicOp) -> &mut Self {
        self.ops.insert(name.to_string(), f);
        self
    }

    pub fn get(&self, key: &ActionKey) -> Option<&SemanticAction> {
        self.actions.get(key)
    }

    pub fn func(&self, key: &ActionKey) -> Option<ActionFn> {
        self.actions.get(key).and_then(|a| self.impls.get(&a.impl_ref)).copied()
    }

    pub fn get_factory(&self, name: &str) -> Option<EndemicFactory> {
        self.factories.get(name).copied()
    }

    pub fn get_op(&self, name: &str) -> Option<EndemicOp> {
        self.ops.get(name).copied()
    }

    pub fn actions(&self) -> impl Iterator<Item = &SemanticAction> {
        self.actions.values()
    }

    fn resolves(&self, key: &ActionKey) -> bool {
        self.func(key).is_some()
    }
}

/// A syntax module combined with role-labelled actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    pub name: String,
    pub syntax: Arc<SyntaxModule>,
    /// role -> (production label, action)
    pub bindings: BTreeMap<String, Vec<(String, ActionKey)>>,
}

impl Slice {
    pub fn new(name: &str, syntax: Arc<SyntaxModule>) -> Self {
        Slice { name: name.to_string(), syntax, bindings: BTreeMap::new() }
    }

    pub fn bind(mut self, role: &str, label: &str, action: ActionKey) -> Self {
        self.bindings.entry(role.to_string()).or_default().push((label.to_string(), action));
        self
    }

    /// Binds `label` in `role` to the action `<slice name>:<label>@<role>`.
    pub fn bind_own(self, role: &str, label: &str) -> Self {
        let key = ActionKey::new(&self.name, label, role);
        self.bind(role, label, key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndemicSlice {
    pub name: String,
    pub binding_id: String,
    pub state_factory: String,
    pub exported_ops: BTreeMap<String, String>,
}

impl EndemicSlice {
    pub fn new(name: &str, binding_id: &str, state_factory: &str) -> Self {
        EndemicSlice {
            name: name.to_string(),
            binding_id: binding_id.to_string(),
            state_factory: state_factory.to_string(),
            exported_ops: BTreeMap::new(),
        }
    }

    pub fn export(mut self, op: &str, catalog_ref: &str) -> Self {
        self.exported_ops.insert(op.to_string(), catalog_ref.to_string());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FindingKind {
    MissingAttribute,
    SignatureMismatch,
    DuplicateLabel,
    UnknownAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn has(&self, kind: FindingKind) -> bool {
        self.errors.iter().any(|f| f.kind == kind)
    }

    fn push(&mut self, kind: FindingKind, location: impl Into<String>, message: impl Into<String>) {
        self.errors.push(Finding { kind, location: location.into(), message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{:?} at {}: {}", e.kind, e.location, e.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LangError {
    #[error("a language needs at least one slice")]
    EmptyLanguage,
    #[error("role order must start with \"syntax\", got {0:?}")]
    BadRoleOrder(Vec<String>),
    #[error("start nonterminal {0} has no production")]
    UnknownStart(String),
    #[error("slice {0} listed twice")]
    DuplicateSlice(String),
    #[error("unknown slice {0}")]
    UnknownSlice(String),
    #[error("syntax of {new} differs from {old}: {message}")]
    SyntaxMismatch { old: String, new: String, message: String },
    #[error("bad rule {rule:?}: {message}")]
    BadRule { rule: String, message: String },
    #[error("endemic slice problem: {0}")]
    Endemic(String),
    #[error("invalid language: {0}")]
    Invalid(ValidationReport),
}

impl LangError {
    pub fn has(&self, kind: FindingKind) -> bool {
        matches!(self, LangError::Invalid(r) if r.has(kind))
    }
}

/// The composed language: `L = {c_1..c_n}` plus endemic state and role order.
#[derive(Debug, Clone)]
pub struct LanguageSpec {
    pub name: String,
    pub catalog: Arc<ActionCatalog>,
    pub slices: Vec<Slice>,
    pub endemics: Vec<EndemicSlice>,
    pub role_order: Vec<String>,
    pub start: String,
    productions: Vec<Production>,
    bindings: BTreeMap<(String, ProdId), ActionKey>,
}

/// Snapshot of a production, as handed to agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductionInfo {
    pub id: ProdId,
    pub module: String,
    pub label: Option<String>,
    pub head: String,
    pub body: Vec<Symbol>,
}

pub fn compose_language(
    name: &str,
    catalog: Arc<ActionCatalog>,
    slices: Vec<Slice>,
    endemics: Vec<EndemicSlice>,
    role_order: &[&str],
    start: &str,
) -> Result<LanguageSpec, LangError> {
    let spec = LanguageSpec::assemble(name, catalog, slices, endemics, role_order, start)?;
    let report = validate_signatures(&spec);
    if !report.is_ok() {
        return Err(LangError::Invalid(report));
    }
    Ok(spec)
}

impl LanguageSpec {
    /// Composes without running the signature check. Structural problems
    /// (duplicate labels, unresolved actions) are still rejected.
    pub fn assemble(
        name: &str,
        catalog: Arc<ActionCatalog>,
        mut slices: Vec<Slice>,
        endemics: Vec<EndemicSlice>,
        role_order: &[&str],
        start: &str,
    ) -> Result<LanguageSpec, LangError> {
        if slices.is_empty() {
            return Err(LangError::EmptyLanguage);
        }
        if role_order.first() != Some(&"syntax") {
            return Err(LangError::BadRoleOrder(role_order.iter().map(|s| s.to_string()).collect()));
        }
        slices.sort_by(|a, b| a.name.cmp(&b.name));
        for w in slices.windows(2) {
            if w[0].name == w[1].name {
                return Err(LangError::DuplicateSlice(w[0].name.clone()));
            }
        }

        let mut report = ValidationReport::default();
        let mut productions: Vec<Production> = Vec::new();
        let mut seen_modules = BTreeSet::new();
        for slice in &slices {
            if !seen_modules.insert(slice.syntax.name.clone()) {
                continue;
            }
            for p in &slice.syntax.productions {
                if let Some(label) = &p.label {
                    if productions.iter().any(|q| q.module == p.module && q.label.as_ref() == Some(label)) {
                        report.push(
                            FindingKind::DuplicateLabel,
                            format!("{}::{}", p.module, label),
                            "label defined twice in one module",
                        );
                    }
                }
                if let Some(q) = productions.iter().find(|q| q.same_syntax(p) && q.label != p.label) {
                    report.push(
                        FindingKind::DuplicateLabel,
                        format!("{}::{}", p.module, p.display_label()),
                        format!("same production as {}::{}", q.module, q.display_label()),
                    );
                }
                productions.push(p.clone());
            }
        }

        let mut spec = LanguageSpec {
            name: name.to_string(),
            catalog,
            slices,
            endemics,
            role_order: role_order.iter().map(|s| s.to_string()).collect(),
            start: start.to_string(),
            productions,
            bindings: BTreeMap::new(),
        };
        spec.rebind(&mut report);
        spec.check_endemics()?;
        if !report.is_ok() {
            return Err(LangError::Invalid(report));
        }
        if !spec.productions.iter().any(|p| p.head == spec.start) {
            return Err(LangError::UnknownStart(spec.start.clone()));
        }
        Ok(spec)
    }

    fn check_endemics(&self) -> Result<(), LangError> {
        let mut ids = BTreeSet::new();
        for e in &self.endemics {
            if !ids.insert(e.binding_id.as_str()) {
                return Err(LangError::Endemic(format!("binding id {} declared twice", e.binding_id)));
            }
            if self.catalog.get_factory(&e.state_factory).is_none() {
                return Err(LangError::Endemic(format!("no state factory {}", e.state_factory)));
            }
            for (op, r) in &e.exported_ops {
                if self.catalog.get_op(r).is_none() {
                    return Err(LangError::Endemic(format!("{}.{op} refers to unknown op {r}", e.binding_id)));
                }
            }
        }
        Ok(())
    }

    /// Recomputes the (role, production) -> action table from the slices.
    fn rebind(&mut self, report: &mut ValidationReport) {
        let mut bindings = BTreeMap::new();
        for slice in &self.slices {
            for (role, entries) in &slice.bindings {
                if !self.role_order.contains(role) {
                    report.push(
                        FindingKind::UnknownAction,
                        format!("slice {}", slice.name),
                        format!("role {role} is not in the role order"),
                    );
                    continue;
                }
                for (label, key) in entries {
                    let Some(pid) = self.find(&slice.syntax.name, label) else {
                        report.push(
                            FindingKind::UnknownAction,
                            format!("slice {}", slice.name),
                            format!("no production labelled {label} in {}", slice.syntax.name),
                        );
                        continue;
                    };
                    if !self.catalog.resolves(key) {
                        report.push(
                            FindingKind::UnknownAction,
                            format!("slice {}", slice.name),
                            format!("action {key} is not in the catalog"),
                        );
                        continue;
                    }
                    match bindings.get(&(role.clone(), pid)) {
                        Some(existing) if existing != key => report.push(
                            FindingKind::DuplicateLabel,
                            format!("{}::{label} role {role}", slice.syntax.name),
                            format!("bound to both {existing} and {key}"),
                        ),
                        _ => {
                            bindings.insert((role.clone(), pid), key.clone());
                        }
                    }
                }
            }
        }
        self.bindings = bindings;
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn production(&self, id: ProdId) -> &Production {
        &self.productions[id.0]
    }

    pub fn find(&self, module: &str, label: &str) -> Option<ProdId> {
        self.productions
            .iter()
            .position(|p| p.module == module && p.label.as_deref() == Some(label))
            .map(ProdId)
    }

    pub fn binding(&self, role: &str, prod: ProdId) -> Option<&ActionKey> {
        self.bindings.get(&(role.to_string(), prod))
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&str, ProdId, &ActionKey)> {
        self.bindings.iter().map(|((r, p), k)| (r.as_str(), *p, k))
    }

    pub fn role_index(&self, role: &str) -> Option<usize> {
        self.role_order.iter().position(|r| r == role)
    }

    pub fn slice(&self, name: &str) -> Option<&Slice> {
        self.slices.iter().find(|s| s.name == name)
    }

    pub fn endemic(&self, binding_id: &str) -> Option<&EndemicSlice> {
        self.endemics.iter().find(|e| e.binding_id == binding_id)
    }

    pub fn production_info(&self, id: ProdId) -> ProductionInfo {
        let p = self.production(id);
        ProductionInfo { id, module: p.module.clone(), label: p.label.clone(), head: p.head.clone(), body: p.body.clone() }
    }

    /// Grammar as a set of `(head, body)` pairs plus bindings as
    /// `(role, module, label, action)`; equal for specs that differ only in
    /// slice order.
    pub fn fingerprint(&self) -> (BTreeSet<String>, BTreeSet<String>) {
        let grammar = self.productions.iter().map(|p| p.to_string()).collect();
        let bindings = self
            .bindings
            .iter()
            .map(|((role, pid), key)| {
                let p = self.production(*pid);
                format!("{role} {}::{} -> {key}", p.module, p.display_label())
            })
            .collect();
        (grammar, bindings)
    }

    /// One production per line: `module :: label : Head <- syms [prec n, left]`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for p in &self.productions {
            out.push_str(&p.to_string());
            out.push('\n');
        }
        out
    }
}

pub fn lookup_production(spec: &LanguageSpec, module: &str, label: &str) -> Option<ProductionInfo> {
    spec.find(module, label).map(|id| spec.production_info(id))
}

/// True when `prod` has an action in some role at or before `role_idx` that
/// provides `attr`.
fn provided_by(spec: &LanguageSpec, prod: ProdId, attr: &str, role_idx: usize) -> bool {
    spec.role_order[..=role_idx].iter().any(|r| {
        spec.binding(r, prod)
            .and_then(|k| spec.catalog.get(k))
            .is_some_and(|a| a.provides.contains(attr))
    })
}

/// Checks every bound action's `requires` against what child productions
/// provide in the same or an earlier role. Every alternative of a required
/// child nonterminal must provide the attribute.
pub fn validate_signatures(spec: &LanguageSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    for ((role, pid), key) in &spec.bindings {
        let Some(action) = spec.catalog.get(key) else {
            report.push(FindingKind::UnknownAction, key.to_string(), "not in catalog");
            continue;
        };
        let role_idx = spec.role_index(role).unwrap_or(0);
        let prod = spec.production(*pid);
        for (child, attr) in &action.requires {
            let location = format!("{}::{} role {role} child {child}", prod.module, prod.display_label());
            match prod.body.get(*child) {
                None => report.push(FindingKind::MissingAttribute, location, format!("{key} reads {attr} from a missing child")),
                Some(Symbol::Literal(_)) | Some(Symbol::Token(TokenClass::Str | TokenClass::Id)) => {
                    if attr != "lexeme" {
                        report.push(FindingKind::MissingAttribute, location, format!("token child has no {attr}"));
                    }
                }
                Some(Symbol::Token(TokenClass::Num)) => {
                    if attr != "lexeme" && attr != "val" {
                        report.push(FindingKind::MissingAttribute, location, format!("token child has no {attr}"));
                    }
                }
                Some(Symbol::Nonterminal(nt)) => {
                    for (qi, q) in spec.productions.iter().enumerate() {
                        if &q.head == nt && !provided_by(spec, ProdId(qi), attr, role_idx) {
                            report.push(
                                FindingKind::MissingAttribute,
                                location.clone(),
                                format!(
                                    "{key} requires {attr} but {}::{} does not provide it by role {role}",
                                    q.module,
                                    q.display_label()
                                ),
                            );
                        }
                    }
                }
            }
        }
    }
    report
}

/// `replace(L, k, c_k^new)`: swaps one slice for another with identical
/// syntax. Production ids are preserved so existing parse trees stay valid.
/// Roles the new slice does not bind keep the old slice's bindings.
pub fn replace_component(spec: &LanguageSpec, old_name: &str, new_slice: Slice) -> Result<LanguageSpec, LangError> {
    let old_idx = spec
        .slices
        .iter()
        .position(|s| s.name == old_name)
        .ok_or_else(|| LangError::UnknownSlice(old_name.to_string()))?;
    let old = &spec.slices[old_idx];
    let mismatch = |message: String| LangError::SyntaxMismatch {
        old: old.name.clone(),
        new: new_slice.name.clone(),
        message,
    };
    if new_slice.name != old.name && spec.slices.iter().any(|s| s.name == new_slice.name) {
        return Err(LangError::DuplicateSlice(new_slice.name.clone()));
    }

    // Pair every old production with a structurally equal new one.
    let old_prods = &old.syntax.productions;
    let new_prods = &new_slice.syntax.productions;
    if old_prods.len() != new_prods.len() {
        return Err(mismatch(format!("{} productions vs {}", old_prods.len(), new_prods.len())));
    }
    let mut used = vec![false; new_prods.len()];
    let mut pairing = Vec::with_capacity(old_prods.len());
    for p in old_prods {
        let j = (0..new_prods.len())
            .find(|&j| !used[j] && new_prods[j].same_syntax(p))
            .ok_or_else(|| mismatch(format!("no counterpart for {p}")))?;
        used[j] = true;
        pairing.push(j);
    }
    let shared = spec
        .slices
        .iter()
        .enumerate()
        .any(|(i, s)| i != old_idx && s.syntax.name == old.syntax.name);
    if shared && new_slice.syntax.name != old.syntax.name {
        return Err(mismatch(format!("module {} is shared with other slices", old.syntax.name)));
    }

    let label_map: HashMap<String, String> = old_prods
        .iter()
        .zip(&pairing)
        .filter_map(|(p, &j)| Some((p.label.clone()?, new_prods[j].label.clone()?)))
        .collect();
    let mut merged = new_slice.clone();
    for (role, entries) in &old.bindings {
        if !merged.bindings.contains_key(role) {
            let carried = entries
                .iter()
                .filter_map(|(label, key)| Some((label_map.get(label)?.clone(), key.clone())))
                .collect();
            merged.bindings.insert(role.clone(), carried);
        }
    }

    let mut next = spec.clone();
    for (p, &j) in old_prods.iter().zip(&pairing) {
        let pid = spec
            .productions
            .iter()
            .position(|q| q.module == p.module && q.label == p.label && q.same_syntax(p))
            .expect("slice productions are part of the grammar");
        let mut replacement = new_prods[j].clone();
        replacement.precedence = spec.productions[pid].precedence;
        replacement.assoc = spec.productions[pid].assoc;
        next.productions[pid] = replacement;
    }
    next.slices[old_idx] = merged;
    let mut report = ValidationReport::default();
    next.rebind(&mut report);

    // Replacement actions must provide at least what they replace.
    for ((role, pid), old_key) in &spec.bindings {
        let Some(old_action) = spec.catalog.get(old_key) else { continue };
        let prod = spec.production(*pid);
        match next.bindings.get(&(role.clone(), *pid)) {
            Some(new_key) if new_key == old_key => {}
            Some(new_key) => {
                let new_provides = next.catalog.get(new_key).map(|a| &a.provides);
                if !new_provides.is_some_and(|np| np.is_superset(&old_action.provides)) {
                    report.push(
                        FindingKind::SignatureMismatch,
                        format!("{}::{} role {role}", prod.module, prod.display_label()),
                        format!("{new_key} provides less than {old_key}"),
                    );
                }
            }
            None if !old_action.provides.is_empty() => report.push(
                FindingKind::SignatureMismatch,
                format!("{}::{} role {role}", prod.module, prod.display_label()),
                format!("binding of {old_key} dropped"),
            ),
            None => {}
        }
    }
    report.errors.extend(validate_signatures(&next).errors);
    if !report.is_ok() {
        return Err(LangError::Invalid(report));
    }
    Ok(next)
}

/// A composed spec together with the build-time registry of slices that
/// may be swapped in by canonical name.
#[derive(Debug, Clone)]
pub struct Language {
    pub spec: LanguageSpec,
    pub registry: BTreeMap<String, Slice>,
}

impl Language {
    /// The registry always contains the spec's own slices.
    pub fn new(spec: LanguageSpec, extra: impl IntoIterator<Item = Slice>) -> Self {
        let mut registry: BTreeMap<String, Slice> = spec.slices.iter().map(|s| (s.name.clone(), s.clone())).collect();
        for s in extra {
            registry.insert(s.name.clone(), s);
        }
        Language { spec, registry }
    }
}
