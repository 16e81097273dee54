//! Tree patterns used to pick the hooks an agent is placed at.
//!
//! A pattern is one atom, or two atoms joined by `<` (parent/child) or `<<`
//! (ancestor/descendant), optionally followed by `| id` to keep only the
//! nodes bound to `id`. Atoms may carry attribute constraints, written either
//! `id[attr == c, ...]` or `id[+<attr == c, ...>+]`. Constraints never affect
//! which nodes match; they are checked when the hook fires.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{LanguageSpec, ProdId};
use crate::parser::{NodeId, Tree};
use crate::value::{format_number, Value};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum BindingTarget {
    WholeProduction { module: String, label: String },
    /// Position 0 is the head, `i > 0` the i-th nonterminal of the body.
    NonterminalPosition { module: String, label: String, position: usize },
    Action { module: String, label: String, role: String },
    Slice { name: String },
    Endemic { name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub id: String,
    pub target: BindingTarget,
}

impl Binding {
    pub fn new(id: &str, target: BindingTarget) -> Self {
        Binding { id: id.to_string(), target }
    }

    pub fn production(id: &str, module: &str, label: &str) -> Self {
        Self::new(id, BindingTarget::WholeProduction { module: module.into(), label: label.into() })
    }

    pub fn nonterminal(id: &str, module: &str, label: &str, position: usize) -> Self {
        Self::new(id, BindingTarget::NonterminalPosition { module: module.into(), label: label.into(), position })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl RelOp {
    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::Eq => "==",
            RelOp::Ne => "!=",
            RelOp::Lt => "<",
            RelOp::Le => "<=",
            RelOp::Gt => ">",
            RelOp::Ge => ">=",
        }
    }

    fn ordering(self) -> bool {
        matches!(self, RelOp::Lt | RelOp::Le | RelOp::Gt | RelOp::Ge)
    }

    /// Applies the operator. Mismatched types are unequal and unordered.
    pub fn apply(self, lhs: &Value, rhs: &Value) -> bool {
        match self {
            RelOp::Eq => lhs == rhs,
            RelOp::Ne => lhs != rhs,
            _ => match (lhs, rhs) {
                (Value::Number(a), Value::Number(b)) => match self {
                    RelOp::Lt => a < b,
                    RelOp::Le => a <= b,
                    RelOp::Gt => a > b,
                    RelOp::Ge => a >= b,
                    _ => unreachable!(),
                },
                _ => false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicConstraint {
    pub atom: String,
    pub attr: String,
    pub op: RelOp,
    pub constant: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Atom(String),
    ParentChild(String, String),
    AncestorDescendant(String, String),
}

impl Shape {
    pub fn atoms(&self) -> Vec<&str> {
        match self {
            Shape::Atom(a) => vec![a],
            Shape::ParentChild(a, b) | Shape::AncestorDescendant(a, b) => vec![a, b],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreePattern {
    pub shape: Shape,
    pub constraints: Vec<DynamicConstraint>,
    pub filter: Option<String>,
    /// Targets of the atoms used in the shape.
    pub targets: BTreeMap<String, BindingTarget>,
}

impl fmt::Display for TreePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let atom = |f: &mut fmt::Formatter<'_>, id: &str| -> fmt::Result {
            f.write_str(id)?;
            let conds: Vec<String> = self
                .constraints
                .iter()
                .filter(|c| c.atom == id)
                .map(|c| format!("{} {} {}", c.attr, c.op.symbol(), render_constant(&c.constant)))
                .collect();
            if !conds.is_empty() {
                write!(f, "[{}]", conds.join(", "))?;
            }
            Ok(())
        };
        match &self.shape {
            Shape::Atom(a) => atom(f, a)?,
            Shape::ParentChild(a, b) => {
                atom(f, a)?;
                f.write_str(" < ")?;
                atom(f, b)?;
            }
            Shape::AncestorDescendant(a, b) => {
                atom(f, a)?;
                f.write_str(" << ")?;
                atom(f, b)?;
            }
        }
        if let Some(filter) = &self.filter {
            write!(f, " | {filter}")?;
        }
        Ok(())
    }
}

pub fn render_constant(v: &Value) -> String {
    match v {
        Value::Str(s) => serde_json::to_string(s).unwrap_or_default(),
        Value::Number(n) => format_number(*n),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PatternError {
    #[error("unbound identifier {0}")]
    Unbound(String),
    #[error("{0} is not bound to a production or nonterminal")]
    NotMatchable(String),
    #[error("malformed pattern at offset {offset}: {message}")]
    Malformed { offset: usize, message: String },
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn peek(&mut self, s: &str) -> bool {
        self.skip_ws();
        self.src[self.pos..].starts_with(s)
    }

    fn err(&self, message: impl Into<String>) -> PatternError {
        PatternError::Malformed { offset: self.pos, message: message.into() }
    }

    fn ident(&mut self) -> Result<String, PatternError> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let n = rest
            .char_indices()
            .take_while(|(i, c)| c.is_ascii_alphanumeric() || *c == '_' || (*i > 0 && *c == '.'))
            .count();
        if n == 0 || rest.starts_with(|c: char| c.is_ascii_digit()) {
            return Err(self.err("expected identifier"));
        }
        self.pos += n;
        Ok(rest[..n].to_string())
    }

    fn relop(&mut self) -> Result<RelOp, PatternError> {
        for (s, op) in [("==", RelOp::Eq), ("!=", RelOp::Ne), ("<=", RelOp::Le), (">=", RelOp::Ge), ("<", RelOp::Lt), (">", RelOp::Gt)] {
            // `>+]` closes the bracket form, not a comparison.
            if s == ">" && self.peek(">+]") {
                continue;
            }
            if self.eat(s) {
                return Ok(op);
            }
        }
        Err(self.err("expected relational operator"))
    }

    fn constant(&mut self) -> Result<Value, PatternError> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        if rest.starts_with('"') {
            let mut de = serde_json::Deserializer::from_str(rest).into_iter::<String>();
            let s = de.next().and_then(Result::ok).ok_or_else(|| self.err("bad string constant"))?;
            self.pos += de.byte_offset();
            return Ok(Value::Str(s));
        }
        for (word, v) in [("true", Value::Bool(true)), ("false", Value::Bool(false))] {
            if rest.starts_with(word) {
                self.pos += word.len();
                return Ok(v);
            }
        }
        let n = rest
            .char_indices()
            .take_while(|(i, c)| c.is_ascii_digit() || *c == '.' || (*i == 0 && *c == '-'))
            .count();
        let num: f64 = rest[..n].parse().map_err(|_| self.err("expected number or string constant"))?;
        self.pos += n;
        Ok(Value::Number(num))
    }
}

/// Parses `expr` against the given bindings.
pub fn compile_pattern(bindings: &[Binding], expr: &str) -> Result<TreePattern, PatternError> {
    let lookup = |id: &str| -> Result<BindingTarget, PatternError> {
        let b = bindings.iter().find(|b| b.id == id).ok_or_else(|| PatternError::Unbound(id.to_string()))?;
        match &b.target {
            t @ (BindingTarget::WholeProduction { .. } | BindingTarget::NonterminalPosition { .. }) => Ok(t.clone()),
            _ => Err(PatternError::NotMatchable(id.to_string())),
        }
    };

    let mut cur = Cursor { src: expr, pos: 0 };
    let mut constraints = Vec::new();
    let mut atom = |cur: &mut Cursor<'_>| -> Result<String, PatternError> {
        let id = cur.ident()?;
        let close = if cur.eat("[+<") {
            Some(">+]")
        } else if cur.eat("[") {
            Some("]")
        } else {
            None
        };
        if let Some(close) = close {
            loop {
                let attr = cur.ident()?;
                let op = cur.relop()?;
                let constant = cur.constant()?;
                if op.ordering() && !matches!(constant, Value::Number(_)) {
                    return Err(cur.err(format!("{} needs a numeric constant", op.symbol())));
                }
                constraints.push(DynamicConstraint { atom: id.clone(), attr, op, constant });
                if cur.eat(",") {
                    continue;
                }
                if cur.eat(close) {
                    break;
                }
                return Err(cur.err(format!("expected ',' or '{close}'")));
            }
        }
        Ok(id)
    };

    let first = atom(&mut cur)?;
    let shape = if cur.eat("<<") {
        Shape::AncestorDescendant(first, atom(&mut cur)?)
    } else if cur.eat("<") {
        Shape::ParentChild(first, atom(&mut cur)?)
    } else {
        Shape::Atom(first)
    };
    let filter = if cur.eat("|") { Some(cur.ident()?) } else { None };
    cur.skip_ws();
    if cur.pos != expr.len() {
        return Err(cur.err("trailing input"));
    }

    let atoms = shape.atoms();
    if atoms.len() == 2 && atoms[0] == atoms[1] {
        return Err(PatternError::Malformed { offset: 0, message: "both sides name the same atom".into() });
    }
    let mut targets = BTreeMap::new();
    for a in &atoms {
        targets.insert(a.to_string(), lookup(a)?);
    }
    if let Some(f) = &filter {
        if !atoms.contains(&f.as_str()) {
            lookup(f)?;
            return Err(PatternError::Malformed { offset: 0, message: format!("filter {f} does not occur in the pattern") });
        }
    }
    Ok(TreePattern { shape, constraints, filter, targets })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub anchor: NodeId,
    pub env: BTreeMap<String, NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSet {
    pub entries: Vec<MatchEntry>,
}

impl MatchSet {
    pub fn anchors(&self) -> BTreeSet<NodeId> {
        self.entries.iter().map(|e| e.anchor).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Resolved form of a matchable target.
#[derive(Debug, Clone, Copy)]
enum Resolved {
    Head(ProdId),
    Child(ProdId, usize),
    Nothing,
}

fn resolve(spec: &LanguageSpec, target: &BindingTarget) -> Resolved {
    match target {
        BindingTarget::WholeProduction { module, label } => spec.find(module, label).map_or(Resolved::Nothing, Resolved::Head),
        BindingTarget::NonterminalPosition { module, label, position } => {
            let Some(pid) = spec.find(module, label) else { return Resolved::Nothing };
            if *position == 0 {
                return Resolved::Head(pid);
            }
            match spec.production(pid).nonterminal_positions().get(position - 1) {
                Some(&body_idx) => Resolved::Child(pid, body_idx),
                None => Resolved::Nothing,
            }
        }
        _ => Resolved::Nothing,
    }
}

fn atom_matches(tree: &Tree, r: Resolved, node: NodeId) -> bool {
    match r {
        Resolved::Head(pid) => tree.node(node).production() == Some(pid),
        Resolved::Child(pid, idx) => tree.node(node).parent.is_some_and(|p| {
            let parent = tree.node(p);
            parent.production() == Some(pid) && parent.children.get(idx) == Some(&node)
        }),
        Resolved::Nothing => false,
    }
}

/// Whether a single node satisfies an atom's target.
pub fn target_matches(tree: &Tree, spec: &LanguageSpec, target: &BindingTarget, node: NodeId) -> bool {
    atom_matches(tree, resolve(spec, target), node)
}

/// Builds the match set from `(left, right)` node pairs (or single nodes for
/// atoms). Pairs are visited in ascending order; the first match seen for an
/// anchor supplies its environment.
pub fn collect_entries(pattern: &TreePattern, mut matches: Vec<Vec<NodeId>>) -> MatchSet {
    matches.sort();
    matches.dedup();
    let atoms = pattern.shape.atoms();
    let mut by_anchor: BTreeMap<NodeId, BTreeMap<String, NodeId>> = BTreeMap::new();
    for m in matches {
        let env: BTreeMap<String, NodeId> = atoms.iter().map(|a| a.to_string()).zip(m.iter().copied()).collect();
        let anchors: Vec<NodeId> = match &pattern.filter {
            Some(f) => vec![env[f]],
            None => m.clone(),
        };
        for a in anchors {
            by_anchor.entry(a).or_insert_with(|| env.clone());
        }
    }
    MatchSet { entries: by_anchor.into_iter().map(|(anchor, env)| MatchEntry { anchor, env }).collect() }
}

/// Static matching: constraints are ignored here.
pub fn match_nodes(tree: &Tree, spec: &LanguageSpec, pattern: &TreePattern) -> MatchSet {
    let r = |id: &str| resolve(spec, &pattern.targets[id]);
    let mut matches = Vec::new();
    match &pattern.shape {
        Shape::Atom(a) => {
            let ra = r(a);
            matches.extend(tree.preorder().filter(|n| atom_matches(tree, ra, *n)).map(|n| vec![n]));
        }
        Shape::ParentChild(a, b) => {
            let (ra, rb) = (r(a), r(b));
            for child in tree.preorder().filter(|n| atom_matches(tree, rb, *n)) {
                if let Some(parent) = tree.node(child).parent {
                    if atom_matches(tree, ra, parent) {
                        matches.push(vec![parent, child]);
                    }
                }
            }
        }
        Shape::AncestorDescendant(a, b) => {
            let (ra, rb) = (r(a), r(b));
            for desc in tree.preorder().filter(|n| atom_matches(tree, rb, *n)) {
                let mut up = tree.node(desc).parent;
                while let Some(anc) = up {
                    if atom_matches(tree, ra, anc) {
                        matches.push(vec![anc, desc]);
                    }
                    up = tree.node(anc).parent;
                }
            }
        }
    }
    collect_entries(pattern, matches)
}

/// Read access to node attributes for constraint checks.
pub trait AttrSource {
    fn attr(&self, node: NodeId, role: &str, name: &str) -> Option<Value>;
}

/// True iff every constraint holds on the current attribute values. A
/// missing attribute fails its constraint.
pub fn eval_constraints(pattern: &TreePattern, env: &BTreeMap<String, NodeId>, attrs: &dyn AttrSource, role: &str) -> bool {
    pattern.constraints.iter().all(|c| {
        env.get(&c.atom)
            .and_then(|n| attrs.attr(*n, role, &c.attr))
            .is_some_and(|v| c.op.apply(&v, &c.constant))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn add_bindings() -> Vec<Binding> {
        vec![
            Binding::production("addition", "mylang.AddSyntax", "Add"),
            Binding::nonterminal("head", "mylang.AddSyntax", "Add", 0),
            Binding::nonterminal("left", "mylang.AddSyntax", "Add", 1),
            Binding::new("sym", BindingTarget::Endemic { name: "SymbolTable".into() }),
        ]
    }

    #[test]
    fn atom_pattern() {
        let p = compile_pattern(&add_bindings(), "addition").unwrap();
        assert_eq!(p.shape, Shape::Atom("addition".into()));
        assert!(p.constraints.is_empty());
        assert_eq!(p.filter, None);
    }

    #[test]
    fn parent_child_with_constraint_and_filter() {
        let p = compile_pattern(&add_bindings(), "head < left[val==4] | head").unwrap();
        assert_eq!(p.shape, Shape::ParentChild("head".into(), "left".into()));
        assert_eq!(
            p.constraints,
            vec![DynamicConstraint { atom: "left".into(), attr: "val".into(), op: RelOp::Eq, constant: Value::Number(4.0) }]
        );
        assert_eq!(p.filter.as_deref(), Some("head"));
    }

    #[test]
    fn bracket_spellings_are_equivalent() {
        let a = compile_pattern(&add_bindings(), "head < left[val==4, name != \"x\"] | head").unwrap();
        let b = compile_pattern(&add_bindings(), "head < left[+<val == 4, name != \"x\">+] | head").unwrap();
        assert_eq!(a, b);
        let c = compile_pattern(&add_bindings(), "head << left[+<val>=4>+]").unwrap();
        assert_eq!(c.constraints[0].op, RelOp::Ge);
    }

    #[test]
    fn unbound_identifier() {
        assert_eq!(compile_pattern(&add_bindings(), "head < nowhere"), Err(PatternError::Unbound("nowhere".into())));
    }

    #[test]
    fn malformed_conditions() {
        assert!(matches!(compile_pattern(&add_bindings(), "head[val 4]"), Err(PatternError::Malformed { .. })));
        assert!(matches!(compile_pattern(&add_bindings(), "head[val < \"a\"]"), Err(PatternError::Malformed { .. })));
        assert!(matches!(compile_pattern(&add_bindings(), "head < left | other"), Err(PatternError::Unbound(_))));
        assert!(matches!(compile_pattern(&add_bindings(), "sym"), Err(PatternError::NotMatchable(_))));
    }

    #[test]
    fn display_round_trips() {
        for src in ["addition", "head < left[val == 4] | head", "head << left[val >= 2, name == \"p\"]"] {
            let p = compile_pattern(&add_bindings(), src).unwrap();
            let again = compile_pattern(&add_bindings(), &p.to_string()).unwrap();
            assert_eq!(p, again);
        }
    }
}
