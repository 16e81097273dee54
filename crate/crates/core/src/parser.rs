//! Lexing and Earley parsing over a composed grammar.
//!
//! The Earley recognizer accepts any context-free grammar, so slices can be
//! composed in any order. The resulting forest is disambiguated with
//! production precedence and associativity; whatever ambiguity remains is
//! reported instead of being resolved silently.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{Assoc, LanguageSpec, ProdId, Symbol, TokenClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Byte range in the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Literal(String),
    Class(TokenClass),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    pub span: Span,
    pub line: usize,
    pub column: usize,
}

impl Token {
    /// Decoded payload: the numeric value for NUM, the unescaped text for
    /// STRING, the lexeme otherwise.
    pub fn text(&self) -> String {
        match self.kind {
            TokenKind::Class(TokenClass::Str) => unescape(&self.lexeme),
            _ => self.lexeme.clone(),
        }
    }

    pub fn number(&self) -> Option<f64> {
        match self.kind {
            TokenKind::Class(TokenClass::Num) => self.lexeme.parse().ok(),
            _ => None,
        }
    }

    fn matches(&self, sym: &Symbol) -> bool {
        match (sym, &self.kind) {
            (Symbol::Literal(t), TokenKind::Literal(l)) => t == l,
            (Symbol::Token(c), TokenKind::Class(k)) => c == k,
            _ => false,
        }
    }
}

fn unescape(lexeme: &str) -> String {
    let inner = &lexeme[1..lexeme.len() - 1];
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some(other) => out.push(other),
                None => {}
            }
        } else {
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{line}:{column}: unexpected input {snippet:?}")]
pub struct LexError {
    pub line: usize,
    pub column: usize,
    pub snippet: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("{line}:{column}: unexpected {found}, expected one of {expected:?}")]
    Unexpected { position: usize, line: usize, column: usize, found: String, expected: Vec<String> },
    #[error("ambiguous parse of {span}: candidates {candidates:?}")]
    Ambiguous { span: Span, candidates: Vec<String> },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SyntaxError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, column)
}

fn lex_number(s: &str) -> usize {
    let b = s.as_bytes();
    let mut i = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    if i > 0 && i + 1 < b.len() && b[i] == b'.' && b[i + 1].is_ascii_digit() {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
    }
    i
}

fn lex_string(s: &str) -> usize {
    let b = s.as_bytes();
    if b.first() != Some(&b'"') {
        return 0;
    }
    let mut i = 1;
    while i < b.len() {
        match b[i] {
            b'\\' => i += 2,
            b'"' => return i + 1,
            b'\n' => return 0,
            _ => i += 1,
        }
    }
    0
}

fn lex_ident(s: &str) -> usize {
    let b = s.as_bytes();
    if !b.first().is_some_and(|c| c.is_ascii_alphabetic() || *c == b'_') {
        return 0;
    }
    b.iter().take_while(|c| c.is_ascii_alphanumeric() || **c == b'_').count()
}

/// Maximal-munch tokenization. Literal terminals of the grammar win over
/// token classes of equal length; whitespace and `//` comments are skipped.
pub fn lex(source: &str, spec: &LanguageSpec) -> Result<Vec<Token>, LexError> {
    let mut literals = BTreeSet::new();
    let mut classes = HashSet::new();
    for p in spec.productions() {
        for s in &p.body {
            match s {
                Symbol::Literal(t) => {
                    literals.insert(t.as_str());
                }
                Symbol::Token(c) => {
                    classes.insert(*c);
                }
                Symbol::Nonterminal(_) => {}
            }
        }
    }

    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < source.len() {
        let rest = &source[pos..];
        let c = rest.chars().next().unwrap();
        if c.is_whitespace() {
            pos += c.len_utf8();
            continue;
        }
        if rest.starts_with("//") {
            pos += rest.find('\n').unwrap_or(rest.len());
            continue;
        }
        let lit = literals
            .iter()
            .filter(|l| rest.starts_with(**l))
            .map(|l| l.len())
            .max()
            .unwrap_or(0);
        let mut best: Option<(usize, TokenKind)> = None;
        for class in [TokenClass::Num, TokenClass::Str, TokenClass::Id] {
            if !classes.contains(&class) {
                continue;
            }
            let n = match class {
                TokenClass::Num => lex_number(rest),
                TokenClass::Str => lex_string(rest),
                TokenClass::Id => lex_ident(rest),
            };
            if n > best.as_ref().map_or(0, |b| b.0) {
                best = Some((n, TokenKind::Class(class)));
            }
        }
        let (len, kind) = match best {
            Some((n, kind)) if n > lit => (n, kind),
            _ if lit > 0 => (lit, TokenKind::Literal(rest[..lit].to_string())),
            _ => {
                let (line, column) = line_col(source, pos);
                return Err(LexError { line, column, snippet: rest.chars().take(10).collect() });
            }
        };
        let (line, column) = line_col(source, pos);
        tokens.push(Token {
            kind,
            lexeme: rest[..len].to_string(),
            span: Span { start: pos, end: pos + len },
            line,
            column,
        });
        pos += len;
    }
    Ok(tokens)
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Production(ProdId),
    Token(Token),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub kind: NodeKind,
    pub children: Vec<NodeId>,
    pub span: Span,
}

impl Node {
    pub fn production(&self) -> Option<ProdId> {
        match self.kind {
            NodeKind::Production(p) => Some(p),
            NodeKind::Token(_) => None,
        }
    }

    pub fn token(&self) -> Option<&Token> {
        match &self.kind {
            NodeKind::Token(t) => Some(t),
            NodeKind::Production(_) => None,
        }
    }
}

/// A parse tree. Nodes (token leaves included) are numbered in pre-order and
/// the numbering never changes for the life of the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Pre-order iterator over node ids.
    pub fn preorder(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    /// Indented `label(span): childLabels...` listing.
    pub fn render(&self, spec: &LanguageSpec) -> String {
        let mut out = String::new();
        self.render_into(spec, self.root(), 0, &mut out);
        out
    }

    fn label_of(&self, spec: &LanguageSpec, id: NodeId) -> String {
        match &self.node(id).kind {
            NodeKind::Production(p) => spec.production(*p).display_label().to_string(),
            NodeKind::Token(t) => format!("{:?}", t.lexeme),
        }
    }

    fn render_into(&self, spec: &LanguageSpec, id: NodeId, depth: usize, out: &mut String) {
        let node = self.node(id);
        if node.token().is_some() {
            return;
        }
        let children: Vec<String> = node.children.iter().map(|c| self.label_of(spec, *c)).collect();
        out.push_str(&format!(
            "{}{}({}): {}\n",
            "  ".repeat(depth),
            self.label_of(spec, id),
            node.span,
            children.join(" ")
        ));
        for c in &node.children {
            self.render_into(spec, *c, depth + 1, out);
        }
    }
}

pub fn node_by_id(tree: &Tree, id: usize) -> Option<&Node> {
    tree.get(NodeId(id))
}

pub fn parse_source(source: &str, spec: &LanguageSpec) -> Result<Tree, SyntaxError> {
    let tokens = lex(source, spec)?;
    Ok(parse(&tokens, spec, source.len())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Item {
    prod: usize,
    dot: usize,
    origin: usize,
}

struct Grammar<'a> {
    spec: &'a LanguageSpec,
    by_head: HashMap<&'a str, Vec<usize>>,
    nullable: HashSet<&'a str>,
}

impl<'a> Grammar<'a> {
    fn new(spec: &'a LanguageSpec) -> Self {
        let mut by_head: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, p) in spec.productions().iter().enumerate() {
            by_head.entry(p.head.as_str()).or_default().push(i);
        }
        let mut nullable = HashSet::new();
        loop {
            let before = nullable.len();
            for p in spec.productions() {
                if p.body.iter().all(|s| matches!(s, Symbol::Nonterminal(n) if nullable.contains(n.as_str()))) {
                    nullable.insert(p.head.as_str());
                }
            }
            if nullable.len() == before {
                break;
            }
        }
        Grammar { spec, by_head, nullable }
    }

    fn body(&self, prod: usize) -> &'a [Symbol] {
        &self.spec.productions()[prod].body
    }
}

/// Where a child sits in its parent's body, for precedence filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    Left,
    Right,
    Inner,
}

/// Constraint a parent production puts on a child derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Ctx {
    prec: u32,
    assoc: Assoc,
    edge: Edge,
}

fn ctx_for(spec: &LanguageSpec, prod: usize, index: usize) -> Option<Ctx> {
    let p = &spec.productions()[prod];
    if p.precedence == 0 || p.body.len() < 2 {
        return None;
    }
    let edge = if index == 0 {
        Edge::Left
    } else if index == p.body.len() - 1 {
        Edge::Right
    } else {
        Edge::Inner
    };
    (edge != Edge::Inner).then_some(Ctx { prec: p.precedence, assoc: p.assoc, edge })
}

fn allowed(spec: &LanguageSpec, ctx: Option<Ctx>, child: usize) -> bool {
    let Some(ctx) = ctx else { return true };
    let q = &spec.productions()[child];
    if q.precedence == 0 {
        return true;
    }
    if q.precedence != ctx.prec {
        return q.precedence > ctx.prec;
    }
    matches!((ctx.assoc, ctx.edge), (Assoc::Left, Edge::Left) | (Assoc::Right, Edge::Right))
}

struct Forest<'a> {
    g: Grammar<'a>,
    tokens: &'a [Token],
    /// (nonterminal, start) -> [(end, production)]
    spans: HashMap<(&'a str, usize), Vec<(usize, usize)>>,
    count_memo: HashMap<(&'a str, usize, usize, Option<Ctx>), u8>,
    body_memo: HashMap<(usize, usize, usize, usize), u8>,
}

fn cap(n: u32) -> u8 {
    n.min(2) as u8
}

impl<'a> Forest<'a> {
    fn candidates(&self, nt: &'a str, i: usize, j: usize, ctx: Option<Ctx>) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .spans
            .get(&(nt, i))
            .map(|v| v.iter().filter(|(e, p)| *e == j && allowed(self.g.spec, ctx, *p)).map(|(_, p)| *p).collect())
            .unwrap_or_default();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Number of derivations of `nt` over tokens `i..j`, capped at 2.
    fn count(&mut self, nt: &'a str, i: usize, j: usize, ctx: Option<Ctx>) -> u8 {
        let key = (nt, i, j, ctx);
        if let Some(&c) = self.count_memo.get(&key) {
            return c;
        }
        // Cycle guard: a derivation that loops back to itself contributes 0.
        self.count_memo.insert(key, 0);
        let mut total = 0u32;
        for p in self.candidates(nt, i, j, ctx) {
            total += self.count_body(p, 0, i, j) as u32;
            if total >= 2 {
                break;
            }
        }
        let c = cap(total);
        self.count_memo.insert(key, c);
        c
    }

    fn ends_from(&self, nt: &'a str, pos: usize, limit: usize) -> Vec<usize> {
        let mut ends: Vec<usize> = self
            .spans
            .get(&(nt, pos))
            .map(|v| v.iter().map(|(e, _)| *e).filter(|e| *e <= limit).collect())
            .unwrap_or_default();
        ends.sort_unstable();
        ends.dedup();
        ends
    }

    fn count_body(&mut self, prod: usize, k: usize, pos: usize, j: usize) -> u8 {
        let body = self.g.body(prod);
        if k == body.len() {
            return u8::from(pos == j);
        }
        let key = (prod, k, pos, j);
        if let Some(&c) = self.body_memo.get(&key) {
            return c;
        }
        let c = match &body[k] {
            Symbol::Nonterminal(nt) => {
                let mut total = 0u32;
                let ctx = ctx_for(self.g.spec, prod, k);
                for m in self.ends_from(nt, pos, j) {
                    let here = self.count(nt, pos, m, ctx) as u32;
                    if here == 0 {
                        continue;
                    }
                    total += here * self.count_body(prod, k + 1, m, j) as u32;
                    if total >= 2 {
                        break;
                    }
                }
                cap(total)
            }
            sym => {
                if pos < j && self.tokens[pos].matches(sym) {
                    self.count_body(prod, k + 1, pos + 1, j)
                } else {
                    0
                }
            }
        };
        self.body_memo.insert(key, c);
        c
    }

    /// All ways (up to 2) to split `body[k..]` over `pos..j`; each split is
    /// the list of end positions of the remaining symbols.
    fn splits(&mut self, prod: usize, k: usize, pos: usize, j: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if out.len() >= 2 {
            return;
        }
        let body = self.g.body(prod);
        if k == body.len() {
            if pos == j {
                out.push(acc.clone());
            }
            return;
        }
        match &body[k] {
            Symbol::Nonterminal(nt) => {
                let ctx = ctx_for(self.g.spec, prod, k);
                for m in self.ends_from(nt, pos, j) {
                    if self.count(nt, pos, m, ctx) == 0 || self.count_body(prod, k + 1, m, j) == 0 {
                        continue;
                    }
                    acc.push(m);
                    self.splits(prod, k + 1, m, j, acc, out);
                    acc.pop();
                }
            }
            sym => {
                if pos < j && self.tokens[pos].matches(sym) {
                    acc.push(pos + 1);
                    self.splits(prod, k + 1, pos + 1, j, acc, out);
                    acc.pop();
                }
            }
        }
    }

    fn span_of(&self, i: usize, j: usize, source_len: usize) -> Span {
        if i < j {
            Span { start: self.tokens[i].span.start, end: self.tokens[j - 1].span.end }
        } else {
            let at = self.tokens.get(i).map_or(source_len, |t| t.span.start);
            Span { start: at, end: at }
        }
    }

    fn label(&self, prod: usize) -> String {
        let p = &self.g.spec.productions()[prod];
        format!("{}::{}", p.module, p.display_label())
    }

    fn build(
        &mut self,
        nt: &'a str,
        i: usize,
        j: usize,
        ctx: Option<Ctx>,
        parent: Option<NodeId>,
        nodes: &mut Vec<Node>,
        source_len: usize,
    ) -> Result<NodeId, ParseError> {
        let mut options = Vec::new();
        for p in self.candidates(nt, i, j, ctx) {
            let mut found = Vec::new();
            self.splits(p, 0, i, j, &mut Vec::new(), &mut found);
            for s in found {
                options.push((p, s));
            }
        }
        if options.len() > 1 {
            let mut candidates: Vec<String> = options.iter().map(|(p, _)| self.label(*p)).collect();
            candidates.dedup();
            return Err(ParseError::Ambiguous { span: self.span_of(i, j, source_len), candidates });
        }
        let (prod, ends) = options.pop().expect("recognized span has a derivation");
        let id = NodeId(nodes.len());
        nodes.push(Node {
            id,
            parent,
            kind: NodeKind::Production(ProdId(prod)),
            children: Vec::new(),
            span: self.span_of(i, j, source_len),
        });
        let body = self.g.body(prod);
        let mut pos = i;
        let mut children = Vec::with_capacity(body.len());
        for (k, sym) in body.iter().enumerate() {
            let end = ends[k];
            let child = match sym {
                Symbol::Nonterminal(child_nt) => {
                    let ctx = ctx_for(self.g.spec, prod, k);
                    self.build(child_nt, pos, end, ctx, Some(id), nodes, source_len)?
                }
                _ => {
                    let tok = self.tokens[pos].clone();
                    let cid = NodeId(nodes.len());
                    nodes.push(Node { id: cid, parent: Some(id), span: tok.span, kind: NodeKind::Token(tok), children: Vec::new() });
                    cid
                }
            };
            children.push(child);
            pos = end;
        }
        nodes[id.0].children = children;
        Ok(id)
    }

    /// Walks down the unique-so-far path to the node where two derivations
    /// diverge, so the error names the offending span.
    fn locate_ambiguity(&mut self, nt: &'a str, i: usize, j: usize, ctx: Option<Ctx>, source_len: usize) -> ParseError {
        let mut options = Vec::new();
        for p in self.candidates(nt, i, j, ctx) {
            let mut found = Vec::new();
            self.splits(p, 0, i, j, &mut Vec::new(), &mut found);
            for s in found {
                options.push((p, s));
            }
        }
        if options.len() != 1 {
            let mut candidates: Vec<String> = options.iter().map(|(p, _)| self.label(*p)).collect();
            candidates.dedup();
            return ParseError::Ambiguous { span: self.span_of(i, j, source_len), candidates };
        }
        let (prod, ends) = options.pop().unwrap();
        let body = self.g.body(prod);
        let mut pos = i;
        for (k, sym) in body.iter().enumerate() {
            if let Symbol::Nonterminal(child) = sym {
                let ctx = ctx_for(self.g.spec, prod, k);
                if self.count(child, pos, ends[k], ctx) > 1 {
                    return self.locate_ambiguity(child, pos, ends[k], ctx, source_len);
                }
            }
            pos = ends[k];
        }
        ParseError::Ambiguous { span: self.span_of(i, j, source_len), candidates: vec![self.label(prod)] }
    }
}

/// Earley recognition from the start nonterminal followed by deterministic
/// tree extraction.
pub fn parse(tokens: &[Token], spec: &LanguageSpec, source_len: usize) -> Result<Tree, ParseError> {
    let g = Grammar::new(spec);
    let n = tokens.len();
    let mut sets: Vec<Vec<Item>> = vec![Vec::new(); n + 1];
    let mut seen: Vec<HashSet<Item>> = vec![HashSet::new(); n + 1];
    let start = spec.start.as_str();

    let add = |sets: &mut Vec<Vec<Item>>, seen: &mut Vec<HashSet<Item>>, i: usize, item: Item| {
        if seen[i].insert(item) {
            sets[i].push(item);
        }
    };
    for &p in g.by_head.get(start).into_iter().flatten() {
        add(&mut sets, &mut seen, 0, Item { prod: p, dot: 0, origin: 0 });
    }

    for i in 0..=n {
        let mut k = 0;
        while k < sets[i].len() {
            let item = sets[i][k];
            k += 1;
            let body = g.body(item.prod);
            match body.get(item.dot) {
                None => {
                    let head = spec.productions()[item.prod].head.as_str();
                    let waiting: Vec<Item> = sets[item.origin]
                        .iter()
                        .filter(|w| matches!(g.body(w.prod).get(w.dot), Some(Symbol::Nonterminal(b)) if b == head))
                        .copied()
                        .collect();
                    for w in waiting {
                        add(&mut sets, &mut seen, i, Item { dot: w.dot + 1, ..w });
                    }
                }
                Some(Symbol::Nonterminal(b)) => {
                    for &p in g.by_head.get(b.as_str()).into_iter().flatten() {
                        add(&mut sets, &mut seen, i, Item { prod: p, dot: 0, origin: i });
                    }
                    if g.nullable.contains(b.as_str()) {
                        add(&mut sets, &mut seen, i, Item { dot: item.dot + 1, ..item });
                    }
                }
                Some(sym) => {
                    if i < n && tokens[i].matches(sym) {
                        add(&mut sets, &mut seen, i + 1, Item { dot: item.dot + 1, ..item });
                    }
                }
            }
        }
        if i < n && sets[i + 1].is_empty() {
            return Err(unexpected(&g, &sets[i], tokens, i));
        }
    }

    let accepted = sets[n]
        .iter()
        .any(|it| it.origin == 0 && it.dot == g.body(it.prod).len() && spec.productions()[it.prod].head == start);
    if !accepted {
        return Err(unexpected(&g, &sets[n], tokens, n));
    }

    let mut spans: HashMap<(&str, usize), Vec<(usize, usize)>> = HashMap::new();
    for (j, set) in sets.iter().enumerate() {
        for it in set {
            if it.dot == g.body(it.prod).len() {
                let head = spec.productions()[it.prod].head.as_str();
                spans.entry((head, it.origin)).or_default().push((j, it.prod));
            }
        }
    }
    let mut forest = Forest { g, tokens, spans, count_memo: HashMap::new(), body_memo: HashMap::new() };
    match forest.count(start, 0, n, None) {
        0 => Err(unexpected(&forest.g, &sets[n], tokens, n)),
        1 => {
            let mut nodes = Vec::new();
            forest.build(start, 0, n, None, None, &mut nodes, source_len)?;
            Ok(Tree { nodes })
        }
        _ => Err(forest.locate_ambiguity(start, 0, n, None, source_len)),
    }
}

fn unexpected(g: &Grammar<'_>, set: &[Item], tokens: &[Token], position: usize) -> ParseError {
    let mut expected: Vec<String> = set
        .iter()
        .filter_map(|it| match g.body(it.prod).get(it.dot) {
            Some(Symbol::Nonterminal(_)) | None => None,
            Some(s) => Some(s.to_string()),
        })
        .collect();
    expected.sort();
    expected.dedup();
    let (found, line, column) = match tokens.get(position) {
        Some(t) => (format!("{:?}", t.lexeme), t.line, t.column),
        None => ("end of input".to_string(), tokens.last().map_or(1, |t| t.line), tokens.last().map_or(1, |t| t.column + t.lexeme.len())),
    };
    ParseError::Unexpected { position, line, column, found, expected }
}
