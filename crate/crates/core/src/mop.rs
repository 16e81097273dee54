//! Reflective API: serializable snapshots of the running interpreter and the
//! commands agents use to inspect and change it.
//!
//! Snapshots are deep copies; changing the interpreter afterwards never
//! affects a returned value.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{ActionKey, LangError, ProductionInfo};
use crate::nvm::{Interp, RegId};
use crate::parser::{NodeId, Span};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{code}: {message}")]
pub struct MopError {
    pub code: String,
    pub message: String,
    pub location: Option<String>,
}

impl MopError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        MopError { code: code.to_string(), message: message.into(), location: None }
    }

    pub fn at(mut self, node: NodeId) -> Self {
        self.location = Some(format!("node {node}"));
        self
    }
}

impl From<LangError> for MopError {
    fn from(e: LangError) -> Self {
        let code = match &e {
            LangError::SyntaxMismatch { .. } => "SyntaxMismatch",
            LangError::UnknownSlice(_) => "UnknownSlice",
            LangError::Invalid(r) if r.has(crate::lang::FindingKind::SignatureMismatch) => "SignatureMismatch",
            LangError::Invalid(_) => "InvalidLanguage",
            _ => "LanguageError",
        };
        MopError::new(code, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProdRef {
    pub module: String,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrEntry {
    pub role: String,
    pub name: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: NodeId,
    pub production: Option<ProdRef>,
    /// Set for token leaves.
    pub lexeme: Option<String>,
    pub children: Vec<NodeId>,
    pub span: Span,
    pub attrs: Vec<AttrEntry>,
    pub has_override: BTreeMap<String, bool>,
}

impl NodeInfo {
    pub fn attr(&self, role: &str, name: &str) -> Option<&Value> {
        self.attrs.iter().find(|a| a.role == role && a.name == name).map(|a| &a.value)
    }

    pub fn label(&self) -> &str {
        match &self.production {
            Some(p) => p.label.as_deref().unwrap_or("?"),
            None => self.lexeme.as_deref().unwrap_or("?"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticActionInfo {
    pub key: ActionKey,
    pub provides: BTreeSet<String>,
    pub requires: BTreeSet<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleInfo {
    pub name: String,
    pub index: usize,
}

/// Current phase; `role` is absent while idle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleState {
    pub role: Option<String>,
    pub index: Option<usize>,
    pub idle: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceInfo {
    pub name: String,
    pub syntax_module: String,
    pub bindings: BTreeMap<String, Vec<(String, ActionKey)>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndemicInfo {
    pub name: String,
    pub binding_id: String,
    pub ops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase")]
pub enum MopOp {
    GetTree,
    GetSubtree { node: NodeId },
    GetNode { node: NodeId },
    GetAction { node: NodeId, role: Option<String> },
    GetProduction { node: NodeId },
    GetRole,
    GetGrammarProductions,
    GetRoles,
    GetSlices,
    GetAvailableSlices,
    GetActions,
    GetEndemics,
    GetAttr { node: NodeId, name: String, role: Option<String> },
    SetAttr { node: NodeId, name: String, value: Value, role: Option<String> },
    SetSpecializedAction { node: NodeId, action: ActionKey, role: String },
    ResetNode { node: NodeId, role: String },
    ReplaceSlice { old: String, new: String },
    RedoRole { role: String },
    EndemicCall { endemic: String, operation: String, args: Vec<Value> },
}

impl MopOp {
    /// True for commands that change the interpreter.
    pub fn is_intercession(&self) -> bool {
        matches!(
            self,
            MopOp::SetAttr { .. }
                | MopOp::SetSpecializedAction { .. }
                | MopOp::ResetNode { .. }
                | MopOp::ReplaceSlice { .. }
                | MopOp::RedoRole { .. }
                | MopOp::EndemicCall { .. }
        )
    }

    pub fn name(&self) -> String {
        let v = serde_json::to_value(self).unwrap_or_default();
        v["op"].as_str().unwrap_or("unknown").to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "camelCase")]
pub enum MopResult {
    Unit,
    Nodes(Vec<NodeInfo>),
    Node(NodeInfo),
    Action(Option<SemanticActionInfo>),
    Production(Option<ProductionInfo>),
    Role(RoleState),
    Productions(Vec<ProductionInfo>),
    Roles(Vec<RoleInfo>),
    Slices(Vec<SliceInfo>),
    Actions(Vec<SemanticActionInfo>),
    Endemics(Vec<EndemicInfo>),
    Value(Option<Value>),
    Registered { registration: RegId, anchors: usize },
    Unregistered { remaining: usize },
}

pub fn node_info(interp: &Interp, node: NodeId) -> Result<NodeInfo, MopError> {
    let n = interp.tree().get(node).ok_or_else(|| MopError::new("UnknownNode", format!("no node {node}")).at(node))?;
    let spec = interp.spec();
    let production = n.production().map(|p| {
        let p = spec.production(p);
        ProdRef { module: p.module.clone(), label: p.label.clone() }
    });
    let mut attrs: Vec<AttrEntry> =
        interp.node_attrs(node).into_iter().map(|(role, name, value)| AttrEntry { role, name, value }).collect();
    attrs.sort_by(|a, b| {
        (spec.role_index(&a.role), &a.name).cmp(&(spec.role_index(&b.role), &b.name))
    });
    Ok(NodeInfo {
        id: node,
        production,
        lexeme: n.token().map(|t| t.text()),
        children: n.children.clone(),
        span: n.span,
        attrs,
        has_override: spec.role_order.iter().map(|r| (r.clone(), interp.has_override(node, r))).collect(),
    })
}

fn subtree(interp: &Interp, root: NodeId) -> Result<Vec<NodeInfo>, MopError> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        let info = node_info(interp, n)?;
        stack.extend(info.children.iter().rev());
        out.push(info);
    }
    Ok(out)
}

fn action_info(interp: &Interp, key: &ActionKey) -> Option<SemanticActionInfo> {
    interp.spec().catalog.get(key).map(|a| SemanticActionInfo {
        key: a.key.clone(),
        provides: a.provides.clone(),
        requires: a.requires.clone(),
    })
}

fn slice_info(s: &crate::lang::Slice) -> SliceInfo {
    SliceInfo { name: s.name.clone(), syntax_module: s.syntax.name.clone(), bindings: s.bindings.clone() }
}

fn role_or_active(interp: &Interp, role: Option<String>) -> String {
    role.or_else(|| interp.state().current_role.clone())
        .or_else(|| interp.spec().role_order.last().cloned())
        .unwrap_or_default()
}

/// Executes one command against the interpreter. Intercession commands are
/// not wrapped in a batch here; see [`apply`].
pub fn execute(interp: &mut Interp, op: MopOp) -> Result<MopResult, MopError> {
    Ok(match op {
        MopOp::GetTree => MopResult::Nodes(subtree(interp, interp.tree().root())?),
        MopOp::GetSubtree { node } => MopResult::Nodes(subtree(interp, node)?),
        MopOp::GetNode { node } => MopResult::Node(node_info(interp, node)?),
        MopOp::GetAction { node, role } => {
            node_info(interp, node)?;
            let role = role_or_active(interp, role);
            MopResult::Action(interp.resolve_action(node, &role).and_then(|k| action_info(interp, &k)))
        }
        MopOp::GetProduction { node } => {
            let n = interp.tree().get(node).ok_or_else(|| MopError::new("UnknownNode", format!("no node {node}")).at(node))?;
            MopResult::Production(n.production().map(|p| interp.spec().production_info(p)))
        }
        MopOp::GetRole => {
            let role = interp.state().current_role.clone();
            let index = role.as_deref().and_then(|r| interp.spec().role_index(r));
            MopResult::Role(RoleState { idle: role.is_none(), role, index })
        }
        MopOp::GetGrammarProductions => {
            let spec = interp.spec();
            MopResult::Productions((0..spec.productions().len()).map(|i| spec.production_info(crate::lang::ProdId(i))).collect())
        }
        MopOp::GetRoles => MopResult::Roles(
            interp.spec().role_order.iter().enumerate().map(|(index, name)| RoleInfo { name: name.clone(), index }).collect(),
        ),
        MopOp::GetSlices => MopResult::Slices(interp.spec().slices.iter().map(slice_info).collect()),
        MopOp::GetAvailableSlices => MopResult::Slices(interp.slice_registry().values().map(slice_info).collect()),
        MopOp::GetActions => MopResult::Actions(
            interp
                .spec()
                .catalog
                .actions()
                .map(|a| SemanticActionInfo { key: a.key.clone(), provides: a.provides.clone(), requires: a.requires.clone() })
                .collect(),
        ),
        MopOp::GetEndemics => MopResult::Endemics(
            interp
                .spec()
                .endemics
                .iter()
                .map(|e| EndemicInfo { name: e.name.clone(), binding_id: e.binding_id.clone(), ops: e.exported_ops.keys().cloned().collect() })
                .collect(),
        ),
        MopOp::GetAttr { node, name, role } => {
            node_info(interp, node)?;
            let role = role_or_active(interp, role);
            MopResult::Value(interp.attr_in(node, &role, &name))
        }
        MopOp::SetAttr { node, name, value, role } => {
            node_info(interp, node)?;
            let role = role_or_active(interp, role);
            if interp.spec().role_index(&role).is_none() {
                return Err(MopError::new("UnknownRole", format!("unknown role {role}")));
            }
            interp.set_attr_in(node, &role, &name, value);
            MopResult::Unit
        }
        MopOp::SetSpecializedAction { node, action, role } => {
            interp.set_specialized_action(node, action, &role)?;
            MopResult::Unit
        }
        MopOp::ResetNode { node, role } => {
            interp.reset_node(node, &role)?;
            MopResult::Unit
        }
        MopOp::ReplaceSlice { old, new } => {
            interp.replace_slice(&old, &new)?;
            MopResult::Unit
        }
        MopOp::RedoRole { role } => {
            interp.request_redo(&role)?;
            MopResult::Unit
        }
        MopOp::EndemicCall { endemic, operation, args } => MopResult::Value(Some(interp.call_endemic(&endemic, &operation, &args)?)),
    })
}

/// Executes a command; intercession runs as a one-command batch.
pub fn apply(interp: &mut Interp, op: MopOp) -> Result<MopResult, MopError> {
    if op.is_intercession() {
        let name = op.name();
        interp.batch(&name, |i| execute(i, op))
    } else {
        execute(interp, op)
    }
}

/// Executes commands as one all-or-nothing batch.
pub fn apply_batch(interp: &mut Interp, ops: Vec<MopOp>) -> Result<Vec<MopResult>, MopError> {
    if ops.is_empty() {
        return Ok(Vec::new());
    }
    interp.batch("once", |i| ops.into_iter().map(|op| execute(i, op)).collect())
}
