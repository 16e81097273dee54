//! MiniJS: a small dynamically typed language assembled from slices.
//!
//! Statements: `print(E);`, `x = E;`, `function F(a, b) { ... }`,
//! `return E;`, `E;`, `E.f = E;`, `while (E) { ... }`, `if (E) { ... }`
//! (optionally `else { ... }`) and `fail(E);`. Expressions: literals,
//! variables, `+ - * /`, comparisons, calls `f(args)`, `new P(args)`, field
//! reads `E.f` and `this`.
//!
//! Roles are `syntax` (names of functions, prototypes and parameters) and
//! `evaluation`. Two endemic slices hold shared state: `SymbolTable`
//! (scopes and the object heap) and `StackTrace` (frames pushed by agents).

pub mod objects;
pub mod state;

use std::sync::Arc;

use indexmap::IndexMap;

use crate::lang::{compose_language, ActionCatalog, ActionKey, Assoc, EndemicSlice, Language, Slice, SyntaxModule};
use crate::nvm::{Abort, Interp, InterpConfig, RuntimeError};
use crate::parser::NodeId;
use crate::value::Value;
use objects::Strategy;
use state::{StackTrace, SymbolTable};

pub const SYNTAX: &str = "syntax";
pub const EVAL: &str = "evaluation";
pub const SYMBOL_TABLE: &str = "SymbolTable";
pub const STACK_TRACE: &str = "StackTrace";
const MAX_CALL_DEPTH: usize = 5_000;

type Outcome = Result<(), Abort>;

struct Modules {
    program: Arc<SyntaxModule>,
    print: Arc<SyntaxModule>,
    var: Arc<SyntaxModule>,
    literal: Arc<SyntaxModule>,
    add: Arc<SyntaxModule>,
    arith: Arc<SyntaxModule>,
    fun: Arc<SyntaxModule>,
    args: Arc<SyntaxModule>,
    new: Arc<SyntaxModule>,
    field: Arc<SyntaxModule>,
    control: Arc<SyntaxModule>,
    fail: Arc<SyntaxModule>,
}

fn module(name: &str, rules: &[(&str, &str)], ops: &[(&str, &str, u32, Assoc)]) -> Arc<SyntaxModule> {
    let mut m = SyntaxModule::new(name);
    for (label, rule) in rules {
        m = m.rule(label, rule).expect("static MiniJS rule");
    }
    for (label, rule, prec, assoc) in ops {
        m = m.op_rule(label, rule, *prec, *assoc).expect("static MiniJS rule");
    }
    Arc::new(m)
}

fn modules() -> Modules {
    use Assoc::{Left, None as NonAssoc};
    Modules {
        program: module(
            "miniJS.ProgramSyntax",
            &[("Program", "Program <- Stmts"), ("StmtsCons", "Stmts <- Stmt Stmts"), ("StmtsNil", "Stmts <-")],
            &[],
        ),
        print: module("miniJS.PrintSyntax", &[("Print", "Stmt <- \"print\" \"(\" Expr \")\" \";\"")], &[]),
        var: module("miniJS.VarSyntax", &[("Assign", "Stmt <- ID \"=\" Expr \";\""), ("Var", "Expr <- ID")], &[]),
        literal: module(
            "miniJS.LiteralSyntax",
            &[
                ("Num", "Expr <- NUM"),
                ("Str", "Expr <- STRING"),
                ("True", "Expr <- \"true\""),
                ("False", "Expr <- \"false\""),
                ("Null", "Expr <- \"null\""),
                ("Paren", "Expr <- \"(\" Expr \")\""),
            ],
            &[],
        ),
        add: module("miniJS.AddSyntax", &[], &[("Add", "Expr <- Expr \"+\" Expr", 2, Left)]),
        arith: module(
            "miniJS.ArithSyntax",
            &[],
            &[
                ("Sub", "Expr <- Expr \"-\" Expr", 2, Left),
                ("Mul", "Expr <- Expr \"*\" Expr", 3, Left),
                ("Div", "Expr <- Expr \"/\" Expr", 3, Left),
                ("Eq", "Expr <- Expr \"==\" Expr", 1, NonAssoc),
                ("Ne", "Expr <- Expr \"!=\" Expr", 1, NonAssoc),
                ("Lt", "Expr <- Expr \"<\" Expr", 1, NonAssoc),
                ("Gt", "Expr <- Expr \">\" Expr", 1, NonAssoc),
            ],
        ),
        fun: module(
            "miniJS.FunSyntax",
            &[
                ("FunDecl", "Stmt <- \"function\" FunName \"(\" Params \")\" \"{\" Stmts \"}\""),
                ("FunName", "FunName <- ID"),
                ("ParamsNone", "Params <-"),
                ("ParamsSome", "Params <- ParamList"),
                ("ParamOne", "ParamList <- ID"),
                ("ParamMore", "ParamList <- ID \",\" ParamList"),
                ("Return", "Stmt <- \"return\" Expr \";\""),
                ("Call", "Expr <- FunName \"(\" Args \")\""),
                ("ExprStmt", "Stmt <- Expr \";\""),
            ],
            &[],
        ),
        args: module(
            "miniJS.ArgsSyntax",
            &[
                ("ArgsNone", "Args <-"),
                ("ArgsSome", "Args <- ArgList"),
                ("ArgOne", "ArgList <- Expr"),
                ("ArgMore", "ArgList <- Expr \",\" ArgList"),
            ],
            &[],
        ),
        new: module(
            "miniJS.NewSyntax",
            &[("New", "Expr <- \"new\" ProtoName \"(\" Args \")\""), ("ProtoName", "ProtoName <- ID")],
            &[],
        ),
        field: module(
            "miniJS.FieldSyntax",
            &[("FieldAssign", "Stmt <- Expr \".\" ID \"=\" Expr \";\""), ("This", "Expr <- \"this\"")],
            &[("Field", "Expr <- Expr \".\" ID", 10, Left)],
        ),
        control: module(
            "miniJS.ControlSyntax",
            &[
                ("While", "Stmt <- \"while\" \"(\" Expr \")\" \"{\" Stmts \"}\""),
                ("If", "Stmt <- \"if\" \"(\" Expr \")\" \"{\" Stmts \"}\""),
                ("IfElse", "Stmt <- \"if\" \"(\" Expr \")\" \"{\" Stmts \"}\" \"else\" \"{\" Stmts \"}\""),
            ],
            &[],
        ),
        fail: module("miniJS.FailSyntax", &[("Fail", "Stmt <- \"fail\" \"(\" Expr \")\" \";\"")], &[]),
    }
}

// ---- helpers ---------------------------------------------------------------

fn st(i: &mut Interp) -> Result<&mut SymbolTable, RuntimeError> {
    i.endemic::<SymbolTable>(SYMBOL_TABLE)
}

fn val(i: &mut Interp, n: NodeId, idx: usize) -> Result<Value, Abort> {
    i.eval_child_attr(n, idx, "val")
}

fn set_val(i: &mut Interp, n: NodeId, v: Value) -> Outcome {
    i.set_attr(n, "val", v);
    Ok(())
}

fn type_error(op: &str, l: &Value, r: &Value) -> RuntimeError {
    RuntimeError::new(format!("cannot apply {op} to {} and {}", l.type_name(), r.type_name()))
}

/// Output form of a value; objects print as `[object Proto]`.
pub fn render(i: &mut Interp, v: &Value) -> Result<String, RuntimeError> {
    Ok(match v {
        Value::Object(id) => {
            let proto = st(i)?.heap.get_mut(*id)?.proto.clone();
            format!("[object {proto}]")
        }
        Value::Function(decl) => {
            let name = i.child(*decl, 1).ok().and_then(|c| i.attr_in(c, SYNTAX, "name"));
            format!("[function {}]", name.map(|n| n.to_string()).unwrap_or_default())
        }
        Value::List(items) => {
            let parts: Result<Vec<String>, RuntimeError> = items.iter().map(|x| render(i, x)).collect();
            format!("[{}]", parts?.join(", "))
        }
        other => other.to_string(),
    })
}

fn numeric(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => Some(*n),
        Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
        _ => None,
    }
}

/// Runtime dispatch on operand types: strings concatenate, numbers (and
/// booleans as 1/0) add.
pub fn add_dispatch(l: &Value, r: &Value) -> Result<Value, RuntimeError> {
    let scalar = |v: &Value| matches!(v, Value::Number(_) | Value::Str(_) | Value::Bool(_) | Value::Null);
    if !scalar(l) || !scalar(r) {
        return Err(type_error("+", l, r));
    }
    if matches!(l, Value::Str(_)) || matches!(r, Value::Str(_)) {
        return Ok(Value::Str(format!("{l}{r}")));
    }
    match (numeric(l), numeric(r)) {
        (Some(a), Some(b)) => Ok(Value::Number(a + b)),
        _ => Err(type_error("+", l, r)),
    }
}

fn arith(op: &str, l: &Value, r: &Value) -> Result<Value, RuntimeError> {
    let (Some(a), Some(b)) = (numeric(l), numeric(r)) else { return Err(type_error(op, l, r)) };
    Ok(Value::Number(match op {
        "-" => a - b,
        "*" => a * b,
        "/" => a / b,
        _ => unreachable!("arith op {op}"),
    }))
}

/// Structural equality; objects compare by identity seed.
pub fn values_equal(i: &mut Interp, l: &Value, r: &Value) -> Result<bool, RuntimeError> {
    Ok(match (l, r) {
        (Value::Object(a), Value::Object(b)) => {
            let heap = &mut st(i)?.heap;
            let sa = heap.get_mut(*a)?.identity_seed;
            let sb = heap.get_mut(*b)?.identity_seed;
            sa == sb
        }
        _ => l == r,
    })
}

fn compare(op: &str, l: &Value, r: &Value) -> Result<bool, RuntimeError> {
    let ord = match (l, r) {
        (Value::Str(a), Value::Str(b)) => a.partial_cmp(b),
        _ => match (numeric(l), numeric(r)) {
            (Some(a), Some(b)) => a.partial_cmp(&b),
            _ => return Err(type_error(op, l, r)),
        },
    };
    Ok(match op {
        "<" => ord == Some(std::cmp::Ordering::Less),
        _ => ord == Some(std::cmp::Ordering::Greater),
    })
}

fn name_attr(i: &Interp, n: NodeId, idx: usize) -> Result<String, RuntimeError> {
    match i.child_attr(n, idx, "name")? {
        Value::Str(s) => Ok(s),
        other => Err(RuntimeError::new(format!("name attribute is a {}", other.type_name()))),
    }
}

fn list_attr(i: &Interp, n: NodeId, idx: usize, name: &str) -> Result<Vec<Value>, RuntimeError> {
    match i.child_attr(n, idx, name)? {
        Value::List(items) => Ok(items),
        other => Err(RuntimeError::new(format!("{name} attribute is a {}", other.type_name()))),
    }
}

/// Runs the body of a `FunDecl` node in a fresh frame.
pub fn call_function(i: &mut Interp, decl: NodeId, args: Vec<Value>, this: Option<Value>) -> Result<Value, Abort> {
    let params_node = i.child(decl, 3)?;
    let params = match i.attr_in(params_node, SYNTAX, "names") {
        Some(Value::List(p)) => p,
        _ => Vec::new(),
    };
    let mut frame = IndexMap::new();
    for (k, p) in params.iter().enumerate() {
        frame.insert(p.to_string(), args.get(k).cloned().unwrap_or(Value::Null));
    }
    if let Some(t) = this {
        frame.insert("this".to_string(), t);
    }
    let table = st(i)?;
    if table.frames.len() > MAX_CALL_DEPTH {
        return Err(RuntimeError::new("call stack exceeded").into());
    }
    table.push_frame(frame);
    let body = i.child(decl, 6)?;
    let result = i.visit(body);
    st(i)?.pop_frame();
    match result {
        Ok(()) => Ok(Value::Null),
        Err(Abort::Return(v)) => Ok(v),
        Err(e) => Err(e),
    }
}

fn lookup_function(i: &mut Interp, name: &str, what: &str) -> Result<NodeId, RuntimeError> {
    match st(i)?.lookup(name) {
        Some(Value::Function(decl)) => Ok(decl),
        Some(other) => Err(RuntimeError::new(format!("{name} is a {}, not a {what}", other.type_name()))),
        None => Err(RuntimeError::new(format!("unknown {what} {name}"))),
    }
}

// ---- evaluation actions ------------------------------------------------------

fn print_stmt(i: &mut Interp, n: NodeId) -> Outcome {
    let v = val(i, n, 2)?;
    let text = render(i, &v)?;
    i.print(&text);
    Ok(())
}

fn assign(i: &mut Interp, n: NodeId) -> Outcome {
    let v = val(i, n, 2)?;
    let name = i.lexeme(n, 0)?;
    st(i)?.assign(&name, v);
    Ok(())
}

fn var(i: &mut Interp, n: NodeId) -> Outcome {
    let name = i.lexeme(n, 0)?;
    let v = st(i)?.lookup(&name).ok_or_else(|| RuntimeError::new(format!("undefined variable {name}")))?;
    set_val(i, n, v)
}

fn num(i: &mut Interp, n: NodeId) -> Outcome {
    let v = i.child_attr(n, 0, "val")?;
    set_val(i, n, v)
}

fn str_lit(i: &mut Interp, n: NodeId) -> Outcome {
    let s = i.lexeme(n, 0)?;
    set_val(i, n, Value::Str(s))
}

fn true_lit(i: &mut Interp, n: NodeId) -> Outcome {
    set_val(i, n, Value::Bool(true))
}

fn false_lit(i: &mut Interp, n: NodeId) -> Outcome {
    set_val(i, n, Value::Bool(false))
}

fn null_lit(i: &mut Interp, n: NodeId) -> Outcome {
    set_val(i, n, Value::Null)
}

fn paren(i: &mut Interp, n: NodeId) -> Outcome {
    let v = val(i, n, 1)?;
    set_val(i, n, v)
}

fn add(i: &mut Interp, n: NodeId) -> Outcome {
    let l = val(i, n, 0)?;
    let r = val(i, n, 2)?;
    set_val(i, n, add_dispatch(&l, &r)?)
}

/// Replacement semantics for `+` that subtracts.
fn add_as_sub(i: &mut Interp, n: NodeId) -> Outcome {
    let l = val(i, n, 0)?;
    let r = val(i, n, 2)?;
    set_val(i, n, arith("-", &l, &r)?)
}

/// Numbers only, no coercion.
fn float_add(i: &mut Interp, n: NodeId) -> Outcome {
    let l = val(i, n, 0)?;
    let r = val(i, n, 2)?;
    match (&l, &r) {
        (Value::Number(a), Value::Number(b)) => set_val(i, n, Value::Number(a + b)),
        _ => Err(type_error("+ (float)", &l, &r).into()),
    }
}

fn binary(i: &mut Interp, n: NodeId, op: &str) -> Outcome {
    let l = val(i, n, 0)?;
    let r = val(i, n, 2)?;
    let v = match op {
        "==" => Value::Bool(values_equal(i, &l, &r)?),
        "!=" => Value::Bool(!values_equal(i, &l, &r)?),
        "<" | ">" => Value::Bool(compare(op, &l, &r)?),
        _ => arith(op, &l, &r)?,
    };
    set_val(i, n, v)
}

fn sub(i: &mut Interp, n: NodeId) -> Outcome {
    binary(i, n, "-")
}

fn mul(i: &mut Interp, n: NodeId) -> Outcome {
    binary(i, n, "*")
}

fn div(i: &mut Interp, n: NodeId) -> Outcome {
    binary(i, n, "/")
}

fn eq(i: &mut Interp, n: NodeId) -> Outcome {
    binary(i, n, "==")
}

fn ne(i: &mut Interp, n: NodeId) -> Outcome {
    binary(i, n, "!=")
}

fn lt(i: &mut Interp, n: NodeId) -> Outcome {
    binary(i, n, "<")
}

fn gt(i: &mut Interp, n: NodeId) -> Outcome {
    binary(i, n, ">")
}

fn fun_decl(i: &mut Interp, n: NodeId) -> Outcome {
    let name = name_attr(i, n, 1)?;
    st(i)?.assign(&name, Value::Function(n));
    Ok(())
}

fn return_stmt(i: &mut Interp, n: NodeId) -> Outcome {
    let v = val(i, n, 1)?;
    Err(Abort::Return(v))
}

fn call(i: &mut Interp, n: NodeId) -> Outcome {
    let name = name_attr(i, n, 0)?;
    i.eval_child(n, 2)?;
    let args = list_attr(i, n, 2, "args")?;
    let decl = lookup_function(i, &name, "function")?;
    let v = call_function(i, decl, args, None)?;
    set_val(i, n, v)
}

fn expr_stmt(i: &mut Interp, n: NodeId) -> Outcome {
    i.eval_child(n, 0)
}

fn args_none(i: &mut Interp, n: NodeId) -> Outcome {
    i.set_attr(n, "args", Value::List(Vec::new()));
    Ok(())
}

fn args_some(i: &mut Interp, n: NodeId) -> Outcome {
    i.eval_child(n, 0)?;
    let args = i.child_attr(n, 0, "args")?;
    i.set_attr(n, "args", args);
    Ok(())
}

fn arg_one(i: &mut Interp, n: NodeId) -> Outcome {
    let v = val(i, n, 0)?;
    i.set_attr(n, "args", Value::List(vec![v]));
    Ok(())
}

fn arg_more(i: &mut Interp, n: NodeId) -> Outcome {
    let first = val(i, n, 0)?;
    i.eval_child(n, 2)?;
    let mut args = vec![first];
    args.extend(list_attr(i, n, 2, "args")?);
    i.set_attr(n, "args", Value::List(args));
    Ok(())
}

fn instantiate(i: &mut Interp, n: NodeId, strategy: Strategy) -> Outcome {
    let proto = name_attr(i, n, 1)?;
    i.eval_child(n, 3)?;
    let args = list_attr(i, n, 3, "args")?;
    let decl = lookup_function(i, &proto, "prototype")?;
    let id = st(i)?.heap.alloc(&proto, strategy)?;
    call_function(i, decl, args, Some(Value::Object(id)))?;
    st(i)?.heap.get_mut(id)?.freeze();
    set_val(i, n, Value::Object(id))
}

fn new_hashmap(i: &mut Interp, n: NodeId) -> Outcome {
    instantiate(i, n, Strategy::HashMap)
}

fn new_array_like(i: &mut Interp, n: NodeId) -> Outcome {
    instantiate(i, n, Strategy::ArrayLike)
}

fn new_persistent(i: &mut Interp, n: NodeId) -> Outcome {
    instantiate(i, n, Strategy::Persistent)
}

fn object_id(v: &Value, field: &str) -> Result<u64, RuntimeError> {
    match v {
        Value::Object(id) => Ok(*id),
        other => Err(RuntimeError::new(format!("cannot access field {field} of {}", other.type_name()))),
    }
}

fn field(i: &mut Interp, n: NodeId) -> Outcome {
    let obj = val(i, n, 0)?;
    let name = i.lexeme(n, 2)?;
    let id = object_id(&obj, &name)?;
    let v = st(i)?.heap.get_mut(id)?.get(&name)?.unwrap_or(Value::Null);
    set_val(i, n, v)
}

fn field_assign(i: &mut Interp, n: NodeId) -> Outcome {
    let obj = val(i, n, 0)?;
    let name = i.lexeme(n, 2)?;
    let v = val(i, n, 4)?;
    let id = object_id(&obj, &name)?;
    st(i)?.heap.get_mut(id)?.set(&name, v)?;
    Ok(())
}

fn this(i: &mut Interp, n: NodeId) -> Outcome {
    let v = st(i)?.lookup("this").ok_or_else(|| RuntimeError::new("this used outside a constructor"))?;
    set_val(i, n, v)
}

fn while_loop(i: &mut Interp, n: NodeId) -> Outcome {
    while val(i, n, 2)?.truthy() {
        i.eval_child(n, 5)?;
    }
    Ok(())
}

fn if_stmt(i: &mut Interp, n: NodeId) -> Outcome {
    if val(i, n, 2)?.truthy() {
        i.eval_child(n, 5)?;
    }
    Ok(())
}

fn if_else(i: &mut Interp, n: NodeId) -> Outcome {
    let branch = if val(i, n, 2)?.truthy() { 5 } else { 9 };
    i.eval_child(n, branch)
}

/// Aborts with the rendered message and the enriched frames, innermost
/// first.
fn fail(i: &mut Interp, n: NodeId) -> Outcome {
    let v = val(i, n, 2)?;
    let message = render(i, &v)?;
    let trace = match i.endemic::<StackTrace>(STACK_TRACE) {
        Ok(t) => t.frames.iter().rev().cloned().collect(),
        Err(_) => Vec::new(),
    };
    Err(Abort::Error(RuntimeError { message, span: Some(i.tree().node(n).span), trace }))
}

// ---- syntax-role actions ------------------------------------------------------

fn ident_name(i: &mut Interp, n: NodeId) -> Outcome {
    let name = i.lexeme(n, 0)?;
    i.set_attr(n, "name", Value::Str(name));
    Ok(())
}

fn params_none(i: &mut Interp, n: NodeId) -> Outcome {
    i.set_attr(n, "names", Value::List(Vec::new()));
    Ok(())
}

fn params_some(i: &mut Interp, n: NodeId) -> Outcome {
    i.eval_child(n, 0)?;
    let names = i.child_attr(n, 0, "names")?;
    i.set_attr(n, "names", names);
    Ok(())
}

fn param_one(i: &mut Interp, n: NodeId) -> Outcome {
    let name = i.lexeme(n, 0)?;
    i.set_attr(n, "names", Value::List(vec![Value::Str(name)]));
    Ok(())
}

fn param_more(i: &mut Interp, n: NodeId) -> Outcome {
    let first = i.lexeme(n, 0)?;
    i.eval_child(n, 2)?;
    let mut names = vec![Value::Str(first)];
    names.extend(list_attr(i, n, 2, "names")?);
    i.set_attr(n, "names", Value::List(names));
    Ok(())
}

// ---- endemic state & exported operations --------------------------------------

fn symbol_table_factory(config: &InterpConfig) -> Box<dyn std::any::Any> {
    Box::new(SymbolTable::new(config.store_dir.clone()))
}

fn stack_trace_factory(_: &InterpConfig) -> Box<dyn std::any::Any> {
    Box::new(StackTrace::default())
}

fn str_arg<'a>(args: &'a [Value], k: usize, what: &str) -> Result<&'a str, RuntimeError> {
    args.get(k).and_then(Value::as_str).ok_or_else(|| RuntimeError::new(format!("argument {k} ({what}) must be a string")))
}

/// `migrateInstances(proto, strategy)` → number of objects migrated.
fn op_migrate(i: &mut Interp, args: &[Value]) -> Result<Value, RuntimeError> {
    let proto = str_arg(args, 0, "prototype")?;
    let name = str_arg(args, 1, "strategy")?;
    let strategy = Strategy::parse(name).ok_or_else(|| RuntimeError::new(format!("unknown strategy {name}")))?;
    let n = st(i)?.migrate_instances(proto, strategy)?;
    Ok(Value::Number(n as f64))
}

/// `countInstances(proto)` → number of reachable objects of that prototype.
fn op_count(i: &mut Interp, args: &[Value]) -> Result<Value, RuntimeError> {
    let proto = str_arg(args, 0, "prototype")?;
    Ok(Value::Number(st(i)?.count_instances(proto) as f64))
}

fn op_push(i: &mut Interp, args: &[Value]) -> Result<Value, RuntimeError> {
    let frame = args.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" ");
    i.endemic::<StackTrace>(STACK_TRACE)?.frames.push(frame);
    Ok(Value::Null)
}

fn op_pop(i: &mut Interp, _: &[Value]) -> Result<Value, RuntimeError> {
    Ok(i.endemic::<StackTrace>(STACK_TRACE)?.frames.pop().map_or(Value::Null, Value::Str))
}

fn op_frames(i: &mut Interp, _: &[Value]) -> Result<Value, RuntimeError> {
    let frames = &i.endemic::<StackTrace>(STACK_TRACE)?.frames;
    Ok(Value::List(frames.iter().rev().cloned().map(Value::Str).collect()))
}

// ---- assembly ---------------------------------------------------------------

fn key(slice: &str, label: &str, role: &str) -> ActionKey {
    ActionKey::new(slice, label, role)
}

/// Every MiniJS action, including the alternatives that are only reachable
/// through slice replacement or per-node specialization.
pub fn catalog() -> ActionCatalog {
    let mut c = ActionCatalog::new();
    let v: &[&str] = &["val"];
    c.action(key("miniJS.Print", "Print", EVAL), &[], &[(2, "val")], print_stmt)
        .action(key("miniJS.Var", "Assign", EVAL), &[], &[(2, "val")], assign)
        .action(key("miniJS.Var", "Var", EVAL), v, &[], var)
        .action(key("miniJS.Literals", "Num", EVAL), v, &[], num)
        .action(key("miniJS.Literals", "Str", EVAL), v, &[], str_lit)
        .action(key("miniJS.Literals", "True", EVAL), v, &[], true_lit)
        .action(key("miniJS.Literals", "False", EVAL), v, &[], false_lit)
        .action(key("miniJS.Literals", "Null", EVAL), v, &[], null_lit)
        .action(key("miniJS.Literals", "Paren", EVAL), v, &[(1, "val")], paren);
    for (slice, f) in [("miniJS.AddEval", add as crate::nvm::ActionFn), ("miniJS.SubAddEval", add_as_sub), ("miniJS.FloatAddEval", float_add)] {
        c.action(key(slice, "Add", EVAL), v, &[(0, "val"), (2, "val")], f);
    }
    for (label, f) in [
        ("Sub", sub as crate::nvm::ActionFn),
        ("Mul", mul),
        ("Div", div),
        ("Eq", eq),
        ("Ne", ne),
        ("Lt", lt),
        ("Gt", gt),
    ] {
        c.action(key("miniJS.Arith", label, EVAL), v, &[(0, "val"), (2, "val")], f);
    }
    c.action(key("miniJS.Functions", "FunName", SYNTAX), &["name"], &[], ident_name)
        .action(key("miniJS.Functions", "ParamsNone", SYNTAX), &["names"], &[], params_none)
        .action(key("miniJS.Functions", "ParamsSome", SYNTAX), &["names"], &[(0, "names")], params_some)
        .action(key("miniJS.Functions", "ParamOne", SYNTAX), &["names"], &[], param_one)
        .action(key("miniJS.Functions", "ParamMore", SYNTAX), &["names"], &[(2, "names")], param_more)
        .action(key("miniJS.Functions", "FunDecl", EVAL), &[], &[(1, "name"), (3, "names")], fun_decl)
        .action(key("miniJS.Functions", "Return", EVAL), &[], &[(1, "val")], return_stmt)
        .action(key("miniJS.Functions", "Call", EVAL), v, &[(0, "name"), (2, "args")], call)
        .action(key("miniJS.Functions", "ExprStmt", EVAL), &[], &[(0, "val")], expr_stmt)
        .action(key("miniJS.Args", "ArgsNone", EVAL), &["args"], &[], args_none)
        .action(key("miniJS.Args", "ArgsSome", EVAL), &["args"], &[(0, "args")], args_some)
        .action(key("miniJS.Args", "ArgOne", EVAL), &["args"], &[(0, "val")], arg_one)
        .action(key("miniJS.Args", "ArgMore", EVAL), &["args"], &[(0, "val"), (2, "args")], arg_more)
        .action(key("miniJS.NewEval", "ProtoName", SYNTAX), &["name"], &[], ident_name);
    for (slice, f) in [
        ("miniJS.NewEval", new_hashmap as crate::nvm::ActionFn),
        ("miniJS.ArrayLikeNewEval", new_array_like),
        ("miniJS.PersistentNewEval", new_persistent),
    ] {
        c.action(key(slice, "New", EVAL), v, &[(1, "name"), (3, "args")], f);
    }
    c.action(key("miniJS.Fields", "Field", EVAL), v, &[(0, "val")], field)
        .action(key("miniJS.Fields", "FieldAssign", EVAL), &[], &[(0, "val"), (4, "val")], field_assign)
        .action(key("miniJS.Fields", "This", EVAL), v, &[], this)
        .action(key("miniJS.Control", "While", EVAL), &[], &[(2, "val")], while_loop)
        .action(key("miniJS.Control", "If", EVAL), &[], &[(2, "val")], if_stmt)
        .action(key("miniJS.Control", "IfElse", EVAL), &[], &[(2, "val")], if_else)
        .action(key("miniJS.Fail", "Fail", EVAL), &[], &[(2, "val")], fail)
        .factory("miniJS.symbolTable", symbol_table_factory)
        .factory("miniJS.stackTrace", stack_trace_factory)
        .op("miniJS.migrateInstances", op_migrate)
        .op("miniJS.countInstances", op_count)
        .op("miniJS.stackPush", op_push)
        .op("miniJS.stackPop", op_pop)
        .op("miniJS.stackFrames", op_frames);
    c
}

fn own(slice: Slice, role: &str, labels: &[&str]) -> Slice {
    labels.iter().fold(slice, |s, l| s.bind_own(role, l))
}

fn add_slice(m: &Modules, name: &str) -> Slice {
    own(Slice::new(name, m.add.clone()), EVAL, &["Add"])
}

fn new_slice(m: &Modules, name: &str) -> Slice {
    own(Slice::new(name, m.new.clone()), EVAL, &["New"]).bind(SYNTAX, "ProtoName", key("miniJS.NewEval", "ProtoName", SYNTAX))
}

/// The MiniJS language with its slice registry.
pub fn language() -> Language {
    let m = modules();
    let slices = vec![
        Slice::new("miniJS.Program", m.program.clone()),
        own(Slice::new("miniJS.Print", m.print.clone()), EVAL, &["Print"]),
        own(Slice::new("miniJS.Var", m.var.clone()), EVAL, &["Assign", "Var"]),
        own(Slice::new("miniJS.Literals", m.literal.clone()), EVAL, &["Num", "Str", "True", "False", "Null", "Paren"]),
        add_slice(&m, "miniJS.AddEval"),
        own(Slice::new("miniJS.Arith", m.arith.clone()), EVAL, &["Sub", "Mul", "Div", "Eq", "Ne", "Lt", "Gt"]),
        own(
            own(Slice::new("miniJS.Functions", m.fun.clone()), SYNTAX, &["FunName", "ParamsNone", "ParamsSome", "ParamOne", "ParamMore"]),
            EVAL,
            &["FunDecl", "Return", "Call", "ExprStmt"],
        ),
        own(Slice::new("miniJS.Args", m.args.clone()), EVAL, &["ArgsNone", "ArgsSome", "ArgOne", "ArgMore"]),
        new_slice(&m, "miniJS.NewEval"),
        own(Slice::new("miniJS.Fields", m.field.clone()), EVAL, &["Field", "FieldAssign", "This"]),
        own(Slice::new("miniJS.Control", m.control.clone()), EVAL, &["While", "If", "IfElse"]),
        own(Slice::new("miniJS.Fail", m.fail.clone()), EVAL, &["Fail"]),
    ];
    let endemics = vec![
        EndemicSlice::new("miniJS.SymbolTableSlice", SYMBOL_TABLE, "miniJS.symbolTable")
            .export("migrateInstances", "miniJS.migrateInstances")
            .export("countInstances", "miniJS.countInstances"),
        EndemicSlice::new("miniJS.StackTraceSlice", STACK_TRACE, "miniJS.stackTrace")
            .export("push", "miniJS.stackPush")
            .export("pop", "miniJS.stackPop")
            .export("frames", "miniJS.stackFrames"),
    ];
    let extra = vec![
        add_slice(&m, "miniJS.SubAddEval"),
        add_slice(&m, "miniJS.FloatAddEval"),
        new_slice(&m, "miniJS.ArrayLikeNewEval"),
        new_slice(&m, "miniJS.PersistentNewEval"),
    ];
    let spec = compose_language("minijs", Arc::new(catalog()), slices, endemics, &[SYNTAX, EVAL], "Program")
        .expect("MiniJS composes");
    Language::new(spec, extra)
}
