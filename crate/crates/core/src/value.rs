use std::fmt;

use serde::{Deserialize, Serialize};

use crate::parser::NodeId;

/// Runtime values. On the wire every value is a tagged union
/// `{"t": "num"|"str"|"bool"|"null"|"obj"|"fun"|"list", "v": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", content = "v")]
pub enum Value {
    #[serde(rename = "num")]
    Number(f64),
    #[serde(rename = "str")]
    Str(String),
    #[serde(rename = "bool")]
    Bool(bool),
    #[serde(rename = "null")]
    Null,
    #[serde(rename = "obj")]
    Object(u64),
    #[serde(rename = "fun")]
    Function(NodeId),
    #[serde(rename = "list")]
    List(Vec<Value>),
}

impl Value {
    pub fn truthy(&self) -> bool {
        match self {
            Value::Number(n) => *n != 0.0,
            Value::Str(s) => !s.is_empty(),
            Value::Bool(b) => *b,
            Value::Null => false,
            Value::Object(_) | Value::Function(_) => true,
            Value::List(l) => !l.is_empty(),
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Number(_) => "number",
            Value::Str(_) => "string",
            Value::Bool(_) => "boolean",
            Value::Null => "null",
            Value::Object(_) => "object",
            Value::Function(_) => "function",
            Value::List(_) => "list",
        }
    }
}

pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(n) => f.write_str(&format_number(*n)),
            Value::Str(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Null => f.write_str("null"),
            Value::Object(id) => write!(f, "[object #{id}]"),
            Value::Function(n) => write!(f, "[function {n}]"),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}

impl From<f64> for Value {
    fn from(n: f64) -> Self {
        Value::Number(n)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagged_encoding() {
        let v = serde_json::to_string(&Value::Number(4.0)).unwrap();
        assert_eq!(v, r#"{"t":"num","v":4.0}"#);
        assert_eq!(serde_json::to_string(&Value::Null).unwrap(), r#"{"t":"null"}"#);
        let back: Value = serde_json::from_str(r#"{"t":"null","v":null}"#).unwrap();
        assert_eq!(back, Value::Null);
        let obj: Value = serde_json::from_str(r#"{"t":"obj","v":3}"#).unwrap();
        assert_eq!(obj, Value::Object(3));
    }

    #[test]
    fn numbers_render_like_integers_when_whole() {
        assert_eq!(Value::Number(-4.0).to_string(), "-4");
        assert_eq!(Value::Number(3.75).to_string(), "3.75");
    }

    #[test]
    fn truthiness() {
        assert!(Value::Number(2.0).truthy());
        assert!(!Value::Number(0.0).truthy());
        assert!(!Value::Str(String::new()).truthy());
        assert!(Value::Bool(true).truthy());
        assert!(!Value::Null.truthy());
    }
}
