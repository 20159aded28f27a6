//! Conjunctive predicates over key/value state.
//!
//! A predicate is a conjunction of comparisons `key op literal`, written
//! as text like `self.x = 4 && self.y >= 2 && mood != "angry"`. The empty
//! conjunction (text `""` or `true`) always holds. Comparing against a key
//! that is absent is false for every operator, including `!=`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use schemars::JsonSchema;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    // Longest spellings first so `<=` is not read as `<`.
    const SPELLINGS: [(&'static str, CompareOp); 10] = [
        ("==", CompareOp::Eq),
        ("!=", CompareOp::Ne),
        ("<=", CompareOp::Le),
        (">=", CompareOp::Ge),
        ("≠", CompareOp::Ne),
        ("≤", CompareOp::Le),
        ("≥", CompareOp::Ge),
        ("=", CompareOp::Eq),
        ("<", CompareOp::Lt),
        (">", CompareOp::Gt),
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub key: String,
    pub op: CompareOp,
    pub value: Value,
}

impl Condition {
    pub fn new(key: impl Into<String>, op: CompareOp, value: impl Into<Value>) -> Self {
        Self { key: key.into(), op, value: value.into() }
    }

    pub fn holds(&self, actual: Option<&Value>) -> bool {
        let Some(actual) = actual else {
            return false;
        };
        match self.op {
            CompareOp::Eq => values_equal(actual, &self.value),
            CompareOp::Ne => !values_equal(actual, &self.value),
            op => match compare(actual, &self.value) {
                Some(ord) => match op {
                    CompareOp::Lt => ord == Ordering::Less,
                    CompareOp::Le => ord != Ordering::Greater,
                    CompareOp::Gt => ord == Ordering::Greater,
                    CompareOp::Ge => ord != Ordering::Less,
                    CompareOp::Eq | CompareOp::Ne => unreachable!(),
                },
                None => false,
            },
        }
    }
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) if a.is_number() && b.is_number() => x == y,
        _ => a == b,
    }
}

fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64()?.partial_cmp(&y.as_f64()?),
        (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predicate {
    conditions: Vec<Condition>,
}

impl Predicate {
    pub fn always() -> Self {
        Self::default()
    }

    pub fn new(conditions: Vec<Condition>) -> Self {
        Self { conditions }
    }

    pub fn and(mut self, key: impl Into<String>, op: CompareOp, value: impl Into<Value>) -> Self {
        self.conditions.push(Condition::new(key, op, value));
        self
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    pub fn is_trivial(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn holds<'a>(&self, lookup: impl Fn(&str) -> Option<&'a Value>) -> bool {
        self.conditions.iter().all(|c| c.holds(lookup(&c.key)))
    }

    /// Keys the predicate reads.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.conditions.iter().map(|c| c.key.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse condition `{clause}`: {reason}")]
pub struct ParsePredicateError {
    pub clause: String,
    pub reason: &'static str,
}

impl FromStr for Predicate {
    type Err = ParsePredicateError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let text = text.trim();
        if text.is_empty() || text == "true" {
            return Ok(Self::always());
        }
        text.split("&&").map(parse_condition).collect::<Result<Vec<_>, _>>().map(Self::new)
    }
}

fn parse_condition(clause: &str) -> Result<Condition, ParsePredicateError> {
    let err = |reason| ParsePredicateError { clause: clause.trim().to_owned(), reason };
    let (at, symbol, op) = clause
        .char_indices()
        .find_map(|(i, _)| {
            CompareOp::SPELLINGS.iter().find(|(s, _)| clause[i..].starts_with(s)).map(|(s, op)| (i, *s, *op))
        })
        .ok_or_else(|| err("missing comparison operator"))?;
    let key = clause[..at].trim();
    let literal = clause[at + symbol.len()..].trim();
    if key.is_empty() {
        return Err(err("missing key"));
    }
    if key.chars().any(char::is_whitespace) {
        return Err(err("key contains whitespace"));
    }
    if literal.is_empty() {
        return Err(err("missing literal"));
    }
    let value = serde_json::from_str(literal).unwrap_or_else(|_| Value::String(literal.to_owned()));
    Ok(Condition::new(key, op, value))
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.conditions.iter().enumerate() {
            if i > 0 {
                f.write_str(" && ")?;
            }
            write!(f, "{} {} {}", c.key, c.op.symbol(), c.value)?;
        }
        Ok(())
    }
}

impl Serialize for Predicate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

impl JsonSchema for Predicate {
    fn schema_name() -> std::borrow::Cow<'static, str> {
        "Predicate".into()
    }

    fn json_schema(_: &mut schemars::SchemaGenerator) -> schemars::Schema {
        schemars::json_schema!({
            "type": "string",
            "description": "Conjunction of `key op literal` clauses joined by `&&`; op is one of = != < <= > >=. Empty string means always true."
        })
    }
}
