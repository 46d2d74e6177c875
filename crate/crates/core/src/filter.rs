//! Conjunctive attribute filters used to define slices.
//!
//! Expression syntax is a comma-separated list of clauses, all of which must
//! hold:
//!
//! * `name=value`, `name!=value`: equality against the attribute's type
//! * `name<x`, `name<=x`, `name>x`, `name>=x`: numeric range
//! * `name`: boolean flag set to `true`
//! * `!name`: flag absent or `false`
//!
//! The empty expression matches every item.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{AttrValue, Attributes};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Clause {
    Equals { name: String, value: String, negate: bool },
    Compare { name: String, op: CmpOp, bound: f64 },
    Flag { name: String, negate: bool },
}

impl Clause {
    fn matches(&self, attrs: &Attributes) -> bool {
        match self {
            Clause::Equals {
                name,
                value,
                negate,
            } => {
                let eq = attrs.get(name).is_some_and(|a| value_equals(a, value));
                eq != *negate
            }
            Clause::Compare { name, op, bound } => attrs
                .get(name)
                .and_then(AttrValue::as_f64)
                .is_some_and(|v| op.holds(v, *bound)),
            Clause::Flag { name, negate } => {
                let set = matches!(attrs.get(name), Some(AttrValue::Bool(true)));
                set != *negate
            }
        }
    }
}

fn value_equals(attr: &AttrValue, text: &str) -> bool {
    match attr {
        AttrValue::Str(s) => s == text,
        AttrValue::Num(n) => text.parse::<f64>().is_ok_and(|v| v == *n),
        AttrValue::Bool(b) => text.parse::<bool>().is_ok_and(|v| v == *b),
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clause::Equals {
                name,
                value,
                negate,
            } => write!(f, "{name}{}{value}", if *negate { "!=" } else { "=" }),
            Clause::Compare { name, op, bound } => write!(f, "{name}{}{bound}", op.symbol()),
            Clause::Flag { name, negate } => write!(f, "{}{name}", if *negate { "!" } else { "" }),
        }
    }
}

/// A conjunction of attribute predicates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Filter {
    clauses: Vec<Clause>,
}

impl Filter {
    /// The filter that matches everything.
    pub fn all() -> Self {
        Self::default()
    }

    pub fn parse(expr: &str) -> Result<Self> {
        let invalid = |reason: &str| Error::InvalidFilter {
            expr: expr.to_owned(),
            reason: reason.to_owned(),
        };
        let mut clauses = Vec::new();
        for raw in expr.split(',') {
            let clause = raw.trim();
            if clause.is_empty() {
                continue;
            }
            clauses.push(parse_clause(clause).map_err(|r| invalid(&r))?);
        }
        Ok(Self { clauses })
    }

    pub fn is_trivial(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn matches(&self, attrs: &Attributes) -> bool {
        self.clauses.iter().all(|c| c.matches(attrs))
    }
}

fn parse_clause(clause: &str) -> std::result::Result<Clause, String> {
    // Longest operators first so `<=` is not read as `<`.
    for (sym, op) in [
        ("<=", Some(CmpOp::Le)),
        (">=", Some(CmpOp::Ge)),
        ("!=", None),
        ("<", Some(CmpOp::Lt)),
        (">", Some(CmpOp::Gt)),
        ("=", None),
    ] {
        if let Some(pos) = clause.find(sym) {
            let name = clause[..pos].trim();
            let value = clause[pos + sym.len()..].trim();
            if name.is_empty() {
                return Err(format!("clause {clause:?} has no attribute name"));
            }
            return Ok(match op {
                Some(op) => Clause::Compare {
                    name: name.to_owned(),
                    op,
                    bound: value
                        .parse()
                        .map_err(|_| format!("{value:?} is not a number"))?,
                },
                None => Clause::Equals {
                    name: name.to_owned(),
                    value: value.to_owned(),
                    negate: sym == "!=",
                },
            });
        }
    }
    let (name, negate) = match clause.strip_prefix('!') {
        Some(rest) => (rest.trim(), true),
        None => (clause, false),
    };
    if name.is_empty() {
        return Err("empty flag name".into());
    }
    Ok(Clause::Flag {
        name: name.to_owned(),
        negate,
    })
}

impl FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.clauses.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}
