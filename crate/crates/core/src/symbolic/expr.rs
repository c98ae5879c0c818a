use std::fmt;

use serde::{Deserialize, Serialize};

use super::fit::SymbolicFit;
use super::primitives::Primitive;

/// Closed-form expression over the network inputs `x1, x2, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Expr {
    Const { value: f64 },
    /// Zero-based input index, printed one-based.
    Var { index: usize },
    Add { terms: Vec<Expr> },
    Scale { factor: f64, arg: Box<Expr> },
    Apply { primitive: Primitive, arg: Box<Expr> },
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const { value }
    }

    pub fn var(index: usize) -> Self {
        Expr::Var { index }
    }

    pub fn scale(factor: f64, arg: Expr) -> Self {
        if factor == 1.0 {
            return arg;
        }
        match arg {
            Expr::Const { value } => Expr::constant(factor * value),
            Expr::Scale { factor: inner, arg } => Expr::Scale {
                factor: factor * inner,
                arg,
            },
            arg => Expr::Scale {
                factor,
                arg: Box::new(arg),
            },
        }
    }

    pub fn apply(primitive: Primitive, arg: Expr) -> Self {
        match primitive {
            Primitive::Identity => arg,
            primitive => Expr::Apply {
                primitive,
                arg: Box::new(arg),
            },
        }
    }

    /// Flattened sum; constants are merged into one trailing term and
    /// dropped when zero.
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Self {
        let mut flat = Vec::new();
        let mut constant = 0.0;
        let mut saw_constant = false;
        let mut stack: Vec<Expr> = terms.into_iter().collect();
        stack.reverse();
        while let Some(term) = stack.pop() {
            match term {
                Expr::Const { value } => {
                    constant += value;
                    saw_constant = true;
                }
                Expr::Add { terms } => stack.extend(terms.into_iter().rev()),
                other => flat.push(other),
            }
        }
        if constant != 0.0 || (flat.is_empty() && saw_constant) {
            flat.push(Expr::constant(constant));
        }
        match flat.len() {
            0 => Expr::constant(0.0),
            1 => flat.pop().unwrap(),
            _ => Expr::Add { terms: flat },
        }
    }

    /// `c g(a arg + b) + d`.
    pub fn from_fit(fit: &SymbolicFit, arg: Expr) -> Self {
        if fit.is_constant() {
            return Expr::constant(fit.d);
        }
        let inner = Expr::sum([Expr::scale(fit.a, arg), Expr::constant(fit.b)]);
        Expr::sum([Expr::scale(fit.c, Expr::apply(fit.primitive, inner)), Expr::constant(fit.d)])
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const { value } => *value,
            Expr::Var { index } => x[*index],
            Expr::Add { terms } => terms.iter().map(|t| t.eval(x)).sum(),
            Expr::Scale { factor, arg } => factor * arg.eval(x),
            Expr::Apply { primitive, arg } => primitive.eval(arg.eval(x)),
        }
    }

    /// Largest referenced input index plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const { .. } => 0,
            Expr::Var { index } => index + 1,
            Expr::Add { terms } => terms.iter().map(Expr::arity).max().unwrap_or(0),
            Expr::Scale { arg, .. } | Expr::Apply { arg, .. } => arg.arity(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const { .. } | Expr::Var { .. } => 1,
            Expr::Add { terms } => 1 + terms.iter().map(Expr::node_count).sum::<usize>(),
            Expr::Scale { arg, .. } | Expr::Apply { arg, .. } => 1 + arg.node_count(),
        }
    }
}

fn needs_parens(e: &Expr) -> bool {
    matches!(e, Expr::Add { .. })
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const { value } => write!(f, "{value}"),
            Expr::Var { index } => write!(f, "x{}", index + 1),
            Expr::Add { terms } => {
                for (k, term) in terms.iter().enumerate() {
                    let text = term.to_string();
                    match (k, text.strip_prefix('-')) {
                        (0, _) => f.write_str(&text)?,
                        (_, Some(rest)) => write!(f, " - {rest}")?,
                        (_, None) => write!(f, " + {text}")?,
                    }
                }
                Ok(())
            }
            Expr::Scale { factor, arg } => {
                if needs_parens(arg) {
                    write!(f, "{factor}*({arg})")
                } else {
                    write!(f, "{factor}*{arg}")
                }
            }
            Expr::Apply { primitive, arg } => f.write_str(&primitive.render(&arg.to_string())),
        }
    }
}
