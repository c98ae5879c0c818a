use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bessel::bessel_j0;
use crate::error::{KanError, Result};

/// Offset inside `log(|u| + LOG_EPS)`.
pub const LOG_EPS: f64 = 1e-4;
/// `1/u` is evaluated as `1/(sign(u) max(|u|, INV_FLOOR))`.
pub const INV_FLOOR: f64 = 1e-3;
const EXP_CEIL: f64 = 50.0;

/// Univariate building block `g` of a snapped edge `c g(a x + b) + d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Primitive {
    #[serde(rename = "x")]
    Identity,
    #[serde(rename = "x^2")]
    Square,
    #[serde(rename = "x^3")]
    Cube,
    #[serde(rename = "x^4")]
    Quartic,
    #[serde(rename = "exp")]
    Exp,
    #[serde(rename = "sin")]
    Sin,
    #[serde(rename = "tanh")]
    Tanh,
    #[serde(rename = "log")]
    Log,
    #[serde(rename = "sqrt")]
    Sqrt,
    #[serde(rename = "1/x")]
    Inverse,
    #[serde(rename = "J0")]
    BesselJ0,
}

impl Primitive {
    pub const ALL: [Primitive; 11] = [
        Primitive::Identity,
        Primitive::Square,
        Primitive::Cube,
        Primitive::Quartic,
        Primitive::Exp,
        Primitive::Sin,
        Primitive::Tanh,
        Primitive::Log,
        Primitive::Sqrt,
        Primitive::Inverse,
        Primitive::BesselJ0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Identity => "x",
            Primitive::Square => "x^2",
            Primitive::Cube => "x^3",
            Primitive::Quartic => "x^4",
            Primitive::Exp => "exp",
            Primitive::Sin => "sin",
            Primitive::Tanh => "tanh",
            Primitive::Log => "log",
            Primitive::Sqrt => "sqrt",
            Primitive::Inverse => "1/x",
            Primitive::BesselJ0 => "J0",
        }
    }

    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Primitive::Identity => u,
            Primitive::Square => u * u,
            Primitive::Cube => u * u * u,
            Primitive::Quartic => {
                let s = u * u;
                s * s
            }
            Primitive::Exp => u.min(EXP_CEIL).exp(),
            Primitive::Sin => u.sin(),
            Primitive::Tanh => u.tanh(),
            Primitive::Log => (u.abs() + LOG_EPS).ln(),
            Primitive::Sqrt => u.abs().sqrt(),
            Primitive::Inverse => {
                let m = u.abs().max(INV_FLOOR);
                if u < 0.0 {
                    -1.0 / m
                } else {
                    1.0 / m
                }
            }
            Primitive::BesselJ0 => bessel_j0(u),
        }
    }

    /// Infix rendering of `g(arg)`.
    pub fn render(self, arg: &str) -> String {
        match self {
            Primitive::Identity => arg.to_string(),
            Primitive::Square => format!("({arg})^2"),
            Primitive::Cube => format!("({arg})^3"),
            Primitive::Quartic => format!("({arg})^4"),
            Primitive::Exp => format!("exp({arg})"),
            Primitive::Sin => format!("sin({arg})"),
            Primitive::Tanh => format!("tanh({arg})"),
            Primitive::Log => format!("log(|{arg}| + {LOG_EPS:e})"),
            Primitive::Sqrt => format!("sqrt(|{arg}|)"),
            Primitive::Inverse => format!("1/({arg})"),
            Primitive::BesselJ0 => format!("J0({arg})"),
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = KanError;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| KanError::InvalidArgument(format!("unknown primitive `{s}`")))
    }
}

/// Ordered set of primitives tried by the fitter. Ties in fit quality
/// favour the earlier entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveLibrary {
    primitives: Vec<Primitive>,
}

impl Default for PrimitiveLibrary {
    fn default() -> Self {
        Self {
            primitives: Primitive::ALL.to_vec(),
        }
    }
}

impl PrimitiveLibrary {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self> {
        if primitives.is_empty() {
            return Err(KanError::InvalidArgument("primitive library is empty".into()));
        }
        Ok(Self { primitives })
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }
}
