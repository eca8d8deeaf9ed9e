use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smooth bounded test functions `φ(x, v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TestFunctional {
    /// `Σ_i cos(α x_i) + cos(β v_i)`; id `cos:α,β`.
    Cos { alpha: f64, beta: f64 },
    /// `exp(-|x|² - |v|²)`; id `gauss`.
    Gauss,
    /// `tanh(a Σx + b Σv + c)`; id `tanh:a,b,c`.
    Tanh { a: f64, b: f64, c: f64 },
}

impl TestFunctional {
    pub fn eval(&self, x: &[f64], v: &[f64]) -> f64 {
        match *self {
            TestFunctional::Cos { alpha, beta } => x
                .iter()
                .zip(v)
                .map(|(x, v)| (alpha * x).cos() + (beta * v).cos())
                .sum(),
            TestFunctional::Gauss => {
                let r2: f64 = x.iter().chain(v).map(|c| c * c).sum();
                (-r2).exp()
            }
            TestFunctional::Tanh { a, b, c } => {
                let sx: f64 = x.iter().sum();
                let sv: f64 = v.iter().sum();
                (a * sx + b * sv + c).tanh()
            }
        }
    }

    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TestFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunctional::Cos { alpha, beta } => write!(f, "cos:{alpha},{beta}"),
            TestFunctional::Gauss => write!(f, "gauss"),
            TestFunctional::Tanh { a, b, c } => write!(f, "tanh:{a},{b},{c}"),
        }
    }
}

impl std::str::FromStr for TestFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.trim().split_once(':') {
            Some((n, a)) => (n, a),
            None => (s.trim(), ""),
        };
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad number {a:?} in functional {s:?}")))
                })
                .collect::<Result<_>>()?
        };
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("functional {s:?} has non-finite parameters")));
        }
        match (name, nums.as_slice()) {
            ("cos", []) => Ok(TestFunctional::Cos { alpha: 1.0, beta: 1.0 }),
            ("cos", [a, b]) => Ok(TestFunctional::Cos { alpha: *a, beta: *b }),
            ("gauss", []) => Ok(TestFunctional::Gauss),
            ("tanh", [a, b, c]) => Ok(TestFunctional::Tanh { a: *a, b: *b, c: *c }),
            _ => Err(Error::Config(format!(
                "unknown functional {s:?}; expected cos:α,β, gauss or tanh:a,b,c"
            ))),
        }
    }
}

impl TryFrom<String> for TestFunctional {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TestFunctional> for String {
    fn from(f: TestFunctional) -> Self {
        f.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_eval() {
        let c: TestFunctional = "cos:1,2".parse().unwrap();
        assert_eq!(c.eval(&[0.0], &[0.0]), 2.0);
        assert_eq!(c.id(), "cos:1,2");
        let g: TestFunctional = "gauss".parse().unwrap();
        assert!((g.eval(&[1.0], &[0.0]) - (-1.0f64).exp()).abs() < 1e-15);
        let t: TestFunctional = "tanh:1,0.5,0".parse().unwrap();
        assert_eq!(t.eval(&[0.0], &[0.0]), 0.0);
        assert_eq!(t.id().parse::<TestFunctional>().unwrap(), t);
        assert!("tanh:1".parse::<TestFunctional>().is_err());
        assert!("sin".parse::<TestFunctional>().is_err());
    }
}
