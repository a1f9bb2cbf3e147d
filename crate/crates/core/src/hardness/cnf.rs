//! CNF formulas with at most three literals per clause, DIMACS I/O, and
//! truth-table model counting.

use std::fmt::{self, Write as _};

use thiserror::Error;

/// Largest variable count accepted by [`CnfFormula::brute_force_count`].
pub const MAX_BRUTE_FORCE_VARS: usize = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CnfError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("variable {var} outside 1..={n_vars}")]
    VariableOutOfRange { var: usize, n_vars: usize },
    #[error("clause {0} is empty")]
    EmptyClause(usize),
    #[error("clause {0} has more than 3 literals")]
    ClauseTooLong(usize),
    #[error("formula needs at least one variable")]
    NoVariables,
    #[error("{0} variables exceed the truth-table limit of {MAX_BRUTE_FORCE_VARS}")]
    TooManyVariables(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    /// 1-based variable index.
    pub var: usize,
    pub positive: bool,
}

impl Literal {
    pub fn pos(var: usize) -> Self {
        Self {
            var,
            positive: true,
        }
    }

    pub fn neg(var: usize) -> Self {
        Self {
            var,
            positive: false,
        }
    }

    /// DIMACS integer form.
    pub fn to_int(self) -> i64 {
        if self.positive {
            self.var as i64
        } else {
            -(self.var as i64)
        }
    }

    /// Truth value under `assignment` (index 0 holds variable 1).
    pub fn eval(self, assignment: &[bool]) -> bool {
        assignment[self.var - 1] == self.positive
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnfFormula {
    n_vars: usize,
    clauses: Vec<Vec<Literal>>,
}

impl CnfFormula {
    pub fn new(n_vars: usize, clauses: Vec<Vec<Literal>>) -> Result<Self, CnfError> {
        if n_vars == 0 {
            return Err(CnfError::NoVariables);
        }
        for (k, c) in clauses.iter().enumerate() {
            if c.is_empty() {
                return Err(CnfError::EmptyClause(k + 1));
            }
            if c.len() > 3 {
                return Err(CnfError::ClauseTooLong(k + 1));
            }
            if let Some(l) = c.iter().find(|l| l.var == 0 || l.var > n_vars) {
                return Err(CnfError::VariableOutOfRange { var: l.var, n_vars });
            }
        }
        Ok(Self { n_vars, clauses })
    }

    /// Parses DIMACS CNF: `c` comment lines, a `p cnf <vars> <clauses>`
    /// header, then zero-terminated clauses (possibly spanning lines).
    pub fn parse_dimacs(text: &str) -> Result<Self, CnfError> {
        let mut header: Option<(usize, usize)> = None;
        let mut clauses = Vec::new();
        let mut current = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            let err = |reason: String| CnfError::Parse {
                line: lineno,
                reason,
            };
            if line.is_empty() || line.starts_with('c') {
                continue;
            }
            if line.starts_with('%') {
                break;
            }
            if let Some(rest) = line.strip_prefix('p') {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if header.is_some() {
                    return Err(err("duplicate header".into()));
                }
                if parts.len() != 3 || parts[0] != "cnf" {
                    return Err(err(format!("bad header {line:?}")));
                }
                let v = parts[1]
                    .parse()
                    .map_err(|_| err(format!("bad variable count {:?}", parts[1])))?;
                let c = parts[2]
                    .parse()
                    .map_err(|_| err(format!("bad clause count {:?}", parts[2])))?;
                header = Some((v, c));
                continue;
            }
            if header.is_none() {
                return Err(err("clause before the header".into()));
            }
            for tok in line.split_whitespace() {
                let x: i64 = tok
                    .parse()
                    .map_err(|_| err(format!("bad literal {tok:?}")))?;
                if x == 0 {
                    clauses.push(std::mem::take(&mut current));
                } else {
                    current.push(Literal {
                        var: x.unsigned_abs() as usize,
                        positive: x > 0,
                    });
                }
            }
        }
        let Some((n_vars, n_clauses)) = header else {
            return Err(CnfError::Parse {
                line: 0,
                reason: "missing \"p cnf\" header".into(),
            });
        };
        if !current.is_empty() {
            clauses.push(current);
        }
        if clauses.len() != n_clauses {
            return Err(CnfError::Parse {
                line: 0,
                reason: format!(
                    "header declares {n_clauses} clauses, found {}",
                    clauses.len()
                ),
            });
        }
        Self::new(n_vars, clauses)
    }

    pub fn to_dimacs(&self) -> String {
        let mut out = format!("p cnf {} {}\n", self.n_vars, self.clauses.len());
        for c in &self.clauses {
            for l in c {
                let _ = write!(out, "{} ", l.to_int());
            }
            out.push_str("0\n");
        }
        out
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn clauses(&self) -> &[Vec<Literal>] {
        &self.clauses
    }

    pub fn n_clauses(&self) -> usize {
        self.clauses.len()
    }

    /// Whether clause `k` (0-based) holds under `assignment`.
    pub fn clause_satisfied(&self, k: usize, assignment: &[bool]) -> bool {
        self.clauses[k].iter().any(|l| l.eval(assignment))
    }

    pub fn satisfied_by(&self, assignment: &[bool]) -> bool {
        (0..self.clauses.len()).all(|k| self.clause_satisfied(k, assignment))
    }

    /// Number of satisfying assignments by enumerating all `2^n`.
    pub fn brute_force_count(&self) -> Result<u64, CnfError> {
        if self.n_vars > MAX_BRUTE_FORCE_VARS {
            return Err(CnfError::TooManyVariables(self.n_vars));
        }
        let mut assignment = vec![false; self.n_vars];
        let mut count = 0;
        for bits in 0u64..(1u64 << self.n_vars) {
            for (i, a) in assignment.iter_mut().enumerate() {
                *a = bits >> i & 1 == 1;
            }
            if self.satisfied_by(&assignment) {
                count += 1;
            }
        }
        Ok(count)
    }
}

impl fmt::Display for CnfFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.clauses.is_empty() {
            return write!(f, "⊤");
        }
        for (k, c) in self.clauses.iter().enumerate() {
            if k > 0 {
                write!(f, " ∧ ")?;
            }
            write!(f, "(")?;
            for (j, l) in c.iter().enumerate() {
                if j > 0 {
                    write!(f, " ∨ ")?;
                }
                write!(f, "{}a{}", if l.positive { "" } else { "¬" }, l.var)?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}
