//! The satisfiability specification language: strict linear inequalities
//! over graph outputs, combined into a conjunction of disjunctive clauses
//! (CNF), plus the on-disk spec format.
//!
//! Atoms are normalized to greater-sense (`coeffsᵀy + bias > 0`); a clause is
//! satisfied at a point when any atom margin is positive, and the whole
//! specification when every clause is. Nonlinear predicates must be folded
//! into the graph as extra output coordinates; atoms stay linear so the
//! bounding objective stays linear.

use crate::graph::Graph;
use crate::interval::BoxDomain;
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("atom has all-zero coefficients")]
    ZeroAtom,
    #[error("clause has no atoms")]
    EmptyClause,
    #[error("specification has no clauses")]
    EmptyCnf,
    #[error("atom has {got} coefficients, graph output has dimension {expected}")]
    AtomDim { expected: usize, got: usize },
    #[error("spec box has dimension {got}, graph input has dimension {expected}")]
    BoxDim { expected: usize, got: usize },
    #[error("point lies outside the specification's input box")]
    OutOfBox,
    #[error("membership bounds have mismatched lengths {lower} vs {upper}")]
    MembershipShape { lower: usize, upper: usize },
    #[error("spec file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("spec file parse error{}: {message}", location.as_deref().map(|l| format!(" at {l}")).unwrap_or_default())]
    Parse { message: String, location: Option<String> },
    #[error("unsupported format_version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error(transparent)]
    Box(#[from] crate::interval::BoxError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// The inequality direction of an atom as written; storage normalizes to
/// greater-sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Greater,
    Less,
}

/// One strict linear inequality `coeffsᵀy + bias > 0` over the graph output.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub coeffs: Array1<f64>,
    pub bias: f64,
}

impl Atom {
    /// Normalize: a less-sense atom `cᵀy + b < 0` becomes `(-c)ᵀy - b > 0`.
    pub fn new(coeffs: Array1<f64>, bias: f64, sense: Sense) -> Result<Atom, SpecError> {
        if coeffs.iter().all(|&c| c == 0.0) {
            return Err(SpecError::ZeroAtom);
        }
        Ok(match sense {
            Sense::Greater => Atom { coeffs, bias },
            Sense::Less => Atom { coeffs: -coeffs, bias: -bias },
        })
    }

    pub fn greater(coeffs: Array1<f64>, bias: f64) -> Result<Atom, SpecError> {
        Atom::new(coeffs, bias, Sense::Greater)
    }

    pub fn margin(&self, y: &Array1<f64>) -> f64 {
        self.coeffs.dot(y) + self.bias
    }
}

/// A disjunction of atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    atoms: Vec<Atom>,
}

impl Clause {
    /// Deduplicates identical atoms within the clause.
    pub fn new(atoms: Vec<Atom>) -> Result<Clause, SpecError> {
        if atoms.is_empty() {
            return Err(SpecError::EmptyClause);
        }
        let mut unique: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            if !unique.contains(&a) {
                unique.push(a);
            }
        }
        Ok(Clause { atoms: unique })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Max over atom margins; the clause is satisfied at `y` iff positive.
    pub fn margin(&self, y: &Array1<f64>) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.margin(y))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Max over atom margins of one clause.
pub fn clause_margin(clause: &Clause, y: &Array1<f64>) -> f64 {
    clause.margin(y)
}

/// A conjunction of clauses over a box input domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecCnf {
    pub clauses: Vec<Clause>,
    pub input_box: BoxDomain,
}

impl SpecCnf {
    pub fn new(clauses: Vec<Clause>, input_box: BoxDomain) -> Result<SpecCnf, SpecError> {
        if clauses.is_empty() {
            return Err(SpecError::EmptyCnf);
        }
        Ok(SpecCnf { clauses, input_box })
    }

    /// Check atom and box dimensions against a graph.
    pub fn check_dims(&self, graph: &Graph) -> Result<(), SpecError> {
        if self.input_box.dim() != graph.input_dim() {
            return Err(SpecError::BoxDim {
                expected: graph.input_dim(),
                got: self.input_box.dim(),
            });
        }
        for clause in &self.clauses {
            for atom in clause.atoms() {
                if atom.coeffs.len() != graph.output_dim() {
                    return Err(SpecError::AtomDim {
                        expected: graph.output_dim(),
                        got: atom.coeffs.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// All clause margins at an output vector.
    pub fn margins(&self, y: &Array1<f64>) -> Vec<f64> {
        self.clauses.iter().map(|c| c.margin(y)).collect()
    }
}

/// Outcome of an exact pointwise check.
#[derive(Debug, Clone, PartialEq)]
pub enum PointCheck {
    Satisfied,
    /// The lowest-index violated clause and its (non-positive) margin.
    Violated { clause: usize, margin: f64 },
}

/// Exact evaluation of the specification at a point inside the input box.
pub fn check_point(spec: &SpecCnf, graph: &Graph, x: &Array1<f64>) -> Result<PointCheck, SpecError> {
    if !spec.input_box.contains(x) {
        return Err(SpecError::OutOfBox);
    }
    let y = graph.evaluate(x)?;
    for (i, clause) in spec.clauses.iter().enumerate() {
        let m = clause.margin(&y);
        if m <= 0.0 {
            return Ok(PointCheck::Violated { clause: i, margin: m });
        }
    }
    Ok(PointCheck::Satisfied)
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecFile {
    pub format_version: u32,
    #[serde(rename = "box")]
    pub input_box: BoxDecl,
    pub clauses: Vec<ClauseDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxDecl {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// A clause declaration: a disjunction of atoms, optionally distributed over
/// the faces of a box-membership predicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClauseDecl {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<AtomDecl>,
    /// Membership `y[rows] ∈ [lower, upper]` is a conjunction of 2n face
    /// inequalities; it expands into 2n clauses, each pairing one face atom
    /// with this clause's other atoms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub membership: Option<MembershipDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomDecl {
    pub coeffs: Vec<f64>,
    pub bias: f64,
    pub sense: Sense,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipDecl {
    /// Output coordinates the membership constrains, in order.
    pub rows: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SpecFile {
    pub fn parse(text: &str) -> Result<SpecFile, SpecError> {
        let file: SpecFile = toml::from_str(text).map_err(|e| SpecError::Parse {
            message: e.message().to_string(),
            location: e.span().map(|s| format!("byte {}..{}", s.start, s.end)),
        })?;
        if file.format_version != FORMAT_VERSION {
            return Err(SpecError::VersionMismatch {
                found: file.format_version,
                supported: FORMAT_VERSION,
            });
        }
        Ok(file)
    }

    /// Expand declarations (membership faces included) into a normalized CNF.
    ///
    /// `output_dim` sizes the face atoms' coefficient vectors.
    pub fn into_cnf(self, output_dim: usize) -> Result<SpecCnf, SpecError> {
        let input_box =
            BoxDomain::from_slices(&self.input_box.lower, &self.input_box.upper)?;
        let mut clauses = Vec::new();
        for decl in self.clauses {
            let base: Vec<Atom> = decl
                .atoms
                .iter()
                .map(|a| Atom::new(Array1::from(a.coeffs.clone()), a.bias, a.sense))
                .collect::<Result<_, _>>()?;
            match decl.membership {
                None => clauses.push(Clause::new(base)?),
                Some(m) => {
                    if m.lower.len() != m.upper.len() || m.lower.len() != m.rows.len() {
                        return Err(SpecError::MembershipShape {
                            lower: m.lower.len(),
                            upper: m.upper.len(),
                        });
                    }
                    for (k, &row) in m.rows.iter().enumerate() {
                        for (face_coeff, face_bias) in
                            [(-1.0, m.upper[k]), (1.0, -m.lower[k])]
                        {
                            let mut coeffs = Array1::zeros(output_dim);
                            coeffs[row] = face_coeff;
                            let mut atoms = base.clone();
                            atoms.push(Atom::greater(coeffs, face_bias)?);
                            clauses.push(Clause::new(atoms)?);
                        }
                    }
                }
            }
        }
        SpecCnf::new(clauses, input_box)
    }

    pub fn from_cnf(spec: &SpecCnf) -> SpecFile {
        SpecFile {
            format_version: FORMAT_VERSION,
            input_box: BoxDecl {
                lower: spec.input_box.lower().to_vec(),
                upper: spec.input_box.upper().to_vec(),
            },
            clauses: spec
                .clauses
                .iter()
                .map(|c| ClauseDecl {
                    atoms: c
                        .atoms()
                        .iter()
                        .map(|a| AtomDecl {
                            coeffs: a.coeffs.to_vec(),
                            bias: a.bias,
                            sense: Sense::Greater,
                        })
                        .collect(),
                    membership: None,
                })
                .collect(),
        }
    }
}

/// Load and normalize a spec file. Face atoms of membership predicates are
/// sized against `output_dim`.
pub fn parse_spec(path: impl AsRef<Path>, output_dim: usize) -> Result<SpecCnf, SpecError> {
    let text = std::fs::read_to_string(path)?;
    SpecFile::parse(&text)?.into_cnf(output_dim)
}

pub fn save_spec(spec: &SpecCnf, path: impl AsRef<Path>) -> Result<(), SpecError> {
    let text = toml::to_string_pretty(&SpecFile::from_cnf(spec)).map_err(|e| SpecError::Parse {
        message: format!("serialize: {e}"),
        location: None,
    })?;
    std::fs::write(path, text)?;
    Ok(())
}
