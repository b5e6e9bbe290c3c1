//! Declarative model description and assembly into a penalized problem.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::design::{
    build_factor_block, build_ordinal_block, build_parametric_block, build_pspline_block,
    levels_from_values, Constraint, ContinuousTermSpec, OrdinalTermSpec,
};
use crate::error::{GamError, Result};
use crate::family::Family;
use crate::fitter::{PenalizedProblem, Term};

fn default_q() -> usize {
    ContinuousTermSpec::default().q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum TermRole {
    Parametric,
    Ordinal {
        k: usize,
        m: usize,
        #[serde(default)]
        constraint: Constraint,
    },
    Factor {
        k: usize,
    },
    Smooth {
        #[serde(default = "default_q")]
        q: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub column: String,
    #[serde(flatten)]
    pub role: TermRole,
}

impl TermSpec {
    pub fn parametric(column: &str) -> Self {
        Self {
            column: column.into(),
            role: TermRole::Parametric,
        }
    }

    pub fn ordinal(column: &str, k: usize, m: usize) -> Self {
        Self {
            column: column.into(),
            role: TermRole::Ordinal {
                k,
                m,
                constraint: Constraint::SumToZero,
            },
        }
    }

    pub fn factor(column: &str, k: usize) -> Self {
        Self {
            column: column.into(),
            role: TermRole::Factor { k },
        }
    }

    pub fn smooth(column: &str) -> Self {
        Self {
            column: column.into(),
            role: TermRole::Smooth { q: default_q() },
        }
    }

    /// Label used in summaries, e.g. `s(x)` or `factor(x)`.
    pub fn label(&self) -> String {
        match self.role {
            TermRole::Parametric => self.column.clone(),
            TermRole::Factor { .. } => format!("factor({})", self.column),
            TermRole::Ordinal { .. } | TermRole::Smooth { .. } => format!("s({})", self.column),
        }
    }

    fn formula_part(&self) -> String {
        match &self.role {
            TermRole::Parametric => self.column.clone(),
            TermRole::Factor { .. } => format!("factor({})", self.column),
            TermRole::Ordinal { m, .. } => {
                format!("s({}, bs = \"ordinal\", m = {})", self.column, m)
            }
            TermRole::Smooth { q } => format!("s({}, bs = \"ps\", k = {})", self.column, q),
        }
    }
}

/// Response, family, and terms of a GAM with ordinal and continuous smooths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub family: Family,
    pub terms: Vec<TermSpec>,
}

impl ModelSpec {
    pub fn new(response: &str, family: Family, terms: Vec<TermSpec>) -> Self {
        Self {
            response: response.into(),
            family,
            terms,
        }
    }

    pub fn formula(&self) -> String {
        let rhs: Vec<String> = self.terms.iter().map(TermSpec::formula_part).collect();
        if rhs.is_empty() {
            format!("{} ~ 1", self.response)
        } else {
            format!("{} ~ {}", self.response, rhs.join(" + "))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.terms {
            if !seen.insert(t.label()) {
                return Err(GamError::Spec(format!("duplicate term {}", t.label())));
            }
            if t.column == self.response {
                return Err(GamError::Spec(format!(
                    "response column '{}' also used as a term",
                    t.column
                )));
            }
        }
        Ok(())
    }

    /// Assembles the design, penalties, and response from `data`.
    pub fn build(&self, data: &Dataset) -> Result<PenalizedProblem> {
        self.validate()?;
        let y = data
            .column(&self.response)
            .ok_or_else(|| GamError::UnknownColumn(self.response.clone()))?;
        let mut terms = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let x = data
                .column(&t.column)
                .ok_or_else(|| GamError::UnknownColumn(t.column.clone()))?;
            let block = match &t.role {
                TermRole::Parametric => build_parametric_block(x),
                TermRole::Ordinal { k, m, constraint } => {
                    let spec = OrdinalTermSpec::new(*k, *m)?.with_constraint(*constraint);
                    build_ordinal_block(&levels_from_values(x, *k)?, spec)?
                }
                TermRole::Factor { k } => build_factor_block(&levels_from_values(x, *k)?, *k)?,
                TermRole::Smooth { q } => {
                    build_pspline_block(&t.column, x, ContinuousTermSpec::with_q(*q))?
                }
            };
            terms.push(Term::new(t.label(), t.column.clone(), block));
        }
        PenalizedProblem::new(y.to_vec(), self.family, terms)
    }
}
