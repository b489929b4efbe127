//! Node ordering for the interaction-augmented model.
//!
//! Nodes are laid out as `[X_1..X_p, A, XA_1..XA_p, M_1..M_s, Y]`, giving a
//! total of `w = 2p + s + 2` nodes.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of a node in the block layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRole {
    /// Pre-treatment covariate / moderator `X_k`.
    Covariate(usize),
    Treatment,
    /// Product node `X_k * A`.
    Interaction(usize),
    Mediator(usize),
    Outcome,
}

impl NodeRole {
    /// Covariate and interaction nodes never have parents.
    pub fn is_deterministic_root(self) -> bool {
        matches!(self, NodeRole::Covariate(_) | NodeRole::Interaction(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockLayout {
    p: usize,
    s: usize,
}

impl BlockLayout {
    pub fn new(p: usize, s: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Config("layout needs at least one covariate (p >= 1)".into()));
        }
        Ok(Self { p, s })
    }

    /// Infers the layout from a total node count and covariate count.
    pub fn from_width(w: usize, p: usize) -> Result<Self> {
        if w < 2 * p + 2 {
            return Err(Error::Dimension(format!("width {w} too small for p = {p}")));
        }
        Self::new(p, w - 2 * p - 2)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// Total node count `2p + s + 2`.
    pub fn width(&self) -> usize {
        2 * self.p + self.s + 2
    }

    pub fn covariates(&self) -> Range<usize> {
        0..self.p
    }

    pub fn treatment(&self) -> usize {
        self.p
    }

    pub fn interactions(&self) -> Range<usize> {
        self.p + 1..2 * self.p + 1
    }

    pub fn mediators(&self) -> Range<usize> {
        2 * self.p + 1..2 * self.p + 1 + self.s
    }

    pub fn outcome(&self) -> usize {
        self.width() - 1
    }

    pub fn covariate(&self, k: usize) -> usize {
        debug_assert!(k < self.p);
        k
    }

    pub fn interaction(&self, k: usize) -> usize {
        debug_assert!(k < self.p);
        self.p + 1 + k
    }

    pub fn mediator(&self, i: usize) -> usize {
        debug_assert!(i < self.s);
        2 * self.p + 1 + i
    }

    pub fn role(&self, node: usize) -> NodeRole {
        let p = self.p;
        assert!(node < self.width(), "node {node} outside layout");
        if node < p {
            NodeRole::Covariate(node)
        } else if node == p {
            NodeRole::Treatment
        } else if node < 2 * p + 1 {
            NodeRole::Interaction(node - p - 1)
        } else if node < 2 * p + 1 + self.s {
            NodeRole::Mediator(node - 2 * p - 1)
        } else {
            NodeRole::Outcome
        }
    }

    /// Whether the edge `from -> to` is allowed by the structural constraints.
    ///
    /// Covariates and interactions have no parents, the treatment's only
    /// parents are covariates, the outcome has no children, and self loops
    /// are excluded.
    pub fn edge_permitted(&self, from: usize, to: usize) -> bool {
        if from == to {
            return false;
        }
        match (self.role(from), self.role(to)) {
            (_, NodeRole::Covariate(_)) | (_, NodeRole::Interaction(_)) => false,
            (NodeRole::Outcome, _) => false,
            (NodeRole::Covariate(_), NodeRole::Treatment) => true,
            (_, NodeRole::Treatment) => false,
            _ => true,
        }
    }

    /// Node names: `X1..Xp, A, XA1..XAp, M1..Ms, Y`.
    pub fn node_names(&self) -> Vec<String> {
        (0..self.width()).map(|i| self.role(i).to_string()).collect()
    }

    /// Recovers the layout from role-tagged column names, which must appear
    /// in canonical order.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let p = names
            .iter()
            .filter(|n| parse_role(n.as_ref()).is_some_and(|r| matches!(r, NodeRole::Covariate(_))))
            .count();
        let layout = Self::from_width(names.len(), p)?;
        for (i, name) in names.iter().enumerate() {
            let expected = layout.role(i);
            match parse_role(name.as_ref()) {
                Some(r) if r == expected => {}
                _ => {
                    return Err(Error::Parse(format!(
                        "column {} is named {:?}, expected {}",
                        i + 1,
                        name.as_ref(),
                        expected
                    )))
                }
            }
        }
        Ok(layout)
    }
}

fn parse_role(name: &str) -> Option<NodeRole> {
    let name = name.trim();
    let index = |rest: &str| rest.parse::<usize>().ok().filter(|&k| k >= 1).map(|k| k - 1);
    if name == "A" {
        Some(NodeRole::Treatment)
    } else if name == "Y" {
        Some(NodeRole::Outcome)
    } else if let Some(rest) = name.strip_prefix("XA") {
        index(rest).map(NodeRole::Interaction)
    } else if let Some(rest) = name.strip_prefix('X') {
        index(rest).map(NodeRole::Covariate)
    } else if let Some(rest) = name.strip_prefix('M') {
        index(rest).map(NodeRole::Mediator)
    } else {
        None
    }
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRole::Covariate(k) => write!(f, "X{}", k + 1),
            NodeRole::Treatment => f.write_str("A"),
            NodeRole::Interaction(k) => write!(f, "XA{}", k + 1),
            NodeRole::Mediator(i) => write!(f, "M{}", i + 1),
            NodeRole::Outcome => f.write_str("Y"),
        }
    }
}
