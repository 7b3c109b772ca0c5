//! Synthetic routes: a tree of one-step reactions from a target down to
//! starting materials.
//!
//! Steps are stored in pre-order. A reactant is expanded by the step that
//! immediately follows in the list when that step's product equals it;
//! otherwise it is a leaf. Starting materials are never expanded, so this
//! reading is unambiguous for every route the crate produces.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub product: String,
    pub reactants: Vec<String>,
    pub rule_id: String,
    pub logp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub target: String,
    pub log_prob: f64,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("route has no steps")]
    Empty,
    #[error("first step produces {found}, expected target {target}")]
    WrongRoot { target: String, found: String },
    #[error("{0} steps are not reachable from the target")]
    DanglingSteps(usize),
    #[error("target appears among the leaves")]
    TargetIsLeaf,
}

/// Parsed view of a route: for each step, the step index expanding each of
/// its reactants (or `None` for a leaf), plus the depth of each step.
#[derive(Debug, Clone)]
pub struct RouteTree {
    pub children: Vec<Vec<Option<usize>>>,
    pub depth: Vec<usize>,
}

impl Route {
    pub fn tree(&self) -> Result<RouteTree, RouteError> {
        let first = self.steps.first().ok_or(RouteError::Empty)?;
        if first.product != self.target {
            return Err(RouteError::WrongRoot {
                target: self.target.clone(),
                found: first.product.clone(),
            });
        }
        let n = self.steps.len();
        let mut children = vec![Vec::new(); n];
        let mut depth = vec![0; n];
        let mut next = 1;
        // (step, reactant cursor)
        let mut stack = vec![(0usize, 0usize)];
        while let Some(top) = stack.last_mut() {
            let (s, cursor) = *top;
            if cursor == self.steps[s].reactants.len() {
                stack.pop();
                continue;
            }
            top.1 += 1;
            let reactant = &self.steps[s].reactants[cursor];
            if next < n && &self.steps[next].product == reactant {
                children[s].push(Some(next));
                depth[next] = depth[s] + 1;
                stack.push((next, 0));
                next += 1;
            } else {
                children[s].push(None);
            }
        }
        if next != n {
            return Err(RouteError::DanglingSteps(n - next));
        }
        Ok(RouteTree { children, depth })
    }

    /// Starting materials B.
    pub fn leaves(&self) -> BTreeSet<String> {
        let tree = match self.tree() {
            Ok(t) => t,
            Err(_) => return BTreeSet::new(),
        };
        let mut out = BTreeSet::new();
        for (s, kids) in tree.children.iter().enumerate() {
            for (r, kid) in kids.iter().enumerate() {
                if kid.is_none() {
                    out.insert(self.steps[s].reactants[r].clone());
                }
            }
        }
        out
    }

    /// Intermediates I: every expanded molecule except the target.
    pub fn intermediates(&self) -> BTreeSet<String> {
        self.steps
            .iter()
            .skip(1)
            .map(|s| s.product.clone())
            .filter(|p| p != &self.target)
            .collect()
    }

    pub fn num_reactions(&self) -> usize {
        self.steps.len()
    }

    /// Longest root-to-leaf chain, counted in reactions.
    pub fn depth(&self) -> usize {
        match self.tree() {
            Ok(t) => t.depth.iter().max().map_or(0, |d| d + 1),
            Err(_) => 0,
        }
    }

    pub fn sum_step_logp(&self) -> f64 {
        self.steps.iter().map(|s| s.logp).sum()
    }

    /// Structural key: products, reactants and rules in pre-order, without
    /// scores. Used for deduplication and deterministic tie-breaks.
    pub fn canonical_key(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&s.product);
            out.push('>');
            out.push_str(&s.reactants.join("."));
            out.push('|');
            out.push_str(&s.rule_id);
            out.push(';');
        }
        out
    }

    /// Checks the structural invariants; leaves are not compared against an
    /// inventory here.
    pub fn validate(&self) -> Result<(), RouteError> {
        self.tree()?;
        if self.leaves().contains(&self.target) {
            return Err(RouteError::TargetIsLeaf);
        }
        Ok(())
    }

    /// True when no molecule repeats along any root-to-leaf path.
    pub fn is_acyclic(&self) -> bool {
        let tree = match self.tree() {
            Ok(t) => t,
            Err(_) => return false,
        };
        fn walk(route: &Route, tree: &RouteTree, s: usize, path: &mut Vec<String>) -> bool {
            let step = &route.steps[s];
            if path.contains(&step.product) {
                return false;
            }
            path.push(step.product.clone());
            for (r, kid) in tree.children[s].iter().enumerate() {
                let ok = match kid {
                    Some(k) => walk(route, tree, *k, path),
                    None => !path.contains(&step.reactants[r]),
                };
                if !ok {
                    path.pop();
                    return false;
                }
            }
            path.pop();
            true
        }
        walk(self, &tree, 0, &mut Vec::new())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("routes always serialize")
    }
}
