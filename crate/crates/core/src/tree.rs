//! Finite ordered rooted trees, their nested-array JSON form, and the AHU
//! canonical string used for isomorphism tests.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered rooted tree; a node with no children is a leaf. JSON form is a
/// nested array: `[]` is a single node, `[[],[]]` a root with two leaves.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RootedTree {
    pub children: Vec<RootedTree>,
}

impl RootedTree {
    pub fn leaf() -> Self {
        Self::default()
    }

    pub fn with_children(children: Vec<RootedTree>) -> Self {
        Self { children }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(RootedTree::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        self.children.iter().map(|c| c.depth() + 1).max().unwrap_or(0)
    }

    /// Parses the nested-array form, e.g. `"[[],[[]]]"`.
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_str(s.trim()).map_err(|e| Error::Parse(format!("tree `{}`: {e}", s.trim())))
    }

    /// AHU canonical form: a leaf is `()`, an inner node wraps the sorted
    /// encodings of its children.
    pub fn canonical(&self) -> String {
        let mut parts: Vec<String> = self.children.iter().map(RootedTree::canonical).collect();
        parts.sort_unstable();
        let mut s = String::with_capacity(2 + parts.iter().map(String::len).sum::<usize>());
        s.push('(');
        for p in parts {
            s.push_str(&p);
        }
        s.push(')');
        s
    }

    /// Same tree with children sorted by canonical form, so isomorphic trees
    /// become equal.
    pub fn normalized(&self) -> Self {
        let mut kids: Vec<(String, RootedTree)> =
            self.children.iter().map(|c| (c.canonical(), c.normalized())).collect();
        kids.sort_by(|a, b| a.0.cmp(&b.0));
        RootedTree::with_children(kids.into_iter().map(|k| k.1).collect())
    }
}

impl fmt::Display for RootedTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, c) in self.children.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("]")
    }
}

pub fn canonical_tree(t: &RootedTree) -> String {
    t.canonical()
}

pub fn trees_isomorphic(a: &RootedTree, b: &RootedTree) -> bool {
    a.canonical() == b.canonical()
}

/// Every ordered tree with exactly `nodes` nodes.
pub fn ordered_trees(nodes: usize) -> Vec<RootedTree> {
    if nodes == 0 {
        return Vec::new();
    }
    forests(nodes - 1).into_iter().map(RootedTree::with_children).collect()
}

/// Every ordered forest with exactly `nodes` nodes.
fn forests(nodes: usize) -> Vec<Vec<RootedTree>> {
    if nodes == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 1..=nodes {
        for head in ordered_trees(first) {
            for tail in forests(nodes - first) {
                let mut f = vec![head.clone()];
                f.extend(tail);
                out.push(f);
            }
        }
    }
    out
}

/// One representative per isomorphism class of trees with `nodes` nodes.
pub fn unordered_trees(nodes: usize) -> Vec<RootedTree> {
    let mut seen = std::collections::BTreeMap::new();
    for t in ordered_trees(nodes) {
        seen.entry(t.canonical()).or_insert_with(|| t.normalized());
    }
    seen.into_values().collect()
}
