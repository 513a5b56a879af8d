//! Intention forest: a set of rooted trees of user intents, at most `h_max`
//! levels deep, where every non-root node has exactly one parent. Levels are
//! 1-based from the roots.

use std::collections::BTreeMap;

use crate::io::IntentionRecord;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct IntentionNode {
    pub id: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub level: usize,
    /// Root index identifying which tree this node belongs to.
    pub tree: usize,
}

#[derive(Clone, Debug)]
pub struct IntentionForest {
    nodes: Vec<IntentionNode>,
    index: BTreeMap<String, usize>,
    roots: Vec<usize>,
    max_level: usize,
    by_tree_level: BTreeMap<(usize, usize), Vec<usize>>,
}

impl IntentionForest {
    pub fn nodes(&self) -> &[IntentionNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &IntentionNode {
        &self.nodes[i]
    }

    pub fn lookup(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    /// Nodes of one tree at one level, in id order.
    pub fn at_level(&self, tree: usize, level: usize) -> &[usize] {
        self.by_tree_level.get(&(tree, level)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All nodes at a level outside the given tree, in (tree, id) order.
    pub fn at_level_other_trees(&self, tree: usize, level: usize) -> Vec<usize> {
        self.by_tree_level
            .iter()
            .filter(|((t, l), _)| *t != tree && *l == level)
            .flat_map(|(_, v)| v.iter().copied())
            .collect()
    }

    /// The path [intention, parent, grandparent, ..., root].
    pub fn ancestors(&self, id: &str) -> Result<Vec<usize>> {
        let mut i = self
            .lookup(id)
            .ok_or_else(|| Error::Forest(format!("unknown intention {id}")))?;
        let mut path = vec![i];
        while let Some(p) = self.nodes[i].parent {
            path.push(p);
            i = p;
        }
        Ok(path)
    }

    /// Every node strictly below `i`.
    pub fn descendants(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = self.nodes[i].children.clone();
        while let Some(c) = stack.pop() {
            out.push(c);
            stack.extend(self.nodes[c].children.iter().copied());
        }
        out.sort_unstable();
        out
    }
}

/// Build and validate a forest from raw parent links. Checks single-parent
/// structure, acyclicity, and the level budget; recomputes levels from the
/// roots.
pub fn validate_forest(records: &[IntentionRecord], h_max: usize) -> Result<IntentionForest> {
    if h_max == 0 {
        return Err(Error::Forest("level budget must be at least 1".to_string()));
    }
    let mut index = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if index.insert(r.id.clone(), i).is_some() {
            return Err(Error::Forest(format!("duplicate intention id {}", r.id)));
        }
    }

    let mut nodes: Vec<IntentionNode> = Vec::with_capacity(records.len());
    for r in records {
        let parent = match &r.parent_id {
            None => None,
            Some(p) if p == &r.id => {
                return Err(Error::Forest(format!("cycle: {} is its own parent", r.id)))
            }
            Some(p) => Some(
                *index
                    .get(p)
                    .ok_or_else(|| Error::Forest(format!("{} references unknown parent {p}", r.id)))?,
            ),
        };
        nodes.push(IntentionNode {
            id: r.id.clone(),
            parent,
            children: Vec::new(),
            level: 0,
            tree: 0,
        });
    }

    for i in 0..nodes.len() {
        if let Some(p) = nodes[i].parent {
            nodes[p].children.push(i);
        }
    }
    // Deterministic traversal and aggregation order.
    for n in &mut nodes {
        n.children.sort_by(|&a, &b| records[a].id.cmp(&records[b].id));
    }

    let mut roots: Vec<usize> =
        (0..nodes.len()).filter(|&i| nodes[i].parent.is_none()).collect();
    roots.sort_by(|&a, &b| nodes[a].id.cmp(&nodes[b].id));

    let mut max_level = 0;
    let mut visited = vec![false; nodes.len()];
    for &root in &roots {
        let mut stack = vec![(root, 1usize)];
        while let Some((i, level)) = stack.pop() {
            if visited[i] {
                return Err(Error::Forest(format!("{} has multiple parents", nodes[i].id)));
            }
            visited[i] = true;
            if level > h_max {
                return Err(Error::Forest(format!(
                    "{} sits at level {level}, deeper than the {h_max}-level budget",
                    nodes[i].id
                )));
            }
            nodes[i].level = level;
            nodes[i].tree = root;
            max_level = max_level.max(level);
            for &c in &nodes[i].children {
                stack.push((c, level + 1));
            }
        }
    }
    if let Some(i) = visited.iter().position(|v| !v) {
        return Err(Error::Forest(format!(
            "cycle: {} is unreachable from any root",
            nodes[i].id
        )));
    }

    let mut by_tree_level: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        by_tree_level.entry((n.tree, n.level)).or_default().push(i);
    }
    for v in by_tree_level.values_mut() {
        v.sort_by(|&a, &b| nodes[a].id.cmp(&nodes[b].id));
    }

    Ok(IntentionForest { nodes, index, roots, max_level, by_tree_level })
}
