//! Dependency DAG over tensor accesses and the topological placement order.
//!
//! Nodes are canonical accesses; an operand unifies with an output node only
//! on an exact match of tensor, variables and offsets. Offset or renamed
//! accesses stay source nodes and are satisfied later by readiness analysis.

use crate::fragments::MinimalFragment;
use crate::frontend::TensorAccess;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DepGraphError {
    #[error("recurrence system has no fragment-level order; cycle: {0}")]
    Cycle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Input,
    FragmentOutput,
}

#[derive(Debug, Clone)]
pub struct DependencyGraph {
    pub nodes: Vec<(TensorAccess, NodeKind)>,
    /// Directed (operand node -> output node) pairs by node index.
    pub edges: Vec<(usize, usize)>,
    /// Fragments producing each output node, by fragment index.
    pub fragment_of: BTreeMap<usize, Vec<usize>>,
    frags: Vec<MinimalFragment>,
}

impl DependencyGraph {
    pub fn fragments(&self) -> &[MinimalFragment] {
        &self.frags
    }

    pub fn node_index(&self, access: &TensorAccess) -> Option<usize> {
        self.nodes.iter().position(|(a, _)| a == access)
    }

    /// Graphviz rendering for external visualization.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph deps {\n");
        for (i, (a, kind)) in self.nodes.iter().enumerate() {
            let shape = match kind {
                NodeKind::Input => "ellipse",
                NodeKind::FragmentOutput => "box",
            };
            let _ = writeln!(out, "  n{i} [label=\"{a}\", shape={shape}];");
        }
        for (from, to) in &self.edges {
            let _ = writeln!(out, "  n{from} -> n{to};");
        }
        out.push_str("}\n");
        out
    }
}

/// Builds the access DAG for a set of normalized fragments.
pub fn build_dag(frags: &[MinimalFragment]) -> Result<DependencyGraph, DepGraphError> {
    let mut nodes: Vec<(TensorAccess, NodeKind)> = Vec::new();
    let mut index: BTreeMap<TensorAccess, usize> = BTreeMap::new();
    let intern = |a: &TensorAccess, kind: NodeKind, nodes: &mut Vec<(TensorAccess, NodeKind)>, index: &mut BTreeMap<TensorAccess, usize>| {
        match index.get(a) {
            Some(&i) => {
                if kind == NodeKind::FragmentOutput {
                    nodes[i].1 = NodeKind::FragmentOutput;
                }
                i
            }
            None => {
                nodes.push((a.clone(), kind));
                index.insert(a.clone(), nodes.len() - 1);
                nodes.len() - 1
            }
        }
    };

    let mut fragment_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (fi, f) in frags.iter().enumerate() {
        let out = intern(&f.lhs, NodeKind::FragmentOutput, &mut nodes, &mut index);
        fragment_of.entry(out).or_default().push(fi);
    }
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for f in frags {
        let out = index[&f.lhs];
        for a in f.rhs.accesses() {
            let op = intern(a, NodeKind::Input, &mut nodes, &mut index);
            if op != out {
                edges.insert((op, out));
            }
        }
    }

    let graph = DependencyGraph {
        nodes,
        edges: edges.into_iter().collect(),
        fragment_of,
        frags: frags.to_vec(),
    };
    // Surface cycles now; topological_order relies on acyclicity.
    topological_order(&graph).map(|_| graph)
}

/// Kahn's algorithm over fragments, with (origin, creation) as the
/// deterministic tie-break.
pub fn topological_order(dag: &DependencyGraph) -> Result<Vec<MinimalFragment>, DepGraphError> {
    let frags = &dag.frags;
    let n = frags.len();
    // frag_deps[i] = fragments whose output i's rhs exactly references.
    let mut preds: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut succs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (fi, f) in frags.iter().enumerate() {
        for a in f.rhs.accesses() {
            if let Some(node) = dag.node_index(a) {
                if let Some(producers) = dag.fragment_of.get(&node) {
                    for &p in producers {
                        if p != fi {
                            preds[fi].insert(p);
                            succs[p].insert(fi);
                        }
                    }
                }
            }
        }
    }

    let mut indegree: Vec<usize> = preds.iter().map(|p| p.len()).collect();
    let mut ready: BTreeSet<(usize, usize, usize)> = (0..n)
        .filter(|&i| indegree[i] == 0)
        .map(|i| (frags[i].origin, frags[i].creation, i))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&(o, c, i)) = ready.iter().next() {
        ready.remove(&(o, c, i));
        order.push(i);
        for &s in &succs[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.insert((frags[s].origin, frags[s].creation, s));
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<String> = (0..n)
            .filter(|i| !order.contains(i))
            .map(|i| frags[i].lhs.to_string())
            .collect();
        return Err(DepGraphError::Cycle(stuck.join(" -> ")));
    }
    Ok(order.into_iter().map(|i| frags[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fragments::generate_and_normalize;
    use crate::frontend::{parse_program, validate, ProgramSpec};

    fn compile(text: &str) -> ProgramSpec {
        validate(parse_program(text).unwrap()).unwrap()
    }

    #[test]
    fn cholesky_dag_edges() {
        let spec = compile(
            "\
rec: L(i,j) = (A(i,j) - Sum{k}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]
rec: L(i,j) = sqrt(A(i,j) - Sum{k}(L(i,k)*L(j,k))) : [k<j, j=i]
order: i j k
extent: N = 8
",
        );
        let frags = generate_and_normalize(&spec).unwrap();
        let dag = build_dag(&frags).unwrap();

        let edge = |from: &str, to: &str| {
            let parse_access = |s: &str| {
                let f = format!("X({s})");
                let _ = f;
                s.to_string()
            };
            let _ = parse_access;
            let fi = dag.nodes.iter().position(|(a, _)| a.to_string() == from).unwrap();
            let ti = dag.nodes.iter().position(|(a, _)| a.to_string() == to).unwrap();
            dag.edges.contains(&(fi, ti))
        };
        assert!(edge("L1(i,j)", "L(i,j)"));
        assert!(edge("L(i,j)", "L1(i,i)"));
        assert!(edge("L1(i,i)", "L(i,i)"));
        for source in ["L(i,k)", "L(j,k)", "L(j,j)", "A(i,j)", "A(i,i)"] {
            let idx = dag.nodes.iter().position(|(a, _)| a.to_string() == source).unwrap();
            assert_eq!(dag.nodes[idx].1, NodeKind::Input, "{source} should stay a source node");
        }

        let order = topological_order(&dag).unwrap();
        assert_eq!(order[0].lhs.to_string(), "L1(i,j)");
    }

    #[test]
    fn fibonacci_dag() {
        let spec = compile(
            "\
rec: F(i) = F(i-1) + F(i-2) : [2<=i, i<N]
order: i
extent: N = 11
",
        );
        let frags = generate_and_normalize(&spec).unwrap();
        let dag = build_dag(&frags).unwrap();
        assert_eq!(dag.nodes.len(), 3);
        assert_eq!(dag.edges.len(), 2);
        assert_eq!(topological_order(&dag).unwrap().len(), 1);
    }

    #[test]
    fn identity_chain_order() {
        let spec = compile(
            "\
rec: X(i) = Y(i) : [i<N]
rec: Y(i) = Z(i) : [i<N]
order: i
extent: N = 4
",
        );
        let frags = generate_and_normalize(&spec).unwrap();
        let dag = build_dag(&frags).unwrap();
        let order = topological_order(&dag).unwrap();
        assert_eq!(order[0].lhs.tensor, "Y");
        assert_eq!(order[1].lhs.tensor, "X");
    }

    #[test]
    fn chain_of_five_matches_bruteforce() {
        // A -> B -> C -> D -> E identity chain: the only edge-respecting
        // orders place each producer before its consumer. Enumerate all
        // 120 permutations as the oracle.
        let spec = compile(
            "\
rec: B(i) = A(i) : [i<N]
rec: C(i) = B(i) : [i<N]
rec: D(i) = C(i) : [i<N]
rec: E(i) = D(i) : [i<N]
rec: F(i) = E(i) : [i<N]
order: i
extent: N = 4
",
        );
        let frags = generate_and_normalize(&spec).unwrap();
        let dag = build_dag(&frags).unwrap();
        let order = topological_order(&dag).unwrap();
        let names: Vec<&str> = order.iter().map(|f| f.lhs.tensor.as_str()).collect();

        // Oracle: all permutations of the five fragments filtered by edge
        // respect (producer before consumer).
        let producers = ["B", "C", "D", "E", "F"];
        let deps: Vec<(usize, usize)> = vec![(0, 1), (1, 2), (2, 3), (3, 4)];
        let mut valid: Vec<Vec<&str>> = Vec::new();
        let mut perm: Vec<usize> = (0..5).collect();
        permute(&mut perm, 0, &mut |p| {
            let pos = |x: usize| p.iter().position(|&q| q == x).unwrap();
            if deps.iter().all(|&(a, b)| pos(a) < pos(b)) {
                valid.push(p.iter().map(|&i| producers[i]).collect());
            }
        });
        assert_eq!(valid.len(), 1, "chain admits exactly one order");
        assert_eq!(names, valid[0]);
    }

    fn permute(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            f(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, f);
            items.swap(k, i);
        }
    }

    #[test]
    fn cyclic_system_rejected() {
        let spec = compile(
            "\
rec: X(i) = Y(i) : [i<N]
rec: Y(i) = X(i) : [i<N]
order: i
extent: N = 4
",
        );
        let frags = generate_and_normalize(&spec).unwrap();
        assert!(matches!(build_dag(&frags), Err(DepGraphError::Cycle(_))));
    }

    #[test]
    fn shuffled_input_respects_edges() {
        let spec = compile(
            "\
rec: X(i) = Y(i) : [i<N]
rec: Y(i) = Z(i) : [i<N]
order: i
extent: N = 4
",
        );
        let mut frags = generate_and_normalize(&spec).unwrap();
        frags.reverse();
        let dag = build_dag(&frags).unwrap();
        let order = topological_order(&dag).unwrap();
        assert_eq!(order[0].lhs.tensor, "Y");
    }
}
