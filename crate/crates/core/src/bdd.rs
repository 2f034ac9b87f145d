//! Reduced ordered binary decision diagrams whose variables are labelled by
//! flip probabilities.
//!
//! Variables are ordered by creation, so the order follows the order in
//! which the compiler encounters flips; there is no dynamic reordering.
//! Nodes live in an arena and are never freed except through
//! [`BddManager::rollback`]. A child is always created before its parent,
//! so ascending node index is a topological order from the leaves up.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU32, Ordering};

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::ir::NumericTerm;
use crate::weights::WeightTable;

static NEXT_MANAGER: AtomicU32 = AtomicU32::new(0);

/// Memo entries beyond this count are dropped between operations.
const MEMO_LIMIT: usize = 1 << 23;

pub(crate) const FALSE: u32 = 0;
pub(crate) const TRUE: u32 = 1;
const TERMINAL_LEVEL: u32 = u32::MAX;

/// Handle to a node owned by a particular [`BddManager`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bdd {
    pub(crate) node: u32,
    pub(crate) mgr: u32,
}

impl Bdd {
    pub fn is_true(self) -> bool {
        self.node == TRUE
    }
    pub fn is_false(self) -> bool {
        self.node == FALSE
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Node {
    pub level: u32,
    pub hi: u32,
    pub lo: u32,
}

/// Marks the arena size so that scratch nodes built afterwards can be
/// discarded.
#[derive(Clone, Copy, Debug)]
pub struct Checkpoint {
    nodes: usize,
    levels: usize,
}

pub struct BddManager {
    id: u32,
    nodes: Vec<Node>,
    unique: FxHashMap<(u32, u32, u32), u32>,
    memo: FxHashMap<(u32, u32, u32), u32>,
    levels: Vec<NumericTerm>,
}

impl Default for BddManager {
    fn default() -> Self {
        Self::new()
    }
}

impl BddManager {
    pub fn new() -> Self {
        let terminal = |_| Node {
            level: TERMINAL_LEVEL,
            hi: 0,
            lo: 0,
        };
        BddManager {
            id: NEXT_MANAGER.fetch_add(1, Ordering::Relaxed),
            nodes: (0..2).map(terminal).collect(),
            unique: FxHashMap::default(),
            memo: FxHashMap::default(),
            levels: Vec::new(),
        }
    }

    fn handle(&self, node: u32) -> Bdd {
        Bdd { node, mgr: self.id }
    }

    pub(crate) fn own(&self, b: Bdd) -> Result<u32> {
        if b.mgr == self.id {
            Ok(b.node)
        } else {
            Err(Error::ForeignHandle)
        }
    }

    pub fn constant(&self, value: bool) -> Bdd {
        self.handle(if value { TRUE } else { FALSE })
    }

    /// Allocates a new variable at the bottom of the order, labelled with
    /// the probability of the flip it stands for.
    pub fn fresh_var(&mut self, term: NumericTerm) -> Bdd {
        let node = self.fresh_var_raw(term);
        self.handle(node)
    }

    pub(crate) fn fresh_var_raw(&mut self, term: NumericTerm) -> u32 {
        let level = self.levels.len() as u32;
        self.levels.push(term);
        self.mk(level, TRUE, FALSE)
    }

    pub fn ite(&mut self, f: Bdd, g: Bdd, h: Bdd) -> Result<Bdd> {
        let (f, g, h) = (self.own(f)?, self.own(g)?, self.own(h)?);
        let r = self.ite_raw(f, g, h);
        Ok(self.handle(r))
    }

    pub fn and(&mut self, a: Bdd, b: Bdd) -> Result<Bdd> {
        let (a, b) = (self.own(a)?, self.own(b)?);
        let r = self.and_raw(a, b);
        Ok(self.handle(r))
    }

    pub fn or(&mut self, a: Bdd, b: Bdd) -> Result<Bdd> {
        let (a, b) = (self.own(a)?, self.own(b)?);
        let r = self.or_raw(a, b);
        Ok(self.handle(r))
    }

    pub fn not(&mut self, a: Bdd) -> Result<Bdd> {
        let a = self.own(a)?;
        let r = self.not_raw(a);
        Ok(self.handle(r))
    }

    pub fn xor(&mut self, a: Bdd, b: Bdd) -> Result<Bdd> {
        let (a, b) = (self.own(a)?, self.own(b)?);
        let nb = self.not_raw(b);
        let r = self.ite_raw(a, nb, b);
        Ok(self.handle(r))
    }

    /// Number of internal (non-terminal) nodes reachable from `root`.
    pub fn node_count(&self, root: Bdd) -> Result<usize> {
        let root = self.own(root)?;
        Ok(self.reachable(&[root]).len())
    }

    /// Number of internal nodes reachable from any of `roots`.
    pub fn shared_node_count(&self, roots: &[Bdd]) -> Result<usize> {
        let raw = roots
            .iter()
            .map(|&r| self.own(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.reachable(&raw).len())
    }

    /// Total number of internal nodes in the arena.
    pub fn arena_size(&self) -> usize {
        self.nodes.len() - 2
    }

    pub fn var_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level_term(&self, level: usize) -> NumericTerm {
        self.levels[level]
    }

    pub(crate) fn levels(&self) -> &[NumericTerm] {
        &self.levels
    }

    pub(crate) fn node(&self, n: u32) -> Node {
        self.nodes[n as usize]
    }

    /// Internal nodes reachable from `roots`, sorted by ascending index.
    pub(crate) fn reachable(&self, roots: &[u32]) -> Vec<u32> {
        let mut seen = rustc_hash::FxHashSet::default();
        let mut stack: Vec<u32> = roots.iter().copied().filter(|&r| r > TRUE).collect();
        let mut out = Vec::new();
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            out.push(n);
            let node = self.nodes[n as usize];
            for c in [node.hi, node.lo] {
                if c > TRUE && !seen.contains(&c) {
                    stack.push(c);
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            nodes: self.nodes.len(),
            levels: self.levels.len(),
        }
    }

    /// Discards every node and variable created after `cp`. Handles to
    /// discarded nodes must not be used afterwards.
    pub fn rollback(&mut self, cp: Checkpoint) {
        if cp.nodes >= self.nodes.len() && cp.levels >= self.levels.len() {
            return;
        }
        for n in &self.nodes[cp.nodes..] {
            self.unique.remove(&(n.level, n.hi, n.lo));
        }
        self.nodes.truncate(cp.nodes);
        self.levels.truncate(cp.levels);
        self.memo.clear();
    }

    pub fn clear_memo(&mut self) {
        self.memo.clear();
    }

    /// Graphviz rendering of the diagram rooted at `roots`; solid edges are
    /// the high (true) branches.
    pub fn to_dot(&self, roots: &[Bdd], table: Option<&WeightTable>) -> Result<String> {
        let raw = roots
            .iter()
            .map(|&r| self.own(r))
            .collect::<Result<Vec<_>>>()?;
        let mut out = String::from(
            "digraph bdd {\n  n0 [label=\"F\", shape=box];\n  n1 [label=\"T\", shape=box];\n",
        );
        for (i, r) in raw.iter().enumerate() {
            let _ = writeln!(
                out,
                "  r{i} [label=\"out{i}\", shape=plaintext];\n  r{i} -> n{r};"
            );
        }
        for n in self.reachable(&raw) {
            let node = self.nodes[n as usize];
            let label = match self.levels[node.level as usize] {
                NumericTerm::Constant(c) => format!("{c}"),
                NumericTerm::Symbolic(id) => match table {
                    Some(t) => t.name(id).to_string(),
                    None => format!("w{}", id.0),
                },
            };
            let _ = writeln!(out, "  n{n} [label=\"x{} : {label}\"];", node.level);
            let _ = writeln!(
                out,
                "  n{n} -> n{};\n  n{n} -> n{} [style=dashed];",
                node.hi, node.lo
            );
        }
        out.push_str("}\n");
        Ok(out)
    }

    fn mk(&mut self, level: u32, hi: u32, lo: u32) -> u32 {
        if hi == lo {
            return hi;
        }
        if let Some(&n) = self.unique.get(&(level, hi, lo)) {
            return n;
        }
        let n = self.nodes.len() as u32;
        self.nodes.push(Node { level, hi, lo });
        self.unique.insert((level, hi, lo), n);
        n
    }

    fn level_of(&self, n: u32) -> u32 {
        self.nodes[n as usize].level
    }

    fn cofactors(&self, n: u32, level: u32) -> (u32, u32) {
        let node = self.nodes[n as usize];
        if node.level == level {
            (node.hi, node.lo)
        } else {
            (n, n)
        }
    }

    fn ite_terminal(f: u32, mut g: u32, mut h: u32) -> std::result::Result<u32, (u32, u32, u32)> {
        if f == TRUE {
            return Ok(g);
        }
        if f == FALSE {
            return Ok(h);
        }
        if g == f {
            g = TRUE;
        }
        if h == f {
            h = FALSE;
        }
        if g == h {
            return Ok(g);
        }
        if g == TRUE && h == FALSE {
            return Ok(f);
        }
        Err((f, g, h))
    }

    pub(crate) fn ite_raw(&mut self, f: u32, g: u32, h: u32) -> u32 {
        enum Task {
            Go(u32, u32, u32),
            Build(u32, (u32, u32, u32)),
        }
        if self.memo.len() > MEMO_LIMIT {
            self.memo.clear();
        }
        let mut tasks = vec![Task::Go(f, g, h)];
        let mut results: Vec<u32> = Vec::new();
        while let Some(task) = tasks.pop() {
            match task {
                Task::Go(f, g, h) => {
                    let key = match Self::ite_terminal(f, g, h) {
                        Ok(r) => {
                            results.push(r);
                            continue;
                        }
                        Err(key) => key,
                    };
                    if let Some(&r) = self.memo.get(&key) {
                        results.push(r);
                        continue;
                    }
                    let (f, g, h) = key;
                    let v = self.level_of(f).min(self.level_of(g)).min(self.level_of(h));
                    let (f1, f0) = self.cofactors(f, v);
                    let (g1, g0) = self.cofactors(g, v);
                    let (h1, h0) = self.cofactors(h, v);
                    tasks.push(Task::Build(v, key));
                    tasks.push(Task::Go(f0, g0, h0));
                    tasks.push(Task::Go(f1, g1, h1));
                }
                Task::Build(v, key) => {
                    let lo = results.pop().expect("low result");
                    let hi = results.pop().expect("high result");
                    let r = self.mk(v, hi, lo);
                    self.memo.insert(key, r);
                    results.push(r);
                }
            }
        }
        results.pop().expect("ite result")
    }

    pub(crate) fn and_raw(&mut self, a: u32, b: u32) -> u32 {
        self.ite_raw(a, b, FALSE)
    }

    pub(crate) fn or_raw(&mut self, a: u32, b: u32) -> u32 {
        self.ite_raw(a, TRUE, b)
    }

    pub(crate) fn not_raw(&mut self, a: u32) -> u32 {
        self.ite_raw(a, FALSE, TRUE)
    }

    /// Evaluates the function at a total assignment of the variables.
    pub fn evaluate(&self, root: Bdd, assignment: &[bool]) -> Result<bool> {
        let mut n = self.own(root)?;
        while n > TRUE {
            let node = self.nodes[n as usize];
            n = if assignment[node.level as usize] {
                node.hi
            } else {
                node.lo
            };
        }
        Ok(n == TRUE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn var(m: &mut BddManager) -> Bdd {
        m.fresh_var(NumericTerm::Constant(0.5))
    }

    #[test]
    fn boolean_identities_canonicalize() {
        let mut m = BddManager::new();
        let (a, b) = (var(&mut m), var(&mut m));
        let ab = m.and(a, b).unwrap();
        let ba = m.and(b, a).unwrap();
        assert_eq!(ab, ba);
        let na = m.not(a).unwrap();
        let nna = m.not(na).unwrap();
        assert_eq!(nna, a);
        let x = m.xor(a, a).unwrap();
        assert!(x.is_false());
        let o = m.or(a, na).unwrap();
        assert!(o.is_true());
        assert_eq!(m.node_count(ab).unwrap(), 2);
    }

    #[test]
    fn foreign_handles_are_rejected() {
        let mut m1 = BddManager::new();
        let mut m2 = BddManager::new();
        let a = var(&mut m1);
        let b = var(&mut m2);
        assert!(matches!(m1.and(a, b), Err(Error::ForeignHandle)));
    }

    #[test]
    fn rollback_discards_scratch_nodes() {
        let mut m = BddManager::new();
        let vars: Vec<_> = (0..4).map(|_| var(&mut m)).collect();
        let keep = m.and(vars[0], vars[1]).unwrap();
        let cp = m.checkpoint();
        let before = m.arena_size();
        let t = m.and(vars[2], vars[3]).unwrap();
        let _ = m.or(t, keep).unwrap();
        assert!(m.arena_size() > before);
        m.rollback(cp);
        assert_eq!(m.arena_size(), before);
        let again = m.and(vars[0], vars[1]).unwrap();
        assert_eq!(again, keep);
    }

    #[test]
    fn dot_output_mentions_every_node() {
        let mut m = BddManager::new();
        let (a, b) = (var(&mut m), var(&mut m));
        let f = m.or(a, b).unwrap();
        let dot = m.to_dot(&[f], None).unwrap();
        assert!(dot.starts_with("digraph"));
        assert_eq!(dot.matches(" : ").count(), 2);
    }

    #[derive(Clone, Debug)]
    enum Formula {
        Var(usize),
        Not(Box<Formula>),
        And(Box<Formula>, Box<Formula>),
        Or(Box<Formula>, Box<Formula>),
        Xor(Box<Formula>, Box<Formula>),
    }

    fn formula(nvars: usize) -> impl Strategy<Value = Formula> {
        let leaf = (0..nvars).prop_map(Formula::Var);
        leaf.prop_recursive(5, 40, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|f| Formula::Not(Box::new(f))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Formula::And(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Formula::Or(Box::new(a), Box::new(b))),
                (inner.clone(), inner).prop_map(|(a, b)| Formula::Xor(Box::new(a), Box::new(b))),
            ]
        })
    }

    fn truth(f: &Formula, env: &[bool]) -> bool {
        match f {
            Formula::Var(i) => env[*i],
            Formula::Not(a) => !truth(a, env),
            Formula::And(a, b) => truth(a, env) && truth(b, env),
            Formula::Or(a, b) => truth(a, env) || truth(b, env),
            Formula::Xor(a, b) => truth(a, env) ^ truth(b, env),
        }
    }

    fn build(f: &Formula, m: &mut BddManager, vars: &[Bdd]) -> Bdd {
        match f {
            Formula::Var(i) => vars[*i],
            Formula::Not(a) => {
                let a = build(a, m, vars);
                m.not(a).unwrap()
            }
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Xor(a, b) => {
                let (x, y) = (build(a, m, vars), build(b, m, vars));
                match f {
                    Formula::And(..) => m.and(x, y).unwrap(),
                    Formula::Or(..) => m.or(x, y).unwrap(),
                    _ => m.xor(x, y).unwrap(),
                }
            }
        }
    }

    proptest! {
        #[test]
        fn bdd_agrees_with_truth_table(f in formula(5), g in formula(5)) {
            let mut m = BddManager::new();
            let vars: Vec<_> = (0..5).map(|_| var(&mut m)).collect();
            let bf = build(&f, &mut m, &vars);
            let bg = build(&g, &mut m, &vars);
            let mut equivalent = true;
            for bits in 0..32u32 {
                let env: Vec<bool> = (0..5).map(|i| bits >> i & 1 == 1).collect();
                prop_assert_eq!(m.evaluate(bf, &env).unwrap(), truth(&f, &env));
                equivalent &= truth(&f, &env) == truth(&g, &env);
            }
            // Canonicity: equivalent formulas share a node.
            prop_assert_eq!(equivalent, bf == bg);
        }
    }
}
