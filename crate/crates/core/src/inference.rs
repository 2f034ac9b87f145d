//! Exact inference on compiled programs by weighted model counting.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap;

use crate::bdd::{Bdd, BddManager, FALSE, TRUE};
use crate::compile::{compile_lowered, compile_values, CompiledProgram, CompiledValues};
use crate::error::{Error, Result};
use crate::ir::NumericTerm;
use crate::surface::{
    apply_to_main, lower, lower_values, EvalOptions, Program, SurfaceValue, TypeShape,
};
use crate::weights::{WeightAssignment, WeightTable};

/// Default cap on the number of distinct values [`exact_distribution`]
/// will produce.
pub const DEFAULT_VALUE_BUDGET: usize = 1_000_000;

/// Probabilities below this are treated as absent from a distribution.
pub const NEGLIGIBLE: f64 = 1e-15;

/// Finite distribution over surface values.
pub type Distribution = BTreeMap<SurfaceValue, f64>;

fn check_weights(m: &BddManager, w: &WeightAssignment) -> Result<()> {
    let needed = m
        .levels()
        .iter()
        .filter_map(|t| match t {
            NumericTerm::Symbolic(id) => Some(id.index() + 1),
            NumericTerm::Constant(_) => None,
        })
        .max()
        .unwrap_or(0);
    w.check(needed)
}

struct Pass {
    nodes: Vec<u32>,
    index: FxHashMap<u32, usize>,
    pr: Vec<f64>,
}

impl Pass {
    fn value(&self, n: u32) -> f64 {
        match n {
            FALSE => 0.0,
            TRUE => 1.0,
            _ => self.pr[self.index[&n]],
        }
    }
}

fn forward(m: &BddManager, root: u32, w: &WeightAssignment) -> Pass {
    let nodes = m.reachable(&[root]);
    let index: FxHashMap<u32, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut pass = Pass {
        nodes,
        index,
        pr: Vec::new(),
    };
    pass.pr.reserve(pass.nodes.len());
    for i in 0..pass.nodes.len() {
        let node = m.node(pass.nodes[i]);
        let p = m.level_term(node.level as usize).eval(w);
        let v = p * pass.value(node.hi) + (1.0 - p) * pass.value(node.lo);
        pass.pr.push(v);
    }
    pass
}

/// Probability that `root` is true when every variable is an independent
/// flip with its labelled probability.
pub fn wmc(m: &BddManager, root: Bdd, w: &WeightAssignment) -> Result<f64> {
    let root = m.own(root)?;
    check_weights(m, w)?;
    Ok(forward(m, root, w).value(root))
}

/// [`wmc`] together with its gradient with respect to every symbolic weight,
/// computed by a reverse pass. A weight labelling several variables
/// accumulates the contributions of all of them.
pub fn wmc_grad(m: &BddManager, root: Bdd, w: &WeightAssignment) -> Result<(f64, Vec<f64>)> {
    let root = m.own(root)?;
    check_weights(m, w)?;
    let pass = forward(m, root, w);
    let mut grad = vec![0.0; w.len()];
    let mut adj = vec![0.0; pass.nodes.len()];
    if let Some(&i) = pass.index.get(&root) {
        adj[i] = 1.0;
    }
    for i in (0..pass.nodes.len()).rev() {
        let a = adj[i];
        if a == 0.0 {
            continue;
        }
        let node = m.node(pass.nodes[i]);
        let term = m.level_term(node.level as usize);
        let p = term.eval(w);
        if let NumericTerm::Symbolic(id) = term {
            grad[id.index()] += a * (pass.value(node.hi) - pass.value(node.lo));
        }
        if let Some(&h) = pass.index.get(&node.hi) {
            adj[h] += a * p;
        }
        if let Some(&l) = pass.index.get(&node.lo) {
            adj[l] += a * (1.0 - p);
        }
    }
    Ok((pass.value(root), grad))
}

/// The part of a BDD reachable from a set of roots, flattened so that
/// repeated weighted model counting over all roots at once costs one
/// forward and one reverse sweep.
pub struct WmcPlan {
    levels: Vec<NumericTerm>,
    /// In ascending arena order, so children precede parents.
    nodes: Vec<PlanNode>,
    roots: Vec<u32>,
}

#[derive(Clone, Copy)]
struct PlanNode {
    level: u32,
    hi: u32,
    lo: u32,
}

// Plan references: 0 and 1 are the constants, `k + 2` is `nodes[k]`.
fn plan_ref(index: &FxHashMap<u32, usize>, n: u32) -> u32 {
    match n {
        FALSE => 0,
        TRUE => 1,
        _ => index[&n] as u32 + 2,
    }
}

impl WmcPlan {
    pub fn new(m: &BddManager, roots: &[Bdd]) -> Result<Self> {
        let raw = roots
            .iter()
            .map(|&r| m.own(r))
            .collect::<Result<Vec<_>>>()?;
        let order = m.reachable(&raw);
        let index: FxHashMap<u32, usize> = order.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let nodes = order
            .iter()
            .map(|&n| {
                let node = m.node(n);
                PlanNode {
                    level: node.level,
                    hi: plan_ref(&index, node.hi),
                    lo: plan_ref(&index, node.lo),
                }
            })
            .collect();
        let roots = raw.iter().map(|&r| plan_ref(&index, r)).collect();
        Ok(WmcPlan {
            levels: m.levels().to_vec(),
            nodes,
            roots,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn level_probs(&self, w: &WeightAssignment) -> Result<Vec<f64>> {
        let needed = self
            .levels
            .iter()
            .filter_map(|t| match t {
                NumericTerm::Symbolic(id) => Some(id.index() + 1),
                NumericTerm::Constant(_) => None,
            })
            .max()
            .unwrap_or(0);
        w.check(needed)?;
        Ok(self.levels.iter().map(|t| t.eval(w)).collect())
    }

    fn sweep(&self, p: &[f64]) -> Vec<f64> {
        let mut pr = Vec::with_capacity(self.nodes.len() + 2);
        pr.extend([0.0, 1.0]);
        for n in &self.nodes {
            let q = p[n.level as usize];
            let v = q * pr[n.hi as usize] + (1.0 - q) * pr[n.lo as usize];
            pr.push(v);
        }
        pr
    }

    /// Probability of every root.
    pub fn probabilities(&self, w: &WeightAssignment) -> Result<Vec<f64>> {
        let pr = self.sweep(&self.level_probs(w)?);
        Ok(self.roots.iter().map(|&r| pr[r as usize]).collect())
    }

    /// Probabilities of the roots, then the gradient of `J(p_1, .., p_k)`
    /// where `dj` maps the root probabilities to `∂J/∂p_i`.
    pub fn gradient(
        &self,
        w: &WeightAssignment,
        dj: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.level_probs(w)?;
        let pr = self.sweep(&p);
        let probs: Vec<f64> = self.roots.iter().map(|&r| pr[r as usize]).collect();
        let mut adj = vec![0.0; pr.len()];
        for (&r, a) in self.roots.iter().zip(dj(&probs)) {
            adj[r as usize] += a;
        }
        let mut grad = vec![0.0; w.len()];
        for k in (0..self.nodes.len()).rev() {
            let a = adj[k + 2];
            if a == 0.0 {
                continue;
            }
            let n = self.nodes[k];
            let q = p[n.level as usize];
            if let NumericTerm::Symbolic(id) = self.levels[n.level as usize] {
                grad[id.index()] += a * (pr[n.hi as usize] - pr[n.lo as usize]);
            }
            adj[n.hi as usize] += a * q;
            adj[n.lo as usize] += a * (1.0 - q);
        }
        Ok((probs, grad))
    }
}

/// Every value the program can output, each with the BDD of the event that
/// the program outputs it.
///
/// Values are enumerated by walking the output layout: tag bits are decided
/// first and only the fields of the chosen constructor are explored, while
/// the conjunction of decisions so far prunes impossible branches.
pub fn support(prog: &mut CompiledProgram, budget: usize) -> Result<Vec<(SurfaceValue, Bdd)>> {
    let width = prog.shape.width();
    let roots = prog
        .roots
        .iter()
        .map(|&r| prog.manager.own(r))
        .collect::<Result<Vec<_>>>()?;
    let shape = prog.shape.clone();
    let mut walk = Walk {
        m: &mut prog.manager,
        roots,
        assign: vec![false; width],
        out: Vec::new(),
        budget,
        shape: &shape,
    };
    let mut agenda = vec![Task::Shape(&shape, 0)];
    walk.go(TRUE, &mut agenda)?;
    let mgr = prog.roots.first().map(|r| r.mgr).unwrap_or_default();
    Ok(walk
        .out
        .into_iter()
        .map(|(v, n)| (v, Bdd { node: n, mgr }))
        .collect())
}

enum Task<'s> {
    Shape(&'s TypeShape, usize),
    /// Remaining bits of a number or Boolean.
    Bits(usize, usize),
    /// Tag bits of an algebraic value: shape, offset, bits read, value.
    Tag(&'s TypeShape, usize, u32, usize),
}

struct Walk<'a, 's> {
    m: &'a mut BddManager,
    roots: Vec<u32>,
    assign: Vec<bool>,
    out: Vec<(SurfaceValue, u32)>,
    budget: usize,
    shape: &'s TypeShape,
}

impl<'s> Walk<'_, 's> {
    fn branch(
        &mut self,
        cur: u32,
        bit: usize,
        agenda: &mut Vec<Task<'s>>,
        next: impl Fn(bool) -> Task<'s>,
    ) -> Result<()> {
        let root = self.roots[bit];
        for b in [false, true] {
            let lit = match (root, b) {
                (TRUE, true) | (FALSE, false) => TRUE,
                (TRUE, false) | (FALSE, true) => FALSE,
                (r, true) => r,
                (r, false) => self.m.not_raw(r),
            };
            let c = self.m.and_raw(cur, lit);
            if c == FALSE {
                continue;
            }
            self.assign[bit] = b;
            agenda.push(next(b));
            let r = self.go(c, agenda);
            agenda.pop();
            self.assign[bit] = false;
            r?;
        }
        Ok(())
    }

    fn go(&mut self, cur: u32, agenda: &mut Vec<Task<'s>>) -> Result<()> {
        stacker::maybe_grow(64 * 1024, 4 * 1024 * 1024, || self.step(cur, agenda))
    }

    fn step(&mut self, cur: u32, agenda: &mut Vec<Task<'s>>) -> Result<()> {
        let Some(task) = agenda.pop() else {
            if self.out.len() >= self.budget {
                return Err(Error::Budget(format!(
                    "more than {} distinct output values",
                    self.budget
                )));
            }
            let v = self.shape.decode(&self.assign)?;
            self.out.push((v, cur));
            return Ok(());
        };
        let result = match &task {
            Task::Shape(s, off) => {
                let (s, off) = (*s, *off);
                let mark = agenda.len();
                match s {
                    TypeShape::Bool => agenda.push(Task::Bits(off, 1)),
                    TypeShape::Nat(w) => agenda.push(Task::Bits(off, *w as usize)),
                    TypeShape::Tuple(items) => {
                        let mut at = off;
                        let mut tasks = Vec::new();
                        for it in items {
                            tasks.push(Task::Shape(it, at));
                            at += it.width();
                        }
                        agenda.extend(tasks.into_iter().rev());
                    }
                    TypeShape::Adt(_) => agenda.push(Task::Tag(s, off, 0, 0)),
                }
                let r = self.go(cur, agenda);
                agenda.truncate(mark);
                r
            }
            Task::Bits(off, n) => {
                let (off, n) = (*off, *n);
                if n == 0 {
                    self.go(cur, agenda)
                } else {
                    self.branch(cur, off, agenda, |_| Task::Bits(off + 1, n - 1))
                }
            }
            Task::Tag(s, off, read, tag) => {
                let (s, off, read, tag) = (*s, *off, *read, *tag);
                let TypeShape::Adt(a) = s else { unreachable!() };
                if read < a.tag_width {
                    self.branch(cur, off + read as usize, agenda, |b| {
                        Task::Tag(s, off, read + 1, tag << 1 | b as usize)
                    })
                } else if tag == 0 || tag > a.ctors.len() || a.arms[tag - 1].is_none() {
                    // Only placeholders carry such tags.
                    Ok(())
                } else {
                    let mark = agenda.len();
                    let mut at = off + a.tag_width as usize;
                    let mut tasks = Vec::new();
                    for (j, arm) in a.arms.iter().enumerate() {
                        let Some(fields) = arm else { continue };
                        for f in fields {
                            if j == tag - 1 {
                                tasks.push(Task::Shape(f, at));
                            }
                            at += f.width();
                        }
                    }
                    agenda.extend(tasks.into_iter().rev());
                    let r = self.go(cur, agenda);
                    agenda.truncate(mark);
                    r
                }
            }
        };
        agenda.push(task);
        result
    }
}

/// Exact output distribution of a compiled program. Values with
/// probability below [`NEGLIGIBLE`] are omitted.
pub fn exact_distribution(
    prog: &mut CompiledProgram,
    w: &WeightAssignment,
    budget: usize,
) -> Result<Distribution> {
    check_weights(&prog.manager, w)?;
    let cp = prog.manager.checkpoint();
    let result = support(prog, budget).and_then(|sup| {
        let mut out = Distribution::new();
        for (v, b) in sup {
            let p = wmc(&prog.manager, b, w)?;
            if p >= NEGLIGIBLE {
                out.insert(v, p);
            }
        }
        Ok(out)
    });
    prog.manager.rollback(cp);
    result
}

/// Lowers and compiles the `main` expression of `program`.
pub fn compile_main(program: &Program, table: &mut WeightTable) -> Result<CompiledProgram> {
    compile_lowered(&lower(program, table)?)
}

/// Compiles `(f main)` for a one-argument function `f` of `program`, with
/// one indicator per value of `f`.
pub fn compile_feature(
    program: &Program,
    f: &str,
    table: &mut WeightTable,
) -> Result<CompiledValues> {
    let entry = apply_to_main(program, f)?;
    compile_values(&lower_values(
        program,
        &entry,
        table,
        &EvalOptions::default(),
    )?)
}

/// Distribution of `f(x)` for `x` drawn from the program's `main`.
pub fn push_forward(
    program: &Program,
    f: &str,
    table: &mut WeightTable,
    w: &WeightAssignment,
) -> Result<Distribution> {
    let compiled = compile_feature(program, f, table)?;
    let mut w = w.clone();
    w.0.extend(table.initial().0.into_iter().skip(w.len()));
    compiled
        .values
        .iter()
        .map(|(v, b)| Ok((v.clone(), wmc(&compiled.manager, *b, &w)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::compile;
    use crate::ir::{enumerate_semantics, CoreExpr, CoreValue};
    use crate::weights::WeightId;

    fn fig12() -> CoreExpr {
        let th = WeightId(0);
        CoreExpr::let_(
            "x",
            CoreExpr::flip_sym(th),
            CoreExpr::let_(
                "y",
                CoreExpr::ite(
                    CoreExpr::var("x"),
                    CoreExpr::flip_sym(th),
                    CoreExpr::flip(0.9),
                ),
                CoreExpr::var("y"),
            ),
        )
    }

    #[test]
    fn shared_weight_probability_and_gradient() {
        let c = compile(&fig12()).unwrap();
        let w = WeightAssignment(vec![0.5]);
        let (p, g) = wmc_grad(&c.manager, c.roots[0], &w).unwrap();
        // θ² + 0.9 (1 - θ) and its derivative 2θ - 0.9 at θ = 0.5.
        assert!((p - 0.7).abs() < 1e-12);
        assert!((g[0] - 0.1).abs() < 1e-12);
        assert!((wmc(&c.manager, c.roots[0], &w).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn missing_weights_are_rejected() {
        let c = compile(&fig12()).unwrap();
        assert!(matches!(
            wmc(&c.manager, c.roots[0], &WeightAssignment(vec![])),
            Err(Error::WeightArity { .. })
        ));
        assert!(matches!(
            wmc(&c.manager, c.roots[0], &WeightAssignment(vec![1.5])),
            Err(Error::WeightRange(_))
        ));
    }

    #[test]
    fn distribution_of_pairs_matches_enumeration() {
        let e = CoreExpr::let_(
            "a",
            CoreExpr::flip(0.3),
            CoreExpr::let_(
                "b",
                CoreExpr::ite(CoreExpr::var("a"), CoreExpr::flip(0.6), CoreExpr::tt()),
                CoreExpr::pair(CoreExpr::var("a"), CoreExpr::var("b")),
            ),
        );
        let w = WeightAssignment(vec![]);
        let mut c = compile(&e).unwrap();
        let d = exact_distribution(&mut c, &w, DEFAULT_VALUE_BUDGET).unwrap();
        let o = enumerate_semantics(&e, &w, 20).unwrap();
        assert_eq!(d.len(), o.len());
        for (v, p) in o {
            let sv = SurfaceValue::from_core(&v);
            assert!((d[&sv] - p).abs() < 1e-12, "{v}");
        }
        let ff = CoreValue::pair(CoreValue::Bool(false), CoreValue::Bool(false));
        assert!(!d.contains_key(&SurfaceValue::from_core(&ff)));
    }
}
