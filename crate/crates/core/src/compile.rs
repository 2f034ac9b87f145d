//! Compilation of core programs to one BDD per output bit.

use std::rc::Rc;

use crate::bdd::{Bdd, BddManager, FALSE, TRUE};
use crate::error::{Error, Result};
use crate::ir::{collect_weights, typecheck, CoreExpr, CoreType, CoreValue, ScopedEnv};
use crate::surface::{Lowered, LoweredValues, SurfaceValue, TypeShape};
use crate::weights::{WeightId, WeightTable};

/// A compiled program: the BDD of every output bit, in left-to-right order,
/// plus the layout needed to read values back.
pub struct CompiledProgram {
    pub manager: BddManager,
    pub roots: Vec<Bdd>,
    pub ty: CoreType,
    pub shape: TypeShape,
    /// Symbolic weights of the program in first-occurrence order.
    pub weights: Vec<WeightId>,
}

#[derive(Clone)]
enum CVal {
    Bit(u32),
    Pair(Rc<CVal>, Rc<CVal>),
}

/// Compiles a closed core program. Flips become BDD variables in the order
/// they are encountered; `if` merges both branches bit by bit.
pub fn compile(e: &CoreExpr) -> Result<CompiledProgram> {
    let ty = typecheck(e)?;
    let shape = TypeShape::from_core(&ty);
    compile_with_shape(e, ty, shape)
}

/// Compiles a lowered surface program, keeping its output layout.
pub fn compile_lowered(l: &Lowered) -> Result<CompiledProgram> {
    let ty = typecheck(&l.expr)?;
    if ty.width() != l.shape.width() {
        return Err(Error::Lower(format!(
            "lowered program has {} output bits but its shape needs {}",
            ty.width(),
            l.shape.width()
        )));
    }
    compile_with_shape(&l.expr, ty, l.shape.clone())
}

fn compile_roots(e: &CoreExpr) -> (BddManager, Vec<Bdd>) {
    let mut manager = BddManager::new();
    let mut env = ScopedEnv::new();
    let v = comp(e, &mut manager, &mut env);
    let mut raw = Vec::new();
    flatten(&v, &mut raw);
    manager.clear_memo();
    let roots = raw
        .into_iter()
        .map(|n| Bdd {
            node: n,
            mgr: manager_id(&manager),
        })
        .collect();
    (manager, roots)
}

fn compile_with_shape(e: &CoreExpr, ty: CoreType, shape: TypeShape) -> Result<CompiledProgram> {
    let (manager, roots) = compile_roots(e);
    Ok(CompiledProgram {
        manager,
        roots,
        ty,
        shape,
        weights: collect_weights(e),
    })
}

/// A compiled expression with one indicator BDD per value it can take.
pub struct CompiledValues {
    pub manager: BddManager,
    /// Sorted by value; indicators are pairwise disjoint.
    pub values: Vec<(SurfaceValue, Bdd)>,
    pub weights: Vec<WeightId>,
}

/// Compiles the per-value indicators of a lowered expression.
pub fn compile_values(l: &LoweredValues) -> Result<CompiledValues> {
    let ty = typecheck(&l.expr)?;
    if ty.width() != l.values.len() {
        return Err(Error::Lower(format!(
            "expected {} indicators, found {}",
            l.values.len(),
            ty.width()
        )));
    }
    let (manager, roots) = compile_roots(&l.expr);
    let values = l.values.iter().cloned().zip(roots).collect();
    Ok(CompiledValues {
        manager,
        values,
        weights: collect_weights(&l.expr),
    })
}

impl CompiledValues {
    /// Indicator of `v`, or `None` when `v` is not a possible value.
    pub fn indicator(&self, v: &SurfaceValue) -> Option<Bdd> {
        self.values
            .binary_search_by(|(x, _)| x.cmp(v))
            .ok()
            .map(|i| self.values[i].1)
    }

    /// Internal nodes shared by all indicators.
    pub fn node_count(&self) -> usize {
        let roots: Vec<Bdd> = self.values.iter().map(|(_, b)| *b).collect();
        self.manager.shared_node_count(&roots).expect("own roots")
    }
}

fn manager_id(m: &BddManager) -> u32 {
    m.constant(true).mgr
}

fn flatten(v: &CVal, out: &mut Vec<u32>) {
    match v {
        CVal::Bit(n) => out.push(*n),
        CVal::Pair(a, b) => {
            flatten(a, out);
            flatten(b, out);
        }
    }
}

fn constant(v: &CoreValue) -> CVal {
    match v {
        CoreValue::Bool(b) => CVal::Bit(if *b { TRUE } else { FALSE }),
        CoreValue::Pair(a, b) => CVal::Pair(Rc::new(constant(a)), Rc::new(constant(b))),
    }
}

fn mux(m: &mut BddManager, c: u32, a: &CVal, b: &CVal) -> CVal {
    match (a, b) {
        (CVal::Bit(x), CVal::Bit(y)) => CVal::Bit(m.ite_raw(c, *x, *y)),
        (CVal::Pair(a1, a2), CVal::Pair(b1, b2)) => {
            CVal::Pair(Rc::new(mux(m, c, a1, b1)), Rc::new(mux(m, c, a2, b2)))
        }
        _ => unreachable!("typechecked"),
    }
}

fn comp(e: &CoreExpr, m: &mut BddManager, env: &mut ScopedEnv<CVal>) -> CVal {
    let mut bound = Vec::new();
    let mut cur = e;
    while let CoreExpr::Let(x, e1, e2) = cur {
        let v = comp(e1, m, env);
        env.push(x, v);
        bound.push(x);
        cur = e2;
    }
    let out = match cur {
        CoreExpr::Var(x) => env.get(x).expect("typechecked").clone(),
        CoreExpr::Const(v) => constant(v),
        CoreExpr::Pair(a, b) => CVal::Pair(Rc::new(comp(a, m, env)), Rc::new(comp(b, m, env))),
        CoreExpr::Fst(a) | CoreExpr::Snd(a) => match comp(a, m, env) {
            CVal::Pair(l, r) => {
                let part = if matches!(cur, CoreExpr::Fst(_)) {
                    l
                } else {
                    r
                };
                (*part).clone()
            }
            CVal::Bit(_) => unreachable!("typechecked"),
        },
        CoreExpr::If(c, a, b) => {
            let CVal::Bit(c) = comp(c, m, env) else {
                unreachable!("typechecked")
            };
            let va = comp(a, m, env);
            let vb = comp(b, m, env);
            mux(m, c, &va, &vb)
        }
        CoreExpr::Flip(t) => CVal::Bit(m.fresh_var_raw(*t)),
        CoreExpr::Let(..) => unreachable!("let spine consumed above"),
    };
    for x in bound.into_iter().rev() {
        env.pop(x);
    }
    out
}

impl CompiledProgram {
    /// BDD that is true exactly when the program outputs `v`. Only the bits
    /// that identify `v` are constrained, so placeholder slots are free.
    pub fn indicator(&mut self, v: &SurfaceValue) -> Result<Bdd> {
        let bits = self.shape.relevant_bits(v)?;
        let mut acc = TRUE;
        for (i, b) in bits {
            let root = self.manager.own(self.roots[i])?;
            let lit = if b { root } else { self.manager.not_raw(root) };
            acc = self.manager.and_raw(acc, lit);
            if acc == FALSE {
                break;
            }
        }
        Ok(Bdd {
            node: acc,
            mgr: manager_id(&self.manager),
        })
    }

    /// Indicator of a core value.
    pub fn indicator_core(&mut self, v: &CoreValue) -> Result<Bdd> {
        self.indicator(&SurfaceValue::from_core(v))
    }

    /// Internal nodes shared by all output BDDs.
    pub fn node_count(&self) -> usize {
        self.manager
            .shared_node_count(&self.roots)
            .expect("own roots")
    }

    pub fn flip_count(&self) -> usize {
        self.manager.var_count()
    }

    pub fn to_dot(&self, table: Option<&WeightTable>) -> Result<String> {
        self.manager.to_dot(&self.roots, table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightId;

    #[test]
    fn shared_weight_program_has_three_nodes() {
        let th = WeightId(0);
        let e = CoreExpr::let_(
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
        );
        let c = compile(&e).unwrap();
        assert_eq!(c.roots.len(), 1);
        assert_eq!(c.node_count(), 3);
        assert_eq!(c.flip_count(), 3);
        assert_eq!(c.weights, vec![th]);
    }

    #[test]
    fn projections_and_constants() {
        let e = CoreExpr::let_(
            "p",
            CoreExpr::pair(CoreExpr::flip(0.5), CoreExpr::ff()),
            CoreExpr::pair(
                CoreExpr::snd(CoreExpr::var("p")),
                CoreExpr::fst(CoreExpr::var("p")),
            ),
        );
        let c = compile(&e).unwrap();
        assert!(c.roots[0].is_false());
        assert_eq!(c.node_count(), 1);
    }
}
