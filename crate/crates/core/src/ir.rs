//! Core probabilistic language: a first-order, loop-free language over
//! Booleans and pairs whose only source of randomness is `flip`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::weights::{WeightAssignment, WeightId, WeightTable};

pub type Name = Arc<str>;

/// Default limit on the number of syntactic flips the enumeration oracle
/// accepts.
pub const DEFAULT_FLIP_BUDGET: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CoreType {
    Bool,
    Product(Box<CoreType>, Box<CoreType>),
}

impl CoreType {
    pub fn product(a: CoreType, b: CoreType) -> Self {
        CoreType::Product(Box::new(a), Box::new(b))
    }

    /// Number of Boolean leaves.
    pub fn width(&self) -> usize {
        match self {
            CoreType::Bool => 1,
            CoreType::Product(a, b) => a.width() + b.width(),
        }
    }
}

impl fmt::Display for CoreType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreType::Bool => write!(f, "Bool"),
            CoreType::Product(a, b) => write!(f, "({a} * {b})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoreValue {
    Bool(bool),
    Pair(Box<CoreValue>, Box<CoreValue>),
}

impl CoreValue {
    pub fn pair(a: CoreValue, b: CoreValue) -> Self {
        CoreValue::Pair(Box::new(a), Box::new(b))
    }

    pub fn ty(&self) -> CoreType {
        match self {
            CoreValue::Bool(_) => CoreType::Bool,
            CoreValue::Pair(a, b) => CoreType::product(a.ty(), b.ty()),
        }
    }

    /// Leaves in left-to-right order.
    pub fn bits(&self) -> Vec<bool> {
        let mut out = Vec::new();
        fn go(v: &CoreValue, out: &mut Vec<bool>) {
            match v {
                CoreValue::Bool(b) => out.push(*b),
                CoreValue::Pair(a, b) => {
                    go(a, out);
                    go(b, out);
                }
            }
        }
        go(self, &mut out);
        out
    }
}

impl fmt::Display for CoreValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreValue::Bool(true) => write!(f, "true"),
            CoreValue::Bool(false) => write!(f, "false"),
            CoreValue::Pair(a, b) => write!(f, "(tuple {a} {b})"),
        }
    }
}

/// Probability argument of a flip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NumericTerm {
    Constant(f64),
    Symbolic(WeightId),
}

impl NumericTerm {
    pub fn eval(&self, w: &WeightAssignment) -> f64 {
        match *self {
            NumericTerm::Constant(c) => c,
            NumericTerm::Symbolic(id) => w.get(id),
        }
    }
}

#[derive(Debug, PartialEq)]
pub enum CoreExpr {
    Var(Name),
    Const(CoreValue),
    Pair(Box<CoreExpr>, Box<CoreExpr>),
    /// Projection; the argument must be atomic.
    Fst(Box<CoreExpr>),
    Snd(Box<CoreExpr>),
    Let(Name, Box<CoreExpr>, Box<CoreExpr>),
    /// Conditional; the guard must be atomic.
    If(Box<CoreExpr>, Box<CoreExpr>, Box<CoreExpr>),
    Flip(NumericTerm),
}

impl Clone for CoreExpr {
    fn clone(&self) -> Self {
        // Lowered programs are long let spines, so the spine is cloned
        // iteratively.
        let mut spine = Vec::new();
        let mut cur = self;
        while let CoreExpr::Let(x, e1, e2) = cur {
            spine.push((x.clone(), e1.shallow_clone()));
            cur = e2;
        }
        let mut out = cur.shallow_clone();
        for (x, e1) in spine.into_iter().rev() {
            out = CoreExpr::Let(x, Box::new(e1), Box::new(out));
        }
        out
    }
}

impl CoreExpr {
    fn shallow_clone(&self) -> CoreExpr {
        match self {
            CoreExpr::Var(x) => CoreExpr::Var(x.clone()),
            CoreExpr::Const(v) => CoreExpr::Const(v.clone()),
            CoreExpr::Pair(a, b) => CoreExpr::Pair(a.clone(), b.clone()),
            CoreExpr::Fst(a) => CoreExpr::Fst(a.clone()),
            CoreExpr::Snd(a) => CoreExpr::Snd(a.clone()),
            CoreExpr::Let(x, a, b) => CoreExpr::Let(x.clone(), a.clone(), b.clone()),
            CoreExpr::If(c, a, b) => CoreExpr::If(c.clone(), a.clone(), b.clone()),
            CoreExpr::Flip(t) => CoreExpr::Flip(*t),
        }
    }

    fn placeholder() -> CoreExpr {
        CoreExpr::Const(CoreValue::Bool(false))
    }

    fn take_children(&mut self, out: &mut Vec<CoreExpr>) {
        let mut take =
            |b: &mut Box<CoreExpr>| out.push(std::mem::replace(&mut **b, CoreExpr::placeholder()));
        match self {
            CoreExpr::Var(_) | CoreExpr::Const(_) | CoreExpr::Flip(_) => {}
            CoreExpr::Fst(a) | CoreExpr::Snd(a) => take(a),
            CoreExpr::Pair(a, b) | CoreExpr::Let(_, a, b) => {
                take(a);
                take(b);
            }
            CoreExpr::If(c, a, b) => {
                take(c);
                take(a);
                take(b);
            }
        }
    }
}

impl Drop for CoreExpr {
    fn drop(&mut self) {
        let mut stack = Vec::new();
        self.take_children(&mut stack);
        while let Some(mut e) = stack.pop() {
            e.take_children(&mut stack);
        }
    }
}

// Constructors.
impl CoreExpr {
    pub fn var(x: &str) -> Self {
        CoreExpr::Var(x.into())
    }
    pub fn tt() -> Self {
        CoreExpr::Const(CoreValue::Bool(true))
    }
    pub fn ff() -> Self {
        CoreExpr::Const(CoreValue::Bool(false))
    }
    pub fn flip(c: f64) -> Self {
        CoreExpr::Flip(NumericTerm::Constant(c))
    }
    pub fn flip_sym(id: WeightId) -> Self {
        CoreExpr::Flip(NumericTerm::Symbolic(id))
    }
    pub fn pair(a: CoreExpr, b: CoreExpr) -> Self {
        CoreExpr::Pair(Box::new(a), Box::new(b))
    }
    pub fn fst(a: CoreExpr) -> Self {
        CoreExpr::Fst(Box::new(a))
    }
    pub fn snd(a: CoreExpr) -> Self {
        CoreExpr::Snd(Box::new(a))
    }
    pub fn let_(x: &str, e1: CoreExpr, e2: CoreExpr) -> Self {
        CoreExpr::Let(x.into(), Box::new(e1), Box::new(e2))
    }
    pub fn ite(c: CoreExpr, a: CoreExpr, b: CoreExpr) -> Self {
        CoreExpr::If(Box::new(c), Box::new(a), Box::new(b))
    }

    fn is_atomic(&self) -> bool {
        matches!(self, CoreExpr::Var(_) | CoreExpr::Const(_))
    }

    /// Number of syntactic flips.
    pub fn flip_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if matches!(e, CoreExpr::Flip(_)) {
                n += 1;
            }
        });
        n
    }

    /// Pre-order traversal without recursion on the host stack.
    pub fn visit(&self, f: &mut impl FnMut(&CoreExpr)) {
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            f(e);
            match e {
                CoreExpr::Var(_) | CoreExpr::Const(_) | CoreExpr::Flip(_) => {}
                CoreExpr::Fst(a) | CoreExpr::Snd(a) => stack.push(a),
                CoreExpr::Pair(a, b) | CoreExpr::Let(_, a, b) => {
                    stack.push(b);
                    stack.push(a);
                }
                CoreExpr::If(c, a, b) => {
                    stack.push(b);
                    stack.push(a);
                    stack.push(c);
                }
            }
        }
    }

    /// Renders the expression in the surface s-expression syntax, naming
    /// symbolic weights through `table`.
    pub fn to_surface(&self, table: &WeightTable) -> String {
        let mut out = String::new();
        self.write_surface(table, &mut out);
        out
    }

    fn write_surface(&self, table: &WeightTable, out: &mut String) {
        match self {
            CoreExpr::Var(x) => out.push_str(x),
            CoreExpr::Const(v) => {
                let _ = write!(out, "{v}");
            }
            CoreExpr::Pair(a, b) => {
                out.push_str("(tuple ");
                a.write_surface(table, out);
                out.push(' ');
                b.write_surface(table, out);
                out.push(')');
            }
            CoreExpr::Fst(a) | CoreExpr::Snd(a) => {
                out.push_str(if matches!(self, CoreExpr::Fst(_)) {
                    "(fst "
                } else {
                    "(snd "
                });
                a.write_surface(table, out);
                out.push(')');
            }
            CoreExpr::Let(x, a, b) => {
                let _ = write!(out, "(let (({x} ");
                a.write_surface(table, out);
                out.push_str(")) ");
                b.write_surface(table, out);
                out.push(')');
            }
            CoreExpr::If(c, a, b) => {
                out.push_str("(if ");
                c.write_surface(table, out);
                out.push(' ');
                a.write_surface(table, out);
                out.push(' ');
                b.write_surface(table, out);
                out.push(')');
            }
            CoreExpr::Flip(NumericTerm::Constant(c)) => {
                let _ = write!(out, "(flip {c:?})");
            }
            CoreExpr::Flip(NumericTerm::Symbolic(id)) => {
                let _ = write!(out, "(flip (theta {}))", table.name(*id));
            }
        }
    }
}

/// Lexically scoped environment with innermost-wins shadowing.
pub(crate) struct ScopedEnv<V> {
    map: FxHashMap<Name, Vec<V>>,
}

impl<V> ScopedEnv<V> {
    pub(crate) fn new() -> Self {
        ScopedEnv {
            map: FxHashMap::default(),
        }
    }
    pub(crate) fn push(&mut self, x: &Name, v: V) {
        self.map.entry(x.clone()).or_default().push(v);
    }
    pub(crate) fn pop(&mut self, x: &Name) {
        if let Some(stack) = self.map.get_mut(x) {
            stack.pop();
        }
    }
    pub(crate) fn get(&self, x: &str) -> Option<&V> {
        self.map.get(x).and_then(|s| s.last())
    }
}

/// Type of a closed, well-formed core expression.
///
/// Rejects unbound variables, non-Boolean guards, projections of
/// non-products, non-atomic guard or projection arguments, mismatched
/// branch types, and constant flip arguments outside `[0, 1]`.
pub fn typecheck(e: &CoreExpr) -> Result<CoreType> {
    let mut env = ScopedEnv::new();
    check(e, &mut env)
}

fn check(e: &CoreExpr, env: &mut ScopedEnv<CoreType>) -> Result<CoreType> {
    // Walk the let spine iteratively; only bound expressions recurse.
    let mut bound: Vec<&Name> = Vec::new();
    let mut cur = e;
    let result = loop {
        match cur {
            CoreExpr::Let(x, e1, e2) => {
                let t = match check(e1, env) {
                    Ok(t) => t,
                    Err(err) => break Err(err),
                };
                env.push(x, t);
                bound.push(x);
                cur = e2;
            }
            other => break check_non_let(other, env),
        }
    };
    for x in bound.into_iter().rev() {
        env.pop(x);
    }
    result
}

fn check_non_let(e: &CoreExpr, env: &mut ScopedEnv<CoreType>) -> Result<CoreType> {
    match e {
        CoreExpr::Var(x) => env
            .get(x)
            .cloned()
            .ok_or_else(|| Error::Type(format!("unbound variable `{x}`"))),
        CoreExpr::Const(v) => Ok(v.ty()),
        CoreExpr::Pair(a, b) => Ok(CoreType::product(check(a, env)?, check(b, env)?)),
        CoreExpr::Fst(a) | CoreExpr::Snd(a) => {
            if !a.is_atomic() {
                return Err(Error::Type(
                    "projection argument must be a variable or constant".into(),
                ));
            }
            match check(a, env)? {
                CoreType::Product(l, r) => Ok(if matches!(e, CoreExpr::Fst(_)) {
                    *l
                } else {
                    *r
                }),
                t => Err(Error::Type(format!("projection of non-product type {t}"))),
            }
        }
        CoreExpr::If(c, a, b) => {
            if !c.is_atomic() {
                return Err(Error::Type(
                    "if guard must be a variable or constant".into(),
                ));
            }
            let tc = check(c, env)?;
            if tc != CoreType::Bool {
                return Err(Error::Type(format!(
                    "if guard has type {tc}, expected Bool"
                )));
            }
            let ta = check(a, env)?;
            let tb = check(b, env)?;
            if ta != tb {
                return Err(Error::Type(format!("if branches have types {ta} and {tb}")));
            }
            Ok(ta)
        }
        CoreExpr::Flip(NumericTerm::Constant(c)) => {
            if (0.0..=1.0).contains(c) {
                Ok(CoreType::Bool)
            } else {
                Err(Error::Type(format!(
                    "flip probability {c} is outside [0, 1]"
                )))
            }
        }
        CoreExpr::Flip(NumericTerm::Symbolic(_)) => Ok(CoreType::Bool),
        CoreExpr::Let(..) => check(e, env),
    }
}

/// Distinct symbolic weights of `e` in first-occurrence order.
pub fn collect_weights(e: &CoreExpr) -> Vec<WeightId> {
    let mut seen = rustc_hash::FxHashSet::default();
    let mut out = Vec::new();
    e.visit(&mut |e| {
        if let CoreExpr::Flip(NumericTerm::Symbolic(id)) = e {
            if seen.insert(*id) {
                out.push(*id);
            }
        }
    });
    out
}

/// Finite distribution over core values.
pub type CoreDistribution = BTreeMap<CoreValue, f64>;

/// Reference semantics by exhaustive enumeration: every `let` sums over the
/// outcomes of its bound expression. Exponential in the number of flips, so
/// programs with more than `flip_budget` syntactic flips are rejected.
pub fn enumerate_semantics(
    e: &CoreExpr,
    w: &WeightAssignment,
    flip_budget: usize,
) -> Result<CoreDistribution> {
    typecheck(e)?;
    let flips = e.flip_count();
    if flips > flip_budget {
        return Err(Error::Budget(format!(
            "program has {flips} flips, enumeration budget is {flip_budget}"
        )));
    }
    let needed = collect_weights(e)
        .iter()
        .map(|id| id.index() + 1)
        .max()
        .unwrap_or(0);
    w.check(needed)?;
    let mut env = ScopedEnv::new();
    Ok(denote(e, w, &mut env))
}

fn denote(e: &CoreExpr, w: &WeightAssignment, env: &mut ScopedEnv<CoreValue>) -> CoreDistribution {
    let mut out = CoreDistribution::new();
    match e {
        CoreExpr::Var(x) => {
            out.insert(env.get(x).expect("typechecked").clone(), 1.0);
        }
        CoreExpr::Const(v) => {
            out.insert(v.clone(), 1.0);
        }
        CoreExpr::Flip(t) => {
            let p = t.eval(w);
            out.insert(CoreValue::Bool(true), p);
            *out.entry(CoreValue::Bool(false)).or_insert(0.0) += 1.0 - p;
        }
        CoreExpr::Pair(a, b) => {
            let da = denote(a, w, env);
            let db = denote(b, w, env);
            for (va, pa) in &da {
                for (vb, pb) in &db {
                    *out.entry(CoreValue::pair(va.clone(), vb.clone()))
                        .or_insert(0.0) += pa * pb;
                }
            }
        }
        CoreExpr::Fst(a) | CoreExpr::Snd(a) => {
            for (v, p) in denote(a, w, env) {
                let CoreValue::Pair(l, r) = v else {
                    unreachable!("typechecked")
                };
                let part = if matches!(e, CoreExpr::Fst(_)) {
                    *l
                } else {
                    *r
                };
                *out.entry(part).or_insert(0.0) += p;
            }
        }
        CoreExpr::If(c, a, b) => {
            for (vc, pc) in denote(c, w, env) {
                let branch = if vc == CoreValue::Bool(true) { a } else { b };
                for (v, p) in denote(branch, w, env) {
                    *out.entry(v).or_insert(0.0) += pc * p;
                }
            }
        }
        CoreExpr::Let(x, e1, e2) => {
            for (v1, p1) in denote(e1, w, env) {
                env.push(x, v1);
                for (v2, p2) in denote(e2, w, env) {
                    *out.entry(v2).or_insert(0.0) += p1 * p2;
                }
                env.pop(x);
            }
        }
    }
    out
}

/// Lifted semantics: `e` evaluated with every symbolic weight replaced by
/// its value in `w`.
pub fn lifted_semantics(e: &CoreExpr, w: &WeightAssignment) -> Result<CoreDistribution> {
    enumerate_semantics(e, w, DEFAULT_FLIP_BUDGET)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig12(theta: WeightId) -> CoreExpr {
        CoreExpr::let_(
            "x",
            CoreExpr::flip_sym(theta),
            CoreExpr::let_(
                "y",
                CoreExpr::ite(
                    CoreExpr::var("x"),
                    CoreExpr::flip_sym(theta),
                    CoreExpr::flip(0.9),
                ),
                CoreExpr::var("y"),
            ),
        )
    }

    #[test]
    fn pair_of_flip_and_constant() {
        let e = CoreExpr::pair(CoreExpr::flip(0.5), CoreExpr::ff());
        assert_eq!(
            typecheck(&e).unwrap(),
            CoreType::product(CoreType::Bool, CoreType::Bool)
        );
        let d = enumerate_semantics(&e, &WeightAssignment(vec![]), 20).unwrap();
        let f = CoreValue::Bool(false);
        let t = CoreValue::Bool(true);
        assert_eq!(d.len(), 2);
        assert_eq!(d[&CoreValue::pair(t, f.clone())], 0.5);
        assert_eq!(d[&CoreValue::pair(f.clone(), f)], 0.5);
    }

    #[test]
    fn shared_weight_program() {
        let e = fig12(WeightId(0));
        let d = enumerate_semantics(&e, &WeightAssignment(vec![0.5]), 20).unwrap();
        assert!((d[&CoreValue::Bool(true)] - 0.7).abs() < 1e-12);
        let d = enumerate_semantics(&e, &WeightAssignment(vec![0.3]), 20).unwrap();
        assert!((d[&CoreValue::Bool(true)] - (0.09 + 0.9 * 0.7)).abs() < 1e-12);
    }

    #[test]
    fn shadowing_picks_innermost_binding() {
        let e = CoreExpr::let_(
            "x",
            CoreExpr::tt(),
            CoreExpr::let_("x", CoreExpr::ff(), CoreExpr::var("x")),
        );
        let d = enumerate_semantics(&e, &WeightAssignment(vec![]), 20).unwrap();
        assert_eq!(d[&CoreValue::Bool(false)], 1.0);
    }

    #[test]
    fn rejects_ill_formed_programs() {
        assert!(typecheck(&CoreExpr::var("x")).is_err());
        assert!(typecheck(&CoreExpr::fst(CoreExpr::tt())).is_err());
        assert!(typecheck(&CoreExpr::fst(CoreExpr::pair(
            CoreExpr::tt(),
            CoreExpr::tt()
        )))
        .is_err());
        assert!(typecheck(&CoreExpr::ite(
            CoreExpr::flip(0.5),
            CoreExpr::tt(),
            CoreExpr::ff()
        ))
        .is_err());
        assert!(typecheck(&CoreExpr::ite(
            CoreExpr::tt(),
            CoreExpr::tt(),
            CoreExpr::pair(CoreExpr::tt(), CoreExpr::tt())
        ))
        .is_err());
        assert!(typecheck(&CoreExpr::flip(1.5)).is_err());
    }

    #[test]
    fn enumeration_budget_and_arity() {
        let mut e = CoreExpr::flip(0.5);
        for i in 0..21 {
            e = CoreExpr::let_(&format!("x{i}"), CoreExpr::flip(0.5), e);
        }
        assert!(matches!(
            enumerate_semantics(&e, &WeightAssignment(vec![]), 20),
            Err(Error::Budget(_))
        ));
        let e = fig12(WeightId(1));
        assert!(matches!(
            enumerate_semantics(&e, &WeightAssignment(vec![0.5]), 20),
            Err(Error::WeightArity { .. })
        ));
    }

    #[test]
    fn deep_let_spine_is_handled_without_recursion() {
        let mut e = CoreExpr::var("x0");
        for i in 0..200_000 {
            e = CoreExpr::let_(&format!("x{i}"), CoreExpr::tt(), e);
        }
        assert_eq!(typecheck(&e).unwrap(), CoreType::Bool);
        let c = e.clone();
        drop(e);
        drop(c);
    }

    #[test]
    fn weights_in_first_occurrence_order() {
        let e = CoreExpr::let_(
            "a",
            CoreExpr::flip_sym(WeightId(3)),
            CoreExpr::pair(
                CoreExpr::flip_sym(WeightId(1)),
                CoreExpr::flip_sym(WeightId(3)),
            ),
        );
        assert_eq!(collect_weights(&e), vec![WeightId(3), WeightId(1)]);
    }
}
