//! Evaluation of surface programs over symbolic bit-vector values.
//!
//! One interpreter serves two purposes. With the symbolic [`Builder`]
//! backend every flip becomes a fresh Boolean variable and every
//! data-dependent choice is resolved by evaluating all alternatives and
//! multiplexing their results bit by bit; the recorded definitions form the
//! straight-line core program. With a concrete backend flips are resolved
//! immediately, every bit is a constant, and the same code runs as an
//! ordinary sampler that only evaluates the branches it takes.

use std::rc::Rc;
use std::sync::Arc;

use rand::Rng;
use rustc_hash::FxHashMap;

use super::ast::*;
use super::value::{AdtShape, SurfaceValue, TypeShape};
use crate::error::{Error, Pos, Result};
use crate::ir::{Name, NumericTerm};
use crate::weights::{WeightAssignment, WeightId, WeightTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum Bit {
    Const(bool),
    Var(u32),
}

const T: Bit = Bit::Const(true);
const F: Bit = Bit::Const(false);

impl Bit {
    fn as_const(self) -> Option<bool> {
        match self {
            Bit::Const(b) => Some(b),
            Bit::Var(_) => None,
        }
    }
}

/// Probability of a flip or weight of a choice, before normalisation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum WeightTerm {
    Const(f64),
    Param(WeightId),
    /// `1 - θ`.
    Complement(WeightId),
}

#[derive(Clone, Debug)]
pub(crate) enum SymVal {
    Bool(Bit),
    Nat(Rc<NatVal>),
    Tuple(Rc<Vec<SymVal>>),
    Adt(Rc<AdtVal>),
    Weight(WeightTerm),
}

/// A number in one-hot form: `hot[k]` holds exactly when the value is `k`.
/// Arithmetic on this form stays small when the operands depend on
/// different random choices, unlike ripple-carry circuits over binary
/// digits. `width` is the number of binary digits used when the value is
/// laid out as output bits.
#[derive(Debug)]
pub(crate) struct NatVal {
    width: u32,
    /// Non-empty; entries past the end are false.
    hot: Vec<Bit>,
}

/// Largest one-hot vector the interpreter will build.
const MAX_NAT_VALUES: usize = 1 << 12;

fn bits_for(n: u64) -> u32 {
    (64 - n.leading_zeros()).max(1)
}

#[derive(Debug)]
pub(crate) struct AdtVal {
    decl: Arc<AdtDecl>,
    /// Least significant bit first, `decl.tag_width()` bits.
    tag: Vec<Bit>,
    arms: Vec<Option<Vec<SymVal>>>,
}

/// Tuning knobs for evaluation.
#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Maximum nesting of function calls; deeper recursion is reported as
    /// unbounded.
    pub max_call_depth: usize,
    /// Maximum number of alternatives in one `backtrack`.
    pub backtrack_limit: usize,
    /// Maximum number of distinct dependency values one `freqdep` may see.
    pub dep_value_limit: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_call_depth: 256,
            backtrack_limit: 6,
            dep_value_limit: 4096,
        }
    }
}

/// Resolves flips and Boolean multiplexing.
pub(crate) trait Backend {
    /// Flip with probability `p` strictly between 0 and 1.
    fn flip_const(&mut self, p: f64) -> Result<Bit>;
    fn flip_param(&mut self, id: WeightId, table: &WeightTable) -> Result<Bit>;
    /// `if c then a else b` for a non-constant `c`.
    fn ite(&mut self, c: Bit, a: Bit, b: Bit) -> Bit;
}

/// A definition in the straight-line program recorded by [`Builder`].
#[derive(Clone, Debug)]
pub(crate) enum Def {
    Flip(NumericTerm),
    Ite(Bit, Bit, Bit),
}

/// Symbolic backend: records flips and multiplexers as definitions.
#[derive(Default)]
pub(crate) struct Builder {
    pub defs: Vec<Def>,
    memo: FxHashMap<(Bit, Bit, Bit), Bit>,
}

impl Builder {
    fn push(&mut self, d: Def) -> Bit {
        self.defs.push(d);
        Bit::Var(self.defs.len() as u32 - 1)
    }
}

impl Backend for Builder {
    fn flip_const(&mut self, p: f64) -> Result<Bit> {
        Ok(self.push(Def::Flip(NumericTerm::Constant(p))))
    }

    fn flip_param(&mut self, id: WeightId, _: &WeightTable) -> Result<Bit> {
        Ok(self.push(Def::Flip(NumericTerm::Symbolic(id))))
    }

    fn ite(&mut self, c: Bit, mut a: Bit, mut b: Bit) -> Bit {
        if a == c {
            a = T;
        }
        if b == c {
            b = F;
        }
        if a == b {
            return a;
        }
        if a == T && b == F {
            return c;
        }
        if let Some(&r) = self.memo.get(&(c, a, b)) {
            return r;
        }
        let r = self.push(Def::Ite(c, a, b));
        self.memo.insert((c, a, b), r);
        r
    }
}

/// Concrete backend drawing flips from a random number generator.
pub(crate) struct Sampling<'w, R> {
    pub rng: R,
    pub weights: &'w WeightAssignment,
}

impl<R: Rng> Backend for Sampling<'_, R> {
    fn flip_const(&mut self, p: f64) -> Result<Bit> {
        Ok(Bit::Const(self.rng.gen::<f64>() < p))
    }

    fn flip_param(&mut self, id: WeightId, table: &WeightTable) -> Result<Bit> {
        let p = self
            .weights
            .0
            .get(id.index())
            .copied()
            .unwrap_or_else(|| table.init_value(id));
        Ok(Bit::Const(self.rng.gen::<f64>() < p))
    }

    fn ite(&mut self, _: Bit, _: Bit, _: Bit) -> Bit {
        unreachable!("concrete evaluation never multiplexes on a variable")
    }
}

/// Concrete backend replaying a fixed sequence of flip outcomes.
pub(crate) struct Replay<'a> {
    pub outcomes: &'a [bool],
    pub next: usize,
}

impl Backend for Replay<'_> {
    fn flip_const(&mut self, _: f64) -> Result<Bit> {
        let b = *self
            .outcomes
            .get(self.next)
            .ok_or_else(|| Error::Eval("ran out of flip outcomes".into()))?;
        self.next += 1;
        Ok(Bit::Const(b))
    }

    fn flip_param(&mut self, _: WeightId, _: &WeightTable) -> Result<Bit> {
        self.flip_const(0.5)
    }

    fn ite(&mut self, _: Bit, _: Bit, _: Bit) -> Bit {
        unreachable!("concrete evaluation never multiplexes on a variable")
    }
}

/// Concrete backend that follows a prescribed prefix of flip outcomes and
/// records the probability of the path taken.
pub(crate) struct Explore<'a> {
    pub prefix: &'a [bool],
    pub next: usize,
    pub prob: f64,
    pub weights: &'a WeightAssignment,
    pub exhausted: bool,
}

impl Explore<'_> {
    fn take(&mut self, p: f64) -> Result<Bit> {
        match self.prefix.get(self.next) {
            Some(&b) => {
                self.next += 1;
                self.prob *= if b { p } else { 1.0 - p };
                Ok(Bit::Const(b))
            }
            None => {
                self.exhausted = true;
                Err(Error::Eval("flip prefix exhausted".into()))
            }
        }
    }
}

impl Backend for Explore<'_> {
    fn flip_const(&mut self, p: f64) -> Result<Bit> {
        self.take(p)
    }

    fn flip_param(&mut self, id: WeightId, table: &WeightTable) -> Result<Bit> {
        let p = self
            .weights
            .0
            .get(id.index())
            .copied()
            .unwrap_or_else(|| table.init_value(id));
        self.take(p)
    }

    fn ite(&mut self, _: Bit, _: Bit, _: Bit) -> Bit {
        unreachable!("concrete evaluation never multiplexes on a variable")
    }
}

/// Concrete backend for deterministic code; any flip is an error.
pub(crate) struct NoFlips;

impl Backend for NoFlips {
    fn flip_const(&mut self, _: f64) -> Result<Bit> {
        Err(Error::Eval(
            "deterministic function performed a flip".into(),
        ))
    }

    fn flip_param(&mut self, _: WeightId, _: &WeightTable) -> Result<Bit> {
        self.flip_const(0.5)
    }

    fn ite(&mut self, _: Bit, _: Bit, _: Bit) -> Bit {
        unreachable!("concrete evaluation never multiplexes on a variable")
    }
}

type Env = Vec<(Name, SymVal)>;

fn lookup<'e>(env: &'e Env, x: &str) -> Option<&'e SymVal> {
    env.iter().rev().find(|(n, _)| &**n == x).map(|(_, v)| v)
}

fn eval_err<T>(pos: Pos, msg: impl std::fmt::Display) -> Result<T> {
    Err(Error::Eval(format!("{pos}: {msg}")))
}

pub(crate) struct Interp<'p, B> {
    prog: &'p Program,
    pub backend: B,
    pub table: &'p mut WeightTable,
    opts: EvalOptions,
    depth: usize,
    option: Arc<AdtDecl>,
}

impl<'p, B: Backend> Interp<'p, B> {
    pub fn new(
        prog: &'p Program,
        backend: B,
        table: &'p mut WeightTable,
        opts: EvalOptions,
    ) -> Self {
        let option = prog.adt("Option").expect("built-in option type").clone();
        Interp {
            prog,
            backend,
            table,
            opts,
            depth: 0,
            option,
        }
    }

    // ----- Boolean helpers ------------------------------------------------

    fn ite(&mut self, c: Bit, a: Bit, b: Bit) -> Bit {
        match c {
            Bit::Const(true) => a,
            Bit::Const(false) => b,
            _ if a == b => a,
            _ if a == T && b == F => c,
            _ => self.backend.ite(c, a, b),
        }
    }

    fn not(&mut self, a: Bit) -> Bit {
        self.ite(a, F, T)
    }

    fn and(&mut self, a: Bit, b: Bit) -> Bit {
        self.ite(a, b, F)
    }

    fn or(&mut self, a: Bit, b: Bit) -> Bit {
        self.ite(a, T, b)
    }

    fn iff(&mut self, a: Bit, b: Bit) -> Bit {
        let nb = self.not(b);
        self.ite(a, b, nb)
    }

    fn flip(&mut self, w: WeightTerm) -> Result<Bit> {
        match w {
            WeightTerm::Const(p) if p <= 0.0 => Ok(F),
            WeightTerm::Const(p) if p >= 1.0 => Ok(T),
            WeightTerm::Const(p) => self.backend.flip_const(p),
            WeightTerm::Param(id) => self.backend.flip_param(id, self.table),
            WeightTerm::Complement(id) => {
                let b = self.backend.flip_param(id, self.table)?;
                Ok(self.not(b))
            }
        }
    }

    // ----- numbers --------------------------------------------------------

    fn nat_const(n: u64) -> SymVal {
        let mut hot = vec![F; n as usize + 1];
        hot[n as usize] = T;
        SymVal::Nat(Rc::new(NatVal {
            width: bits_for(n),
            hot,
        }))
    }

    /// Value of constant binary digits, least significant first.
    fn const_bits(bits: &[Bit]) -> Option<u64> {
        let mut n = 0u64;
        for (i, b) in bits.iter().enumerate() {
            match b.as_const()? {
                true if i >= 64 => return None,
                true => n |= 1 << i,
                false => {}
            }
        }
        Some(n)
    }

    fn const_nat(v: &NatVal) -> Option<u64> {
        let mut found = None;
        for (k, b) in v.hot.iter().enumerate() {
            match b.as_const()? {
                true if found.is_some() => return None,
                true => found = Some(k as u64),
                false => {}
            }
        }
        found
    }

    /// Builds a number from one-hot guards, dropping impossible high values.
    fn from_hot(mut hot: Vec<Bit>, pos: Pos) -> Result<SymVal> {
        while hot.len() > 1 && hot.last() == Some(&F) {
            hot.pop();
        }
        if hot.len() > MAX_NAT_VALUES {
            return eval_err(
                pos,
                format!("numbers above {} are not supported", MAX_NAT_VALUES - 1),
            );
        }
        let width = bits_for(hot.len() as u64 - 1);
        Ok(SymVal::Nat(Rc::new(NatVal { width, hot })))
    }

    /// One-hot form of a binary number given least significant bit first.
    fn nat_from_bits(&mut self, bits: &[Bit], pos: Pos) -> Result<SymVal> {
        let mut out: Vec<(Bit, u64)> = vec![(T, 0)];
        for (i, &b) in bits.iter().enumerate() {
            match b {
                Bit::Const(false) => {}
                Bit::Const(true) => out.iter_mut().for_each(|(_, n)| *n |= 1 << i),
                Bit::Var(_) => {
                    let nb = self.not(b);
                    let mut next = Vec::with_capacity(out.len() * 2);
                    for (g, n) in out {
                        next.push((self.and(g, b), n | 1 << i));
                        next.push((self.and(g, nb), n));
                    }
                    out = next;
                }
            }
        }
        let len = out.iter().map(|&(_, n)| n as usize + 1).max().unwrap_or(1);
        if len > MAX_NAT_VALUES {
            return eval_err(
                pos,
                format!("numbers above {} are not supported", MAX_NAT_VALUES - 1),
            );
        }
        let mut hot = vec![F; len];
        for (g, n) in out {
            hot[n as usize] = self.or(hot[n as usize], g);
        }
        let width = bits
            .iter()
            .rposition(|&b| b != F)
            .map_or(1, |i| i as u32 + 1);
        let v = Self::from_hot(hot, pos)?;
        let SymVal::Nat(n) = &v else { unreachable!() };
        Ok(SymVal::Nat(Rc::new(NatVal {
            width: width.max(n.width),
            hot: n.hot.clone(),
        })))
    }

    /// Binary digits of `v`, least significant first.
    fn nat_bits(&mut self, v: &NatVal) -> Vec<Bit> {
        (0..v.width)
            .map(|i| {
                let mut bit = F;
                for (k, &g) in v.hot.iter().enumerate() {
                    if k >> i & 1 == 1 && g != F {
                        bit = self.or(bit, g);
                    }
                }
                bit
            })
            .collect()
    }

    /// Combines two numbers value by value with `f`.
    fn nat_combine(
        &mut self,
        a: &NatVal,
        b: &NatVal,
        pos: Pos,
        f: impl Fn(u64, u64) -> u64,
    ) -> Result<SymVal> {
        let mut hot: Vec<Bit> = Vec::new();
        for (i, &x) in a.hot.iter().enumerate() {
            if x == F {
                continue;
            }
            for (j, &y) in b.hot.iter().enumerate() {
                if y == F {
                    continue;
                }
                let k = f(i as u64, j as u64) as usize;
                if k >= MAX_NAT_VALUES {
                    return eval_err(
                        pos,
                        format!("numbers above {} are not supported", MAX_NAT_VALUES - 1),
                    );
                }
                if hot.len() <= k {
                    hot.resize(k + 1, F);
                }
                let g = self.and(x, y);
                hot[k] = self.or(hot[k], g);
            }
        }
        if hot.is_empty() {
            hot.push(T);
        }
        Self::from_hot(hot, pos)
    }

    fn nat_lt(&mut self, a: &NatVal, b: &NatVal) -> Bit {
        if let (Some(x), Some(y)) = (Self::const_nat(a), Self::const_nat(b)) {
            return Bit::Const(x < y);
        }
        let mut below = F;
        let mut lt = F;
        for (j, &y) in b.hot.iter().enumerate() {
            if y != F && below != F {
                let g = self.and(below, y);
                lt = self.or(lt, g);
            }
            if let Some(&x) = a.hot.get(j) {
                below = self.or(below, x);
            }
        }
        lt
    }

    fn nat_eq(&mut self, a: &NatVal, b: &NatVal) -> Bit {
        if let (Some(x), Some(y)) = (Self::const_nat(a), Self::const_nat(b)) {
            return Bit::Const(x == y);
        }
        let mut eq = F;
        for (&x, &y) in a.hot.iter().zip(&b.hot) {
            let g = self.and(x, y);
            eq = self.or(eq, g);
        }
        eq
    }

    fn nat_eq_const(&mut self, a: &NatVal, n: u64) -> Bit {
        a.hot.get(n as usize).copied().unwrap_or(F)
    }

    fn fit_nat(&self, v: &SymVal, width: u32, pos: Pos) -> Result<SymVal> {
        let SymVal::Nat(n) = v else {
            return eval_err(pos, "expected a number");
        };
        let cap = 1usize << width.min(12);
        if n.hot.len() > cap && n.hot[cap..].iter().any(|&b| b != F) {
            return eval_err(pos, format!("value may not fit in a {width}-bit field"));
        }
        let hot = n.hot.iter().copied().take(cap).collect();
        Ok(SymVal::Nat(Rc::new(NatVal { width, hot })))
    }

    // ----- structural operations -------------------------------------------

    fn tag_const(width: u32, n: usize) -> Vec<Bit> {
        (0..width).map(|i| Bit::Const(n >> i & 1 == 1)).collect()
    }

    fn tag_is(&mut self, a: &AdtVal, idx: usize) -> Bit {
        let mut eq = T;
        for (i, &b) in a.tag.iter().enumerate() {
            let want = (idx + 1) >> i & 1 == 1;
            let lit = if want { b } else { self.not(b) };
            eq = self.and(eq, lit);
        }
        eq
    }

    fn make_adt(decl: Arc<AdtDecl>, idx: usize, fields: Vec<SymVal>) -> SymVal {
        let mut arms = vec![None; decl.ctors.len()];
        arms[idx] = Some(fields);
        let tag = Self::tag_const(decl.tag_width(), idx + 1);
        SymVal::Adt(Rc::new(AdtVal { decl, tag, arms }))
    }

    fn none(&self) -> SymVal {
        Self::make_adt(self.option.clone(), 0, vec![])
    }

    fn zeros_like(v: &SymVal) -> SymVal {
        match v {
            SymVal::Bool(_) => SymVal::Bool(F),
            SymVal::Nat(n) => SymVal::Nat(Rc::new(NatVal {
                width: n.width,
                hot: vec![T],
            })),
            SymVal::Tuple(items) => {
                SymVal::Tuple(Rc::new(items.iter().map(Self::zeros_like).collect()))
            }
            SymVal::Adt(a) => SymVal::Adt(Rc::new(AdtVal {
                decl: a.decl.clone(),
                tag: vec![F; a.tag.len()],
                arms: a
                    .arms
                    .iter()
                    .map(|arm| {
                        arm.as_ref()
                            .map(|fs| fs.iter().map(Self::zeros_like).collect())
                    })
                    .collect(),
            })),
            SymVal::Weight(w) => SymVal::Weight(*w),
        }
    }

    /// `if c then a else b` on whole values.
    fn select(&mut self, c: Bit, a: &SymVal, b: &SymVal) -> Result<SymVal> {
        match c {
            Bit::Const(true) => return Ok(a.clone()),
            Bit::Const(false) => return Ok(b.clone()),
            _ => {}
        }
        Ok(match (a, b) {
            (SymVal::Bool(x), SymVal::Bool(y)) => SymVal::Bool(self.ite(c, *x, *y)),
            (SymVal::Nat(x), SymVal::Nat(y)) => {
                if Rc::ptr_eq(x, y) {
                    return Ok(a.clone());
                }
                let len = x.hot.len().max(y.hot.len());
                let hot = (0..len)
                    .map(|k| {
                        let p = x.hot.get(k).copied().unwrap_or(F);
                        let q = y.hot.get(k).copied().unwrap_or(F);
                        self.ite(c, p, q)
                    })
                    .collect();
                SymVal::Nat(Rc::new(NatVal {
                    width: x.width.max(y.width),
                    hot,
                }))
            }
            (SymVal::Tuple(x), SymVal::Tuple(y)) if x.len() == y.len() => {
                if Rc::ptr_eq(x, y) {
                    return Ok(a.clone());
                }
                let items = x
                    .iter()
                    .zip(y.iter())
                    .map(|(p, q)| self.select(c, p, q))
                    .collect::<Result<_>>()?;
                SymVal::Tuple(Rc::new(items))
            }
            (SymVal::Adt(x), SymVal::Adt(y)) if x.decl.name == y.decl.name => {
                if Rc::ptr_eq(x, y) {
                    return Ok(a.clone());
                }
                let tag = x
                    .tag
                    .iter()
                    .zip(&y.tag)
                    .map(|(&p, &q)| self.ite(c, p, q))
                    .collect();
                let mut arms = Vec::with_capacity(x.arms.len());
                for (p, q) in x.arms.iter().zip(&y.arms) {
                    arms.push(match (p, q) {
                        (None, None) => None,
                        (Some(p), Some(q)) => Some(
                            p.iter()
                                .zip(q)
                                .map(|(u, v)| self.select(c, u, v))
                                .collect::<Result<Vec<_>>>()?,
                        ),
                        (Some(p), None) => Some(
                            p.iter()
                                .map(|u| self.select(c, u, &Self::zeros_like(u)))
                                .collect::<Result<Vec<_>>>()?,
                        ),
                        (None, Some(q)) => Some(
                            q.iter()
                                .map(|v| self.select(c, &Self::zeros_like(v), v))
                                .collect::<Result<Vec<_>>>()?,
                        ),
                    });
                }
                SymVal::Adt(Rc::new(AdtVal {
                    decl: x.decl.clone(),
                    tag,
                    arms,
                }))
            }
            (SymVal::Weight(x), SymVal::Weight(y)) if x == y => a.clone(),
            (SymVal::Weight(_), SymVal::Weight(_)) => {
                return Err(Error::Eval(
                    "a weight cannot depend on a random choice".into(),
                ))
            }
            _ => {
                return Err(Error::Eval(
                    "branches produce values of different types".into(),
                ))
            }
        })
    }

    fn equal(&mut self, a: &SymVal, b: &SymVal) -> Result<Bit> {
        Ok(match (a, b) {
            (SymVal::Bool(x), SymVal::Bool(y)) => self.iff(*x, *y),
            (SymVal::Nat(x), SymVal::Nat(y)) => self.nat_eq(x, y),
            (SymVal::Tuple(x), SymVal::Tuple(y)) if x.len() == y.len() => {
                let mut eq = T;
                for (p, q) in x.iter().zip(y.iter()) {
                    let e = self.equal(p, q)?;
                    eq = self.and(eq, e);
                    if eq == F {
                        break;
                    }
                }
                eq
            }
            (SymVal::Adt(x), SymVal::Adt(y)) if x.decl.name == y.decl.name => {
                let mut eq = T;
                for (&p, &q) in x.tag.iter().zip(&y.tag) {
                    let e = self.iff(p, q);
                    eq = self.and(eq, e);
                }
                for (i, (p, q)) in x.arms.iter().zip(&y.arms).enumerate() {
                    if eq == F {
                        break;
                    }
                    let (Some(p), Some(q)) = (p, q) else { continue };
                    let mut fields = T;
                    for (u, v) in p.iter().zip(q) {
                        let e = self.equal(u, v)?;
                        fields = self.and(fields, e);
                    }
                    if fields == T {
                        continue;
                    }
                    let here = self.tag_is(x, i);
                    let ok = self.ite(here, fields, T);
                    eq = self.and(eq, ok);
                }
                eq
            }
            (SymVal::Weight(x), SymVal::Weight(y)) => Bit::Const(x == y),
            _ => {
                return Err(Error::Eval(
                    "cannot compare values of different types".into(),
                ))
            }
        })
    }

    // ----- conversions ------------------------------------------------------

    fn as_bit(v: &SymVal, pos: Pos) -> Result<Bit> {
        match v {
            SymVal::Bool(b) => Ok(*b),
            _ => eval_err(pos, "expected a Boolean"),
        }
    }

    fn as_nat(v: &SymVal, pos: Pos) -> Result<Rc<NatVal>> {
        match v {
            SymVal::Nat(b) => Ok(b.clone()),
            _ => eval_err(pos, "expected a number"),
        }
    }

    fn as_weight(v: &SymVal, pos: Pos) -> Result<WeightTerm> {
        let w = match v {
            SymVal::Weight(w) => *w,
            SymVal::Nat(n) => match Self::const_nat(n) {
                Some(n) => WeightTerm::Const(n as f64),
                None => return eval_err(pos, "a weight cannot depend on a random choice"),
            },
            _ => return eval_err(pos, "expected a weight"),
        };
        match w {
            WeightTerm::Const(c) if !(c >= 0.0 && c.is_finite()) => {
                eval_err(pos, format!("invalid weight {c}"))
            }
            _ => Ok(w),
        }
    }

    fn weight_label(&self, w: &WeightTerm) -> String {
        match w {
            WeightTerm::Const(c) => format!("{c}"),
            WeightTerm::Param(id) => self.table.name(*id).to_string(),
            WeightTerm::Complement(id) => format!("1-{}", self.table.name(*id)),
        }
    }

    /// Converts a constant value to a surface value.
    pub fn to_surface(v: &SymVal) -> Result<SurfaceValue> {
        let symbolic = || Error::Eval("value depends on unresolved random choices".into());
        Ok(match v {
            SymVal::Bool(b) => SurfaceValue::Bool(b.as_const().ok_or_else(symbolic)?),
            SymVal::Nat(n) => SurfaceValue::Nat(Self::const_nat(n).ok_or_else(symbolic)?),
            SymVal::Tuple(items) => {
                SurfaceValue::Tuple(items.iter().map(Self::to_surface).collect::<Result<_>>()?)
            }
            SymVal::Adt(a) => {
                let tag = Self::const_bits(&a.tag).ok_or_else(symbolic)? as usize;
                let fields = tag
                    .checked_sub(1)
                    .and_then(|i| a.arms.get(i))
                    .and_then(Option::as_ref)
                    .ok_or_else(|| {
                        Error::Eval(format!("invalid tag {tag} for type {}", a.decl.name))
                    })?;
                SurfaceValue::Ctor(
                    a.decl.ctors[tag - 1].name.clone(),
                    fields.iter().map(Self::to_surface).collect::<Result<_>>()?,
                )
            }
            SymVal::Weight(_) => return Err(Error::Eval("a weight is not a data value".into())),
        })
    }

    /// Converts a surface value of `program` into an interpreter value.
    pub fn lift_surface(&self, v: &SurfaceValue) -> Result<SymVal> {
        Ok(match v {
            SurfaceValue::Bool(b) => SymVal::Bool(Bit::Const(*b)),
            SurfaceValue::Nat(n) => Self::nat_const(*n),
            SurfaceValue::Tuple(items) => SymVal::Tuple(Rc::new(
                items
                    .iter()
                    .map(|i| self.lift_surface(i))
                    .collect::<Result<_>>()?,
            )),
            SurfaceValue::Ctor(c, args) => {
                let (decl, idx) = self
                    .prog
                    .ctor(c)
                    .ok_or_else(|| Error::Eval(format!("unknown constructor `{c}`")))?;
                let fields = &decl.ctors[idx].fields;
                if fields.len() != args.len() {
                    return Err(Error::Eval(format!(
                        "constructor `{c}` expects {} arguments",
                        fields.len()
                    )));
                }
                let mut vals = Vec::new();
                for (f, a) in fields.iter().zip(args) {
                    let v = self.lift_surface(a)?;
                    vals.push(match f {
                        FieldTy::Nat(w) => self.fit_nat(&v, *w, Pos::default())?,
                        _ => v,
                    });
                }
                Self::make_adt(decl.clone(), idx, vals)
            }
        })
    }

    /// Bit layout of a value.
    pub fn shape_of(v: &SymVal) -> Result<TypeShape> {
        Ok(match v {
            SymVal::Bool(_) => TypeShape::Bool,
            SymVal::Nat(n) => TypeShape::Nat(n.width),
            SymVal::Tuple(items) => {
                TypeShape::Tuple(items.iter().map(Self::shape_of).collect::<Result<_>>()?)
            }
            SymVal::Adt(a) => TypeShape::Adt(Arc::new(AdtShape::new(
                a.decl.name.clone(),
                a.decl.ctors.iter().map(|c| c.name.clone()).collect(),
                a.decl.tag_width(),
                a.arms
                    .iter()
                    .map(|arm| {
                        arm.as_ref()
                            .map(|fs| fs.iter().map(Self::shape_of).collect::<Result<Vec<_>>>())
                            .transpose()
                    })
                    .collect::<Result<_>>()?,
            ))),
            SymVal::Weight(_) => {
                return Err(Error::Lower("a program cannot output a weight".into()))
            }
        })
    }

    /// Bits of a value in the order given by [`Self::shape_of`]: numbers
    /// and tags most significant bit first.
    pub fn flatten(&mut self, v: &SymVal, out: &mut Vec<Bit>) {
        match v {
            SymVal::Bool(b) => out.push(*b),
            SymVal::Nat(n) => {
                let bits = self.nat_bits(n);
                out.extend(bits.iter().rev())
            }
            SymVal::Tuple(items) => items.iter().for_each(|i| self.flatten(i, out)),
            SymVal::Adt(a) => {
                out.extend(a.tag.iter().rev());
                for fs in a.arms.iter().flatten() {
                    fs.iter().for_each(|f| self.flatten(f, out));
                }
            }
            SymVal::Weight(_) => {}
        }
    }

    /// Every value `v` may take together with the condition under which it
    /// does. Conditions are pairwise exclusive and jointly exhaustive.
    pub(crate) fn enumerate_values(
        &mut self,
        v: &SymVal,
        pos: Pos,
    ) -> Result<Vec<(Bit, SurfaceValue)>> {
        let limit = self.opts.dep_value_limit;
        let too_many = || Error::Budget(format!("{pos}: more than {limit} dependency values"));
        let numbers = |this: &mut Self, bits: &[Bit]| -> Result<Vec<(Bit, u64)>> {
            let mut out = vec![(T, 0u64)];
            for (i, &b) in bits.iter().enumerate() {
                match b {
                    Bit::Const(false) => {}
                    Bit::Const(true) => out.iter_mut().for_each(|(_, n)| *n |= 1 << i),
                    Bit::Var(_) => {
                        let nb = this.not(b);
                        let mut next = Vec::with_capacity(out.len() * 2);
                        for (g, n) in out {
                            let g1 = this.and(g, b);
                            if g1 != F {
                                next.push((g1, n | 1 << i));
                            }
                            let g0 = this.and(g, nb);
                            if g0 != F {
                                next.push((g0, n));
                            }
                        }
                        out = next;
                        if out.len() > limit {
                            return Err(too_many());
                        }
                    }
                }
            }
            Ok(out)
        };
        let raw: Vec<(Bit, SurfaceValue)> = match v {
            SymVal::Bool(b) => match b {
                Bit::Const(c) => vec![(T, SurfaceValue::Bool(*c))],
                _ => {
                    let nb = self.not(*b);
                    vec![
                        (*b, SurfaceValue::Bool(true)),
                        (nb, SurfaceValue::Bool(false)),
                    ]
                }
            },
            SymVal::Nat(n) => n
                .hot
                .iter()
                .enumerate()
                .filter(|(_, &g)| g != F)
                .map(|(k, &g)| (g, SurfaceValue::Nat(k as u64)))
                .collect(),
            SymVal::Tuple(items) => {
                let mut acc: Vec<(Bit, Vec<SurfaceValue>)> = vec![(T, vec![])];
                for it in items.iter() {
                    let choices = self.enumerate_values(it, pos)?;
                    acc = self.product(acc, &choices);
                    if acc.len() > limit {
                        return Err(too_many());
                    }
                }
                acc.into_iter()
                    .map(|(g, vs)| (g, SurfaceValue::Tuple(vs)))
                    .collect()
            }
            SymVal::Adt(a) => {
                let mut out = Vec::new();
                for (g, tag) in numbers(self, &a.tag)? {
                    let idx = tag as usize;
                    let Some(Some(fields)) = idx.checked_sub(1).and_then(|i| a.arms.get(i)) else {
                        continue;
                    };
                    let mut acc: Vec<(Bit, Vec<SurfaceValue>)> = vec![(g, vec![])];
                    for f in fields {
                        let choices = self.enumerate_values(f, pos)?;
                        acc = self.product(acc, &choices);
                        if acc.len() > limit {
                            return Err(too_many());
                        }
                    }
                    let name = a.decl.ctors[idx - 1].name.clone();
                    out.extend(
                        acc.into_iter()
                            .map(|(g, vs)| (g, SurfaceValue::Ctor(name.clone(), vs))),
                    );
                }
                out
            }
            SymVal::Weight(_) => return eval_err(pos, "weights cannot be dependencies"),
        };
        // Merge repeated values.
        let mut merged: Vec<(Bit, SurfaceValue)> = Vec::new();
        let mut index: FxHashMap<SurfaceValue, usize> = FxHashMap::default();
        for (g, v) in raw {
            match index.get(&v) {
                Some(&i) => merged[i].0 = self.or(merged[i].0, g),
                None => {
                    index.insert(v.clone(), merged.len());
                    merged.push((g, v));
                }
            }
        }
        if merged.len() > limit {
            return Err(too_many());
        }
        Ok(merged)
    }

    fn product(
        &mut self,
        acc: Vec<(Bit, Vec<SurfaceValue>)>,
        choices: &[(Bit, SurfaceValue)],
    ) -> Vec<(Bit, Vec<SurfaceValue>)> {
        let mut next = Vec::with_capacity(acc.len() * choices.len());
        for (g, vs) in &acc {
            for (h, v) in choices {
                let gh = self.and(*g, *h);
                if gh != F {
                    let mut vs = vs.clone();
                    vs.push(v.clone());
                    next.push((gh, vs));
                }
            }
        }
        next
    }

    // ----- choices ----------------------------------------------------------

    /// Conditional probabilities ("sticks") that implement a choice with the
    /// given weights as a chain of flips: alternative `i` is taken when flip
    /// `i` succeeds and all earlier flips failed.
    fn sticks(
        &mut self,
        weights: &[WeightTerm],
        key: &dyn Fn(&Self) -> String,
    ) -> Result<Vec<WeightTerm>> {
        let k = weights.len();
        if k <= 1 {
            return Ok(vec![]);
        }
        if weights.iter().all(|w| matches!(w, WeightTerm::Const(_))) {
            let q: Vec<f64> = weights
                .iter()
                .map(|w| {
                    if let WeightTerm::Const(c) = w {
                        *c
                    } else {
                        0.0
                    }
                })
                .collect();
            if q.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Eval("all weights of a choice are zero".into()));
            }
            let mut rest: f64 = q.iter().sum();
            let mut out = Vec::with_capacity(k - 1);
            for &qi in &q[..k - 1] {
                out.push(WeightTerm::Const(if rest > 0.0 {
                    (qi / rest).min(1.0)
                } else {
                    0.0
                }));
                rest -= qi;
            }
            return Ok(out);
        }
        if k == 2 {
            match (weights[0], weights[1]) {
                (WeightTerm::Param(a), WeightTerm::Complement(b)) if a == b => {
                    return Ok(vec![weights[0]])
                }
                (WeightTerm::Complement(a), WeightTerm::Param(b)) if a == b => {
                    return Ok(vec![weights[0]])
                }
                _ => {}
            }
        }
        let base = key(self);
        Ok((0..k - 1)
            .map(|i| {
                WeightTerm::Param(
                    self.table
                        .intern(&format!("{base}#{i}"), 1.0 / (k - i) as f64),
                )
            })
            .collect())
    }

    /// Runs the flip chain for `sticks`, producing alternative `i` through
    /// `alt`. Alternatives whose guard is constant false are never built.
    fn chain(
        &mut self,
        sticks: &[WeightTerm],
        env: &mut Env,
        alt: &mut dyn FnMut(&mut Self, &mut Env, usize) -> Result<SymVal>,
    ) -> Result<SymVal> {
        self.chain_from(0, sticks, env, alt)
    }

    fn chain_from(
        &mut self,
        i: usize,
        sticks: &[WeightTerm],
        env: &mut Env,
        alt: &mut dyn FnMut(&mut Self, &mut Env, usize) -> Result<SymVal>,
    ) -> Result<SymVal> {
        if i == sticks.len() {
            return alt(self, env, i);
        }
        let c = self.flip(sticks[i])?;
        match c {
            Bit::Const(true) => alt(self, env, i),
            Bit::Const(false) => self.chain_from(i + 1, sticks, env, alt),
            _ => {
                let here = alt(self, env, i)?;
                let rest = self.chain_from(i + 1, sticks, env, alt)?;
                self.select(c, &here, &rest)
            }
        }
    }

    fn freq(
        &mut self,
        weights: Vec<WeightTerm>,
        bodies: &[&Expr],
        env: &mut Env,
    ) -> Result<SymVal> {
        let sticks = self.sticks(&weights, &|this: &Self| {
            let labels: Vec<String> = weights.iter().map(|w| this.weight_label(w)).collect();
            format!("freq[{}]", labels.join(","))
        })?;
        self.chain(&sticks, env, &mut |this, env, i| this.eval(bodies[i], env))
    }

    fn is_some(&mut self, v: &SymVal, pos: Pos) -> Result<Bit> {
        match v {
            SymVal::Adt(a)
                if Arc::ptr_eq(&a.decl, &self.option) || a.decl.name == self.option.name =>
            {
                Ok(self.tag_is(a, 1))
            }
            _ => eval_err(pos, "backtrack alternatives must produce an Option"),
        }
    }

    fn backtrack(&mut self, arms: &[(Expr, Expr)], pos: Pos, env: &mut Env) -> Result<SymVal> {
        if arms.len() > self.opts.backtrack_limit {
            return eval_err(
                pos,
                format!(
                    "backtrack supports at most {} alternatives",
                    self.opts.backtrack_limit
                ),
            );
        }
        let weights = arms.iter().map(|(w, _)| {
            let v = self.eval(w, env)?;
            Self::as_weight(&v, w.pos)
        });
        let weights = weights.collect::<Result<Vec<_>>>()?;
        let mut state = Backtrack {
            arms,
            weights,
            results: vec![None; arms.len()],
            memo: FxHashMap::default(),
            pos,
        };
        let all = (1u32 << arms.len()) - 1;
        self.pick(&mut state, all, env)
    }

    fn pick(&mut self, st: &mut Backtrack<'_>, mask: u32, env: &mut Env) -> Result<SymVal> {
        if mask == 0 {
            return Ok(self.none());
        }
        if let Some(v) = st.memo.get(&mask) {
            return Ok(v.clone());
        }
        let members: Vec<usize> = (0..st.arms.len()).filter(|i| mask >> i & 1 == 1).collect();
        let result = if members.len() == 1 {
            self.bt_result(st, members[0], env)?
        } else {
            let weights: Vec<WeightTerm> = members.iter().map(|&i| st.weights[i]).collect();
            let sticks = self.sticks(&weights, &|this: &Self| {
                let labels: Vec<String> = st.weights.iter().map(|w| this.weight_label(w)).collect();
                let subset: Vec<String> = members.iter().map(|i| i.to_string()).collect();
                format!("backtrack[{}]{{{}}}", labels.join(","), subset.join(","))
            })?;
            let mut st_cell = Some(st);
            let members_ref = &members;
            let mut alt = |this: &mut Self, env: &mut Env, j: usize| -> Result<SymVal> {
                let st = st_cell.as_mut().expect("state");
                let i = members_ref[j];
                let r = this.bt_result(st, i, env)?;
                let some = this.is_some(&r, st.pos)?;
                match some {
                    Bit::Const(true) => Ok(r),
                    _ => {
                        let rest = this.pick(st, mask & !(1 << i), env)?;
                        this.select(some, &r, &rest)
                    }
                }
            };
            let v = self.chain(&sticks, env, &mut alt)?;
            let st = st_cell.take().expect("state");
            st.memo.insert(mask, v.clone());
            return Ok(v);
        };
        st.memo.insert(mask, result.clone());
        Ok(result)
    }

    fn bt_result(&mut self, st: &mut Backtrack<'_>, i: usize, env: &mut Env) -> Result<SymVal> {
        if let Some(v) = &st.results[i] {
            return Ok(v.clone());
        }
        let v = self.eval(&st.arms[i].1, env)?;
        self.is_some(&v, st.arms[i].1.pos)?;
        st.results[i] = Some(v.clone());
        Ok(v)
    }

    fn freq_dep(
        &mut self,
        site: u32,
        deps: &Expr,
        options: &[Expr],
        env: &mut Env,
    ) -> Result<SymVal> {
        let d = self.eval(deps, env)?;
        let cases = self.enumerate_values(&d, deps.pos)?;
        let k = options.len();
        let mut cache: Vec<Option<SymVal>> = vec![None; k];
        let mut results: Vec<(Bit, SymVal)> = Vec::with_capacity(cases.len());
        for (guard, value) in cases {
            let sticks: Vec<WeightTerm> = (0..k.saturating_sub(1))
                .map(|i| {
                    WeightTerm::Param(
                        self.table
                            .intern(&format!("dep{site}[{value}]#{i}"), 1.0 / (k - i) as f64),
                    )
                })
                .collect();
            let r = self.chain(&sticks, env, &mut |this, env, i| {
                if let Some(v) = &cache[i] {
                    return Ok(v.clone());
                }
                let v = this.eval(&options[i], env)?;
                cache[i] = Some(v.clone());
                Ok(v)
            })?;
            results.push((guard, r));
        }
        let (_, mut acc) = results.pop().expect("at least one dependency value");
        while let Some((g, r)) = results.pop() {
            acc = self.select(g, &r, &acc)?;
        }
        Ok(acc)
    }

    // ----- patterns ---------------------------------------------------------

    fn match_pattern(&mut self, p: &Pattern, v: &SymVal, binds: &mut Env, pos: Pos) -> Result<Bit> {
        Ok(match (p, v) {
            (Pattern::Wild, _) => T,
            (Pattern::Bind(x), _) => {
                binds.push((x.clone(), v.clone()));
                T
            }
            (Pattern::Bool(b), SymVal::Bool(x)) => {
                if *b {
                    *x
                } else {
                    self.not(*x)
                }
            }
            (Pattern::Nat(n), SymVal::Nat(v)) => self.nat_eq_const(v, *n),
            (Pattern::Tuple(ps), SymVal::Tuple(items)) if ps.len() == items.len() => {
                let mut g = T;
                for (p, it) in ps.iter().zip(items.iter()) {
                    let h = self.match_pattern(p, it, binds, pos)?;
                    g = self.and(g, h);
                }
                g
            }
            (Pattern::Ctor(c, ps), SymVal::Adt(a)) => {
                let Some(idx) = a.decl.ctor_index(c) else {
                    return eval_err(
                        pos,
                        format!("constructor `{c}` does not belong to type {}", a.decl.name),
                    );
                };
                let Some(fields) = &a.arms[idx] else {
                    return Ok(F);
                };
                let mut g = self.tag_is(a, idx);
                for (p, f) in ps.iter().zip(fields) {
                    if g == F {
                        break;
                    }
                    let h = self.match_pattern(p, f, binds, pos)?;
                    g = self.and(g, h);
                }
                g
            }
            _ => return eval_err(pos, format!("pattern {p} does not fit the scrutinee")),
        })
    }

    /// The value `v` restricted to constructor `idx`.
    fn refine(v: &SymVal, p: &Pattern) -> Option<SymVal> {
        let (Pattern::Ctor(c, _), SymVal::Adt(a)) = (p, v) else {
            return None;
        };
        let idx = a.decl.ctor_index(c)?;
        let fields = a.arms[idx].clone()?;
        Some(Self::make_adt(a.decl.clone(), idx, fields))
    }

    fn eval_match(
        &mut self,
        scrut: &Expr,
        arms: &[(Pattern, Expr)],
        pos: Pos,
        env: &mut Env,
    ) -> Result<SymVal> {
        let v = self.eval(scrut, env)?;
        let scrut_var = match &scrut.kind {
            ExprKind::Var(x) => Some(x.clone()),
            _ => None,
        };
        let mut remaining = T;
        let mut results: Vec<(Bit, SymVal)> = Vec::new();
        for (pat, body) in arms {
            let mut binds = Vec::new();
            let g = self.match_pattern(pat, &v, &mut binds, body.pos)?;
            let here = self.and(remaining, g);
            if here == F {
                continue;
            }
            let mark = env.len();
            if let (Some(x), Some(r)) = (&scrut_var, Self::refine(&v, pat)) {
                env.push((x.clone(), r));
            }
            env.extend(binds);
            let r = self.eval(body, env);
            env.truncate(mark);
            results.push((here, r?));
            let ng = self.not(g);
            remaining = self.and(remaining, ng);
            if remaining == F {
                break;
            }
        }
        if results.is_empty() || remaining == T {
            return eval_err(pos, "no match arm applies");
        }
        // If `remaining` is not provably false the last arm doubles as the
        // fall-through; concrete evaluation reports real non-exhaustiveness.
        let (_, mut acc) = results.pop().expect("non-empty");
        while let Some((g, r)) = results.pop() {
            acc = self.select(g, &r, &acc)?;
        }
        Ok(acc)
    }

    // ----- expressions ------------------------------------------------------

    pub fn eval(&mut self, e: &Expr, env: &mut Env) -> Result<SymVal> {
        stacker::maybe_grow(64 * 1024, 4 * 1024 * 1024, || self.eval_inner(e, env))
    }

    fn eval_inner(&mut self, e: &Expr, env: &mut Env) -> Result<SymVal> {
        let pos = e.pos;
        Ok(match &e.kind {
            ExprKind::Bool(b) => SymVal::Bool(Bit::Const(*b)),
            ExprKind::Nat(n) => Self::nat_const(*n),
            ExprKind::Real(x) => {
                if !(*x >= 0.0 && x.is_finite()) {
                    return eval_err(pos, format!("invalid weight {x}"));
                }
                SymVal::Weight(WeightTerm::Const(*x))
            }
            ExprKind::Var(x) => match lookup(env, x) {
                Some(v) => v.clone(),
                None => return eval_err(pos, format!("unbound variable `{x}`")),
            },
            ExprKind::Theta(name) => {
                SymVal::Weight(WeightTerm::Param(self.table.intern(name, 0.5)))
            }
            ExprKind::Flip(a) => {
                let v = self.eval(a, env)?;
                let w = Self::as_weight(&v, a.pos)?;
                if let WeightTerm::Const(c) = w {
                    if c > 1.0 {
                        return eval_err(pos, format!("flip probability {c} exceeds 1"));
                    }
                }
                SymVal::Bool(self.flip(w)?)
            }
            ExprKind::If(c, a, b) => {
                let cv = self.eval(c, env)?;
                let cb = Self::as_bit(&cv, c.pos)?;
                match cb {
                    Bit::Const(true) => self.eval(a, env)?,
                    Bit::Const(false) => self.eval(b, env)?,
                    _ => {
                        let av = self.eval(a, env)?;
                        let bv = self.eval(b, env)?;
                        self.select(cb, &av, &bv)
                            .map_err(|err| Error::Eval(format!("{pos}: {err}")))?
                    }
                }
            }
            ExprKind::Let(binds, body) => {
                let mark = env.len();
                let mut result = Ok(());
                for (x, e1) in binds {
                    match self.eval(e1, env) {
                        Ok(v) => env.push((x.clone(), v)),
                        Err(err) => {
                            result = Err(err);
                            break;
                        }
                    }
                }
                let out = result.and_then(|_| self.eval(body, env));
                env.truncate(mark);
                out?
            }
            ExprKind::Match(s, arms) => self.eval_match(s, arms, pos, env)?,
            ExprKind::Tuple(items) => SymVal::Tuple(Rc::new(
                items
                    .iter()
                    .map(|i| self.eval(i, env))
                    .collect::<Result<_>>()?,
            )),
            ExprKind::Nth(a, i) => match self.eval(a, env)? {
                SymVal::Tuple(items) if *i < items.len() => items[*i].clone(),
                SymVal::Tuple(_) => return eval_err(pos, format!("tuple has no component {i}")),
                _ => return eval_err(pos, "expected a tuple"),
            },
            ExprKind::Ctor(c, args) => {
                let Some((decl, idx)) = self.prog.ctor(c) else {
                    return eval_err(pos, format!("unknown constructor `{c}`"));
                };
                let decl = decl.clone();
                let mut fields = Vec::with_capacity(args.len());
                for (f, a) in decl.ctors[idx].fields.iter().zip(args) {
                    let v = self.eval(a, env)?;
                    fields.push(match (f, &v) {
                        (FieldTy::Nat(w), _) => self.fit_nat(&v, *w, a.pos)?,
                        (FieldTy::Bool, SymVal::Bool(_)) => v,
                        (FieldTy::Adt(n), SymVal::Adt(x)) if x.decl.name == *n => v,
                        (FieldTy::Any, SymVal::Weight(_)) => {
                            return eval_err(a.pos, "weights cannot be stored")
                        }
                        (FieldTy::Any, _) => v,
                        _ => {
                            return eval_err(a.pos, format!("argument of `{c}` has the wrong type"))
                        }
                    });
                }
                Self::make_adt(decl, idx, fields)
            }
            ExprKind::Call(f, args) => {
                let Some(def) = self.prog.function(f) else {
                    return eval_err(pos, format!("unknown function `{f}`"));
                };
                let mut frame = Vec::with_capacity(args.len());
                for (p, a) in def.params.iter().zip(args) {
                    frame.push((p.clone(), self.eval(a, env)?));
                }
                if self.depth >= self.opts.max_call_depth {
                    return Err(Error::Lower(format!(
                        "{pos}: call depth limit {} reached in `{f}`; recursion appears unbounded",
                        self.opts.max_call_depth
                    )));
                }
                self.depth += 1;
                let out = self.eval(&def.body, &mut frame);
                self.depth -= 1;
                out?
            }
            ExprKind::Prim(p, args) => self.prim(*p, args, pos, env)?,
            ExprKind::Freq(arms) => {
                let mut weights = Vec::with_capacity(arms.len());
                for (w, _) in arms {
                    let v = self.eval(w, env)?;
                    weights.push(Self::as_weight(&v, w.pos)?);
                }
                let bodies: Vec<&Expr> = arms.iter().map(|(_, b)| b).collect();
                self.freq(weights, &bodies, env)?
            }
            ExprKind::Uniform(items) => {
                let bodies: Vec<&Expr> = items.iter().collect();
                self.freq(vec![WeightTerm::Const(1.0); items.len()], &bodies, env)?
            }
            ExprKind::Backtrack(arms) => self.backtrack(arms, pos, env)?,
            ExprKind::FreqDep {
                site,
                deps,
                options,
            } => self.freq_dep(*site, deps, options, env)?,
        })
    }

    fn prim(&mut self, p: Prim, args: &[Expr], pos: Pos, env: &mut Env) -> Result<SymVal> {
        match p {
            Prim::And | Prim::Or => {
                let short = Bit::Const(p == Prim::Or);
                let mut acc = Bit::Const(p == Prim::And);
                for a in args {
                    let v = self.eval(a, env)?;
                    let b = Self::as_bit(&v, a.pos)?;
                    acc = if p == Prim::And {
                        self.and(acc, b)
                    } else {
                        self.or(acc, b)
                    };
                    if acc == short {
                        break;
                    }
                }
                return Ok(SymVal::Bool(acc));
            }
            Prim::StackPush => {
                let m = self.eval(&args[0], env)?;
                let m = Self::as_nat(&m, args[0].pos)?;
                let Some(m) = Self::const_nat(&m) else {
                    return eval_err(pos, "stack bound must be a constant");
                };
                let x = self.eval(&args[1], env)?;
                let SymVal::Tuple(stack) = self.eval(&args[2], env)? else {
                    return eval_err(args[2].pos, "stack must be a tuple");
                };
                let items = std::iter::once(x)
                    .chain(stack.iter().cloned())
                    .take(m as usize)
                    .collect();
                return Ok(SymVal::Tuple(Rc::new(items)));
            }
            _ => {}
        }
        let vals = args
            .iter()
            .map(|a| self.eval(a, env))
            .collect::<Result<Vec<_>>>()?;
        Ok(match p {
            Prim::Not => {
                let b = Self::as_bit(&vals[0], pos)?;
                SymVal::Bool(self.not(b))
            }
            Prim::Eq | Prim::Ne => {
                let e = self
                    .equal(&vals[0], &vals[1])
                    .map_err(|err| Error::Eval(format!("{pos}: {err}")))?;
                SymVal::Bool(if p == Prim::Eq { e } else { self.not(e) })
            }
            Prim::Sub if matches!(vals[1], SymVal::Weight(_)) => {
                let one = matches!(&vals[0], SymVal::Weight(WeightTerm::Const(c)) if *c == 1.0)
                    || matches!(&vals[0], SymVal::Nat(n) if Self::const_nat(n) == Some(1));
                if !one {
                    return eval_err(pos, "only `(- 1 w)` is supported on weights");
                }
                SymVal::Weight(match vals[1] {
                    SymVal::Weight(WeightTerm::Const(c)) if c <= 1.0 => WeightTerm::Const(1.0 - c),
                    SymVal::Weight(WeightTerm::Param(id)) => WeightTerm::Complement(id),
                    SymVal::Weight(WeightTerm::Complement(id)) => WeightTerm::Param(id),
                    _ => return eval_err(pos, "weight complement is only defined on [0, 1]"),
                })
            }
            Prim::NatBits => {
                let mut bits = Vec::with_capacity(vals.len());
                for (v, a) in vals.iter().zip(args).rev() {
                    bits.push(Self::as_bit(v, a.pos)?);
                }
                self.nat_from_bits(&bits, pos)?
            }
            _ => {
                let a = Self::as_nat(&vals[0], args[0].pos)?;
                let b = Self::as_nat(&vals[1], args[1].pos)?;
                match p {
                    Prim::Lt => SymVal::Bool(self.nat_lt(&a, &b)),
                    Prim::Gt => SymVal::Bool(self.nat_lt(&b, &a)),
                    Prim::Le => {
                        let gt = self.nat_lt(&b, &a);
                        SymVal::Bool(self.not(gt))
                    }
                    Prim::Ge => {
                        let lt = self.nat_lt(&a, &b);
                        SymVal::Bool(self.not(lt))
                    }
                    Prim::Add => self.nat_combine(&a, &b, pos, |x, y| x + y)?,
                    Prim::Sub => self.nat_combine(&a, &b, pos, u64::saturating_sub)?,
                    Prim::Max => self.nat_combine(&a, &b, pos, u64::max)?,
                    Prim::Min => self.nat_combine(&a, &b, pos, u64::min)?,
                    _ => unreachable!("handled above"),
                }
            }
        })
    }

    /// Applies function `name` to already-evaluated arguments.
    pub fn call(&mut self, name: &str, args: Vec<SymVal>) -> Result<SymVal> {
        let def = self
            .prog
            .function(name)
            .ok_or_else(|| Error::Eval(format!("unknown function `{name}`")))?;
        if def.params.len() != args.len() {
            return Err(Error::Eval(format!(
                "`{name}` expects {} arguments",
                def.params.len()
            )));
        }
        let mut frame: Env = def.params.iter().cloned().zip(args).collect();
        self.eval(&def.body, &mut frame)
    }
}

struct Backtrack<'a> {
    arms: &'a [(Expr, Expr)],
    weights: Vec<WeightTerm>,
    results: Vec<Option<SymVal>>,
    memo: FxHashMap<u32, SymVal>,
    pos: Pos,
}
