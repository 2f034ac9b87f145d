//! Surface generator language: parsing, printing, value encoding, lowering
//! to the core language, and concrete evaluation.

pub mod ast;
mod eval;
pub mod parse;
mod print;
pub mod sexpr;
pub mod value;

use rand::Rng;

pub use ast::{AdtDecl, CtorDecl, Expr, ExprKind, FieldTy, FunDef, Pattern, Prim, Program};
pub use eval::EvalOptions;
pub use parse::{parse_expr, parse_program};
pub use print::walk_expr;
pub use value::{AdtShape, SurfaceValue, TypeShape};

use crate::error::{Error, Result};
use crate::ir::{CoreExpr, Name};
use crate::weights::{WeightAssignment, WeightTable};
use eval::{Bit, Builder, Def, Explore, Interp, NoFlips, Replay, Sampling};

/// A surface program lowered to the core language.
pub struct Lowered {
    pub expr: CoreExpr,
    /// Layout of the output bits of `expr`.
    pub shape: TypeShape,
    /// Number of flips in `expr`.
    pub flips: usize,
}

/// An expression lowered to one Boolean output per value it can take.
pub struct LoweredValues {
    /// Outputs the guards in the order of `values`.
    pub expr: CoreExpr,
    /// Distinct values, sorted.
    pub values: Vec<SurfaceValue>,
    pub flips: usize,
}

fn main_expr(program: &Program) -> Result<&Expr> {
    program
        .main
        .as_ref()
        .ok_or_else(|| Error::Lower("program has no `main`".into()))
}

/// Lowers the `main` expression of `program`, registering its symbolic
/// weights in `table`.
pub fn lower(program: &Program, table: &mut WeightTable) -> Result<Lowered> {
    lower_expr(program, main_expr(program)?, table, &EvalOptions::default())
}

/// `(f main)` for a one-argument function `f`, used to push the generator's
/// distribution through a feature or predicate.
pub fn apply_to_main(program: &Program, f: &str) -> Result<Expr> {
    let def = program
        .function(f)
        .ok_or_else(|| Error::Lower(format!("unknown function `{f}`")))?;
    if def.params.len() != 1 {
        return Err(Error::Lower(format!(
            "`{f}` must take exactly one argument"
        )));
    }
    Ok(Expr::new(ExprKind::Call(
        def.name.clone(),
        vec![main_expr(program)?.clone()],
    )))
}

/// Lowers an arbitrary entry expression of `program`.
///
/// Every flip becomes a core `flip`, data-dependent branches are evaluated
/// on both sides and merged bit by bit, and function calls are inlined. The
/// result is a straight-line core program whose output is the bit encoding
/// described by the returned shape.
pub fn lower_expr(
    program: &Program,
    entry: &Expr,
    table: &mut WeightTable,
    opts: &EvalOptions,
) -> Result<Lowered> {
    let mut interp = Interp::new(program, Builder::default(), table, opts.clone());
    let v = interp.eval(entry, &mut Vec::new())?;
    let shape = Interp::<Builder>::shape_of(&v)?;
    let mut bits = Vec::new();
    interp.flatten(&v, &mut bits);
    if bits.is_empty() {
        return Err(Error::Lower("program output carries no information".into()));
    }
    let (expr, flips) = build_core(&interp.backend.defs, &bits);
    Ok(Lowered { expr, shape, flips })
}

/// Lowers `entry` to the indicator of each of its possible values. This
/// suits features with a small range: an indicator is then a single BDD
/// rather than a conjunction over the value's bits.
pub fn lower_values(
    program: &Program,
    entry: &Expr,
    table: &mut WeightTable,
    opts: &EvalOptions,
) -> Result<LoweredValues> {
    let mut interp = Interp::new(program, Builder::default(), table, opts.clone());
    let v = interp.eval(entry, &mut Vec::new())?;
    let mut cases = interp.enumerate_values(&v, entry.pos)?;
    cases.sort_by(|a, b| a.1.cmp(&b.1));
    let guards: Vec<Bit> = cases.iter().map(|(g, _)| *g).collect();
    let (expr, flips) = build_core(&interp.backend.defs, &guards);
    Ok(LoweredValues {
        expr,
        values: cases.into_iter().map(|(_, v)| v).collect(),
        flips,
    })
}

fn var_name(i: u32) -> Name {
    format!("_b{i}").into()
}

fn atom(b: Bit) -> CoreExpr {
    match b {
        Bit::Const(true) => CoreExpr::tt(),
        Bit::Const(false) => CoreExpr::ff(),
        Bit::Var(i) => CoreExpr::Var(var_name(i)),
    }
}

fn pair_tree(bits: &[Bit]) -> CoreExpr {
    if bits.len() == 1 {
        atom(bits[0])
    } else {
        let mid = bits.len() / 2;
        CoreExpr::pair(pair_tree(&bits[..mid]), pair_tree(&bits[mid..]))
    }
}

/// Turns recorded definitions into a let-chain, dropping definitions the
/// output does not depend on.
fn build_core(defs: &[Def], outputs: &[Bit]) -> (CoreExpr, usize) {
    let mut live = vec![false; defs.len()];
    let mark = |b: Bit, live: &mut Vec<bool>| {
        if let Bit::Var(i) = b {
            live[i as usize] = true;
        }
    };
    for &b in outputs {
        mark(b, &mut live);
    }
    for i in (0..defs.len()).rev() {
        if let (true, Def::Ite(c, a, b)) = (live[i], &defs[i]) {
            for x in [*c, *a, *b] {
                mark(x, &mut live);
            }
        }
    }
    let mut out = pair_tree(outputs);
    let mut flips = 0;
    for i in (0..defs.len()).rev() {
        if !live[i] {
            continue;
        }
        let bound = match &defs[i] {
            Def::Flip(t) => {
                flips += 1;
                CoreExpr::Flip(*t)
            }
            Def::Ite(c, a, b) => CoreExpr::ite(atom(*c), atom(*a), atom(*b)),
        };
        out = CoreExpr::Let(var_name(i as u32), Box::new(bound), Box::new(out));
    }
    (out, flips)
}

/// Runs `main` with flips resolved, in execution order, by `outcomes`.
/// Flips with probability exactly 0 or 1 consume no outcome.
pub fn eval_concrete(program: &Program, outcomes: &[bool]) -> Result<SurfaceValue> {
    let mut table = WeightTable::new();
    let mut interp = Interp::new(
        program,
        Replay { outcomes, next: 0 },
        &mut table,
        EvalOptions::default(),
    );
    let v = interp.eval(main_expr(program)?, &mut Vec::new())?;
    Interp::<Replay>::to_surface(&v)
}

/// Draws one value of `entry`, resolving flips with `rng` and symbolic
/// weights with `w` (weights missing from `w` take their initial value).
pub fn sample_expr<R: Rng>(
    program: &Program,
    entry: &Expr,
    table: &mut WeightTable,
    w: &WeightAssignment,
    rng: R,
    opts: &EvalOptions,
) -> Result<SurfaceValue> {
    let mut interp = Interp::new(program, Sampling { rng, weights: w }, table, opts.clone());
    let v = interp.eval(entry, &mut Vec::new())?;
    Interp::<Sampling<R>>::to_surface(&v)
}

/// Distribution of `entry` computed by running the concrete evaluator along
/// every sequence of flip outcomes. Independent of lowering and BDDs and
/// exponential in the number of flips executed; fails after `max_paths`
/// execution paths.
pub fn enumerate_paths(
    program: &Program,
    entry: &Expr,
    table: &mut WeightTable,
    w: &WeightAssignment,
    max_paths: usize,
) -> Result<std::collections::BTreeMap<SurfaceValue, f64>> {
    let mut out = std::collections::BTreeMap::new();
    let mut pending: Vec<Vec<bool>> = vec![vec![]];
    let mut paths = 0;
    while let Some(prefix) = pending.pop() {
        let backend = Explore {
            prefix: &prefix,
            next: 0,
            prob: 1.0,
            weights: w,
            exhausted: false,
        };
        let mut interp = Interp::new(program, backend, table, EvalOptions::default());
        let result = interp.eval(entry, &mut Vec::new());
        let backend = &interp.backend;
        match result {
            Ok(v) => {
                paths += 1;
                if paths > max_paths {
                    return Err(Error::Budget(format!(
                        "more than {max_paths} execution paths"
                    )));
                }
                let prob = backend.prob;
                *out.entry(Interp::<Explore>::to_surface(&v)?).or_insert(0.0) += prob;
            }
            Err(_) if backend.exhausted => {
                for b in [true, false] {
                    let mut p = prefix.clone();
                    p.push(b);
                    pending.push(p);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Applies the deterministic function `f` of `program` to `arg`.
pub fn apply_function(program: &Program, f: &str, arg: &SurfaceValue) -> Result<SurfaceValue> {
    let mut table = WeightTable::new();
    let mut interp = Interp::new(program, NoFlips, &mut table, EvalOptions::default());
    let a = interp.lift_surface(arg)?;
    let v = interp.call(f, vec![a])?;
    Interp::<NoFlips>::to_surface(&v)
}
