//! Random well-typed core programs, for differential testing of the
//! compiler against the enumeration semantics.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::ir::{CoreExpr, CoreType, CoreValue, Name};
use crate::weights::{WeightId, WeightTable};

/// Shape of the generated programs.
#[derive(Clone, Debug)]
pub struct CorpusConfig {
    /// Upper bound on syntactic flips.
    pub max_flips: usize,
    /// Number of distinct symbolic weights flips may refer to.
    pub symbolic_weights: usize,
    /// Maximum nesting depth of generated subexpressions.
    pub max_depth: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            max_flips: 12,
            symbolic_weights: 3,
            max_depth: 4,
        }
    }
}

/// Weight table naming the corpus weights `t0`, `t1`, ...
pub fn corpus_table(cfg: &CorpusConfig) -> WeightTable {
    let mut t = WeightTable::new();
    for i in 0..cfg.symbolic_weights {
        t.intern(&format!("t{i}"), 0.5);
    }
    t
}

struct Gen<'r, R> {
    rng: &'r mut R,
    cfg: &'r CorpusConfig,
    flips_left: usize,
    fresh: usize,
    env: Vec<(Name, CoreType)>,
}

fn random_type<R: Rng>(rng: &mut R, depth: usize) -> CoreType {
    if depth == 0 || rng.gen_bool(0.6) {
        CoreType::Bool
    } else {
        CoreType::product(random_type(rng, depth - 1), random_type(rng, depth - 1))
    }
}

fn random_value<R: Rng>(rng: &mut R, t: &CoreType) -> CoreValue {
    match t {
        CoreType::Bool => CoreValue::Bool(rng.gen()),
        CoreType::Product(a, b) => CoreValue::pair(random_value(rng, a), random_value(rng, b)),
    }
}

impl<R: Rng> Gen<'_, R> {
    fn fresh_name(&mut self) -> Name {
        self.fresh += 1;
        format!("x{}", self.fresh).into()
    }

    fn vars_of(&self, t: &CoreType) -> Vec<Name> {
        self.env
            .iter()
            .filter(|(_, u)| u == t)
            .map(|(n, _)| n.clone())
            .collect()
    }

    fn atom(&mut self, t: &CoreType) -> CoreExpr {
        let vars = self.vars_of(t);
        if !vars.is_empty() && self.rng.gen_bool(0.8) {
            CoreExpr::Var(vars.choose(self.rng).expect("non-empty").clone())
        } else {
            CoreExpr::Const(random_value(self.rng, t))
        }
    }

    fn flip(&mut self) -> CoreExpr {
        self.flips_left -= 1;
        if self.cfg.symbolic_weights > 0 && self.rng.gen_bool(0.5) {
            CoreExpr::flip_sym(WeightId(
                self.rng.gen_range(0..self.cfg.symbolic_weights) as u32
            ))
        } else {
            CoreExpr::flip((self.rng.gen_range(1..10) as f64) / 10.0)
        }
    }

    fn expr(&mut self, t: &CoreType, depth: usize) -> CoreExpr {
        let choice = self.rng.gen_range(0..10);
        if depth == 0 {
            return match t {
                CoreType::Bool if self.flips_left > 0 && choice < 6 => self.flip(),
                _ => self.atom(t),
            };
        }
        match choice {
            0..=2 => {
                // let x = e1 in e2
                let t1 = random_type(self.rng, 1);
                let e1 = self.expr(&t1, depth - 1);
                let x = self.fresh_name();
                self.env.push((x.clone(), t1));
                let e2 = self.expr(t, depth - 1);
                self.env.pop();
                CoreExpr::Let(x, Box::new(e1), Box::new(e2))
            }
            3 | 4 => {
                let guard = self.atom(&CoreType::Bool);
                let a = self.expr(t, depth - 1);
                let b = self.expr(t, depth - 1);
                CoreExpr::ite(guard, a, b)
            }
            5 => {
                // Projection out of a product variable when one fits.
                let candidates: Vec<(Name, bool)> = self
                    .env
                    .iter()
                    .filter_map(|(n, u)| match u {
                        CoreType::Product(a, _) if **a == *t => Some((n.clone(), true)),
                        CoreType::Product(_, b) if **b == *t => Some((n.clone(), false)),
                        _ => None,
                    })
                    .collect();
                match candidates.choose(self.rng) {
                    Some((n, true)) => CoreExpr::fst(CoreExpr::Var(n.clone())),
                    Some((n, false)) => CoreExpr::snd(CoreExpr::Var(n.clone())),
                    None => self.atom(t),
                }
            }
            _ => match t {
                CoreType::Product(a, b) => {
                    let (a, b) = ((**a).clone(), (**b).clone());
                    CoreExpr::pair(self.expr(&a, depth - 1), self.expr(&b, depth - 1))
                }
                CoreType::Bool if self.flips_left > 0 => self.flip(),
                CoreType::Bool => self.atom(t),
            },
        }
    }
}

/// A closed, well-typed program with at most `cfg.max_flips` flips whose
/// output is a Boolean or a small tuple of Booleans.
pub fn random_core_program<R: Rng>(rng: &mut R, cfg: &CorpusConfig) -> CoreExpr {
    let out_ty = random_type(rng, 2);
    let mut g = Gen {
        rng,
        cfg,
        flips_left: cfg.max_flips,
        fresh: 0,
        env: Vec::new(),
    };
    // A spine of lets makes sure flips are shared and reused downstream.
    let steps = g.rng.gen_range(1..=4);
    let mut binds = Vec::new();
    for _ in 0..steps {
        let t = random_type(g.rng, 1);
        let depth = g.rng.gen_range(1..=cfg.max_depth);
        let e = g.expr(&t, depth);
        let x = g.fresh_name();
        g.env.push((x.clone(), t));
        binds.push((x, e));
    }
    let depth = cfg.max_depth;
    let mut body = g.expr(&out_ty, depth);
    for (x, e) in binds.into_iter().rev() {
        body = CoreExpr::Let(x, Box::new(e), Box::new(body));
    }
    body
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::typecheck;
    use rand::SeedableRng;

    #[test]
    fn corpus_programs_are_well_typed_and_within_budget() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let cfg = CorpusConfig::default();
        for _ in 0..500 {
            let e = random_core_program(&mut rng, &cfg);
            typecheck(&e).unwrap();
            assert!(e.flip_count() <= cfg.max_flips);
        }
    }
}
