//! Training objectives and their gradients with respect to the symbolic
//! weights.
//!
//! Objectives are maximised. Exact objectives enumerate the support of a
//! compiled program once and then differentiate the probability of every
//! support value by weighted model counting. Sample-based objectives use
//! the score-function (REINFORCE) estimator, with the probabilities and
//! score of each sample computed exactly from the compiled generator.

use rustc_hash::FxHashMap;

use crate::bdd::Bdd;
use crate::compile::{CompiledProgram, CompiledValues};
use crate::error::{Error, Result};
use crate::inference::{
    compile_feature, compile_main, support, wmc_grad, Distribution, WmcPlan, DEFAULT_VALUE_BUDGET,
};
use crate::sampler::{check_validity, sample_entry};
use crate::surface::{apply_function, Program, SurfaceValue};
use crate::weights::{WeightAssignment, WeightTable};

/// Probabilities are floored here before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-300;

/// Value and gradient of an objective at one weight assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    /// Indexed by weight id.
    pub grad: Vec<f64>,
    /// Number of logarithms whose argument fell below [`LOG_FLOOR`].
    pub floored: usize,
}

impl Evaluation {
    fn zero(n: usize) -> Self {
        Evaluation {
            value: 0.0,
            grad: vec![0.0; n],
            floored: 0,
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

fn ln_floored(p: f64, floored: &mut usize) -> f64 {
    if p < LOG_FLOOR {
        *floored += 1;
        LOG_FLOOR.ln()
    } else {
        p.ln()
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in acc.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Pads `w` with initial values for weights registered after it was made.
fn extend(w: &WeightAssignment, table: &WeightTable) -> WeightAssignment {
    let mut w = w.clone();
    w.0.extend(table.initial().0.into_iter().skip(w.len()));
    w
}

/// Negative KL divergence from a target distribution over a feature to the
/// distribution the generator induces on that feature:
/// `-Σ p̃(v) log(p̃(v) / p(v))`.
pub struct TargetKl {
    plan: WmcPlan,
    /// Target values with positive mass, in plan root order.
    target: Vec<(SurfaceValue, f64)>,
}

impl TargetKl {
    /// `compiled` is the feature pushed through the generator. Every target
    /// value must be reachable.
    pub fn new(compiled: &CompiledValues, target: &[(SurfaceValue, f64)]) -> Result<Self> {
        let total: f64 = target.iter().map(|(_, p)| p).sum();
        if target.is_empty() || target.iter().any(|(_, p)| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "target must be a probability distribution".into(),
            ));
        }
        let mut kept = Vec::with_capacity(target.len());
        let mut roots = Vec::with_capacity(target.len());
        for (v, p) in target {
            let ind = compiled
                .indicator(v)
                .ok_or_else(|| Error::NotInSupport(v.to_string()))?;
            if ind.is_false() {
                return Err(Error::NotInSupport(v.to_string()));
            }
            if *p > 0.0 {
                kept.push((v.clone(), *p));
                roots.push(ind);
            }
        }
        let plan = WmcPlan::new(&compiled.manager, &roots)?;
        Ok(TargetKl { plan, target: kept })
    }

    pub fn node_count(&self) -> usize {
        self.plan.node_count()
    }

    pub fn evaluate(&self, w: &WeightAssignment) -> Result<Evaluation> {
        let mut floored = 0;
        let mut value = 0.0;
        let (_, grad) = self.plan.gradient(w, |probs| {
            self.target
                .iter()
                .zip(probs)
                .map(|((_, q), &p)| {
                    value -= q * (q.ln() - ln_floored(p, &mut floored));
                    if p > 0.0 {
                        q / p
                    } else {
                        0.0
                    }
                })
                .collect()
        })?;
        Ok(Evaluation {
            value,
            grad,
            floored,
        })
    }

    /// `KL(p̃ ‖ p)` at `w`.
    pub fn kl(&self, w: &WeightAssignment) -> Result<f64> {
        Ok(-self.evaluate(w)?.value)
    }

    /// Feature distribution at `w`, restricted to the target's values.
    pub fn feature_probs(&self, w: &WeightAssignment) -> Result<Vec<(SurfaceValue, f64)>> {
        let probs = self.plan.probabilities(w)?;
        Ok(self
            .target
            .iter()
            .map(|(v, _)| v.clone())
            .zip(probs)
            .collect())
    }
}

/// Exact entropy `-Σ p log p` of the generator's output distribution.
pub struct ExactEntropy {
    plan: WmcPlan,
    support: Vec<SurfaceValue>,
}

impl ExactEntropy {
    pub fn new(mut compiled: CompiledProgram) -> Result<Self> {
        let (support, roots): (Vec<_>, Vec<_>) = support(&mut compiled, DEFAULT_VALUE_BUDGET)?
            .into_iter()
            .unzip();
        let plan = WmcPlan::new(&compiled.manager, &roots)?;
        Ok(ExactEntropy { plan, support })
    }

    pub fn support_size(&self) -> usize {
        self.support.len()
    }

    pub fn evaluate(&self, w: &WeightAssignment) -> Result<Evaluation> {
        let mut floored = 0;
        let mut value = 0.0;
        let (_, grad) = self.plan.gradient(w, |probs| {
            probs
                .iter()
                .map(|&p| {
                    if p <= 0.0 {
                        return 0.0;
                    }
                    let lp = ln_floored(p, &mut floored);
                    value -= p * lp;
                    -(lp + 1.0)
                })
                .collect()
        })?;
        Ok(Evaluation {
            value,
            grad,
            floored,
        })
    }

    pub fn distribution(&self, w: &WeightAssignment) -> Result<Distribution> {
        let probs = self.plan.probabilities(w)?;
        Ok(self.support.iter().cloned().zip(probs).collect())
    }
}

/// `log p(φ(x))` for a Boolean predicate φ.
pub struct Specification {
    compiled: CompiledValues,
    holds: Bdd,
}

impl Specification {
    /// `compiled` is the predicate pushed through the generator.
    pub fn new(compiled: CompiledValues) -> Result<Self> {
        if compiled
            .values
            .iter()
            .any(|(v, _)| !matches!(v, SurfaceValue::Bool(_)))
        {
            return Err(Error::Config("specification must return a Boolean".into()));
        }
        let holds = compiled
            .indicator(&SurfaceValue::Bool(true))
            .unwrap_or_else(|| compiled.manager.constant(false));
        Ok(Specification { compiled, holds })
    }

    pub fn evaluate(&self, w: &WeightAssignment) -> Result<Evaluation> {
        let mut ev = Evaluation::zero(w.len());
        let (p, g) = wmc_grad(&self.compiled.manager, self.holds, w)?;
        ev.value = ln_floored(p, &mut ev.floored);
        if p > 0.0 {
            ev.grad = g.into_iter().map(|x| x / p).collect();
        }
        Ok(ev)
    }
}

/// Which score-function estimator to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `E[f(x) ∇log p(x)]` only.
    #[default]
    ScoreFunction,
    /// Adds the `E[∇f(x)]` term for objectives whose integrand depends on
    /// the weights.
    Corrected,
}

/// Entropy of the generator restricted to samples that satisfy φ,
/// `-Σ_{φ(x)} p(x) log p(x)`, or, with a feature `g`, the entropy of the
/// feature over valid samples, `-Σ_{φ(x)} p(x) log p_g(g(x))`. Estimated
/// from samples.
pub struct SpecEntropyReinforce<'p> {
    program: &'p Program,
    validity: Option<String>,
    generator: CompiledProgram,
    feature: Option<FeaturePlan>,
    pub estimator: Estimator,
}

struct FeaturePlan {
    name: String,
    /// Sorted; plan roots follow the same order.
    values: Vec<SurfaceValue>,
    plan: WmcPlan,
}

impl<'p> SpecEntropyReinforce<'p> {
    /// `validity` of `None` means every sample is valid.
    pub fn new(
        program: &'p Program,
        table: &mut WeightTable,
        validity: Option<&str>,
        feature: Option<&str>,
        estimator: Estimator,
    ) -> Result<Self> {
        if let Some(v) = validity {
            program
                .function(v)
                .ok_or_else(|| Error::Config(format!("unknown predicate `{v}`")))?;
        }
        let generator = compile_main(program, table)?;
        let feature = match feature {
            Some(f) => {
                let compiled = compile_feature(program, f, table)?;
                let (values, roots): (Vec<_>, Vec<_>) = compiled.values.into_iter().unzip();
                let plan = WmcPlan::new(&compiled.manager, &roots)?;
                Some(FeaturePlan {
                    name: f.to_string(),
                    values,
                    plan,
                })
            }
            None => None,
        };
        Ok(SpecEntropyReinforce {
            program,
            validity: validity.map(str::to_string),
            generator,
            feature,
            estimator,
        })
    }

    pub fn generator(&self) -> &CompiledProgram {
        &self.generator
    }

    /// Estimate from `n` samples drawn with sample indices
    /// `first..first + n` of `seed`. Invalid samples contribute zero.
    pub fn evaluate(
        &mut self,
        table: &mut WeightTable,
        w: &WeightAssignment,
        n: usize,
        seed: u64,
        first: u64,
    ) -> Result<Evaluation> {
        let w = extend(w, table);
        let entry = self
            .program
            .main
            .as_ref()
            .ok_or_else(|| Error::Eval("program has no `main`".into()))?;
        let samples = sample_entry(self.program, entry, table, &w, n, seed, first)?;
        let mut counts: FxHashMap<SurfaceValue, usize> = FxHashMap::default();
        for s in samples {
            *counts.entry(s).or_insert(0) += 1;
        }
        let mut ordered: Vec<(SurfaceValue, usize)> = counts.into_iter().collect();
        ordered.sort();
        if let Some(v) = &self.validity {
            let mut kept = Vec::with_capacity(ordered.len());
            for (x, c) in ordered {
                if check_validity(self.program, v, &x)? {
                    kept.push((x, c));
                }
            }
            ordered = kept;
        }

        let cp = self.generator.manager.checkpoint();
        let result = self.accumulate(&ordered, &w);
        self.generator.manager.rollback(cp);
        let mut ev = result?;
        let nf = n.max(1) as f64;
        ev.value /= nf;
        ev.grad.iter_mut().for_each(|g| *g /= nf);
        Ok(ev)
    }

    /// Sums `c·f(x)` and `c·f(x)·∇log p(x)` (plus `c·∇f(x)` when corrected)
    /// over distinct valid samples `x` seen `c` times. Every probability and
    /// gradient comes from one sweep over the union of the indicators.
    fn accumulate(
        &mut self,
        samples: &[(SurfaceValue, usize)],
        w: &WeightAssignment,
    ) -> Result<Evaluation> {
        let mut ev = Evaluation::zero(w.len());
        let mut roots = Vec::with_capacity(samples.len());
        for (x, _) in samples {
            roots.push(self.generator.indicator(x)?);
        }
        let corrected = self.estimator == Estimator::Corrected;

        // Feature entropy: f(x) = -log p_g(g(x)), with p_g shared by every
        // sample of the same feature value.
        let mut feature_f: Option<Vec<f64>> = None;
        if let Some(fp) = &self.feature {
            let mut slot = Vec::with_capacity(samples.len());
            for (x, _) in samples {
                let y = apply_function(self.program, &fp.name, x)?;
                slot.push(fp.values.binary_search(&y).ok());
            }
            let mut mass = vec![0.0; fp.values.len()];
            for ((_, c), s) in samples.iter().zip(&slot) {
                if let Some(i) = s {
                    mass[*i] += *c as f64;
                }
            }
            let mut f = Vec::with_capacity(samples.len());
            let floored = &mut ev.floored;
            let (_, grad_f) = fp.plan.gradient(w, |pg| {
                for s in &slot {
                    let p = s.map_or(0.0, |i| pg[i]);
                    f.push(-ln_floored(p, floored));
                }
                if !corrected {
                    return vec![0.0; pg.len()];
                }
                pg.iter()
                    .zip(&mass)
                    .map(|(&p, &m)| if p > 0.0 { -m / p } else { 0.0 })
                    .collect()
            })?;
            if corrected {
                axpy(&mut ev.grad, 1.0, &grad_f);
            }
            feature_f = Some(f);
        }

        let plan = WmcPlan::new(&self.generator.manager, &roots)?;
        let mut value = 0.0;
        let mut floored = 0;
        let (_, grad) = plan.gradient(w, |probs| {
            probs
                .iter()
                .zip(samples)
                .enumerate()
                .map(|(k, (&p, (_, c)))| {
                    let c = *c as f64;
                    let lp = ln_floored(p, &mut floored);
                    let f = match &feature_f {
                        Some(f) => f[k],
                        None => -lp,
                    };
                    value += c * f;
                    if p <= 0.0 {
                        return 0.0;
                    }
                    // Score term c·f·∇p/p; for plain entropy ∇f = -∇p/p.
                    let mut a = c * f / p;
                    if corrected && feature_f.is_none() {
                        a -= c / p;
                    }
                    a
                })
                .collect()
        })?;
        axpy(&mut ev.grad, 1.0, &grad);
        ev.value = value;
        if feature_f.is_none() {
            ev.floored += floored;
        }
        Ok(ev)
    }
}

/// Negative KL from `target` to the distribution of `(g main)` at `w`.
pub fn target_kl(
    program: &Program,
    g: &str,
    target: &[(SurfaceValue, f64)],
    table: &mut WeightTable,
    w: &WeightAssignment,
) -> Result<Evaluation> {
    let obj = TargetKl::new(&compile_feature(program, g, table)?, target)?;
    obj.evaluate(&extend(w, table))
}

/// Exact entropy of `main` at `w`.
pub fn entropy_exact(
    program: &Program,
    table: &mut WeightTable,
    w: &WeightAssignment,
) -> Result<Evaluation> {
    let obj = ExactEntropy::new(compile_main(program, table)?)?;
    obj.evaluate(&extend(w, table))
}

/// `log p(φ(main))` at `w`.
pub fn specification(
    program: &Program,
    phi: &str,
    table: &mut WeightTable,
    w: &WeightAssignment,
) -> Result<Evaluation> {
    let obj = Specification::new(compile_feature(program, phi, table)?)?;
    obj.evaluate(&extend(w, table))
}

/// One-batch REINFORCE estimate of the entropy of valid samples.
pub fn spec_entropy_reinforce(
    program: &Program,
    phi: Option<&str>,
    table: &mut WeightTable,
    w: &WeightAssignment,
    n: usize,
    seed: u64,
) -> Result<Evaluation> {
    let mut obj = SpecEntropyReinforce::new(program, table, phi, None, Estimator::ScoreFunction)?;
    obj.evaluate(table, w, n, seed, 0)
}

/// One-batch REINFORCE estimate of the feature entropy of valid samples.
pub fn feature_spec_entropy_reinforce(
    program: &Program,
    phi: Option<&str>,
    g: &str,
    table: &mut WeightTable,
    w: &WeightAssignment,
    n: usize,
    seed: u64,
) -> Result<Evaluation> {
    let mut obj = SpecEntropyReinforce::new(program, table, phi, Some(g), Estimator::ScoreFunction)?;
    obj.evaluate(table, w, n, seed, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::parse_program;

    const COIN3: &str = "(type C (X) (Y) (Z))
        (define (id c) c)
        (define (is-x c) (match c ((X) true) (_ false)))
        (main (freq ((theta a) X) ((theta b) Y) ((theta c) Z)))";

    fn finite_difference(
        f: &dyn Fn(&WeightAssignment) -> f64,
        w: &WeightAssignment,
        i: usize,
    ) -> f64 {
        let h = 1e-6;
        let (mut up, mut down) = (w.clone(), w.clone());
        up.0[i] += h;
        down.0[i] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let p = parse_program(COIN3).unwrap();
        let mut t = WeightTable::new();
        let obj = ExactEntropy::new(compile_main(&p, &mut t).unwrap()).unwrap();
        let w = WeightAssignment(vec![0.5, 0.5, 0.3, 0.6, 0.5][..t.len()].to_vec());
        let ev = obj.evaluate(&w).unwrap();
        for id in t.ids() {
            let fd = finite_difference(&|w| obj.evaluate(w).unwrap().value, &w, id.index());
            assert!((fd - ev.grad[id.index()]).abs() < 1e-7);
        }
        let uniform = obj.evaluate(&t.initial()).unwrap();
        assert!((uniform.value - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn target_kl_is_zero_at_the_target() {
        let p = parse_program(COIN3).unwrap();
        let mut t = WeightTable::new();
        let target: Vec<(SurfaceValue, f64)> = ["(X)", "(Y)", "(Z)"]
            .iter()
            .map(|s| (SurfaceValue::parse(s).unwrap(), 1.0 / 3.0))
            .collect();
        let obj = TargetKl::new(&compile_feature(&p, "id", &mut t).unwrap(), &target).unwrap();
        let ev = obj.evaluate(&t.initial()).unwrap();
        assert!(ev.value.abs() < 1e-12);
        assert!(ev.grad_norm() < 1e-12);
        let bad = vec![(SurfaceValue::parse("(W)").unwrap(), 1.0)];
        assert!(matches!(
            TargetKl::new(&compile_feature(&p, "id", &mut t).unwrap(), &bad),
            Err(Error::NotInSupport(_))
        ));
    }

    #[test]
    fn specification_is_log_probability() {
        let p = parse_program(COIN3).unwrap();
        let mut t = WeightTable::new();
        let ev = specification(&p, "is-x", &mut t, &WeightTable::new().initial()).unwrap();
        assert!((ev.value - (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn floored_logs_are_counted() {
        let p = parse_program("(define (f b) b) (main (flip (theta q)))").unwrap();
        let mut t = WeightTable::new();
        let target = vec![
            (SurfaceValue::Bool(true), 0.5),
            (SurfaceValue::Bool(false), 0.5),
        ];
        let obj = TargetKl::new(&compile_feature(&p, "f", &mut t).unwrap(), &target).unwrap();
        let ev = obj.evaluate(&WeightAssignment(vec![0.0])).unwrap();
        assert_eq!(ev.floored, 1);
        assert!(ev.value.is_finite());
    }
}
