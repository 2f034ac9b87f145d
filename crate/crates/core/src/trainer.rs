//! Gradient-based tuning of symbolic weights.
//!
//! Weights are optimised in logit space, `θ = sigmoid(ℓ)`, by plain
//! gradient ascent. An optional clamp keeps every θ inside `[lo, hi]` by
//! projecting the logits after each step.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::inference::{compile_feature, compile_main};
use crate::objectives::{
    Estimator, Evaluation, ExactEntropy, SpecEntropyReinforce, Specification, TargetKl,
};
use crate::surface::{Program, SurfaceValue};
use crate::weights::{WeightAssignment, WeightTable};

/// Window, in epochs, for the plateau test.
pub const PLATEAU_WINDOW: usize = 50;
/// Relative change below which the objective counts as flat.
pub const PLATEAU_TOLERANCE: f64 = 1e-7;

/// Optimiser settings.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Samples per batch for sample-based objectives.
    pub spb: usize,
    pub clamp: bool,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub seed: u64,
    /// Stop once the objective changes by less than [`PLATEAU_TOLERANCE`]
    /// (relative) over [`PLATEAU_WINDOW`] epochs.
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.3,
            epochs: 2000,
            spb: 200,
            clamp: true,
            clamp_lo: 0.1,
            clamp_hi: 0.9,
            seed: 0,
            early_stop: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.clamp
            && !(0.0 < self.clamp_lo && self.clamp_lo < self.clamp_hi && self.clamp_hi < 1.0)
        {
            return bad("clamp bounds must satisfy 0 < lo < hi < 1");
        }
        Ok(())
    }

    fn logit_bounds(&self) -> (f64, f64) {
        if self.clamp {
            (logit(self.clamp_lo), logit(self.clamp_hi))
        } else {
            // Keeps θ strictly inside (0, 1) so logs stay finite.
            (-30.0, 30.0)
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// An objective ready to be evaluated repeatedly.
pub enum Objective<'p> {
    TargetKl(TargetKl),
    Entropy(ExactEntropy),
    Specification(Specification),
    Reinforce(SpecEntropyReinforce<'p>),
}

impl Objective<'_> {
    /// Evaluates at `w`. Sample-based objectives draw the batch for `epoch`.
    pub fn evaluate(
        &mut self,
        table: &mut WeightTable,
        w: &WeightAssignment,
        cfg: &TrainConfig,
        epoch: usize,
    ) -> Result<Evaluation> {
        match self {
            Objective::TargetKl(o) => o.evaluate(w),
            Objective::Entropy(o) => o.evaluate(w),
            Objective::Specification(o) => o.evaluate(w),
            Objective::Reinforce(o) => {
                o.evaluate(table, w, cfg.spb, cfg.seed, (epoch * cfg.spb) as u64)
            }
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Objective::Reinforce(_))
    }
}

/// One row of the training trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    /// Objective at the weights used for this epoch's step.
    pub objective: f64,
    pub grad_norm: f64,
    /// Digest of the weights after the step.
    pub digest: u64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub weights: WeightAssignment,
    pub trace: Vec<TraceRow>,
    pub stopped_early: bool,
}

/// Hash of the exact bit patterns of `w`.
pub fn weights_digest(w: &WeightAssignment) -> u64 {
    let mut h = DefaultHasher::new();
    for v in w.as_slice() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Maps logits to weights.
pub fn realize(logits: &[f64]) -> WeightAssignment {
    WeightAssignment(logits.iter().map(|&l| sigmoid(l)).collect())
}

/// Runs gradient ascent from `init` (padded with initial values for
/// weights that `init` does not cover).
pub fn train(
    objective: &mut Objective<'_>,
    table: &mut WeightTable,
    init: &WeightAssignment,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    let (lo, hi) = cfg.logit_bounds();
    let project = |l: f64| l.clamp(lo, hi);
    let mut w0 = init.clone();
    w0.0.extend(table.initial().0.into_iter().skip(w0.len()));
    w0.check(table.len())?;
    let mut logits: Vec<f64> = w0.as_slice().iter().map(|&p| project(logit(p))).collect();
    let mut trace = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let w = realize(&logits);
        let ev = objective.evaluate(table, &w, cfg, epoch)?;
        if !ev.value.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "objective is not finite at epoch {epoch}"
            )));
        }
        // Objectives may register weights lazily; grow to match.
        if ev.grad.len() > logits.len() {
            for id in logits.len()..ev.grad.len() {
                logits.push(project(logit(table.initial().0[id])));
            }
        }
        for (i, l) in logits.iter_mut().enumerate() {
            let theta = sigmoid(*l);
            let g = ev.grad.get(i).copied().unwrap_or(0.0) * theta * (1.0 - theta);
            *l = project(*l + cfg.lr * g);
        }
        trace.push(TraceRow {
            epoch,
            objective: ev.value,
            grad_norm: ev.grad_norm(),
            digest: weights_digest(&realize(&logits)),
        });
        history.push(ev.value);
        if cfg.early_stop && history.len() > PLATEAU_WINDOW {
            let old = history[history.len() - 1 - PLATEAU_WINDOW];
            if (ev.value - old).abs() <= PLATEAU_TOLERANCE * old.abs().max(1e-12) {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainResult {
        weights: realize(&logits),
        trace,
        stopped_early,
    })
}

/// Objective section of a training config file.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// One of `target_kl`, `entropy`, `specification`, `spec_entropy`,
    /// `feature_spec_entropy`.
    pub kind: String,
    pub feature: Option<String>,
    pub validity: Option<String>,
    /// Target probabilities keyed by the printed feature value.
    #[serde(default)]
    pub target: BTreeMap<String, f64>,
    #[serde(default)]
    pub estimator: Estimator,
    /// For `entropy`: enumerate the support instead of sampling.
    #[serde(default = "default_true")]
    pub exact: bool,
}

fn default_true() -> bool {
    true
}

/// File locations. Command-line flags take precedence.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    pub program: Option<String>,
    /// Name of a built-in workload, used when `program` is absent.
    pub workload: Option<String>,
    pub weights: Option<String>,
    pub out: Option<String>,
    pub trace: Option<String>,
}

/// A whole training config file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub io: IoConfig,
}

impl ConfigFile {
    pub fn from_toml(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| Error::Config(e.to_string()))
    }
}

impl ObjectiveConfig {
    pub fn target_values(&self) -> Result<Vec<(SurfaceValue, f64)>> {
        self.target
            .iter()
            .map(|(k, &p)| Ok((SurfaceValue::parse(k)?, p)))
            .collect()
    }

    fn need<'a>(&self, field: &'a Option<String>, what: &str) -> Result<&'a str> {
        field
            .as_deref()
            .ok_or_else(|| Error::Config(format!("objective `{}` needs `{what}`", self.kind)))
    }

    /// Compiles whatever the objective needs.
    pub fn build<'p>(
        &self,
        program: &'p Program,
        table: &mut WeightTable,
    ) -> Result<Objective<'p>> {
        Ok(match self.kind.as_str() {
            "target_kl" => {
                let feature = self.need(&self.feature, "feature")?;
                Objective::TargetKl(TargetKl::new(
                    &compile_feature(program, feature, table)?,
                    &self.target_values()?,
                )?)
            }
            "entropy" if self.exact => {
                Objective::Entropy(ExactEntropy::new(compile_main(program, table)?)?)
            }
            "entropy" => Objective::Reinforce(SpecEntropyReinforce::new(
                program,
                table,
                None,
                None,
                self.estimator,
            )?),
            "specification" => {
                let phi = self.need(&self.validity, "validity")?;
                Objective::Specification(Specification::new(compile_feature(program, phi, table)?)?)
            }
            "spec_entropy" => Objective::Reinforce(SpecEntropyReinforce::new(
                program,
                table,
                self.validity.as_deref(),
                None,
                self.estimator,
            )?),
            "feature_spec_entropy" => {
                let feature = self.need(&self.feature, "feature")?;
                Objective::Reinforce(SpecEntropyReinforce::new(
                    program,
                    table,
                    self.validity.as_deref(),
                    Some(feature),
                    self.estimator,
                )?)
            }
            other => return Err(Error::Config(format!("unknown objective kind `{other}`"))),
        })
    }
}

/// Serialises weights as a JSON object keyed by weight name.
pub fn weights_to_json(table: &WeightTable, w: &WeightAssignment) -> String {
    let map: BTreeMap<&str, f64> = table.named(w).collect();
    serde_json::to_string_pretty(&map).expect("maps of floats serialise")
}

/// Reads a name-keyed JSON object. Missing names keep their initial values.
pub fn weights_from_json(table: &WeightTable, src: &str) -> Result<WeightAssignment> {
    let map: BTreeMap<String, f64> =
        serde_json::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
    table.assignment_from_pairs(map.iter().map(|(k, &v)| (k.as_str(), v)))
}

/// Renders the trace as CSV with a header row.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("epoch,objective,grad_norm,digest\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{:016x}\n",
            r.epoch, r.objective, r.grad_norm, r.digest
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::parse_program;

    const COIN: &str = "(define (id b) b) (main (flip (theta q)))";

    fn kl_objective<'p>(p: &'p Program, t: &mut WeightTable, q: f64) -> Objective<'p> {
        let target = vec![
            (SurfaceValue::Bool(true), q),
            (SurfaceValue::Bool(false), 1.0 - q),
        ];
        Objective::TargetKl(TargetKl::new(&compile_feature(p, "id", t).unwrap(), &target).unwrap())
    }

    #[test]
    fn ascends_to_target() {
        let p = parse_program(COIN).unwrap();
        let mut t = WeightTable::new();
        let mut obj = kl_objective(&p, &mut t, 0.8);
        let cfg = TrainConfig {
            epochs: 500,
            clamp: false,
            ..Default::default()
        };
        let r = {
            let w0 = t.initial();
            train(&mut obj, &mut t, &w0, &cfg)
        }
        .unwrap();
        assert!((r.weights.0[0] - 0.8).abs() < 1e-4);
        assert_eq!(r.trace.len(), 500);
    }

    #[test]
    fn clamp_bounds_weights() {
        let p = parse_program(COIN).unwrap();
        let mut t = WeightTable::new();
        let mut obj = kl_objective(&p, &mut t, 0.99);
        let cfg = TrainConfig {
            epochs: 300,
            ..Default::default()
        };
        let r = {
            let w0 = t.initial();
            train(&mut obj, &mut t, &w0, &cfg)
        }
        .unwrap();
        assert!((r.weights.0[0] - 0.9).abs() < 1e-12);
        // A start outside the clamp is projected in and can still move.
        let r = train(&mut obj, &mut t, &WeightAssignment(vec![1.0 / 16.0]), &cfg).unwrap();
        assert!(r.weights.0[0] > 0.85);
    }

    #[test]
    fn zero_epochs_keep_weights() {
        let p = parse_program(COIN).unwrap();
        let mut t = WeightTable::new();
        let mut obj = kl_objective(&p, &mut t, 0.3);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let r = train(&mut obj, &mut t, &WeightAssignment(vec![0.25]), &cfg).unwrap();
        assert!((r.weights.0[0] - 0.25).abs() < 1e-15);
        assert!(r.trace.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let src = "(type C (X) (Y) (Z))
            (define (ok c) (match c ((Z) false) (_ true)))
            (main (freq ((theta a) X) ((theta b) Y) ((theta c) Z)))";
        let p = parse_program(src).unwrap();
        let run = || {
            let mut t = WeightTable::new();
            let oc = ObjectiveConfig {
                kind: "spec_entropy".into(),
                validity: Some("ok".into()),
                ..Default::default()
            };
            let mut obj = oc.build(&p, &mut t).unwrap();
            let cfg = TrainConfig {
                epochs: 20,
                spb: 50,
                seed: 9,
                ..Default::default()
            };
            {
                let w0 = t.initial();
                train(&mut obj, &mut t, &w0, &cfg)
            }
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn early_stop_on_plateau() {
        let p = parse_program(COIN).unwrap();
        let mut t = WeightTable::new();
        let mut obj = kl_objective(&p, &mut t, 0.5);
        let cfg = TrainConfig {
            epochs: 1000,
            early_stop: true,
            ..Default::default()
        };
        let r = {
            let w0 = t.initial();
            train(&mut obj, &mut t, &w0, &cfg)
        }
        .unwrap();
        assert!(r.stopped_early);
        assert_eq!(r.trace.len(), PLATEAU_WINDOW + 1);
    }

    #[test]
    fn config_and_weights_round_trip() {
        let cfg = ConfigFile::from_toml(
            "[objective]\nkind = \"target_kl\"\nfeature = \"id\"\n[objective.target]\ntrue = 0.25\nfalse = 0.75\n[train]\nlr = 0.1\n",
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.1);
        assert_eq!(cfg.train.epochs, 2000);
        assert_eq!(cfg.objective.target_values().unwrap().len(), 2);
        assert!(ConfigFile::from_toml("[objective]\nkind = \"x\"\nbogus = 1\n").is_err());

        let p = parse_program(COIN).unwrap();
        let mut t = WeightTable::new();
        let _ = cfg.objective.build(&p, &mut t).unwrap();
        let w = WeightAssignment(vec![0.125]);
        let back = weights_from_json(&t, &weights_to_json(&t, &w)).unwrap();
        assert_eq!(back, w);
        assert!(weights_from_json(&t, "{\"nope\": 0.5}").is_err());
    }
}
