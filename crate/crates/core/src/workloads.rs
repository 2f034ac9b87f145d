//! Built-in generators, predicates and features used for tuning
//! experiments.

use crate::derive::{derive_generator, DeriveConfig};
use crate::error::{Error, Result};
use crate::surface::{parse_program, Program, SurfaceValue};
use crate::trainer::TrainConfig;

/// A generator together with the predicates and features defined over its
/// output.
#[derive(Clone, Debug)]
pub struct Workload {
    pub name: &'static str,
    pub program: Program,
    /// Pretty-printed program.
    pub source: String,
    /// Name of the Boolean validity predicate, if any.
    pub validity: Option<&'static str>,
    /// Names of unary feature functions.
    pub features: Vec<&'static str>,
    /// How the generator was derived, for type-directed workloads.
    pub derive: Option<DeriveConfig>,
    pub train: TrainConfig,
}

/// Five characters drawn from two overlapping groups.
pub const CHARS: &str = "
(type Char (A) (B) (C) (D) (E))

(define (id c) c)

(main
  (freq ((theta t1) (freq ((theta t2) (A)) ((theta t3) (B)) ((theta t4) (C))))
        ((theta t5) (freq ((theta t6) (C)) ((theta t7) (D)) ((theta t8) (E))))))
";

/// Colored binary trees with one leaf weight per remaining size.
pub const TREE: &str = "
(type Color (R) (B))
(type Tree (Leaf) (Branch Color Tree (Nat 2) (Nat 2) Tree))

(define (gen-color) (freq ((theta red) (R)) ((- 1 (theta red)) (B))))

(define (gen-nat) (nat-bits (flip 0.5) (flip 0.5)))

(define (gen-tree size)
  (match size
    (0 (Leaf))
    (_ (let ((w (match size (1 (theta s1)) (2 (theta s2)) (3 (theta s3)) (4 (theta s4)) (_ (theta s5)))))
         (freq (w (Leaf))
               ((- 1 w) (Branch (gen-color) (gen-tree (- size 1)) (gen-nat) (gen-nat) (gen-tree (- size 1)))))))))

(define (height t)
  (match t ((Leaf) 0) ((Branch c l k v r) (+ 1 (max (height l) (height r))))))

(main (gen-tree 5))
";

const BST_TYPES: &str = "
(type Tree (E) (T Tree (Nat 4) (Nat 4) Tree))

(define (above lo k) (match lo ((Some b) (< b k)) (_ true)))
(define (below hi k) (match hi ((Some b) (< k b)) (_ true)))

(define (bst-within t lo hi)
  (match t
    ((E) true)
    ((T l k v r) (and (above lo k) (below hi k) (bst-within l lo (Some k)) (bst-within r (Some k) hi)))))

(define (valid t) (bst-within t (None) (None)))

(define (height t)
  (match t ((E) 0) ((T l k v r) (+ 1 (max (height l) (height r))))))

(define (size t)
  (match t ((E) 0) ((T l k v r) (+ 1 (+ (size l) (size r))))))
";

const RBT_TYPES: &str = "
(type Color (Red) (Black))
(type Tree (Leaf) (Branch Tree Color (Nat 6) Tree))

(define (above lo k) (match lo ((Some b) (< b k)) (_ true)))
(define (below hi k) (match hi ((Some b) (< k b)) (_ true)))

(define (bst-within t lo hi)
  (match t
    ((Leaf) true)
    ((Branch l c k r) (and (above lo k) (below hi k) (bst-within l lo (Some k)) (bst-within r (Some k) hi)))))

(define (black-height t)
  (match t
    ((Leaf) (Some 0))
    ((Branch l c k r)
      (match (tuple (black-height l) (black-height r))
        ((tuple (Some a) (Some b))
          (if (== a b) (Some (+ a (match c ((Black) 1) (_ 0)))) (None)))
        (_ (None))))))

(define (is-red t) (match t ((Branch l (Red) k r) true) (_ false)))

(define (no-red-red t)
  (match t
    ((Leaf) true)
    ((Branch l c k r)
      (and (match c ((Red) (not (or (is-red l) (is-red r)))) (_ true))
           (no-red-red l)
           (no-red-red r)))))

(define (valid t)
  (and (bst-within t (None) (None))
       (match (black-height t) ((Some h) true) (_ false))
       (no-red-red t)))

(define (height t)
  (match t ((Leaf) 0) ((Branch l c k r) (+ 1 (max (height l) (height r))))))
";

/// Typing rules shared by both lambda-calculus workloads. Variables are de
/// Bruijn indices into a context list.
const STLC_COMMON: &str = "
(type Typ (TBool) (TFun Typ Typ))
(type Expr (Var (Nat 3)) (Const Bool) (App Expr Expr) (Abs Typ Expr))
(type Ctx (CNil) (CCons Typ Ctx))

(define (lookup ctx n)
  (match ctx
    ((CNil) (None))
    ((CCons t rest) (match n (0 (Some t)) (_ (lookup rest (- n 1)))))))

(define (type-in ctx e)
  (match e
    ((Var n) (lookup ctx n))
    ((Const b) (Some (TBool)))
    ((App f a)
      (match (tuple (type-in ctx f) (type-in ctx a))
        ((tuple (Some (TFun t1 t2)) (Some t3)) (if (== t1 t3) (Some t2) (None)))
        (_ (None))))
    ((Abs t body)
      (match (type-in (CCons t ctx) body) ((Some t2) (Some (TFun t t2))) (_ (None))))))

(define (type-of e) (type-in (CNil) e))

(define (well-typed e) (match (type-of e) ((Some t) true) (_ false)))

(define (height e)
  (match e
    ((App f a) (+ 1 (max (height f) (height a))))
    ((Abs t body) (+ 1 (height body)))
    (_ 0)))

(define (app-count e)
  (match e
    ((App f a) (+ 1 (+ (app-count f) (app-count a))))
    ((Abs t body) (app-count body))
    (_ 0)))
";

/// Handwritten generator of well-typed terms. Each size has its own
/// weights for choosing a variable, an application or a value, and failed
/// choices are retried among the remaining alternatives.
const STLC_BESPOKE: &str = "
(define (keep-new n)
  (match n
    (1 (flip 0.5))
    (2 (flip 0.3333333333333333))
    (3 (flip 0.25))
    (4 (flip 0.2))
    (5 (flip 0.16666666666666666))
    (6 (flip 0.14285714285714285))
    (_ (flip 0.125))))

(define (gen-var ctx t p n r)
  (match ctx
    ((CNil) r)
    ((CCons t2 rest)
      (if (== t t2)
          (gen-var rest t (+ p 1) (+ n 1) (if (keep-new n) (Some (Var p)) r))
          (gen-var rest t (+ p 1) n r)))))

(define (pick-var env tau) (gen-var env tau 0 1 (None)))

(define (gen-zero env tau)
  (match tau
    ((TBool) (Some (Const (flip 0.5))))
    ((TFun t1 t2)
      (match (gen-zero (CCons t1 env) t2) ((Some e) (Some (Abs t1 e))) (_ (None))))))

(define (gen-typ s)
  (match s
    (0 (TBool))
    (1 (freq ((theta bool1) (TBool)) ((- 1 (theta bool1)) (TFun (gen-typ 0) (gen-typ 0)))))
    (_ (freq ((theta bool2) (TBool)) ((theta fun2) (TFun (gen-typ 1) (gen-typ 1)))))))

(define (gen-app env tau n)
  (let ((argty (gen-typ 2)))
    (match (gen-expr env (TFun argty tau) n)
      ((Some e1) (match (gen-expr env argty n) ((Some e2) (Some (App e1 e2))) (_ (None))))
      (_ (None)))))

(define (gen-val env tau n)
  (match tau
    ((TBool) (Some (Const (flip 0.5))))
    ((TFun t1 t2) (match (gen-expr (CCons t1 env) t2 n) ((Some e) (Some (Abs t1 e))) (_ (None))))))

(define (gen-expr env tau size)
  (match size
    (0 (backtrack ((theta zvar) (pick-var env tau)) ((theta zzero) (gen-zero env tau))))
    (1 (backtrack ((theta var1) (pick-var env tau)) ((theta app1) (gen-app env tau 0)) ((theta val1) (gen-val env tau 0))))
    (2 (backtrack ((theta var2) (pick-var env tau)) ((theta app2) (gen-app env tau 1)) ((theta val2) (gen-val env tau 1))))
    (3 (backtrack ((theta var3) (pick-var env tau)) ((theta app3) (gen-app env tau 2)) ((theta val3) (gen-val env tau 2))))
    (4 (backtrack ((theta var4) (pick-var env tau)) ((theta app4) (gen-app env tau 3)) ((theta val4) (gen-val env tau 3))))
    (_ (backtrack ((theta var5) (pick-var env tau)) ((theta app5) (gen-app env tau 4)) ((theta val5) (gen-val env tau 4))))))

(define (opt-height o) (match o ((Some e) (height e)) (_ 0)))
; Application count saturating at 4, which keeps the per-count guards small.
(define (app-count-upto-4 e)
  (match e
    ((App f a) (min 4 (+ 1 (+ (app-count-upto-4 f) (app-count-upto-4 a)))))
    ((Abs t body) (app-count-upto-4 body))
    (_ 0)))

(define (opt-app-count o) (match o ((Some e) (app-count-upto-4 e)) (_ 0)))
(define (opt-well-typed o) (match o ((Some e) (well-typed e)) (_ false)))

(main (gen-expr (CNil) (gen-typ 2) 5))
";

fn exact_config() -> TrainConfig {
    TrainConfig {
        clamp: false,
        ..TrainConfig::default()
    }
}

/// The bespoke features have BDDs of millions of nodes, so take fewer,
/// larger steps.
fn bespoke_config() -> TrainConfig {
    TrainConfig {
        lr: 1.0,
        epochs: 600,
        ..exact_config()
    }
}

fn handwritten(
    name: &'static str,
    src: &str,
    validity: Option<&'static str>,
    features: Vec<&'static str>,
    train: TrainConfig,
) -> Result<Workload> {
    let program = parse_program(src)?;
    Ok(Workload {
        name,
        source: program.to_string(),
        program,
        validity,
        features,
        derive: None,
        train,
    })
}

fn derived(
    name: &'static str,
    types: &str,
    cfg: DeriveConfig,
    validity: &'static str,
    features: Vec<&'static str>,
    train: TrainConfig,
) -> Result<Workload> {
    let d = derive_generator(&parse_program(types)?, &cfg)?;
    Ok(Workload {
        name,
        program: d.program,
        source: d.source,
        validity: Some(validity),
        features,
        derive: Some(cfg),
        train,
    })
}

/// Names accepted by [`workload`].
pub const WORKLOAD_NAMES: [&str; 6] = ["chars", "tree", "bst", "rbt", "stlc", "stlc-bespoke"];

/// Builds one built-in workload by name.
pub fn workload(name: &str) -> Result<Workload> {
    match name {
        "chars" => handwritten("chars", CHARS, None, vec!["id"], exact_config()),
        "tree" => handwritten("tree", TREE, None, vec!["height"], exact_config()),
        "bst" => derived(
            "bst",
            BST_TYPES,
            DeriveConfig::new("Tree", 4, 2),
            "valid",
            vec!["height", "size"],
            TrainConfig::default(),
        ),
        "rbt" => derived(
            "rbt",
            RBT_TYPES,
            DeriveConfig::new("Tree", 4, 2),
            "valid",
            vec!["height"],
            TrainConfig::default(),
        ),
        "stlc" => {
            let mut cfg = DeriveConfig::new("Expr", 5, 2);
            cfg.size_caps.insert("Typ".into(), 2);
            // Tuned for diverse types, where the clamp would keep a floor of
            // ill-typed terms.
            derived(
                "stlc",
                STLC_COMMON,
                cfg,
                "well-typed",
                vec!["type-of", "height", "app-count"],
                exact_config(),
            )
        }
        "stlc-bespoke" => handwritten(
            "stlc-bespoke",
            &format!("{STLC_COMMON}{STLC_BESPOKE}"),
            Some("opt-well-typed"),
            vec!["opt-height", "opt-app-count"],
            bespoke_config(),
        ),
        other => Err(Error::Config(format!("unknown workload `{other}`"))),
    }
}

/// Every built-in workload.
pub fn builtin_workloads() -> Result<Vec<Workload>> {
    WORKLOAD_NAMES.iter().map(|n| workload(n)).collect()
}

/// Uniform distribution over the natural numbers `lo..=hi`.
pub fn uniform_target(lo: u64, hi: u64) -> Vec<(SurfaceValue, f64)> {
    let n = (hi - lo + 1) as f64;
    (lo..=hi).map(|k| (SurfaceValue::Nat(k), 1.0 / n)).collect()
}

/// Distribution over `lo..=hi` with mass proportional to `k - lo + 1`.
pub fn linear_target(lo: u64, hi: u64) -> Vec<(SurfaceValue, f64)> {
    let total: u64 = (1..=hi - lo + 1).sum();
    (lo..=hi)
        .map(|k| (SurfaceValue::Nat(k), (k - lo + 1) as f64 / total as f64))
        .collect()
}

/// Target over the number of applications in a term, favouring small terms.
pub fn app_count_target() -> Vec<(SurfaceValue, f64)> {
    [0.4, 0.3, 0.2, 0.1]
        .iter()
        .enumerate()
        .map(|(k, &p)| (SurfaceValue::Nat(k as u64), p))
        .collect()
}

/// Uniform distribution over the five characters.
pub fn chars_target() -> Vec<(SurfaceValue, f64)> {
    ["A", "B", "C", "D", "E"]
        .iter()
        .map(|c| (SurfaceValue::ctor(c, vec![]), 0.2))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::check_validity;

    #[test]
    fn all_workloads_build() {
        let all = builtin_workloads().unwrap();
        assert_eq!(all.len(), WORKLOAD_NAMES.len());
        for w in &all {
            for f in &w.features {
                assert!(w.program.function(f).is_some(), "{}: {f}", w.name);
            }
        }
    }

    #[test]
    fn leaf_is_a_valid_red_black_tree() {
        let w = workload("rbt").unwrap();
        assert!(
            check_validity(&w.program, "valid", &SurfaceValue::parse("(Leaf)").unwrap()).unwrap()
        );
        let red_red =
            SurfaceValue::parse("(Branch (Branch (Leaf) (Red) 1 (Leaf)) (Red) 2 (Leaf))").unwrap();
        assert!(!check_validity(&w.program, "valid", &red_red).unwrap());
        let unbalanced =
            SurfaceValue::parse("(Branch (Branch (Leaf) (Black) 1 (Leaf)) (Black) 2 (Leaf))")
                .unwrap();
        assert!(!check_validity(&w.program, "valid", &unbalanced).unwrap());
        let good = SurfaceValue::parse(
            "(Branch (Branch (Leaf) (Red) 1 (Leaf)) (Black) 2 (Branch (Leaf) (Red) 3 (Leaf)))",
        )
        .unwrap();
        assert!(check_validity(&w.program, "valid", &good).unwrap());
    }

    #[test]
    fn single_branch_has_height_one() {
        let w = workload("tree").unwrap();
        let t = SurfaceValue::parse("(Branch (R) (Leaf) 0 0 (Leaf))").unwrap();
        let h = crate::surface::apply_function(&w.program, "height", &t).unwrap();
        assert_eq!(h, SurfaceValue::Nat(1));
    }

    #[test]
    fn stlc_typing() {
        let w = workload("stlc").unwrap();
        let ty = |s: &str| {
            crate::surface::apply_function(&w.program, "type-of", &SurfaceValue::parse(s).unwrap())
                .unwrap()
        };
        assert_eq!(
            ty("(Abs (TBool) (Var 0))").to_string(),
            "(Some (TFun (TBool) (TBool)))"
        );
        assert_eq!(
            ty("(App (Abs (TBool) (Var 0)) (Const true))").to_string(),
            "(Some (TBool))"
        );
        assert_eq!(ty("(App (Const true) (Const true))").to_string(), "(None)");
        assert_eq!(ty("(Var 0)").to_string(), "(None)");
    }

    #[test]
    fn targets_are_distributions() {
        for t in [
            uniform_target(1, 5),
            linear_target(1, 5),
            app_count_target(),
            chars_target(),
        ] {
            assert!((t.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
