//! Lowering of surface programs agrees with direct execution.

use proptest::prelude::*;
use tunegen::compile::compile_lowered;
use tunegen::inference::{exact_distribution, DEFAULT_VALUE_BUDGET};
use tunegen::ir::{CoreExpr, NumericTerm};
use tunegen::surface::{enumerate_paths, eval_concrete, lower, parse_program, SurfaceValue};
use tunegen::weights::{WeightAssignment, WeightTable};
use tunegen::Error;

const LIST: &str = "
(type List (Nil) (Cons (Nat 5) List))
(define (gen-list n)
  (match n
    (0 (Nil))
    (_ (freq (1 (Nil)) (3 (Cons (uniform 10 20 7) (gen-list (- n 1))))))))
(main (gen-list 2))";

const CHARS: &str = "
(type Char (A) (B) (C) (D) (E))
(main (freq ((theta t1) (freq ((theta t2) A) ((theta t3) B) ((theta t4) C)))
            ((theta t5) (freq ((theta t6) C) ((theta t7) D) ((theta t8) E)))))";

const TREE: &str = "
(type Color (R) (B))
(type Tree (Leaf) (Node Color Tree (Nat 2) Tree))
(define (color) (freq ((theta red) R) ((- 1 (theta red)) B)))
(define (tree size)
  (match size
    (0 (Leaf))
    (_ (let ((w (match size (1 (theta s1)) (2 (theta s2)) (_ (theta s3)))))
         (freq (w (Leaf))
               ((- 1 w) (Node (color) (tree (- size 1)) (nat-bits (flip 0.5) (flip 0.25)) (tree (- size 1)))))))))
(define (height t)
  (match t ((Leaf) 0) ((Node c l k r) (+ 1 (max (height l) (height r))))))
(define (black-root t) (match t ((Node B l k r) true) (_ false)))
(main (tree 2))";

const BACKTRACK: &str = "
(define (sometimes) (if (flip 0.3) (Some 7) (None)))
(main (backtrack ((theta a) (sometimes)) ((theta b) (Some (uniform 1 2))) (0.5 (None))))";

const DEPS: &str = "
(type K (P) (Q))
(define (g size ctx)
  (match size
    (0 (tuple))
    (_ (let ((c (freqdep (tuple size ctx) (P) (Q))))
         (tuple c (g (- size 1) (stack-push 1 c ctx)))))))
(main (g 3 (tuple)))";

const EQUALITY: &str = "
(type Ty (TB) (TF Ty Ty))
(define (ty s) (match s (0 (TB)) (_ (freq (0.5 (TB)) (0.5 (TF (ty (- s 1)) (ty (- s 1))))))))
(define (same a b) (match (tuple a b) ((tuple (TF x y) (TF u v)) (and (== x u) (== y v))) ((tuple (TB) (TB)) true) (_ false)))
(main (let ((a (ty 2)) (b (ty 1))) (tuple (== a b) (same a b) (< (uniform 0 1 2 3) 2))))";

fn exact(
    src: &str,
    w: Option<&[f64]>,
) -> (
    tunegen::inference::Distribution,
    tunegen::inference::Distribution,
) {
    let p = parse_program(src).unwrap();
    let mut table = WeightTable::new();
    let lowered = lower(&p, &mut table).unwrap();
    let w = match w {
        Some(vals) => {
            let mut a = table.initial();
            for (i, v) in vals.iter().enumerate().take(a.len()) {
                a.0[i] = *v;
            }
            a
        }
        None => table.initial(),
    };
    let mut compiled = compile_lowered(&lowered).unwrap();
    let d = exact_distribution(&mut compiled, &w, DEFAULT_VALUE_BUDGET).unwrap();
    let oracle = enumerate_paths(&p, p.main.as_ref().unwrap(), &mut table, &w, 1 << 20).unwrap();
    (d, oracle)
}

fn assert_same(d: &tunegen::inference::Distribution, oracle: &tunegen::inference::Distribution) {
    let total: f64 = d.values().sum();
    assert!((total - 1.0).abs() < 1e-12, "total mass {total}");
    for (v, p) in oracle {
        if *p < 1e-15 {
            continue;
        }
        let q = d.get(v).copied().unwrap_or(0.0);
        assert!((p - q).abs() < 1e-12, "{v}: paths {p} vs exact {q}");
    }
    for (v, q) in d {
        assert!(
            oracle.contains_key(v),
            "{v} ({q}) not reachable by execution"
        );
    }
}

#[test]
fn list_generator() {
    let (d, oracle) = exact(LIST, None);
    assert_same(&d, &oracle);
    let v = SurfaceValue::parse("(Cons 10 (Cons 20 (Nil)))").unwrap();
    assert!((d[&v] - 0.75 / 3.0 * 0.75 / 3.0).abs() < 1e-12);
}

#[test]
fn constant_weights_lower_to_ratio_chain() {
    let p = parse_program("(type T (X) (Y) (Z)) (main (freq (1 X) (2 Y) (3 Z)))").unwrap();
    let mut table = WeightTable::new();
    let l = lower(&p, &mut table).unwrap();
    let mut consts = Vec::new();
    l.expr.visit(&mut |e| {
        if let CoreExpr::Flip(NumericTerm::Constant(c)) = e {
            consts.push(*c);
        }
    });
    assert_eq!(consts.len(), 2);
    assert!((consts[0] - 1.0 / 6.0).abs() < 1e-15);
    assert!((consts[1] - 2.0 / 5.0).abs() < 1e-15);
}

#[test]
fn symbolic_weights_become_uniform_sticks() {
    let p = parse_program(CHARS).unwrap();
    let mut table = WeightTable::new();
    lower(&p, &mut table).unwrap();
    let sticks: Vec<f64> = table
        .ids()
        .filter(|&id| table.name(id).starts_with("freq"))
        .map(|id| table.init_value(id))
        .collect();
    // One stick for the outer pair and two for each inner triple.
    assert_eq!(sticks.len(), 5);
    let (d, oracle) = exact(CHARS, None);
    assert_same(&d, &oracle);
    assert!((d[&SurfaceValue::parse("(C)").unwrap()] - (1.0 / 6.0 + 1.0 / 6.0)).abs() < 1e-12);
}

#[test]
fn recursive_tree_generator() {
    let (d, oracle) = exact(TREE, Some(&[0.3, 0.6, 0.2, 0.5]));
    assert_same(&d, &oracle);
}

#[test]
fn backtracking_retries_failed_alternatives() {
    let (d, oracle) = exact(BACKTRACK, Some(&[0.2, 0.7]));
    assert_same(&d, &oracle);
    // The second alternative never fails, so neither does the whole choice.
    assert!(!d.contains_key(&SurfaceValue::parse("(None)").unwrap()));
    assert!(d[&SurfaceValue::parse("(Some 7)").unwrap()] > 0.0);
}

#[test]
fn dependency_indexed_choices() {
    let p = parse_program(DEPS).unwrap();
    let mut table = WeightTable::new();
    lower(&p, &mut table).unwrap();
    // Contexts: size 3 with (), size 2 with (P) or (Q), size 1 likewise.
    assert_eq!(table.count_with_prefix("dep"), 5);
    let (d, oracle) = exact(DEPS, Some(&[0.1, 0.2, 0.3, 0.4, 0.5]));
    assert_same(&d, &oracle);
}

#[test]
fn symbolic_equality_and_comparison() {
    let (d, oracle) = exact(EQUALITY, None);
    assert_same(&d, &oracle);
    for v in d.keys() {
        let SurfaceValue::Tuple(items) = v else {
            panic!()
        };
        assert_eq!(
            items[0], items[1],
            "structural equality disagrees with pattern matching"
        );
    }
}

#[test]
fn unbounded_recursion_is_reported() {
    let p = parse_program("(define (f n) (if (flip 0.5) n (f (+ n 1)))) (main (f 0))").unwrap();
    let mut table = WeightTable::new();
    assert!(matches!(lower(&p, &mut table), Err(Error::Lower(_))));
}

#[test]
fn concrete_evaluation_follows_outcomes() {
    let p = parse_program(LIST).unwrap();
    // No stop, pick 10 (first uniform flip succeeds), then stop.
    let v = eval_concrete(&p, &[false, true, true]).unwrap();
    assert_eq!(v, SurfaceValue::parse("(Cons 10 (Nil))").unwrap());
    assert!(eval_concrete(&p, &[false]).is_err());
}

#[test]
fn feature_functions_apply_to_values() {
    let p = parse_program(TREE).unwrap();
    let t = SurfaceValue::parse("(Node B (Node R (Leaf) 1 (Leaf)) 0 (Leaf))").unwrap();
    assert_eq!(
        tunegen::surface::apply_function(&p, "height", &t).unwrap(),
        SurfaceValue::Nat(2)
    );
    assert_eq!(
        tunegen::surface::apply_function(&p, "black-root", &t).unwrap(),
        SurfaceValue::Bool(true)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn lowering_agrees_with_execution(ws in proptest::collection::vec(0.02f64..0.98, 8)) {
        for src in [CHARS, TREE, BACKTRACK, DEPS] {
            let (d, oracle) = exact(src, Some(&ws));
            assert_same(&d, &oracle);
        }
    }
}

#[test]
fn weights_outside_unit_interval_are_rejected() {
    let p = parse_program(TREE).unwrap();
    let mut table = WeightTable::new();
    let l = lower(&p, &mut table).unwrap();
    let mut c = compile_lowered(&l).unwrap();
    let w = WeightAssignment(vec![1.2; table.len()]);
    assert!(exact_distribution(&mut c, &w, DEFAULT_VALUE_BUDGET).is_err());
}
