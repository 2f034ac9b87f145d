//! Derivation of type-directed generators with dependency-split weights.
//!
//! For every data type reachable from a root type, the derived program has
//! a constructor-choice enum `<T>C`, a sized helper `gen-<T>-helper` taking
//! `(size stack chosen)`, and a terminal generator `gen-<T>-terminal` used
//! when the size runs out. Each helper draws the constructors of all its
//! children in one `freqdep` over their product, keyed on
//! `(tuple size stack chosen)`, and passes each child a stack extended
//! with a fresh program location and cut to the lookback length.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::error::{Error, Result};
use crate::surface::{parse_program, AdtDecl, FieldTy, Program};

/// Settings for [`derive_generator`].
#[derive(Clone, Debug, PartialEq, Eq, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeriveConfig {
    pub root: String,
    pub initial_size: u32,
    /// How many enclosing call sites are remembered in the dependencies.
    pub lookback: u32,
    /// Per-type ceiling on the size passed to that type's helper. Used to
    /// keep auxiliary types such as function types small.
    #[serde(default)]
    pub size_caps: BTreeMap<String, u32>,
}

impl DeriveConfig {
    pub fn new(root: &str, initial_size: u32, lookback: u32) -> Self {
        DeriveConfig {
            root: root.to_string(),
            initial_size,
            lookback,
            size_caps: BTreeMap::new(),
        }
    }
}

/// A derived generator.
#[derive(Clone, Debug)]
pub struct Derived {
    /// Pretty-printed source of the whole program.
    pub source: String,
    pub program: Program,
    /// Number of program locations handed out.
    pub locations: u32,
}

/// Hands out program-location integers in increasing order from 0.
#[derive(Debug, Default)]
pub struct LocationCounter(u32);

impl LocationCounter {
    pub fn fresh_loc(&mut self) -> u32 {
        self.0 += 1;
        self.0 - 1
    }
}

fn enum_name(ty: &str) -> String {
    format!("{ty}C")
}

fn ctor_choice(ctor: &str) -> String {
    format!("{ctor}C")
}

fn helper(ty: &str) -> String {
    format!("gen-{ty}-helper")
}

fn terminal(ty: &str) -> String {
    format!("gen-{ty}-terminal")
}

const DEPS: &str = "(tuple size stack chosen)";

struct Deriver<'a> {
    types: &'a Program,
    cfg: &'a DeriveConfig,
    locs: LocationCounter,
    /// Builtin field generators that are needed, keyed by their name.
    builtins: BTreeMap<String, String>,
    reach: BTreeMap<String, BTreeSet<String>>,
}

impl<'a> Deriver<'a> {
    fn decl(&self, name: &str) -> Result<&'a AdtDecl> {
        match self.types.adt(name) {
            Some(d) if !d.builtin => Ok(d),
            Some(_) => Err(Error::Type(format!(
                "cannot derive a generator for built-in type `{name}`"
            ))),
            None => Err(Error::Type(format!("unknown type `{name}`"))),
        }
    }

    /// Types reachable from `root` through constructor fields, in discovery
    /// order.
    fn reachable(&self, root: &str) -> Result<Vec<String>> {
        let mut seen = BTreeSet::new();
        let mut order = Vec::new();
        let mut stack = vec![root.to_string()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.clone()) {
                continue;
            }
            let d = self.decl(&t)?;
            order.push(t);
            for c in d.ctors.iter().rev() {
                for f in c.fields.iter().rev() {
                    match f {
                        FieldTy::Adt(n) => stack.push(n.to_string()),
                        FieldTy::Any => {
                            return Err(Error::Type(format!(
                                "constructor `{}` has an untyped field",
                                c.name
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(order)
    }

    /// Whether `ty` can reach `target` through one or more fields.
    fn reaches(&self, ty: &str, target: &str) -> bool {
        self.reach.get(ty).is_some_and(|r| r.contains(target))
    }

    fn compute_reach(&mut self, types: &[String]) -> Result<()> {
        for t in types {
            let mut seen = BTreeSet::new();
            let mut stack: Vec<String> = self.children(t)?;
            while let Some(u) = stack.pop() {
                if seen.insert(u.clone()) {
                    stack.extend(self.children(&u)?);
                }
            }
            self.reach.insert(t.clone(), seen);
        }
        Ok(())
    }

    fn children(&self, ty: &str) -> Result<Vec<String>> {
        Ok(self
            .decl(ty)?
            .ctors
            .iter()
            .flat_map(|c| c.fields.iter())
            .filter_map(|f| {
                if let FieldTy::Adt(n) = f {
                    Some(n.to_string())
                } else {
                    None
                }
            })
            .collect())
    }

    fn is_recursive(&self, ty: &str) -> bool {
        self.reaches(ty, ty)
    }

    /// A constructor is terminal when none of its fields can lead back to
    /// its own type.
    fn terminal_ctor(&self, ty: &str, fields: &[FieldTy]) -> bool {
        fields.iter().all(|f| match f {
            FieldTy::Adt(n) => &**n != ty && !self.reaches(n, ty),
            _ => true,
        })
    }

    fn builtin_gen(&mut self, f: &FieldTy) -> String {
        let (name, body) = match f {
            FieldTy::Bool => (
                "gen-bool-dep".to_string(),
                "(freqdep deps true false)".to_string(),
            ),
            FieldTy::Nat(w) => {
                let bits = vec!["(freqdep deps true false)"; *w as usize].join(" ");
                (format!("gen-nat{w}-dep"), format!("(nat-bits {bits})"))
            }
            _ => unreachable!("only builtin fields"),
        };
        self.builtins.entry(name.clone()).or_insert(body);
        name
    }

    fn enum_decl(&self, d: &AdtDecl) -> String {
        let ctors: Vec<String> = d
            .ctors
            .iter()
            .map(|c| format!("({})", ctor_choice(&c.name)))
            .collect();
        format!("(type {} {})\n", enum_name(&d.name), ctors.join(" "))
    }

    /// `genTerminal<T>`: a choice among the terminal constructors only.
    fn terminal_def(&mut self, d: &AdtDecl) -> Result<String> {
        let mut options = Vec::new();
        for c in &d.ctors {
            if !self.terminal_ctor(&d.name, &c.fields) {
                continue;
            }
            let mut args = Vec::new();
            for f in &c.fields {
                args.push(match f {
                    FieldTy::Adt(n) => format!("({} deps)", terminal(n)),
                    other => format!("({} deps)", self.builtin_gen(other)),
                });
            }
            options.push(if args.is_empty() {
                format!("({})", c.name)
            } else {
                format!("({} {})", c.name, args.join(" "))
            });
        }
        if options.is_empty() {
            return Err(Error::Type(format!(
                "type `{}` has no terminal constructor",
                d.name
            )));
        }
        let body = if options.len() == 1 {
            options.remove(0)
        } else {
            format!("(freqdep deps {})", options.join(" "))
        };
        Ok(format!("(define ({} deps) {body})\n", terminal(&d.name)))
    }

    fn child_size(&self, ty: &str) -> String {
        match self.cfg.size_caps.get(ty) {
            Some(cap) => format!("(min (- size 1) {cap})"),
            None => "(- size 1)".to_string(),
        }
    }

    /// The arm of a helper that builds constructor `c` once chosen.
    fn ctor_arm(&mut self, ctor: &str, fields: &[FieldTy]) -> String {
        let choice_sets: Vec<Vec<String>> = fields
            .iter()
            .map(|f| match f {
                FieldTy::Adt(n) => {
                    let d = self.types.adt(n).expect("reachable types are declared");
                    d.ctors
                        .iter()
                        .map(|c| format!("({})", ctor_choice(&c.name)))
                        .collect()
                }
                _ => vec!["(tuple)".to_string()],
            })
            .collect();
        let mut args = Vec::new();
        for (i, f) in fields.iter().enumerate() {
            args.push(match f {
                FieldTy::Adt(n) => format!(
                    "({} {} (stack-push {} {} stack) c{i})",
                    helper(n),
                    self.child_size(n),
                    self.cfg.lookback,
                    self.locs.fresh_loc()
                ),
                other => format!("({} {DEPS})", self.builtin_gen(other)),
            });
        }
        if fields.is_empty() {
            return format!("({ctor})");
        }
        let build = format!("({ctor} {})", args.join(" "));
        let product = cartesian(&choice_sets);
        let binders: Vec<String> = (0..fields.len()).map(|i| format!("c{i}")).collect();
        let options: Vec<String> = product
            .iter()
            .map(|combo| format!("(tuple {})", combo.join(" ")))
            .collect();
        format!(
            "(match (freqdep {DEPS} {}) ((tuple {}) {build}))",
            options.join(" "),
            binders.join(" ")
        )
    }

    fn helper_def(&mut self, d: &AdtDecl) -> String {
        let mut arms = String::new();
        for c in &d.ctors {
            let arm = self.ctor_arm(&c.name, &c.fields);
            let _ = write!(arms, " (({}) {arm})", ctor_choice(&c.name));
        }
        let by_choice = format!("(match chosen{arms})");
        let body = if self.is_recursive(&d.name) {
            format!(
                "(match size (0 ({} {DEPS})) (_ {by_choice}))",
                terminal(&d.name)
            )
        } else {
            by_choice
        };
        format!("(define ({} size stack chosen) {body})\n", helper(&d.name))
    }
}

fn cartesian(sets: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    for set in sets {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<String>| {
                set.iter().map(move |x| {
                    let mut p = prefix.clone();
                    p.push(x.clone());
                    p
                })
            })
            .collect();
    }
    out
}

/// Derives a generator for `cfg.root` from the types declared in `types`.
/// Functions already in `types` are kept; its `main` is replaced.
pub fn derive_generator(types: &Program, cfg: &DeriveConfig) -> Result<Derived> {
    if cfg.initial_size == 0 {
        return Err(Error::Config("initial size must be at least 1".into()));
    }
    let mut d = Deriver {
        types,
        cfg,
        locs: LocationCounter::default(),
        builtins: BTreeMap::new(),
        reach: BTreeMap::new(),
    };
    let order = d.reachable(&cfg.root)?;
    for t in cfg.size_caps.keys() {
        d.decl(t)?;
    }
    d.compute_reach(&order)?;

    let mut enums = String::new();
    let mut defs = String::new();
    for t in &order {
        let decl = d.decl(t)?;
        enums.push_str(&d.enum_decl(decl));
        defs.push_str(&d.terminal_def(decl)?);
        defs.push_str(&d.helper_def(decl));
    }
    let root = d.decl(&cfg.root)?;
    let choices: Vec<String> = root
        .ctors
        .iter()
        .map(|c| format!("({})", ctor_choice(&c.name)))
        .collect();
    let main = format!(
        "(main ({} {} (tuple) (freqdep (tuple) {})))\n",
        helper(&cfg.root),
        cfg.initial_size,
        choices.join(" ")
    );

    let base = Program::new(
        types.user_types().map(|t| (**t).clone()).collect(),
        types.functions.clone(),
        None,
    )?;
    let mut src = base.to_string();
    src.push_str(&enums);
    for (name, body) in &d.builtins {
        let _ = writeln!(src, "(define ({name} deps) {body})");
    }
    src.push_str(&defs);
    src.push_str(&main);
    let program = parse_program(&src)?;
    Ok(Derived {
        source: program.to_string(),
        program,
        locations: d.locs.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{lower, ExprKind};
    use crate::weights::WeightTable;

    const RBT_TYPES: &str = "
        (type Color (Red) (Black))
        (type Tree (Leaf) (Branch Tree Color (Nat 4) Tree))";

    #[test]
    fn locations_count_up_from_zero() {
        let mut c = LocationCounter::default();
        assert_eq!((c.fresh_loc(), c.fresh_loc(), c.fresh_loc()), (0, 1, 2));
        assert_eq!(LocationCounter::default().fresh_loc(), 0);
    }

    #[test]
    fn red_black_tree_structure() {
        let types = parse_program(RBT_TYPES).unwrap();
        let d = derive_generator(&types, &DeriveConfig::new("Tree", 5, 2)).unwrap();
        // Three child sites in Branch.
        assert_eq!(d.locations, 3);
        assert!(d.program.adt("TreeC").is_some() && d.program.adt("ColorC").is_some());
        let helper = d.program.function("gen-Tree-helper").unwrap();
        let mut widest = 0;
        crate::surface::walk_expr(&helper.body, &mut |e| {
            if let ExprKind::FreqDep { options, .. } = &e.kind {
                widest = widest.max(options.len());
            }
        });
        assert_eq!(widest, 8);
        // Deriving again starts the counter afresh and gives the same text.
        let again = derive_generator(&types, &DeriveConfig::new("Tree", 5, 2)).unwrap();
        assert_eq!(again.source, d.source);
    }

    #[test]
    fn enum_type_has_no_size_recursion() {
        let types = parse_program(RBT_TYPES).unwrap();
        let d = derive_generator(&types, &DeriveConfig::new("Color", 3, 1)).unwrap();
        assert_eq!(d.locations, 0);
        let body = d
            .program
            .function("gen-Color-helper")
            .unwrap()
            .body
            .to_string();
        assert!(!body.contains("size"), "{body}");
    }

    #[test]
    fn only_recursive_constructors_is_an_error() {
        let types = parse_program("(type S (More S))").unwrap();
        assert!(matches!(
            derive_generator(&types, &DeriveConfig::new("S", 2, 1)),
            Err(Error::Type(_))
        ));
    }

    #[test]
    fn zero_lookback_keeps_stack_empty() {
        let types = parse_program(RBT_TYPES).unwrap();
        let d = derive_generator(&types, &DeriveConfig::new("Tree", 2, 0)).unwrap();
        let mut table = WeightTable::new();
        lower(&d.program, &mut table).unwrap();
        for id in table.ids() {
            let name = table.name(id);
            if name.starts_with("dep") {
                assert!(
                    name.contains("[(tuple)]") || name.contains(" (tuple) "),
                    "{name}"
                );
            }
        }
    }
}
