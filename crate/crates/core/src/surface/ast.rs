//! Abstract syntax of the surface generator language.

use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::error::{Error, Pos, Result};
use crate::ir::Name;

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprKind {
    Bool(bool),
    Nat(u64),
    /// Decimal literal; only meaningful as a probability or weight.
    Real(f64),
    Var(Name),
    /// Named symbolic weight, shared by every occurrence of the name.
    Theta(Name),
    Flip(Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    /// Sequential bindings.
    Let(Vec<(Name, Expr)>, Box<Expr>),
    Match(Box<Expr>, Vec<(Pattern, Expr)>),
    Tuple(Vec<Expr>),
    Nth(Box<Expr>, usize),
    Ctor(Name, Vec<Expr>),
    Call(Name, Vec<Expr>),
    Prim(Prim, Vec<Expr>),
    /// Weighted choice; weights are constants or symbolic weights.
    Freq(Vec<(Expr, Expr)>),
    /// Uniform choice.
    Uniform(Vec<Expr>),
    /// Weighted choice among optional results that retries the remaining
    /// alternatives when the chosen one yields `None`.
    Backtrack(Vec<(Expr, Expr)>),
    /// Choice whose weights are separate parameters for every value of
    /// `deps`. `site` distinguishes syntactic occurrences.
    FreqDep {
        site: u32,
        deps: Box<Expr>,
        options: Vec<Expr>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prim {
    And,
    Or,
    Not,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Max,
    Min,
    /// `(nat-bits b_msb ... b_lsb)` builds a number from Booleans.
    NatBits,
    /// `(stack-push m x stack)` keeps the first `m` entries of `x :: stack`.
    StackPush,
}

impl Prim {
    pub const ALL: [Prim; 15] = [
        Prim::And,
        Prim::Or,
        Prim::Not,
        Prim::Eq,
        Prim::Ne,
        Prim::Lt,
        Prim::Le,
        Prim::Gt,
        Prim::Ge,
        Prim::Add,
        Prim::Sub,
        Prim::Max,
        Prim::Min,
        Prim::NatBits,
        Prim::StackPush,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Prim::And => "and",
            Prim::Or => "or",
            Prim::Not => "not",
            Prim::Eq => "==",
            Prim::Ne => "!=",
            Prim::Lt => "<",
            Prim::Le => "<=",
            Prim::Gt => ">",
            Prim::Ge => ">=",
            Prim::Add => "+",
            Prim::Sub => "-",
            Prim::Max => "max",
            Prim::Min => "min",
            Prim::NatBits => "nat-bits",
            Prim::StackPush => "stack-push",
        }
    }

    pub fn from_name(s: &str) -> Option<Prim> {
        Prim::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Accepted argument counts as `(min, max)`.
    pub fn arity(self) -> (usize, usize) {
        match self {
            Prim::Not => (1, 1),
            Prim::And | Prim::Or => (1, usize::MAX),
            Prim::NatBits => (1, 63),
            Prim::StackPush => (3, 3),
            _ => (2, 2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Pattern {
    Wild,
    Bind(Name),
    Bool(bool),
    Nat(u64),
    Tuple(Vec<Pattern>),
    Ctor(Name, Vec<Pattern>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FieldTy {
    Bool,
    Nat(u32),
    Adt(Name),
    /// Any value; used by the built-in `Option` type.
    Any,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtorDecl {
    pub name: Name,
    pub fields: Vec<FieldTy>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdtDecl {
    pub name: Name,
    pub ctors: Vec<CtorDecl>,
    pub builtin: bool,
}

impl AdtDecl {
    /// Width of the 1-based constructor tag.
    pub fn tag_width(&self) -> u32 {
        tag_width(self.ctors.len())
    }

    pub fn ctor_index(&self, name: &str) -> Option<usize> {
        self.ctors.iter().position(|c| &*c.name == name)
    }
}

/// Bits needed to store tags `1..=n`.
pub fn tag_width(n: usize) -> u32 {
    (usize::BITS - n.leading_zeros()).max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunDef {
    pub name: Name,
    pub params: Vec<Name>,
    pub body: Expr,
    pub pos: Pos,
}

/// A parsed program: data types, function definitions and an optional
/// `main` expression.
#[derive(Clone, Debug)]
pub struct Program {
    pub types: Vec<Arc<AdtDecl>>,
    pub functions: Vec<FunDef>,
    pub main: Option<Expr>,
    ctors: FxHashMap<Name, (usize, usize)>,
    funs: FxHashMap<Name, usize>,
}

pub const DEFAULT_NAT_WIDTH: u32 = 4;

pub(crate) fn option_decl() -> AdtDecl {
    AdtDecl {
        name: "Option".into(),
        ctors: vec![
            CtorDecl {
                name: "None".into(),
                fields: vec![],
            },
            CtorDecl {
                name: "Some".into(),
                fields: vec![FieldTy::Any],
            },
        ],
        builtin: true,
    }
}

impl Program {
    /// Assembles a program, checking that names are unique and that every
    /// field type refers to a declared type. The built-in `Option` type is
    /// added automatically.
    pub fn new(types: Vec<AdtDecl>, functions: Vec<FunDef>, main: Option<Expr>) -> Result<Program> {
        let mut all = vec![Arc::new(option_decl())];
        all.extend(types.into_iter().filter(|t| !t.builtin).map(Arc::new));
        let mut ctors = FxHashMap::default();
        let mut type_names = FxHashMap::default();
        for (ti, t) in all.iter().enumerate() {
            if type_names.insert(t.name.clone(), ti).is_some() {
                return Err(Error::Type(format!("type `{}` declared twice", t.name)));
            }
            if t.ctors.is_empty() {
                return Err(Error::Type(format!(
                    "type `{}` has no constructors",
                    t.name
                )));
            }
            for (ci, c) in t.ctors.iter().enumerate() {
                if ctors.insert(c.name.clone(), (ti, ci)).is_some() {
                    return Err(Error::Type(format!(
                        "constructor `{}` declared twice",
                        c.name
                    )));
                }
            }
        }
        for t in &all {
            for c in &t.ctors {
                for f in &c.fields {
                    if let FieldTy::Adt(n) = f {
                        if !type_names.contains_key(n) {
                            return Err(Error::Type(format!(
                                "constructor `{}` refers to unknown type `{n}`",
                                c.name
                            )));
                        }
                    }
                }
            }
        }
        let mut funs = FxHashMap::default();
        for (i, f) in functions.iter().enumerate() {
            if funs.insert(f.name.clone(), i).is_some() {
                return Err(Error::Type(format!("function `{}` defined twice", f.name)));
            }
        }
        Ok(Program {
            types: all,
            functions,
            main,
            ctors,
            funs,
        })
    }

    pub fn adt(&self, name: &str) -> Option<&Arc<AdtDecl>> {
        self.types.iter().find(|t| &*t.name == name)
    }

    /// The declaring type and constructor index of constructor `name`.
    pub fn ctor(&self, name: &str) -> Option<(&Arc<AdtDecl>, usize)> {
        self.ctors.get(name).map(|&(t, c)| (&self.types[t], c))
    }

    pub fn function(&self, name: &str) -> Option<&FunDef> {
        self.funs.get(name).map(|&i| &self.functions[i])
    }

    /// User-declared types, without built-ins.
    pub fn user_types(&self) -> impl Iterator<Item = &Arc<AdtDecl>> {
        self.types.iter().filter(|t| !t.builtin)
    }
}

impl Expr {
    pub fn new(kind: ExprKind) -> Expr {
        Expr {
            kind,
            pos: Pos::default(),
        }
    }
}
