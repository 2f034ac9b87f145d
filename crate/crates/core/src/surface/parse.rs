//! Parser from s-expressions to the surface AST.

use rustc_hash::FxHashMap;

use super::ast::*;
use super::sexpr::{read_all, Sexp};
use crate::error::{Error, Pos, Result};
use crate::ir::Name;

fn err<T>(pos: Pos, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        pos,
        msg: msg.into(),
    })
}

/// Parses a program file: `(type ...)`, `(define ...)` and at most one
/// `(main ...)` form, in any order.
pub fn parse_program(src: &str) -> Result<Program> {
    let forms = read_all(src)?;
    let mut type_forms = Vec::new();
    let mut define_forms = Vec::new();
    let mut main_form = None;
    for form in &forms {
        let (head, args) = split_form(form)?;
        match head {
            "type" => type_forms.push((form.pos(), args)),
            "define" => define_forms.push((form.pos(), args)),
            "main" => {
                if main_form.is_some() {
                    return err(form.pos(), "duplicate `main`");
                }
                if args.len() != 1 {
                    return err(form.pos(), "`main` takes one expression");
                }
                main_form = Some(&args[0]);
            }
            other => return err(form.pos(), format!("unknown top-level form `{other}`")),
        }
    }

    let mut types = Vec::new();
    for (pos, args) in &type_forms {
        types.push(parse_type_decl(*pos, args)?);
    }

    let mut sigs: FxHashMap<Name, usize> = FxHashMap::default();
    let mut headers = Vec::new();
    for (pos, args) in &define_forms {
        let (name, params) = match args.first() {
            Some(Sexp::List(items, _)) if !items.is_empty() => {
                let name = ident(&items[0])?;
                let params = items[1..].iter().map(ident).collect::<Result<Vec<_>>>()?;
                (name, params)
            }
            _ => return err(*pos, "expected `(define (name params...) body)`"),
        };
        if args.len() != 2 {
            return err(*pos, "expected `(define (name params...) body)`");
        }
        if sigs.insert(name.clone(), params.len()).is_some() {
            return err(*pos, format!("function `{name}` defined twice"));
        }
        headers.push((*pos, name, params, &args[1]));
    }

    // Constructor arities, including the built-in option type.
    let mut ctors: FxHashMap<Name, usize> = FxHashMap::default();
    for t in types.iter().chain(std::iter::once(&option_decl())) {
        for c in &t.ctors {
            ctors.insert(c.name.clone(), c.fields.len());
        }
    }

    let mut parser = ExprParser {
        ctors,
        sigs,
        next_site: 0,
    };
    let mut functions = Vec::new();
    for (pos, name, params, body) in headers {
        let body = parser.expr(body)?;
        functions.push(FunDef {
            name,
            params,
            body,
            pos,
        });
    }
    let main = main_form.map(|m| parser.expr(m)).transpose()?;
    Program::new(types, functions, main)
}

/// Parses a single expression against the declarations of `program`.
pub fn parse_expr(program: &Program, src: &str) -> Result<Expr> {
    let forms = read_all(src)?;
    if forms.len() != 1 {
        return err(Pos::default(), "expected exactly one expression");
    }
    let mut ctors = FxHashMap::default();
    for t in &program.types {
        for c in &t.ctors {
            ctors.insert(c.name.clone(), c.fields.len());
        }
    }
    let sigs = program
        .functions
        .iter()
        .map(|f| (f.name.clone(), f.params.len()))
        .collect();
    let next_site = max_site(program).map_or(0, |s| s + 1);
    ExprParser {
        ctors,
        sigs,
        next_site,
    }
    .expr(&forms[0])
}

fn max_site(program: &Program) -> Option<u32> {
    fn go(e: &Expr, best: &mut Option<u32>) {
        if let ExprKind::FreqDep { site, .. } = &e.kind {
            *best = Some(best.map_or(*site, |b| b.max(*site)));
        }
        super::print::for_each_child(e, |c| go(c, best));
    }
    let mut best = None;
    for f in &program.functions {
        go(&f.body, &mut best);
    }
    if let Some(m) = &program.main {
        go(m, &mut best);
    }
    best
}

fn split_form(form: &Sexp) -> Result<(&str, &[Sexp])> {
    match form {
        Sexp::List(items, pos) => match items.first() {
            Some(Sexp::Atom(head, _)) => Ok((head.as_str(), &items[1..])),
            _ => err(*pos, "expected a form name"),
        },
        Sexp::Atom(a, pos) => err(*pos, format!("expected a form, found `{a}`")),
    }
}

fn is_ident(s: &str) -> bool {
    let first = s.chars().next();
    matches!(first, Some(c) if !c.is_ascii_digit() && c != '.' && c != '-' || s == "-")
        && s != "true"
        && s != "false"
}

fn ident(s: &Sexp) -> Result<Name> {
    match s {
        Sexp::Atom(a, pos) => {
            if is_ident(a) {
                Ok(a.as_str().into())
            } else {
                err(*pos, format!("expected an identifier, found `{a}`"))
            }
        }
        Sexp::List(_, pos) => err(*pos, "expected an identifier"),
    }
}

fn parse_type_decl(pos: Pos, args: &[Sexp]) -> Result<AdtDecl> {
    let Some(name_sexp) = args.first() else {
        return err(pos, "expected `(type Name (Ctor fields...)...)`");
    };
    let name = ident(name_sexp)?;
    let mut ctors = Vec::new();
    for c in &args[1..] {
        let Sexp::List(items, cpos) = c else {
            return err(
                c.pos(),
                "constructor declarations are written `(Ctor fields...)`",
            );
        };
        let Some(cname) = items.first() else {
            return err(*cpos, "empty constructor declaration");
        };
        let cname = ident(cname)?;
        let fields = items[1..]
            .iter()
            .map(parse_field)
            .collect::<Result<Vec<_>>>()?;
        ctors.push(CtorDecl {
            name: cname,
            fields,
        });
    }
    if ctors.is_empty() {
        return err(pos, format!("type `{name}` has no constructors"));
    }
    Ok(AdtDecl {
        name,
        ctors,
        builtin: false,
    })
}

fn parse_field(s: &Sexp) -> Result<FieldTy> {
    match s {
        Sexp::Atom(a, _) if a == "Bool" => Ok(FieldTy::Bool),
        Sexp::Atom(a, _) if a == "Nat" => Ok(FieldTy::Nat(DEFAULT_NAT_WIDTH)),
        Sexp::Atom(..) => Ok(FieldTy::Adt(ident(s)?)),
        Sexp::List(items, pos) => match items.as_slice() {
            [Sexp::Atom(h, _), Sexp::Atom(w, wpos)] if h == "Nat" => match w.parse::<u32>() {
                Ok(w) if (1..=32).contains(&w) => Ok(FieldTy::Nat(w)),
                _ => err(*wpos, "Nat width must be between 1 and 32"),
            },
            _ => err(*pos, "unknown field type"),
        },
    }
}

struct ExprParser {
    ctors: FxHashMap<Name, usize>,
    sigs: FxHashMap<Name, usize>,
    next_site: u32,
}

impl ExprParser {
    fn expr(&mut self, s: &Sexp) -> Result<Expr> {
        let pos = s.pos();
        let kind = match s {
            Sexp::Atom(a, pos) => self.atom(a, *pos)?,
            Sexp::List(items, pos) => self.list(items, *pos)?,
        };
        Ok(Expr { kind, pos })
    }

    fn atom(&self, a: &str, pos: Pos) -> Result<ExprKind> {
        if a == "true" {
            return Ok(ExprKind::Bool(true));
        }
        if a == "false" {
            return Ok(ExprKind::Bool(false));
        }
        if a.chars().all(|c| c.is_ascii_digit()) {
            return a
                .parse::<u64>()
                .map(ExprKind::Nat)
                .or_else(|_| err(pos, format!("integer literal `{a}` is too large")));
        }
        if a.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
            return a
                .parse::<f64>()
                .map(ExprKind::Real)
                .or_else(|_| err(pos, format!("malformed number `{a}`")));
        }
        if !is_ident(a) {
            return err(pos, format!("unexpected token `{a}`"));
        }
        match self.ctors.get(a) {
            Some(0) => Ok(ExprKind::Ctor(a.into(), vec![])),
            Some(n) => err(pos, format!("constructor `{a}` expects {n} arguments")),
            None => Ok(ExprKind::Var(a.into())),
        }
    }

    fn exprs(&mut self, items: &[Sexp]) -> Result<Vec<Expr>> {
        items.iter().map(|s| self.expr(s)).collect()
    }

    fn boxed(&mut self, s: &Sexp) -> Result<Box<Expr>> {
        Ok(Box::new(self.expr(s)?))
    }

    fn weighted(&mut self, items: &[Sexp], form: &str) -> Result<Vec<(Expr, Expr)>> {
        items
            .iter()
            .map(|arm| match arm {
                Sexp::List(pair, _) if pair.len() == 2 => {
                    Ok((self.expr(&pair[0])?, self.expr(&pair[1])?))
                }
                _ => err(
                    arm.pos(),
                    format!("`{form}` alternatives are written `(weight expr)`"),
                ),
            })
            .collect()
    }

    fn list(&mut self, items: &[Sexp], pos: Pos) -> Result<ExprKind> {
        let Some(head) = items.first() else {
            return err(pos, "empty form");
        };
        let Sexp::Atom(head, hpos) = head else {
            return err(head.pos(), "expected a form name");
        };
        let args = &items[1..];
        let want = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                err(
                    pos,
                    format!("`{head}` takes {n} arguments, found {}", args.len()),
                )
            }
        };
        Ok(match head.as_str() {
            "if" => {
                want(3)?;
                ExprKind::If(
                    self.boxed(&args[0])?,
                    self.boxed(&args[1])?,
                    self.boxed(&args[2])?,
                )
            }
            "let" => {
                want(2)?;
                let Sexp::List(binds, bpos) = &args[0] else {
                    return err(args[0].pos(), "expected `((name expr)...)`");
                };
                if binds.is_empty() {
                    return err(*bpos, "`let` needs at least one binding");
                }
                let mut out = Vec::new();
                for b in binds {
                    match b {
                        Sexp::List(pair, _) if pair.len() == 2 => {
                            out.push((ident(&pair[0])?, self.expr(&pair[1])?))
                        }
                        _ => return err(b.pos(), "bindings are written `(name expr)`"),
                    }
                }
                ExprKind::Let(out, self.boxed(&args[1])?)
            }
            "match" => {
                if args.len() < 2 {
                    return err(pos, "`match` needs a scrutinee and at least one arm");
                }
                let scrut = self.boxed(&args[0])?;
                let mut arms = Vec::new();
                for arm in &args[1..] {
                    match arm {
                        Sexp::List(pair, _) if pair.len() == 2 => {
                            arms.push((self.pattern(&pair[0])?, self.expr(&pair[1])?));
                        }
                        _ => return err(arm.pos(), "match arms are written `(pattern expr)`"),
                    }
                }
                ExprKind::Match(scrut, arms)
            }
            "flip" => {
                want(1)?;
                ExprKind::Flip(self.boxed(&args[0])?)
            }
            "theta" => {
                want(1)?;
                ExprKind::Theta(ident(&args[0])?)
            }
            "freq" | "backtrack" => {
                if args.is_empty() {
                    return err(pos, format!("`{head}` needs at least one alternative"));
                }
                let arms = self.weighted(args, head)?;
                if head == "freq" {
                    ExprKind::Freq(arms)
                } else {
                    ExprKind::Backtrack(arms)
                }
            }
            "uniform" => {
                if args.is_empty() {
                    return err(pos, "`uniform` needs at least one alternative");
                }
                ExprKind::Uniform(self.exprs(args)?)
            }
            "freqdep" => {
                if args.len() < 2 {
                    return err(pos, "`freqdep` needs dependencies and at least one option");
                }
                let site = self.next_site;
                self.next_site += 1;
                ExprKind::FreqDep {
                    site,
                    deps: self.boxed(&args[0])?,
                    options: self.exprs(&args[1..])?,
                }
            }
            "tuple" => ExprKind::Tuple(self.exprs(args)?),
            "nth" => {
                want(2)?;
                let i = match &args[1] {
                    Sexp::Atom(a, p) => a
                        .parse::<usize>()
                        .or_else(|_| err(*p, "tuple index must be a literal"))?,
                    other => return err(other.pos(), "tuple index must be a literal"),
                };
                ExprKind::Nth(self.boxed(&args[0])?, i)
            }
            "fst" | "snd" => {
                want(1)?;
                ExprKind::Nth(self.boxed(&args[0])?, usize::from(head == "snd"))
            }
            h => {
                if let Some(p) = Prim::from_name(h) {
                    let (lo, hi) = p.arity();
                    if args.len() < lo || args.len() > hi {
                        return err(pos, format!("wrong number of arguments to `{h}`"));
                    }
                    ExprKind::Prim(p, self.exprs(args)?)
                } else if let Some(&n) = self.ctors.get(h) {
                    want(n)?;
                    ExprKind::Ctor(h.into(), self.exprs(args)?)
                } else if let Some(&n) = self.sigs.get(h) {
                    want(n)?;
                    ExprKind::Call(h.into(), self.exprs(args)?)
                } else {
                    return err(*hpos, format!("unknown form `{h}`"));
                }
            }
        })
    }

    fn pattern(&self, s: &Sexp) -> Result<Pattern> {
        match s {
            Sexp::Atom(a, pos) => {
                if a == "_" {
                    Ok(Pattern::Wild)
                } else if a == "true" || a == "false" {
                    Ok(Pattern::Bool(a == "true"))
                } else if a.chars().all(|c| c.is_ascii_digit()) {
                    a.parse()
                        .map(Pattern::Nat)
                        .or_else(|_| err(*pos, "pattern literal too large"))
                } else {
                    match self.ctors.get(a.as_str()) {
                        Some(0) => Ok(Pattern::Ctor(a.as_str().into(), vec![])),
                        Some(n) => err(*pos, format!("constructor `{a}` expects {n} arguments")),
                        None => Ok(Pattern::Bind(ident(s)?)),
                    }
                }
            }
            Sexp::List(items, pos) => {
                let Some(Sexp::Atom(head, hpos)) = items.first() else {
                    return err(*pos, "expected a constructor pattern");
                };
                let subs = items[1..]
                    .iter()
                    .map(|p| self.pattern(p))
                    .collect::<Result<Vec<_>>>()?;
                if head == "tuple" {
                    return Ok(Pattern::Tuple(subs));
                }
                match self.ctors.get(head.as_str()) {
                    Some(&n) if n == subs.len() => Ok(Pattern::Ctor(head.as_str().into(), subs)),
                    Some(&n) => err(*pos, format!("constructor `{head}` expects {n} arguments")),
                    None => err(*hpos, format!("unknown constructor `{head}`")),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_types_functions_and_main() {
        let p = parse_program(
            "(type Color (Red) (Black))
             (type Tree (Leaf) (Node Color (Nat 3) Tree Tree))
             (define (pick) (freq ((theta a) Red) ((- 1 (theta a)) Black)))
             (main (Node (pick) 5 Leaf (Leaf)))",
        )
        .unwrap();
        assert_eq!(p.user_types().count(), 2);
        assert_eq!(p.adt("Tree").unwrap().ctors[1].fields[1], FieldTy::Nat(3));
        assert!(p.function("pick").is_some());
        let ExprKind::Ctor(name, args) = &p.main.as_ref().unwrap().kind else {
            panic!()
        };
        assert_eq!(&**name, "Node");
        assert_eq!(args[2].kind, ExprKind::Ctor("Leaf".into(), vec![]));
    }

    #[test]
    fn unknown_forms_report_position() {
        let e = parse_program("(define (f x)\n  (frobnicate x))").unwrap_err();
        match e {
            Error::Parse { pos, msg } => {
                assert_eq!(pos, Pos { line: 2, col: 4 });
                assert!(msg.contains("frobnicate"));
            }
            other => panic!("{other}"),
        }
        assert!(matches!(
            parse_program("(typo Foo)"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn arity_errors_are_rejected() {
        assert!(parse_program("(type T (A Bool)) (main (A))").is_err());
        assert!(parse_program("(define (f x) x) (main (f 1 2))").is_err());
        assert!(parse_program("(main (if true false))").is_err());
    }

    #[test]
    fn freqdep_sites_are_numbered_in_order() {
        let p = parse_program("(main (tuple (freqdep (tuple) true false) (freqdep 1 true false)))")
            .unwrap();
        let ExprKind::Tuple(items) = &p.main.unwrap().kind else {
            panic!()
        };
        let sites: Vec<u32> = items
            .iter()
            .map(|e| match &e.kind {
                ExprKind::FreqDep { site, .. } => *site,
                _ => panic!(),
            })
            .collect();
        assert_eq!(sites, vec![0, 1]);
    }
}
