//! Pretty-printer producing text that parses back to the same program.

use std::fmt;

use super::ast::*;

/// Calls `f` on every direct subexpression of `e`.
/// Calls `f` on `e` and every subexpression, in preorder.
pub fn walk_expr<'a>(e: &'a Expr, f: &mut impl FnMut(&'a Expr)) {
    let mut stack = vec![e];
    let mut kids = Vec::new();
    while let Some(e) = stack.pop() {
        f(e);
        for_each_child(e, |c| kids.push(c));
        stack.extend(kids.drain(..).rev());
    }
}

pub(crate) fn for_each_child<'a>(e: &'a Expr, mut f: impl FnMut(&'a Expr)) {
    match &e.kind {
        ExprKind::Bool(_)
        | ExprKind::Nat(_)
        | ExprKind::Real(_)
        | ExprKind::Var(_)
        | ExprKind::Theta(_) => {}
        ExprKind::Flip(a) | ExprKind::Nth(a, _) => f(a),
        ExprKind::If(c, a, b) => {
            f(c);
            f(a);
            f(b);
        }
        ExprKind::Let(binds, body) => {
            binds.iter().for_each(|(_, e)| f(e));
            f(body);
        }
        ExprKind::Match(s, arms) => {
            f(s);
            arms.iter().for_each(|(_, e)| f(e));
        }
        ExprKind::Tuple(items)
        | ExprKind::Ctor(_, items)
        | ExprKind::Call(_, items)
        | ExprKind::Prim(_, items)
        | ExprKind::Uniform(items) => items.iter().for_each(f),
        ExprKind::Freq(arms) | ExprKind::Backtrack(arms) => arms.iter().for_each(|(w, e)| {
            f(w);
            f(e)
        }),
        ExprKind::FreqDep { deps, options, .. } => {
            f(deps);
            options.iter().for_each(f);
        }
    }
}

enum Doc {
    Atom(String),
    List(Vec<Doc>),
}

fn atom(s: impl Into<String>) -> Doc {
    Doc::Atom(s.into())
}

fn list(items: impl IntoIterator<Item = Doc>) -> Doc {
    Doc::List(items.into_iter().collect())
}

fn real(x: f64) -> String {
    let s = format!("{x:?}");
    if s.contains('.') || s.contains('e') {
        s
    } else {
        format!("{s}.0")
    }
}

fn expr_doc(e: &Expr) -> Doc {
    match &e.kind {
        ExprKind::Bool(b) => atom(b.to_string()),
        ExprKind::Nat(n) => atom(n.to_string()),
        ExprKind::Real(x) => atom(real(*x)),
        ExprKind::Var(x) => atom(&**x),
        ExprKind::Theta(x) => list([atom("theta"), atom(&**x)]),
        ExprKind::Flip(a) => list([atom("flip"), expr_doc(a)]),
        ExprKind::If(c, a, b) => list([atom("if"), expr_doc(c), expr_doc(a), expr_doc(b)]),
        ExprKind::Let(binds, body) => list([
            atom("let"),
            list(binds.iter().map(|(x, e)| list([atom(&**x), expr_doc(e)]))),
            expr_doc(body),
        ]),
        ExprKind::Match(s, arms) => list(
            [atom("match"), expr_doc(s)].into_iter().chain(
                arms.iter()
                    .map(|(p, e)| list([pattern_doc(p), expr_doc(e)])),
            ),
        ),
        ExprKind::Tuple(items) => {
            list(std::iter::once(atom("tuple")).chain(items.iter().map(expr_doc)))
        }
        ExprKind::Nth(a, i) => list([atom("nth"), expr_doc(a), atom(i.to_string())]),
        ExprKind::Ctor(c, items) | ExprKind::Call(c, items) => {
            list(std::iter::once(atom(&**c)).chain(items.iter().map(expr_doc)))
        }
        ExprKind::Prim(p, items) => {
            list(std::iter::once(atom(p.name())).chain(items.iter().map(expr_doc)))
        }
        ExprKind::Freq(arms) | ExprKind::Backtrack(arms) => {
            let head = if matches!(e.kind, ExprKind::Freq(_)) {
                "freq"
            } else {
                "backtrack"
            };
            list(
                std::iter::once(atom(head))
                    .chain(arms.iter().map(|(w, e)| list([expr_doc(w), expr_doc(e)]))),
            )
        }
        ExprKind::Uniform(items) => {
            list(std::iter::once(atom("uniform")).chain(items.iter().map(expr_doc)))
        }
        ExprKind::FreqDep { deps, options, .. } => list(
            [atom("freqdep"), expr_doc(deps)]
                .into_iter()
                .chain(options.iter().map(expr_doc)),
        ),
    }
}

fn pattern_doc(p: &Pattern) -> Doc {
    match p {
        Pattern::Wild => atom("_"),
        Pattern::Bind(x) => atom(&**x),
        Pattern::Bool(b) => atom(b.to_string()),
        Pattern::Nat(n) => atom(n.to_string()),
        Pattern::Tuple(ps) => {
            list(std::iter::once(atom("tuple")).chain(ps.iter().map(pattern_doc)))
        }
        Pattern::Ctor(c, ps) => list(std::iter::once(atom(&**c)).chain(ps.iter().map(pattern_doc))),
    }
}

fn field_doc(f: &FieldTy) -> Doc {
    match f {
        FieldTy::Bool => atom("Bool"),
        FieldTy::Nat(w) => list([atom("Nat"), atom(w.to_string())]),
        FieldTy::Adt(n) => atom(&**n),
        FieldTy::Any => atom("Any"),
    }
}

const WIDTH: usize = 96;

fn flat(d: &Doc, out: &mut String) {
    match d {
        Doc::Atom(s) => out.push_str(s),
        Doc::List(items) => {
            out.push('(');
            for (i, it) in items.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                flat(it, out);
            }
            out.push(')');
        }
    }
}

fn render(d: &Doc, indent: usize, out: &mut String) {
    let mut one_line = String::new();
    flat(d, &mut one_line);
    let Doc::List(items) = d else {
        out.push_str(&one_line);
        return;
    };
    if indent + one_line.len() <= WIDTH || items.len() < 2 {
        out.push_str(&one_line);
        return;
    }
    // Head (and for binding forms the first argument) stay on the opening
    // line; the remaining items go one per line.
    out.push('(');
    render(&items[0], indent + 1, out);
    let keep = match &items[0] {
        Doc::Atom(h) if matches!(h.as_str(), "let" | "match" | "if" | "freqdep" | "define") => 2,
        _ => 1,
    }
    .min(items.len());
    for it in &items[1..keep] {
        out.push(' ');
        render(it, indent + 2, out);
    }
    for it in &items[keep..] {
        out.push('\n');
        out.push_str(&" ".repeat(indent + 2));
        render(it, indent + 2, out);
    }
    out.push(')');
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        render(&expr_doc(self), 0, &mut out);
        f.write_str(&out)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        flat(&pattern_doc(self), &mut out);
        f.write_str(&out)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for t in self.user_types() {
            let d = list(
                [atom("type"), atom(&*t.name)]
                    .into_iter()
                    .chain(t.ctors.iter().map(|c| {
                        list(std::iter::once(atom(&*c.name)).chain(c.fields.iter().map(field_doc)))
                    })),
            );
            render(&d, 0, &mut out);
            out.push('\n');
        }
        for fun in &self.functions {
            out.push('\n');
            let header = list(
                std::iter::once(atom(&*fun.name)).chain(fun.params.iter().map(|p| atom(&**p))),
            );
            let d = list([atom("define"), header, expr_doc(&fun.body)]);
            render(&d, 0, &mut out);
            out.push('\n');
        }
        if let Some(m) = &self.main {
            out.push('\n');
            render(&list([atom("main"), expr_doc(m)]), 0, &mut out);
            out.push('\n');
        }
        f.write_str(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_program;

    #[test]
    fn printed_programs_parse_back() {
        let src = "(type T (A) (B Bool (Nat 3) T))
            (define (g n s)
              (match n
                (0 (A))
                (_ (let ((c (freqdep (tuple n s) (tuple) (tuple)))
                         (x (freq (0.25 true) ((theta q) (flip 0.5)))))
                     (B (and x (not x)) (nth (tuple 1 2) 1) (g (- n 1) (stack-push 2 n s)))))))
            (main (backtrack (1 (None)) (2 (Some (g 3 (tuple))))))";
        let p = parse_program(src).unwrap();
        let printed = p.to_string();
        let q = parse_program(&printed).unwrap();
        assert_eq!(printed, q.to_string());
        assert_eq!(
            p.functions[0].body.to_string(),
            q.functions[0].body.to_string()
        );
    }
}
