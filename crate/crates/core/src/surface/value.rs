//! Surface values and their bit-level encoding.
//!
//! A value of an algebraic type is laid out as a 1-based constructor tag
//! followed by the fields of every constructor in declaration order. Only
//! the fields of the constructor named by the tag are meaningful; the other
//! slots are filled with zeros, so every value has exactly one encoding.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ir::{CoreType, CoreValue, Name};
use crate::surface::sexpr::{read_all, Sexp};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SurfaceValue {
    Bool(bool),
    Nat(u64),
    Tuple(Vec<SurfaceValue>),
    Ctor(Name, Vec<SurfaceValue>),
}

impl SurfaceValue {
    pub fn ctor(name: &str, args: Vec<SurfaceValue>) -> Self {
        SurfaceValue::Ctor(name.into(), args)
    }

    /// Parses the printed form of a value, e.g. `(Some (tuple 1 true))`.
    pub fn parse(src: &str) -> Result<SurfaceValue> {
        let forms = read_all(src)?;
        match forms.as_slice() {
            [one] => from_sexp(one),
            _ => Err(Error::Parse {
                pos: Default::default(),
                msg: "expected exactly one value".into(),
            }),
        }
    }

    /// The corresponding core value, for values built from Booleans and
    /// pairs only.
    pub fn to_core(&self) -> Option<CoreValue> {
        match self {
            SurfaceValue::Bool(b) => Some(CoreValue::Bool(*b)),
            SurfaceValue::Tuple(items) if items.len() == 2 => {
                Some(CoreValue::pair(items[0].to_core()?, items[1].to_core()?))
            }
            _ => None,
        }
    }

    pub fn from_core(v: &CoreValue) -> SurfaceValue {
        match v {
            CoreValue::Bool(b) => SurfaceValue::Bool(*b),
            CoreValue::Pair(a, b) => {
                SurfaceValue::Tuple(vec![Self::from_core(a), Self::from_core(b)])
            }
        }
    }
}

fn from_sexp(s: &Sexp) -> Result<SurfaceValue> {
    let bad = |msg: &str| Error::Parse {
        pos: s.pos(),
        msg: msg.to_string(),
    };
    match s {
        Sexp::Atom(a, _) => match a.as_str() {
            "true" => Ok(SurfaceValue::Bool(true)),
            "false" => Ok(SurfaceValue::Bool(false)),
            n if n.chars().all(|c| c.is_ascii_digit()) => n
                .parse()
                .map(SurfaceValue::Nat)
                .map_err(|_| bad("bad number")),
            c if c.starts_with(|ch: char| ch.is_alphabetic()) => {
                Ok(SurfaceValue::Ctor(c.into(), vec![]))
            }
            _ => Err(bad("malformed value")),
        },
        Sexp::List(items, _) => {
            let Some(Sexp::Atom(head, _)) = items.first() else {
                return Err(bad("malformed value"));
            };
            let args = items[1..]
                .iter()
                .map(from_sexp)
                .collect::<Result<Vec<_>>>()?;
            if head == "tuple" {
                Ok(SurfaceValue::Tuple(args))
            } else {
                Ok(SurfaceValue::Ctor(head.as_str().into(), args))
            }
        }
    }
}

impl fmt::Display for SurfaceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurfaceValue::Bool(b) => write!(f, "{b}"),
            SurfaceValue::Nat(n) => write!(f, "{n}"),
            SurfaceValue::Tuple(items) => {
                write!(f, "(tuple")?;
                for it in items {
                    write!(f, " {it}")?;
                }
                write!(f, ")")
            }
            SurfaceValue::Ctor(c, items) => {
                write!(f, "({c}")?;
                for it in items {
                    write!(f, " {it}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Bit layout of the values a program can produce.
#[derive(Clone, Debug, PartialEq)]
pub enum TypeShape {
    Bool,
    /// Unsigned number, most significant bit first.
    Nat(u32),
    Tuple(Vec<TypeShape>),
    Adt(Arc<AdtShape>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdtShape {
    pub name: Name,
    pub ctors: Vec<Name>,
    pub tag_width: u32,
    /// Field layout per constructor; `None` for constructors that can never
    /// occur in this position.
    pub arms: Vec<Option<Vec<TypeShape>>>,
    width: usize,
}

impl AdtShape {
    pub fn new(
        name: Name,
        ctors: Vec<Name>,
        tag_width: u32,
        arms: Vec<Option<Vec<TypeShape>>>,
    ) -> Self {
        let width = tag_width as usize
            + arms
                .iter()
                .flatten()
                .flat_map(|fs| fs.iter())
                .map(TypeShape::width)
                .sum::<usize>();
        AdtShape {
            name,
            ctors,
            tag_width,
            arms,
            width,
        }
    }
}

fn push_number(n: u64, width: u32, out: &mut Vec<bool>) {
    for i in (0..width).rev() {
        out.push(n >> i & 1 == 1);
    }
}

fn read_number(bits: &[bool]) -> u64 {
    bits.iter().fold(0, |acc, &b| acc << 1 | u64::from(b))
}

impl TypeShape {
    pub fn from_core(t: &CoreType) -> TypeShape {
        match t {
            CoreType::Bool => TypeShape::Bool,
            CoreType::Product(a, b) => {
                TypeShape::Tuple(vec![Self::from_core(a), Self::from_core(b)])
            }
        }
    }

    pub fn width(&self) -> usize {
        match self {
            TypeShape::Bool => 1,
            TypeShape::Nat(w) => *w as usize,
            TypeShape::Tuple(items) => items.iter().map(TypeShape::width).sum(),
            TypeShape::Adt(a) => a.width,
        }
    }

    /// Canonical bit string of `v`.
    pub fn encode(&self, v: &SurfaceValue) -> Result<Vec<bool>> {
        let mut out = Vec::with_capacity(self.width());
        self.encode_into(v, &mut out)?;
        Ok(out)
    }

    fn encode_into(&self, v: &SurfaceValue, out: &mut Vec<bool>) -> Result<()> {
        let mismatch = || Error::Eval(format!("value {v} does not fit shape {}", self.describe()));
        match (self, v) {
            (TypeShape::Bool, SurfaceValue::Bool(b)) => out.push(*b),
            (TypeShape::Nat(w), SurfaceValue::Nat(n)) => {
                if *w < 64 && *n >> w != 0 {
                    return Err(mismatch());
                }
                push_number(*n, *w, out);
            }
            (TypeShape::Tuple(shapes), SurfaceValue::Tuple(items))
                if shapes.len() == items.len() =>
            {
                for (s, it) in shapes.iter().zip(items) {
                    s.encode_into(it, out)?;
                }
            }
            (TypeShape::Adt(a), SurfaceValue::Ctor(c, args)) => {
                let idx = a.ctors.iter().position(|n| n == c).ok_or_else(mismatch)?;
                let fields = a.arms[idx].as_ref().ok_or_else(mismatch)?;
                if fields.len() != args.len() {
                    return Err(mismatch());
                }
                push_number(idx as u64 + 1, a.tag_width, out);
                for (j, arm) in a.arms.iter().enumerate() {
                    let Some(shapes) = arm else { continue };
                    for (k, s) in shapes.iter().enumerate() {
                        if j == idx {
                            s.encode_into(&args[k], out)?;
                        } else {
                            out.extend(std::iter::repeat_n(false, s.width()));
                        }
                    }
                }
            }
            _ => return Err(mismatch()),
        }
        Ok(())
    }

    /// Reads a value back from its bit string. Placeholder slots are not
    /// inspected.
    pub fn decode(&self, bits: &[bool]) -> Result<SurfaceValue> {
        if bits.len() != self.width() {
            return Err(Error::Eval(format!(
                "expected {} bits, found {}",
                self.width(),
                bits.len()
            )));
        }
        self.decode_at(bits, &mut 0)
    }

    fn decode_at(&self, bits: &[bool], at: &mut usize) -> Result<SurfaceValue> {
        match self {
            TypeShape::Bool => {
                *at += 1;
                Ok(SurfaceValue::Bool(bits[*at - 1]))
            }
            TypeShape::Nat(w) => {
                let n = read_number(&bits[*at..*at + *w as usize]);
                *at += *w as usize;
                Ok(SurfaceValue::Nat(n))
            }
            TypeShape::Tuple(shapes) => Ok(SurfaceValue::Tuple(
                shapes
                    .iter()
                    .map(|s| s.decode_at(bits, at))
                    .collect::<Result<_>>()?,
            )),
            TypeShape::Adt(a) => {
                let tag = read_number(&bits[*at..*at + a.tag_width as usize]) as usize;
                *at += a.tag_width as usize;
                let valid = tag >= 1 && tag <= a.ctors.len() && a.arms[tag - 1].is_some();
                if !valid {
                    return Err(Error::Eval(format!(
                        "invalid tag {tag} for type {}",
                        a.name
                    )));
                }
                let mut args = Vec::new();
                for (j, arm) in a.arms.iter().enumerate() {
                    let Some(shapes) = arm else { continue };
                    for s in shapes {
                        if j == tag - 1 {
                            args.push(s.decode_at(bits, at)?);
                        } else {
                            *at += s.width();
                        }
                    }
                }
                Ok(SurfaceValue::Ctor(a.ctors[tag - 1].clone(), args))
            }
        }
    }

    /// The bits that identify `v`: the tags and the fields of the chosen
    /// constructors, as `(position, value)` pairs. Placeholder slots are
    /// left out.
    pub fn relevant_bits(&self, v: &SurfaceValue) -> Result<Vec<(usize, bool)>> {
        let mut out = Vec::new();
        self.relevant_at(v, 0, &mut out)?;
        Ok(out)
    }

    fn relevant_at(
        &self,
        v: &SurfaceValue,
        offset: usize,
        out: &mut Vec<(usize, bool)>,
    ) -> Result<()> {
        let mismatch = || Error::Eval(format!("value {v} does not fit shape {}", self.describe()));
        match (self, v) {
            (TypeShape::Bool, SurfaceValue::Bool(b)) => out.push((offset, *b)),
            (TypeShape::Nat(w), SurfaceValue::Nat(n)) => {
                if *w < 64 && *n >> w != 0 {
                    return Err(mismatch());
                }
                for i in 0..*w {
                    out.push((offset + i as usize, n >> (w - 1 - i) & 1 == 1));
                }
            }
            (TypeShape::Tuple(shapes), SurfaceValue::Tuple(items))
                if shapes.len() == items.len() =>
            {
                let mut at = offset;
                for (s, it) in shapes.iter().zip(items) {
                    s.relevant_at(it, at, out)?;
                    at += s.width();
                }
            }
            (TypeShape::Adt(a), SurfaceValue::Ctor(c, args)) => {
                let idx = a.ctors.iter().position(|n| n == c).ok_or_else(mismatch)?;
                if a.arms[idx].as_ref().map(Vec::len) != Some(args.len()) {
                    return Err(mismatch());
                }
                let tag = idx as u64 + 1;
                for i in 0..a.tag_width {
                    out.push((offset + i as usize, tag >> (a.tag_width - 1 - i) & 1 == 1));
                }
                let mut at = offset + a.tag_width as usize;
                for (j, arm) in a.arms.iter().enumerate() {
                    let Some(shapes) = arm else { continue };
                    for (k, s) in shapes.iter().enumerate() {
                        if j == idx {
                            s.relevant_at(&args[k], at, out)?;
                        }
                        at += s.width();
                    }
                }
            }
            _ => return Err(mismatch()),
        }
        Ok(())
    }

    /// Short human-readable description.
    pub fn describe(&self) -> String {
        match self {
            TypeShape::Bool => "Bool".into(),
            TypeShape::Nat(w) => format!("Nat{w}"),
            TypeShape::Tuple(items) => {
                format!(
                    "({})",
                    items
                        .iter()
                        .map(TypeShape::describe)
                        .collect::<Vec<_>>()
                        .join(" ")
                )
            }
            TypeShape::Adt(a) => a.name.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Layout of `List = Nil | Cons(Nat5, List)` unrolled to length two.
    fn list_shape() -> TypeShape {
        let ctors: Vec<Name> = vec!["Nil".into(), "Cons".into()];
        let nil = TypeShape::Adt(Arc::new(AdtShape::new(
            "List".into(),
            ctors.clone(),
            2,
            vec![Some(vec![]), None],
        )));
        let one = TypeShape::Adt(Arc::new(AdtShape::new(
            "List".into(),
            ctors.clone(),
            2,
            vec![Some(vec![]), Some(vec![TypeShape::Nat(5), nil])],
        )));
        TypeShape::Adt(Arc::new(AdtShape::new(
            "List".into(),
            ctors,
            2,
            vec![Some(vec![]), Some(vec![TypeShape::Nat(5), one])],
        )))
    }

    fn list(items: &[u64]) -> SurfaceValue {
        items
            .iter()
            .rev()
            .fold(SurfaceValue::ctor("Nil", vec![]), |acc, &n| {
                SurfaceValue::ctor("Cons", vec![SurfaceValue::Nat(n), acc])
            })
    }

    fn bits(s: &str) -> Vec<bool> {
        s.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c == '1')
            .collect()
    }

    #[test]
    fn list_encoding_uses_tags_and_zero_placeholders() {
        let shape = list_shape();
        // (Cons 10 (Cons 20 Nil)): tags 2,2,1 with all fields present.
        assert_eq!(
            shape.encode(&list(&[10, 20])).unwrap(),
            bits("10 01010 10 10100 01")
        );
        // (Cons 10 Nil): the inner Cons slot is zero-filled.
        assert_eq!(
            shape.encode(&list(&[10])).unwrap(),
            bits("10 01010 01 00000 00")
        );
        assert_eq!(
            shape.encode(&list(&[])).unwrap(),
            bits("01 00000 00 00000 00")
        );
        for v in [list(&[]), list(&[3]), list(&[31, 0])] {
            assert_eq!(shape.decode(&shape.encode(&v).unwrap()).unwrap(), v);
        }
    }

    #[test]
    fn relevant_bits_skip_placeholders() {
        let shape = list_shape();
        let rel = shape.relevant_bits(&list(&[10])).unwrap();
        let positions: Vec<usize> = rel.iter().map(|&(i, _)| i).collect();
        assert_eq!(positions, vec![0, 1, 2, 3, 4, 5, 6, 7, 8]);
        assert!(shape.encode(&list(&[1, 2, 3])).is_err());
        assert!(shape.encode(&list(&[32])).is_err());
    }

    #[test]
    fn values_print_and_parse() {
        let v = SurfaceValue::Tuple(vec![list(&[1, 2]), SurfaceValue::Bool(true)]);
        let s = v.to_string();
        assert_eq!(s, "(tuple (Cons 1 (Cons 2 (Nil))) true)");
        assert_eq!(SurfaceValue::parse(&s).unwrap(), v);
        assert_eq!(
            SurfaceValue::parse("Leaf").unwrap(),
            SurfaceValue::ctor("Leaf", vec![])
        );
    }
}
