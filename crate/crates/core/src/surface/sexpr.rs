//! S-expression reader with source positions.

use crate::error::{Error, Pos, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Sexp {
    Atom(String, Pos),
    List(Vec<Sexp>, Pos),
}

impl Sexp {
    pub fn pos(&self) -> Pos {
        match self {
            Sexp::Atom(_, p) | Sexp::List(_, p) => *p,
        }
    }
}

/// Reads every top-level form in `src`. `;` starts a comment that runs to
/// the end of the line.
pub fn read_all(src: &str) -> Result<Vec<Sexp>> {
    let mut reader = Reader {
        chars: src.chars().collect(),
        i: 0,
        line: 1,
        col: 1,
    };
    let mut out = Vec::new();
    loop {
        reader.skip_ws();
        if reader.peek().is_none() {
            return Ok(out);
        }
        out.push(reader.read()?);
    }
}

struct Reader {
    chars: Vec<char>,
    i: usize,
    line: u32,
    col: u32,
}

impl Reader {
    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.col,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.i).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c == ';' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn read(&mut self) -> Result<Sexp> {
        // Lists are read with an explicit stack so deeply nested input does
        // not exhaust the host stack.
        let mut stack: Vec<(Vec<Sexp>, Pos)> = Vec::new();
        loop {
            self.skip_ws();
            let pos = self.pos();
            let item = match self.peek() {
                None => {
                    let open = stack.last().map(|(_, p)| *p).unwrap_or(pos);
                    return Err(Error::Parse {
                        pos: open,
                        msg: "unclosed `(`".into(),
                    });
                }
                Some('(') => {
                    self.bump();
                    stack.push((Vec::new(), pos));
                    continue;
                }
                Some(')') => {
                    self.bump();
                    match stack.pop() {
                        Some((items, p)) => Sexp::List(items, p),
                        None => {
                            return Err(Error::Parse {
                                pos,
                                msg: "unexpected `)`".into(),
                            })
                        }
                    }
                }
                Some(_) => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                            break;
                        }
                        s.push(c);
                        self.bump();
                    }
                    Sexp::Atom(s, pos)
                }
            };
            match stack.last_mut() {
                Some((items, _)) => items.push(item),
                None => return Ok(item),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_nested_lists_with_positions() {
        let forms = read_all("; header\n(a (b c)\n  d)").unwrap();
        assert_eq!(forms.len(), 1);
        let Sexp::List(items, pos) = &forms[0] else {
            panic!()
        };
        assert_eq!(*pos, Pos { line: 2, col: 1 });
        assert_eq!(items[2], Sexp::Atom("d".into(), Pos { line: 3, col: 3 }));
    }

    #[test]
    fn reports_unbalanced_parens() {
        let err = read_all("(a\n (b)").unwrap_err();
        assert!(matches!(
            err,
            Error::Parse {
                pos: Pos { line: 1, col: 1 },
                ..
            }
        ));
        let err = read_all("a)").unwrap_err();
        assert!(matches!(
            err,
            Error::Parse {
                pos: Pos { line: 1, col: 2 },
                ..
            }
        ));
    }
}
