//! Text form of expressions.
//!
//! Grammar: an expression is an integer literal, a bare input name, or
//! `head(arg,...)`, optionally followed by `[index]` suffixes which desugar
//! to `idx`. Operator heads (`+`, `*`, `-`, `1/`, `<`, `==`, `&&`, `||`, `!`)
//! use the same prefix call syntax as named heads.

use super::{Expr, Prim, TypeError, MAX_LITERAL};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown primitive `{name}` at byte {pos}")]
    UnknownPrimitive { pos: usize, name: String },
    #[error("integer literal {value} at byte {pos} is out of range (0..={max})", max = MAX_LITERAL)]
    LiteralRange { pos: usize, value: u64 },
    #[error("type error at byte {pos}: {source}")]
    Type {
        pos: usize,
        #[source]
        source: TypeError,
    },
    #[error("trailing input at byte {pos}")]
    Trailing { pos: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Int(u64),
    Head(&'static str),
    Ident(String),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                toks.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                toks.push((start, Tok::RParen));
                i += 1;
            }
            b'[' => {
                toks.push((start, Tok::LBracket));
                i += 1;
            }
            b']' => {
                toks.push((start, Tok::RBracket));
                i += 1;
            }
            b',' => {
                toks.push((start, Tok::Comma));
                i += 1;
            }
            b'+' => {
                toks.push((start, Tok::Head("+")));
                i += 1;
            }
            b'*' => {
                toks.push((start, Tok::Head("*")));
                i += 1;
            }
            b'-' => {
                toks.push((start, Tok::Head("-")));
                i += 1;
            }
            b'<' => {
                toks.push((start, Tok::Head("<")));
                i += 1;
            }
            b'!' => {
                toks.push((start, Tok::Head("!")));
                i += 1;
            }
            b'=' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push((start, Tok::Head("==")));
                    i += 2;
                } else {
                    return Err(ParseError::Syntax {
                        pos: start,
                        msg: "expected `==`".into(),
                    });
                }
            }
            b'&' => {
                if bytes.get(i + 1) == Some(&b'&') {
                    toks.push((start, Tok::Head("&&")));
                    i += 2;
                } else {
                    return Err(ParseError::Syntax {
                        pos: start,
                        msg: "expected `&&`".into(),
                    });
                }
            }
            b'|' => {
                if bytes.get(i + 1) == Some(&b'|') {
                    toks.push((start, Tok::Head("||")));
                    i += 2;
                } else {
                    return Err(ParseError::Syntax {
                        pos: start,
                        msg: "expected `||`".into(),
                    });
                }
            }
            b'0'..=b'9' => {
                let mut v: u64 = 0;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    v = v.saturating_mul(10).saturating_add((bytes[i] - b'0') as u64);
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'/' {
                    if v != 1 {
                        return Err(ParseError::Syntax {
                            pos: start,
                            msg: "only `1/` names the inverse".into(),
                        });
                    }
                    toks.push((start, Tok::Head("1/")));
                    i += 1;
                } else {
                    toks.push((start, Tok::Int(v)));
                }
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((start, Tok::Ident(src[start..i].to_string())));
            }
            _ => {
                return Err(ParseError::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{}`", src[start..].chars().next().unwrap()),
                })
            }
        }
    }
    Ok(toks)
}

fn head_by_name(name: &str) -> Option<Prim> {
    let p = match name {
        "+" => Prim::Add,
        "*" => Prim::Mul,
        "-" => Prim::Neg,
        "1/" => Prim::Inv,
        "<" => Prim::Lt,
        "==" => Prim::Eq,
        "&&" => Prim::And,
        "||" => Prim::Or,
        "!" => Prim::Not,
        "if" => Prim::If,
        "vec_full" => Prim::VecFull,
        "vec_1" => Prim::Vec1,
        "vec_2" => Prim::Vec2,
        "vec_3" => Prim::Vec3,
        "vec_4" => Prim::Vec4,
        "idx" => Prim::Idx,
        "assign" => Prim::Assign,
        "add_assign" => Prim::AddAssign,
        "logit" => Prim::Logit,
        "softmax" => Prim::Softmax,
        "action" => Prim::Action,
        "argmax" => Prim::Argmax,
        _ => return None,
    };
    Some(p)
}

fn input_by_name(name: &str) -> Option<Prim> {
    let p = match name {
        "prev_action" => Prim::PrevAction,
        "reward" => Prim::Reward,
        "state" => Prim::State,
        "prev_forced" => Prim::PrevForced,
        _ => return None,
    };
    Some(p)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(usize, Tok)> {
        self.toks.get(self.at)
    }

    fn next(&mut self) -> Option<(usize, Tok)> {
        let t = self.toks.get(self.at).cloned();
        if t.is_some() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<usize, ParseError> {
        match self.next() {
            Some((pos, t)) if t == want => Ok(pos),
            Some((pos, _)) => Err(ParseError::Syntax {
                pos,
                msg: format!("expected {what}"),
            }),
            None => Err(ParseError::Syntax {
                pos: self.end,
                msg: format!("expected {what}, got end of input"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.atom()?;
        while let Some((pos, Tok::LBracket)) = self.peek().cloned() {
            self.at += 1;
            let index = self.expr()?;
            self.expect(Tok::RBracket, "`]`")?;
            e = Expr::new(Prim::Idx, vec![e, index])
                .map_err(|source| ParseError::Type { pos, source })?;
        }
        Ok(e)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.next() {
            Some((pos, Tok::Int(v))) => {
                if v > MAX_LITERAL as u64 {
                    return Err(ParseError::LiteralRange { pos, value: v });
                }
                Ok(Expr::lit(v as u8))
            }
            Some((pos, Tok::Head(name))) => {
                let head = head_by_name(name).expect("lexer emits known heads");
                self.call(pos, head)
            }
            Some((pos, Tok::Ident(name))) => {
                if let Some(input) = input_by_name(&name) {
                    return Ok(Expr::nullary(input));
                }
                if let Some(head) = head_by_name(&name) {
                    return self.call(pos, head);
                }
                Err(ParseError::UnknownPrimitive { pos, name })
            }
            Some((pos, _)) => Err(ParseError::Syntax {
                pos,
                msg: "expected an expression".into(),
            }),
            None => Err(ParseError::Syntax {
                pos: self.end,
                msg: "expected an expression, got end of input".into(),
            }),
        }
    }

    fn call(&mut self, pos: usize, head: Prim) -> Result<Expr, ParseError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek().map(|(_, t)| t) != Some(&Tok::RParen) {
            loop {
                args.push(self.expr()?);
                match self.peek() {
                    Some((_, Tok::Comma)) => {
                        self.at += 1;
                    }
                    _ => break,
                }
            }
        }
        self.expect(Tok::RParen, "`)` or `,`")?;
        Expr::new(head, args).map_err(|source| ParseError::Type { pos, source })
    }
}

/// Parses canonical (or sugared) program text into an expression.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks,
        at: 0,
        end: src.len(),
    };
    let e = p.expr()?;
    if let Some((pos, _)) = p.peek() {
        return Err(ParseError::Trailing { pos: *pos });
    }
    Ok(e)
}
