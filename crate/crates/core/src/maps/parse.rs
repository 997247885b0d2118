use super::Expr;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { pos: self.pos, msg: msg.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.peek() {
            Some(got) if got == c => {
                self.pos += 1;
                Ok(())
            }
            Some(got) => self.err(format!("expected '{}', found '{}'", c as char, got as char)),
            None => self.err(format!("expected '{}', found end of input", c as char)),
        }
    }

    fn ident(&mut self) -> Result<&'a str> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected a node name");
        }
        Ok(std::str::from_utf8(&self.src[start..self.pos]).expect("ascii"))
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            let sign_after_exp =
                (c == b'-' || c == b'+') && self.pos > start && matches!(self.src[self.pos - 1], b'e' | b'E');
            if c.is_ascii_digit()
                || c == b'.'
                || c == b'e'
                || c == b'E'
                || sign_after_exp
                || ((c == b'-' || c == b'+') && self.pos == start)
            {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => {
                self.pos = start;
                self.err(format!("expected a finite number, found {text:?}"))
            }
        }
    }

    fn row(&mut self) -> Result<Vec<f64>> {
        let mut row = vec![self.number()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            row.push(self.number()?);
        }
        Ok(row)
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let start = self.pos;
        self.expect(b'[')?;
        self.expect(b'[')?;
        let mut rows = vec![self.row()?];
        loop {
            self.expect(b']')?;
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                    self.expect(b'[')?;
                    rows.push(self.row()?);
                }
                _ => break,
            }
        }
        self.expect(b']')?;
        let ncols = rows[0].len();
        if rows.iter().any(|r| r.len() != ncols) {
            self.pos = start;
            return self.err("matrix rows have different lengths");
        }
        Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    fn expr(&mut self) -> Result<Expr> {
        let start = self.pos;
        let name = self.ident()?;
        let e = match name {
            "zero" => Expr::Zero,
            "kp" => Expr::KaltonPeck,
            "linear" => {
                self.expect(b'(')?;
                let m = self.matrix()?;
                self.expect(b')')?;
                Expr::Linear(m)
            }
            "delta" => {
                self.expect(b'(')?;
                let inner = self.expr()?;
                self.expect(b')')?;
                Expr::EnfloDelta(Box::new(inner))
            }
            "scale" => {
                self.expect(b'(')?;
                let c = self.number()?;
                self.expect(b',')?;
                let inner = self.expr()?;
                self.expect(b')')?;
                Expr::Scale(c, Box::new(inner))
            }
            "sum" => {
                self.expect(b'(')?;
                let a = self.expr()?;
                self.expect(b',')?;
                let b = self.expr()?;
                self.expect(b')')?;
                Expr::Sum(Box::new(a), Box::new(b))
            }
            "pre" | "post" => {
                self.expect(b'(')?;
                let m = self.matrix()?;
                self.expect(b',')?;
                let inner = self.expr()?;
                self.expect(b')')?;
                if name == "pre" {
                    Expr::PreLinear(m, Box::new(inner))
                } else {
                    Expr::PostLinear(m, Box::new(inner))
                }
            }
            other => {
                self.pos = start;
                self.skip_ws();
                return self.err(format!("unknown node {other:?}"));
            }
        };
        Ok(e)
    }
}

/// Parses DSL text into an unchecked expression tree.
pub fn parse_expr(text: &str) -> Result<Expr> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    let e = p.expr()?;
    if p.peek().is_some() {
        return p.err("trailing input");
    }
    Ok(e)
}
