//! Lisp-style s-expressions as used by linearized semantic parses.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SExpr {
    /// A bare token: function names, keywords like `:output`, typed literals like `1L`.
    Symbol(String),
    /// A double-quoted string. Holds the text between the quotes exactly as
    /// written, escape sequences included.
    Str(String),
    List(Vec<SExpr>),
}

impl SExpr {
    pub fn symbol(s: impl Into<String>) -> Self {
        SExpr::Symbol(s.into())
    }

    pub fn as_list(&self) -> Option<&[SExpr]> {
        match self {
            SExpr::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn is_keyword(&self) -> bool {
        matches!(self, SExpr::Symbol(s) if s.len() > 1 && s.starts_with(':'))
    }

    /// Number of non-empty lists with a symbol head.
    pub fn count_applications(&self) -> usize {
        match self {
            SExpr::List(items) => {
                let own = usize::from(matches!(items.first(), Some(SExpr::Symbol(_))));
                own + items.iter().map(SExpr::count_applications).sum::<usize>()
            }
            _ => 0,
        }
    }

    /// Indented rendering: a list that fits in `width` columns stays on one
    /// line, otherwise each argument (keyword and value together) gets its own
    /// line indented by two spaces.
    pub fn pretty(&self, width: usize) -> String {
        let mut out = String::new();
        self.pretty_into(&mut out, 0, width);
        out
    }

    fn pretty_into(&self, out: &mut String, indent: usize, width: usize) {
        let flat = self.to_string();
        let items = match self {
            SExpr::List(items) if indent + flat.len() > width && items.len() > 1 => items,
            _ => {
                out.push_str(&flat);
                return;
            }
        };
        out.push('(');
        out.push_str(&items[0].to_string());
        let mut i = 1;
        while i < items.len() {
            out.push('\n');
            out.push_str(&" ".repeat(indent + 2));
            if items[i].is_keyword() && i + 1 < items.len() {
                let key = items[i].to_string();
                out.push_str(&key);
                out.push(' ');
                items[i + 1].pretty_into(out, indent + 2 + key.len() + 1, width);
                i += 2;
            } else {
                items[i].pretty_into(out, indent + 2, width);
                i += 1;
            }
        }
        out.push(')');
    }
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SExpr::Symbol(s) => f.write_str(s),
            SExpr::Str(s) => write!(f, "\"{s}\""),
            SExpr::List(items) => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Parses exactly one expression, surrounded by optional whitespace.
pub fn parse_sexpr(text: &str) -> Result<SExpr> {
    let mut p = Parser { text, pos: 0 };
    p.skip_ws();
    let expr = p.expr()?;
    p.skip_ws();
    if p.pos < text.len() {
        return Err(Error::Parse {
            offset: p.pos,
            message: "trailing input after expression".into(),
        });
    }
    Ok(expr)
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn err(&self, offset: usize, message: &str) -> Error {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    fn expr(&mut self) -> Result<SExpr> {
        match self.peek() {
            None => Err(self.err(self.pos, "unexpected end of input")),
            Some('(') => self.list(),
            Some(')') => Err(self.err(self.pos, "unexpected ')'")),
            Some('"') => self.string(),
            Some(_) => Ok(self.symbol()),
        }
    }

    fn list(&mut self) -> Result<SExpr> {
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(self.err(self.pos, "unbalanced '(': unexpected end of input")),
                Some(')') => {
                    self.pos += 1;
                    return Ok(SExpr::List(items));
                }
                Some(_) => items.push(self.expr()?),
            }
        }
    }

    fn string(&mut self) -> Result<SExpr> {
        let open = self.pos;
        self.pos += 1;
        let start = self.pos;
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() {
            match bytes[self.pos] {
                b'\\' => self.pos += 2,
                b'"' => {
                    let s = self.text[start..self.pos].to_string();
                    self.pos += 1;
                    return Ok(SExpr::Str(s));
                }
                _ => self.pos += 1,
            }
        }
        self.pos = self.text.len();
        Err(self.err(open, "unterminated string literal"))
    }

    fn symbol(&mut self) -> SExpr {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == '(' || c == ')' || c == '"' {
                break;
            }
            self.pos += c.len_utf8();
        }
        SExpr::Symbol(self.text[start..self.pos].to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CALENDAR_PARSE: &str = r#"(Yield
    :output (Event.start
      :obj (FindNumNextEvent
        :constraint (Event.subject_?
          :obj (?~= "staff meeting"))
        :number 1L)))"#;

    #[test]
    fn minimal_form() {
        let e = parse_sexpr("(f :a 1L)").unwrap();
        assert_eq!(
            e,
            SExpr::List(vec![SExpr::symbol("f"), SExpr::symbol(":a"), SExpr::symbol("1L")])
        );
    }

    #[test]
    fn calendar_parse_has_yield_head() {
        let e = parse_sexpr(CALENDAR_PARSE).unwrap();
        let items = e.as_list().unwrap();
        assert_eq!(items[0], SExpr::symbol("Yield"));
        assert_eq!(e.count_applications(), 5);
        assert!(e.to_string().contains("(?~= \"staff meeting\")"));
    }

    #[test]
    fn unbalanced_input_reports_end_offset() {
        match parse_sexpr("(a (b") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn other_errors_carry_offsets() {
        assert!(matches!(parse_sexpr("(a))"), Err(Error::Parse { offset: 3, .. })));
        assert!(matches!(parse_sexpr("(a \"bc"), Err(Error::Parse { offset: 3, .. })));
        assert!(matches!(parse_sexpr(""), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(parse_sexpr(")"), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn strings_keep_escapes_verbatim() {
        let e = parse_sexpr(r#"(say "a \"quoted\" (word)")"#).unwrap();
        assert_eq!(e.as_list().unwrap()[1], SExpr::Str(r#"a \"quoted\" (word)"#.into()));
        assert_eq!(parse_sexpr(&e.to_string()).unwrap(), e);
    }

    #[test]
    fn pretty_printing_reparses() {
        let e = parse_sexpr(CALENDAR_PARSE).unwrap();
        let pretty = e.pretty(40);
        assert!(pretty.contains('\n'));
        assert_eq!(parse_sexpr(&pretty).unwrap(), e);
        assert_eq!(e.pretty(1000), e.to_string());
    }
}
