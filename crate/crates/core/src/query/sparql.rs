//! The supported SPARQL subset.
//!
//! ```text
//! [PREFIX p: <iri>]* SELECT (* | ?var+) [WHERE] {
//!     ?s :lat ?lat ; :lon ?lon [; :attr ?attr]* .
//!     [FILTER(conjunction of comparisons, CONTAINS(), one region disjunction)]*
//! } [LIMIT n]
//! ```
//!
//! All triples share one subject variable and have variable objects. Region
//! boxes are written as four inclusive bounds on the lat/lon variables.
//! Anything outside the subset is rejected with
//! [`QueryError::UnsupportedFeature`], never dropped.

use std::collections::{BTreeSet, HashMap};

use chrono::{DateTime, SecondsFormat, Utc};

use super::{
    is_identifier, CompareOp, Dialect, Predicate, Projection, QueryAst, QueryError, QueryText,
    Value,
};
use crate::geo::{GeoBounds, GeoPoint};

const MAX_DEPTH: usize = 64;
const XSD_DATETIME: [&str; 2] = [
    "xsd:dateTime",
    "<http://www.w3.org/2001/XMLSchema#dateTime>",
];
const XSD_NUMERIC: [&str; 4] = ["xsd:integer", "xsd:decimal", "xsd:double", "xsd:float"];

/// Predicate names used for the record fields and free attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub lat: String,
    pub lon: String,
    pub ts: String,
    pub id: String,
    /// Attribute `foo` is addressed as `{attr_prefix}foo`.
    pub attr_prefix: String,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            lat: ":lat".into(),
            lon: ":lon".into(),
            ts: ":ts".into(),
            id: ":id".into(),
            attr_prefix: ":".into(),
        }
    }
}

pub fn parse_sparql(text: &str) -> Result<QueryAst, QueryError> {
    parse_sparql_with(text, &Vocabulary::default())
}

pub fn parse_sparql_with(text: &str, vocab: &Vocabulary) -> Result<QueryAst, QueryError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        end: text.len(),
        vocab,
    };
    p.query()
}

pub fn emit_sparql(ast: &QueryAst) -> QueryText {
    emit_sparql_with(ast, &Vocabulary::default())
}

pub fn emit_sparql_with(ast: &QueryAst, vocab: &Vocabulary) -> QueryText {
    let ast = ast.canonicalize();
    let attrs: Vec<String> = ast
        .referenced_attrs()
        .into_iter()
        .filter(|a| a != "id" && a != "ts")
        .collect();
    let mut subject = String::from("s");
    while attrs.contains(&subject) {
        subject.push('_');
    }
    let uses = |name: &str| ast.predicates.iter().any(|p| p.attr == name);

    let mut out = String::from("SELECT ");
    match &ast.projection {
        Projection::All => out.push('*'),
        Projection::Attrs(names) => {
            out.push_str(&format!("?{subject} ?lat ?lon"));
            for n in names {
                out.push_str(&format!(" ?{n}"));
            }
        }
    }
    out.push_str(&format!(
        " WHERE {{ ?{subject} {} ?lat ; {} ?lon",
        vocab.lat, vocab.lon
    ));
    if uses("id") {
        out.push_str(&format!(" ; {} ?id", vocab.id));
    }
    if uses("ts") {
        out.push_str(&format!(" ; {} ?ts", vocab.ts));
    }
    for a in &attrs {
        out.push_str(&format!(" ; {}{a} ?{a}", vocab.attr_prefix));
    }
    out.push_str(" .");

    let mut terms = Vec::new();
    match ast.regions.len() {
        0 => {}
        1 => terms.push(region_terms(&ast.regions[0])),
        _ => {
            let alts: Vec<String> = ast
                .regions
                .iter()
                .map(|r| format!("({})", region_terms(r)))
                .collect();
            terms.push(format!("({})", alts.join(" || ")));
        }
    }
    for p in &ast.predicates {
        terms.push(predicate_term(p));
    }
    if !terms.is_empty() {
        out.push_str(&format!(" FILTER({})", terms.join(" && ")));
    }
    out.push_str(" }");
    if let Some(n) = ast.limit {
        out.push_str(&format!(" LIMIT {n}"));
    }
    QueryText::new(Dialect::Sparql, out)
}

fn region_terms(r: &GeoBounds) -> String {
    format!(
        "?lat >= {} && ?lat <= {} && ?lon >= {} && ?lon <= {}",
        r.south(),
        r.north(),
        r.west(),
        r.east()
    )
}

fn predicate_term(p: &Predicate) -> String {
    let lit = literal(&p.value);
    match p.op {
        CompareOp::Contains => format!("CONTAINS(?{}, {lit})", p.attr),
        op => format!("?{} {} {lit}", p.attr, op.symbol()),
    }
}

fn literal(v: &Value) -> String {
    match v {
        Value::Num(n) => format!("{n}"),
        Value::Str(s) => quote(s),
        Value::Time(t) => format!(
            "{}^^xsd:dateTime",
            quote(&t.to_rfc3339_opts(SecondsFormat::AutoSi, true))
        ),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

// ---------------------------------------------------------------------------
// lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Var(String),
    Word(String),
    PName(String),
    Iri(String),
    Str(String),
    Num(String),
    Punct(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

const PUNCTS: [&str; 19] = [
    "&&", "||", "!=", "<=", ">=", "^^", "{", "}", "(", ")", ".", ";", ",", "*", "=", "<", ">",
    "!", "/",
];
const PATH_PUNCTS: [char; 4] = ['|', '^', '+', '?'];

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn lex(text: &str) -> Result<Vec<Token>, QueryError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let at = |i: usize| chars.get(i).map(|&(_, c)| c);
    let byte = |i: usize| chars.get(i).map(|&(b, _)| b).unwrap_or(text.len());
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i].1 != '\n' {
                i += 1;
            }
            continue;
        }
        if (c == '?' || c == '$') && at(i + 1).is_some_and(is_name_char) {
            let mut j = i + 1;
            while at(j).is_some_and(is_name_char) {
                j += 1;
            }
            out.push(Token {
                tok: Tok::Var(text[byte(i + 1)..byte(j)].to_string()),
                pos,
            });
            i = j;
            continue;
        }
        if c == '"' || c == '\'' {
            let (s, j) = lex_string(text, &chars, i)?;
            out.push(Token { tok: Tok::Str(s), pos });
            i = j;
            continue;
        }
        let signed_num = (c == '-' || c == '+') && at(i + 1).is_some_and(|d| d.is_ascii_digit());
        if c.is_ascii_digit() || signed_num {
            let mut j = i + 1;
            while at(j).is_some_and(|d| d.is_ascii_digit()) {
                j += 1;
            }
            if at(j) == Some('.') && at(j + 1).is_some_and(|d| d.is_ascii_digit()) {
                j += 1;
                while at(j).is_some_and(|d| d.is_ascii_digit()) {
                    j += 1;
                }
            }
            if matches!(at(j), Some('e' | 'E')) {
                let mut k = j + 1;
                if matches!(at(k), Some('+' | '-')) {
                    k += 1;
                }
                if at(k).is_some_and(|d| d.is_ascii_digit()) {
                    while at(k).is_some_and(|d| d.is_ascii_digit()) {
                        k += 1;
                    }
                    j = k;
                }
            }
            out.push(Token {
                tok: Tok::Num(text[pos..byte(j)].to_string()),
                pos,
            });
            i = j;
            continue;
        }
        if c == '<' {
            // an IRI if it closes before whitespace, otherwise an operator
            let mut j = i + 1;
            while at(j).is_some_and(|d| d != '>' && !d.is_whitespace() && d != '<') {
                j += 1;
            }
            if at(j) == Some('>') && j > i + 1 && at(i + 1) != Some('=') {
                out.push(Token {
                    tok: Tok::Iri(text[pos..byte(j + 1)].to_string()),
                    pos,
                });
                i = j + 1;
                continue;
            }
        }
        if c.is_alphabetic() || c == '_' || c == ':' {
            let mut j = i;
            while at(j).is_some_and(|d| is_name_char(d) || d == '-') {
                j += 1;
            }
            if at(j) == Some(':') {
                j += 1;
                while at(j).is_some_and(|d| is_name_char(d) || d == '-' || d == '.') {
                    j += 1;
                }
                // a trailing '.' terminates the triple, not the name
                while j > i && at(j - 1) == Some('.') {
                    j -= 1;
                }
                out.push(Token {
                    tok: Tok::PName(text[pos..byte(j)].to_string()),
                    pos,
                });
            } else {
                if j == i {
                    return Err(QueryError::syntax(pos, "token"));
                }
                out.push(Token {
                    tok: Tok::Word(text[pos..byte(j)].to_string()),
                    pos,
                });
            }
            i = j;
            continue;
        }
        let rest = &text[pos..];
        if let Some(p) = PUNCTS.iter().find(|p| rest.starts_with(**p)) {
            out.push(Token {
                tok: Tok::Punct(p),
                pos,
            });
            i += p.chars().count();
            continue;
        }
        if PATH_PUNCTS.contains(&c) {
            return Err(QueryError::UnsupportedFeature("property paths".into()));
        }
        return Err(QueryError::syntax(pos, "token"));
    }
    Ok(out)
}

fn lex_string(
    text: &str,
    chars: &[(usize, char)],
    start: usize,
) -> Result<(String, usize), QueryError> {
    let quote = chars[start].1;
    let mut s = String::new();
    let mut i = start + 1;
    loop {
        let Some(&(pos, c)) = chars.get(i) else {
            return Err(QueryError::syntax(text.len(), "closing quote"));
        };
        match c {
            c if c == quote => return Ok((s, i + 1)),
            '\n' | '\r' => return Err(QueryError::syntax(pos, "closing quote")),
            '\\' => {
                let Some(&(epos, e)) = chars.get(i + 1) else {
                    return Err(QueryError::syntax(text.len(), "escape sequence"));
                };
                i += 2;
                match e {
                    't' => s.push('\t'),
                    'n' => s.push('\n'),
                    'r' => s.push('\r'),
                    'b' => s.push('\u{8}'),
                    'f' => s.push('\u{c}'),
                    '"' => s.push('"'),
                    '\'' => s.push('\''),
                    '\\' => s.push('\\'),
                    'u' | 'U' => {
                        let n = if e == 'u' { 4 } else { 8 };
                        let hex: String = chars.iter().skip(i).take(n).map(|&(_, c)| c).collect();
                        let ch = (hex.chars().count() == n)
                            .then(|| u32::from_str_radix(&hex, 16).ok())
                            .flatten()
                            .and_then(char::from_u32)
                            .ok_or_else(|| QueryError::syntax(epos, "unicode escape"))?;
                        s.push(ch);
                        i += n;
                    }
                    _ => return Err(QueryError::syntax(epos, "escape sequence")),
                }
            }
            c => {
                s.push(c);
                i += 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// parser

#[derive(Debug, Clone, PartialEq)]
enum Role {
    Subject,
    Lat,
    Lon,
    Ts,
    Id,
    Attr(String),
}

#[derive(Debug, Clone)]
enum Operand {
    Var(String, usize),
    Lit(Value, usize),
}

#[derive(Debug, Clone)]
enum Expr {
    Cmp(Operand, CompareOp, Operand),
    Contains(Operand, Operand),
    And(Vec<Expr>),
    Or(Vec<Expr>),
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
    vocab: &'a Vocabulary,
}

fn unsupported(name: &str) -> QueryError {
    QueryError::UnsupportedFeature(name.to_string())
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.tokens.get(self.pos + k).map(|t| &t.tok)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.pos).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(x)) if x.eq_ignore_ascii_case(w))
    }

    fn is_word_at(&self, k: usize, w: &str) -> bool {
        matches!(self.peek_at(k), Some(Tok::Word(x)) if x.eq_ignore_ascii_case(w))
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok::Punct(x)) if *x == p)
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), QueryError> {
        if self.is_punct(p) {
            self.pos += 1;
            Ok(())
        } else {
            Err(QueryError::syntax(self.here(), format!("'{p}'")))
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), QueryError> {
        if self.is_word(w) {
            self.pos += 1;
            Ok(())
        } else {
            Err(QueryError::syntax(self.here(), w))
        }
    }

    /// Rejects keywords that belong to SPARQL but not to the subset.
    fn reject_unsupported_keyword(&self) -> Result<(), QueryError> {
        let Some(Tok::Word(w)) = self.peek() else {
            return Ok(());
        };
        let up = w.to_ascii_uppercase();
        let two = |second: &str| self.is_word_at(1, second);
        match up.as_str() {
            "GROUP" if two("BY") => Err(unsupported("GROUP BY")),
            "ORDER" if two("BY") => Err(unsupported("ORDER BY")),
            "HAVING" | "OFFSET" | "DISTINCT" | "REDUCED" | "CONSTRUCT" | "ASK" | "DESCRIBE"
            | "FROM" | "OPTIONAL" | "UNION" | "MINUS" | "BIND" | "VALUES" | "SERVICE"
            | "GRAPH" | "NOT" | "EXISTS" | "REGEX" => Err(unsupported(&up)),
            _ => Ok(()),
        }
    }

    fn query(&mut self) -> Result<QueryAst, QueryError> {
        while self.is_word("PREFIX") || self.is_word("BASE") {
            let is_prefix = self.is_word("PREFIX");
            self.pos += 1;
            if is_prefix {
                match self.next() {
                    Some(Token {
                        tok: Tok::PName(p), ..
                    }) if p.ends_with(':') => {}
                    _ => return Err(QueryError::syntax(self.here(), "prefix name")),
                }
            }
            match self.next() {
                Some(Token { tok: Tok::Iri(_), .. }) => {}
                _ => return Err(QueryError::syntax(self.here(), "IRI")),
            }
        }
        self.reject_unsupported_keyword()?;
        self.expect_word("SELECT")?;
        self.reject_unsupported_keyword()?;
        let mut select_vars: Option<Vec<(String, usize)>> = None;
        if self.is_punct("*") {
            self.pos += 1;
        } else {
            let mut vars = Vec::new();
            while let Some(Tok::Var(v)) = self.peek() {
                vars.push((v.clone(), self.here()));
                self.pos += 1;
            }
            if vars.is_empty() {
                if self.is_punct("(") {
                    return Err(unsupported("projection expressions"));
                }
                return Err(QueryError::syntax(self.here(), "'*' or variables"));
            }
            select_vars = Some(vars);
        }
        self.reject_unsupported_keyword()?;
        if self.is_word("WHERE") {
            self.pos += 1;
        }
        self.expect_punct("{")?;

        let mut bindings: HashMap<String, Role> = HashMap::new();
        let mut subject: Option<String> = None;
        let mut filters: Vec<Expr> = Vec::new();
        loop {
            self.reject_unsupported_keyword()?;
            match self.peek() {
                Some(Tok::Punct("}")) => break,
                Some(Tok::Punct("{")) => return Err(unsupported("nested group patterns")),
                Some(Tok::Word(w)) if w.eq_ignore_ascii_case("FILTER") => {
                    self.pos += 1;
                    filters.push(self.filter()?);
                }
                Some(Tok::Var(_)) => self.triples(&mut subject, &mut bindings)?,
                Some(Tok::Punct(".")) => self.pos += 1,
                None => return Err(QueryError::syntax(self.end, "'}'")),
                _ => {
                    if matches!(self.peek(), Some(Tok::PName(_) | Tok::Iri(_))) {
                        return Err(unsupported("constant subjects"));
                    }
                    return Err(QueryError::syntax(self.here(), "triple pattern or FILTER"));
                }
            }
        }
        let close = self.here();
        self.pos += 1;

        let roles: BTreeSet<_> = bindings.values().map(role_key).collect();
        if !roles.contains("lat") || !roles.contains("lon") {
            return Err(QueryError::syntax(
                close,
                "triple patterns binding lat and lon",
            ));
        }

        let mut limit = None;
        loop {
            self.reject_unsupported_keyword()?;
            if self.is_word("LIMIT") {
                if limit.is_some() {
                    return Err(QueryError::syntax(self.here(), "end of query"));
                }
                self.pos += 1;
                let at = self.here();
                match self.next() {
                    Some(Token { tok: Tok::Num(n), .. }) => {
                        limit = Some(
                            n.parse::<u64>()
                                .map_err(|_| QueryError::syntax(at, "non-negative integer"))?,
                        );
                    }
                    _ => return Err(QueryError::syntax(at, "non-negative integer")),
                }
            } else if self.peek().is_none() {
                break;
            } else {
                return Err(QueryError::syntax(self.here(), "LIMIT or end of query"));
            }
        }

        let projection = match select_vars {
            None => Projection::All,
            Some(vars) => {
                let mut names = Vec::new();
                for (v, at) in vars {
                    match bindings.get(&v) {
                        None => {
                            return Err(QueryError::syntax(at, "variable bound in WHERE"))
                        }
                        Some(Role::Attr(a)) => names.push(a.clone()),
                        Some(_) => {}
                    }
                }
                Projection::Attrs(names)
            }
        };

        let mut ast = QueryAst {
            projection,
            limit,
            ..Default::default()
        };
        let mut terms = Vec::new();
        for f in filters {
            flatten_and(f, &mut terms);
        }
        interpret(terms, &bindings, &mut ast)?;
        Ok(ast)
    }

    fn triples(
        &mut self,
        subject: &mut Option<String>,
        bindings: &mut HashMap<String, Role>,
    ) -> Result<(), QueryError> {
        let Some(Token {
            tok: Tok::Var(s), ..
        }) = self.next()
        else {
            return Err(QueryError::syntax(self.here(), "subject variable"));
        };
        match subject {
            Some(existing) if *existing != s => return Err(unsupported("multiple subjects")),
            _ => *subject = Some(s.clone()),
        }
        bind(bindings, &s, Role::Subject)?;
        loop {
            let at = self.here();
            let verb = match self.next() {
                Some(Token {
                    tok: Tok::PName(p), ..
                }) => p,
                Some(Token { tok: Tok::Iri(i), .. }) => i,
                Some(Token {
                    tok: Tok::Word(w), ..
                }) if w == "a" => return Err(unsupported("rdf:type constraints")),
                Some(Token {
                    tok: Tok::Punct("/" | "*" | "!"),
                    ..
                }) => return Err(unsupported("property paths")),
                _ => return Err(QueryError::syntax(at, "predicate")),
            };
            if matches!(self.peek(), Some(Tok::Punct("/" | "*"))) {
                return Err(unsupported("property paths"));
            }
            let role = self.role_for(&verb)?;
            let at = self.here();
            match self.next() {
                Some(Token {
                    tok: Tok::Var(o), ..
                }) => bind(bindings, &o, role)?,
                Some(Token {
                    tok: Tok::Str(_) | Tok::Num(_) | Tok::PName(_) | Tok::Iri(_),
                    ..
                }) => return Err(unsupported("constant objects")),
                _ => return Err(QueryError::syntax(at, "object variable")),
            }
            if self.is_punct(",") {
                return Err(unsupported("object lists"));
            }
            if self.is_punct(";") {
                self.pos += 1;
                // trailing ';' before '.' or '}' is legal
                if self.is_punct(".") || self.is_punct("}") {
                    break;
                }
                continue;
            }
            break;
        }
        if self.is_punct(".") {
            self.pos += 1;
        } else if !self.is_punct("}") && !self.is_word("FILTER") {
            self.reject_unsupported_keyword()?;
            return Err(QueryError::syntax(self.here(), "'.'"));
        }
        Ok(())
    }

    fn role_for(&self, verb: &str) -> Result<Role, QueryError> {
        let v = self.vocab;
        if verb == v.lat {
            Ok(Role::Lat)
        } else if verb == v.lon {
            Ok(Role::Lon)
        } else if verb == v.ts {
            Ok(Role::Ts)
        } else if verb == v.id {
            Ok(Role::Id)
        } else if let Some(name) = verb.strip_prefix(v.attr_prefix.as_str()) {
            if is_identifier(name) && !super::RESERVED_ATTRS.contains(&name) {
                Ok(Role::Attr(name.to_string()))
            } else {
                Err(unsupported(&format!("predicate {verb}")))
            }
        } else {
            Err(unsupported(&format!("predicate {verb}")))
        }
    }

    fn filter(&mut self) -> Result<Expr, QueryError> {
        if self.is_word("NOT") {
            return Err(unsupported("NOT EXISTS"));
        }
        if self.is_word("CONTAINS") {
            return self.primary(0);
        }
        self.expect_punct("(")?;
        let e = self.or_expr(1)?;
        self.expect_punct(")")?;
        Ok(e)
    }

    fn or_expr(&mut self, depth: usize) -> Result<Expr, QueryError> {
        if depth > MAX_DEPTH {
            return Err(unsupported("expression nesting deeper than 64"));
        }
        let mut alts = vec![self.and_expr(depth)?];
        while self.is_punct("||") {
            self.pos += 1;
            alts.push(self.and_expr(depth)?);
        }
        Ok(if alts.len() == 1 {
            alts.pop().unwrap()
        } else {
            Expr::Or(alts)
        })
    }

    fn and_expr(&mut self, depth: usize) -> Result<Expr, QueryError> {
        let mut parts = vec![self.primary(depth)?];
        while self.is_punct("&&") {
            self.pos += 1;
            parts.push(self.primary(depth)?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Expr::And(parts)
        })
    }

    fn primary(&mut self, depth: usize) -> Result<Expr, QueryError> {
        self.reject_unsupported_keyword()?;
        if self.is_punct("(") {
            self.pos += 1;
            let e = self.or_expr(depth + 1)?;
            self.expect_punct(")")?;
            return Ok(e);
        }
        if self.is_punct("!") {
            return Err(unsupported("negation"));
        }
        if self.is_word("CONTAINS") {
            self.pos += 1;
            self.expect_punct("(")?;
            let a = self.operand()?;
            self.expect_punct(",")?;
            let b = self.operand()?;
            self.expect_punct(")")?;
            return Ok(Expr::Contains(a, b));
        }
        if let Some(Tok::Word(w)) = self.peek() {
            if self.peek_at(1) == Some(&Tok::Punct("(")) {
                return Err(unsupported(&format!("function {}", w.to_ascii_uppercase())));
            }
        }
        let lhs = self.operand()?;
        let at = self.here();
        let op = match self.next() {
            Some(Token {
                tok: Tok::Punct(p), ..
            }) => match p {
                "=" => CompareOp::Eq,
                "!=" => CompareOp::Ne,
                "<" => CompareOp::Lt,
                "<=" => CompareOp::Le,
                ">" => CompareOp::Gt,
                ">=" => CompareOp::Ge,
                "*" | "/" => return Err(unsupported("arithmetic")),
                _ => return Err(QueryError::syntax(at, "comparison operator")),
            },
            Some(Token { tok: Tok::Num(n), .. }) if n.starts_with(['+', '-']) => {
                return Err(unsupported("arithmetic"))
            }
            _ => return Err(QueryError::syntax(at, "comparison operator")),
        };
        let rhs = self.operand()?;
        Ok(Expr::Cmp(lhs, op, rhs))
    }

    fn operand(&mut self) -> Result<Operand, QueryError> {
        let at = self.here();
        match self.next() {
            Some(Token { tok: Tok::Var(v), .. }) => Ok(Operand::Var(v, at)),
            Some(Token { tok: Tok::Num(n), .. }) => {
                let x: f64 = n
                    .parse()
                    .map_err(|_| QueryError::syntax(at, "numeric literal"))?;
                Ok(Operand::Lit(Value::Num(x), at))
            }
            Some(Token { tok: Tok::Str(s), .. }) => {
                if self.is_punct("^^") {
                    self.pos += 1;
                    let dt_at = self.here();
                    let dt = match self.next() {
                        Some(Token {
                            tok: Tok::PName(p) | Tok::Iri(p),
                            ..
                        }) => p,
                        _ => return Err(QueryError::syntax(dt_at, "datatype")),
                    };
                    if XSD_DATETIME.contains(&dt.as_str()) {
                        let t = DateTime::parse_from_rfc3339(&s)
                            .map_err(|_| QueryError::syntax(at, "xsd:dateTime literal"))?;
                        Ok(Operand::Lit(Value::Time(t.with_timezone(&Utc)), at))
                    } else if XSD_NUMERIC.contains(&dt.as_str()) {
                        let x: f64 = s
                            .trim()
                            .parse()
                            .map_err(|_| QueryError::syntax(at, "numeric literal"))?;
                        Ok(Operand::Lit(Value::Num(x), at))
                    } else {
                        Err(unsupported(&format!("datatype {dt}")))
                    }
                } else {
                    Ok(Operand::Lit(Value::Str(s), at))
                }
            }
            Some(Token { tok: Tok::Word(w), .. })
                if w.eq_ignore_ascii_case("true") || w.eq_ignore_ascii_case("false") =>
            {
                Err(unsupported("boolean literals"))
            }
            _ => Err(QueryError::syntax(at, "variable or literal")),
        }
    }
}

fn role_key(r: &Role) -> &'static str {
    match r {
        Role::Subject => "subject",
        Role::Lat => "lat",
        Role::Lon => "lon",
        Role::Ts => "ts",
        Role::Id => "id",
        Role::Attr(_) => "attr",
    }
}

fn bind(bindings: &mut HashMap<String, Role>, var: &str, role: Role) -> Result<(), QueryError> {
    match bindings.get(var) {
        Some(existing) if *existing != role => Err(unsupported(&format!(
            "variable ?{var} bound to two different fields"
        ))),
        _ => {
            bindings.insert(var.to_string(), role);
            Ok(())
        }
    }
}

fn flatten_and(e: Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::And(parts) => parts.into_iter().for_each(|p| flatten_and(p, out)),
        other => out.push(other),
    }
}

#[derive(Default)]
struct BoxBounds {
    south: Option<f64>,
    north: Option<f64>,
    west: Option<f64>,
    east: Option<f64>,
}

impl BoxBounds {
    fn set(slot: &mut Option<f64>, v: f64) -> Result<(), QueryError> {
        if slot.replace(v).is_some() {
            return Err(unsupported("repeated lat/lon bound"));
        }
        Ok(())
    }

    fn add(&mut self, role: &Role, op: CompareOp, v: f64) -> Result<(), QueryError> {
        match (role, op) {
            (Role::Lat, CompareOp::Ge) => Self::set(&mut self.south, v),
            (Role::Lat, CompareOp::Le) => Self::set(&mut self.north, v),
            (Role::Lon, CompareOp::Ge) => Self::set(&mut self.west, v),
            (Role::Lon, CompareOp::Le) => Self::set(&mut self.east, v),
            (_, CompareOp::Lt | CompareOp::Gt) => Err(unsupported("strict lat/lon bounds")),
            _ => Err(unsupported("lat/lon comparisons other than >= and <=")),
        }
    }

    fn finish(self) -> Result<GeoBounds, QueryError> {
        match (self.north, self.west, self.south, self.east) {
            (Some(n), Some(w), Some(s), Some(e)) => Ok(GeoBounds {
                north_west: GeoPoint { lat: n, lon: w },
                south_east: GeoPoint { lat: s, lon: e },
            }),
            _ => Err(unsupported("open-ended lat/lon bounds")),
        }
    }
}

/// A comparison normalised to `var op literal`.
fn normalize_cmp(
    lhs: Operand,
    op: CompareOp,
    rhs: Operand,
    bindings: &HashMap<String, Role>,
) -> Result<(Role, CompareOp, Value), QueryError> {
    let (var, at, op, lit) = match (lhs, rhs) {
        (Operand::Var(v, at), Operand::Lit(l, _)) => (v, at, op, l),
        (Operand::Lit(l, _), Operand::Var(v, at)) => (v, at, op.flipped(), l),
        (Operand::Var(..), Operand::Var(..)) => {
            return Err(unsupported("variable-to-variable comparisons"))
        }
        (Operand::Lit(_, at), Operand::Lit(..)) => {
            return Err(QueryError::syntax(at, "variable"))
        }
    };
    let role = bindings
        .get(&var)
        .cloned()
        .ok_or_else(|| QueryError::syntax(at, "variable bound in WHERE"))?;
    Ok((role, op, lit))
}

fn region_from_conjunction(
    e: Expr,
    bindings: &HashMap<String, Role>,
) -> Result<GeoBounds, QueryError> {
    let mut terms = Vec::new();
    flatten_and(e, &mut terms);
    let mut bb = BoxBounds::default();
    for t in terms {
        let Expr::Cmp(l, op, r) = t else {
            return Err(unsupported("disjunctions other than region boxes"));
        };
        let (role, op, lit) = normalize_cmp(l, op, r, bindings)?;
        match (&role, lit) {
            (Role::Lat | Role::Lon, Value::Num(v)) => bb.add(&role, op, v)?,
            (Role::Lat | Role::Lon, _) => return Err(unsupported("non-numeric lat/lon bounds")),
            _ => return Err(unsupported("disjunctions other than region boxes")),
        }
    }
    bb.finish()
}

fn interpret(
    terms: Vec<Expr>,
    bindings: &HashMap<String, Role>,
    ast: &mut QueryAst,
) -> Result<(), QueryError> {
    let mut top_box: Option<BoxBounds> = None;
    let mut disjunction_seen = false;
    for t in terms {
        match t {
            Expr::Or(alts) => {
                if disjunction_seen {
                    return Err(unsupported("more than one region disjunction"));
                }
                disjunction_seen = true;
                for a in alts {
                    ast.regions.push(region_from_conjunction(a, bindings)?);
                }
            }
            Expr::And(_) => unreachable!("flattened"),
            Expr::Contains(a, b) => {
                let (Operand::Var(v, at), Operand::Lit(lit, _)) = (a, b) else {
                    return Err(unsupported("CONTAINS other than CONTAINS(?var, \"text\")"));
                };
                let role = bindings
                    .get(&v)
                    .ok_or_else(|| QueryError::syntax(at, "variable bound in WHERE"))?;
                let attr = match role {
                    Role::Attr(a) => a.clone(),
                    Role::Id => "id".into(),
                    _ => return Err(unsupported("CONTAINS on coordinates or timestamps")),
                };
                ast.predicates
                    .push(Predicate::new(attr, CompareOp::Contains, lit));
            }
            Expr::Cmp(l, op, r) => {
                let (role, op, lit) = normalize_cmp(l, op, r, bindings)?;
                match role {
                    Role::Lat | Role::Lon => {
                        let Value::Num(v) = lit else {
                            return Err(unsupported("non-numeric lat/lon bounds"));
                        };
                        top_box.get_or_insert_with(BoxBounds::default).add(&role, op, v)?;
                    }
                    Role::Ts => ast.predicates.push(Predicate::new("ts", op, lit)),
                    Role::Id => ast.predicates.push(Predicate::new("id", op, lit)),
                    Role::Attr(a) => ast.predicates.push(Predicate::new(a, op, lit)),
                    Role::Subject => return Err(unsupported("comparisons on the subject")),
                }
            }
        }
    }
    if let Some(bb) = top_box {
        if disjunction_seen {
            return Err(unsupported("region box combined with a region disjunction"));
        }
        ast.regions.push(bb.finish()?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const REGION_QUERY: &str = "SELECT * WHERE { ?s :lat ?lat; :lon ?lon. FILTER(?lat >= -10 && ?lat <= 10 && ?lon >= 20 && ?lon <= 40) }";

    #[test]
    fn region_query_parses() {
        let ast = parse_sparql(REGION_QUERY).unwrap();
        assert_eq!(ast.regions.len(), 1);
        let r = ast.regions[0];
        assert_eq!((r.north(), r.west(), r.south(), r.east()), (10.0, 20.0, -10.0, 40.0));
        assert!(ast.predicates.is_empty());
        assert_eq!(ast.projection, Projection::All);
    }

    #[test]
    fn canonical_emission_golden() {
        let ast = parse_sparql(REGION_QUERY).unwrap();
        assert_eq!(
            emit_sparql(&ast).text,
            "SELECT * WHERE { ?s :lat ?lat ; :lon ?lon . FILTER(?lat >= -10 && ?lat <= 10 && ?lon >= 20 && ?lon <= 40) }"
        );
    }

    #[test]
    fn empty_pattern_is_syntax_error() {
        assert!(matches!(
            parse_sparql("SELECT * WHERE { }"),
            Err(QueryError::Syntax { .. })
        ));
    }

    #[test]
    fn group_by_unsupported() {
        let q = "SELECT ?type WHERE { ?s :lat ?lat ; :lon ?lon ; :type ?type } GROUP BY ?type";
        assert_eq!(
            parse_sparql(q),
            Err(QueryError::UnsupportedFeature("GROUP BY".into()))
        );
    }

    #[test]
    fn unsupported_constructs_rejected() {
        for (q, name) in [
            ("SELECT * WHERE { ?s :lat ?lat ; :lon ?lon OPTIONAL { ?s :x ?x } }", "OPTIONAL"),
            ("SELECT DISTINCT * WHERE { ?s :lat ?lat ; :lon ?lon }", "DISTINCT"),
            ("SELECT * WHERE { ?s :lat ?lat ; :lon ?lon } ORDER BY ?lat", "ORDER BY"),
            ("SELECT * WHERE { ?s :lat ?lat ; :lon/:x ?lon }", "property paths"),
        ] {
            assert_eq!(
                parse_sparql(q),
                Err(QueryError::UnsupportedFeature(name.into())),
                "{q}"
            );
        }
    }

    #[test]
    fn predicates_and_projection() {
        let q = r#"PREFIX : <urn:x#>
            SELECT ?s ?n WHERE { ?s :lat ?lat ; :lon ?lon ; :name ?n ; :speed_kn ?v .
            FILTER(CONTAINS(?n, "o\"b") && 12.5 < ?v) } LIMIT 5"#;
        let ast = parse_sparql(q).unwrap();
        assert_eq!(ast.limit, Some(5));
        assert_eq!(ast.projection, Projection::Attrs(vec!["name".into()]));
        assert_eq!(
            ast.predicates,
            vec![
                Predicate::new("name", CompareOp::Contains, Value::Str("o\"b".into())),
                Predicate::new("speed_kn", CompareOp::Gt, Value::Num(12.5)),
            ]
        );
        assert!(ast.regions.is_empty());
        let back = parse_sparql(&emit_sparql(&ast).text).unwrap();
        assert_eq!(back, ast.canonicalize());
    }

    #[test]
    fn region_disjunction_and_time() {
        let q = r#"SELECT * WHERE { ?s :lat ?lat ; :lon ?lon ; :ts ?t .
            FILTER((?lat >= 0 && ?lat <= 1 && ?lon >= 0 && ?lon <= 1) || (?lat >= 5 && ?lat <= 6 && ?lon >= 5 && ?lon <= 6))
            FILTER(?t >= "2024-01-01T00:00:00Z"^^xsd:dateTime) }"#;
        let ast = parse_sparql(q).unwrap();
        assert_eq!(ast.regions.len(), 2);
        assert!(matches!(ast.predicates[0].value, Value::Time(_)));
        let text = emit_sparql(&ast).text;
        assert_eq!(parse_sparql(&text).unwrap(), ast.canonicalize());
    }

    #[test]
    fn positions_point_at_offender() {
        let q = "SELECT * WHERE { ?s :lat ?lat ; :lon ?lon . FILTER(?lat >= ) }";
        let err = parse_sparql(q).unwrap_err();
        assert_eq!(err.position(), Some(q.find(") }").unwrap()));
    }

    #[test]
    fn open_bounds_rejected() {
        let q = "SELECT * WHERE { ?s :lat ?lat ; :lon ?lon . FILTER(?lat >= 3) }";
        assert!(matches!(
            parse_sparql(q),
            Err(QueryError::UnsupportedFeature(_))
        ));
    }

    #[test]
    fn deep_nesting_is_an_error_not_a_crash() {
        let q = format!(
            "SELECT * WHERE {{ ?s :lat ?lat ; :lon ?lon . FILTER({}?lat >= 1{}) }}",
            "(".repeat(10_000),
            ")".repeat(10_000)
        );
        assert!(parse_sparql(&q).is_err());
    }

    #[test]
    fn subject_name_avoids_attribute_clash() {
        let ast = QueryAst {
            predicates: vec![Predicate::new("s", CompareOp::Eq, Value::Num(1.0))],
            ..Default::default()
        };
        let text = emit_sparql(&ast).text;
        assert!(text.contains("?s_ :lat"), "{text}");
        assert_eq!(parse_sparql(&text).unwrap(), ast);
    }
}
