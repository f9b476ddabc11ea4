//! The rule language: predicate declarations plus weighted / hard horn clauses.
//!
//! ```text
//! program := (decl | rule)*
//! decl    := "pred" NAME "/" INT ("closed" | "open")
//! rule    := tag ":" clause "."
//! tag     := "hard" | "scored(" NAME ")" | FLOAT | "weight" "=" FLOAT
//! clause  := literal ("&" literal)* "=>" literal
//! literal := "~"? NAME "(" term ("," term)* ")"
//! term    := VARIABLE | CONSTANT
//! ```
//!
//! Variables start with a lowercase letter. Constants are capitalized identifiers
//! (`CareHarm`, `Left`) or double-quoted strings (`"aca"`). `#` and `//` start
//! line comments.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::kb::{Const, Ideology, Predicate, PredicateSchema, Sort};
use crate::taxonomy::{MoralFoundation, MoralRole, Polarity};

/// Default source of the joint model: local text and context scorers,
/// MF/role consistency, the per-tweet role-exclusion soft constraint, and
/// polarity coupling across same-party, same-topic mentions.
pub const DEFAULT_PROGRAM: &str = include_str!("../programs/joint.rules");

/// Prior-driven variant with scalar rule weights (for perceptron learning).
pub const PRIOR_PROGRAM: &str = include_str!("../programs/priors.rules");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Var(String),
    /// Capitalized identifier.
    Name(String),
    /// Quoted string.
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Literal {
    pub negated: bool,
    pub predicate: String,
    pub args: Vec<Term>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleKind {
    Hard,
    /// Weight produced by the named scorer for each grounding.
    Scored(String),
    /// Single learned weight, seeded with the given value.
    Scalar(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleTemplate {
    pub kind: RuleKind,
    pub body: Vec<Literal>,
    pub head: Literal,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decl {
    pub name: String,
    pub arity: usize,
    pub closed: bool,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub decls: Vec<Decl>,
    pub rules: Vec<RuleTemplate>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    LParen,
    RParen,
    Comma,
    Dot,
    Colon,
    Amp,
    Tilde,
    Slash,
    Arrow,
    Eq,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Str(s) => write!(f, "\"{s}\""),
            Tok::Num(n) => write!(f, "{n}"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Amp => f.write_str("`&`"),
            Tok::Tilde => f.write_str("`~`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::Arrow => f.write_str("`=>`"),
            Tok::Eq => f.write_str("`=`"),
        }
    }
}

fn syntax(pos: Pos, message: impl Into<String>) -> Error {
    Error::Syntax {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, Pos)>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(1, &mut i, &mut col),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' | ')' | ',' | ':' | '&' | '~' | '/' => {
                let t = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    ':' => Tok::Colon,
                    '&' => Tok::Amp,
                    '~' => Tok::Tilde,
                    _ => Tok::Slash,
                };
                out.push((t, pos));
                advance(1, &mut i, &mut col);
            }
            '.' => {
                out.push((Tok::Dot, pos));
                advance(1, &mut i, &mut col);
            }
            '=' => {
                if chars.get(i + 1) == Some(&'>') {
                    out.push((Tok::Arrow, pos));
                    advance(2, &mut i, &mut col);
                } else {
                    out.push((Tok::Eq, pos));
                    advance(1, &mut i, &mut col);
                }
            }
            '"' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != '"' && chars[j] != '\n' {
                    j += 1;
                }
                if j >= chars.len() || chars[j] != '"' {
                    return Err(syntax(pos, "unterminated string"));
                }
                let s: String = chars[start..j].iter().collect();
                out.push((Tok::Str(s), pos));
                let n = j + 1 - i;
                advance(n, &mut i, &mut col);
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let mut j = i + 1;
                while j < chars.len()
                    && (chars[j].is_ascii_digit()
                        || (chars[j] == '.' && chars.get(j + 1).is_some_and(|d| d.is_ascii_digit()))
                        || ((chars[j] == 'e' || chars[j] == 'E')
                            && chars
                                .get(j + 1)
                                .is_some_and(|d| d.is_ascii_digit() || *d == '-' || *d == '+'))
                        || ((chars[j] == '-' || chars[j] == '+') && matches!(chars[j - 1], 'e' | 'E')))
                {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                let n: f64 = s.parse().map_err(|_| syntax(pos, format!("bad number `{s}`")))?;
                out.push((Tok::Num(n), pos));
                let len = j - i;
                advance(len, &mut i, &mut col);
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                out.push((Tok::Ident(s), pos));
                let len = j - i;
                advance(len, &mut i, &mut col);
            }
            other => return Err(syntax(pos, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    end: Pos,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.at).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<(Tok, Pos)> {
        let t = self.toks.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<Pos> {
        let pos = self.pos();
        match self.next() {
            Some((t, p)) if t == want => Ok(p),
            Some((t, _)) => Err(syntax(pos, format!("expected {want}, found {t}"))),
            None => Err(syntax(pos, format!("expected {want}, found end of input"))),
        }
    }

    fn ident(&mut self) -> Result<(String, Pos)> {
        let pos = self.pos();
        match self.next() {
            Some((Tok::Ident(s), p)) => Ok((s, p)),
            Some((t, _)) => Err(syntax(pos, format!("expected a name, found {t}"))),
            None => Err(syntax(pos, "expected a name, found end of input")),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let pos = self.pos();
        match self.next() {
            Some((Tok::Num(n), _)) => Ok(n),
            Some((t, _)) => Err(syntax(pos, format!("expected a number, found {t}"))),
            None => Err(syntax(pos, "expected a number, found end of input")),
        }
    }

    fn decl(&mut self) -> Result<Decl> {
        let (_, pos) = self.ident()?; // "pred"
        let (name, _) = self.ident()?;
        self.expect(Tok::Slash)?;
        let npos = self.pos();
        let arity = self.number()?;
        if arity < 1.0 || arity.fract() != 0.0 {
            return Err(syntax(npos, format!("arity must be a positive integer, got {arity}")));
        }
        let (kw, kpos) = self.ident()?;
        let closed = match kw.as_str() {
            "closed" => true,
            "open" => false,
            _ => return Err(syntax(kpos, format!("expected `closed` or `open`, found `{kw}`"))),
        };
        Ok(Decl {
            name,
            arity: arity as usize,
            closed,
            pos,
        })
    }

    fn tag(&mut self) -> Result<RuleKind> {
        let pos = self.pos();
        match self.peek() {
            Some(Tok::Num(_)) => Ok(RuleKind::Scalar(self.number()?)),
            Some(Tok::Ident(s)) if s == "hard" => {
                self.next();
                Ok(RuleKind::Hard)
            }
            Some(Tok::Ident(s)) if s == "scored" => {
                self.next();
                self.expect(Tok::LParen)?;
                let (name, _) = self.ident()?;
                self.expect(Tok::RParen)?;
                Ok(RuleKind::Scored(name))
            }
            Some(Tok::Ident(s)) if s == "weight" => {
                self.next();
                self.expect(Tok::Eq)?;
                Ok(RuleKind::Scalar(self.number()?))
            }
            Some(t) => Err(syntax(
                pos,
                format!("expected a rule tag (hard, scored(..), or a weight), found {t}"),
            )),
            None => Err(syntax(pos, "unexpected end of input")),
        }
    }

    fn term(&mut self) -> Result<Term> {
        let pos = self.pos();
        match self.next() {
            Some((Tok::Ident(s), _)) => {
                if s.chars().next().is_some_and(|c| c.is_lowercase()) {
                    Ok(Term::Var(s))
                } else {
                    Ok(Term::Name(s))
                }
            }
            Some((Tok::Str(s), _)) => Ok(Term::Str(s)),
            Some((t, _)) => Err(syntax(pos, format!("expected a term, found {t}"))),
            None => Err(syntax(pos, "expected a term, found end of input")),
        }
    }

    fn literal(&mut self) -> Result<Literal> {
        let pos = self.pos();
        let negated = if self.peek() == Some(&Tok::Tilde) {
            self.next();
            true
        } else {
            false
        };
        let (predicate, _) = self.ident()?;
        self.expect(Tok::LParen)?;
        let mut args = vec![self.term()?];
        loop {
            let p = self.pos();
            match self.next() {
                Some((Tok::Comma, _)) => args.push(self.term()?),
                Some((Tok::RParen, _)) => break,
                Some((t, _)) => return Err(syntax(p, format!("expected `,` or `)`, found {t}"))),
                None => return Err(syntax(p, "expected `,` or `)`, found end of input")),
            }
        }
        Ok(Literal {
            negated,
            predicate,
            args,
            pos,
        })
    }

    fn rule(&mut self) -> Result<RuleTemplate> {
        let pos = self.pos();
        let kind = self.tag()?;
        self.expect(Tok::Colon)?;
        let mut body = vec![self.literal()?];
        loop {
            let p = self.pos();
            match self.next() {
                Some((Tok::Amp, _)) => body.push(self.literal()?),
                Some((Tok::Arrow, _)) => break,
                Some((t, _)) => return Err(syntax(p, format!("expected `&` or `=>`, found {t}"))),
                None => return Err(syntax(p, "expected `&` or `=>`, found end of input")),
            }
        }
        let head = self.literal()?;
        self.expect(Tok::Dot)?;
        Ok(RuleTemplate { kind, body, head, pos })
    }
}

/// Parse rule-language source into a [`Program`].
///
/// Besides syntax this checks that every predicate is declared with a matching
/// arity, that only head literals are negated, and that head variables are
/// either bound in the body or range over a label sort.
pub fn parse_program(source: &str) -> Result<Program> {
    let toks = lex(source)?;
    let end = {
        let line = source.lines().count().max(1);
        let column = source.lines().last().map(|l| l.chars().count() + 1).unwrap_or(1);
        Pos { line, column }
    };
    let mut p = Parser { toks, at: 0, end };
    let mut program = Program::default();
    while p.peek().is_some() {
        match p.peek() {
            Some(Tok::Ident(s)) if s == "pred" => {
                let d = p.decl()?;
                if program.decls.iter().any(|x| x.name == d.name) {
                    return Err(syntax(d.pos, format!("predicate `{}` declared twice", d.name)));
                }
                program.decls.push(d);
            }
            _ => program.rules.push(p.rule()?),
        }
    }
    for rule in &program.rules {
        check_rule_shape(&program.decls, rule)?;
    }
    Ok(program)
}

fn check_rule_shape(decls: &[Decl], rule: &RuleTemplate) -> Result<()> {
    for lit in rule.body.iter().chain(std::iter::once(&rule.head)) {
        let decl = decls
            .iter()
            .find(|d| d.name == lit.predicate)
            .ok_or_else(|| Error::Validation {
                line: lit.pos.line,
                message: format!("undeclared predicate `{}`", lit.predicate),
            })?;
        if decl.arity != lit.args.len() {
            return Err(Error::Validation {
                line: lit.pos.line,
                message: format!(
                    "`{}` declared with arity {} but used with {} arguments",
                    lit.predicate,
                    decl.arity,
                    lit.args.len()
                ),
            });
        }
    }
    if let Some(neg) = rule.body.iter().find(|l| l.negated) {
        return Err(Error::Validation {
            line: neg.pos.line,
            message: format!(
                "negation is only allowed on the head, found `~{}` in the body",
                neg.predicate
            ),
        });
    }
    for (i, arg) in rule.head.args.iter().enumerate() {
        let Term::Var(v) = arg else { continue };
        let in_body = rule
            .body
            .iter()
            .any(|l| l.args.iter().any(|a| matches!(a, Term::Var(w) if w == v)));
        let label = Predicate::by_name(&rule.head.predicate)
            .and_then(|p| p.schema().sorts.get(i).copied())
            .is_some_and(Sort::is_label);
        if !in_body && !label {
            return Err(Error::Validation {
                line: rule.head.pos.line,
                message: format!("unsafe variable `{v}`: appears in the head but not in the body"),
            });
        }
    }
    Ok(())
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(s) | Term::Name(s) => f.write_str(s),
            Term::Str(s) => write!(f, "\"{s}\""),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("~")?;
        }
        write!(f, "{}(", self.predicate)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for RuleTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            RuleKind::Hard => f.write_str("hard")?,
            RuleKind::Scored(s) => write!(f, "scored({s})")?,
            RuleKind::Scalar(w) => write!(f, "{w:?}")?,
        }
        f.write_str(": ")?;
        for (i, l) in self.body.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, " => {}.", self.head)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.decls {
            writeln!(
                f,
                "pred {}/{} {}",
                d.name,
                d.arity,
                if d.closed { "closed" } else { "open" }
            )?;
        }
        if !self.decls.is_empty() && !self.rules.is_empty() {
            writeln!(f)?;
        }
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Validation

/// A resolved argument: a rule variable, a label constant, or a symbol that is
/// interned against the knowledge base at grounding time.
#[derive(Debug, Clone, PartialEq)]
pub enum CTerm {
    Var(usize),
    Fixed(Const),
    Symbol(Sort, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CLiteral {
    pub predicate: Predicate,
    pub negated: bool,
    pub args: Vec<CTerm>,
}

/// Structural role of a template in the morality-frame model; used by ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateClass {
    /// Tweet ⇒ MF.
    MfText,
    /// Tweet ∧ Ideo ∧ Topic ⇒ MF.
    MfContext,
    /// Tweet ∧ Ent ⇒ Role.
    RoleText,
    /// Tweet ∧ Ideo ∧ Topic ∧ Ent ⇒ Role.
    RoleContext,
    /// Ent ∧ Role ∧ MF_Role ⇒ MF.
    Consistency,
    /// Role(t,e1,r) ⇒ ¬Role(t,e2,r).
    Exclusion,
    /// Same-party, same-topic polarity agreement.
    PolarityCoupling,
    /// Prior(t,x) ⇒ Label(t,x).
    Prior,
    Other,
}

/// A polarity-agreement template, grounded as per-polarity equalities.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarityCoupling {
    pub same_ideology: bool,
    pub same_topic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub index: usize,
    pub line: usize,
    pub kind: RuleKind,
    pub vars: Vec<(String, Sort)>,
    pub body: Vec<CLiteral>,
    pub head: CLiteral,
    pub class: TemplateClass,
    pub coupling: Option<PolarityCoupling>,
    /// Pretty-printed source clause.
    pub text: String,
}

impl Template {
    pub fn is_hard(&self) -> bool {
        self.kind == RuleKind::Hard
    }

    pub fn scorer(&self) -> Option<&str> {
        match &self.kind {
            RuleKind::Scored(s) => Some(s),
            _ => None,
        }
    }

    pub fn body_has(&self, p: Predicate) -> bool {
        self.body.iter().any(|l| l.predicate == p)
    }

    /// Every body literal is closed, so each grounding's body is a constant.
    pub fn body_observed(&self) -> bool {
        self.body.iter().all(|l| !l.predicate.is_open())
    }
}

/// A validated program ready for grounding.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckedProgram {
    pub source: Program,
    pub templates: Vec<Template>,
}

impl CheckedProgram {
    /// Keep only templates accepted by `keep`; indices are preserved.
    pub fn filtered(&self, keep: impl Fn(&Template) -> bool) -> CheckedProgram {
        CheckedProgram {
            source: self.source.clone(),
            templates: self.templates.iter().filter(|t| keep(t)).cloned().collect(),
        }
    }

    pub fn has_class(&self, class: TemplateClass) -> bool {
        self.templates.iter().any(|t| t.class == class)
    }

    pub fn scorer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .templates
            .iter()
            .filter_map(|t| t.scorer().map(String::from))
            .collect();
        names.sort();
        names.dedup();
        names
    }
}

fn resolve_fixed(sort: Sort, text: &str, line: usize) -> Result<CTerm> {
    let bad = |e: Error| Error::Validation {
        line,
        message: format!("constant `{text}` is not a valid {sort:?}: {e}"),
    };
    Ok(match sort {
        Sort::MfLabel => CTerm::Fixed(Const::Mf(text.parse::<MoralFoundation>().map_err(bad)?)),
        Sort::RoleLabel => CTerm::Fixed(Const::Role(text.parse::<MoralRole>().map_err(bad)?)),
        Sort::Ideology => CTerm::Fixed(Const::Ideology(text.parse::<Ideology>().map_err(bad)?)),
        Sort::Polarity => CTerm::Fixed(Const::Polarity(text.parse::<Polarity>().map_err(bad)?)),
        Sort::Tweet | Sort::Topic => CTerm::Symbol(sort, text.to_string()),
        Sort::Entity => CTerm::Symbol(sort, crate::kb::entity_key(text)),
    })
}

fn classify(t: &Template) -> TemplateClass {
    let head = t.head.predicate;
    if t.coupling.is_some() {
        return TemplateClass::PolarityCoupling;
    }
    if head == Predicate::Mf && !t.head.negated && t.body_has(Predicate::MfRole) && t.body_has(Predicate::Role) {
        return TemplateClass::Consistency;
    }
    if head == Predicate::Role && t.head.negated && t.body_has(Predicate::Role) {
        return TemplateClass::Exclusion;
    }
    if t.body_has(Predicate::PriorMf) || t.body_has(Predicate::PriorRole) {
        return TemplateClass::Prior;
    }
    if !t.head.negated && t.body_observed() {
        let context = t.body_has(Predicate::Ideo) || t.body_has(Predicate::Topic);
        match (head, context) {
            (Predicate::Mf, false) => return TemplateClass::MfText,
            (Predicate::Mf, true) => return TemplateClass::MfContext,
            (Predicate::Role, false) => return TemplateClass::RoleText,
            (Predicate::Role, true) => return TemplateClass::RoleContext,
            _ => {}
        }
    }
    TemplateClass::Other
}

/// Detect `... Role(t1,e,r1) & Role(t2,e,r2) => SamePolarity(r1,r2)`.
fn detect_coupling(t: &Template) -> Option<PolarityCoupling> {
    if t.head.predicate != Predicate::SamePolarity || t.head.negated {
        return None;
    }
    let (CTerm::Var(r1), CTerm::Var(r2)) = (&t.head.args[0], &t.head.args[1]) else {
        return None;
    };
    let roles: Vec<&CLiteral> = t.body.iter().filter(|l| l.predicate == Predicate::Role).collect();
    if roles.len() != 2 {
        return None;
    }
    let (a, b) = (roles[0], roles[1]);
    let ok = a.args[1] == b.args[1]
        && a.args[0] != b.args[0]
        && ((a.args[2] == CTerm::Var(*r1) && b.args[2] == CTerm::Var(*r2))
            || (a.args[2] == CTerm::Var(*r2) && b.args[2] == CTerm::Var(*r1)));
    ok.then(|| PolarityCoupling {
        same_ideology: t.body_has(Predicate::SameIdeo),
        same_topic: t.body_has(Predicate::SameTopic),
    })
}

/// Resolve a parsed program against the relational schema.
pub fn validate(program: &Program, schema: &[PredicateSchema]) -> Result<CheckedProgram> {
    let lookup = |name: &str, line: usize| -> Result<&PredicateSchema> {
        schema.iter().find(|s| s.name == name).ok_or_else(|| Error::Validation {
            line,
            message: format!("predicate `{name}` is not part of the schema"),
        })
    };
    for d in &program.decls {
        let s = lookup(&d.name, d.pos.line)?;
        if s.arity() != d.arity {
            return Err(Error::Validation {
                line: d.pos.line,
                message: format!(
                    "`{}` has arity {} in the schema, declared {}",
                    d.name,
                    s.arity(),
                    d.arity
                ),
            });
        }
        if s.closed != d.closed {
            return Err(Error::Validation {
                line: d.pos.line,
                message: format!(
                    "`{}` is {} in the schema but declared {}",
                    d.name,
                    if s.closed { "closed" } else { "open" },
                    if d.closed { "closed" } else { "open" }
                ),
            });
        }
    }

    let mut templates = Vec::with_capacity(program.rules.len());
    for (index, rule) in program.rules.iter().enumerate() {
        check_rule_shape(&program.decls, rule)?;
        let line = rule.pos.line;
        let mut vars: Vec<(String, Sort)> = Vec::new();
        let mut resolve = |lit: &Literal| -> Result<CLiteral> {
            let s = lookup(&lit.predicate, lit.pos.line)?;
            let mut args = Vec::with_capacity(lit.args.len());
            for (term, &sort) in lit.args.iter().zip(s.sorts) {
                args.push(match term {
                    Term::Var(v) => match vars.iter().position(|(n, _)| n == v) {
                        Some(i) if vars[i].1 != sort => {
                            return Err(Error::Validation {
                                line: lit.pos.line,
                                message: format!("variable `{v}` used as both {:?} and {sort:?}", vars[i].1),
                            })
                        }
                        Some(i) => CTerm::Var(i),
                        None => {
                            vars.push((v.clone(), sort));
                            CTerm::Var(vars.len() - 1)
                        }
                    },
                    Term::Name(c) | Term::Str(c) => resolve_fixed(sort, c, lit.pos.line)?,
                });
            }
            Ok(CLiteral {
                predicate: s.predicate,
                negated: lit.negated,
                args,
            })
        };
        let body = rule.body.iter().map(&mut resolve).collect::<Result<Vec<_>>>()?;
        let head = resolve(&rule.head)?;

        if let RuleKind::Scored(name) = &rule.kind {
            if !head.predicate.is_open() {
                return Err(Error::Validation {
                    line,
                    message: format!("scored rule `{name}` has closed head `{}`", head.predicate.name()),
                });
            }
        }
        if head.negated && !head.predicate.is_open() {
            return Err(Error::Validation {
                line,
                message: format!("negated head on observed predicate `{}`", head.predicate.name()),
            });
        }
        // Object-sorted variables must be bound by a closed body literal.
        for (vi, (name, sort)) in vars.iter().enumerate() {
            if sort.is_label() {
                continue;
            }
            let bound = body
                .iter()
                .any(|l| !l.predicate.is_open() && l.args.contains(&CTerm::Var(vi)));
            if !bound {
                return Err(Error::Validation {
                    line,
                    message: format!("unsafe variable `{name}`: no closed body literal binds it"),
                });
            }
        }

        let mut t = Template {
            index,
            line,
            kind: rule.kind.clone(),
            vars,
            body,
            head,
            class: TemplateClass::Other,
            coupling: None,
            text: rule.to_string(),
        };
        t.coupling = detect_coupling(&t);
        if t.head.predicate == Predicate::SamePolarity && t.coupling.is_none() {
            return Err(Error::Validation {
                line,
                message: "SamePolarity head requires two Role literals over one entity in different tweets".into(),
            });
        }
        t.class = classify(&t);
        templates.push(t);
    }
    Ok(CheckedProgram {
        source: program.clone(),
        templates,
    })
}

/// Parse and validate against the built-in schema.
pub fn compile(source: &str) -> Result<CheckedProgram> {
    validate(&parse_program(source)?, crate::kb::schema())
}

/// Per-template scalar seed weights, keyed by template index.
pub fn scalar_seeds(program: &CheckedProgram) -> BTreeMap<usize, f64> {
    program
        .templates
        .iter()
        .filter_map(|t| match t.kind {
            RuleKind::Scalar(w) => Some((t.index, w)),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::schema;

    const DECLS: &str =
        "pred Tweet/1 closed\npred Ent/2 closed\npred MF/2 open\npred Role/3 open\npred MF_Role/2 closed\n";

    #[test]
    fn parses_r1_shape() {
        let p = parse_program(&format!("{DECLS}scored(mf): Tweet(t) => MF(t,m).")).unwrap();
        assert_eq!(p.rules.len(), 1);
        assert_eq!(p.rules[0].body.len(), 1);
        assert_eq!(p.rules[0].kind, RuleKind::Scored("mf".into()));
    }

    #[test]
    fn parses_hard_c1() {
        let p = parse_program(&format!(
            "{DECLS}hard: Ent(t,e) & Role(t,e,r) & MF_Role(m,r) => MF(t,m)."
        ))
        .unwrap();
        assert_eq!(p.rules[0].kind, RuleKind::Hard);
        assert_eq!(p.rules[0].body.len(), 3);
    }

    #[test]
    fn missing_comma_reports_position() {
        let err = parse_program(&format!("{DECLS}scored(mf): Tweet(t) => MF(t m).")).unwrap_err();
        match err {
            Error::Syntax { line, column, .. } => {
                assert_eq!(line, 6);
                assert_eq!(column, 30);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors() {
        let undeclared = parse_program("scored(x): Tweet(t) => MF(t,m).").unwrap_err();
        assert!(undeclared.to_string().contains("undeclared"), "{undeclared}");
        let arity = parse_program(&format!("{DECLS}scored(x): Tweet(t,u) => MF(t,m).")).unwrap_err();
        assert!(arity.to_string().contains("arity"), "{arity}");
        let unsafe_var = parse_program(&format!("{DECLS}scored(x): Tweet(t) => Role(t,e,r).")).unwrap_err();
        assert!(unsafe_var.to_string().contains("unsafe"), "{unsafe_var}");
        let neg_body = parse_program(&format!("{DECLS}hard: ~Tweet(t) => MF(t,m).")).unwrap_err();
        assert!(neg_body.to_string().contains("negation"), "{neg_body}");
    }

    #[test]
    fn weight_annotation_seeds_scalar() {
        let p = parse_program(&format!(
            "{DECLS}weight = 0.25: Tweet(t) => MF(t,m).\n2: Tweet(t) => MF(t,m)."
        ))
        .unwrap();
        assert_eq!(p.rules[0].kind, RuleKind::Scalar(0.25));
        assert_eq!(p.rules[1].kind, RuleKind::Scalar(2.0));
    }

    #[test]
    fn default_programs_validate() {
        let p = compile(DEFAULT_PROGRAM).unwrap();
        let classes: Vec<TemplateClass> = p.templates.iter().map(|t| t.class).collect();
        assert_eq!(
            classes,
            vec![
                TemplateClass::MfText,
                TemplateClass::RoleText,
                TemplateClass::MfContext,
                TemplateClass::RoleContext,
                TemplateClass::Consistency,
                TemplateClass::Exclusion,
                TemplateClass::PolarityCoupling,
            ]
        );
        let c3 = &p.templates[6];
        assert_eq!(
            c3.coupling,
            Some(PolarityCoupling {
                same_ideology: true,
                same_topic: true
            })
        );
        let q = compile(PRIOR_PROGRAM).unwrap();
        assert!(q.has_class(TemplateClass::Prior));
        assert!(q.has_class(TemplateClass::Consistency));
    }

    #[test]
    fn validation_errors() {
        let closed_head = compile("pred Tweet/1 closed\nscored(x): Tweet(t) => Tweet(t).").unwrap_err();
        assert!(closed_head.to_string().contains("closed head"), "{closed_head}");
        let neg_obs = compile("pred Tweet/1 closed\npred Ent/2 closed\nhard: Tweet(t) => ~Ent(t,\"x\").").unwrap_err();
        assert!(neg_obs.to_string().contains("negated head"), "{neg_obs}");
        let c3_missing = "pred SameIdeo/2 closed\npred Ent/2 closed\npred Role/3 open\npred SamePolarity/2 closed\n\
            hard: SameIdeo(t1,t2) & SameTopic(t1,t2) & Ent(t1,e) & Ent(t2,e) & Role(t1,e,r1) & Role(t2,e,r2) => SamePolarity(r1,r2).";
        assert!(compile(c3_missing).is_err());
        let bad_decl = validate(&parse_program("pred MF/2 closed\n").unwrap(), schema()).unwrap_err();
        assert!(bad_decl.to_string().contains("open in the schema"), "{bad_decl}");
        let unknown = validate(&parse_program("pred Foo/1 closed\n").unwrap(), schema()).unwrap_err();
        assert!(unknown.to_string().contains("not part of the schema"));
        let bad_const =
            compile("pred Tweet/1 closed\npred MF/2 open\nscored(x): Tweet(t) => MF(t, Nope).").unwrap_err();
        assert!(bad_const.to_string().contains("not a valid"), "{bad_const}");
    }

    #[test]
    fn round_trip_default_program() {
        let p = parse_program(DEFAULT_PROGRAM).unwrap();
        let printed = p.to_string();
        let q = parse_program(&printed).unwrap();
        assert_eq!(printed, q.to_string());
        assert_eq!(p.rules.len(), q.rules.len());
    }

    #[test]
    fn validation_is_deterministic() {
        assert_eq!(compile(DEFAULT_PROGRAM).unwrap(), compile(DEFAULT_PROGRAM).unwrap());
    }
}
