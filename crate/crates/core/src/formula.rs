//! Propositional safety formulas over atomic propositions.
//!
//! Grammar, lowest to highest precedence:
//!
//! ```text
//! expr  := impl
//! impl  := or ("->" impl)?          right-associative
//! or    := and ("|" and)*           left-associative
//! and   := unary ("&" unary)*       left-associative
//! unary := "!" unary | "(" expr ")" | atom | "true" | "false"
//! atom  := [a-z0-9_-]+
//! ```
//!
//! Whitespace is insignificant. Atoms that are not present in a label set
//! evaluate to false, so evaluation is total.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// An atomic proposition name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom(String);

/// The set of atoms that hold in a state.
pub type LabelSet = BTreeSet<Atom>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AtomError {
    #[error("atom name is empty")]
    Empty,
    #[error("atom `{0}` contains a character outside [a-z0-9_-]")]
    InvalidChar(String),
    #[error("`{0}` is a reserved word")]
    Reserved(String),
}

fn is_atom_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-'
}

impl Atom {
    pub fn new(name: impl Into<String>) -> Result<Self, AtomError> {
        let name = name.into();
        if name.is_empty() {
            return Err(AtomError::Empty);
        }
        if !name.chars().all(is_atom_char) || name.contains("->") {
            return Err(AtomError::InvalidChar(name));
        }
        if name == "true" || name == "false" {
            return Err(AtomError::Reserved(name));
        }
        Ok(Atom(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Builds a label set from atom names, rejecting invalid names.
pub fn label_set<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<LabelSet, AtomError> {
    names.into_iter().map(Atom::new).collect()
}

/// Abstract syntax of a propositional safety formula.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SafetyFormula {
    True,
    False,
    Atom(Atom),
    Not(Box<SafetyFormula>),
    And(Box<SafetyFormula>, Box<SafetyFormula>),
    Or(Box<SafetyFormula>, Box<SafetyFormula>),
    Implies(Box<SafetyFormula>, Box<SafetyFormula>),
}

impl SafetyFormula {
    pub fn atom(name: &str) -> Result<Self, AtomError> {
        Atom::new(name).map(SafetyFormula::Atom)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(child: SafetyFormula) -> Self {
        SafetyFormula::Not(Box::new(child))
    }

    pub fn and(left: SafetyFormula, right: SafetyFormula) -> Self {
        SafetyFormula::And(Box::new(left), Box::new(right))
    }

    pub fn or(left: SafetyFormula, right: SafetyFormula) -> Self {
        SafetyFormula::Or(Box::new(left), Box::new(right))
    }

    pub fn implies(left: SafetyFormula, right: SafetyFormula) -> Self {
        SafetyFormula::Implies(Box::new(left), Box::new(right))
    }

    /// Classical evaluation where an atom holds iff it is in `labels`.
    pub fn eval(&self, labels: &LabelSet) -> bool {
        self.eval_with(&|a| labels.contains(a))
    }

    /// Evaluation against an arbitrary atom valuation.
    pub fn eval_with(&self, holds: &dyn Fn(&Atom) -> bool) -> bool {
        match self {
            SafetyFormula::True => true,
            SafetyFormula::False => false,
            SafetyFormula::Atom(a) => holds(a),
            SafetyFormula::Not(c) => !c.eval_with(holds),
            SafetyFormula::And(l, r) => l.eval_with(holds) && r.eval_with(holds),
            SafetyFormula::Or(l, r) => l.eval_with(holds) || r.eval_with(holds),
            SafetyFormula::Implies(l, r) => !l.eval_with(holds) || r.eval_with(holds),
        }
    }

    /// All atoms mentioned by the formula, sorted and deduplicated.
    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<Atom>) {
        match self {
            SafetyFormula::True | SafetyFormula::False => {}
            SafetyFormula::Atom(a) => {
                out.insert(a.clone());
            }
            SafetyFormula::Not(c) => c.collect_atoms(out),
            SafetyFormula::And(l, r) | SafetyFormula::Or(l, r) | SafetyFormula::Implies(l, r) => {
                l.collect_atoms(out);
                r.collect_atoms(out);
            }
        }
    }

    /// Atoms used by the formula that are missing from `universe`.
    ///
    /// Evaluation never fails on these (they are simply false); this is the
    /// lint that surfaces likely typos.
    pub fn undeclared_atoms(&self, universe: &[Atom]) -> Vec<Atom> {
        self.atoms().into_iter().filter(|a| !universe.contains(a)).collect()
    }

    fn precedence(&self) -> u8 {
        match self {
            SafetyFormula::Implies(..) => 1,
            SafetyFormula::Or(..) => 2,
            SafetyFormula::And(..) => 3,
            _ => 4,
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for SafetyFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SafetyFormula::True => f.write_str("true"),
            SafetyFormula::False => f.write_str("false"),
            SafetyFormula::Atom(a) => write!(f, "{a}"),
            SafetyFormula::Not(c) => {
                f.write_str("!")?;
                c.fmt_child(f, 4)
            }
            SafetyFormula::And(l, r) => {
                l.fmt_child(f, 3)?;
                f.write_str(" & ")?;
                r.fmt_child(f, 4)
            }
            SafetyFormula::Or(l, r) => {
                l.fmt_child(f, 2)?;
                f.write_str(" | ")?;
                r.fmt_child(f, 3)
            }
            SafetyFormula::Implies(l, r) => {
                l.fmt_child(f, 2)?;
                f.write_str(" -> ")?;
                r.fmt_child(f, 1)
            }
        }
    }
}

impl std::str::FromStr for SafetyFormula {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_formula(s)
    }
}

/// Syntax error with the byte offset where parsing stopped.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at byte {offset}: expected {}, found {found}", expected.join(" or "))]
pub struct ParseError {
    pub offset: usize,
    pub expected: Vec<&'static str>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Not,
    And,
    Or,
    Arrow,
    LParen,
    RParen,
    True,
    False,
    Ident(String),
    End,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Not => "`!`".into(),
            Token::And => "`&`".into(),
            Token::Or => "`|`".into(),
            Token::Arrow => "`->`".into(),
            Token::LParen => "`(`".into(),
            Token::RParen => "`)`".into(),
            Token::True => "`true`".into(),
            Token::False => "`false`".into(),
            Token::Ident(s) => format!("atom `{s}`"),
            Token::End => "end of input".into(),
        }
    }
}

const UNARY_START: &[&str] = &["`!`", "`(`", "atom", "`true`", "`false`"];

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    peeked: Option<(usize, Token)>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            pos: 0,
            peeked: None,
        }
    }

    fn lex(&mut self) -> Result<(usize, Token), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && (bytes[self.pos] as char).is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&b) = bytes.get(start) else {
            return Ok((start, Token::End));
        };
        let single = |tok| (start, tok);
        let tok = match b {
            b'!' => single(Token::Not),
            b'&' => single(Token::And),
            b'|' => single(Token::Or),
            b'(' => single(Token::LParen),
            b')' => single(Token::RParen),
            b'-' if bytes.get(start + 1) == Some(&b'>') => {
                self.pos += 2;
                return Ok((start, Token::Arrow));
            }
            _ if is_atom_char(b as char) => {
                let mut end = start;
                while end < bytes.len() && is_atom_char(bytes[end] as char) {
                    if bytes[end] == b'-' && bytes.get(end + 1) == Some(&b'>') {
                        break;
                    }
                    end += 1;
                }
                self.pos = end;
                let word = &self.src[start..end];
                let tok = match word {
                    "true" => Token::True,
                    "false" => Token::False,
                    _ => Token::Ident(word.to_string()),
                };
                return Ok((start, tok));
            }
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                return Err(ParseError {
                    offset: start,
                    expected: vec!["a token"],
                    found: format!("character `{ch}`"),
                });
            }
        };
        self.pos += 1;
        Ok(tok)
    }

    fn peek(&mut self) -> Result<&(usize, Token), ParseError> {
        if self.peeked.is_none() {
            let t = self.lex()?;
            self.peeked = Some(t);
        }
        Ok(self.peeked.as_ref().expect("peeked token"))
    }

    fn next(&mut self) -> Result<(usize, Token), ParseError> {
        self.peek()?;
        Ok(self.peeked.take().expect("peeked token"))
    }

    fn error_here(&mut self, expected: &[&'static str]) -> ParseError {
        match self.peek() {
            Ok((offset, tok)) => ParseError {
                offset: *offset,
                expected: expected.to_vec(),
                found: tok.describe(),
            },
            Err(e) => e,
        }
    }

    fn implication(&mut self) -> Result<SafetyFormula, ParseError> {
        let left = self.disjunction()?;
        if self.peek()?.1 == Token::Arrow {
            self.next()?;
            let right = self.implication()?;
            return Ok(SafetyFormula::implies(left, right));
        }
        Ok(left)
    }

    fn disjunction(&mut self) -> Result<SafetyFormula, ParseError> {
        let mut left = self.conjunction()?;
        while self.peek()?.1 == Token::Or {
            self.next()?;
            let right = self.conjunction()?;
            left = SafetyFormula::or(left, right);
        }
        Ok(left)
    }

    fn conjunction(&mut self) -> Result<SafetyFormula, ParseError> {
        let mut left = self.unary()?;
        while self.peek()?.1 == Token::And {
            self.next()?;
            let right = self.unary()?;
            left = SafetyFormula::and(left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<SafetyFormula, ParseError> {
        let (offset, tok) = self.peek()?.clone();
        match tok {
            Token::Not => {
                self.next()?;
                Ok(SafetyFormula::not(self.unary()?))
            }
            Token::LParen => {
                self.next()?;
                let inner = self.implication()?;
                if self.peek()?.1 != Token::RParen {
                    return Err(self.error_here(&["`)`", "`&`", "`|`", "`->`"]));
                }
                self.next()?;
                Ok(inner)
            }
            Token::True => {
                self.next()?;
                Ok(SafetyFormula::True)
            }
            Token::False => {
                self.next()?;
                Ok(SafetyFormula::False)
            }
            Token::Ident(name) => {
                self.next()?;
                Atom::new(name.clone())
                    .map(SafetyFormula::Atom)
                    .map_err(|_| ParseError {
                        offset,
                        expected: vec!["atom"],
                        found: format!("invalid atom `{name}`"),
                    })
            }
            _ => Err(self.error_here(UNARY_START)),
        }
    }
}

/// Parses formula text into an AST.
pub fn parse_formula(text: &str) -> Result<SafetyFormula, ParseError> {
    let mut parser = Parser::new(text);
    let formula = parser.implication()?;
    if parser.peek()?.1 != Token::End {
        return Err(parser.error_here(&["`&`", "`|`", "`->`", "end of input"]));
    }
    Ok(formula)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a(name: &str) -> SafetyFormula {
        SafetyFormula::atom(name).unwrap()
    }

    #[test]
    fn parses_traffic_light_formula() {
        let f = parse_formula("!collision & (red_light -> stop)").unwrap();
        let expected = SafetyFormula::and(
            SafetyFormula::not(a("collision")),
            SafetyFormula::implies(a("red_light"), a("stop")),
        );
        assert_eq!(f, expected);
    }

    #[test]
    fn parses_single_atom() {
        assert_eq!(parse_formula("a").unwrap(), a("a"));
        assert_eq!(parse_formula("  hazard-zone_2 ").unwrap(), a("hazard-zone_2"));
    }

    #[test]
    fn precedence_of_not_and_or() {
        let f = parse_formula("!(a & b) | c").unwrap();
        let expected = SafetyFormula::or(SafetyFormula::not(SafetyFormula::and(a("a"), a("b"))), a("c"));
        assert_eq!(f, expected);
        assert_eq!(parse_formula(&f.to_string()).unwrap(), f);
    }

    #[test]
    fn implication_is_right_associative() {
        let f = parse_formula("a -> b -> c").unwrap();
        assert_eq!(
            f,
            SafetyFormula::implies(a("a"), SafetyFormula::implies(a("b"), a("c")))
        );
        let g = parse_formula("a|b&c").unwrap();
        assert_eq!(g, SafetyFormula::or(a("a"), SafetyFormula::and(a("b"), a("c"))));
        // no whitespace around the arrow, with dashes in atom names
        let h = parse_formula("x-1->y").unwrap();
        assert_eq!(h, SafetyFormula::implies(a("x-1"), a("y")));
    }

    #[test]
    fn constants() {
        assert!(parse_formula("true & !false").unwrap().eval(&LabelSet::new()));
    }

    #[test]
    fn syntax_errors_report_offset_and_expected() {
        let err = parse_formula("a & ").unwrap_err();
        assert_eq!(err.offset, 4);
        assert!(err.expected.contains(&"atom"));
        assert_eq!(err.found, "end of input");

        let err = parse_formula("(a | b").unwrap_err();
        assert_eq!(err.offset, 6);
        assert!(err.expected.contains(&"`)`"));

        let err = parse_formula("a b").unwrap_err();
        assert_eq!(err.offset, 2);

        let err = parse_formula("A").unwrap_err();
        assert_eq!(err.offset, 0);
        assert!(parse_formula("").is_err());
        assert!(parse_formula("a ->").is_err());
    }

    #[test]
    fn eval_examples() {
        let f = parse_formula("!collision & (red_light -> stop)").unwrap();
        assert!(f.eval(&label_set(["red_light", "stop"]).unwrap()));
        assert!(!f.eval(&label_set(["collision"]).unwrap()));
        assert!(!f.eval(&label_set(["red_light"]).unwrap()));
        assert!(f.eval(&LabelSet::new()));
    }

    #[test]
    fn undeclared_atoms_lint() {
        let f = parse_formula("!hazard & (wet -> slow)").unwrap();
        let universe = vec![Atom::new("hazard").unwrap(), Atom::new("wet").unwrap()];
        assert_eq!(f.undeclared_atoms(&universe), vec![Atom::new("slow").unwrap()]);
    }

    #[test]
    fn atom_validation() {
        assert_eq!(Atom::new(""), Err(AtomError::Empty));
        assert!(matches!(Atom::new("Bad"), Err(AtomError::InvalidChar(_))));
        assert!(matches!(Atom::new("true"), Err(AtomError::Reserved(_))));
    }

    // Truth-table oracle over up to four atoms, written independently of `eval`.
    fn truth_table_oracle(f: &SafetyFormula, assignment: u32, names: &[&str]) -> bool {
        let lookup = |atom: &Atom| {
            let idx = names.iter().position(|n| *n == atom.as_str()).unwrap();
            assignment & (1 << idx) != 0
        };
        fn go(f: &SafetyFormula, lookup: &dyn Fn(&Atom) -> bool) -> bool {
            match f {
                SafetyFormula::True => true,
                SafetyFormula::False => false,
                SafetyFormula::Atom(a) => lookup(a),
                SafetyFormula::Not(c) => !go(c, lookup),
                SafetyFormula::And(l, r) => {
                    let (x, y) = (go(l, lookup), go(r, lookup));
                    x as u8 * y as u8 == 1
                }
                SafetyFormula::Or(l, r) => go(l, lookup) as u8 + go(r, lookup) as u8 >= 1,
                SafetyFormula::Implies(l, r) => go(l, lookup) as u8 <= go(r, lookup) as u8,
            }
        }
        go(f, &lookup)
    }

    const NAMES: [&str; 4] = ["p", "q", "r", "s"];

    fn arb_formula() -> impl Strategy<Value = SafetyFormula> {
        let leaf = prop_oneof![
            Just(SafetyFormula::True),
            Just(SafetyFormula::False),
            (0..NAMES.len()).prop_map(|i| SafetyFormula::atom(NAMES[i]).unwrap()),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(SafetyFormula::not),
                (inner.clone(), inner.clone()).prop_map(|(l, r)| SafetyFormula::and(l, r)),
                (inner.clone(), inner.clone()).prop_map(|(l, r)| SafetyFormula::or(l, r)),
                (inner.clone(), inner).prop_map(|(l, r)| SafetyFormula::implies(l, r)),
            ]
        })
    }

    fn labels_for(assignment: u32) -> LabelSet {
        NAMES
            .iter()
            .enumerate()
            .filter(|(i, _)| assignment & (1 << i) != 0)
            .map(|(_, n)| Atom::new(*n).unwrap())
            .collect()
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(f in arb_formula()) {
            let printed = f.to_string();
            prop_assert_eq!(parse_formula(&printed).unwrap(), f);
        }

        #[test]
        fn eval_matches_truth_table(f in arb_formula()) {
            for assignment in 0..16u32 {
                prop_assert_eq!(f.eval(&labels_for(assignment)), truth_table_oracle(&f, assignment, &NAMES));
            }
        }

        #[test]
        fn de_morgan(l in arb_formula(), r in arb_formula()) {
            let lhs = SafetyFormula::not(SafetyFormula::and(l.clone(), r.clone()));
            let rhs = SafetyFormula::or(SafetyFormula::not(l), SafetyFormula::not(r));
            for assignment in 0..16u32 {
                let labels = labels_for(assignment);
                prop_assert_eq!(lhs.eval(&labels), rhs.eval(&labels));
                prop_assert_eq!(lhs.eval(&labels), lhs.eval(&labels));
            }
        }
    }
}
