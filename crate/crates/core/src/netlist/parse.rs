use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use super::circuit::{
    AnalysisDirective, Circuit, Element, ElementKind, Limit, Pulse, SourceSpec, GROUND,
};
use super::value::parse_value;
use crate::device::{ModelCard, Polarity};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownElement,
    UndeclaredModel,
    DuplicateName,
    InvalidValue,
    UnknownSource,
    MissingGround,
}

/// Netlist error with a 1-based position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
struct Token {
    text: String,
    line: usize,
    col: usize,
}

impl Token {
    fn err(&self, kind: ParseErrorKind, message: impl Into<String>) -> ParseError {
        ParseError { kind, line: self.line, column: self.col, message: message.into() }
    }

    fn is(&self, kw: &str) -> bool {
        self.text.eq_ignore_ascii_case(kw)
    }
}

fn tokenize(line: &str, line_no: usize, out: &mut Vec<Token>) {
    let mut current = String::new();
    let mut start = 0;
    let flush = |current: &mut String, start: usize, out: &mut Vec<Token>| {
        if !current.is_empty() {
            out.push(Token { text: std::mem::take(current), line: line_no, col: start + 1 });
        }
    };
    for (i, ch) in line.char_indices() {
        match ch {
            c if c.is_whitespace() || c == ',' => flush(&mut current, start, out),
            '(' | ')' | '=' => {
                flush(&mut current, start, out);
                out.push(Token { text: ch.to_string(), line: line_no, col: i + 1 });
            }
            _ => {
                if current.is_empty() {
                    start = i;
                }
                current.push(ch);
            }
        }
    }
    flush(&mut current, start, out);
}

/// One logical card: its tokens and the position of its first character.
struct Card {
    tokens: Vec<Token>,
    line: usize,
}

fn split_cards(text: &str) -> Result<(String, Vec<Card>), ParseError> {
    let mut lines = text.lines().enumerate();
    let title = lines.next().map(|(_, l)| l.trim_end_matches('\r').to_string()).unwrap_or_default();
    let mut cards: Vec<Card> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('+') {
            let offset = raw.len() - rest.len();
            let card = cards.last_mut().ok_or_else(|| ParseError {
                kind: ParseErrorKind::Syntax,
                line: line_no,
                column: raw.len() - trimmed.len() + 1,
                message: "continuation line without a preceding card".into(),
            })?;
            let mut toks = Vec::new();
            tokenize(rest, line_no, &mut toks);
            for t in &mut toks {
                t.col += offset;
            }
            card.tokens.extend(toks);
            continue;
        }
        let mut toks = Vec::new();
        tokenize(raw, line_no, &mut toks);
        cards.push(Card { tokens: toks, line: line_no });
    }
    Ok((title, cards))
}

struct Cursor<'a> {
    tokens: &'a [Token],
    pos: usize,
    /// Position used when a required token is missing at end of card.
    end_line: usize,
    end_col: usize,
}

impl<'a> Cursor<'a> {
    fn new(card: &'a Card) -> Self {
        let (end_line, end_col) = card
            .tokens
            .last()
            .map_or((card.line, 1), |t| (t.line, t.col + t.text.chars().count()));
        Self { tokens: &card.tokens, pos: 0, end_line, end_col }
    }

    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, what: &str) -> Result<&'a Token, ParseError> {
        self.next().ok_or_else(|| ParseError {
            kind: ParseErrorKind::Syntax,
            line: self.end_line,
            column: self.end_col,
            message: format!("expected {what}"),
        })
    }

    fn value(&mut self, what: &str) -> Result<f64, ParseError> {
        let t = self.expect(what)?;
        parse_value(&t.text).map_err(|e| t.err(ParseErrorKind::Syntax, format!("{what}: {e}")))
    }

    fn node(&mut self) -> Result<String, ParseError> {
        let t = self.expect("node name")?;
        if matches!(t.text.as_str(), "(" | ")" | "=") {
            return Err(t.err(ParseErrorKind::Syntax, "expected node name"));
        }
        Ok(t.text.to_ascii_lowercase())
    }

    fn punct(&mut self, p: &str) -> Result<(), ParseError> {
        let t = self.expect(&format!("`{p}`"))?;
        if t.text != p {
            return Err(t.err(ParseErrorKind::Syntax, format!("expected `{p}`, found `{}`", t.text)));
        }
        Ok(())
    }

    fn eat(&mut self, p: &str) -> bool {
        if self.peek().is_some_and(|t| t.text == p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        match self.next() {
            Some(t) => Err(t.err(ParseErrorKind::Syntax, format!("unexpected token `{}`", t.text))),
            None => Ok(()),
        }
    }
}

fn positive(t: &Token, what: &str, v: f64) -> Result<f64, ParseError> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(t.err(ParseErrorKind::InvalidValue, format!("{what} must be > 0, got {v}")))
    }
}

fn parse_source(cur: &mut Cursor<'_>) -> Result<SourceSpec, ParseError> {
    let mut dc: Option<f64> = None;
    let mut spec = SourceSpec::default();
    while let Some(t) = cur.next() {
        if t.is("dc") {
            dc = Some(cur.value("DC value")?);
        } else if t.is("ac") {
            let magnitude = cur.value("AC magnitude")?;
            let phase = match cur.peek() {
                Some(p) if parse_value(&p.text).is_ok() => cur.value("AC phase")?,
                _ => 0.0,
            };
            spec = spec.with_ac(magnitude, phase);
        } else if t.is("pulse") {
            let paren = cur.eat("(");
            let mut vals = [0.0; 6];
            for (slot, what) in vals.iter_mut().zip(["v1", "v2", "delay", "rise", "fall", "width"]) {
                *slot = cur.value(&format!("PULSE {what}"))?;
            }
            if paren {
                cur.punct(")")?;
            }
            let [v1, v2, delay, rise, fall, width] = vals;
            if !(rise > 0.0 && fall > 0.0) {
                return Err(t.err(ParseErrorKind::InvalidValue, "PULSE rise and fall must be > 0"));
            }
            if delay < 0.0 || width < 0.0 {
                return Err(t.err(ParseErrorKind::InvalidValue, "PULSE delay and width must be >= 0"));
            }
            spec.pulse = Some(Pulse { v1, v2, delay, rise, fall, width });
        } else if dc.is_none() && parse_value(&t.text).is_ok() {
            dc = parse_value(&t.text).ok();
        } else {
            return Err(t.err(ParseErrorKind::Syntax, format!("unexpected token `{}` in source", t.text)));
        }
    }
    spec.dc = dc.or(spec.pulse.map(|p| p.v1)).unwrap_or(0.0);
    Ok(spec)
}

fn parse_limit(cur: &mut Cursor<'_>) -> Result<Option<Limit>, ParseError> {
    match cur.next() {
        None => Ok(None),
        Some(t) if t.is("limit") => {
            let lo = cur.value("LIMIT low")?;
            let hi = cur.value("LIMIT high")?;
            if !(hi > lo) {
                return Err(t.err(ParseErrorKind::InvalidValue, "LIMIT requires high > low"));
            }
            cur.finish()?;
            Ok(Some(Limit { lo, hi }))
        }
        Some(t) => Err(t.err(ParseErrorKind::Syntax, format!("unexpected token `{}`", t.text))),
    }
}

/// Model references are checked after the whole deck is read.
struct ModelRef {
    element: usize,
    token: Token,
}

fn parse_element(card: &Card, refs: &mut Vec<ModelRef>, index: usize) -> Result<Element, ParseError> {
    let mut cur = Cursor::new(card);
    let name_tok = cur.expect("element name")?;
    let name = name_tok.text.to_ascii_lowercase();
    let letter = name.chars().next().unwrap_or(' ');
    let kind = match letter {
        'r' | 'c' => {
            let a = cur.node()?;
            let b = cur.node()?;
            let vt = cur.expect("value")?;
            let v = parse_value(&vt.text).map_err(|e| vt.err(ParseErrorKind::Syntax, e.to_string()))?;
            cur.finish()?;
            if letter == 'r' {
                ElementKind::Resistor { a, b, ohms: positive(vt, "resistance", v)? }
            } else {
                ElementKind::Capacitor { a, b, farads: positive(vt, "capacitance", v)? }
            }
        }
        'v' | 'i' => {
            let pos = cur.node()?;
            let neg = cur.node()?;
            let source = parse_source(&mut cur)?;
            if letter == 'v' {
                ElementKind::VoltageSource { pos, neg, source }
            } else {
                ElementKind::CurrentSource { pos, neg, source }
            }
        }
        'm' => {
            let drain = cur.node()?;
            let gate = cur.node()?;
            let source = cur.node()?;
            let model_tok = cur.expect("model name")?;
            let (mut w, mut l) = (None, None);
            while let Some(key) = cur.next() {
                cur.punct("=")?;
                let vt = cur.expect("value")?;
                let v = parse_value(&vt.text).map_err(|e| vt.err(ParseErrorKind::Syntax, e.to_string()))?;
                if key.is("w") {
                    w = Some(positive(vt, "W", v)?);
                } else if key.is("l") {
                    l = Some(positive(vt, "L", v)?);
                } else {
                    return Err(key.err(ParseErrorKind::Syntax, format!("unknown MOS parameter `{}`", key.text)));
                }
            }
            let (Some(w), Some(l)) = (w, l) else {
                return Err(name_tok.err(ParseErrorKind::Syntax, "MOS card requires W= and L="));
            };
            refs.push(ModelRef { element: index, token: model_tok.clone() });
            ElementKind::Mosfet { drain, gate, source, model: model_tok.text.to_ascii_lowercase(), w, l }
        }
        'e' | 'g' => {
            let pos = cur.node()?;
            let neg = cur.node()?;
            let cpos = cur.node()?;
            let cneg = cur.node()?;
            let gain = cur.value("gain")?;
            let limit = parse_limit(&mut cur)?;
            if letter == 'e' {
                ElementKind::Vcvs { pos, neg, cpos, cneg, gain, limit }
            } else {
                ElementKind::Vccs { pos, neg, cpos, cneg, gm: gain, limit }
            }
        }
        _ => {
            return Err(name_tok.err(
                ParseErrorKind::UnknownElement,
                format!("unknown element type `{}`", name_tok.text),
            ))
        }
    };
    Ok(Element { name, kind })
}

fn parse_model(card: &Card) -> Result<(String, ModelCard<f64>, Token), ParseError> {
    let mut cur = Cursor::new(card);
    cur.next();
    let name_tok = cur.expect("model name")?;
    let pol_tok = cur.expect("NMOS or PMOS")?;
    let polarity = if pol_tok.is("nmos") {
        Polarity::Nmos
    } else if pol_tok.is("pmos") {
        Polarity::Pmos
    } else {
        return Err(pol_tok.err(ParseErrorKind::Syntax, format!("expected NMOS or PMOS, found `{}`", pol_tok.text)));
    };
    let mut m = ModelCard::default_for(polarity);
    let paren = cur.eat("(");
    while let Some(key) = cur.peek() {
        if paren && key.text == ")" {
            break;
        }
        cur.next();
        cur.punct("=")?;
        let v = cur.value(&key.text)?;
        match key.text.to_ascii_lowercase().as_str() {
            "vt0" | "vto" => m.vt0 = v,
            "n" => m.n = v,
            "kp" => m.kp = v,
            "lambda" => m.lambda = v,
            _ => return Err(key.err(ParseErrorKind::Syntax, format!("unknown model parameter `{}`", key.text))),
        }
    }
    if paren {
        cur.punct(")")?;
    }
    cur.finish()?;
    m.validate().map_err(|e| name_tok.err(ParseErrorKind::InvalidValue, e.to_string()))?;
    Ok((name_tok.text.to_ascii_lowercase(), m, name_tok.clone()))
}

fn parse_directive(card: &Card) -> Result<Option<AnalysisDirective>, ParseError> {
    let mut cur = Cursor::new(card);
    let head = cur.expect("directive")?;
    let d = match head.text.to_ascii_lowercase().as_str() {
        ".op" => AnalysisDirective::Op,
        ".dc" => {
            let source = cur.node()?;
            let start = cur.value("start")?;
            let stop = cur.value("stop")?;
            let step = cur.value("step")?;
            if !(stop > start) || !(step > 0.0) {
                return Err(head.err(ParseErrorKind::InvalidValue, ".dc requires stop > start and step > 0"));
            }
            AnalysisDirective::Dc { source, start, stop, step }
        }
        ".ac" => {
            let sweep = cur.expect("`dec`")?;
            if !sweep.is("dec") {
                return Err(sweep.err(ParseErrorKind::Syntax, "only `dec` AC sweeps are supported"));
            }
            let nt = cur.expect("points per decade")?;
            let points: usize = nt
                .text
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| nt.err(ParseErrorKind::Syntax, "points per decade must be a positive integer"))?;
            let fstart = cur.value("fstart")?;
            let fstop = cur.value("fstop")?;
            if !(fstart > 0.0 && fstop > fstart) {
                return Err(head.err(ParseErrorKind::InvalidValue, ".ac requires fstop > fstart > 0"));
            }
            AnalysisDirective::Ac { points_per_decade: points, fstart, fstop }
        }
        ".tran" => {
            let tstep = cur.value("tstep")?;
            let tstop = cur.value("tstop")?;
            if !(tstep > 0.0 && tstop > 0.0) {
                return Err(head.err(ParseErrorKind::InvalidValue, ".tran requires tstep > 0 and tstop > 0"));
            }
            AnalysisDirective::Tran { tstep, tstop }
        }
        ".end" => return Ok(None),
        other => {
            return Err(head.err(ParseErrorKind::Syntax, format!("unknown directive `{other}`")));
        }
    };
    cur.finish()?;
    Ok(Some(d))
}

/// Parses netlist text into a validated [`Circuit`].
pub fn parse(text: &str) -> Result<Circuit, ParseError> {
    let (title, cards) = split_cards(text)?;
    let mut circuit = Circuit { title, ..Default::default() };
    let mut refs = Vec::new();
    let mut seen = HashSet::new();
    let mut model_tokens: BTreeMap<String, Token> = BTreeMap::new();
    let mut dc_sources = Vec::new();

    for card in &cards {
        let Some(head) = card.tokens.first() else { continue };
        if head.text.starts_with('.') {
            if head.is(".model") {
                let (name, m, tok) = parse_model(card)?;
                if model_tokens.contains_key(&name) {
                    return Err(tok.err(ParseErrorKind::DuplicateName, format!("duplicate model `{name}`")));
                }
                model_tokens.insert(name.clone(), tok);
                circuit.models.insert(name, m);
                continue;
            }
            match parse_directive(card)? {
                Some(d) => {
                    if let AnalysisDirective::Dc { source, .. } = &d {
                        dc_sources.push((source.clone(), card.tokens[1].clone()));
                    }
                    circuit.directives.push(d);
                }
                None => break,
            }
            continue;
        }
        let element = parse_element(card, &mut refs, circuit.elements.len())?;
        if !seen.insert(element.name.clone()) {
            return Err(head.err(ParseErrorKind::DuplicateName, format!("duplicate element name `{}`", element.name)));
        }
        circuit.elements.push(element);
    }

    for r in &refs {
        if let ElementKind::Mosfet { model, .. } = &circuit.elements[r.element].kind {
            if !circuit.models.contains_key(model) {
                return Err(r.token.err(ParseErrorKind::UndeclaredModel, format!("undeclared model `{model}`")));
            }
        }
    }
    for (source, tok) in &dc_sources {
        let ok = circuit.element(source).is_some_and(|e| {
            matches!(e.kind, ElementKind::VoltageSource { .. } | ElementKind::CurrentSource { .. })
        });
        if !ok {
            return Err(tok.err(ParseErrorKind::UnknownSource, format!("`.dc` names unknown source `{source}`")));
        }
    }
    if !circuit.elements.is_empty() && !circuit.has_node(GROUND) {
        let line = cards.iter().find(|c| !c.tokens.is_empty() && !c.tokens[0].text.starts_with('.')).map_or(1, |c| c.line);
        return Err(ParseError {
            kind: ParseErrorKind::MissingGround,
            line,
            column: 1,
            message: "circuit has no ground node `0`".into(),
        });
    }
    Ok(circuit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_resistor() {
        let c = parse("t\nR1 1 0 1k\n.end").unwrap();
        assert_eq!(c.title, "t");
        assert_eq!(c.elements.len(), 1);
        assert_eq!(
            c.elements[0].kind,
            ElementKind::Resistor { a: "1".into(), b: "0".into(), ohms: 1000.0 }
        );
    }

    #[test]
    fn divider_with_op() {
        let c = parse("t\nV1 1 0 2\nR1 1 2 1meg\nR2 2 0 1meg\n.op\n.end").unwrap();
        let nodes: Vec<_> = c.node_names().into_iter().collect();
        assert_eq!(nodes, vec!["0", "1", "2"]);
        assert_eq!(c.directives, vec![AnalysisDirective::Op]);
        let rs: Vec<f64> = c
            .elements
            .iter()
            .filter_map(|e| match e.kind {
                ElementKind::Resistor { ohms, .. } => Some(ohms),
                _ => None,
            })
            .collect();
        assert_eq!(rs, vec![1e6, 1e6]);
    }

    #[test]
    fn undeclared_model() {
        let e = parse("t\nM1 2 1 0 nch W=10u L=1u").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UndeclaredModel);
        assert_eq!((e.line, e.column), (2, 10));
    }

    #[test]
    fn model_card_overrides_defaults() {
        let c = parse("t\n.model nch NMOS (vt0=0.5 lambda=0)\nM1 1 1 0 NCH W=10u L=1u\nI1 0 1 1u\n").unwrap();
        let m = c.models["nch"];
        assert_eq!(m.vt0, 0.5);
        assert_eq!(m.lambda, 0.0);
        assert_eq!(m.kp, 100e-6);
    }

    #[test]
    fn continuation_and_comments() {
        let c = parse("title\n* comment\nV1 in 0\n+ DC 1 AC 1\n+ PULSE(0 1 0 1n 1n 1u)\nR1 in 0 1k\n").unwrap();
        match &c.elements[0].kind {
            ElementKind::VoltageSource { source, .. } => {
                assert_eq!(source.dc, 1.0);
                assert_eq!(source.ac.unwrap().magnitude, 1.0);
                assert_eq!(source.pulse.unwrap().width, 1e-6);
            }
            k => panic!("{k:?}"),
        }
    }

    #[test]
    fn pulse_without_dc_uses_initial_level() {
        let c = parse("t\nV1 a 0 PULSE(0.4 1.6 1u 1n 1n 5u)\nR1 a 0 1k").unwrap();
        match &c.elements[0].kind {
            ElementKind::VoltageSource { source, .. } => assert_eq!(source.dc, 0.4),
            k => panic!("{k:?}"),
        }
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse("t\nR1 1 0 5x").unwrap_err();
        assert_eq!((e.kind, e.line, e.column), (ParseErrorKind::Syntax, 2, 8));
        let e = parse("t\nQ1 1 0 2").unwrap_err();
        assert_eq!((e.kind, e.line, e.column), (ParseErrorKind::UnknownElement, 2, 1));
        let e = parse("t\nR1 1 0 1k\nr1 1 0 2k").unwrap_err();
        assert_eq!((e.kind, e.line), (ParseErrorKind::DuplicateName, 3));
        let e = parse("t\nR1 1 0 -1k").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::InvalidValue);
        let e = parse("t\nR1 1 0").unwrap_err();
        assert_eq!((e.kind, e.line, e.column), (ParseErrorKind::Syntax, 2, 7));
        let e = parse("t\nR1 1 2 1k").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::MissingGround);
        let e = parse("t\n+ R1 1 0 1k").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Syntax);
        let e = parse("t\nR1 1 0 1k\n.dc V9 0 1 0.1").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownSource);
        let e = parse("t\nR1 1 0 1k\n.ac dec 10 1k 10").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::InvalidValue);
        let e = parse("t\nV1 1 0 PULSE(0 1 0 0 1n 1u)\nR1 1 0 1").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::InvalidValue);
        let e = parse("t\nR1 1 0 1k\n.foo").unwrap_err();
        assert_eq!((e.kind, e.line, e.column), (ParseErrorKind::Syntax, 3, 1));
    }

    #[test]
    fn lines_after_end_are_ignored() {
        let c = parse("t\nR1 1 0 1k\n.end\nthis is not a card").unwrap();
        assert_eq!(c.elements.len(), 1);
    }

    #[test]
    fn empty_input() {
        let c = parse("").unwrap();
        assert!(c.elements.is_empty());
        let c = parse("only a title").unwrap();
        assert_eq!(c.title, "only a title");
    }

    #[test]
    fn controlled_sources() {
        let c = parse("t\nE1 out mid inp inn 1000 LIMIT -1 1\nG1 0 o2 inp inn 1m\nR1 out 0 1k\nR2 o2 0 1k\nR3 mid 0 1\nR4 inp 0 1\nR5 inn 0 1").unwrap();
        assert_eq!(c.elements[0].letter(), 'E');
        assert_eq!(c.elements[1].letter(), 'G');
    }
}
