//! SPICE-subset netlist parsing and serialization.
//!
//! The accepted grammar is deliberately small: `R`, `C`, `V` and `M` element
//! cards, `.model`, `.tran` and `.end` control cards, `*` comment lines and
//! `+` continuation lines. Everything else is rejected with a located error.
//! Names are case-insensitive and normalized to lower case; `0` and `gnd`
//! both denote ground.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

/// Canonical name of the ground node.
pub const GROUND: &str = "0";

/// Default MOSFET channel width and length when a card omits them.
pub const DEFAULT_CHANNEL: f64 = 1e-6;

/// Default fixed overlap/junction capacitance for `cgs`, `cgd` and `cdb`.
pub const DEFAULT_FET_CAP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetlistError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: unknown element kind for '{name}'")]
    UnknownElement { line: usize, name: String },
    #[error("element '{element}' references undeclared model '{model}'")]
    UndeclaredModel { element: String, model: String },
    #[error("duplicate element name '{name}'")]
    DuplicateElement { name: String },
    #[error("invalid value on '{element}': {message}")]
    InvalidValue { element: String, message: String },
    #[error("netlist is missing its .end card")]
    MissingEnd,
    #[error("netlist text is empty")]
    Empty,
}

pub fn is_ground(name: &str) -> bool {
    name == GROUND || name.eq_ignore_ascii_case("gnd")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Resistor,
    Capacitor,
    VoltageSource,
    Mosfet,
}

/// Trapezoidal PULSE waveform parameters (volts and seconds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub v1: f64,
    pub v2: f64,
    pub td: f64,
    pub tr: f64,
    pub tf: f64,
    pub pw: f64,
    pub per: f64,
}

impl Pulse {
    pub fn value_at(&self, t: f64) -> f64 {
        if t < self.td {
            return self.v1;
        }
        let phase = (t - self.td) % self.per;
        if phase < self.tr {
            self.v1 + (self.v2 - self.v1) * phase / self.tr
        } else if phase < self.tr + self.pw {
            self.v2
        } else if phase < self.tr + self.pw + self.tf {
            self.v2 + (self.v1 - self.v2) * (phase - self.tr - self.pw) / self.tf
        } else {
            self.v1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub dc: f64,
    pub pulse: Option<Pulse>,
}

impl SourceSpec {
    pub fn dc(volts: f64) -> Self {
        Self {
            dc: volts,
            pulse: None,
        }
    }

    /// Source value at time `t`. A pulse, when present, overrides the DC value.
    pub fn value_at(&self, t: f64) -> f64 {
        match &self.pulse {
            Some(p) => p.value_at(t),
            None => self.dc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Nmos,
    Pmos,
}

/// Level-1 MOSFET model card. For PMOS, `vt0` follows SPICE sign conventions
/// (an enhancement device has a negative threshold).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCard {
    pub name: String,
    pub polarity: Polarity,
    pub vt0: f64,
    pub kp: f64,
    pub lambda: f64,
    pub cgs: f64,
    pub cgd: f64,
    pub cdb: f64,
}

impl ModelCard {
    pub fn new(name: impl Into<String>, polarity: Polarity) -> Self {
        Self {
            name: name.into(),
            polarity,
            vt0: 0.0,
            kp: 2e-5,
            lambda: 0.0,
            cgs: DEFAULT_FET_CAP,
            cgd: DEFAULT_FET_CAP,
            cdb: DEFAULT_FET_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalysisCard {
    Tran { tstep: f64, tstop: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElementParams {
    Resistor { ohms: f64 },
    Capacitor { farads: f64 },
    VoltageSource(SourceSpec),
    Mosfet { model: String, w: f64, l: f64 },
}

/// One circuit element. `nodes` holds the terminals in SPICE order
/// (drain, gate, source, bulk for MOSFETs).
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub nodes: Vec<String>,
    pub params: ElementParams,
}

impl Element {
    pub fn resistor(name: &str, a: &str, b: &str, ohms: f64) -> Self {
        Self {
            name: name.to_ascii_lowercase(),
            nodes: vec![norm_node(a), norm_node(b)],
            params: ElementParams::Resistor { ohms },
        }
    }

    pub fn capacitor(name: &str, a: &str, b: &str, farads: f64) -> Self {
        Self {
            name: name.to_ascii_lowercase(),
            nodes: vec![norm_node(a), norm_node(b)],
            params: ElementParams::Capacitor { farads },
        }
    }

    pub fn vsource(name: &str, pos: &str, neg: &str, spec: SourceSpec) -> Self {
        Self {
            name: name.to_ascii_lowercase(),
            nodes: vec![norm_node(pos), norm_node(neg)],
            params: ElementParams::VoltageSource(spec),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn mosfet(
        name: &str,
        d: &str,
        g: &str,
        s: &str,
        b: &str,
        model: &str,
        w: f64,
        l: f64,
    ) -> Self {
        Self {
            name: name.to_ascii_lowercase(),
            nodes: vec![norm_node(d), norm_node(g), norm_node(s), norm_node(b)],
            params: ElementParams::Mosfet {
                model: model.to_ascii_lowercase(),
                w,
                l,
            },
        }
    }

    pub fn kind(&self) -> ElementKind {
        match self.params {
            ElementParams::Resistor { .. } => ElementKind::Resistor,
            ElementParams::Capacitor { .. } => ElementKind::Capacitor,
            ElementParams::VoltageSource(_) => ElementKind::VoltageSource,
            ElementParams::Mosfet { .. } => ElementKind::Mosfet,
        }
    }

    fn validate(&self) -> Result<(), NetlistError> {
        let invalid = |message: &str| NetlistError::InvalidValue {
            element: self.name.clone(),
            message: message.to_string(),
        };
        let expected = match self.kind() {
            ElementKind::Mosfet => 4,
            _ => 2,
        };
        if self.nodes.len() != expected {
            return Err(invalid("wrong terminal count"));
        }
        match &self.params {
            ElementParams::Resistor { ohms } if !(*ohms > 0.0) => {
                Err(invalid("resistance must be positive"))
            }
            ElementParams::Capacitor { farads } if !(*farads > 0.0) => {
                Err(invalid("capacitance must be positive"))
            }
            ElementParams::VoltageSource(SourceSpec { pulse: Some(p), .. })
                if !(p.tr > 0.0 && p.tf > 0.0 && p.pw > 0.0 && p.per > 0.0) =>
            {
                Err(invalid("pulse tr, tf, pw and per must be positive"))
            }
            ElementParams::Mosfet { w, l, .. } if !(*w > 0.0 && *l > 0.0) => {
                Err(invalid("W and L must be positive"))
            }
            _ => Ok(()),
        }
    }
}

fn norm_node(name: &str) -> String {
    if is_ground(name) {
        GROUND.to_string()
    } else {
        name.to_ascii_lowercase()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Netlist {
    pub title: String,
    pub elements: Vec<Element>,
    pub models: BTreeMap<String, ModelCard>,
    pub analyses: Vec<AnalysisCard>,
    /// Non-ground node name to dense unknown index, in first-appearance order.
    pub node_map: IndexMap<String, usize>,
}

impl Netlist {
    /// Assemble and validate a netlist from already-built parts.
    pub fn from_parts(
        title: impl Into<String>,
        elements: Vec<Element>,
        models: impl IntoIterator<Item = ModelCard>,
        analyses: Vec<AnalysisCard>,
    ) -> Result<Self, NetlistError> {
        let models = models
            .into_iter()
            .map(|m| (m.name.clone(), m))
            .collect::<BTreeMap<_, _>>();
        let mut seen = HashSet::with_capacity(elements.len());
        for el in &elements {
            if !seen.insert(el.name.as_str()) {
                return Err(NetlistError::DuplicateElement {
                    name: el.name.clone(),
                });
            }
            el.validate()?;
            if let ElementParams::Mosfet { model, .. } = &el.params {
                if !models.contains_key(model) {
                    return Err(NetlistError::UndeclaredModel {
                        element: el.name.clone(),
                        model: model.clone(),
                    });
                }
            }
        }
        for model in models.values() {
            if !(model.kp > 0.0) || model.cgs < 0.0 || model.cgd < 0.0 || model.cdb < 0.0 {
                return Err(NetlistError::InvalidValue {
                    element: model.name.clone(),
                    message: "kp must be positive and capacitances non-negative".into(),
                });
            }
        }
        for card in &analyses {
            let AnalysisCard::Tran { tstep, tstop } = *card;
            if !(tstep > 0.0 && tstep <= tstop) {
                return Err(NetlistError::InvalidValue {
                    element: ".tran".into(),
                    message: "require 0 < tstep <= tstop".into(),
                });
            }
        }
        let node_map = index_nodes(&elements);
        Ok(Self {
            title: title.into(),
            elements,
            models,
            analyses,
            node_map,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_map.len()
    }

    /// Index of a node, or `None` for ground.
    pub fn node_index(&self, name: &str) -> Option<usize> {
        if is_ground(name) {
            None
        } else {
            self.node_map.get(&name.to_ascii_lowercase()).copied()
        }
    }

    pub fn count_kind(&self, kind: ElementKind) -> usize {
        self.elements.iter().filter(|e| e.kind() == kind).count()
    }

    pub fn tran(&self) -> Option<(f64, f64)> {
        self.analyses.iter().find_map(|a| match *a {
            AnalysisCard::Tran { tstep, tstop } => Some((tstep, tstop)),
        })
    }

    pub fn to_spice(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Netlist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.title)?;
        for el in &self.elements {
            write!(f, "{}", el.name)?;
            for n in &el.nodes {
                write!(f, " {n}")?;
            }
            match &el.params {
                ElementParams::Resistor { ohms } => writeln!(f, " {ohms:e}")?,
                ElementParams::Capacitor { farads } => writeln!(f, " {farads:e}")?,
                ElementParams::VoltageSource(spec) => {
                    write!(f, " DC {:e}", spec.dc)?;
                    if let Some(p) = &spec.pulse {
                        write!(
                            f,
                            " PULSE({:e} {:e} {:e} {:e} {:e} {:e} {:e})",
                            p.v1, p.v2, p.td, p.tr, p.tf, p.pw, p.per
                        )?;
                    }
                    writeln!(f)?;
                }
                ElementParams::Mosfet { model, w, l } => writeln!(f, " {model} W={w:e} L={l:e}")?,
            }
        }
        for m in self.models.values() {
            let kind = match m.polarity {
                Polarity::Nmos => "NMOS",
                Polarity::Pmos => "PMOS",
            };
            writeln!(
                f,
                ".model {} {}(vto={:e} kp={:e} lambda={:e} cgs={:e} cgd={:e} cdb={:e})",
                m.name, kind, m.vt0, m.kp, m.lambda, m.cgs, m.cgd, m.cdb
            )?;
        }
        for a in &self.analyses {
            let AnalysisCard::Tran { tstep, tstop } = a;
            writeln!(f, ".tran {tstep:e} {tstop:e}")?;
        }
        writeln!(f, ".end")
    }
}

/// Number nodes by first appearance in element order, skipping ground.
pub fn index_nodes(elements: &[Element]) -> IndexMap<String, usize> {
    let mut map = IndexMap::new();
    for el in elements {
        for n in &el.nodes {
            if !is_ground(n) && !map.contains_key(n) {
                let idx = map.len();
                map.insert(n.clone(), idx);
            }
        }
    }
    map
}

/// Parse a SPICE number with an optional engineering suffix.
///
/// Suffix scaling is done in the decimal exponent before conversion, so
/// `2.2u` yields exactly the same double as `2.2e-6`. Letters after the
/// suffix are ignored (`1kOhm`).
pub fn parse_value(token: &str) -> Option<f64> {
    let s = token.to_ascii_lowercase();
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let digits_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut n_digits = i - digits_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        n_digits += i - frac_start;
    }
    if n_digits == 0 {
        return None;
    }
    let mantissa = &s[..i];
    let mut exponent: i32 = 0;
    if i < b.len() && b[i] == b'e' {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        let exp_digits = j;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_digits {
            exponent = s[i + 1..j].parse().ok()?;
            i = j;
        }
    }
    let rest = &s[i..];
    if !rest.bytes().all(|c| c.is_ascii_alphabetic()) {
        return None;
    }
    let scale = if rest.starts_with("meg") {
        6
    } else {
        match rest.bytes().next() {
            Some(b'f') => -15,
            Some(b'p') => -12,
            Some(b'n') => -9,
            Some(b'u') => -6,
            Some(b'm') => -3,
            Some(b'k') => 3,
            Some(b'g') => 9,
            Some(b't') => 12,
            _ => 0,
        }
    };
    format!("{mantissa}e{}", exponent + scale).parse().ok()
}

#[derive(Debug, Clone)]
struct Token {
    text: String,
    line: usize,
    column: usize,
}

impl Token {
    fn err(&self, message: impl Into<String>) -> NetlistError {
        NetlistError::Syntax {
            line: self.line,
            column: self.column,
            message: message.into(),
        }
    }

    fn value(&self) -> Result<f64, NetlistError> {
        parse_value(&self.text)
            .ok_or_else(|| self.err(format!("expected number, found '{}'", self.text)))
    }
}

fn tokenize(text: &str, line: usize, skip: usize) -> Vec<Token> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut start = 0;
    let flush = |cur: &mut String, start: usize, out: &mut Vec<Token>| {
        if !cur.is_empty() {
            out.push(Token {
                text: std::mem::take(cur).to_ascii_lowercase(),
                line,
                column: start,
            });
        }
    };
    for (i, ch) in text.chars().enumerate().skip(skip) {
        let column = i + 1;
        match ch {
            c if c.is_whitespace() || c == '(' || c == ')' || c == ',' => {
                flush(&mut cur, start, &mut out)
            }
            '=' => {
                flush(&mut cur, start, &mut out);
                out.push(Token {
                    text: "=".into(),
                    line,
                    column,
                });
            }
            c => {
                if cur.is_empty() {
                    start = column;
                }
                cur.push(c);
            }
        }
    }
    flush(&mut cur, start, &mut out);
    out
}

/// Split `key = value` sequences into pairs.
fn key_values(tokens: &[Token]) -> Result<Vec<(&Token, &Token)>, NetlistError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let key = &tokens[i];
        match (tokens.get(i + 1), tokens.get(i + 2)) {
            (Some(eq), Some(val)) if eq.text == "=" && val.text != "=" => {
                out.push((key, val));
                i += 3;
            }
            _ => return Err(key.err(format!("expected key=value, found '{}'", key.text))),
        }
    }
    Ok(out)
}

pub fn parse(text: &str) -> Result<Netlist, NetlistError> {
    if text.trim().is_empty() {
        return Err(NetlistError::Empty);
    }
    let mut lines = text.lines().enumerate();
    let title = lines
        .next()
        .map(|(_, l)| l.trim_end().to_string())
        .unwrap_or_default();

    // Join continuation lines into logical cards.
    let mut cards: Vec<Vec<Token>> = Vec::new();
    let mut ended = false;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('+') {
            let skip = raw.len() - rest.len();
            match cards.last_mut() {
                Some(card) => card.extend(tokenize(raw, line_no, skip)),
                None => {
                    return Err(NetlistError::Syntax {
                        line: line_no,
                        column: skip,
                        message: "continuation line with nothing to continue".into(),
                    })
                }
            }
            continue;
        }
        let toks = tokenize(raw, line_no, 0);
        if toks[0].text == ".end" {
            ended = true;
            break;
        }
        cards.push(toks);
    }
    if !ended {
        return Err(NetlistError::MissingEnd);
    }

    let mut elements = Vec::new();
    let mut models = Vec::new();
    let mut model_names = HashSet::new();
    let mut analyses = Vec::new();
    let mut names = HashSet::new();
    for card in &cards {
        let head = &card[0];
        if head.text.starts_with('.') {
            match head.text.as_str() {
                ".model" => {
                    let model = parse_model(card)?;
                    if !model_names.insert(model.name.clone()) {
                        return Err(head.err(format!("duplicate model '{}'", model.name)));
                    }
                    models.push(model);
                }
                ".tran" => analyses.push(parse_tran(card)?),
                other => return Err(head.err(format!("unsupported control card '{other}'"))),
            }
            continue;
        }
        let el = parse_element(card)?;
        if !names.insert(el.name.clone()) {
            return Err(NetlistError::DuplicateElement { name: el.name });
        }
        elements.push(el);
    }
    Netlist::from_parts(title, elements, models, analyses)
}

fn expect_len(card: &[Token], n: usize, what: &str) -> Result<(), NetlistError> {
    if card.len() < n {
        let last = card.last().expect("card has a head token");
        Err(NetlistError::Syntax {
            line: last.line,
            column: last.column + last.text.len(),
            message: format!(
                "{what}: expected at least {} fields, found {}",
                n,
                card.len()
            ),
        })
    } else {
        Ok(())
    }
}

fn node_token(tok: &Token) -> Result<String, NetlistError> {
    if tok.text == "=" {
        return Err(tok.err("expected node name"));
    }
    Ok(norm_node(&tok.text))
}

fn parse_element(card: &[Token]) -> Result<Element, NetlistError> {
    let head = &card[0];
    let name = head.text.clone();
    let el = match name.as_bytes()[0] {
        b'r' | b'c' => {
            expect_len(card, 4, &name)?;
            if let Some(extra) = card.get(4) {
                return Err(extra.err(format!("unexpected field '{}'", extra.text)));
            }
            let a = node_token(&card[1])?;
            let b = node_token(&card[2])?;
            let v = card[3].value()?;
            if name.starts_with('r') {
                Element::resistor(&name, &a, &b, v)
            } else {
                Element::capacitor(&name, &a, &b, v)
            }
        }
        b'v' => {
            expect_len(card, 3, &name)?;
            let pos = node_token(&card[1])?;
            let neg = node_token(&card[2])?;
            Element::vsource(&name, &pos, &neg, parse_source(&card[3..], head)?)
        }
        b'm' => {
            expect_len(card, 6, &name)?;
            let nodes = card[1..5]
                .iter()
                .map(node_token)
                .collect::<Result<Vec<_>, _>>()?;
            let model = card[5].text.clone();
            let (mut w, mut l) = (DEFAULT_CHANNEL, DEFAULT_CHANNEL);
            for (key, val) in key_values(&card[6..])? {
                match key.text.as_str() {
                    "w" => w = val.value()?,
                    "l" => l = val.value()?,
                    other => return Err(key.err(format!("unknown MOSFET parameter '{other}'"))),
                }
            }
            Element::mosfet(
                &name, &nodes[0], &nodes[1], &nodes[2], &nodes[3], &model, w, l,
            )
        }
        _ => {
            return Err(NetlistError::UnknownElement {
                line: head.line,
                name,
            })
        }
    };
    el.validate()?;
    Ok(el)
}

fn parse_source(rest: &[Token], head: &Token) -> Result<SourceSpec, NetlistError> {
    let mut spec = SourceSpec::dc(0.0);
    let mut i = 0;
    while i < rest.len() {
        let tok = &rest[i];
        match tok.text.as_str() {
            "dc" => {
                let v = rest
                    .get(i + 1)
                    .ok_or_else(|| tok.err("DC requires a value"))?;
                spec.dc = v.value()?;
                i += 2;
            }
            "pulse" => {
                let vals = rest
                    .get(i + 1..i + 8)
                    .ok_or_else(|| tok.err("PULSE requires 7 values (v1 v2 td tr tf pw per)"))?
                    .iter()
                    .map(Token::value)
                    .collect::<Result<Vec<_>, _>>()?;
                spec.pulse = Some(Pulse {
                    v1: vals[0],
                    v2: vals[1],
                    td: vals[2],
                    tr: vals[3],
                    tf: vals[4],
                    pw: vals[5],
                    per: vals[6],
                });
                i += 8;
            }
            _ if i == 0 => {
                spec.dc = tok.value()?;
                i += 1;
            }
            other => {
                return Err(tok.err(format!(
                    "unexpected source field '{other}' on '{}'",
                    head.text
                )))
            }
        }
    }
    Ok(spec)
}

fn parse_model(card: &[Token]) -> Result<ModelCard, NetlistError> {
    expect_len(card, 3, ".model")?;
    let name = card[1].text.clone();
    let polarity = match card[2].text.as_str() {
        "nmos" => Polarity::Nmos,
        "pmos" => Polarity::Pmos,
        other => return Err(card[2].err(format!("unsupported model type '{other}'"))),
    };
    let mut model = ModelCard::new(name, polarity);
    for (key, val) in key_values(&card[3..])? {
        let v = val.value()?;
        match key.text.as_str() {
            "vto" | "vt0" => model.vt0 = v,
            "kp" => model.kp = v,
            "lambda" => model.lambda = v,
            "cgs" | "cgso" => model.cgs = v,
            "cgd" | "cgdo" => model.cgd = v,
            "cdb" | "cbd" => model.cdb = v,
            "level" if v == 1.0 => {}
            "level" => return Err(val.err("only level=1 is supported")),
            other => return Err(key.err(format!("unknown model parameter '{other}'"))),
        }
    }
    Ok(model)
}

fn parse_tran(card: &[Token]) -> Result<AnalysisCard, NetlistError> {
    expect_len(card, 3, ".tran")?;
    if let Some(extra) = card.get(3) {
        return Err(extra.err("only .tran tstep tstop is supported"));
    }
    Ok(AnalysisCard::Tran {
        tstep: card[1].value()?,
        tstop: card[2].value()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_resistor() {
        let n = parse("t\nR1 1 0 1k\n.end").unwrap();
        assert_eq!(n.elements.len(), 1);
        assert_eq!(
            n.elements[0].params,
            ElementParams::Resistor { ohms: 1000.0 }
        );
        assert_eq!(n.node_map.len(), 1);
        assert_eq!(n.node_map["1"], 0);
    }

    #[test]
    fn minimal_mosfet_deck() {
        let n =
            parse("t\nM1 d g s 0 nm W=1u L=1u\n.model nm NMOS(vt0=1 kp=2e-5)\n.tran 1n 10n\n.end")
                .unwrap();
        assert_eq!(n.count_kind(ElementKind::Mosfet), 1);
        assert_eq!(n.models.len(), 1);
        assert_eq!(n.models["nm"].vt0, 1.0);
        assert_eq!(n.tran(), Some((1e-9, 10e-9)));
    }

    #[test]
    fn missing_end() {
        assert_eq!(parse("t\nR1 1 0 1k"), Err(NetlistError::MissingEnd));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse("t\nL1 1 0 1u\n.end"),
            Err(NetlistError::UnknownElement { line: 2, .. })
        ));
        assert!(matches!(
            parse("t\nM1 d g s 0 nope\n.end"),
            Err(NetlistError::UndeclaredModel { .. })
        ));
        assert!(matches!(
            parse("t\nR1 1 0 1k\nr1 2 0 1k\n.end"),
            Err(NetlistError::DuplicateElement { .. })
        ));
        assert!(matches!(
            parse("t\nR1 1 0 abc\n.end"),
            Err(NetlistError::Syntax {
                line: 2,
                column: 8,
                ..
            })
        ));
        assert!(matches!(
            parse("t\nR1 1 0 -5\n.end"),
            Err(NetlistError::InvalidValue { .. })
        ));
        assert!(matches!(
            parse("t\n.dc v1 0 1 0.1\n.end"),
            Err(NetlistError::Syntax { .. })
        ));
        assert_eq!(parse("   \n"), Err(NetlistError::Empty));
    }

    #[test]
    fn comments_continuations_and_case() {
        let text = "Title Line\n* comment\nV1 IN GND PULSE(0 1.8 1n\n+ 0.1n 0.1n 5n 10n)\nR1 in Out 2MEG\n.END\nR9 junk\n";
        let n = parse(text).unwrap();
        assert_eq!(n.title, "Title Line");
        assert_eq!(n.elements[0].nodes, vec!["in", "0"]);
        let ElementParams::VoltageSource(spec) = &n.elements[0].params else {
            panic!()
        };
        let p = spec.pulse.unwrap();
        assert_eq!((p.v2, p.per), (1.8, 10e-9));
        assert_eq!(n.elements[1].params, ElementParams::Resistor { ohms: 2e6 });
        assert_eq!(n.node_map.keys().collect::<Vec<_>>(), vec!["in", "out"]);
    }

    #[test]
    fn suffixes() {
        assert_eq!(parse_value("1meg"), Some(1e6));
        assert_eq!(parse_value("1m"), Some(1e-3));
        assert_eq!(parse_value("1kOhm"), Some(1e3));
        assert_eq!(parse_value("2.2u"), Some(2.2e-6));
        assert_eq!(parse_value("-3.3e-2k"), Some(-33.0));
        assert_eq!(parse_value("10fF"), Some(10e-15));
        assert_eq!(parse_value("1.5"), Some(1.5));
        assert_eq!(parse_value("k"), None);
        assert_eq!(parse_value("1k2"), None);
    }

    #[test]
    fn node_indexing() {
        let n = parse("t\nR1 0 a 1\nR2 a b 1\nR3 b 0 1\n.end").unwrap();
        assert_eq!(
            n.node_map
                .iter()
                .map(|(k, v)| (k.as_str(), *v))
                .collect::<Vec<_>>(),
            vec![("a", 0), ("b", 1)]
        );
        let g = parse("t\nR1 0 gnd 1\n.end").unwrap();
        assert!(g.node_map.is_empty());
    }

    #[test]
    fn pulse_shape() {
        let p = Pulse {
            v1: 0.0,
            v2: 2.0,
            td: 1.0,
            tr: 1.0,
            tf: 2.0,
            pw: 3.0,
            per: 10.0,
        };
        assert_eq!(p.value_at(0.5), 0.0);
        assert_eq!(p.value_at(1.5), 1.0);
        assert_eq!(p.value_at(3.0), 2.0);
        assert_eq!(p.value_at(6.0), 1.0);
        assert_eq!(p.value_at(8.0), 0.0);
        assert_eq!(p.value_at(11.5), 1.0);
    }

    fn element_strategy() -> impl Strategy<Value = Element> {
        let node = prop_oneof![Just("0".to_string()), "[a-z][a-z0-9]{0,3}"];
        let value =
            (1u32..9999, -15i32..7).prop_map(|(m, e)| format!("{m}e{e}").parse::<f64>().unwrap());
        (
            0u8..4,
            node.clone(),
            node.clone(),
            node.clone(),
            value.clone(),
            value,
        )
            .prop_map(|(kind, a, b, c, v, w)| match kind {
                0 => Element::resistor("r", &a, &b, v),
                1 => Element::capacitor("c", &a, &b, v),
                2 => Element::vsource(
                    "v",
                    &a,
                    &b,
                    SourceSpec {
                        dc: -v,
                        pulse: Some(Pulse {
                            v1: 0.0,
                            v2: v,
                            td: w,
                            tr: v,
                            tf: w,
                            pw: v,
                            per: w,
                        }),
                    },
                ),
                _ => Element::mosfet("m", &a, &b, &c, "0", "nm", v, w),
            })
    }

    proptest! {
        #[test]
        fn serialize_reparse_roundtrip(els in prop::collection::vec(element_strategy(), 0..12)) {
            let elements = els
                .into_iter()
                .enumerate()
                .map(|(i, mut e)| {
                    e.name = format!("{}{i}", e.name);
                    e
                })
                .collect();
            let mut model = ModelCard::new("nm", Polarity::Nmos);
            model.vt0 = 0.45;
            model.lambda = 0.02;
            let n = Netlist::from_parts("roundtrip", elements, [model], vec![AnalysisCard::Tran { tstep: 1e-12, tstop: 3e-9 }]).unwrap();
            let again = parse(&n.to_spice()).unwrap();
            prop_assert_eq!(&again, &n);
            prop_assert_eq!(parse(&n.to_spice()).unwrap(), again);
        }
    }
}
