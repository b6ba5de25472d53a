//! SPICE-like netlists and the circuit graph they describe.
//!
//! ```text
//! * series RC
//! V1 1 0 DC 5
//! R1 1 2 R=1k
//! C1 2 0 C=1u
//! .ground 0
//! .tran 5m 1u uic
//! .end
//! ```
//!
//! Keywords are case-insensitive, `*` starts a comment line and `+` continues the
//! previous line. A `*` line before any statement is taken as the title.

use std::fmt::{self, Write as _};
use std::ops::Range;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::{
    ComponentError, ComponentKind, ComponentModel, EbersMoll, EnergyFn, PnDiode, ResistorLaw, ScalarFn,
    SourceKind, Waveform,
};
use crate::graph::{component_labels, DirectedGraph, GraphError, GroundSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetlistError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("line {line}: duplicate component name `{name}`")]
    DuplicateName { line: usize, name: String },
    #[error("line {line}: unknown directive `{directive}`")]
    UnknownDirective { line: usize, directive: String },
    #[error("line {line}: {source}")]
    Component { line: usize, source: ComponentError },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl NetlistError {
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Syntax { line, .. }
            | Self::DuplicateName { line, .. }
            | Self::UnknownDirective { line, .. }
            | Self::Component { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// A component instance and the nodes its terminals attach to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub model: ComponentModel,
    pub nodes: Vec<String>,
}

impl Element {
    /// Edges as `(init, ter)` positions into `nodes`.
    pub fn edge_terminals(&self) -> Vec<(usize, usize)> {
        match self.model.kind {
            // n1→n2 primary, n4→n3 secondary
            ComponentKind::Transformer { .. } => vec![(0, 1), (3, 2)],
            // nodes are (C, B, E): base→collector, base→emitter
            ComponentKind::NpnTransistor { .. } => vec![(1, 0), (1, 2)],
            _ => (0..self.model.ports()).map(|k| (2 * k, 2 * k + 1)).collect(),
        }
    }

    pub fn edge_names(&self) -> Vec<String> {
        let p = self.model.ports();
        if p == 1 {
            vec![self.model.name.clone()]
        } else {
            (1..=p).map(|k| format!("{}.{k}", self.model.name)).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tran {
    pub tstop: f64,
    pub dt: f64,
    /// Start from the `.ic` values instead of the operating point.
    pub uic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statement {
    Element(Element),
    Ground(Vec<String>),
    Tran(Tran),
    /// Initial capacitor voltages and inductor currents.
    Ic(Vec<(String, f64)>),
    Op,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Netlist {
    pub title: String,
    pub statements: Vec<Statement>,
    /// Source line of every statement.
    pub lines: Vec<usize>,
}

impl Netlist {
    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.statements.iter().filter_map(|s| match s {
            Statement::Element(e) => Some(e),
            _ => None,
        })
    }

    pub fn components(&self) -> Vec<ComponentModel> {
        self.elements().map(|e| e.model.clone()).collect()
    }

    pub fn ground_nodes(&self) -> Vec<String> {
        self.statements
            .iter()
            .filter_map(|s| match s {
                Statement::Ground(g) => Some(g.iter().cloned()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// The last `.tran` directive.
    pub fn tran(&self) -> Option<Tran> {
        self.statements.iter().rev().find_map(|s| match s {
            Statement::Tran(t) => Some(*t),
            _ => None,
        })
    }

    pub fn initial_conditions(&self) -> Vec<(String, f64)> {
        self.statements
            .iter()
            .filter_map(|s| match s {
                Statement::Ic(v) => Some(v.iter().cloned()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn analyses(&self) -> Vec<&Statement> {
        self.statements.iter().filter(|s| matches!(s, Statement::Tran(_) | Statement::Op)).collect()
    }
}

struct Token {
    text: String,
    column: usize,
}

/// Splits on whitespace outside parentheses; `=` glues its neighbours together.
fn tokenize(line: &str) -> Vec<Token> {
    let mut tokens: Vec<Token> = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut depth = 0i32;
    for (i, ch) in line.chars().enumerate() {
        if ch.is_whitespace() && depth == 0 {
            if !current.is_empty() {
                tokens.push(Token { text: std::mem::take(&mut current), column: start + 1 });
            }
            continue;
        }
        if current.is_empty() {
            start = i;
        }
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        current.push(ch);
    }
    if !current.is_empty() {
        tokens.push(Token { text: current, column: start + 1 });
    }
    // rejoin `a = b`, `a= b`, `a =b` and `SIN (…)`
    let mut out: Vec<Token> = Vec::new();
    for t in tokens {
        if let Some(last) = out.last_mut() {
            let glue = last.text.ends_with('=')
                || t.text.starts_with('=')
                || (t.text.starts_with('(') && last.text.chars().all(|c| c.is_ascii_alphabetic()));
            if glue {
                last.text.push_str(&t.text);
                continue;
            }
        }
        out.push(t);
    }
    out
}

/// Parses a number with an optional SPICE scale suffix; trailing unit letters are ignored.
pub fn parse_value(s: &str) -> Option<f64> {
    let bytes = s.as_bytes();
    let mut end = 0;
    let digit_at = |i: usize| bytes.get(i).is_some_and(|b| b.is_ascii_digit());
    if matches!(bytes.first(), Some(b'+' | b'-')) {
        end = 1;
    }
    let mantissa_start = end;
    while digit_at(end) {
        end += 1;
    }
    if bytes.get(end) == Some(&b'.') {
        end += 1;
        while digit_at(end) {
            end += 1;
        }
    }
    if end == mantissa_start || (end == mantissa_start + 1 && bytes[mantissa_start] == b'.') {
        return None;
    }
    if matches!(bytes.get(end), Some(b'e' | b'E')) {
        let mut k = end + 1;
        if matches!(bytes.get(k), Some(b'+' | b'-')) {
            k += 1;
        }
        if digit_at(k) {
            while digit_at(k) {
                k += 1;
            }
            end = k;
        }
    }
    let number: f64 = s[..end].parse().ok()?;
    let rest = s[end..].to_ascii_lowercase();
    if !rest.chars().all(|c| c.is_ascii_alphabetic()) {
        return None;
    }
    // dividing by an exact power of ten rounds once, unlike multiplying by 1e-9
    let (mul, div) = if rest.starts_with("meg") {
        (1e6, 1.0)
    } else {
        match rest.chars().next() {
            Some('f') => (1.0, 1e15),
            Some('p') => (1.0, 1e12),
            Some('n') => (1.0, 1e9),
            Some('u') => (1.0, 1e6),
            Some('m') => (1.0, 1e3),
            Some('k') => (1e3, 1.0),
            Some('g') => (1e9, 1.0),
            Some('t') => (1e12, 1.0),
            _ => (1.0, 1.0),
        }
    };
    Some(number * mul / div)
}

/// Parses `poly(c0, c1, …)`, `tanh(gain, scale)` or `logcosh(gain, scale)`.
pub fn parse_expr(s: &str) -> Option<ScalarFn> {
    let open = s.find('(')?;
    if !s.ends_with(')') {
        return None;
    }
    let name = s[..open].trim().to_ascii_lowercase();
    let args: Vec<f64> = s[open + 1..s.len() - 1]
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|a| !a.is_empty())
        .map(parse_value)
        .collect::<Option<_>>()?;
    match (name.as_str(), args.as_slice()) {
        ("poly", a) if !a.is_empty() => Some(ScalarFn::Poly(a.to_vec())),
        ("tanh", &[gain, scale]) if scale != 0.0 => Some(ScalarFn::Tanh { gain, scale }),
        ("logcosh", &[gain, scale]) if scale != 0.0 => Some(ScalarFn::LogCosh { gain, scale }),
        _ => None,
    }
}

fn format_expr(f: &ScalarFn) -> String {
    match f {
        ScalarFn::Poly(c) => {
            let args: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
            format!("poly({})", args.join(","))
        }
        ScalarFn::Tanh { gain, scale } => format!("tanh({gain:?},{scale:?})"),
        ScalarFn::LogCosh { gain, scale } => format!("logcosh({gain:?},{scale:?})"),
    }
}

fn parse_waveform(s: &str) -> Option<Waveform> {
    let lower = s.to_ascii_lowercase();
    if let Some(rest) = lower.strip_prefix("dc") {
        return parse_value(rest.trim()).map(Waveform::Dc);
    }
    if lower.starts_with("sin") {
        let open = s.find('(')?;
        if !s.ends_with(')') || s[3..open].trim() != "" {
            return None;
        }
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|a| !a.is_empty())
            .map(parse_value)
            .collect::<Option<_>>()?;
        return match args[..] {
            [offset, amplitude, freq] => Some(Waveform::Sin { offset, amplitude, freq, phase: 0.0 }),
            [offset, amplitude, freq, phase] => Some(Waveform::Sin { offset, amplitude, freq, phase }),
            _ => None,
        };
    }
    parse_value(s).map(Waveform::Dc)
}

fn format_waveform(w: &Waveform) -> String {
    match w {
        Waveform::Dc(v) => format!("DC {v:?}"),
        Waveform::Sin { offset, amplitude, freq, phase } => {
            format!("SIN({offset:?},{amplitude:?},{freq:?},{phase:?})")
        }
    }
}

struct LineCtx<'a> {
    line: usize,
    tokens: &'a [Token],
}

impl LineCtx<'_> {
    fn err(&self, column: usize, message: impl Into<String>) -> NetlistError {
        NetlistError::Syntax { line: self.line, column, message: message.into() }
    }

    fn end_column(&self) -> usize {
        self.tokens.last().map_or(1, |t| t.column + t.text.chars().count())
    }

    fn nodes(&self, count: usize) -> Result<Vec<String>, NetlistError> {
        if self.tokens.len() < count + 1 {
            return Err(self.err(self.end_column(), format!("expected {count} nodes")));
        }
        for t in &self.tokens[1..=count] {
            if t.text.contains('=') || t.text.contains('(') {
                return Err(self.err(t.column, format!("`{}` is not a node name", t.text)));
            }
        }
        Ok(self.tokens[1..=count].iter().map(|t| t.text.clone()).collect())
    }

    /// `key=value` pairs and bare words after the nodes.
    fn params(&self, skip: usize) -> Vec<(Option<String>, &Token)> {
        self.tokens[skip..]
            .iter()
            .map(|t| match t.text.split_once('=') {
                Some((k, _)) => (Some(k.to_ascii_lowercase()), t),
                None => (None, t),
            })
            .collect()
    }

    fn value_of(&self, t: &Token) -> Result<f64, NetlistError> {
        let raw = t.text.split_once('=').map_or(t.text.as_str(), |(_, v)| v);
        parse_value(raw).ok_or_else(|| self.err(t.column, format!("cannot parse value `{raw}`")))
    }

    fn expr_of(&self, t: &Token) -> Result<ScalarFn, NetlistError> {
        let raw = t.text.split_once('=').map_or(t.text.as_str(), |(_, v)| v);
        parse_expr(raw).ok_or_else(|| self.err(t.column, format!("cannot parse expression `{raw}`")))
    }
}

fn parse_energy(ctx: &LineCtx, key: &str) -> Result<EnergyFn, NetlistError> {
    let params = ctx.params(3);
    let [(k, t)] = &params[..] else {
        return Err(ctx.err(ctx.end_column(), format!("expected exactly one of {key}=<value> or H=<expr>")));
    };
    match k.as_deref() {
        Some("h") => Ok(EnergyFn::Scalar(ctx.expr_of(t)?)),
        Some(k2) if k2 == key => positive_energy(ctx, t),
        None => positive_energy(ctx, t),
        Some(other) => Err(ctx.err(t.column, format!("unknown parameter `{other}`"))),
    }
}

fn positive_energy(ctx: &LineCtx, t: &Token) -> Result<EnergyFn, NetlistError> {
    let v = ctx.value_of(t)?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(ctx.err(t.column, format!("value must be positive, got {v}")));
    }
    Ok(EnergyFn::linear(v))
}

fn parse_resistor(ctx: &LineCtx) -> Result<ResistorLaw, NetlistError> {
    let params = ctx.params(3);
    let [(k, t)] = &params[..] else {
        return Err(ctx.err(ctx.end_column(), "expected exactly one of R=, G= or law="));
    };
    let raw = t.text.split_once('=').map_or(t.text.as_str(), |(_, v)| v);
    match k.as_deref() {
        Some("r") | None => {
            let r = ctx.value_of(t)?;
            if !(r > 0.0 && r.is_finite()) {
                return Err(ctx.err(t.column, format!("resistance must be positive, got {r}")));
            }
            Ok(ResistorLaw::Linear { conductance: 1.0 / r })
        }
        Some("g") => Ok(ResistorLaw::Linear { conductance: ctx.value_of(t)? }),
        Some("law") => match raw.get(..2).map(str::to_ascii_lowercase).as_deref() {
            Some("r:") => parse_expr(&raw[2..])
                .map(ResistorLaw::Resistance)
                .ok_or_else(|| ctx.err(t.column, format!("cannot parse expression `{raw}`"))),
            _ => Ok(ResistorLaw::Conductance(ctx.expr_of(t)?)),
        },
        Some(other) => Err(ctx.err(t.column, format!("unknown parameter `{other}`"))),
    }
}

fn parse_diode(ctx: &LineCtx) -> Result<ComponentKind, NetlistError> {
    let params = ctx.params(3);
    if let [(None, t)] = params[..] {
        if t.text.eq_ignore_ascii_case("ideal") {
            return Ok(ComponentKind::IdealDiode);
        }
    }
    let mut d = PnDiode::default();
    for (k, t) in params {
        match k.as_deref() {
            Some("a") => d.a = ctx.value_of(t)?,
            Some("b") => d.b = ctx.value_of(t)?,
            _ => return Err(ctx.err(t.column, format!("unexpected `{}`", t.text))),
        }
    }
    Ok(ComponentKind::PnDiode { params: d })
}

fn parse_transistor(ctx: &LineCtx) -> Result<ComponentKind, NetlistError> {
    let mut p = EbersMoll::default();
    for (k, t) in ctx.params(4) {
        let slot = match k.as_deref() {
            Some("is") => &mut p.i_s,
            Some("vt") => &mut p.v_t,
            Some("af") => &mut p.alpha_f,
            Some("ar") => &mut p.alpha_r,
            _ => return Err(ctx.err(t.column, format!("unexpected `{}`", t.text))),
        };
        *slot = ctx.value_of(t)?;
    }
    Ok(ComponentKind::NpnTransistor { params: p })
}

fn parse_source(ctx: &LineCtx, source: SourceKind) -> Result<ComponentKind, NetlistError> {
    let rest = &ctx.tokens[3..];
    let Some(first) = rest.first() else {
        return Err(ctx.err(ctx.end_column(), "missing source value"));
    };
    let text: Vec<&str> = rest.iter().map(|t| t.text.as_str()).collect();
    let waveform = parse_waveform(&text.join(" "))
        .ok_or_else(|| ctx.err(first.column, format!("cannot parse source value `{}`", text.join(" "))))?;
    Ok(ComponentKind::Source { source, waveform })
}

fn parse_element(ctx: &LineCtx) -> Result<Element, NetlistError> {
    let head = &ctx.tokens[0];
    let name = head.text.clone();
    let letter = name.chars().next().unwrap_or(' ').to_ascii_uppercase();
    let (nodes, kind) = match letter {
        'C' => (ctx.nodes(2)?, ComponentKind::Capacitor { energy: parse_energy(ctx, "c")? }),
        'L' => (ctx.nodes(2)?, ComponentKind::Inductor { energy: parse_energy(ctx, "l")? }),
        'R' => (ctx.nodes(2)?, ComponentKind::Resistor { law: parse_resistor(ctx)? }),
        'D' => (ctx.nodes(2)?, parse_diode(ctx)?),
        'T' => {
            let nodes = ctx.nodes(4)?;
            let params = ctx.params(5);
            let [(Some(ref k), t)] = params[..] else {
                return Err(ctx.err(ctx.end_column(), "expected ratio=<T>"));
            };
            if k != "ratio" {
                return Err(ctx.err(t.column, format!("unknown parameter `{k}`")));
            }
            (nodes, ComponentKind::Transformer { ratio: ctx.value_of(t)? })
        }
        'Q' => (ctx.nodes(3)?, parse_transistor(ctx)?),
        'V' => (ctx.nodes(2)?, parse_source(ctx, SourceKind::Voltage)?),
        'I' => (ctx.nodes(2)?, parse_source(ctx, SourceKind::Current)?),
        'O' => (ctx.nodes(2)?, parse_source(ctx, SourceKind::Sink)?),
        _ => return Err(ctx.err(head.column, format!("unknown element type `{letter}`"))),
    };
    let element = Element { model: ComponentModel::new(name, kind), nodes };
    for (a, b) in element.edge_terminals() {
        if element.nodes[a] == element.nodes[b] {
            return Err(ctx.err(ctx.tokens[1 + b].column, format!(
                "terminals of `{}` share node `{}`; self-loops are not allowed",
                element.model.name, element.nodes[a]
            )));
        }
    }
    element
        .model
        .validate()
        .map_err(|source| NetlistError::Component { line: ctx.line, source })?;
    Ok(element)
}

fn parse_directive(ctx: &LineCtx) -> Result<Option<Statement>, NetlistError> {
    let head = &ctx.tokens[0];
    let name = head.text.to_ascii_lowercase();
    let args = &ctx.tokens[1..];
    let expect_no_args = || match args.first() {
        Some(t) => Err(ctx.err(t.column, format!("unexpected `{}`", t.text))),
        None => Ok(()),
    };
    match name.as_str() {
        ".ground" => {
            if args.is_empty() {
                return Err(ctx.err(ctx.end_column(), ".ground needs at least one node"));
            }
            Ok(Some(Statement::Ground(args.iter().map(|t| t.text.clone()).collect())))
        }
        ".tran" => {
            if !(2..=3).contains(&args.len()) {
                return Err(ctx.err(head.column, ".tran expects <tstop> <dt> [uic]"));
            }
            let tstop = ctx.value_of(&args[0])?;
            let dt = ctx.value_of(&args[1])?;
            if !(dt > 0.0 && tstop > 0.0) {
                return Err(ctx.err(args[0].column, "tstop and dt must be positive"));
            }
            let uic = match args.get(2) {
                Some(t) if t.text.eq_ignore_ascii_case("uic") => true,
                Some(t) => return Err(ctx.err(t.column, format!("unexpected `{}`", t.text))),
                None => false,
            };
            Ok(Some(Statement::Tran(Tran { tstop, dt, uic })))
        }
        ".ic" => {
            let mut values = Vec::new();
            for t in args {
                let Some((k, _)) = t.text.split_once('=') else {
                    return Err(ctx.err(t.column, "expected <element>=<value>"));
                };
                values.push((k.to_string(), ctx.value_of(t)?));
            }
            Ok(Some(Statement::Ic(values)))
        }
        ".op" => expect_no_args().map(|_| Some(Statement::Op)),
        ".end" => expect_no_args().map(|_| None),
        _ => Err(NetlistError::UnknownDirective { line: ctx.line, directive: head.text.clone() }),
    }
}

/// Parses netlist text.
pub fn parse(text: &str) -> Result<Netlist, NetlistError> {
    // logical lines: (first physical line number, content)
    let mut logical: Vec<(usize, String)> = Vec::new();
    let mut title = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('*') {
            if logical.is_empty() && title.is_none() {
                title = Some(comment.trim().to_string());
            }
            continue;
        }
        if let Some(cont) = trimmed.strip_prefix('+') {
            match logical.last_mut() {
                Some((_, content)) => {
                    content.push(' ');
                    content.push_str(cont);
                }
                None => {
                    return Err(NetlistError::Syntax {
                        line: line_no,
                        column: raw.find('+').unwrap_or(0) + 1,
                        message: "continuation line without a preceding statement".into(),
                    })
                }
            }
            continue;
        }
        logical.push((line_no, raw.to_string()));
    }

    let mut netlist = Netlist { title: title.unwrap_or_default(), ..Netlist::default() };
    let mut names: Vec<String> = Vec::new();
    let mut ended = false;
    for (line, content) in &logical {
        let tokens = tokenize(content);
        let ctx = LineCtx { line: *line, tokens: &tokens };
        if ended {
            return Err(ctx.err(tokens[0].column, "statement after .end"));
        }
        if tokens[0].text.starts_with('.') {
            match parse_directive(&ctx)? {
                Some(s) => {
                    netlist.statements.push(s);
                    netlist.lines.push(*line);
                }
                None => ended = true,
            }
            continue;
        }
        let element = parse_element(&ctx)?;
        let key = element.model.name.to_ascii_uppercase();
        if names.contains(&key) {
            return Err(NetlistError::DuplicateName { line: *line, name: element.model.name });
        }
        names.push(key);
        netlist.statements.push(Statement::Element(element));
        netlist.lines.push(*line);
    }

    for (s, &line) in netlist.statements.iter().zip(&netlist.lines) {
        if let Statement::Ic(values) = s {
            for (name, _) in values {
                let target = netlist.elements().find(|e| e.model.name.eq_ignore_ascii_case(name));
                match target.map(|e| &e.model.kind) {
                    Some(ComponentKind::Capacitor { energy: EnergyFn::Scalar(_) })
                    | Some(ComponentKind::Inductor { energy: EnergyFn::Scalar(_) }) => {}
                    _ => {
                        return Err(NetlistError::Syntax {
                            line,
                            column: 1,
                            message: format!("`{name}` is not a capacitor or inductor"),
                        })
                    }
                }
            }
        }
    }
    Ok(netlist)
}

fn format_element(e: &Element) -> String {
    let mut s = format!("{} {}", e.model.name, e.nodes.join(" "));
    let energy = |energy: &EnergyFn| match energy {
        EnergyFn::Scalar(f) => format!(" H={}", format_expr(f)),
        EnergyFn::Quadratic { .. } => " H=quadratic".to_string(),
    };
    match &e.model.kind {
        ComponentKind::Capacitor { energy: h } | ComponentKind::Inductor { energy: h } => s.push_str(&energy(h)),
        ComponentKind::Resistor { law } => match law {
            ResistorLaw::Linear { conductance } => write!(s, " G={conductance:?}").unwrap(),
            ResistorLaw::Conductance(f) => write!(s, " law={}", format_expr(f)).unwrap(),
            ResistorLaw::Resistance(f) => write!(s, " law=r:{}", format_expr(f)).unwrap(),
        },
        ComponentKind::IdealDiode => s.push_str(" ideal"),
        ComponentKind::PnDiode { params } => write!(s, " A={:?} B={:?}", params.a, params.b).unwrap(),
        ComponentKind::Transformer { ratio } => write!(s, " ratio={ratio:?}").unwrap(),
        ComponentKind::NpnTransistor { params: p } => {
            write!(s, " IS={:?} VT={:?} AF={:?} AR={:?}", p.i_s, p.v_t, p.alpha_f, p.alpha_r).unwrap()
        }
        ComponentKind::Source { waveform, .. } => write!(s, " {}", format_waveform(waveform)).unwrap(),
    }
    s
}

impl fmt::Display for Netlist {
    /// Canonical text; parsing it gives back the same statements.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "* {}", self.title)?;
        for s in &self.statements {
            match s {
                Statement::Element(e) => writeln!(f, "{}", format_element(e))?,
                Statement::Ground(g) => writeln!(f, ".ground {}", g.join(" "))?,
                Statement::Tran(t) => {
                    write!(f, ".tran {:?} {:?}", t.tstop, t.dt)?;
                    writeln!(f, "{}", if t.uic { " uic" } else { "" })?
                }
                Statement::Ic(values) => {
                    let parts: Vec<String> = values.iter().map(|(k, v)| format!("{k}={v:?}")).collect();
                    writeln!(f, ".ic {}", parts.join(" "))?
                }
                Statement::Op => writeln!(f, ".op")?,
            }
        }
        writeln!(f, ".end")
    }
}

/// Union graph of all components with its ground set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitGraph {
    pub graph: DirectedGraph,
    pub grounds: GroundSet,
    pub components: Vec<ComponentModel>,
    /// Edges of every component, in component order.
    pub edge_ranges: Vec<Range<usize>>,
    pub warnings: Vec<String>,
}

impl CircuitGraph {
    /// Number of connected components.
    pub fn k(&self) -> usize {
        component_labels(&self.graph).iter().max().map_or(0, |m| m + 1)
    }

    /// Owning component of every edge.
    pub fn edge_owner(&self) -> Vec<usize> {
        let mut owner = vec![0; self.graph.m()];
        for (c, r) in self.edge_ranges.iter().enumerate() {
            for e in r.clone() {
                owner[e] = c;
            }
        }
        owner
    }
}

/// Builds the circuit graph; components without a grounded vertex get one (node `0`
/// if it lies in the component, else its first vertex).
pub fn build_graph(netlist: &Netlist) -> Result<CircuitGraph, NetlistError> {
    let mut graph = DirectedGraph::new();
    let mut edge_ranges = Vec::new();
    for e in netlist.elements() {
        let ids: Vec<usize> = e.nodes.iter().map(|n| graph.ensure_vertex(n)).collect();
        let start = graph.m();
        for ((a, b), name) in e.edge_terminals().into_iter().zip(e.edge_names()) {
            graph.add_edge(name, ids[a], ids[b])?;
        }
        edge_ranges.push(start..graph.m());
    }
    let mut grounds = GroundSet::default();
    for name in netlist.ground_nodes() {
        let v = graph.vertex_index(&name).ok_or_else(|| NetlistError::UnknownNode(name.clone()))?;
        grounds.insert(v);
    }
    let labels = component_labels(&graph);
    let names = |v: usize| graph.vertices()[v].clone();
    grounds.validate(&labels, &names)?;

    let mut warnings = Vec::new();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    for comp in 0..k {
        if grounds.iter().any(|v| labels[v] == comp) {
            continue;
        }
        let members: Vec<usize> = (0..graph.n()).filter(|&v| labels[v] == comp).collect();
        let chosen = members.iter().copied().find(|&v| graph.vertices()[v] == "0").unwrap_or(members[0]);
        let msg = format!("no ground in the component of node `{}`; grounding it", graph.vertices()[chosen]);
        warn!("{msg}");
        warnings.push(msg);
        grounds.insert(chosen);
    }
    Ok(CircuitGraph { graph, grounds, components: netlist.components(), edge_ranges, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{incidence_matrix, reduced_incidence};

    #[test]
    fn values_and_suffixes() {
        assert_eq!(parse_value("5"), Some(5.0));
        assert_eq!(parse_value("1k"), Some(1000.0));
        assert_eq!(parse_value("1u"), Some(1e-6));
        assert_eq!(parse_value("2.5meg"), Some(2.5e6));
        assert_eq!(parse_value("3MEG"), Some(3e6));
        assert_eq!(parse_value("1e-3"), Some(1e-3));
        assert_eq!(parse_value("10mA"), Some(10e-3));
        assert_eq!(parse_value("-4.7nF"), Some(-4.7e-9));
        assert_eq!(parse_value("5V"), Some(5.0));
        assert_eq!(parse_value(".5"), Some(0.5));
        assert_eq!(parse_value("abc"), None);
        assert_eq!(parse_value("1.2.3"), None);
        assert_eq!(parse_value(""), None);
    }

    #[test]
    fn expressions() {
        assert_eq!(parse_expr("poly(0,0,0.5)"), Some(ScalarFn::Poly(vec![0.0, 0.0, 0.5])));
        assert_eq!(parse_expr("tanh(2, 0.1)"), Some(ScalarFn::Tanh { gain: 2.0, scale: 0.1 }));
        assert_eq!(parse_expr("LogCosh(1,1)"), Some(ScalarFn::LogCosh { gain: 1.0, scale: 1.0 }));
        assert_eq!(parse_expr("exp(1)"), None);
        assert_eq!(parse_expr("tanh(1)"), None);
    }

    #[test]
    fn simple_circuit() {
        let n = parse("V1 1 0 DC 5\nR1 1 0 R=10\n.ground 0\n.end").unwrap();
        assert_eq!(n.components().len(), 2);
        let cg = build_graph(&n).unwrap();
        assert_eq!(cg.graph.n(), 2);
        assert_eq!(cg.graph.m(), 2);
        assert_eq!(cg.grounds, GroundSet::new([1]));
        assert!(cg.warnings.is_empty());
        for e in cg.graph.edges() {
            assert_eq!((e.init, e.ter), (0, 1));
        }
    }

    #[test]
    fn transistor_edges() {
        let n = parse("Q1 c b e").unwrap();
        let cg = build_graph(&n).unwrap();
        let name = |v: usize| cg.graph.vertices()[v].as_str();
        let edges: Vec<(&str, &str)> = cg.graph.edges().iter().map(|e| (name(e.init), name(e.ter))).collect();
        assert_eq!(edges, vec![("b", "c"), ("b", "e")]);
        assert_eq!(cg.graph.edges()[0].name, "Q1.1");
    }

    #[test]
    fn self_loop_rejected() {
        let err = parse("R1 1 1 R=5").unwrap_err();
        assert!(matches!(err, NetlistError::Syntax { line: 1, column: 6, .. }), "{err}");
    }

    #[test]
    fn errors_carry_lines() {
        let err = parse("* t\nR1 1 0 R=5\nR1 2 0 R=5").unwrap_err();
        assert_eq!(err, NetlistError::DuplicateName { line: 3, name: "R1".into() });
        let err = parse("R1 1 0 R=5\n.bogus 3").unwrap_err();
        assert!(matches!(err, NetlistError::UnknownDirective { line: 2, .. }));
        let err = parse("R1 1 0 R=abc").unwrap_err();
        assert!(matches!(err, NetlistError::Syntax { line: 1, column: 8, .. }), "{err}");
        let err = parse("X1 1 0 5").unwrap_err();
        assert!(matches!(err, NetlistError::Syntax { line: 1, column: 1, .. }));
        let err = parse("R1 1 0 R=5\n.end\nR2 1 0 R=5").unwrap_err();
        assert_eq!(err.line(), Some(3));
        let err = parse("R1 1 0 R=-5").unwrap_err();
        assert!(matches!(err, NetlistError::Syntax { .. }));
        let err = parse("R1 1 0 law=poly(0,-1)").unwrap_err();
        assert!(matches!(err, NetlistError::Component { line: 1, .. }));
        let err = parse("R1 1 0 R=5\n.ic R1=3").unwrap_err();
        assert_eq!(err.line(), Some(2));
    }

    #[test]
    fn ground_violation() {
        let n = parse("R1 1 0 R=5\nR2 1 2 R=5\n.ground 1 0").unwrap();
        assert!(matches!(build_graph(&n), Err(NetlistError::Graph(GraphError::GroundSetViolation(..)))));
        let n = parse("R1 1 0 R=5\n.ground 7").unwrap();
        assert_eq!(build_graph(&n).unwrap_err(), NetlistError::UnknownNode("7".into()));
    }

    #[test]
    fn auto_ground() {
        let n = parse("R1 a b R=1\nR2 c 0 R=1\n.ground b").unwrap();
        let cg = build_graph(&n).unwrap();
        assert_eq!(cg.warnings.len(), 1);
        let grounded: Vec<&str> = cg.grounds.iter().map(|v| cg.graph.vertices()[v].as_str()).collect();
        assert_eq!(grounded, vec!["b", "0"]);
        let n = parse("R1 x y R=1").unwrap();
        let cg = build_graph(&n).unwrap();
        assert_eq!(cg.grounds, GroundSet::new([0]));
    }

    #[test]
    fn sources_and_continuations() {
        let n = parse("* title here\nV1 1 2 SIN(0 325 50)\nI1 1 2\n+ DC 2m\nO1 1 2 SIN (0, 1, 60, 0.5)\nV2 2 0 3").unwrap();
        assert_eq!(n.title, "title here");
        let waves: Vec<Waveform> = n.components().iter().map(|c| c.source().unwrap().1).collect();
        assert_eq!(waves[0], Waveform::Sin { offset: 0.0, amplitude: 325.0, freq: 50.0, phase: 0.0 });
        assert_eq!(waves[1], Waveform::Dc(2e-3));
        assert_eq!(waves[2], Waveform::Sin { offset: 0.0, amplitude: 1.0, freq: 60.0, phase: 0.5 });
        assert_eq!(waves[3], Waveform::Dc(3.0));
        assert_eq!(n.lines, vec![2, 3, 5, 6]);
    }

    #[test]
    fn directives() {
        let n = parse("C1 1 0 C=1u\nL1 1 0 L=1m\n.tran 5m 1u uic\n.ic C1=2 L1=0.5\n.op\n.ground 0").unwrap();
        assert_eq!(n.tran(), Some(Tran { tstop: 5e-3, dt: 1e-6, uic: true }));
        assert_eq!(n.initial_conditions(), vec![("C1".to_string(), 2.0), ("L1".to_string(), 0.5)]);
        assert_eq!(n.analyses().len(), 2);
    }

    #[test]
    fn canonical_round_trip() {
        let text = "* demo\nV1 1 0 SIN(0 10 50)\nR1 1 2 R=1k\nR2 2 3 law=tanh(1m,0.1)\nR3 3 0 law=r:poly(0,1,0,1)\n\
                    C1 2 0 C=1u\nL1 3 0 H=logcosh(1,2)\nD1 2 4 A=1e-12 B=0.025\nD2 4 0 ideal\n\
                    T1 1 0 5 6 ratio=20\nQ1 5 6 0 IS=1e-14\nI1 5 0 DC 1m\nO1 6 0 DC 1\n\
                    .ground 0\n.tran 1m 1u\n.ic C1=1\n.op\n.end\n";
        let n = parse(text).unwrap();
        let again = parse(&n.to_string()).unwrap();
        assert_eq!(again.statements, n.statements);
        assert_eq!(again.title, n.title);
    }

    #[test]
    fn acdc_graph() {
        let text = "V1 1 2 SIN(0 325 50)\nD1 3 4\nD2 3 5\nD3 4 6\nD4 5 6\nT1 1 2 5 4 ratio=20\n\
                    C1 6 3 C=1m\nO1 6 3 DC 0.1\n.ground 2 3\n";
        let cg = build_graph(&parse(text).unwrap()).unwrap();
        assert_eq!((cg.graph.n(), cg.graph.m(), cg.k()), (6, 9, 2));
        let a = reduced_incidence(&incidence_matrix(&cg.graph), &cg.grounds).unwrap();
        assert_eq!((a.nrows(), a.ncols()), (4, 9));
    }
}
