//! Reader and writer for a subset of the MATPOWER case format (version 2).
//!
//! Accepted input is a sequence of statements:
//!
//! ```text
//! function mpc = case14          % optional header, sets the case name
//! mpc.version = '2';
//! mpc.baseMVA = 100;
//! mpc.bus = [ ... ];             % >= 13 columns
//! mpc.gen = [ ... ];             % >= 10 columns
//! mpc.branch = [ ... ];          % >= 11 columns
//! mpc.gencost = [ ... ];         % any other field is parsed and ignored
//! ```
//!
//! `%` starts a comment, `...` continues a line, matrix rows end with `;` or a
//! newline and elements are separated by whitespace or commas. Cell arrays
//! (`{ ... }`) and quoted strings are accepted only so they can be skipped.
//!
//! Columns used:
//!
//! | matrix | columns (1-based)                                                     |
//! |--------|-----------------------------------------------------------------------|
//! | bus    | 1 id, 2 type (1 PQ, 2 PV, 3 ref), 3 Pd, 4 Qd, 5 Gs, 6 Bs, 8 Vm         |
//! | gen    | 1 bus, 2 Pg, 6 Vg, 8 status                                           |
//! | branch | 1 from, 2 to, 3 r, 4 x, 5 b, 9 ratio (0 = none), 10 angle, 11 status  |
//!
//! Power quantities (MW, MVAr) are converted to per-unit on `baseMVA`.
//! Phase-shifting transformers (nonzero angle) and isolated buses (type 4)
//! are rejected.

use std::fmt::Write as _;

use super::{Branch, Bus, BusKind, Generator, NetworkCase};
use crate::error::CaseError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str,
    Eq,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Semi,
    Comma,
    Newline,
}

fn syntax(line: usize, msg: impl Into<String>) -> CaseError {
    CaseError::Syntax {
        line,
        msg: msg.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, CaseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut line = 1;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                toks.push((Tok::Newline, line));
                line += 1;
                i += 1;
            }
            ' ' | '\t' | '\r' => i += 1,
            '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '.' if chars[i..].starts_with(&['.', '.', '.']) => {
                // continuation: drop the rest of the line and its newline
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                if i < chars.len() {
                    line += 1;
                    i += 1;
                }
            }
            '=' => {
                toks.push((Tok::Eq, line));
                i += 1;
            }
            '[' => {
                toks.push((Tok::LBracket, line));
                i += 1;
            }
            ']' => {
                toks.push((Tok::RBracket, line));
                i += 1;
            }
            '{' => {
                toks.push((Tok::LBrace, line));
                i += 1;
            }
            '}' => {
                toks.push((Tok::RBrace, line));
                i += 1;
            }
            ';' => {
                toks.push((Tok::Semi, line));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, line));
                i += 1;
            }
            '\'' => {
                let start = line;
                i += 1;
                loop {
                    match chars.get(i) {
                        None | Some('\n') => return Err(syntax(start, "unterminated string")),
                        Some('\'') if chars.get(i + 1) == Some(&'\'') => i += 2,
                        Some('\'') => {
                            i += 1;
                            break;
                        }
                        Some(_) => i += 1,
                    }
                }
                toks.push((Tok::Str, start));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.')
                {
                    if chars[i] == '.' && chars[i..].starts_with(&['.', '.', '.']) {
                        break;
                    }
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                match word.as_str() {
                    "Inf" | "inf" => toks.push((Tok::Num(f64::INFINITY), line)),
                    "NaN" | "nan" => toks.push((Tok::Num(f64::NAN), line)),
                    _ => toks.push((Tok::Ident(word), line)),
                }
            }
            c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                let start = i;
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    let prev = chars[i - 1];
                    let exp_sign = (d == '-' || d == '+') && (prev == 'e' || prev == 'E');
                    if d.is_ascii_alphanumeric() || d == '.' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let word: String = chars[start..i].iter().collect();
                let value = match word.as_str() {
                    "-Inf" | "-inf" => f64::NEG_INFINITY,
                    "+Inf" | "+inf" => f64::INFINITY,
                    w if w.bytes().any(|b| b.is_ascii_digit()) => w
                        .parse::<f64>()
                        .map_err(|_| syntax(line, format!("malformed number `{w}`")))?,
                    w => return Err(syntax(line, format!("malformed number `{w}`"))),
                };
                toks.push((Tok::Num(value), line));
            }
            other => return Err(syntax(line, format!("unexpected character `{other}`"))),
        }
    }
    Ok(toks)
}

struct Row {
    line: usize,
    values: Vec<f64>,
}

enum Value {
    Scalar(f64),
    Text,
    Matrix(Vec<Row>),
    Cell,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|(_, l)| *l)
            .unwrap_or(1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Some(Tok::Newline) | Some(Tok::Semi) | Some(Tok::Comma)) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), CaseError> {
        let line = self.line();
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => Err(syntax(line, format!("expected {what}"))),
        }
    }

    fn ident(&mut self) -> Result<String, CaseError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => Err(syntax(line, "expected identifier")),
        }
    }

    fn value(&mut self) -> Result<Value, CaseError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Num(v)) => Ok(Value::Scalar(v)),
            Some(Tok::Str) => Ok(Value::Text),
            Some(Tok::LBracket) => self.matrix(line).map(Value::Matrix),
            Some(Tok::LBrace) => self.cell(line).map(|_| Value::Cell),
            _ => Err(syntax(line, "expected a value")),
        }
    }

    fn matrix(&mut self, open_line: usize) -> Result<Vec<Row>, CaseError> {
        let mut rows = Vec::new();
        let mut current: Option<Row> = None;
        loop {
            let line = self.line();
            match self.next() {
                None => return Err(syntax(open_line, "unterminated matrix")),
                Some(Tok::RBracket) => break,
                Some(Tok::Num(v)) => current
                    .get_or_insert_with(|| Row {
                        line,
                        values: Vec::new(),
                    })
                    .values
                    .push(v),
                Some(Tok::Comma) => {}
                Some(Tok::Semi) | Some(Tok::Newline) => {
                    if let Some(row) = current.take() {
                        rows.push(row);
                    }
                }
                Some(_) => return Err(syntax(line, "unexpected token in matrix")),
            }
        }
        if let Some(row) = current.take() {
            rows.push(row);
        }
        if let Some(first) = rows.first() {
            let width = first.values.len();
            if let Some(bad) = rows.iter().find(|r| r.values.len() != width) {
                return Err(syntax(
                    bad.line,
                    format!("row has {} columns, expected {width}", bad.values.len()),
                ));
            }
        }
        Ok(rows)
    }

    fn cell(&mut self, open_line: usize) -> Result<(), CaseError> {
        loop {
            let line = self.line();
            match self.next() {
                None => return Err(syntax(open_line, "unterminated cell array")),
                Some(Tok::RBrace) => return Ok(()),
                Some(Tok::Str | Tok::Num(_) | Tok::Comma | Tok::Semi | Tok::Newline) => {}
                Some(_) => return Err(syntax(line, "unexpected token in cell array")),
            }
        }
    }
}

#[derive(Default)]
struct RawCase {
    name: Option<String>,
    base_mva: Option<f64>,
    bus: Option<Vec<Row>>,
    gen: Option<Vec<Row>>,
    branch: Option<Vec<Row>>,
}

fn read_statements(text: &str) -> Result<RawCase, CaseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let mut raw = RawCase::default();
    let mut struct_name: Option<String> = None;
    loop {
        p.skip_newlines();
        let Some(tok) = p.peek().cloned() else { break };
        let line = p.line();
        let Tok::Ident(word) = tok else {
            return Err(syntax(line, "expected a statement"));
        };
        if word == "function" {
            if raw.name.is_some() || struct_name.is_some() {
                return Err(syntax(line, "unexpected function header"));
            }
            p.next();
            let out = p.ident()?;
            p.expect(Tok::Eq, "`=` in function header")?;
            raw.name = Some(p.ident()?);
            struct_name = Some(out);
            continue;
        }
        p.next();
        let Some((base, field)) = word.split_once('.') else {
            return Err(syntax(line, format!("unexpected statement `{word}`")));
        };
        if let Some(expected) = &struct_name {
            if base != expected {
                return Err(syntax(line, format!("unknown variable `{base}`")));
            }
        }
        p.expect(Tok::Eq, "`=`")?;
        let value = p.value()?;
        match (field, value) {
            ("version", Value::Text) => {}
            ("version", Value::Scalar(v)) if v == 2.0 => {}
            ("version", _) => return Err(syntax(line, "only case format version 2 is supported")),
            ("baseMVA", Value::Scalar(v)) => raw.base_mva = Some(v),
            ("baseMVA", _) => return Err(syntax(line, "baseMVA must be a number")),
            ("bus", Value::Matrix(m)) => raw.bus = Some(m),
            ("gen", Value::Matrix(m)) => raw.gen = Some(m),
            ("branch", Value::Matrix(m)) => raw.branch = Some(m),
            ("bus" | "gen" | "branch", _) => {
                return Err(syntax(line, format!("`{field}` must be a matrix")))
            }
            _ => {}
        }
        match p.peek() {
            None | Some(Tok::Semi) | Some(Tok::Newline) | Some(Tok::Comma) => {}
            Some(_) => return Err(syntax(p.line(), "expected end of statement")),
        }
    }
    Ok(raw)
}

fn need_cols(rows: &[Row], min: usize, what: &str) -> Result<(), CaseError> {
    match rows.first() {
        Some(r) if r.values.len() < min => Err(syntax(
            r.line,
            format!("{what} matrix needs at least {min} columns, found {}", r.values.len()),
        )),
        _ => Ok(()),
    }
}

fn as_id(v: f64, line: usize, what: &str) -> Result<usize, CaseError> {
    if v.is_finite() && v >= 1.0 && v <= 1e9 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(syntax(line, format!("{what} must be a positive integer, got {v}")))
    }
}

fn finite(v: f64, line: usize, what: &str) -> Result<f64, CaseError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(syntax(line, format!("{what} must be finite")))
    }
}

/// Parse MATPOWER-format case text into a validated [`NetworkCase`].
pub fn parse_case(text: &str) -> Result<NetworkCase, CaseError> {
    let raw = read_statements(text)?;
    let base_mva = raw.base_mva.ok_or(CaseError::MissingSection("baseMVA"))?;
    if !(base_mva.is_finite() && base_mva > 0.0) {
        return Err(CaseError::Unsupported(format!("baseMVA must be positive, got {base_mva}")));
    }
    let bus_rows = raw.bus.ok_or(CaseError::MissingSection("bus"))?;
    let gen_rows = raw.gen.ok_or(CaseError::MissingSection("gen"))?;
    let branch_rows = raw.branch.ok_or(CaseError::MissingSection("branch"))?;
    need_cols(&bus_rows, 13, "bus")?;
    need_cols(&gen_rows, 10, "gen")?;
    need_cols(&branch_rows, 11, "branch")?;

    let mut generators = Vec::new();
    for row in &gen_rows {
        let v = &row.values;
        if finite(v[7], row.line, "generator status")? <= 0.0 {
            continue;
        }
        generators.push(Generator {
            bus: as_id(v[0], row.line, "generator bus")?,
            p_gen: finite(v[1], row.line, "Pg")? / base_mva,
            v_setpoint: finite(v[5], row.line, "Vg")?,
        });
    }

    let mut buses = Vec::with_capacity(bus_rows.len());
    for row in &bus_rows {
        let v = &row.values;
        let id = as_id(v[0], row.line, "bus id")?;
        let kind = match v[1] {
            t if t == 1.0 => BusKind::Pq,
            t if t == 2.0 => BusKind::Pv,
            t if t == 3.0 => BusKind::Slack,
            t if t == 4.0 => {
                return Err(CaseError::Unsupported(format!("isolated bus {id} (type 4)")))
            }
            t => return Err(syntax(row.line, format!("invalid bus type {t}"))),
        };
        let vm = finite(v[7], row.line, "Vm")?;
        let v_setpoint = generators
            .iter()
            .find(|g| g.bus == id)
            .filter(|_| kind != BusKind::Pq)
            .map_or(vm, |g| g.v_setpoint);
        buses.push(Bus {
            id,
            kind,
            p_load: finite(v[2], row.line, "Pd")? / base_mva,
            q_load: finite(v[3], row.line, "Qd")? / base_mva,
            g_shunt: finite(v[4], row.line, "Gs")? / base_mva,
            b_shunt: finite(v[5], row.line, "Bs")? / base_mva,
            v_setpoint,
            has_controller: kind == BusKind::Pq,
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for row in &branch_rows {
        let v = &row.values;
        let from_bus = as_id(v[0], row.line, "from bus")?;
        let to_bus = as_id(v[1], row.line, "to bus")?;
        if finite(v[9], row.line, "shift angle")? != 0.0 {
            return Err(CaseError::Unsupported(format!(
                "phase-shifting transformer on branch {from_bus}-{to_bus}"
            )));
        }
        let ratio = finite(v[8], row.line, "tap ratio")?;
        branches.push(Branch {
            from_bus,
            to_bus,
            r: finite(v[2], row.line, "r")?,
            x: finite(v[3], row.line, "x")?,
            b_sh: finite(v[4], row.line, "b")?,
            tap_ratio: if ratio == 0.0 { 1.0 } else { ratio },
            in_service: finite(v[10], row.line, "branch status")? > 0.0,
        });
    }

    let case = NetworkCase {
        name: raw.name.unwrap_or_else(|| "case".to_string()),
        base_mva,
        buses,
        branches,
        generators,
    };
    case.validate()?;
    Ok(case)
}

fn sanitize_name(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if !s.starts_with(|c: char| c.is_ascii_alphabetic()) {
        s.insert_str(0, "case_");
    }
    s
}

/// Serialize a case back into the supported text subset.
pub fn write_case(case: &NetworkCase) -> String {
    let base = case.base_mva;
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {}", sanitize_name(&case.name));
    out.push_str("mpc.version = '2';\n");
    let _ = writeln!(out, "mpc.baseMVA = {base:?};");
    out.push_str("\n%% bus data\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\nmpc.bus = [\n");
    for b in &case.buses {
        let kind = match b.kind {
            BusKind::Pq => 1,
            BusKind::Pv => 2,
            BusKind::Slack => 3,
        };
        let _ = writeln!(
            out,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t1\t{:?}\t0\t0\t1\t1.1\t0.9;",
            b.id,
            kind,
            b.p_load * base,
            b.q_load * base,
            b.g_shunt * base,
            b.b_shunt * base,
            b.v_setpoint
        );
    }
    out.push_str("];\n\n%% generator data\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\nmpc.gen = [\n");
    for g in &case.generators {
        let _ = writeln!(
            out,
            "\t{}\t{:?}\t0\t0\t0\t{:?}\t{base:?}\t1\t0\t0;",
            g.bus,
            g.p_gen * base,
            g.v_setpoint
        );
    }
    out.push_str("];\n\n%% branch data\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\nmpc.branch = [\n");
    for br in &case.branches {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t0\t0\t0\t{:?}\t0\t{};",
            br.from_bus,
            br.to_bus,
            br.r,
            br.x,
            br.b_sh,
            br.tap_ratio,
            u8::from(br.in_service)
        );
    }
    out.push_str("];\n");
    out
}
