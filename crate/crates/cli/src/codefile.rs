//! Plain-text code records.
//!
//! ```text
//! cssbo-code v1
//! n 18
//! k 2
//! origin hgp
//! h1 3 3
//! 110
//! ...
//! hx 9 18
//! 110100...
//! hz 9 18
//! ...
//! ```
//!
//! `origin` is `bb <ell> <m> <bits>`, `hgp` (followed by `h1` and `h2`
//! blocks) or `explicit`. Logical bases are not stored; they are recomputed
//! on load.

use std::fmt::Write as _;

use cssbo_core::code::{BbParams, Candidate, CodeOrigin, CssCode, HgpParams};
use cssbo_core::gf2::{BitMatrix, BitVector};
use cssbo_core::optimizer::bitstring;

use crate::error::{CliError, Result};

pub const HEADER: &str = "cssbo-code v1";

fn write_matrix(out: &mut String, name: &str, m: &BitMatrix) {
    writeln!(out, "{name} {} {}", m.rows(), m.cols()).unwrap();
    for r in 0..m.rows() {
        let row: String = (0..m.cols()).map(|c| if m.get(r, c) { '1' } else { '0' }).collect();
        out.push_str(&row);
        out.push('\n');
    }
}

pub fn to_text(code: &CssCode) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}\nn {}\nk {}", code.n(), code.k()).unwrap();
    match code.origin() {
        CodeOrigin::Bb(p) => writeln!(out, "origin bb {} {} {}", p.ell, p.m, bitstring::to_string(&p.bits)).unwrap(),
        CodeOrigin::Hgp(p) => {
            out.push_str("origin hgp\n");
            write_matrix(&mut out, "h1", &p.h1);
            write_matrix(&mut out, "h2", &p.h2);
        }
        CodeOrigin::Explicit => out.push_str("origin explicit\n"),
    }
    write_matrix(&mut out, "hx", code.hx());
    write_matrix(&mut out, "hz", code.hz());
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        loop {
            match self.inner.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => return Ok((i + 1, l.trim())),
                None => return Err(parse_err(0, &format!("unexpected end of record, expected {what}"))),
            }
        }
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (line, text) = self.next(key)?;
        let mut parts = text.split_whitespace();
        if parts.next() != Some(key) {
            return Err(parse_err(line, &format!("expected `{key}`")));
        }
        Ok((line, parts.collect()))
    }

    fn matrix(&mut self, key: &str) -> Result<BitMatrix> {
        let (line, dims) = self.keyed(key)?;
        let [rows, cols] = dims[..] else {
            return Err(parse_err(line, "expected `<rows> <cols>`"));
        };
        let rows: usize = number(line, rows)?;
        let cols: usize = number(line, cols)?;
        let mut out = Vec::with_capacity(rows);
        for _ in 0..rows {
            let (line, text) = self.next("matrix row")?;
            let row = bitstring::parse(text).map_err(|e| parse_err(line, &e.to_string()))?;
            if row.len() != cols {
                return Err(parse_err(line, &format!("row has {} entries, expected {cols}", row.len())));
            }
            out.push(row);
        }
        Ok(BitMatrix::from_rows_with_cols(&out, cols)?)
    }
}

fn parse_err(line: usize, msg: &str) -> CliError {
    CliError::Config(format!("code record line {line}: {msg}"))
}

fn number(line: usize, s: &str) -> Result<usize> {
    s.parse().map_err(|_| parse_err(line, &format!("bad number {s:?}")))
}

/// Parses a record and rebuilds the code, checking the stored `n` and `k`.
pub fn from_text(text: &str) -> Result<CssCode> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let (line, header) = lines.next("header")?;
    if header != HEADER {
        return Err(parse_err(line, &format!("expected header {HEADER:?}")));
    }
    let (line, n) = lines.keyed("n")?;
    let n = number(line, n.first().copied().unwrap_or(""))?;
    let (line, k) = lines.keyed("k")?;
    let k = number(line, k.first().copied().unwrap_or(""))?;
    let (line, origin) = lines.keyed("origin")?;
    let origin = match origin[..] {
        ["bb", ell, m, bits] => {
            let bits: BitVector = bitstring::parse(bits).map_err(|e| parse_err(line, &e.to_string()))?;
            CodeOrigin::Bb(BbParams::new(number(line, ell)?, number(line, m)?, bits)?)
        }
        ["hgp"] => {
            let h1 = lines.matrix("h1")?;
            let h2 = lines.matrix("h2")?;
            CodeOrigin::Hgp(HgpParams::new(h1, h2)?)
        }
        ["explicit"] => CodeOrigin::Explicit,
        _ => return Err(parse_err(line, "unknown origin")),
    };
    let hx = lines.matrix("hx")?;
    let hz = lines.matrix("hz")?;
    let code = match CssCode::new(hx, hz, origin)? {
        Candidate::Valid(c) => c,
        Candidate::Invalid(r) => return Err(CliError::InvalidCode(format!("stored code is not usable: {r:?}"))),
    };
    if code.n() != n || code.k() != k {
        return Err(CliError::InvalidCode(format!("record says [[{n},{k}]] but the matrices give [[{},{}]]", code.n(), code.k())));
    }
    Ok(code)
}
