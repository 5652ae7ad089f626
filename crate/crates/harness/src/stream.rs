//! Text stream files: a header `n=<N> m=<M>`, then one `index<TAB>delta`
//! update per line. Lines starting with `#` are comments.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use trimsketch::{ExactVector, Update};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamFile {
    /// Universe size `n`; every index is below it.
    pub universe: u64,
    /// Declared bound `m` on every running `|x_i|`.
    pub max_magnitude: u64,
    pub updates: Vec<Update>,
}

impl StreamFile {
    /// Checks the declared bounds by replaying the updates.
    pub fn new(universe: u64, max_magnitude: u64, updates: Vec<Update>) -> Result<Self> {
        let stream = Self { universe, max_magnitude, updates };
        stream.check()?;
        Ok(stream)
    }

    fn check(&self) -> Result<()> {
        let mut running: HashMap<u64, i64> = HashMap::new();
        for (pos, u) in self.updates.iter().enumerate() {
            if u.index >= self.universe {
                return Err(HarnessError::invalid(
                    "stream",
                    format!("update {pos}: index {} outside universe {}", u.index, self.universe),
                ));
            }
            let v = running.entry(u.index).or_insert(0);
            *v = v.checked_add(u.delta).ok_or_else(|| {
                HarnessError::invalid("stream", format!("update {pos}: value of {} overflows", u.index))
            })?;
            if v.unsigned_abs() > self.max_magnitude {
                return Err(HarnessError::invalid(
                    "stream",
                    format!("update {pos}: |x_{}| = {} exceeds m = {}", u.index, v.unsigned_abs(), self.max_magnitude),
                ));
            }
        }
        Ok(())
    }

    /// Final frequency vector.
    pub fn vector(&self) -> ExactVector {
        let mut x = ExactVector::new(self.universe);
        for &u in &self.updates {
            // Bounds were checked on construction.
            x.apply(u).expect("index within universe");
        }
        x
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(16 * self.updates.len() + 32);
        writeln!(out, "n={} m={}", self.universe, self.max_magnitude).unwrap();
        for u in &self.updates {
            writeln!(out, "{}\t{}", u.index, u.delta).unwrap();
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.render().as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut header: Option<(u64, u64)> = None;
        let mut updates = Vec::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            match header {
                None => header = Some(parse_header(trimmed, lineno)?),
                Some(_) => updates.push(parse_update(trimmed, lineno)?),
            }
        }
        let (universe, max_magnitude) = header.ok_or_else(|| HarnessError::parse(0, "missing header `n=<N> m=<M>`"))?;
        Self::new(universe, max_magnitude, updates)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

fn parse_header(line: &str, lineno: usize) -> Result<(u64, u64)> {
    let mut n = None;
    let mut m = None;
    for token in line.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| HarnessError::parse(lineno, format!("expected `n=<N> m=<M>`, got {line:?}")))?;
        let value: u64 = value
            .parse()
            .map_err(|_| HarnessError::parse(lineno, format!("bad header value {value:?}")))?;
        match key {
            "n" => n = Some(value),
            "m" => m = Some(value),
            _ => return Err(HarnessError::parse(lineno, format!("unknown header field {key:?}"))),
        }
    }
    match (n, m) {
        (Some(n), Some(m)) => Ok((n, m)),
        _ => Err(HarnessError::parse(lineno, "header needs both n and m")),
    }
}

fn parse_update(line: &str, lineno: usize) -> Result<Update> {
    let mut parts = line.split_whitespace();
    let (Some(index), Some(delta), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(HarnessError::parse(lineno, format!("expected `index<TAB>delta`, got {line:?}")));
    };
    let index = index
        .parse()
        .map_err(|_| HarnessError::parse(lineno, format!("bad index {index:?}")))?;
    let delta = delta
        .parse()
        .map_err(|_| HarnessError::parse(lineno, format!("bad delta {delta:?}")))?;
    Ok(Update::new(index, delta))
}
