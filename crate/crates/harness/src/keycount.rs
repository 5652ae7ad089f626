//! Key-count files: either whitespace-separated key occurrences, or one
//! `key count` pair per line. The format is chosen from the first data line:
//! exactly two tokens with an integer second token means pairs.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use trimsketch::Update;

use crate::error::{HarnessError, Result};
use crate::stream::StreamFile;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyCounts {
    /// `keys[i]` is the key behind coordinate `i`, in first-seen order.
    pub keys: Vec<String>,
    pub stream: StreamFile,
}

impl KeyCounts {
    /// `id<TAB>key` lines.
    pub fn render_mapping(&self) -> String {
        self.keys.iter().enumerate().map(|(i, k)| format!("{i}\t{k}\n")).collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Format {
    Occurrences,
    Pairs,
}

fn detect(tokens: &[&str]) -> Format {
    if tokens.len() == 2 && tokens[1].parse::<i64>().is_ok() {
        Format::Pairs
    } else {
        Format::Occurrences
    }
}

pub fn parse_keycounts<R: Read>(r: R) -> Result<KeyCounts> {
    let mut ids: HashMap<String, u64> = HashMap::new();
    let mut keys: Vec<String> = Vec::new();
    let mut totals: Vec<i64> = Vec::new();
    let mut format = None;
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| HarnessError::parse(lineno, e.to_string()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let format = *format.get_or_insert_with(|| detect(&tokens));
        let mut add = |key: &str, count: i64| -> Result<()> {
            let id = *ids.entry(key.to_owned()).or_insert_with(|| {
                keys.push(key.to_owned());
                totals.push(0);
                keys.len() as u64 - 1
            });
            let slot = &mut totals[id as usize];
            *slot = slot
                .checked_add(count)
                .ok_or_else(|| HarnessError::parse(lineno, format!("count for {key:?} overflows")))?;
            Ok(())
        };
        match format {
            Format::Occurrences => {
                for key in &tokens {
                    add(key, 1)?;
                }
            }
            Format::Pairs => {
                let [key, count] = tokens[..] else {
                    return Err(HarnessError::parse(lineno, format!("expected `key count`, got {line:?}")));
                };
                let count = count
                    .parse::<i64>()
                    .map_err(|_| HarnessError::parse(lineno, format!("bad count {count:?}")))?;
                add(key, count)?;
            }
        }
    }
    let updates: Vec<Update> = totals
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0)
        .map(|(i, &c)| Update::new(i as u64, c))
        .collect();
    let m = totals.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0);
    let stream = StreamFile::new(keys.len() as u64, m, updates)?;
    Ok(KeyCounts { keys, stream })
}

pub fn ingest_keycounts(path: &Path) -> Result<KeyCounts> {
    parse_keycounts(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occurrences_are_counted_in_first_seen_order() {
        let kc = parse_keycounts("a a b\n".as_bytes()).unwrap();
        assert_eq!(kc.keys, vec!["a", "b"]);
        let x = kc.stream.vector();
        assert_eq!((x.get(0), x.get(1)), (2, 1));
        assert_eq!(kc.render_mapping(), "0\ta\n1\tb\n");
    }

    #[test]
    fn empty_input_gives_empty_stream() {
        let kc = parse_keycounts("".as_bytes()).unwrap();
        assert!(kc.keys.is_empty());
        assert_eq!(kc.stream.universe, 0);
        assert!(kc.stream.updates.is_empty());
    }

    #[test]
    fn pair_fixture_with_one_dominant_key() {
        let kc = parse_keycounts("google 98554\nyahoo 10\nebay 10\n".as_bytes()).unwrap();
        let x = kc.stream.vector();
        assert_eq!(x.magnitudes(), vec![98554, 10, 10]);
        assert_eq!(kc.stream.max_magnitude, 98554);
        assert_eq!(kc.keys[0], "google");
    }

    #[test]
    fn repeated_pairs_accumulate() {
        let kc = parse_keycounts("a 3\nb 1\na 4\n".as_bytes()).unwrap();
        assert_eq!(kc.stream.vector().get(0), 7);
    }

    #[test]
    fn malformed_pair_line_reports_its_number() {
        let err = parse_keycounts("a 3\nb 1\nc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, HarnessError::Parse { line: 3, .. }), "{err}");
        let err = parse_keycounts("a 3\n\nb x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, HarnessError::Parse { line: 3, .. }), "{err}");
    }
}
