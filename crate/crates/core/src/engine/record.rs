//! Line records: `;`-separated fields, one record per line, keys compared
//! field by field as raw bytes.

use std::cmp::Ordering;

use crate::error::{Error, Result};

pub const SEP: char = ';';

/// Width of zero-padded timestamps in intermediate files, so that byte order
/// equals numeric order.
pub const TIME_WIDTH: usize = 10;
pub const MAX_PADDED_TIME: i64 = 9_999_999_999;

/// Ordered list of field indices forming a sort or join key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySpec(Vec<usize>);

impl KeySpec {
    pub fn new(fields: impl Into<Vec<usize>>) -> Self {
        let fields = fields.into();
        assert!(!fields.is_empty(), "key spec needs at least one field");
        KeySpec(fields)
    }

    pub fn field(index: usize) -> Self {
        KeySpec(vec![index])
    }

    /// Fields `0..n`.
    pub fn prefix(n: usize) -> Self {
        KeySpec::new((0..n).collect::<Vec<_>>())
    }

    pub fn fields(&self) -> &[usize] {
        &self.0
    }

    pub fn compare(&self, a: &str, b: &str) -> Ordering {
        for &i in &self.0 {
            let ord = nth_field(a, i).as_bytes().cmp(nth_field(b, i).as_bytes());
            if ord != Ordering::Equal {
                return ord;
            }
        }
        Ordering::Equal
    }

    /// Byte ranges of the key fields, for callers that compare one record many times.
    pub(crate) fn ranges(&self, line: &str) -> Vec<(u32, u32)> {
        let bounds = field_bounds(line);
        self.0
            .iter()
            .map(|&i| bounds.get(i).copied().unwrap_or((0, 0)))
            .collect()
    }

    pub(crate) fn extract<'a>(&self, line: &'a str) -> Vec<&'a str> {
        self.0.iter().map(|&i| nth_field(line, i)).collect()
    }
}

fn field_bounds(line: &str) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(6);
    let mut start = 0u32;
    for (i, b) in line.bytes().enumerate() {
        if b == SEP as u8 {
            out.push((start, i as u32));
            start = i as u32 + 1;
        }
    }
    out.push((start, line.len() as u32));
    out
}

/// The `i`th field, or the empty string when the record has fewer fields.
pub fn nth_field(line: &str, i: usize) -> &str {
    line.split(SEP).nth(i).unwrap_or("")
}

pub fn split_fields<'a, const N: usize>(line: &'a str, context: &str) -> Result<[&'a str; N]> {
    let mut out = [""; N];
    let mut parts = line.split(SEP);
    for slot in out.iter_mut() {
        *slot = parts.next().ok_or_else(|| malformed(context, line))?;
    }
    if parts.next().is_some() {
        return Err(malformed(context, line));
    }
    Ok(out)
}

pub(crate) fn malformed(context: &str, line: &str) -> Error {
    Error::MalformedRecord {
        context: context.to_owned(),
        record: line.to_owned(),
    }
}

pub fn pad_time(t: i64) -> String {
    debug_assert!((0..=MAX_PADDED_TIME).contains(&t), "time {t} not paddable");
    format!("{t:0width$}", width = TIME_WIDTH)
}

/// Parses a padded or unpadded decimal timestamp.
pub fn parse_time(field: &str) -> Option<i64> {
    if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    field.parse().ok()
}

/// Strips zero padding: `0000000042` → `42`, `0000000000` → `0`.
pub fn unpad_time(field: &str) -> &str {
    let trimmed = field.trim_start_matches('0');
    if trimmed.is_empty() && !field.is_empty() {
        "0"
    } else {
        trimmed
    }
}
