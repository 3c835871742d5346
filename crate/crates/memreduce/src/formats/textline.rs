//! Line-oriented text input and output.
//!
//! Text files are split at arbitrary byte offsets, so a reader assigned
//! `[start, start + length)` must resynchronize on line boundaries: a line
//! belongs to the split that contains its first byte. Keys are the byte
//! offset of the line start; values are the line bytes without the
//! trailing newline.

use std::fs;
use std::path::Path;

use crate::types::{Key, Value};

use super::pairfile::write_file_atomic;
use super::FormatError;

/// Reads the lines whose first byte falls in `[start, start + length)`.
///
/// A line that merely straddles into the range from an earlier offset is
/// skipped (its owner is the previous split); a line that starts inside
/// the range is read to its end even past `start + length`.
pub fn read_lines_range(
    os_path: &Path,
    start: u64,
    length: u64,
) -> Result<Vec<(Key, Value)>, FormatError> {
    let bytes = match fs::read(os_path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(FormatError::InputNotFound(os_path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    Ok(lines_in_range(&bytes, start, length))
}

/// Pure resynchronizing scan over in-memory bytes; see [`read_lines_range`].
pub fn lines_in_range(bytes: &[u8], start: u64, length: u64) -> Vec<(Key, Value)> {
    let n = bytes.len();
    let start = (start as usize).min(n);
    let end = ((start as u64 + length) as usize).min(n);
    // First line start at or after `start`: offset 0 always starts a line;
    // otherwise a line starts right after a newline byte.
    let mut pos = if start == 0 {
        0
    } else if bytes[start - 1] == b'\n' {
        start
    } else {
        match bytes[start - 1..].iter().position(|&b| b == b'\n') {
            Some(rel) => start + rel,
            None => n,
        }
    };
    let mut out = Vec::new();
    while pos < end {
        let line_end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|rel| pos + rel)
            .unwrap_or(n);
        out.push((Key::Int(pos as i64), Value::Bytes(bytes[pos..line_end].to_vec())));
        pos = line_end + 1;
    }
    out
}

/// Renders records as `key<TAB>value` lines and writes them atomically.
///
/// Byte-valued fields are written verbatim; other shapes use their debug
/// rendering, which keeps diagnostic output readable without committing to
/// a parseable encoding for them.
pub fn write_lines<'a, I>(os_path: &Path, records: I) -> Result<u64, FormatError>
where
    I: IntoIterator<Item = (&'a Key, &'a Value)>,
{
    let mut out = Vec::new();
    for (k, v) in records {
        render_field_key(k, &mut out);
        out.push(b'\t');
        render_field_value(v, &mut out);
        out.push(b'\n');
    }
    write_file_atomic(os_path, &out)?;
    Ok(out.len() as u64)
}

fn render_field_key(k: &Key, out: &mut Vec<u8>) {
    match k {
        Key::Int(i) => out.extend_from_slice(i.to_string().as_bytes()),
        Key::Text(t) => out.extend_from_slice(t),
        Key::BlockIdx { row, col } => out.extend_from_slice(format!("({row},{col})").as_bytes()),
    }
}

fn render_field_value(v: &Value, out: &mut Vec<u8>) {
    match v {
        Value::Bytes(b) => out.extend_from_slice(b),
        Value::Count(c) => out.extend_from_slice(c.to_string().as_bytes()),
        other => out.extend_from_slice(format!("{other:?}").as_bytes()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &[u8] = b"alpha beta\ngamma\n\ndelta epsilon zeta\nlast-no-newline";

    fn full(bytes: &[u8]) -> Vec<(Key, Value)> {
        lines_in_range(bytes, 0, bytes.len() as u64)
    }

    #[test]
    fn full_read_keys_are_line_start_offsets() {
        let lines = full(TEXT);
        let texts: Vec<&[u8]> = lines
            .iter()
            .map(|(_, v)| match v {
                Value::Bytes(b) => b.as_slice(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(
            texts,
            vec![
                b"alpha beta".as_slice(),
                b"gamma",
                b"",
                b"delta epsilon zeta",
                b"last-no-newline"
            ]
        );
        let offsets: Vec<i64> = lines
            .iter()
            .map(|(k, _)| match k {
                Key::Int(i) => *i,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(offsets, vec![0, 11, 17, 18, 37]);
    }

    #[test]
    fn any_two_way_cut_partitions_the_lines() {
        let n = TEXT.len() as u64;
        let whole = full(TEXT);
        for cut in 0..=n {
            let mut lo = lines_in_range(TEXT, 0, cut);
            let hi = lines_in_range(TEXT, cut, n - cut);
            lo.extend(hi);
            assert_eq!(lo, whole, "cut at {cut}");
        }
    }

    #[test]
    fn straddling_line_belongs_to_the_split_with_its_first_byte() {
        // "alpha beta\n" occupies [0, 11); a split starting at 4 must skip it.
        let lines = lines_in_range(TEXT, 4, 10);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].0, Key::Int(11));
        // ...and a split starting exactly at a line start owns that line.
        let lines = lines_in_range(TEXT, 11, 3);
        assert_eq!(lines[0].0, Key::Int(11));
    }

    #[test]
    fn line_starting_inside_runs_past_the_range_end() {
        // Range [18, 20) contains only the start of "delta epsilon zeta".
        let lines = lines_in_range(TEXT, 18, 2);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].1, Value::Bytes(b"delta epsilon zeta".to_vec()));
    }

    #[test]
    fn write_then_disk_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        let records = vec![
            (Key::text("the"), Value::Count(3)),
            (Key::text("quick"), Value::Count(1)),
        ];
        write_lines(&path, records.iter().map(|(k, v)| (k, v))).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"the\t3\nquick\t1\n");
        let back = read_lines_range(&path, 0, 1 << 20).unwrap();
        assert_eq!(back.len(), 2);
    }
}
