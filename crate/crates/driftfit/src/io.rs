//! Text serialization helpers: full-precision floats, CSV lines, and the
//! flat `key=value` format used for model and configuration files.

use crate::error::{Error, Result};

/// Format a float with 17 significant digits.
///
/// 17 digits guarantee that `parse_f64(&fmt_float(v)) == v` bit-for-bit,
/// so files written by one command can seed another without drift.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parse a float, rejecting NaN (which would poison downstream comparisons).
pub fn parse_f64(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("expected a number, got {s:?}")))?;
    if v.is_nan() {
        return Err(Error::Parse("NaN is not a valid value".into()));
    }
    Ok(v)
}

pub fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("expected a non-negative integer, got {s:?}")))
}

/// Split one CSV record and check the field count.
pub fn csv_fields(line: &str, expected: usize, line_no: usize) -> Result<Vec<&str>> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(Error::Parse(format!(
            "line {line_no}: expected {expected} comma-separated fields, got {}",
            fields.len()
        )));
    }
    Ok(fields)
}

/// Parse a comma-separated list of floats (used for vector-valued keys).
pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_f64).collect()
}

/// Parse a flat `key = value` document into ordered pairs.
///
/// Blank lines and `#` comments are skipped; keys may repeat (later wins,
/// decided by the consumer). Values keep internal whitespace.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("line {}: expected key=value, got {raw:?}", idx + 1))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", idx + 1)));
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        for &v in &[
            0.0,
            -0.1,
            1.0 / 3.0,
            -0.8,
            6.123233995736766e-17,
            1e300,
            -2.5e-308,
        ] {
            let s = fmt_float(v);
            assert_eq!(parse_f64(&s).unwrap(), v, "round trip failed for {s}");
        }
    }

    #[test]
    fn nan_is_rejected() {
        assert!(parse_f64("NaN").is_err());
    }

    #[test]
    fn kv_parsing_skips_comments_and_trims() {
        let doc = "# experiment\n\n theta0 = -0.1 \nnp=1000\nlist = 1, 2 ,3\n";
        let pairs = parse_kv(doc).unwrap();
        assert_eq!(
            pairs,
            vec![
                ("theta0".to_string(), "-0.1".to_string()),
                ("np".to_string(), "1000".to_string()),
                ("list".to_string(), "1, 2 ,3".to_string()),
            ]
        );
        assert_eq!(parse_f64_list("1, 2 ,3").unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn kv_rejects_malformed_lines() {
        assert!(parse_kv("just words").is_err());
        assert!(parse_kv("= value").is_err());
    }

    #[test]
    fn csv_field_count_is_enforced() {
        assert_eq!(csv_fields("a,b,c", 3, 1).unwrap(), vec!["a", "b", "c"]);
        assert!(csv_fields("a,b", 3, 4).is_err());
    }
}
