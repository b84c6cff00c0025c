//! Plain-text number formatting and header conventions shared by the mesh
//! and report writers.
//!
//! Every file emitted by this crate starts with `#`-prefixed comment lines
//! recording the crate version and the parameters that produced the file;
//! readers skip blank lines and `#` comments.

use std::fmt::Write as _;

/// Formats a float with 17 significant digits, enough to round-trip any
/// `f64` exactly. Used for state dumps, mesh coordinates, and report data.
pub fn full(x: f64) -> String {
    format!("{x:.16e}")
}

/// Formats a float with 6 significant digits for human-readable summaries.
pub fn summary(x: f64) -> String {
    format!("{x:.5e}")
}

/// Renders header comment lines: the crate version line followed by one
/// line per caller-supplied entry, each prefixed with `# `.
pub fn header(entries: &[(&str, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# dmrfem {}", crate::VERSION);
    for (key, value) in entries {
        let _ = writeln!(s, "# {key}: {value}");
    }
    s
}

/// Strips comments and blank lines from a text file, yielding
/// `(1-based line number, trimmed content)` for each payload line.
pub fn payload_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            None
        } else {
            Some((i + 1, t))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_round_trips_f64() {
        for &x in &[
            0.1,
            std::f64::consts::PI,
            1.0 / 3.0,
            6.02e23,
            -7.431e-300,
            f64::MIN_POSITIVE,
        ] {
            let s = full(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s} did not round-trip");
        }
    }

    #[test]
    fn payload_skips_comments_and_blanks() {
        let text = "# header\n\n  data 1\n# mid comment\ndata 2\n   \n";
        let got: Vec<_> = payload_lines(text).collect();
        assert_eq!(got, vec![(3, "data 1"), (5, "data 2")]);
    }

    #[test]
    fn header_has_version_and_entries() {
        let h = header(&[("seed", "42".to_string())]);
        assert!(h.starts_with("# dmrfem "));
        assert!(h.contains("# seed: 42"));
        assert!(h.lines().all(|l| l.starts_with('#')));
    }
}
