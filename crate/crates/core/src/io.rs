//! Plain-text export helpers shared by the CSV writers.

use std::io::{self, Write};

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes each line prefixed with `# `.
pub fn write_comments<W: Write>(w: &mut W, lines: &[String]) -> io::Result<()> {
    for line in lines {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

/// Writes a comma separated row of formatted floats after optional leading
/// fields.
pub fn write_row<W: Write>(w: &mut W, leading: &[String], values: &[f64]) -> io::Result<()> {
    let mut fields: Vec<String> = leading.to_vec();
    fields.extend(values.iter().map(|&v| sci(v)));
    writeln!(w, "{}", fields.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn row_layout() {
        let mut buf = Vec::new();
        write_comments(&mut buf, &["hello".into()]).unwrap();
        write_row(&mut buf, &["3".into()], &[0.5, -2.0]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# hello\n3,5.0000000000000000e-1,-2.0000000000000000e0\n"
        );
    }

    proptest! {
        #[test]
        fn sci_round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(sci(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
