use std::io::Write;

/// A row that was read but not accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    /// 1-based line number in the source file (the header is line 1).
    pub line: u64,
    pub reason: String,
}

/// Per-file bookkeeping of accepted and skipped rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub accepted: usize,
    /// Rows whose type is explicitly marked irrelevant.
    pub discarded: usize,
    /// Rows whose type is not in the taxonomy at all.
    pub unknown_type: usize,
    /// Well-formed rows that fall outside the study window or area.
    pub out_of_range: usize,
    /// Malformed rows.
    pub rejected: Vec<RowIssue>,
}

impl ParseReport {
    pub fn rows_seen(&self) -> usize {
        self.accepted + self.discarded + self.unknown_type + self.out_of_range + self.rejected.len()
    }

    pub(crate) fn reject(&mut self, line: u64, reason: impl Into<String>) {
        self.rejected.push(RowIssue {
            line,
            reason: reason.into(),
        });
    }

    /// Writes the report as `key=value` lines followed by one line per
    /// rejected row.
    pub fn write_summary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "accepted={}", self.accepted)?;
        writeln!(w, "discarded={}", self.discarded)?;
        writeln!(w, "unknown_type={}", self.unknown_type)?;
        writeln!(w, "out_of_range={}", self.out_of_range)?;
        writeln!(w, "malformed={}", self.rejected.len())?;
        for issue in &self.rejected {
            writeln!(w, "line {}: {}", issue.line, issue.reason)?;
        }
        Ok(())
    }
}

/// Line number of a CSV record, defaulting to 0 when the reader lost track.
pub(crate) fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Checks that a CSV header matches `expected` exactly (modulo whitespace).
pub(crate) fn check_header(found: &csv::StringRecord, expected: &[&str]) -> crate::Result<()> {
    let ok = found.len() == expected.len()
        && found.iter().zip(expected).all(|(a, b)| a.trim() == *b);
    if ok {
        Ok(())
    } else {
        Err(crate::Error::Input(format!(
            "expected CSV header `{}`, found `{}`",
            expected.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )))
    }
}
