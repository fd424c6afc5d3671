//! Tab-separated report and data files.
//!
//! Fields are quoted only when they contain a tab, quote or line break.
//! Lines starting with `#` are comments (used for the run-config header).

use std::io::{Read, Write};

pub fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Necessary)
        .flexible(true)
        .has_headers(false)
        .from_writer(out)
}

/// Reader over a headed TSV file; `#` comment lines are skipped.
pub fn reader<R: Read>(input: R, has_headers: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .comment(Some(b'#'))
        .flexible(true)
        .has_headers(has_headers)
        .from_reader(input)
}

/// Shortest representation that round-trips the value exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_with_tabs_round_trip() {
        let mut buf = Vec::new();
        {
            let mut w = writer(&mut buf);
            w.write_record(["id", "text"]).unwrap();
            w.write_record(["s1", "a\tb \"q\""]).unwrap();
            w.write_record(["s2", "plain"]).unwrap();
        }
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("s2\tplain\n"));
        let mut r = reader(&buf[..], true);
        let rows: Vec<_> = r.records().map(|r| r.unwrap()).collect();
        assert_eq!(&rows[0][1], "a\tb \"q\"");
        assert_eq!(&rows[1][1], "plain");
    }
}
