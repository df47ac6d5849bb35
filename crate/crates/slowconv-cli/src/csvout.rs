//! Certificate table serialization.
//!
//! One row per certificate under a fixed header. Every numeric field is
//! written with 17 significant digits (`{:.16e}`), which round-trips any
//! finite `f64` bit for bit; the decimal separator is always `.` and no
//! locale is consulted. Optional fields are empty strings.

use std::io::Write;
use std::path::Path;

use slowconv::certificate::{CertTest, Certificate};

/// The fixed header line. `k` is the construction stage (0 for run-global
/// rows), `n` the time index, `weight` the random-weight trial; the columns
/// after `pass` echo the certificate's context quantities.
pub const HEADER: &str = "kind,k,n,weight,lhs,rhs,margin,pass,l_window,eps_k,h_k,m_set,m_core,m_a,residual,ratio,threshold";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Signed slack of the tested inequality: positive values pass with room,
/// negative values fail. For exact tests it is the raw difference.
pub fn margin(cert: &Certificate) -> f64 {
    match cert.test {
        CertTest::StrictAbove => cert.lhs - cert.rhs - cert.eta,
        CertTest::AtLeast => cert.lhs - cert.rhs + cert.eta,
        CertTest::Within => cert.eta - (cert.lhs - cert.rhs).abs(),
        CertTest::Exact => cert.lhs - cert.rhs,
    }
}

/// Renders the full table, header first, one line per certificate, with a
/// trailing newline.
pub fn render(certs: &[Certificate]) -> String {
    let mut out = String::with_capacity(80 * (certs.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for cert in certs {
        let ctx = &cert.context;
        let fields = [
            cert.kind.as_str().to_string(),
            cert.stage.to_string(),
            cert.n.map(|n| n.to_string()).unwrap_or_default(),
            cert.weight_trial.map(|t| t.to_string()).unwrap_or_default(),
            fmt_f64(cert.lhs),
            fmt_f64(cert.rhs),
            fmt_f64(margin(cert)),
            cert.pass.to_string(),
            fmt_opt(ctx.l_window),
            fmt_opt(ctx.eps_k),
            fmt_opt(ctx.h_k),
            fmt_opt(ctx.m_set),
            fmt_opt(ctx.m_core),
            fmt_opt(ctx.m_a),
            fmt_opt(ctx.residual),
            fmt_opt(ctx.ratio),
            fmt_opt(ctx.threshold),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, certs: &[Certificate]) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(render(certs).as_bytes())
}

/// One parsed row of the certificate table.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub kind: String,
    pub k: usize,
    pub n: Option<u64>,
    pub weight: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
    pub l_window: Option<f64>,
    pub eps_k: Option<f64>,
    pub h_k: Option<f64>,
    pub m_set: Option<f64>,
    pub m_core: Option<f64>,
    pub m_a: Option<f64>,
    pub residual: Option<f64>,
    pub ratio: Option<f64>,
    pub threshold: Option<f64>,
}

/// Parses text produced by [`render`] back into rows. The 17-digit decimal
/// fields reproduce the original `f64` values exactly.
pub fn parse(text: &str) -> Result<Vec<CsvRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == HEADER => {}
        Some(other) => return Err(format!("unexpected header: {other}")),
        None => return Err("empty certificate table".into()),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let expected = HEADER.split(',').count();
        if fields.len() != expected {
            return Err(format!(
                "line {}: expected {} fields, found {}",
                lineno + 2,
                expected,
                fields.len()
            ));
        }
        let f64_at = |i: usize| -> Result<f64, String> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| format!("line {}: field {}: {e}", lineno + 2, i + 1))
        };
        let opt_f64_at = |i: usize| -> Result<Option<f64>, String> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                f64_at(i).map(Some)
            }
        };
        rows.push(CsvRow {
            kind: fields[0].to_string(),
            k: fields[1]
                .parse::<usize>()
                .map_err(|e| format!("line {}: stage: {e}", lineno + 2))?,
            n: if fields[2].is_empty() {
                None
            } else {
                Some(
                    fields[2]
                        .parse::<u64>()
                        .map_err(|e| format!("line {}: index: {e}", lineno + 2))?,
                )
            },
            weight: if fields[3].is_empty() {
                None
            } else {
                Some(
                    fields[3]
                        .parse::<usize>()
                        .map_err(|e| format!("line {}: weight: {e}", lineno + 2))?,
                )
            },
            lhs: f64_at(4)?,
            rhs: f64_at(5)?,
            margin: f64_at(6)?,
            pass: match fields[7] {
                "true" => true,
                "false" => false,
                other => return Err(format!("line {}: pass: {other}", lineno + 2)),
            },
            l_window: opt_f64_at(8)?,
            eps_k: opt_f64_at(9)?,
            h_k: opt_f64_at(10)?,
            m_set: opt_f64_at(11)?,
            m_core: opt_f64_at(12)?,
            m_a: opt_f64_at(13)?,
            residual: opt_f64_at(14)?,
            ratio: opt_f64_at(15)?,
            threshold: opt_f64_at(16)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use slowconv::certificate::{CertContext, CertKind, CertTest};

    fn sample() -> Vec<Certificate> {
        vec![
            Certificate::new(CertKind::Deviation, CertTest::StrictAbove, 0.1, 0.05, 1e-10)
                .at_stage(1)
                .at_n(226)
                .with_context(CertContext {
                    l_window: Some(57.0),
                    m_a: Some(0.375),
                    ..CertContext::default()
                }),
            Certificate::new(CertKind::Vanishing, CertTest::Exact, 0.0, 0.0, 0.0)
                .at_stage(2)
                .at_weight_trial(3),
            Certificate::new(CertKind::Budget, CertTest::StrictAbove, 0.2, 0.19, 0.0),
        ]
    }

    #[test]
    fn three_certificates_render_as_four_lines() {
        let text = render(&sample());
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with(HEADER));
    }

    #[test]
    fn an_empty_table_is_header_only() {
        let text = render(&[]);
        assert_eq!(text, format!("{HEADER}\n"));
        assert!(parse(&text).unwrap().is_empty());
    }

    #[test]
    fn parsing_reproduces_lhs_and_rhs_bit_for_bit() {
        // Awkward values: subnormal-ish magnitudes, long mantissas, and
        // numbers that do not terminate in decimal.
        let mut certs = sample();
        certs.push(Certificate::new(
            CertKind::Mass,
            CertTest::AtLeast,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            2.0f64.powi(-40),
        ));
        certs.push(Certificate::new(
            CertKind::Mass,
            CertTest::Within,
            57_335.0 / 65_536.0,
            -1.234_567_890_123_456_7e-89,
            0.25,
        ));
        let rows = parse(&render(&certs)).unwrap();
        assert_eq!(rows.len(), certs.len());
        for (row, cert) in rows.iter().zip(&certs) {
            assert_eq!(row.lhs.to_bits(), cert.lhs.to_bits());
            assert_eq!(row.rhs.to_bits(), cert.rhs.to_bits());
            assert_eq!(row.margin.to_bits(), margin(cert).to_bits());
            assert_eq!(row.pass, cert.pass);
            assert_eq!(row.kind, cert.kind.as_str());
            assert_eq!(row.k, cert.stage);
            assert_eq!(row.n, cert.n);
            assert_eq!(row.weight, cert.weight_trial);
        }
    }

    #[test]
    fn context_fields_round_trip_through_empty_strings() {
        let rows = parse(&render(&sample())).unwrap();
        assert_eq!(rows[0].l_window, Some(57.0));
        assert_eq!(rows[0].m_a, Some(0.375));
        assert_eq!(rows[0].eps_k, None);
        assert_eq!(rows[1].n, None);
        assert_eq!(rows[1].weight, Some(3));
        assert_eq!(rows[2].k, 0);
    }

    #[test]
    fn malformed_tables_name_the_offending_line() {
        let err = parse("kind,bogus\n").unwrap_err();
        assert!(err.contains("unexpected header"));
        let good = render(&sample());
        let truncated: String = good.lines().take(2).collect::<Vec<_>>().join("\n")
            + "\nnot,enough,fields\n";
        let err = parse(&truncated).unwrap_err();
        assert!(err.contains("line 3"), "message: {err}");
    }
}
