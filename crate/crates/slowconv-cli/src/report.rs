//! Human-readable run report: configuration echo, realized plan,
//! certificate tallies, and the pass/fail verdict. The report is the one
//! artifact meant for eyes rather than parsers; the certificate CSV is the
//! machine-readable record.

use std::path::Path;
use std::time::Duration;

use slowconv::certificate::{first_failure, Certificate};

use crate::csvout;

pub struct ReportData<'a> {
    pub subcommand: &'a str,
    pub config_path: &'a Path,
    pub config_echo: &'a str,
    pub plan_lines: &'a [String],
    pub certificates: &'a [Certificate],
    pub exceedance: Option<usize>,
    pub notes: &'a [String],
    pub wall: Duration,
    pub pass: bool,
}

fn rule(out: &mut String, title: &str) {
    out.push_str("-- ");
    out.push_str(title);
    out.push(' ');
    let used = 4 + title.len();
    out.push_str(&"-".repeat(60usize.saturating_sub(used)));
    out.push('\n');
}

pub fn render(d: &ReportData) -> String {
    let mut out = String::new();
    out.push_str("slowconv run report\n");
    out.push_str("===================\n");
    out.push_str(&format!("subcommand: {}\n", d.subcommand));
    out.push_str(&format!("config: {}\n\n", d.config_path.display()));

    rule(&mut out, "configuration");
    for line in d.config_echo.lines() {
        out.push_str("  ");
        out.push_str(line);
        out.push('\n');
    }
    out.push('\n');

    if !d.plan_lines.is_empty() {
        rule(&mut out, "realized plan");
        for line in d.plan_lines {
            out.push_str(line);
            out.push('\n');
        }
        out.push('\n');
    }

    rule(&mut out, "certificates");
    let total = d.certificates.len();
    let passing = d.certificates.iter().filter(|c| c.pass).count();
    out.push_str(&format!("total {total}, passing {passing}\n"));
    if let Some(fail) = first_failure(d.certificates) {
        out.push_str(&format!(
            "first failure: kind={} k={} n={} lhs={:.16e} rhs={:.16e} eta={:.16e} margin={:.16e}\n",
            fail.kind,
            fail.stage,
            fail.n.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
            fail.lhs,
            fail.rhs,
            fail.eta,
            csvout::margin(fail),
        ));
    }
    if let Some(count) = d.exceedance {
        out.push_str(&format!("exceedance count: {count}\n"));
    }
    for note in d.notes {
        out.push_str(note);
        out.push('\n');
    }
    out.push_str(&format!("wall time: {:.3} s\n", d.wall.as_secs_f64()));
    out.push_str(&format!(
        "result: {}\n",
        if d.pass { "PASS" } else { "FAIL" }
    ));
    out
}

pub fn write_report(path: &Path, d: &ReportData) -> std::io::Result<()> {
    std::fs::write(path, render(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use slowconv::certificate::{CertKind, CertTest};

    #[test]
    fn reports_surface_the_first_failing_certificate() {
        let certs = vec![
            Certificate::new(CertKind::Deviation, CertTest::StrictAbove, 0.2, 0.1, 0.0),
            Certificate::new(CertKind::Budget, CertTest::StrictAbove, 0.1, 0.2, 0.0),
        ];
        let text = render(&ReportData {
            subcommand: "theorem1",
            config_path: Path::new("x.toml"),
            config_echo: "[system]\nmodel = \"cyclic\"",
            plan_lines: &["stage 1: n=7".into()],
            certificates: &certs,
            exceedance: Some(1),
            notes: &["spot-check: ok".into()],
            wall: Duration::from_millis(1500),
            pass: false,
        });
        assert!(text.contains("total 2, passing 1"));
        assert!(text.contains("first failure: kind=budget"));
        assert!(text.contains("exceedance count: 1"));
        assert!(text.contains("result: FAIL"));
        assert!(text.contains("  model = \"cyclic\""));
    }

    #[test]
    fn passing_reports_say_so() {
        let text = render(&ReportData {
            subcommand: "rate-scan",
            config_path: Path::new("scan.toml"),
            config_echo: "",
            plan_lines: &[],
            certificates: &[],
            exceedance: None,
            notes: &[],
            wall: Duration::from_millis(3),
            pass: true,
        });
        assert!(text.contains("total 0, passing 0"));
        assert!(text.contains("result: PASS"));
        assert!(!text.contains("exceedance count"));
    }
}
