//! Deviation-versus-rate plot data: a three-column text table
//! (`index,l1_dev,a_n`) consumable by any plotting tool. The rate column is
//! empty when no rate sequence is configured.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

pub const HEADER: &str = "index,l1_dev,a_n";

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub index: u64,
    pub l1_dev: f64,
    pub a_n: Option<f64>,
}

pub fn render(rows: &[PlotRow]) -> String {
    let mut out = String::with_capacity(40 * (rows.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.index.to_string());
        out.push(',');
        out.push_str(&format!("{:.16e}", row.l1_dev));
        out.push(',');
        if let Some(a) = row.a_n {
            out.push_str(&format!("{a:.16e}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_plotdata(path: &Path, rows: &[PlotRow]) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(render(rows).as_bytes())
}

/// Parses text produced by [`render`]; used by tests and the CLI's own
/// consistency checks.
pub fn parse(text: &str) -> Result<Vec<PlotRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        Some(other) => return Err(format!("unexpected header: {other}")),
        None => return Err("empty plot data".into()),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(format!("line {}: expected 3 fields", lineno + 2));
        }
        rows.push(PlotRow {
            index: fields[0]
                .parse::<u64>()
                .map_err(|e| format!("line {}: index: {e}", lineno + 2))?,
            l1_dev: fields[1]
                .parse::<f64>()
                .map_err(|e| format!("line {}: l1_dev: {e}", lineno + 2))?,
            a_n: if fields[2].is_empty() {
                None
            } else {
                Some(
                    fields[2]
                        .parse::<f64>()
                        .map_err(|e| format!("line {}: a_n: {e}", lineno + 2))?,
                )
            },
        });
    }
    Ok(rows)
}

/// A sorted, deduplicated index sweep: `points` geometrically spaced values
/// from 1 to `max` (every integer when `points` is `None`), merged with the
/// `extra` indices (planned stage indices stay in the sweep even beyond
/// `max`).
pub fn sweep_indices(max: u64, points: Option<usize>, extra: &[u64]) -> Vec<u64> {
    let max = max.max(1);
    let mut set: BTreeSet<u64> = extra.iter().copied().filter(|&n| n >= 1).collect();
    match points {
        None => set.extend(1..=max),
        Some(p) => {
            let p = p.max(2);
            for i in 0..p {
                let x = (max as f64).powf(i as f64 / (p - 1) as f64);
                set.insert((x.round() as u64).clamp(1, max));
            }
        }
    }
    set.into_iter().collect()
}
