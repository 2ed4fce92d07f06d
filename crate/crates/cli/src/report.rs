//! Human tables and `key=value` output.

use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutputFormat {
    #[default]
    Text,
    Kv,
}

/// A titled table plus scalar facts. Text output aligns columns; kv output
/// emits one `prefix.row.column=value` line per cell.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub title: String,
    pub facts: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            ..Default::default()
        }
    }

    pub fn fact(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.facts.push((key.to_string(), value.to_string()));
        self
    }

    pub fn columns(&mut self, cols: &[&str]) -> &mut Self {
        self.columns = cols.iter().map(|c| c.to_string()).collect();
        self
    }

    pub fn row(&mut self, cells: Vec<String>) -> &mut Self {
        self.rows.push(cells);
        self
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Text => self.render_text(),
            OutputFormat::Kv => self.render_kv(),
        }
    }

    fn render_text(&self) -> String {
        let mut out = format!("{}\n", self.title);
        let key_w = self.facts.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &self.facts {
            let _ = writeln!(out, "  {k:<key_w$}  {v}");
        }
        if !self.columns.is_empty() {
            let mut widths: Vec<usize> = self.columns.iter().map(String::len).collect();
            for r in &self.rows {
                for (w, c) in widths.iter_mut().zip(r) {
                    *w = (*w).max(c.len());
                }
            }
            let line = |cells: &[String]| {
                let parts: Vec<String> = cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, &w)| format!("{c:>w$}"))
                    .collect();
                format!("  {}\n", parts.join("  "))
            };
            out.push('\n');
            out.push_str(&line(&self.columns));
            for r in &self.rows {
                out.push_str(&line(r));
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    fn render_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.facts {
            let _ = writeln!(out, "{k}={v}");
        }
        // first column names the row
        for r in &self.rows {
            let Some(name) = r.first() else { continue };
            for (c, v) in self.columns.iter().zip(r).skip(1) {
                let _ = writeln!(out, "{name}.{c}={v}");
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning={w}");
        }
        out
    }
}

pub fn deg(x: f64) -> String {
    format!("{x:.3}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_and_kv() {
        let mut r = Report::new("demo");
        r.fact("tracks", 3).columns(&["cycle", "error_deg"]);
        r.row(vec!["0".into(), "12.5".into()]).row(vec!["1".into(), "7.25".into()]);
        let t = r.render(OutputFormat::Text);
        assert!(t.starts_with("demo\n  tracks  3\n"));
        assert!(t.contains("  cycle  error_deg\n      0       12.5\n"));
        let kv = r.render(OutputFormat::Kv);
        assert_eq!(kv, "tracks=3\n0.error_deg=12.5\n1.error_deg=7.25\n");
    }
}
