//! Output framing: CSV files open with `# ` comment lines carrying the
//! resolved config, JSON documents carry the same header as a field.

use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Value,
}

impl Header {
    pub fn new(command: &'static str, config: &impl Serialize) -> anyhow::Result<Self> {
        Ok(Self {
            tool: "predmkt",
            version: predmkt::VERSION,
            command,
            config: serde_json::to_value(config)?,
        })
    }
}

pub struct CsvTable {
    header: Header,
    writer: csv::Writer<Vec<u8>>,
}

impl CsvTable {
    pub fn new(header: Header, columns: &[&str]) -> anyhow::Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(columns)?;
        Ok(Self { header, writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> anyhow::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(self) -> anyhow::Result<String> {
        let body = String::from_utf8(self.writer.into_inner()?)?;
        Ok(format!(
            "# {} {} {}\n# config {}\n{body}",
            self.header.tool,
            self.header.version,
            self.header.command,
            serde_json::to_string(&self.header.config)?
        ))
    }
}

pub fn json_document(header: &Header, result: &impl Serialize) -> anyhow::Result<String> {
    let mut text = serde_json::to_string_pretty(&json!({ "header": header, "result": result }))?;
    text.push('\n');
    Ok(text)
}

/// Shortest round-trip decimal, empty for a missing value.
pub fn num(x: f64) -> String {
    // print -0 as 0
    format!("{}", if x == 0.0 { 0.0 } else { x })
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
