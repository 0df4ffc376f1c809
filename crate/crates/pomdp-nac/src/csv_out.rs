//! CSV files with a leading `#` comment line.

use std::fs;
use std::path::Path;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub comment: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(comment: String, header: Vec<String>) -> Self {
        Self {
            comment,
            header,
            rows: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = format!("# {}\n", self.comment).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.header).expect("writes to memory");
            for r in &self.rows {
                w.write_record(r).expect("writes to memory");
            }
            w.flush().expect("writes to memory");
        }
        buf
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(HarnessError::io(path))
    }
}

pub fn read_table(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path).map_err(HarnessError::io(path))?;
    let comment = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .unwrap_or_default()
        .to_owned();
    let parse_err = |e: csv::Error| HarnessError::Parse {
        path: path.to_owned(),
        line: e.position().map(|p| p.line() as usize),
        field: None,
        message: e.to_string(),
    };
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r.headers().map_err(parse_err)?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_owned).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(parse_err)?;
    Ok(CsvTable { comment, header, rows })
}
