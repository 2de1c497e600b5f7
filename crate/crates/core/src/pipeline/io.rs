use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

fn at(path: &Path, e: impl std::fmt::Display) -> String {
    format!("{}: {e}", path.display())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| at(path, e))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| at(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| at(path, e))?;
    serde_json::from_str(&text).map_err(|e| at(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| at(path, e))
}

pub(crate) fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<(), String>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| at(path, e))?;
    w.write_record(header).map_err(|e| at(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| at(path, e))?;
    }
    w.flush().map_err(|e| at(path, e))
}

pub(crate) fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| at(path, e))?;
    let header = r
        .headers()
        .map_err(|e| at(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| at(path, e))
        })
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

pub(crate) fn parse_f64(path: &Path, row: usize, cell: &str) -> Result<f64, String> {
    cell.parse()
        .map_err(|_| at(path, format!("row {}: cannot parse `{cell}` as a number", row + 1)))
}

pub(crate) fn parse_flag(path: &Path, row: usize, cell: &str) -> Result<bool, String> {
    match cell {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(at(path, format!("row {}: expected 0/1, got `{cell}`", row + 1))),
    }
}
