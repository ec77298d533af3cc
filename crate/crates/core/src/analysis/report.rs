//! CSV and JSON experiment reports.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::Result;

/// `<experiment>-<transform>-<probe>.csv`.
pub fn report_file_name(experiment: &str, transform: &str, probe: &str) -> String {
    let clean = |s: &str| s.replace([':', '/', ' ', ','], "_");
    format!("{}-{}-{}.csv", clean(experiment), clean(transform), clean(probe))
}

/// Writes a CSV file with a header row.
pub fn write_csv<R: AsRef<[String]>>(path: impl AsRef<Path>, header: &[&str], rows: &[R]) -> Result<()> {
    if let Some(parent) = path.as_ref().parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.as_ref()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Format(format!("csv: {e}"))
}

/// Writes a pretty-printed JSON summary.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    if let Some(parent) = path.as_ref().parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_and_csv() {
        assert_eq!(report_file_name("invariance", "rot:90", "probe1"), "invariance-rot_90-probe1.csv");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.csv");
        write_csv(&p, &["x", "y"], &[vec!["1".to_string(), "2".to_string()]]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "x,y\n1,2\n");
    }
}
