//! Long-format CSV ingestion.
//!
//! The header is `unit,time,y,<x1>,...,<xK>`: the first three column names
//! are fixed and every further column is a regressor (its header becomes the
//! regressor name). Values use `.` as the decimal separator.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::panel::{PanelData, PanelError, Record};

pub fn read_panel_csv(path: impl AsRef<Path>) -> Result<PanelData, PanelError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| PanelError::Io(format!("{}: {e}", path.display())))?;
    read_panel(file)
}

pub fn read_panel<R: Read>(reader: R) -> Result<PanelData, PanelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| PanelError::MalformedHeader(e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 4 || names[..3] != ["unit", "time", "y"] {
        return Err(PanelError::MalformedHeader(format!(
            "expected 'unit,time,y,x1,...', got '{}'",
            names.join(",")
        )));
    }
    let regressors: Vec<String> = names[3..].iter().map(|s| s.to_string()).collect();
    if regressors.iter().any(|r| r.is_empty()) {
        return Err(PanelError::MalformedHeader("empty regressor name".into()));
    }

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| PanelError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |j: usize| -> Result<f64, PanelError> {
            let raw = &row[j];
            raw.parse::<f64>().map_err(|_| PanelError::Parse {
                line,
                message: format!("column '{}': cannot parse '{raw}' as a number", names[j]),
            })
        };
        records.push(Record {
            unit: row[0].to_string(),
            time: row[1].to_string(),
            y: field(2)?,
            x: (3..names.len()).map(field).collect::<Result<_, _>>()?,
        });
    }
    PanelData::from_records(&records)?.with_regressor_names(regressors)
}

/// Writes a panel in the long format accepted by [`read_panel`].
pub fn write_panel_csv<W: std::io::Write>(p: &PanelData, writer: W) -> Result<(), PanelError> {
    let io = |e: csv::Error| PanelError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string(), "time".into(), "y".into()];
    header.extend(p.regressor_names().iter().cloned());
    w.write_record(&header).map_err(io)?;
    for r in p.to_records() {
        let mut fields = vec![r.unit, r.time, format!("{:?}", r.y)];
        fields.extend(r.x.iter().map(|v| format!("{v:?}")));
        w.write_record(&fields).map_err(io)?;
    }
    w.flush().map_err(|e| PanelError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_long_format() {
        let csv = "unit,time,y,income,rate\nA,2000,1.5,2.0,0.1\nA,2001,1.7,2.1,0.2\nB,2000,0.5,1.0,0.3\nB,2001,0.9,1.4,0.4\n";
        let p = read_panel(csv.as_bytes()).unwrap();
        assert_eq!(p.regressor_names(), ["income", "rate"]);
        assert_eq!(p.unit_labels(), ["A", "B"]);
        assert_eq!(p.x_unit(1)[(1, 1)], 0.4);

        let mut out = Vec::new();
        write_panel_csv(&p, &mut out).unwrap();
        assert_eq!(read_panel(out.as_slice()).unwrap(), p);
    }

    #[test]
    fn rejects_bad_header_and_values() {
        assert!(matches!(
            read_panel("id,time,y,x1\nA,1,1,1\n".as_bytes()),
            Err(PanelError::MalformedHeader(_))
        ));
        assert!(matches!(
            read_panel("unit,time,y\nA,1,1\n".as_bytes()),
            Err(PanelError::MalformedHeader(_))
        ));
        assert!(matches!(
            read_panel("unit,time,y,x1\nA,1,1,1\nA,2,1,1,5\n".as_bytes()),
            Err(PanelError::Parse { .. })
        ));
        assert!(matches!(
            read_panel("unit,time,y,x1\nA,1,1,1\nA,2,1,1\nB,1,oops,1\nB,2,1,1\n".as_bytes()),
            Err(PanelError::Parse { line: 4, .. })
        ));
        assert!(matches!(
            read_panel("unit,time,y,x1\nA,1,1,1\nA,2,1,1\nB,1,1,1\n".as_bytes()),
            Err(PanelError::UnbalancedPanel { .. })
        ));
    }
}
