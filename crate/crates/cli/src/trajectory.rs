//! Trajectory tables written as CSV.
//!
//! Rows are `t, <state>, segment_index, <extra columns>`. A hybrid flow
//! contributes both endpoints of every impact: the last row of segment `i`
//! and the first row of segment `i + 1` share the impact time.

use std::path::Path;

use hybred_core::hybrid::HybridFlow;
use hybred_core::phase::PhasePoint;

use crate::report::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    /// Tabulates a flow; `extra` computes the trailing columns per state.
    pub fn from_flow(
        flow: &HybridFlow,
        state_names: &[String],
        extra_names: &[String],
        mut state: impl FnMut(usize, &PhasePoint) -> Vec<f64>,
        mut extra: impl FnMut(usize, &PhasePoint) -> Vec<f64>,
    ) -> Table {
        let mut header = vec!["t".to_string()];
        header.extend(state_names.iter().cloned());
        header.push("segment_index".into());
        header.extend(extra_names.iter().cloned());
        let mut rows = Vec::new();
        for (i, seg) in flow.segments.iter().enumerate() {
            for (t, x) in seg.times().iter().zip(seg.states()) {
                let mut row = vec![*t];
                row.extend(state(i, x));
                row.push(i as f64);
                row.extend(extra(i, x));
                rows.push(row);
            }
        }
        Table { header, rows }
    }

    fn segment_column(&self) -> Option<usize> {
        self.header.iter().position(|h| h == "segment_index")
    }

    pub fn to_csv(&self) -> String {
        let seg = self.segment_column();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            let fields = row.iter().enumerate().map(|(j, v)| {
                if Some(j) == seg {
                    format!("{}", *v as u64)
                } else {
                    fmt_f64(*v)
                }
            });
            w.write_record(fields).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("ascii output")
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    pub fn from_csv(text: &str) -> Result<Table, String> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r
            .headers()
            .map_err(|e| e.to_string())?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = r
            .records()
            .map(|rec| {
                rec.map_err(|e| e.to_string())?
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|e| format!("`{f}`: {e}")))
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    pub fn read(path: &Path) -> Result<Table, String> {
        Table::from_csv(&std::fs::read_to_string(path).map_err(|e| e.to_string())?)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}
