use std::io::Write;
use std::process::{Command, Stdio};

use crate::data::{self, RawTable};

use super::{check_range, ModelError, ModelUnderAudit, PREDICTION_COLUMN};

/// External scorer. Rows are written as CSV (input features only, with a
/// header) to the program's stdin; its stdout must be a CSV with a
/// [`PREDICTION_COLUMN`] column and one row per input row.
#[derive(Clone, Debug)]
pub struct SubprocessModel {
    program: String,
    args: Vec<String>,
    inputs: Vec<String>,
}

impl SubprocessModel {
    pub fn new(program: impl Into<String>, args: Vec<String>, inputs: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            inputs,
        }
    }

    fn request(&self, table: &RawTable) -> Result<Vec<u8>, ModelError> {
        let cols: Vec<usize> = self
            .inputs
            .iter()
            .map(|n| {
                table
                    .schema()
                    .index_of(n)
                    .ok_or_else(|| ModelError::MissingColumn(n.clone()))
            })
            .collect::<Result<_, _>>()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.inputs)?;
        for i in 0..table.len() {
            w.write_record(cols.iter().map(|&j| table.cell_text(i, j)))?;
        }
        w.into_inner().map_err(|e| ModelError::Io(e.into_error()))
    }
}

impl ModelUnderAudit for SubprocessModel {
    fn input_features(&self) -> Vec<String> {
        self.inputs.clone()
    }

    fn predict(&self, table: &RawTable) -> Result<Vec<f64>, ModelError> {
        let body = self.request(table)?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ModelError::Subprocess(format!("cannot start `{}`: {e}", self.program)))?;
        let mut stdin = child.stdin.take().expect("stdin piped");
        // A separate writer avoids deadlock when the child streams output
        // before it has consumed all of its input.
        let writer = std::thread::spawn(move || {
            // A child that exits early closes the pipe; its exit status is
            // reported below instead.
            let _ = stdin.write_all(&body);
        });
        let out = child.wait_with_output()?;
        let _ = writer.join();
        if !out.status.success() {
            return Err(ModelError::Subprocess(format!(
                "`{}` exited with {}: {}",
                self.program,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let (header, records) = data::read_records(&out.stdout[..], true)?;
        let col = header
            .iter()
            .position(|h| h == PREDICTION_COLUMN)
            .ok_or(ModelError::MissingPredictionColumn)?;
        if records.len() != table.len() {
            return Err(ModelError::PredictionCount {
                expected: table.len(),
                found: records.len(),
            });
        }
        let predictions = records
            .iter()
            .map(|r| {
                let text = r.get(col).map(String::as_str).unwrap_or("");
                text.parse::<f64>()
                    .map_err(|_| ModelError::Subprocess(format!("unparsable prediction `{text}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        check_range(&predictions)?;
        Ok(predictions)
    }
}
