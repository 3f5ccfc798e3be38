use num_complex::Complex64;
use serde::Serialize;

use crate::device::DeviceEval;

/// Converged DC solution.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    /// Node names, index 0 is ground.
    pub node_names: Vec<String>,
    /// Voltage per node index (ground included, always 0).
    pub node_voltages: Vec<f64>,
    pub branch_names: Vec<String>,
    /// Current per voltage-defined branch, flowing from the positive terminal
    /// through the element to the negative terminal.
    pub branch_currents: Vec<f64>,
    /// `(element name, linearization)` for each MOS device in element order.
    pub device_evals: Vec<(String, DeviceEval<f64>)>,
    /// Largest node KCL residual, A.
    pub residual_norm: f64,
    /// `abstol + reltol * (largest element current)` for this solution.
    pub residual_bound: f64,
    pub iterations: usize,
    pub(crate) x: Vec<f64>,
}

impl OperatingPoint {
    pub fn voltage(&self, node: &str) -> Option<f64> {
        let i = self.node_names.iter().position(|n| n.eq_ignore_ascii_case(node))?;
        Some(self.node_voltages[i])
    }

    pub fn branch_current(&self, element: &str) -> Option<f64> {
        let i = self.branch_names.iter().position(|n| n.eq_ignore_ascii_case(element))?;
        Some(self.branch_currents[i])
    }

    pub fn device(&self, element: &str) -> Option<&DeviceEval<f64>> {
        self.device_evals.iter().find(|(n, _)| n.eq_ignore_ascii_case(element)).map(|(_, e)| e)
    }

    /// Raw unknown vector, usable as a Newton seed.
    pub fn solution(&self) -> &[f64] {
        &self.x
    }

    pub fn to_table(&self) -> Table {
        let mut columns: Vec<String> = self.node_names[1..].iter().map(|n| format!("v({n})")).collect();
        columns.extend(self.branch_names.iter().map(|b| format!("i({b})")));
        let mut row: Vec<f64> = self.node_voltages[1..].to_vec();
        row.extend(&self.branch_currents);
        Table { analysis: "op".into(), columns, rows: vec![row], failed_rows: vec![] }
    }
}

/// DC sweep output. Rows that failed to converge hold `NaN` and are listed
/// in `failed`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub source: String,
    pub sweep_values: Vec<f64>,
    /// Trace names, `v(node)` and `i(element)`.
    pub names: Vec<String>,
    /// `values[point][trace]`.
    pub values: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
}

impl SweepResult {
    pub fn trace(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.names.iter().position(|n| n.eq_ignore_ascii_case(name))?;
        Some(self.values.iter().map(|row| row[i]).collect())
    }

    pub fn failed(&self) -> Vec<usize> {
        self.converged.iter().enumerate().filter(|(_, c)| !**c).map(|(i, _)| i).collect()
    }

    pub fn to_table(&self) -> Table {
        let mut columns = vec![self.source.clone()];
        columns.extend(self.names.iter().cloned());
        let rows = self
            .sweep_values
            .iter()
            .zip(&self.values)
            .map(|(s, row)| std::iter::once(*s).chain(row.iter().copied()).collect())
            .collect();
        Table { analysis: "dc".into(), columns, rows, failed_rows: self.failed() }
    }
}

/// Small-signal response over frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct AcResult {
    pub frequencies: Vec<f64>,
    pub names: Vec<String>,
    /// `values[frequency][trace]`.
    pub values: Vec<Vec<Complex64>>,
}

impl AcResult {
    pub fn trace(&self, name: &str) -> Option<Vec<Complex64>> {
        let i = self.names.iter().position(|n| n.eq_ignore_ascii_case(name))?;
        Some(self.values.iter().map(|row| row[i]).collect())
    }

    /// Node voltage phasors; ground yields zeros.
    pub fn voltage(&self, node: &str) -> Option<Vec<Complex64>> {
        if node == crate::netlist::GROUND {
            return Some(vec![Complex64::new(0.0, 0.0); self.frequencies.len()]);
        }
        self.trace(&format!("v({node})"))
    }

    /// Magnitude in dB and phase in degrees for every trace.
    pub fn to_table(&self) -> Table {
        let mut columns = vec!["frequency".to_string()];
        for n in &self.names {
            columns.push(format!("db({n})"));
            columns.push(format!("ph({n})"));
        }
        let rows = self
            .frequencies
            .iter()
            .zip(&self.values)
            .map(|(f, row)| {
                std::iter::once(*f)
                    .chain(row.iter().flat_map(|z| [20.0 * z.norm().log10(), z.arg().to_degrees()]))
                    .collect()
            })
            .collect();
        Table { analysis: "ac".into(), columns, rows, failed_rows: vec![] }
    }
}

/// Time-domain output on the fixed step grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientResult {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `values[time][trace]`.
    pub values: Vec<Vec<f64>>,
    /// KCL residual of each accepted solution, A.
    pub residual_norms: Vec<f64>,
    /// Acceptance bound that residual was tested against, A.
    pub residual_bounds: Vec<f64>,
}

impl TransientResult {
    pub fn trace(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.names.iter().position(|n| n.eq_ignore_ascii_case(name))?;
        Some(self.values.iter().map(|row| row[i]).collect())
    }

    pub fn voltage(&self, node: &str) -> Option<Vec<f64>> {
        if node == crate::netlist::GROUND {
            return Some(vec![0.0; self.times.len()]);
        }
        self.trace(&format!("v({node})"))
    }

    pub fn to_table(&self) -> Table {
        let mut columns = vec!["time".to_string()];
        columns.extend(self.names.iter().cloned());
        let rows = self
            .times
            .iter()
            .zip(&self.values)
            .map(|(t, row)| std::iter::once(*t).chain(row.iter().copied()).collect())
            .collect();
        Table { analysis: "tran".into(), columns, rows, failed_rows: vec![] }
    }
}

/// Column-oriented result block shared by the CSV and JSON writers.
///
/// JSON: `{"analysis": str, "columns": [str], "rows": [[number|null]], "failed_rows": [int]}`;
/// non-finite numbers serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub analysis: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub failed_rows: Vec<usize>,
}

impl Table {
    /// Header row plus one row per point. Values use the shortest
    /// round-trip representation; failed points are written as `NaN`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:e}"))).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("table serializes")
    }
}
