use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameDims, JointIterate};

/// What each snapshot stores about the iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogMode {
    /// The full stacked vector `w_k`.
    #[default]
    Full,
    /// Only `‖x_k‖` and `‖y_k‖`.
    Norms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: u64,
    pub loss_f: Option<f64>,
    pub loss_g: Option<f64>,
    pub state: Vec<f64>,
}

/// Recorded iterates of one run, in increasing iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    dims: GameDims,
    mode: LogMode,
    stride: u64,
    snapshots: Vec<Snapshot>,
}

impl TrajectoryLog {
    pub fn new(dims: GameDims, mode: LogMode, stride: u64) -> Result<Self> {
        if stride == 0 {
            return Err(Error::usage("snapshot stride must be >= 1"));
        }
        Ok(TrajectoryLog {
            dims,
            mode,
            stride,
            snapshots: Vec::new(),
        })
    }

    /// Full-state log with consecutive iterations `0..states.len()` and no losses.
    pub fn from_states(dims: GameDims, states: Vec<Vec<f64>>) -> Result<Self> {
        let mut log = TrajectoryLog::new(dims, LogMode::Full, 1)?;
        for (k, state) in states.into_iter().enumerate() {
            log.push_raw(k as u64, None, None, state)?;
        }
        Ok(log)
    }

    pub fn dims(&self) -> GameDims {
        self.dims
    }

    pub fn mode(&self) -> LogMode {
        self.mode
    }

    pub fn stride(&self) -> u64 {
        self.stride
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn state_len(&self) -> usize {
        match self.mode {
            LogMode::Full => self.dims.total(),
            LogMode::Norms => 2,
        }
    }

    /// Records `w` in this log's mode.
    pub fn push(
        &mut self,
        k: u64,
        loss_f: Option<f64>,
        loss_g: Option<f64>,
        w: &JointIterate,
    ) -> Result<()> {
        let state = match self.mode {
            LogMode::Full => w.stack().as_slice().to_vec(),
            LogMode::Norms => vec![w.x.norm(), w.y.norm()],
        };
        self.push_raw(k, loss_f, loss_g, state)
    }

    pub fn push_raw(
        &mut self,
        k: u64,
        loss_f: Option<f64>,
        loss_g: Option<f64>,
        state: Vec<f64>,
    ) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if k <= last.k {
                return Err(Error::usage(format!(
                    "iterations must increase strictly: {k} after {}",
                    last.k
                )));
            }
        }
        if state.len() != self.state_len() {
            return Err(Error::usage(format!(
                "snapshot has {} values, expected {}",
                state.len(),
                self.state_len()
            )));
        }
        if let Some(i) = state.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("snapshot {k}"), Some(i)));
        }
        if loss_f.is_some_and(|v| !v.is_finite()) || loss_g.is_some_and(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("losses of snapshot {k}"), None));
        }
        self.snapshots.push(Snapshot {
            k,
            loss_f,
            loss_g,
            state,
        });
        Ok(())
    }

    /// Generator (`f`) and discriminator (`g`) loss series; `None` if any snapshot lacks one.
    pub fn loss_series(&self) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        let f: Option<Vec<f64>> = self.snapshots.iter().map(|s| s.loss_f).collect();
        let g: Option<Vec<f64>> = self.snapshots.iter().map(|s| s.loss_g).collect();
        (f, g)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["k".to_string(), "loss_f".to_string(), "loss_g".to_string()];
        match self.mode {
            LogMode::Full => h.extend((0..self.dims.total()).map(|i| format!("w_{i}"))),
            LogMode::Norms => h.extend(["norm_x".to_string(), "norm_y".to_string()]),
        }
        h
    }

    /// Writes the log as CSV with round-trip precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(self.header()).map_err(csv_error)?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for s in &self.snapshots {
            let mut row = vec![s.k.to_string(), fmt(s.loss_f), fmt(s.loss_g)];
            row.extend(s.state.iter().map(|v| format!("{v:.16e}")));
            out.write_record(&row).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a log written by [`TrajectoryLog::write_csv`] (or any tool using the
    /// same header). The mode is detected from the header; the stride is taken
    /// from the first iteration gap.
    pub fn read_csv<R: Read>(reader: R, dims: GameDims) -> Result<Self> {
        let mut input = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = input
            .headers()
            .map_err(csv_error)?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < 3 || header[0] != "k" || header[1] != "loss_f" || header[2] != "loss_g" {
            return Err(Error::usage("trajectory header must start with k,loss_f,loss_g"));
        }
        let mode = if header[3..] == ["norm_x", "norm_y"] {
            LogMode::Norms
        } else {
            LogMode::Full
        };
        let mut log = TrajectoryLog::new(dims, mode, 1)?;
        if mode == LogMode::Full {
            let expected: Vec<String> = (0..dims.total()).map(|i| format!("w_{i}")).collect();
            if header[3..] != expected[..] {
                return Err(Error::usage(format!(
                    "trajectory has {} state columns but dims give m+n = {}",
                    header.len() - 3,
                    dims.total()
                )));
            }
        }
        let parse = |field: &str, line: usize| -> Result<f64> {
            field
                .parse::<f64>()
                .map_err(|_| Error::usage(format!("line {line}: cannot parse '{field}'")))
        };
        for (i, record) in input.records().enumerate() {
            let record = record.map_err(csv_error)?;
            let line = i + 2;
            let k = record[0]
                .parse::<u64>()
                .map_err(|_| Error::usage(format!("line {line}: bad iteration '{}'", &record[0])))?;
            let loss = |field: &str| -> Result<Option<f64>> {
                if field.is_empty() {
                    Ok(None)
                } else {
                    parse(field, line).map(Some)
                }
            };
            let loss_f = loss(&record[1])?;
            let loss_g = loss(&record[2])?;
            let state = record
                .iter()
                .skip(3)
                .map(|f| parse(f, line))
                .collect::<Result<Vec<f64>>>()?;
            log.push_raw(k, loss_f, loss_g, state)?;
        }
        if log.snapshots.len() >= 2 {
            log.stride = log.snapshots[1].k - log.snapshots[0].k;
        }
        Ok(log)
    }
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::usage(format!("malformed trajectory csv: {e}"))
    }
}
