//! Trajectory records and their on-disk formats.
//!
//! Text format (version 2), one header line per key, then a column line,
//! a `---` separator and one whitespace-separated row per step:
//!
//! ```text
//! steerlab-record 2
//! trajectory_id human-in-control-0007
//! mode human-in-control
//! config_hash 3f1c...
//! seed 7
//! ts 0.1
//! lanes 2
//! analysis_lane 0
//! status complete
//! rows 300
//! columns step t x y theta v xdot y_rel ydot b driver_delta driver_a applied_delta applied_a xddot yddot source saturated stale underflow phi_0 omega_0 psi_0 rho_0 phi_1 omega_1 psi_1 rho_1 w_0 w_1
//! ---
//! 0 0.0 0.0 -0.5 0.0 15.0 15.0 -0.5 0.0 0.0 ...
//! ```
//!
//! `source` is `h` when the driver's command reached the plant and `a` when
//! the autonomy controller's did. Flags are `0`/`1`. The `w_*` columns are
//! present only in autonomy-in-control records. Floats are written in
//! shortest round-trip form, so `load(save(r)) == r` bit for bit.
//!
//! Version 1 records lack `analysis_lane`, `source`, `stale` and
//! `underflow`; they load with a migration warning.
//!
//! The binary format is `STLR`, a little-endian `u32` version, a `u32`
//! length plus the header as JSON, a `u64` row count, then every row's
//! columns in text order as little-endian `f64`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use steerlab_core::dynamics::{DriverCommand, LinearizedInput, Pose, VehicleState};
use steerlab_core::steering::{SteeringSample, VisualAngles};
use steerlab_core::ControlMode;

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 2;
const MAGIC_TEXT: &str = "steerlab-record";
const MAGIC_BINARY: &[u8; 4] = b"STLR";
const FIXED_COLUMNS: [&str; 20] = [
    "step",
    "t",
    "x",
    "y",
    "theta",
    "v",
    "xdot",
    "y_rel",
    "ydot",
    "b",
    "driver_delta",
    "driver_a",
    "applied_delta",
    "applied_a",
    "xddot",
    "yddot",
    "source",
    "saturated",
    "stale",
    "underflow",
];
const V1_DROPPED: [&str; 3] = ["source", "stale", "underflow"];

/// Which command reached the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputSource {
    Human,
    Autonomy,
}

impl InputSource {
    fn code(self) -> &'static str {
        match self {
            InputSource::Human => "h",
            InputSource::Autonomy => "a",
        }
    }

    pub fn for_mode(mode: ControlMode) -> Self {
        match mode {
            ControlMode::HumanInControl => InputSource::Human,
            ControlMode::AutonomyInControl => InputSource::Autonomy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordStatus {
    Complete,
    /// The session ended early; rows cover the steps that ran.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub version: u32,
    pub trajectory_id: String,
    pub mode: ControlMode,
    pub config_hash: String,
    pub seed: u64,
    pub ts: f64,
    pub lanes: usize,
    /// Lane whose visual angles feed residual analysis.
    pub analysis_lane: usize,
    pub status: RecordStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub step: usize,
    pub t: f64,
    /// True pose at the start of the step.
    pub pose: Pose<f64>,
    /// True four-state vector at the start of the step.
    pub state: VehicleState<f64>,
    /// What the driver issued (advisory in autonomy-in-control).
    pub driver: DriverCommand<f64>,
    /// What reached the plant, after saturation.
    pub applied: DriverCommand<f64>,
    /// Plant input realized by `applied`.
    pub input: LinearizedInput<f64>,
    pub source: InputSource,
    pub saturated: bool,
    /// Driver input was older than the staleness limit.
    pub stale: bool,
    /// Advisor update was skipped because every likelihood underflowed.
    pub underflow: bool,
    /// Visual angles toward each lane center.
    pub angles: Vec<VisualAngles<f64>>,
    /// Mixture weights after this step's updates (autonomy-in-control only).
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub header: RecordHeader,
    pub rows: Vec<Row>,
}

/// A loaded record plus any migration notes.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub record: TrajectoryRecord,
    pub warnings: Vec<String>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn mode(&self) -> ControlMode {
        self.header.mode
    }

    /// Steering-model samples measured against `lane`.
    pub fn steering_samples(&self, lane: usize) -> Result<Vec<SteeringSample<f64>>> {
        if lane >= self.header.lanes {
            return Err(HarnessError::Config(format!("lane {lane} not in record with {} lanes", self.header.lanes)));
        }
        Ok(self
            .rows
            .iter()
            .map(|r| SteeringSample {
                delta: r.driver.delta,
                phi: r.angles[lane].phi,
                omega: r.angles[lane].omega,
                ydot: r.state.ydot,
            })
            .collect())
    }

    /// Steering samples against the header's analysis lane.
    pub fn analysis_samples(&self) -> Result<Vec<SteeringSample<f64>>> {
        self.steering_samples(self.header.analysis_lane)
    }

    /// Weight trajectory of hypothesis `i`, if the record carries weights.
    pub fn weight_series(&self, i: usize) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.weights.as_ref().and_then(|w| w.get(i).copied())).collect()
    }

    fn has_weights(&self) -> bool {
        self.header.mode == ControlMode::AutonomyInControl
    }

    /// Column names in file order.
    pub fn columns(&self) -> Vec<String> {
        columns(self.header.lanes, self.has_weights())
    }

    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC_TEXT} {SCHEMA_VERSION}");
        let _ = writeln!(out, "trajectory_id {}", h.trajectory_id);
        let _ = writeln!(out, "mode {}", h.mode);
        let _ = writeln!(out, "config_hash {}", h.config_hash);
        let _ = writeln!(out, "seed {}", h.seed);
        let _ = writeln!(out, "ts {:?}", h.ts);
        let _ = writeln!(out, "lanes {}", h.lanes);
        let _ = writeln!(out, "analysis_lane {}", h.analysis_lane);
        let _ = writeln!(out, "status {}", status_str(h.status));
        let _ = writeln!(out, "rows {}", self.rows.len());
        let _ = writeln!(out, "columns {}", self.columns().join(" "));
        out.push_str("---\n");
        for row in &self.rows {
            let fields = row_fields(row);
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Loaded> {
        parse_text(text)
    }

    pub fn to_binary(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(12 + header.len() + self.rows.len() * 8 * self.columns().len());
        out.extend_from_slice(MAGIC_BINARY);
        out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        for row in &self.rows {
            for v in row_values(row) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC_BINARY {
            return Err(HarnessError::malformed(0, "missing binary magic"));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != SCHEMA_VERSION {
            return Err(HarnessError::SchemaVersion { found: version, supported: SCHEMA_VERSION.to_string() });
        }
        let len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let header: RecordHeader = serde_json::from_slice(cur.take(len)?)?;
        let n_rows = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
        let width = columns(header.lanes, header.mode == ControlMode::AutonomyInControl).len();
        let mut rows = Vec::with_capacity(n_rows.min(1 << 20));
        for i in 0..n_rows {
            let raw = cur.take(8 * width)?;
            let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            rows.push(row_from_values(&values, &header, i + 1)?);
        }
        if cur.pos != bytes.len() {
            return Err(HarnessError::malformed(0, "trailing bytes after last row"));
        }
        let record = TrajectoryRecord { header, rows };
        record.check_invariants()?;
        Ok(record)
    }

    /// Rows are consecutive steps at `t = step * ts`.
    pub fn check_invariants(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.step != i {
                return Err(HarnessError::malformed(i + 1, format!("expected step {i}, found {}", row.step)));
            }
            if row.t != i as f64 * self.header.ts {
                return Err(HarnessError::malformed(i + 1, format!("time {} is not step * ts", row.t)));
            }
            if row.angles.len() != self.header.lanes {
                return Err(HarnessError::malformed(i + 1, "visual angle count differs from lane count"));
            }
            if row.weights.is_some() != self.has_weights() {
                return Err(HarnessError::malformed(i + 1, "weight columns inconsistent with mode"));
            }
        }
        Ok(())
    }

    /// Writes text, or binary when the extension is `.stlr`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if is_binary_path(path) {
            std::fs::write(path, self.to_binary()?)?;
        } else {
            std::fs::write(path, self.to_text())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Loaded> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(MAGIC_BINARY) {
            return Ok(Loaded { record: Self::from_binary(&bytes)?, warnings: Vec::new() });
        }
        let text = String::from_utf8(bytes).map_err(|_| HarnessError::malformed(0, "record is not UTF-8"))?;
        parse_text(&text)
    }
}

fn is_binary_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "stlr")
}

fn status_str(s: RecordStatus) -> &'static str {
    match s {
        RecordStatus::Complete => "complete",
        RecordStatus::Aborted => "aborted",
    }
}

fn columns(lanes: usize, weights: bool) -> Vec<String> {
    let mut cols: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 0..lanes {
        for name in ["phi", "omega", "psi", "rho"] {
            cols.push(format!("{name}_{i}"));
        }
    }
    if weights {
        cols.extend((0..lanes).map(|i| format!("w_{i}")));
    }
    cols
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn row_values(row: &Row) -> Vec<f64> {
    let mut v = vec![
        row.step as f64,
        row.t,
        row.pose.x,
        row.pose.y,
        row.pose.theta,
        row.pose.v,
        row.state.xdot,
        row.state.y,
        row.state.ydot,
        row.state.b,
        row.driver.delta,
        row.driver.a,
        row.applied.delta,
        row.applied.a,
        row.input.xddot,
        row.input.yddot,
        match row.source {
            InputSource::Human => 0.0,
            InputSource::Autonomy => 1.0,
        },
        flag(row.saturated),
        flag(row.stale),
        flag(row.underflow),
    ];
    for a in &row.angles {
        v.extend([a.phi, a.omega, a.psi, a.rho]);
    }
    if let Some(w) = &row.weights {
        v.extend(w);
    }
    v
}

fn row_fields(row: &Row) -> Vec<String> {
    let values = row_values(row);
    values
        .iter()
        .enumerate()
        .map(|(i, v)| match FIXED_COLUMNS.get(i) {
            Some(&"step") => row.step.to_string(),
            Some(&"source") => row.source.code().to_string(),
            Some(&"saturated") | Some(&"stale") | Some(&"underflow") => (*v as u8).to_string(),
            _ => format!("{v:?}"),
        })
        .collect()
}

fn row_from_values(v: &[f64], header: &RecordHeader, line: usize) -> Result<Row> {
    let get_flag = |x: f64| -> Result<bool> {
        match x {
            0.0 => Ok(false),
            1.0 => Ok(true),
            other => Err(HarnessError::malformed(line, format!("flag value {other}"))),
        }
    };
    let step = v[0];
    if !(step >= 0.0 && step.fract() == 0.0) {
        return Err(HarnessError::malformed(line, format!("bad step {step}")));
    }
    let source = match v[16] {
        0.0 => InputSource::Human,
        1.0 => InputSource::Autonomy,
        other => return Err(HarnessError::malformed(line, format!("bad source {other}"))),
    };
    let base = FIXED_COLUMNS.len();
    let angles = (0..header.lanes)
        .map(|i| {
            let a = &v[base + 4 * i..base + 4 * i + 4];
            VisualAngles { phi: a[0], omega: a[1], psi: a[2], rho: a[3] }
        })
        .collect();
    let wstart = base + 4 * header.lanes;
    let weights = (header.mode == ControlMode::AutonomyInControl).then(|| v[wstart..wstart + header.lanes].to_vec());
    Ok(Row {
        step: step as usize,
        t: v[1],
        pose: Pose::new(v[2], v[3], v[4], v[5]),
        state: VehicleState::new(v[6], v[7], v[8], v[9]),
        driver: DriverCommand::new(v[10], v[11]),
        applied: DriverCommand::new(v[12], v[13]),
        input: LinearizedInput::new(v[14], v[15]),
        source,
        saturated: get_flag(v[17])?,
        stale: get_flag(v[18])?,
        underflow: get_flag(v[19])?,
        angles,
        weights,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(HarnessError::malformed(0, "binary record truncated")),
        }
    }
}

fn parse_text(text: &str) -> Result<Loaded> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| HarnessError::malformed(1, "empty file"))?;
    let version = match first.split_once(' ') {
        Some((MAGIC_TEXT, v)) => {
            v.trim().parse::<u32>().map_err(|_| HarnessError::malformed(1, format!("bad version `{v}`")))?
        }
        _ => return Err(HarnessError::malformed(1, "missing record magic line")),
    };
    if version != 1 && version != SCHEMA_VERSION {
        return Err(HarnessError::SchemaVersion { found: version, supported: format!("1, {SCHEMA_VERSION}") });
    }

    let mut keys = std::collections::BTreeMap::new();
    let mut column_line = None;
    for (n, line) in lines.by_ref() {
        if line == "---" {
            break;
        }
        let (k, v) = line.split_once(' ').ok_or_else(|| HarnessError::malformed(n, "expected `key value`"))?;
        if k == "columns" {
            column_line = Some((n, v.split_whitespace().map(str::to_string).collect::<Vec<_>>()));
        } else {
            keys.insert(k.to_string(), (n, v.to_string()));
        }
    }
    let key = |k: &str| -> Result<&(usize, String)> {
        keys.get(k).ok_or_else(|| HarnessError::malformed(0, format!("missing header key `{k}`")))
    };
    fn parse<T: std::str::FromStr>(entry: &(usize, String), what: &str) -> Result<T> {
        entry.1.trim().parse().map_err(|_| HarnessError::malformed(entry.0, format!("bad {what} `{}`", entry.1)))
    }

    let mode: ControlMode =
        key("mode")?.1.parse().map_err(|_| HarnessError::malformed(key("mode").unwrap().0, "bad mode"))?;
    let lanes: usize = parse(key("lanes")?, "lane count")?;
    let status = match key("status")?.1.as_str() {
        "complete" => RecordStatus::Complete,
        "aborted" => RecordStatus::Aborted,
        other => return Err(HarnessError::malformed(key("status")?.0, format!("bad status `{other}`"))),
    };
    let analysis_lane = if version == 1 { 0 } else { parse(key("analysis_lane")?, "analysis lane")? };
    let header = RecordHeader {
        version: SCHEMA_VERSION,
        trajectory_id: key("trajectory_id")?.1.clone(),
        mode,
        config_hash: key("config_hash")?.1.clone(),
        seed: parse(key("seed")?, "seed")?,
        ts: parse(key("ts")?, "ts")?,
        lanes,
        analysis_lane,
        status,
    };
    let expected_rows: usize = parse(key("rows")?, "row count")?;

    let weights = mode == ControlMode::AutonomyInControl;
    let mut expected_cols = columns(lanes, weights);
    if version == 1 {
        expected_cols.retain(|c| !V1_DROPPED.contains(&c.as_str()));
    }
    let (col_line, cols) = column_line.ok_or_else(|| HarnessError::malformed(0, "missing `columns` line"))?;
    if cols != expected_cols {
        return Err(HarnessError::malformed(col_line, "column list does not match schema"));
    }

    let source_code = InputSource::for_mode(mode).code();
    let mut rows = Vec::with_capacity(expected_rows);
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields: Vec<&str> = line.split_whitespace().collect();
        if version == 1 {
            // Insert the columns introduced in version 2 with their implied values.
            let at = FIXED_COLUMNS.iter().position(|c| *c == "source").unwrap();
            fields.insert(at, source_code);
            fields.splice(at + 2..at + 2, ["0", "0"]);
        }
        if fields.len() != FIXED_COLUMNS.len() + 4 * lanes + if weights { lanes } else { 0 } {
            return Err(HarnessError::malformed(
                n,
                format!("expected {} fields, found {}", expected_cols.len(), fields.len()),
            ));
        }
        let values = fields
            .iter()
            .enumerate()
            .map(|(i, f)| {
                if FIXED_COLUMNS.get(i) == Some(&"source") {
                    return match *f {
                        "h" => Ok(0.0),
                        "a" => Ok(1.0),
                        _ => Err(HarnessError::malformed(n, format!("bad source `{f}`"))),
                    };
                }
                f.parse::<f64>().map_err(|_| HarnessError::malformed(n, format!("bad number `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row_from_values(&values, &header, n)?);
    }
    if rows.len() != expected_rows {
        return Err(HarnessError::malformed(
            0,
            format!("header promises {expected_rows} rows, file has {} (truncated?)", rows.len()),
        ));
    }
    let record = TrajectoryRecord { header, rows };
    record.check_invariants()?;
    let warnings = if version == 1 {
        vec![format!(
            "migrated record `{}` from schema version 1: source inferred from mode, stale/underflow flags set to 0, analysis lane 0",
            record.header.trajectory_id
        )]
    } else {
        Vec::new()
    };
    Ok(Loaded { record, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(mode: ControlMode, n: usize) -> TrajectoryRecord {
        let ts = 0.1;
        let rows = (0..n)
            .map(|k| Row {
                step: k,
                t: k as f64 * ts,
                pose: Pose::new(1.5 * k as f64, -0.5 + 0.01 * k as f64, 0.001 * k as f64, 15.0),
                state: VehicleState::new(15.0, -0.5, 0.1 / 3.0, 0.0),
                driver: DriverCommand::new(0.02, -0.1),
                applied: DriverCommand::new(0.02, -0.1),
                input: LinearizedInput::new(std::f64::consts::PI, -1e-300),
                source: InputSource::for_mode(mode),
                saturated: k % 7 == 0,
                stale: false,
                underflow: k == 3,
                angles: vec![
                    VisualAngles { phi: 0.1, omega: 0.01, psi: 0.09, rho: 0.009 },
                    VisualAngles { phi: -0.3, omega: -0.03, psi: -0.31, rho: -0.031 },
                ],
                weights: (mode == ControlMode::AutonomyInControl).then(|| vec![0.7, 0.3]),
            })
            .collect();
        TrajectoryRecord {
            header: RecordHeader {
                version: SCHEMA_VERSION,
                trajectory_id: "t-1".into(),
                mode,
                config_hash: "abc".into(),
                seed: 1,
                ts,
                lanes: 2,
                analysis_lane: 0,
                status: RecordStatus::Complete,
            },
            rows,
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        for mode in [ControlMode::HumanInControl, ControlMode::AutonomyInControl] {
            let r = sample(mode, 300);
            let loaded = TrajectoryRecord::from_text(&r.to_text()).unwrap();
            assert_eq!(loaded.record, r);
            assert!(loaded.warnings.is_empty());
        }
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let r = sample(ControlMode::AutonomyInControl, 50);
        assert_eq!(TrajectoryRecord::from_binary(&r.to_binary().unwrap()).unwrap(), r);
    }

    #[test]
    fn truncation_is_detected() {
        let text = sample(ControlMode::HumanInControl, 20).to_text();
        let cut = &text[..text.len() - 40];
        assert!(matches!(TrajectoryRecord::from_text(cut), Err(HarnessError::Malformed { .. })));
        let lines: Vec<&str> = text.lines().collect();
        let dropped = lines[..lines.len() - 1].join("\n");
        assert!(matches!(TrajectoryRecord::from_text(&dropped), Err(HarnessError::Malformed { .. })));

        let bin = sample(ControlMode::HumanInControl, 20).to_binary().unwrap();
        assert!(matches!(TrajectoryRecord::from_binary(&bin[..bin.len() - 3]), Err(HarnessError::Malformed { .. })));
    }

    #[test]
    fn schema_errors() {
        let text = sample(ControlMode::HumanInControl, 3).to_text();
        let future = text.replacen("steerlab-record 2", "steerlab-record 9", 1);
        assert!(matches!(TrajectoryRecord::from_text(&future), Err(HarnessError::SchemaVersion { found: 9, .. })));
        assert!(TrajectoryRecord::from_text("not a record").is_err());
        let bad_number = text.replacen(" 15.0 ", " fifteen ", 1);
        assert!(TrajectoryRecord::from_text(&bad_number).is_err());
    }

    #[test]
    fn mode_isolation_in_columns() {
        let human = sample(ControlMode::HumanInControl, 1);
        assert!(!human.columns().iter().any(|c| c.starts_with("w_")));
        let auto = sample(ControlMode::AutonomyInControl, 1);
        assert_eq!(auto.columns().iter().filter(|c| c.starts_with("w_")).count(), 2);
        assert_eq!(auto.weight_series(0).unwrap().len(), 1);
        assert!(human.weight_series(0).is_none());
    }
}
