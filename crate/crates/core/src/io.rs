//! File formats: TOML scenario files, plan/trajectory CSV and metrics CSV.
//! Every writer goes through a temporary file in the target directory and
//! renames it into place.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::metrics::SweepResult;
use crate::model::{Scenario, Trajectory, UavSpec};
use crate::{Error, Result};

pub const SCENARIO_FORMAT_VERSION: &str = "1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioToml {
    version: String,
    #[serde(default = "yes")]
    endpoint_separation: bool,
    area_width: f64,
    area_height: f64,
    dt: f64,
    num_slots: usize,
    seed: u64,
    uavs: Vec<UavToml>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UavToml {
    id: usize,
    start: [f64; 2],
    goal: [f64; 2],
    gps_error_radius: f64,
    v_max: f64,
    energy: f64,
    compute_capacity: f64,
}

/// A scenario as stored on disk. `endpoint_separation = false` marks
/// baseline-only scenarios whose starts or goals may be crowded; they load
/// with field checks only.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub endpoint_separation: bool,
}

impl ScenarioFile {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario, endpoint_separation: true }
    }

    pub fn to_toml(&self) -> Result<String> {
        let sc = &self.scenario;
        if sc.seed > i64::MAX as u64 {
            return Err(Error::Parse(format!("seed {} does not fit a TOML integer", sc.seed)));
        }
        let doc = ScenarioToml {
            version: SCENARIO_FORMAT_VERSION.into(),
            endpoint_separation: self.endpoint_separation,
            area_width: sc.area_width,
            area_height: sc.area_height,
            dt: sc.dt,
            num_slots: sc.num_slots,
            seed: sc.seed,
            uavs: sc
                .uavs
                .iter()
                .map(|u| UavToml {
                    id: u.id,
                    start: [u.start.x, u.start.y],
                    goal: [u.goal.x, u.goal.y],
                    gps_error_radius: u.gps_error_radius,
                    v_max: u.v_max,
                    energy: u.energy,
                    compute_capacity: u.compute_capacity,
                })
                .collect(),
        };
        toml::to_string(&doc).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Parses and checks the scenario invariants.
    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: ScenarioToml = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if doc.version != SCENARIO_FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported scenario version {:?}", doc.version)));
        }
        let scenario = Scenario {
            area_width: doc.area_width,
            area_height: doc.area_height,
            dt: doc.dt,
            num_slots: doc.num_slots,
            seed: doc.seed,
            uavs: doc
                .uavs
                .into_iter()
                .map(|u| UavSpec {
                    id: u.id,
                    start: Vec2::new(u.start[0], u.start[1]),
                    goal: Vec2::new(u.goal[0], u.goal[1]),
                    gps_error_radius: u.gps_error_radius,
                    v_max: u.v_max,
                    energy: u.energy,
                    compute_capacity: u.compute_capacity,
                })
                .collect(),
        };
        if doc.endpoint_separation {
            scenario.validate()?;
        } else {
            scenario.validate_basic()?;
        }
        Ok(Self { scenario, endpoint_separation: doc.endpoint_separation })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_toml()?.as_bytes())
    }
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// One row of a plan or trajectory CSV. Values carry six decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub run_id: u64,
    pub uav_id: usize,
    pub slot: usize,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

fn fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    // keep "-0.000000" out of the files
    if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn round6(v: f64) -> f64 {
    fixed6(v).parse().expect("formatted float parses")
}

/// Rows for every slot of every trajectory. The velocity on a row is the
/// one flown into that slot, zero on a trajectory's first slot.
pub fn plan_rows(run_id: u64, trajectories: &[Trajectory]) -> Vec<PlanRow> {
    let mut rows = Vec::new();
    for t in trajectories {
        for (i, p) in t.positions.iter().enumerate() {
            let v = if i == 0 { Vec2::ZERO } else { t.velocities[i - 1] };
            rows.push(PlanRow {
                run_id,
                uav_id: t.uav_id,
                slot: t.start_slot + i,
                x: round6(p.x),
                y: round6(p.y),
                vx: round6(v.x),
                vy: round6(v.y),
            });
        }
    }
    rows
}

pub fn plan_csv(rows: &[PlanRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "uav_id", "slot", "x", "y", "vx", "vy"])?;
    for r in rows {
        w.write_record([
            r.run_id.to_string(),
            r.uav_id.to_string(),
            r.slot.to_string(),
            fixed6(r.x),
            fixed6(r.y),
            fixed6(r.vx),
            fixed6(r.vy),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_plan_csv(data: &[u8]) -> Result<Vec<PlanRow>> {
    csv::Reader::from_reader(data).deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// One row of a metrics CSV. Aggregate rows carry `run_id = "mean"`, the
/// mean of each metric over completed runs, and the number of completed
/// runs in `completed`; raw rows carry the run index and 0/1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub swept_param: String,
    pub value: f64,
    pub pair_slot_collisions: f64,
    pub distinct_pair_collisions: f64,
    pub mean_extra_distance: f64,
    pub total_planning_time_s: f64,
    pub completed: u64,
}

pub const AGGREGATE_RUN_ID: &str = "mean";

impl MetricsRow {
    pub fn is_aggregate(&self) -> bool {
        self.run_id == AGGREGATE_RUN_ID
    }
}

/// Raw rows of each value followed by its aggregate row.
pub fn sweep_rows(result: &SweepResult) -> Vec<MetricsRow> {
    let param = result.param.name().to_string();
    let mut out = Vec::with_capacity(result.rows.len() + result.summaries.len());
    for (vi, s) in result.summaries.iter().enumerate() {
        for r in result.rows.iter().filter(|r| r.value_index == vi) {
            let m = &r.metrics;
            out.push(MetricsRow {
                run_id: r.run_index.to_string(),
                swept_param: param.clone(),
                value: r.value,
                pair_slot_collisions: m.pair_slot_collisions as f64,
                distinct_pair_collisions: m.distinct_pair_collisions as f64,
                mean_extra_distance: m.mean_extra_distance,
                total_planning_time_s: m.total_planning_time_s,
                completed: u64::from(m.completed),
            });
        }
        out.push(MetricsRow {
            run_id: AGGREGATE_RUN_ID.into(),
            swept_param: param.clone(),
            value: s.value,
            pair_slot_collisions: s.mean.pair_slot_collisions,
            distinct_pair_collisions: s.mean.distinct_pair_collisions,
            mean_extra_distance: s.mean.mean_extra_distance,
            total_planning_time_s: s.mean.total_planning_time_s,
            completed: s.completed as u64,
        });
    }
    out
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "run_id",
            "swept_param",
            "value",
            "pair_slot_collisions",
            "distinct_pair_collisions",
            "mean_extra_distance",
            "total_planning_time_s",
            "completed",
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_metrics_csv(data: &[u8]) -> Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(data).deserialize().map(|r| r.map_err(Error::from)).collect()
}
