//! The three run logs: dynamics, bridge relays and ADS ticks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::bridge::RelayRecord;

pub const LOG_SCHEMA_VERSION: u32 = 1;
pub const DYNAMICS_LOG: &str = "dynamics_log.csv";
pub const BRIDGE_LOG: &str = "bridge_log.csv";
pub const ADS_LOG: &str = "ads_log.csv";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorSample {
    pub x: f64,
    pub y: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsRow {
    pub tick: u64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub v: f64,
    pub a: f64,
    pub gear: u8,
    pub steer: f64,
    /// In the order of `SimLog::actor_ids`.
    pub actors: Vec<ActorSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdsRow {
    pub tick: u64,
    pub t: f64,
    pub active: bool,
    pub stale: bool,
    pub lead_id: Option<u32>,
    pub gap: Option<f64>,
    pub lead_speed: Option<f64>,
    pub idm_accel: f64,
    pub lateral_error: f64,
    pub throttle_percent: f64,
    pub brake_percent: f64,
    pub steer_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub dt: f64,
    pub actor_ids: Vec<u32>,
    pub dynamics: Vec<DynamicsRow>,
    pub bridge: Vec<RelayRecord>,
    pub ads: Vec<AdsRow>,
}

fn header_line() -> String {
    format!("# schema_version={LOG_SCHEMA_VERSION}\n")
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SimLog {
    pub fn ticks(&self) -> usize {
        self.dynamics.len()
    }

    pub fn dynamics_csv(&self) -> String {
        let mut s = header_line();
        s.push_str("tick,t,ego_x,ego_y,ego_yaw,ego_v,ego_a,gear,ego_steer");
        for id in &self.actor_ids {
            let _ = write!(s, ",actor{id}_x,actor{id}_y,actor{id}_v");
        }
        s.push('\n');
        for r in &self.dynamics {
            let _ = write!(s, "{},{},{},{},{},{},{},{},{}", r.tick, r.t, r.x, r.y, r.yaw, r.v, r.a, r.gear, r.steer);
            for a in &r.actors {
                let _ = write!(s, ",{},{},{}", a.x, a.y, a.v);
            }
            s.push('\n');
        }
        s
    }

    pub fn bridge_csv(&self) -> String {
        let mut s = header_line();
        s.push_str("t,seq,source,destination,digest\n");
        for r in &self.bridge {
            let _ = writeln!(s, "{},{},{},{},{}", r.t, r.seq, r.source, r.destination, r.digest);
        }
        s
    }

    pub fn ads_csv(&self) -> String {
        let mut s = header_line();
        s.push_str("tick,t,active,stale,lead_id,gap,lead_speed,idm_accel,lateral_error,throttle_percent,brake_percent,steer_percent\n");
        for r in &self.ads {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.tick,
                r.t,
                r.active as u8,
                r.stale as u8,
                opt(r.lead_id),
                opt(r.gap),
                opt(r.lead_speed),
                r.idm_accel,
                r.lateral_error,
                r.throttle_percent,
                r.brake_percent,
                r.steer_percent
            );
        }
        s
    }

    /// (file name, contents) of the three logs.
    pub fn files(&self) -> [(&'static str, String); 3] {
        [(DYNAMICS_LOG, self.dynamics_csv()), (BRIDGE_LOG, self.bridge_csv()), (ADS_LOG, self.ads_csv())]
    }

    /// SHA-256 hex of each log file's bytes.
    pub fn digests(&self) -> [(&'static str, String); 3] {
        self.files().map(|(name, body)| (name, hex::encode(Sha256::digest(body.as_bytes()))))
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let mut out = Vec::new();
        for (name, body) in self.files() {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| HarnessError::io(&p, e))?;
            out.push(p);
        }
        Ok(out)
    }

    pub fn read(dir: &Path, dt: f64) -> Result<Self, HarnessError> {
        let text = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))
        };
        let (actor_ids, dynamics) = parse_dynamics(&text(DYNAMICS_LOG)?)?;
        let bridge = parse_bridge(&text(BRIDGE_LOG)?)?;
        let ads = parse_ads(&text(ADS_LOG)?)?;
        Ok(Self { dt, actor_ids, dynamics, bridge, ads })
    }
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes())
}

fn bad(file: &str, line: u64, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::IncompleteLog(format!("{file} line {line}: {msg}"))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, file: &str) -> Result<T, HarnessError> {
    let line = rec.position().map_or(0, |p| p.line());
    let s = rec.get(i).ok_or_else(|| bad(file, line, format!("missing column {i}")))?;
    s.parse().map_err(|_| bad(file, line, format!("cannot parse `{s}`")))
}

fn opt_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, file: &str) -> Result<Option<T>, HarnessError> {
    match rec.get(i) {
        Some("") | None => Ok(None),
        _ => field(rec, i, file).map(Some),
    }
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[&str], file: &str) -> Result<csv::StringRecord, HarnessError> {
    let h = rdr.headers().map_err(|e| bad(file, 1, e))?.clone();
    if h.len() < expected.len() || expected.iter().zip(h.iter()).any(|(a, b)| *a != b) {
        return Err(bad(file, 1, format!("unexpected header {:?}", h.iter().collect::<Vec<_>>())));
    }
    Ok(h)
}

fn parse_dynamics(text: &str) -> Result<(Vec<u32>, Vec<DynamicsRow>), HarnessError> {
    let f = DYNAMICS_LOG;
    let mut rdr = reader(text);
    let fixed = ["tick", "t", "ego_x", "ego_y", "ego_yaw", "ego_v", "ego_a", "gear", "ego_steer"];
    let h = check_header(&mut rdr, &fixed, f)?;
    let extra: Vec<&str> = h.iter().skip(fixed.len()).collect();
    if !extra.len().is_multiple_of(3) {
        return Err(bad(f, 1, "actor columns come in x, y, v triples"));
    }
    let actor_ids = extra
        .chunks(3)
        .map(|c| {
            c[0].strip_prefix("actor")
                .and_then(|s| s.strip_suffix("_x"))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(f, 1, format!("bad actor column `{}`", c[0])))
        })
        .collect::<Result<Vec<u32>, _>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(f, 0, e))?;
        let actors = (0..actor_ids.len())
            .map(|i| {
                let k = fixed.len() + 3 * i;
                Ok(ActorSample { x: field(&rec, k, f)?, y: field(&rec, k + 1, f)?, v: field(&rec, k + 2, f)? })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        rows.push(DynamicsRow {
            tick: field(&rec, 0, f)?,
            t: field(&rec, 1, f)?,
            x: field(&rec, 2, f)?,
            y: field(&rec, 3, f)?,
            yaw: field(&rec, 4, f)?,
            v: field(&rec, 5, f)?,
            a: field(&rec, 6, f)?,
            gear: field(&rec, 7, f)?,
            steer: field(&rec, 8, f)?,
            actors,
        });
    }
    Ok((actor_ids, rows))
}

fn parse_bridge(text: &str) -> Result<Vec<RelayRecord>, HarnessError> {
    let f = BRIDGE_LOG;
    let mut rdr = reader(text);
    check_header(&mut rdr, &["t", "seq", "source", "destination", "digest"], f)?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| bad(f, 0, e))?;
            Ok(RelayRecord {
                t: field(&rec, 0, f)?,
                seq: field(&rec, 1, f)?,
                source: field(&rec, 2, f)?,
                destination: field(&rec, 3, f)?,
                digest: field(&rec, 4, f)?,
            })
        })
        .collect()
}

fn parse_ads(text: &str) -> Result<Vec<AdsRow>, HarnessError> {
    let f = ADS_LOG;
    let mut rdr = reader(text);
    check_header(
        &mut rdr,
        &["tick", "t", "active", "stale", "lead_id", "gap", "lead_speed", "idm_accel", "lateral_error", "throttle_percent", "brake_percent", "steer_percent"],
        f,
    )?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| bad(f, 0, e))?;
            Ok(AdsRow {
                tick: field(&rec, 0, f)?,
                t: field(&rec, 1, f)?,
                active: field::<u8>(&rec, 2, f)? == 1,
                stale: field::<u8>(&rec, 3, f)? == 1,
                lead_id: opt_field(&rec, 4, f)?,
                gap: opt_field(&rec, 5, f)?,
                lead_speed: opt_field(&rec, 6, f)?,
                idm_accel: field(&rec, 7, f)?,
                lateral_error: field(&rec, 8, f)?,
                throttle_percent: field(&rec, 9, f)?,
                brake_percent: field(&rec, 10, f)?,
                steer_percent: field(&rec, 11, f)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SimLog {
        SimLog {
            dt: 0.01,
            actor_ids: vec![1, 4],
            dynamics: (0..3)
                .map(|k| DynamicsRow {
                    tick: k,
                    t: k as f64 / 100.0,
                    x: 100.0 + k as f64 * 0.25,
                    y: -27.0,
                    yaw: 0.0,
                    v: 25.0,
                    a: -0.125,
                    gear: 4,
                    steer: 0.0,
                    actors: vec![ActorSample { x: 1.0, y: -23.0, v: 27.0 }, ActorSample { x: 0.1 + 0.2, y: -27.0, v: 0.0 }],
                })
                .collect(),
            bridge: vec![RelayRecord { t: 0.0, seq: 1, source: "/cm/chassis".into(), destination: "/apollo/canbus/chassis".into(), digest: "ab".repeat(32) }],
            ads: vec![
                AdsRow {
                    tick: 0,
                    t: 0.0,
                    active: true,
                    stale: false,
                    lead_id: Some(1),
                    gap: Some(36.5),
                    lead_speed: Some(27.0),
                    idm_accel: -0.3,
                    lateral_error: 1e-17,
                    throttle_percent: 0.0,
                    brake_percent: 2.5,
                    steer_percent: -0.0,
                },
                AdsRow {
                    tick: 1,
                    t: 0.01,
                    active: false,
                    stale: true,
                    lead_id: None,
                    gap: None,
                    lead_speed: None,
                    idm_accel: 0.0,
                    lateral_error: f64::NAN,
                    throttle_percent: 0.0,
                    brake_percent: 0.0,
                    steer_percent: 0.0,
                },
            ],
        }
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log = sample();
        log.write(dir.path()).unwrap();
        let back = SimLog::read(dir.path(), 0.01).unwrap();
        assert_eq!(back.dynamics, log.dynamics);
        assert_eq!(back.bridge, log.bridge);
        assert_eq!(back.ads[0], log.ads[0]);
        assert!(back.ads[1].lateral_error.is_nan());
        assert_eq!(back.digests(), log.digests());
    }

    #[test]
    fn truncated_log_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        sample().write(dir.path()).unwrap();
        std::fs::write(dir.path().join(DYNAMICS_LOG), "# schema_version=1\ntick,t\n").unwrap();
        assert!(matches!(SimLog::read(dir.path(), 0.01), Err(HarnessError::IncompleteLog(_))));
    }
}
