//! Simulation outcomes, the robustness measure, and the binary/CSV batch
//! formats.

use std::io::{Read, Write};
use std::path::Path;

use super::geometry::{Branch, SimError};
use super::noise::HORIZON;
use super::vehicle::VehicleState;

pub const OUTCOME_MAGIC: &[u8; 4] = b"CFSO";
pub const OUTCOME_VERSION: u32 = 1;

/// Both vehicles at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub ego: VehicleState,
    pub intruder: VehicleState,
}

impl Snapshot {
    pub fn separation(&self) -> f64 {
        ((self.ego.x - self.intruder.x).powi(2) + (self.ego.y - self.intruder.y).powi(2)).sqrt()
    }
}

/// Full record of one simulation: the state trajectory, the minimum
/// separation margin (robustness), and the collision flag (robustness zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub scenario_spawn: Branch,
    pub trajectory: Vec<Snapshot>,
    pub robustness: f64,
    pub collided: bool,
}

/// Robustness of a trajectory: the minimum over snapshots of
/// `max(0, separation - radius_sum)`. Zero means the discs touched.
pub fn robustness_of(trajectory: &[Snapshot], radius_sum: f64) -> f64 {
    trajectory
        .iter()
        .map(|s| (s.separation() - radius_sum).max(0.0))
        .fold(f64::INFINITY, f64::min)
}

impl SimOutcome {
    pub fn from_trajectory(
        scenario_spawn: Branch,
        trajectory: Vec<Snapshot>,
        radius_sum: f64,
    ) -> SimOutcome {
        let robustness = robustness_of(&trajectory, radius_sum);
        SimOutcome {
            scenario_spawn,
            trajectory,
            robustness,
            collided: robustness == 0.0,
        }
    }
}

fn put_state(buf: &mut Vec<u8>, s: &VehicleState) {
    for v in [s.x, s.y, s.vx, s.vy] {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Incremental writer for large outcome batches; the record count is fixed
/// up front and enforced on `finish`.
pub struct OutcomeWriter {
    file: std::fs::File,
    expected: usize,
    written: usize,
}

impl OutcomeWriter {
    pub fn create(path: &Path, count: usize) -> Result<OutcomeWriter, SimError> {
        let mut file = std::fs::File::create(path)?;
        let mut head = Vec::with_capacity(12);
        head.extend_from_slice(OUTCOME_MAGIC);
        head.extend_from_slice(&OUTCOME_VERSION.to_le_bytes());
        head.extend_from_slice(&(count as u32).to_le_bytes());
        file.write_all(&head)?;
        Ok(OutcomeWriter {
            file,
            expected: count,
            written: 0,
        })
    }

    pub fn push(&mut self, o: &SimOutcome) -> Result<(), SimError> {
        if o.trajectory.len() != HORIZON + 1 {
            return Err(SimError::TrajectoryLength {
                got: o.trajectory.len(),
                want: HORIZON + 1,
            });
        }
        let mut buf = Vec::with_capacity(1 + 24 * 8 * 4 + 5);
        buf.push(o.scenario_spawn.index() as u8);
        for snap in &o.trajectory {
            put_state(&mut buf, &snap.ego);
            put_state(&mut buf, &snap.intruder);
        }
        buf.extend_from_slice(&(o.robustness as f32).to_le_bytes());
        buf.push(o.collided as u8);
        self.file.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<(), SimError> {
        if self.written != self.expected {
            return Err(SimError::Format(format!(
                "outcome writer closed after {} of {} records",
                self.written, self.expected
            )));
        }
        Ok(())
    }
}

/// Writes a batch in the binary outcome format: magic, version, count, then
/// per record the scenario tag, a 24-snapshot x 8-float32 trajectory, the
/// robustness and the collision flag. Only full-horizon outcomes qualify.
pub fn write_outcomes(path: &Path, outcomes: &[SimOutcome]) -> Result<(), SimError> {
    let mut buf = Vec::with_capacity(16 + outcomes.len() * (1 + 24 * 8 * 4 + 5));
    buf.extend_from_slice(OUTCOME_MAGIC);
    buf.extend_from_slice(&OUTCOME_VERSION.to_le_bytes());
    buf.extend_from_slice(&(outcomes.len() as u32).to_le_bytes());
    for o in outcomes {
        if o.trajectory.len() != HORIZON + 1 {
            return Err(SimError::TrajectoryLength {
                got: o.trajectory.len(),
                want: HORIZON + 1,
            });
        }
        buf.push(o.scenario_spawn.index() as u8);
        for snap in &o.trajectory {
            put_state(&mut buf, &snap.ego);
            put_state(&mut buf, &snap.intruder);
        }
        buf.extend_from_slice(&(o.robustness as f32).to_le_bytes());
        buf.push(o.collided as u8);
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_outcomes(path: &Path) -> Result<Vec<SimOutcome>, SimError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], SimError> {
        if *pos + n > bytes.len() {
            return Err(SimError::Format("truncated outcome file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let mut pos = 0usize;
    if take(&mut pos, 4)? != OUTCOME_MAGIC {
        return Err(SimError::Format("bad magic, expected CFSO".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != OUTCOME_VERSION {
        return Err(SimError::Format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let tag = take(&mut pos, 1)?[0] as usize;
        let scenario_spawn = Branch::from_index(tag)
            .ok_or_else(|| SimError::Format(format!("bad scenario tag {tag}")))?;
        let mut trajectory = Vec::with_capacity(HORIZON + 1);
        for _ in 0..HORIZON + 1 {
            let mut vals = [0.0f64; 8];
            for v in vals.iter_mut() {
                *v = f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as f64;
            }
            trajectory.push(Snapshot {
                ego: VehicleState {
                    x: vals[0],
                    y: vals[1],
                    vx: vals[2],
                    vy: vals[3],
                    route_progress: 0.0,
                },
                intruder: VehicleState {
                    x: vals[4],
                    y: vals[5],
                    vx: vals[6],
                    vy: vals[7],
                    route_progress: 0.0,
                },
            });
        }
        let robustness = f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as f64;
        let collided = take(&mut pos, 1)?[0] != 0;
        out.push(SimOutcome {
            scenario_spawn,
            trajectory,
            robustness,
            collided,
        });
    }
    Ok(out)
}

/// CSV mirror of the binary batch, one row per (record, timestep).
pub fn write_outcomes_csv(path: &Path, outcomes: &[SimOutcome]) -> Result<(), SimError> {
    let mut s = String::from(
        "record,scenario,t,ego_x,ego_y,ego_vx,ego_vy,intr_x,intr_y,intr_vx,intr_vy,robustness,collided\n",
    );
    for (i, o) in outcomes.iter().enumerate() {
        for (t, snap) in o.trajectory.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                i,
                o.scenario_spawn.name(),
                t,
                snap.ego.x,
                snap.ego.y,
                snap.ego.vx,
                snap.ego.vy,
                snap.intruder.x,
                snap.intruder.y,
                snap.intruder.vx,
                snap.intruder.vy,
                o.robustness,
                o.collided as u8
            ));
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(x: f64, y: f64) -> VehicleState {
        VehicleState {
            x,
            y,
            vx: 0.0,
            vy: 0.0,
            route_progress: 0.0,
        }
    }

    #[test]
    fn coincident_positions_are_a_collision() {
        let traj = vec![Snapshot {
            ego: state(0.1, 0.2),
            intruder: state(0.1, 0.2),
        }];
        assert_eq!(robustness_of(&traj, 0.04), 0.0);
    }

    #[test]
    fn constant_offset_gives_offset_minus_radius() {
        let d = 0.3;
        let traj: Vec<Snapshot> = (0..10)
            .map(|i| Snapshot {
                ego: state(i as f64 * 0.1, 0.0),
                intruder: state(i as f64 * 0.1, d),
            })
            .collect();
        let rho = robustness_of(&traj, 0.04);
        assert!((rho - (d - 0.04)).abs() < 1e-12);
    }

    #[test]
    fn single_snapshot_min_is_itself() {
        let traj = vec![Snapshot {
            ego: state(0.0, 0.0),
            intruder: state(0.5, 0.0),
        }];
        assert!((robustness_of(&traj, 0.04) - 0.46).abs() < 1e-12);
    }

    #[test]
    fn appending_post_collision_snapshots_keeps_robustness() {
        let mut traj = vec![
            Snapshot {
                ego: state(0.0, 0.0),
                intruder: state(0.5, 0.0),
            },
            Snapshot {
                ego: state(0.1, 0.0),
                intruder: state(0.11, 0.0),
            },
        ];
        let before = robustness_of(&traj, 0.04);
        assert_eq!(before, 0.0);
        let last = *traj.last().unwrap();
        traj.extend(std::iter::repeat(last).take(5));
        assert_eq!(robustness_of(&traj, 0.04), before);
    }

    #[test]
    fn batch_file_round_trip() {
        let traj: Vec<Snapshot> = (0..HORIZON + 1)
            .map(|i| Snapshot {
                ego: state(i as f64 * 0.015625, -0.5),
                intruder: state(0.25, i as f64 * 0.03125),
            })
            .collect();
        let o = SimOutcome::from_trajectory(Branch::West, traj, 0.04);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.cfso");
        write_outcomes(&path, &[o.clone()]).unwrap();
        let back = read_outcomes(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].scenario_spawn, Branch::West);
        assert_eq!(back[0].collided, o.collided);
        // values chosen exactly representable in f32
        for (a, b) in back[0].trajectory.iter().zip(&o.trajectory) {
            assert_eq!(a.ego.x, b.ego.x);
            assert_eq!(a.intruder.y, b.intruder.y);
        }
    }

    #[test]
    fn short_trajectory_rejected_by_writer() {
        let o = SimOutcome::from_trajectory(
            Branch::East,
            vec![Snapshot {
                ego: state(0.0, 0.0),
                intruder: state(1.0, 1.0),
            }],
            0.04,
        );
        let dir = tempfile::tempdir().unwrap();
        assert!(write_outcomes(&dir.path().join("x.cfso"), &[o]).is_err());
    }
}
