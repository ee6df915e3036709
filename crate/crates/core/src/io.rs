//! Plain-text and binary artifact writers. Every text file starts with a
//! `# config_hash: ...` comment line (PLY uses its own `comment` syntax).

use std::io::{self, Read, Write};

use nalgebra::Vector3;
use thiserror::Error;

use crate::analysis::{BaselineSearch, SweepResult};
use crate::assoc::FeatureTrack;
use crate::densefit::DepthImage;
use crate::relpose::RelPoseEstimate;
use crate::sim::SensorStream;
use crate::triangulate::{LandmarkSource, SensitivityRow, SENSITIVITY_LABELS};

pub const DEPTH_MAGIC: &[u8; 4] = b"FCSD";
pub const DEPTH_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad depth file: {0}")]
    BadDepth(String),
}

pub fn write_hash_line<W: Write>(w: &mut W, hash: &str) -> io::Result<()> {
    writeln!(w, "# config_hash: {hash}")
}

/// Skips `#` comment lines; returns header and rows split on commas.
pub fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    let split = |l: &str| l.split(',').map(str::to_owned).collect::<Vec<_>>();
    let header = lines.next().map(split).unwrap_or_default();
    (header, lines.map(split).collect())
}

pub fn write_estimates_csv<W: Write>(w: &mut W, hash: &str, estimates: &[RelPoseEstimate]) -> io::Result<()> {
    write_hash_line(w, hash)?;
    writeln!(w, "time_s,px,py,pz,vx,vy,vz,roll_deg,pitch_deg,yaw_deg,cost,iters,status")?;
    for e in estimates {
        let (p, v, o) = (e.position, e.velocity, e.orientation);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            e.time,
            p.x,
            p.y,
            p.z,
            v.x,
            v.y,
            v.z,
            o.roll.to_degrees(),
            o.pitch.to_degrees(),
            o.yaw.to_degrees(),
            e.cost,
            e.iterations,
            e.status.as_str()
        )?;
    }
    Ok(())
}

/// One row per tracked observation; `alive` is the track's final state.
pub fn write_tracks_csv<'a, W, I>(w: &mut W, hash: &str, tracks: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a FeatureTrack>,
{
    write_hash_line(w, hash)?;
    writeln!(w, "frame,agent,track_id,u,v,alive")?;
    for t in tracks {
        for (frame, o) in &t.history {
            writeln!(w, "{},{},{},{},{},{}", frame, t.agent, t.track_id, o.u, o.v, u8::from(t.alive))?;
        }
    }
    Ok(())
}

/// A mapped point for export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Vector3<f64>,
    pub source: LandmarkSource,
    pub condition: f64,
}

pub fn write_landmarks_csv<W: Write>(w: &mut W, hash: &str, points: &[CloudPoint]) -> io::Result<()> {
    write_hash_line(w, hash)?;
    writeln!(w, "x,y,z,source,cond")?;
    for p in points {
        let q = p.position;
        writeln!(w, "{},{},{},{},{}", q.x, q.y, q.z, p.source.code(), p.condition)?;
    }
    Ok(())
}

/// ASCII PLY with `x y z source cond` vertex properties.
pub fn write_ply<W: Write>(w: &mut W, hash: &str, points: &[CloudPoint]) -> io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "comment config_hash {hash}")?;
    writeln!(w, "element vertex {}", points.len())?;
    for prop in ["float x", "float y", "float z", "uchar source", "float cond"] {
        writeln!(w, "property {prop}")?;
    }
    writeln!(w, "end_header")?;
    for p in points {
        let q = p.position;
        writeln!(w, "{} {} {} {} {}", q.x as f32, q.y as f32, q.z as f32, p.source.code(), p.condition as f32)?;
    }
    Ok(())
}

/// 16-byte header (`FCSD`, width, height, reserved zero; little-endian u32) followed by
/// row-major little-endian f32 values.
pub fn write_depth<W: Write>(w: &mut W, image: &DepthImage) -> io::Result<()> {
    w.write_all(DEPTH_MAGIC)?;
    w.write_all(&image.width.to_le_bytes())?;
    w.write_all(&image.height.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for &v in &image.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_depth<R: Read>(r: &mut R) -> Result<DepthImage, IoError> {
    let mut header = [0u8; DEPTH_HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[..4] != DEPTH_MAGIC {
        return Err(IoError::BadDepth("missing FCSD magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4-byte slice"));
    let (width, height) = (word(4), word(8));
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let n = width as usize * height as usize;
    if body.len() != n * 4 {
        return Err(IoError::BadDepth(format!("expected {} data bytes, found {}", n * 4, body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64).collect();
    Ok(DepthImage { width, height, data })
}

/// `key=value` sidecar describing a depth file.
pub fn write_depth_sidecar<W: Write>(w: &mut W, hash: &str, image: &DepthImage, extra: &[(&str, String)]) -> io::Result<()> {
    write_hash_line(w, hash)?;
    writeln!(w, "width={}", image.width)?;
    writeln!(w, "height={}", image.height)?;
    writeln!(w, "dtype=f32le")?;
    for (k, v) in extra {
        writeln!(w, "{k}={v}")?;
    }
    Ok(())
}

/// Matrix layout: first column holds the row axis, remaining headers are column values.
pub fn write_sweep_matrix<W: Write>(w: &mut W, hash: &str, sweep: &SweepResult) -> io::Result<()> {
    write_hash_line(w, hash)?;
    let cols: Vec<String> = sweep.cols.iter().map(|c| format!("{}_{}", sweep.col_label, c)).collect();
    writeln!(w, "{},{}", sweep.row_label, cols.join(","))?;
    for (r, row) in sweep.rows.iter().zip(&sweep.values) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", r, vals.join(","))?;
    }
    Ok(())
}

/// One row per cell: row value, column value, statistic, standard error, rejected count, trials.
pub fn write_sweep_long<W: Write>(w: &mut W, hash: &str, sweep: &SweepResult) -> io::Result<()> {
    write_hash_line(w, hash)?;
    writeln!(w, "{},{},value,std_error,rejected,trials", sweep.row_label, sweep.col_label)?;
    for (i, r) in sweep.rows.iter().enumerate() {
        for (j, c) in sweep.cols.iter().enumerate() {
            writeln!(w, "{},{},{},{},{},{}", r, c, sweep.values[i][j], sweep.std_error[i][j], sweep.rejected[i][j], sweep.trials)?;
        }
    }
    Ok(())
}

pub fn write_best_baseline<W: Write>(w: &mut W, hash: &str, search: &BaselineSearch) -> io::Result<()> {
    write_hash_line(w, hash)?;
    writeln!(w, "depth_m,best_baseline_m")?;
    for (d, l) in &search.best {
        writeln!(w, "{d},{l}")?;
    }
    Ok(())
}

pub fn write_sensitivity_csv<W: Write>(w: &mut W, hash: &str, rows: &[SensitivityRow]) -> io::Result<()> {
    write_hash_line(w, hash)?;
    writeln!(w, "x,y,z,{}", SENSITIVITY_LABELS.join(","))?;
    for r in rows {
        let g: Vec<String> = r.gradient.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{},{},{}", r.landmark.x, r.landmark.y, r.landmark.z, g.join(","))?;
    }
    Ok(())
}

/// Per-channel CSV files of a sensor stream, as `(file name, contents)`.
pub fn stream_csvs(stream: &SensorStream, hash: &str) -> io::Result<Vec<(&'static str, Vec<u8>)>> {
    let mut truth = Vec::new();
    write_hash_line(&mut truth, hash)?;
    writeln!(truth, "time_s,agent,px,py,pz,vx,vy,vz,roll_deg,pitch_deg,yaw_deg")?;
    for f in &stream.frames {
        for (agent, a) in [(0, &f.leader), (1, &f.follower)] {
            let (r, p, y) = a.pose.rotation.euler();
            let (t, v) = (a.pose.translation, a.velocity);
            writeln!(
                truth,
                "{},{},{},{},{},{},{},{},{},{},{}",
                f.time,
                agent,
                t.x,
                t.y,
                t.z,
                v.x,
                v.y,
                v.z,
                r.to_degrees(),
                p.to_degrees(),
                y.to_degrees()
            )?;
        }
    }

    let mut markers = Vec::new();
    write_hash_line(&mut markers, hash)?;
    writeln!(markers, "time_s,agent,marker,u_px,v_px,valid")?;
    for f in &stream.frames {
        for (agent, obs) in [(0, &f.leader_marker_obs), (1, &f.follower_marker_obs)] {
            for o in obs {
                writeln!(markers, "{},{},{},{},{},{}", f.time, agent, o.feature_id, o.u, o.v, u8::from(o.valid))?;
            }
        }
    }

    let mut imu = Vec::new();
    write_hash_line(&mut imu, hash)?;
    writeln!(imu, "time_s,agent,ax,ay,az")?;
    for (agent, series) in [(0, &stream.leader_imu), (1, &stream.follower_imu)] {
        for s in series {
            writeln!(imu, "{},{},{},{},{}", s.time, agent, s.accel.x, s.accel.y, s.accel.z)?;
        }
    }

    let mut uwb = Vec::new();
    write_hash_line(&mut uwb, hash)?;
    writeln!(uwb, "time_s,range_m")?;
    for f in &stream.frames {
        writeln!(uwb, "{},{}", f.time, f.uwb_range)?;
    }

    let mut attitude = Vec::new();
    write_hash_line(&mut attitude, hash)?;
    writeln!(attitude, "time_s,agent,roll_deg,pitch_deg")?;
    for f in &stream.frames {
        for (agent, (r, p)) in [(0, f.leader_roll_pitch), (1, f.follower_roll_pitch)] {
            writeln!(attitude, "{},{},{},{}", f.time, agent, r.to_degrees(), p.to_degrees())?;
        }
    }

    let mut front = Vec::new();
    write_hash_line(&mut front, hash)?;
    writeln!(front, "time_s,agent,feature_id,u_px,v_px")?;
    for f in &stream.frames {
        for (agent, obs) in [(0, &f.leader_front), (1, &f.follower_front)] {
            for o in obs {
                writeln!(front, "{},{},{},{},{}", o.timestamp, agent, o.feature_id, o.u, o.v)?;
            }
        }
    }

    let mut landmarks = Vec::new();
    write_hash_line(&mut landmarks, hash)?;
    writeln!(landmarks, "id,x,y,z,source")?;
    for l in &stream.landmarks {
        writeln!(landmarks, "{},{},{},{},{}", l.id, l.position.x, l.position.y, l.position.z, l.source.code())?;
    }

    Ok(vec![
        ("truth.csv", truth),
        ("markers.csv", markers),
        ("imu.csv", imu),
        ("uwb.csv", uwb),
        ("attitude.csv", attitude),
        ("front_features.csv", front),
        ("scene_landmarks.csv", landmarks),
    ])
}
