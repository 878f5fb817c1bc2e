//! File formats: kinematic tree JSON, pose-sequence JSONL and config files.
//!
//! One JSONL line holds one frame:
//!
//! ```json
//! {"ts":0.0,"pose2d":[[x,y],...],"pose3d":[[x,y,z],...],
//!  "rotations":{"representation":"quat","values":[[w,x,y,z],...]},
//!  "provenance":"ik-pseudo","ik":{"converged":true,"residual_mm":0.01,"iterations":3}}
//! ```
//!
//! Only `ts` and `pose2d` are required. Emitted files use a fixed key order
//! and write every float with 17 significant digits, so parsing and emitting
//! again reproduces the file byte for byte. Angles are radians throughout.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kinematics::{Frame, IkFrameInfo, KinematicTree, Pose2D, Pose3D, PoseSequence, TreeFile};
use crate::so3::{JointRotations, Representation};

/// Per-joint rotations exactly as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationsRecord {
    pub representation: Representation,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IkRecord {
    pub converged: bool,
    pub residual_mm: f64,
    pub iterations: usize,
}

/// One JSONL line, without any interpretation of its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub ts: f64,
    pub pose2d: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose3d: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotations: Option<RotationsRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ik: Option<IkRecord>,
}

impl FrameRecord {
    pub fn from_frame(frame: &Frame, representation: Representation) -> Self {
        FrameRecord {
            ts: frame.timestamp,
            pose2d: frame.pose2d.positions.iter().map(|p| [p.x, p.y]).collect(),
            pose3d: frame
                .pose3d
                .as_ref()
                .map(|p| p.positions.iter().map(|q| [q.x, q.y, q.z]).collect()),
            rotations: frame.rotations.as_ref().map(|r| RotationsRecord {
                representation,
                values: r.iter().map(|m| representation.encode(m)).collect(),
            }),
            provenance: frame.provenance.clone(),
            ik: frame.ik.map(|i| IkRecord {
                converged: i.converged,
                residual_mm: i.residual_mm,
                iterations: i.iterations,
            }),
        }
    }

    /// Interprets the record. Matrices must be rotations to within the
    /// library tolerance; quaternions are normalized on decode.
    pub fn to_frame(&self, line: usize) -> Result<Frame> {
        let parse_err = |path: String, message: String| Error::Parse {
            line,
            path,
            message,
        };
        let rotations = match &self.rotations {
            None => None,
            Some(rec) => {
                let dim = rec.representation.dim();
                let mut out = Vec::with_capacity(rec.values.len());
                for (k, v) in rec.values.iter().enumerate() {
                    let path = format!("rotations.values[{k}]");
                    if v.len() != dim {
                        return Err(parse_err(
                            path,
                            format!("{} needs {dim} values, found {}", rec.representation, v.len()),
                        ));
                    }
                    if !v.iter().all(|x| x.is_finite()) {
                        return Err(parse_err(path, "non-finite value".into()));
                    }
                    let r = match rec.representation {
                        Representation::Matrix => crate::so3::RotMatrix::from_row_major(v)
                            .map_err(|e| parse_err(path, e.to_string()))?,
                        Representation::Quaternion if v.iter().all(|x| *x == 0.0) => {
                            return Err(parse_err(path, "zero quaternion".into()));
                        }
                        repr => repr.decode(v),
                    };
                    out.push(r);
                }
                Some(JointRotations::new(out))
            }
        };
        Ok(Frame {
            timestamp: self.ts,
            pose2d: Pose2D::new(self.pose2d.iter().map(|p| Vector2::new(p[0], p[1])).collect()),
            pose3d: self.pose3d.as_ref().map(|p| {
                Pose3D::new(p.iter().map(|q| Vector3::new(q[0], q[1], q[2])).collect())
            }),
            rotations,
            provenance: self.provenance.clone(),
            ik: self.ik.map(|i| IkFrameInfo {
                converged: i.converged,
                residual_mm: i.residual_mm,
                iterations: i.iterations,
            }),
        })
    }
}

/// Serializes `value` with floats written as `{:.16e}` (17 significant
/// digits). Non-finite floats become `null`.
pub fn to_json_string<T: Serialize>(value: &T, pretty: bool) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut out = String::new();
    write_value(&mut out, &v, pretty, 0);
    Ok(out)
}

fn write_value(out: &mut String, v: &Value, pretty: bool, depth: usize) {
    let newline = |out: &mut String, depth: usize| {
        if pretty {
            out.push('\n');
            out.push_str(&"  ".repeat(depth));
        }
    };
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let f = n.as_f64().expect("f64 number");
                out.push_str(&format!("{f:.16e}"));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            // Arrays of scalars stay on one line even in pretty mode.
            let flat = items.iter().all(|i| !i.is_array() && !i.is_object());
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if !flat {
                    newline(out, depth + 1);
                }
                write_value(out, item, pretty, depth + 1);
            }
            if !flat && !items.is_empty() {
                newline(out, depth);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (i, (k, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, depth + 1);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                if pretty {
                    out.push(' ');
                }
                write_value(out, item, pretty, depth + 1);
            }
            if !map.is_empty() {
                newline(out, depth);
            }
            out.push('}');
        }
    }
}

fn json_error(line_offset: usize, e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = e.path().to_string();
    let inner = e.into_inner();
    Error::Parse {
        line: line_offset + inner.line().max(1) - 1,
        path,
        message: inner.to_string(),
    }
}

/// Parses a JSON document with path-to-field diagnostics.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| json_error(1, e))?;
    de.end().map_err(|e| Error::Parse {
        line: e.line(),
        path: ".".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

/// Parses one JSONL line; `line` is its 1-based number for diagnostics.
pub fn parse_frame_line(text: &str, line: usize) -> Result<FrameRecord> {
    let mut de = serde_json::Deserializer::from_str(text);
    let record = serde_path_to_error::deserialize(&mut de).map_err(|e| json_error(line, e))?;
    de.end().map_err(|e| Error::Parse {
        line,
        path: ".".into(),
        message: e.to_string(),
    })?;
    Ok(record)
}

pub fn emit_frame_line(record: &FrameRecord) -> Result<String> {
    to_json_string(record, false)
}

/// Streams frame records from JSONL, one line at a time. Blank lines are
/// skipped.
pub struct FrameReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(reader: R) -> Self {
        FrameReader {
            lines: reader.lines(),
            line: 0,
        }
    }

    /// Number of the last line read.
    pub fn line(&self) -> usize {
        self.line
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<(usize, FrameRecord)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(parse_frame_line(&text, self.line).map(|r| (self.line, r)));
        }
    }
}

/// Frame rate implied by the first and last timestamps, or 0 when it cannot
/// be inferred.
fn infer_frame_rate(frames: &[Frame]) -> f64 {
    match (frames.first(), frames.last()) {
        (Some(a), Some(b)) if frames.len() > 1 && b.timestamp > a.timestamp => {
            (frames.len() - 1) as f64 / (b.timestamp - a.timestamp)
        }
        _ => 0.0,
    }
}

pub fn read_sequence<R: BufRead>(reader: R) -> Result<PoseSequence> {
    read_sequence_tagged(reader).map(|(seq, _)| seq)
}

/// Like [`read_sequence`], also returning the representation tag of the
/// first frame that carries rotations.
pub fn read_sequence_tagged<R: BufRead>(
    reader: R,
) -> Result<(PoseSequence, Option<Representation>)> {
    let mut tag = None;
    let mut frames = Vec::new();
    let mut last_ts: Option<f64> = None;
    let mut joints: Option<usize> = None;
    for item in FrameReader::new(reader) {
        let (line, record) = item?;
        if tag.is_none() {
            tag = record.rotations.as_ref().map(|r| r.representation);
        }
        let frame = record.to_frame(line)?;
        if let Some(prev) = last_ts {
            if !(frame.timestamp > prev) {
                return Err(Error::Parse {
                    line,
                    path: "ts".into(),
                    message: format!("timestamp {} does not increase (previous {prev})", frame.timestamp),
                });
            }
        }
        let j = *joints.get_or_insert(frame.pose2d.len());
        let lens = [
            ("pose2d", Some(frame.pose2d.len())),
            ("pose3d", frame.pose3d.as_ref().map(Pose3D::len)),
            ("rotations.values", frame.rotations.as_ref().map(JointRotations::len)),
        ];
        for (path, len) in lens {
            if let Some(len) = len.filter(|&l| l != j) {
                return Err(Error::Parse {
                    line,
                    path: path.into(),
                    message: format!("{len} joints, expected {j}"),
                });
            }
        }
        last_ts = Some(frame.timestamp);
        frames.push(frame);
    }
    let frame_rate = infer_frame_rate(&frames);
    Ok((PoseSequence { frames, frame_rate }, tag))
}

/// Prefixes an I/O error with the file it concerns, keeping its kind.
pub fn located(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn open_file(path: &Path) -> Result<File> {
    File::open(path).map_err(located(path))
}

pub fn create_file(path: &Path) -> Result<File> {
    File::create(path).map_err(located(path))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(located(path))
}

pub fn read_sequence_file(path: &Path) -> Result<PoseSequence> {
    read_sequence(BufReader::new(open_file(path)?))
}

pub fn write_sequence<W: Write>(
    mut writer: W,
    sequence: &PoseSequence,
    representation: Representation,
) -> Result<()> {
    for frame in &sequence.frames {
        let line = emit_frame_line(&FrameRecord::from_frame(frame, representation))?;
        writeln!(writer, "{line}")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_sequence_file(
    path: &Path,
    sequence: &PoseSequence,
    representation: Representation,
) -> Result<()> {
    write_sequence(BufWriter::new(create_file(path)?), sequence, representation)
}

/// JSONL files of a dataset: a file stands for itself, a directory for its
/// `*.jsonl` entries in name order.
pub fn dataset_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(located(p))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()
                .map_err(located(p))?;
            entries.retain(|e| e.extension().is_some_and(|x| x == "jsonl"));
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn read_dataset(paths: &[PathBuf]) -> Result<Vec<PoseSequence>> {
    dataset_files(paths)?
        .iter()
        .map(|p| read_sequence_file(p))
        .collect()
}

/// Writes `seq_0000.jsonl`, `seq_0001.jsonl`, … into `dir`.
pub fn write_dataset(
    dir: &Path,
    sequences: &[PoseSequence],
    representation: Representation,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(located(dir))?;
    sequences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(format!("seq_{i:04}.jsonl"));
            write_sequence_file(&path, s, representation).map(|_| path)
        })
        .collect()
}

pub fn parse_tree(text: &str) -> Result<KinematicTree> {
    KinematicTree::from_file(from_json_str::<TreeFile>(text)?)
}

pub fn emit_tree(tree: &KinematicTree) -> Result<String> {
    to_json_string(&tree.to_file(), true)
}

pub fn read_tree(path: &Path) -> Result<KinematicTree> {
    parse_tree(&read_text(path)?)
}

/// Reads a JSON config, or TOML when the file name ends in `.toml`.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        parse_toml(&text)
    } else {
        from_json_str(&text)
    }
}

pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| toml_error(text, e))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let mut err = toml_error(text, inner);
        if let Error::Parse { path: p, .. } = &mut err {
            *p = path;
        }
        err
    })
}

fn toml_error(text: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::Parse {
        line,
        path: ".".into(),
        message: e.message().to_string(),
    }
}
