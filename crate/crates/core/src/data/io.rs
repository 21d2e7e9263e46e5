//! CSV and JSONL sequence files.
//!
//! Both formats may start with one metadata line carrying the sequence id
//! and run settings (`# {json}` in CSV, a JSON object with an `id` key in
//! JSONL). Absent depth/LiDAR is an empty CSV cell or a missing JSON key.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttackKind, FrameLabel, SensorFrame, SensorSequence, SequenceMeta};
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 8] = [
    "t",
    "depth",
    "conf",
    "lidar",
    "speed",
    "throttle",
    "steering",
    "attack_label",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceFormat {
    Csv,
    Jsonl,
}

impl SequenceFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(SequenceFormat::Csv),
            "jsonl" | "ndjson" => Some(SequenceFormat::Jsonl),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            SequenceFormat::Csv => "csv",
            SequenceFormat::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    id: String,
    #[serde(default)]
    meta: SequenceMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonFrame {
    #[serde(flatten)]
    frame: SensorFrame,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attack_label: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonLine {
    Header(Header),
    Frame(JsonFrame),
}

fn label_to_str(label: FrameLabel) -> &'static str {
    match label {
        None => "clean",
        Some(kind) => kind.as_str(),
    }
}

fn parse_label(s: &str) -> std::result::Result<Option<FrameLabel>, String> {
    Ok(match s.trim() {
        "" => None,
        "clean" | "0" | "false" => Some(None),
        "bias" => Some(Some(AttackKind::Bias)),
        "blackout" => Some(Some(AttackKind::Blackout)),
        "unknown" | "1" | "true" => Some(Some(AttackKind::Unknown)),
        other => return Err(format!("unrecognised attack_label {other:?}")),
    })
}

fn default_id(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("sequence")
        .to_string()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn save_sequence(seq: &SensorSequence, path: &Path, format: SequenceFormat) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let header = Header {
        id: seq.id().to_string(),
        meta: seq.meta(),
    };
    let labels = seq.labels();
    let mut out = Vec::new();
    match format {
        SequenceFormat::Csv => {
            writeln!(out, "# {}", serde_json::to_string(&header)?).expect("vec write");
            let mut w = csv::Writer::from_writer(&mut out);
            let csv_err = |e: csv::Error| Error::io(path, e.into());
            w.write_record(CSV_COLUMNS).map_err(csv_err)?;
            for (i, f) in seq.frames().iter().enumerate() {
                let label = labels.map(|l| label_to_str(l[i])).unwrap_or("");
                w.write_record([
                    f.t.to_string(),
                    fmt_opt(f.depth),
                    f.conf.to_string(),
                    fmt_opt(f.lidar),
                    f.speed.to_string(),
                    f.throttle.to_string(),
                    f.steering.to_string(),
                    label.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        SequenceFormat::Jsonl => {
            writeln!(out, "{}", serde_json::to_string(&header)?).expect("vec write");
            for (i, f) in seq.frames().iter().enumerate() {
                let rec = JsonFrame {
                    frame: *f,
                    attack_label: labels.map(|l| label_to_str(l[i]).to_string()),
                };
                writeln!(out, "{}", serde_json::to_string(&rec)?).expect("vec write");
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_sequence(path: &Path, format: SequenceFormat) -> Result<SensorSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |row: usize, reason: String| Error::MalformedRow {
        path: path.to_path_buf(),
        row,
        reason,
    };
    let mut id = default_id(path);
    let mut meta = SequenceMeta::default();
    let mut frames = Vec::new();
    let mut labels: Vec<Option<FrameLabel>> = Vec::new();
    // line number (1-based) of each frame, for error reporting
    let mut rows = Vec::new();

    match format {
        SequenceFormat::Csv => {
            let mut body = text.as_str();
            let mut line_offset = 0;
            if let Some(rest) = body.strip_prefix('#') {
                let (first, tail) = rest.split_once('\n').unwrap_or((rest, ""));
                let h: Header = serde_json::from_str(first.trim())
                    .map_err(|e| malformed(1, format!("bad metadata line: {e}")))?;
                id = h.id;
                meta = h.meta;
                body = tail;
                line_offset = 1;
            }
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_reader(body.as_bytes());
            let headers = rdr
                .headers()
                .map_err(|e| malformed(line_offset + 1, e.to_string()))?
                .clone();
            if headers.iter().collect::<Vec<_>>() != CSV_COLUMNS {
                return Err(malformed(
                    line_offset + 1,
                    format!("expected columns {CSV_COLUMNS:?}"),
                ));
            }
            for (i, rec) in rdr.records().enumerate() {
                let row = line_offset + 2 + i;
                let rec = rec.map_err(|e| malformed(row, e.to_string()))?;
                let num = |col: usize| -> std::result::Result<f64, String> {
                    let s = rec.get(col).unwrap_or("").trim();
                    s.parse::<f64>()
                        .map_err(|_| format!("column {} value {s:?} is not a number", CSV_COLUMNS[col]))
                };
                let opt = |col: usize| -> std::result::Result<Option<f64>, String> {
                    if rec.get(col).unwrap_or("").trim().is_empty() {
                        Ok(None)
                    } else {
                        num(col).map(Some)
                    }
                };
                let parsed = (|| -> std::result::Result<_, String> {
                    let f = SensorFrame {
                        t: num(0)?,
                        depth: opt(1)?,
                        conf: num(2)?,
                        lidar: opt(3)?,
                        speed: num(4)?,
                        throttle: num(5)?,
                        steering: num(6)?,
                    };
                    let label = parse_label(rec.get(7).unwrap_or(""))?;
                    Ok((f, label))
                })()
                .map_err(|r| malformed(row, r))?;
                frames.push(parsed.0);
                labels.push(parsed.1);
                rows.push(row);
            }
        }
        SequenceFormat::Jsonl => {
            for (i, line) in text.lines().enumerate() {
                let row = i + 1;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<JsonLine>(line)
                    .map_err(|e| malformed(row, e.to_string()))?
                {
                    JsonLine::Header(h) if frames.is_empty() => {
                        id = h.id;
                        meta = h.meta;
                    }
                    JsonLine::Header(_) => {
                        return Err(malformed(row, "metadata line after frames".into()))
                    }
                    JsonLine::Frame(jf) => {
                        let label = parse_label(jf.attack_label.as_deref().unwrap_or(""))
                            .map_err(|r| malformed(row, r))?;
                        frames.push(jf.frame);
                        labels.push(label);
                        rows.push(row);
                    }
                }
            }
        }
    }

    let labelled = labels.iter().filter(|l| l.is_some()).count();
    let labels = match labelled {
        0 => None,
        n if n == labels.len() => Some(labels.into_iter().map(|l| l.unwrap()).collect()),
        _ => {
            let row = rows[labels.iter().position(Option::is_none).unwrap()];
            return Err(malformed(row, "attack_label missing on a labelled sequence".into()));
        }
    };

    SensorSequence::new(id, frames, labels, meta).map_err(|e| match e {
        Error::InvalidFrame { index, reason } => malformed(rows[index], reason),
        Error::NonMonotoneTimestamps { index } => {
            malformed(rows[index], "timestamps not strictly increasing".into())
        }
        other => other,
    })
}

/// Loads every `.csv`/`.jsonl` file of a directory, ordered by file name.
pub fn load_sequence_dir(dir: &Path) -> Result<Vec<(PathBuf, SensorSequence)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| SequenceFormat::from_path(p).is_some())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let fmt = SequenceFormat::from_path(&p).expect("filtered");
            load_sequence(&p, fmt).map(|s| (p, s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::frame;
    use proptest::prelude::*;

    fn sample() -> SensorSequence {
        let mut frames = vec![
            frame(0.0, Some(2.0)),
            frame(0.02, None),
            frame(0.04, Some(1.9600000000000002)),
        ];
        frames[1].lidar = None;
        frames[1].conf = 0.0;
        SensorSequence::new(
            "run-7",
            frames,
            Some(vec![None, Some(AttackKind::Blackout), Some(AttackKind::Bias)]),
            SequenceMeta {
                commanded_speed: Some(1.5),
                steering_setting: Some(-15.0),
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        for fmt in [SequenceFormat::Csv, SequenceFormat::Jsonl] {
            let p = dir.path().join(format!("s.{}", fmt.extension()));
            let s = sample();
            save_sequence(&s, &p, fmt).unwrap();
            assert_eq!(load_sequence(&p, fmt).unwrap(), s);
        }
    }

    #[test]
    fn csv_confidence_out_of_range_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(
            &p,
            "t,depth,conf,lidar,speed,throttle,steering,attack_label\n\
             0,1.0,0.9,1.0,1,0,0,\n\
             0.02,1.0,1.2,1.0,1,0,0,\n",
        )
        .unwrap();
        match load_sequence(&p, SequenceFormat::Csv) {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected malformed row, got {other:?}"),
        }
    }

    #[test]
    fn csv_garbage_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(
            &p,
            "t,depth,conf,lidar,speed,throttle,steering,attack_label\n0,abc,0.9,1.0,1,0,0,\n",
        )
        .unwrap();
        assert!(matches!(
            load_sequence(&p, SequenceFormat::Csv),
            Err(Error::MalformedRow { row: 2, .. })
        ));
    }

    #[test]
    fn jsonl_missing_lidar_is_absent() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(
            &p,
            r#"{"t":0.0,"depth":1.5,"conf":0.9,"speed":1.0,"throttle":0.1,"steering":0.0}"#,
        )
        .unwrap();
        let s = load_sequence(&p, SequenceFormat::Jsonl).unwrap();
        assert_eq!(s.frames()[0].lidar, None);
        assert_eq!(s.id(), "x");
    }

    #[test]
    fn non_monotone_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(
            &p,
            "t,depth,conf,lidar,speed,throttle,steering,attack_label\n\
             0.1,1.0,0.9,1.0,1,0,0,\n0.05,1.0,0.9,1.0,1,0,0,\n",
        )
        .unwrap();
        assert!(matches!(
            load_sequence(&p, SequenceFormat::Csv),
            Err(Error::MalformedRow { row: 3, .. })
        ));
    }

    fn arb_frame() -> impl Strategy<Value = (f64, Option<f64>, f64, Option<f64>, Option<bool>)> {
        (
            0.001f64..0.1,
            prop::option::of(0.01f64..50.0),
            0.0f64..=1.0,
            prop::option::of(0.01f64..50.0),
            prop::option::of(any::<bool>()),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn save_load_identity(rows in prop::collection::vec(arb_frame(), 1..30), labelled in any::<bool>(), jsonl in any::<bool>()) {
            let mut t = 0.0;
            let mut frames = Vec::new();
            let mut labels = Vec::new();
            for (gap, depth, conf, lidar, blackout) in rows {
                t += gap;
                frames.push(SensorFrame { t, depth, conf, lidar, speed: gap * 7.0, throttle: -gap, steering: 15.0 });
                labels.push(blackout.map(|b| if b { AttackKind::Blackout } else { AttackKind::Bias }));
            }
            let seq = SensorSequence::new("p", frames, labelled.then_some(labels), SequenceMeta::default()).unwrap();
            let fmt = if jsonl { SequenceFormat::Jsonl } else { SequenceFormat::Csv };
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join(format!("p.{}", fmt.extension()));
            save_sequence(&seq, &p, fmt).unwrap();
            prop_assert_eq!(load_sequence(&p, fmt).unwrap(), seq);
        }
    }
}
