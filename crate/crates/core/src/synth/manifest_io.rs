//! Manifest CSV files.
//!
//! ```text
//! # manifest split=train image_size=32 co_artifact_rate=0.15
//! id,seed,label,domain,split,bias_degree
//! train-0000002a-00000,1234,0,dark_corner,train,
//! ```
//!
//! Lines starting with `#` are comments; `# manifest` comments carry the
//! rendering settings of one split. One file may hold several splits.

use std::fmt::Write as _;
use std::path::Path;

use super::dataset::{DatasetManifest, RecordRef, Split};
use crate::error::{EpvtError, Result};

pub const MANIFEST_HEADER: &str = "id,seed,label,domain,split,bias_degree";

pub fn manifests_to_csv(manifests: &[&DatasetManifest], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for m in manifests {
        let _ = writeln!(
            out,
            "# manifest split={} image_size={} co_artifact_rate={}",
            m.split, m.image_size, m.co_artifact_rate
        );
    }
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for m in manifests {
        let bias = m.bias_degree.map(|b| b.to_string()).unwrap_or_default();
        for r in &m.records {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.id, r.seed, r.label, r.domain, m.split, bias);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct SplitMeta {
    image_size: usize,
    co_artifact_rate: f64,
}

impl Default for SplitMeta {
    fn default() -> Self {
        Self {
            image_size: 32,
            co_artifact_rate: 0.0,
        }
    }
}

fn parse_meta(line: usize, body: &str) -> Result<(Split, SplitMeta)> {
    let mut split = None;
    let mut meta = SplitMeta::default();
    for field in body.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(|| EpvtError::Manifest {
            line,
            msg: format!("expected key=value, found `{field}`"),
        })?;
        let bad = |msg: String| EpvtError::Manifest { line, msg };
        match k {
            "split" => split = Some(v.parse::<Split>().map_err(|e| bad(e.to_string()))?),
            "image_size" => meta.image_size = v.parse().map_err(|_| bad(format!("bad image_size `{v}`")))?,
            "co_artifact_rate" => {
                meta.co_artifact_rate = v.parse().map_err(|_| bad(format!("bad co_artifact_rate `{v}`")))?
            }
            _ => return Err(bad(format!("unknown manifest setting `{k}`"))),
        }
    }
    let split = split.ok_or_else(|| EpvtError::Manifest {
        line,
        msg: "manifest comment without split".into(),
    })?;
    Ok((split, meta))
}

/// Parses a manifest file into one manifest per split, in first-seen order.
pub fn manifests_from_csv(text: &str) -> Result<Vec<DatasetManifest>> {
    let mut metas: Vec<(Split, SplitMeta)> = Vec::new();
    let mut out: Vec<DatasetManifest> = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        if let Some(comment) = raw.strip_prefix('#') {
            if let Some(body) = comment.trim_start().strip_prefix("manifest ") {
                metas.push(parse_meta(line, body)?);
            }
            continue;
        }
        if !header_seen {
            if raw != MANIFEST_HEADER {
                return Err(EpvtError::Manifest {
                    line,
                    msg: format!("expected header `{MANIFEST_HEADER}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let cols: Vec<&str> = raw.split(',').collect();
        if cols.len() != 6 {
            return Err(EpvtError::Manifest {
                line,
                msg: format!("expected 6 columns, found {}", cols.len()),
            });
        }
        let bad = |msg: String| EpvtError::Manifest { line, msg };
        let seed: u64 = cols[1].parse().map_err(|_| bad(format!("bad seed `{}`", cols[1])))?;
        let label: u8 = match cols[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("bad label `{other}`"))),
        };
        let domain = cols[3].parse().map_err(|e: EpvtError| bad(e.to_string()))?;
        let split: Split = cols[4].parse().map_err(|e: EpvtError| bad(e.to_string()))?;
        let bias_degree = match cols[5] {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad(format!("bad bias_degree `{s}`")))?),
        };
        let record = RecordRef {
            id: cols[0].to_string(),
            seed,
            label,
            domain,
        };
        match out.iter_mut().find(|m| m.split == split) {
            Some(m) => {
                if m.bias_degree != bias_degree {
                    return Err(bad("bias_degree differs within one split".into()));
                }
                m.records.push(record);
            }
            None => {
                let meta = metas
                    .iter()
                    .find(|(s, _)| *s == split)
                    .map(|(_, m)| *m)
                    .unwrap_or_default();
                out.push(DatasetManifest {
                    records: vec![record],
                    split,
                    bias_degree,
                    image_size: meta.image_size,
                    co_artifact_rate: meta.co_artifact_rate,
                });
            }
        }
    }
    if !header_seen {
        return Err(EpvtError::Manifest {
            line: 0,
            msg: "missing header".into(),
        });
    }
    for m in &out {
        m.validate()?;
    }
    Ok(out)
}

pub fn write_manifests(path: &Path, manifests: &[&DatasetManifest], comments: &[String]) -> Result<()> {
    std::fs::write(path, manifests_to_csv(manifests, comments)).map_err(|e| EpvtError::io(path, e))
}

pub fn read_manifests(path: &Path) -> Result<Vec<DatasetManifest>> {
    let text = std::fs::read_to_string(path).map_err(|e| EpvtError::io(path, e))?;
    manifests_from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_trap_split, generate_dataset, DomainSpec, TrapSplitSpec};

    #[test]
    fn multi_split_round_trip() {
        let train = generate_dataset(&DomainSpec::scaled_isic(4)).unwrap();
        let (_, test) = build_trap_split(&TrapSplitSpec::new(0.3, 40, 40, 4)).unwrap();
        let csv = manifests_to_csv(&[&train, &test], &["run_meta seed=4".into()]);
        let back = manifests_from_csv(&csv).unwrap();
        assert_eq!(back, vec![train, test]);
    }

    #[test]
    fn domain_names_are_snake_case() {
        let train = generate_dataset(&DomainSpec::scaled_isic(4)).unwrap();
        let csv = manifests_to_csv(&[&train], &[]);
        for name in ["dark_corner", "hair", "gel_bubble", "ruler", "clean"] {
            assert!(csv.contains(&format!(",{name},train,")));
        }
    }

    #[test]
    fn malformed_rows_are_reported_with_line_numbers() {
        let text = format!("{MANIFEST_HEADER}\na,1,0,clean,train,\nb,2,3,clean,train,\n");
        match manifests_from_csv(&text) {
            Err(EpvtError::Manifest { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{MANIFEST_HEADER}\na,1,0,sunburn,train,\n");
        assert!(manifests_from_csv(&text).is_err());
        assert!(manifests_from_csv("id,seed\n").is_err());
    }
}
