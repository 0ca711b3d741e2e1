//! Utterance records, the on-disk manifest, the synthetic context-cue task and
//! the perturbation experiments.
//!
//! A manifest is a text file whose first line is [`MANIFEST_HEADER`] and whose
//! remaining lines each hold one JSON object:
//!
//! ```text
//! {"id":"train-000000","features":"train.feats/000000.sgt","base_dim":12,"stack":1,
//!  "segments":[{"start":0,"end":57,"labels":null},{"start":58,"end":95,"labels":[3,1,7]}],
//!  "conditions":["clean"],"audio":null}
//! ```
//!
//! `features` is relative to the manifest's directory and points at an SGT1
//! tensor. `labels: null` marks an untranscribed segment; `[]` is a
//! transcribed segment with no tokens. Segment bounds are inclusive encoder
//! frame indices.

mod perturb;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::StackedFeatures;
use crate::tensor::{load_sgt, save_sgt};

pub use perturb::{
    apply_channel_bias, apply_reverb, channel_bias_from_ir, perturb_record, random_channel_ir, ImpulseResponse,
    ReverbScope,
};
pub use synth::{generate_context_task, generate_split, ContextCueSpec, ContextTask, SplitKind, TokenInfo};

pub const MANIFEST_HEADER: &str = "#ctxrnnt-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Clean,
    BackgroundSpeech,
    SpeakerChange,
    ReverbFull,
    ReverbSegment,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::Clean,
        Condition::BackgroundSpeech,
        Condition::SpeakerChange,
        Condition::ReverbFull,
        Condition::ReverbSegment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::BackgroundSpeech => "background_speech",
            Condition::SpeakerChange => "speaker_change",
            Condition::ReverbFull => "reverb_full",
            Condition::ReverbSegment => "reverb_segment",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown condition tag `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    /// First frame, inclusive.
    pub start: usize,
    /// Last frame, inclusive.
    pub end: usize,
    /// `None` for an untranscribed segment.
    pub labels: Option<Vec<u32>>,
}

impl SegmentRecord {
    pub fn unlabeled(start: usize, end: usize) -> Self {
        Self {
            start,
            end,
            labels: None,
        }
    }

    pub fn labeled(start: usize, end: usize, labels: Vec<u32>) -> Self {
        Self {
            start,
            end,
            labels: Some(labels),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..=self.end).contains(&t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub features: StackedFeatures,
    pub segments: Vec<SegmentRecord>,
    pub conditions: BTreeSet<Condition>,
    /// Source waveform, relative to the manifest directory, when the
    /// features were extracted from audio.
    pub audio: Option<String>,
}

impl UtteranceRecord {
    pub fn num_frames(&self) -> usize {
        self.features.frames.nrows()
    }

    /// `(segment index, segment)` for every transcribed segment.
    pub fn labeled_segments(&self) -> impl Iterator<Item = (usize, &SegmentRecord)> {
        self.segments.iter().enumerate().filter(|(_, s)| s.labels.is_some())
    }

    pub fn last_labeled_end(&self) -> Option<usize> {
        self.labeled_segments().map(|(_, s)| s.end).max()
    }

    /// Checks the segment invariants against the feature matrix.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Record {
            id: self.id.clone(),
            message,
        };
        let t = self.num_frames();
        if t == 0 {
            return Err(fail("feature matrix has no frames".into()));
        }
        if self.features.frames.iter().any(|v| !v.is_finite()) {
            return Err(fail("feature matrix has non-finite entries".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.start > s.end {
                return Err(fail(format!("segment {i} starts at {} after its end {}", s.start, s.end)));
            }
            if s.end >= t {
                return Err(fail(format!("segment {i} end {} is out of range for {t} frames", s.end)));
            }
            if let Some(labels) = &s.labels {
                if let Some(p) = labels.iter().position(|&y| y == 0) {
                    return Err(fail(format!("segment {i} label {p} is the blank id 0")));
                }
            }
            if i > 0 {
                let prev = &self.segments[i - 1];
                if s.start <= prev.end {
                    return Err(fail(format!(
                        "segment {i} [{}, {}] overlaps or precedes segment {} [{}, {}]",
                        s.start,
                        s.end,
                        i - 1,
                        prev.start,
                        prev.end
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    id: String,
    features: String,
    base_dim: usize,
    stack: usize,
    segments: Vec<SegmentRecord>,
    conditions: BTreeSet<Condition>,
    audio: Option<String>,
}

/// Directory holding the feature tensors of `manifest`.
pub fn feature_dir(manifest: &Path) -> PathBuf {
    let name = manifest
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    manifest.with_file_name(format!("{name}.feats"))
}

/// Writes the manifest and one SGT1 file per utterance next to it.
pub fn write_manifest(records: &[UtteranceRecord], path: &Path) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let dir = feature_dir(path);
    let dir_name = dir
        .file_name()
        .expect("feature dir has a name")
        .to_string_lossy()
        .into_owned();
    if !records.is_empty() {
        fs::create_dir_all(&dir)?;
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{MANIFEST_HEADER}")?;
    for (i, r) in records.iter().enumerate() {
        r.validate()?;
        let rel = format!("{dir_name}/{i:06}.sgt");
        save_sgt(&base.join(&rel), r.features.frames.view())?;
        let line = ManifestLine {
            id: r.id.clone(),
            features: rel,
            base_dim: r.features.base_dim,
            stack: r.features.factor,
            segments: r.segments.clone(),
            conditions: r.conditions.clone(),
            audio: r.audio.clone(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Record {
            id: r.id.clone(),
            message: e.to_string(),
        })?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let reader = BufReader::new(fs::File::open(path)?);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == MANIFEST_HEADER => {}
        Some(Ok(h)) => return Err(parse_err(1, format!("expected header `{MANIFEST_HEADER}`, found `{h}`"))),
        Some(Err(e)) => return Err(e.into()),
        None => return Err(parse_err(1, "empty file, missing header".into())),
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let id = m.id.clone();
        let frames = load_sgt(&base.join(&m.features))
            .map_err(|e| parse_err(lineno, format!("utterance `{id}`: {}: {e}", m.features)))?;
        if m.stack == 0 || m.base_dim * m.stack != frames.ncols() {
            return Err(parse_err(
                lineno,
                format!(
                    "utterance `{id}`: base_dim {} x stack {} does not match {} feature columns",
                    m.base_dim,
                    m.stack,
                    frames.ncols()
                ),
            ));
        }
        let record = UtteranceRecord {
            id: m.id,
            features: StackedFeatures {
                frames,
                base_dim: m.base_dim,
                factor: m.stack,
            },
            segments: m.segments,
            conditions: m.conditions,
            audio: m.audio,
        };
        record.validate().map_err(|e| parse_err(lineno, e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

/// Groups records by condition tag; a record with several tags lands in
/// every matching group.
pub fn split_eval_conditions(records: &[UtteranceRecord]) -> BTreeMap<Condition, Vec<&UtteranceRecord>> {
    let mut out: BTreeMap<Condition, Vec<&UtteranceRecord>> = BTreeMap::new();
    for r in records {
        for &c in &r.conditions {
            out.entry(c).or_default().push(r);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    pub(crate) fn record(id: &str, t: usize, d: usize, segments: Vec<SegmentRecord>) -> UtteranceRecord {
        UtteranceRecord {
            id: id.into(),
            features: StackedFeatures::unstacked(Array2::from_shape_fn((t, d), |(i, j)| {
                (i as f32 * 0.37 + j as f32 * 1.1).sin() * 1e-3 + 1.0 / 3.0
            })),
            segments,
            conditions: [Condition::Clean].into(),
            audio: None,
        }
    }

    #[test]
    fn empty_manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.sgm");
        write_manifest(&[], &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), vec![]);
    }

    #[test]
    fn absent_and_empty_labels_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sgm");
        let recs = vec![
            record(
                "a",
                10,
                3,
                vec![SegmentRecord::unlabeled(0, 3), SegmentRecord::labeled(4, 9, vec![2, 1])],
            ),
            record("b", 5, 3, vec![SegmentRecord::labeled(0, 4, vec![])]),
        ];
        write_manifest(&recs, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, recs);
        assert_eq!(back[0].segments[0].labels, None);
        assert_eq!(back[1].segments[0].labels, Some(vec![]));
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(MANIFEST_HEADER));
        assert!(text.contains("\"labels\":null"));
    }

    #[test]
    fn out_of_range_segment_is_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sgm");
        write_manifest(&[record("utt-7", 10, 2, vec![SegmentRecord::labeled(0, 9, vec![1])])], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"end\":9", "\"end\":10");
        fs::write(&path, text).unwrap();
        let err = read_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("utt-7") && err.contains("out of range"), "{err}");
    }

    #[test]
    fn overlapping_segments_and_bad_header_are_rejected() {
        let r = record(
            "x",
            10,
            2,
            vec![SegmentRecord::unlabeled(0, 5), SegmentRecord::labeled(5, 9, vec![1])],
        );
        assert!(matches!(r.validate(), Err(Error::Record { id, .. }) if id == "x"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sgm");
        fs::write(&path, "not a manifest\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Parse { line: 1, .. })));
        fs::write(&path, format!("{MANIFEST_HEADER}\n{{\"id\":\"q\"}}\n")).unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn blank_label_is_rejected() {
        let r = record("z", 4, 1, vec![SegmentRecord::labeled(0, 3, vec![1, 0])]);
        assert!(r.validate().unwrap_err().to_string().contains("blank"));
    }

    #[test]
    fn condition_split() {
        let mut a = record("a", 3, 1, vec![]);
        let mut b = record("b", 3, 1, vec![]);
        let recs = [a.clone(), b.clone()];
        let all = split_eval_conditions(&recs);
        assert_eq!(all.len(), 1);
        assert_eq!(all[&Condition::Clean].len(), 2);

        b.conditions = [Condition::BackgroundSpeech].into();
        let recs = [a.clone(), b.clone()];
        let two = split_eval_conditions(&recs);
        assert_eq!(two[&Condition::Clean].len(), 1);
        assert_eq!(two[&Condition::BackgroundSpeech].len(), 1);

        a.conditions.insert(Condition::BackgroundSpeech);
        let recs = [a, b];
        let both = split_eval_conditions(&recs);
        assert_eq!(both[&Condition::Clean][0].id, "a");
        assert_eq!(both[&Condition::BackgroundSpeech].len(), 2);
    }

    #[test]
    fn condition_names_parse() {
        for c in Condition::ALL {
            assert_eq!(c.as_str().parse::<Condition>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
        }
        assert!("dirty".parse::<Condition>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_record() -> impl Strategy<Value = UtteranceRecord> {
            (1usize..40, 1usize..5, any::<u64>(), prop::collection::vec((1usize..6, 1usize..8, any::<bool>(), prop::collection::vec(1u32..10, 0..5)), 0..4))
                .prop_map(|(t, d, seed, segs)| {
                    let mut segments = Vec::new();
                    let mut start = 0;
                    for (gap, len, labeled, labels) in segs {
                        let s = start + gap - 1;
                        let e = s + len - 1;
                        if e >= t {
                            break;
                        }
                        segments.push(SegmentRecord {
                            start: s,
                            end: e,
                            labels: labeled.then_some(labels),
                        });
                        start = e + 1;
                    }
                    let mut x = seed;
                    let frames = Array2::from_shape_fn((t, d), |_| {
                        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        f32::from_bits(((x >> 41) as u32) | 0x3f80_0000) - 1.5
                    });
                    UtteranceRecord {
                        id: format!("r{seed}"),
                        features: StackedFeatures::unstacked(frames),
                        segments,
                        conditions: [Condition::ALL[(seed % 5) as usize]].into(),
                        audio: None,
                    }
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn manifest_round_trip_is_identity(recs in prop::collection::vec(arb_record(), 0..4)) {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("p.sgm");
                write_manifest(&recs, &path).unwrap();
                prop_assert_eq!(read_manifest(&path).unwrap(), recs);
            }
        }
    }
}
