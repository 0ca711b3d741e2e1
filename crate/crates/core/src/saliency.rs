//! Input-gradient saliency of one segment's loss.
//!
//! `g_t = ‖∂L/∂x_t‖₂` where `L` is the transducer loss of a single labeled
//! segment. Under the full-utterance objective the encoder runs from frame
//! 0, so frames before the segment can carry gradient; frames after its end
//! never can.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::dataset::UtteranceRecord;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::training::{utterance_loss_on, TrainMode};

/// Duration of one stacked frame.
pub const FRAME_SECONDS: f64 = 0.03;

pub const TRACE_HEADER: &str = "frame\ttime_s\tgrad_norm\tenergy\tin_segment";

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyTrace {
    /// Per-frame gradient norm, unnormalized.
    pub grad_norm: Vec<f64>,
    /// Inclusive `(t_S, t_E)`.
    pub target_segment: (usize, usize),
    /// Mean absolute feature value per frame.
    pub energy: Vec<f64>,
}

impl SaliencyTrace {
    pub fn len(&self) -> usize {
        self.grad_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_norm.is_empty()
    }

    pub fn in_segment(&self, t: usize) -> bool {
        (self.target_segment.0..=self.target_segment.1).contains(&t)
    }

    fn peak(&self, range: std::ops::Range<usize>) -> f64 {
        self.grad_norm[range].iter().copied().fold(0.0, f64::max)
    }

    /// Largest `g_t` before the segment.
    pub fn prefix_peak(&self) -> f64 {
        self.peak(0..self.target_segment.0)
    }

    pub fn segment_peak(&self) -> f64 {
        self.peak(self.target_segment.0..self.target_segment.1 + 1)
    }

    /// Largest `g_t` after the segment.
    pub fn future_peak(&self) -> f64 {
        self.peak(self.target_segment.1 + 1..self.len())
    }
}

/// Saliency under the full-utterance objective.
pub fn saliency_trace(params: &ModelParams, u: &UtteranceRecord, segment_index: usize) -> Result<SaliencyTrace> {
    saliency_trace_with(params, u, segment_index, TrainMode::FullUtterance)
}

/// Saliency under either objective, restricted to one labeled segment.
pub fn saliency_trace_with(
    params: &ModelParams,
    u: &UtteranceRecord,
    segment_index: usize,
    mode: TrainMode,
) -> Result<SaliencyTrace> {
    let seg = u.segments.get(segment_index).ok_or_else(|| Error::Record {
        id: u.id.clone(),
        message: format!("no segment {segment_index} ({} segments)", u.segments.len()),
    })?;
    if seg.labels.is_none() {
        return Err(Error::Record {
            id: u.id.clone(),
            message: format!("segment {segment_index} is unlabeled"),
        });
    }
    let x = u.features.frames.mapv(f64::from);
    let r = utterance_loss_on(params, &u.id, x.view(), std::slice::from_ref(seg), mode)?;
    let grad_norm = r.dx.rows().into_iter().map(|row| row.dot(&row).sqrt()).collect();
    let d = x.ncols().max(1) as f64;
    let energy = x.rows().into_iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>() / d).collect();
    Ok(SaliencyTrace {
        grad_norm,
        target_segment: (seg.start, seg.end),
        energy,
    })
}

/// Writes the trace as tab-separated text with a header line.
pub fn export_trace(trace: &SaliencyTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRACE_HEADER}")?;
    for t in 0..trace.len() {
        writeln!(
            w,
            "{t}\t{:.2}\t{:e}\t{:e}\t{}",
            t as f64 * FRAME_SECONDS,
            trace.grad_norm[t],
            trace.energy[t],
            u8::from(trace.in_segment(t))
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a file written by [`export_trace`].
pub fn read_trace(path: &Path) -> Result<SaliencyTrace> {
    let reader = BufReader::new(File::open(path)?);
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines();
    match lines.next().transpose()? {
        Some(h) if h == TRACE_HEADER => {}
        _ => return Err(err(1, "missing trace header".into())),
    }
    let (mut grad_norm, mut energy, mut inside) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(err(lineno, format!("expected 5 columns, found {}", cols.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(lineno, e.to_string()));
        grad_norm.push(num(cols[2])?);
        energy.push(num(cols[3])?);
        inside.push(cols[4] == "1");
    }
    let start = inside.iter().position(|&b| b).ok_or_else(|| err(0, "no in-segment frame".into()))?;
    let end = inside.iter().rposition(|&b| b).expect("found a start");
    Ok(SaliencyTrace {
        grad_norm,
        target_segment: (start, end),
        energy,
    })
}
