//! Segment-wise transducer decoding.
//!
//! The beam search is frame synchronous. Within a frame, every active
//! hypothesis proposes one "advance" candidate (blank, moves to the next
//! frame) and one "stay" candidate per label; the pooled candidates are cut
//! to the beam width, advances are merged into the next-frame set by
//! log-sum, and surviving stays are expanded again, at most
//! `max_symbols_per_frame` times. With width 1 this is exactly the greedy
//! rule; with a width covering every candidate it sums all alignments.

mod score;

use std::cmp::Ordering;
use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::UtteranceRecord;
use crate::error::{Error, Result};
use crate::loss::{log_add_exp, log_sum_exp};
use crate::model::{encoder_forward, joint_single, project_encoder, project_prediction, ModelParams, PredictionState, BLANK};
use crate::training::TrainMode;

pub use score::{
    compare_systems, edit_distance, error_rate, score_system, subset_errors, ConditionRow, EditCounts, ErrorTally,
    EvalReport, ScoringUnit, SystemScores,
};

pub const MAX_SYMBOLS_PER_FRAME: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted labels, never blank.
    pub labels: Vec<u32>,
    /// Log-probability summed over the merged alignments kept by the search.
    pub log_score: f64,
    pub state: PredictionState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub beam_width: usize,
    pub max_symbols_per_frame: usize,
    /// Hypotheses never grow beyond this many labels.
    pub max_output_len: Option<usize>,
}

impl SearchConfig {
    pub fn beam(beam_width: usize) -> Self {
        Self {
            beam_width,
            max_symbols_per_frame: MAX_SYMBOLS_PER_FRAME,
            max_output_len: None,
        }
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z.iter().copied());
    z.iter().map(|v| v - lse).collect()
}

/// Lowest index among the maxima.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding of one encoder slice (`T_seg x encoder_units`).
pub fn greedy_decode(params: &ModelParams, h: ArrayView2<'_, f64>, max_symbols_per_frame: usize) -> Vec<u32> {
    let enc = project_encoder(params, h);
    let mut state = PredictionState::start(params);
    let mut pred = project_prediction(params, state.output.view());
    let mut out = Vec::new();
    for t in 0..enc.nrows() {
        let e = enc.row(t).to_vec();
        for _ in 0..max_symbols_per_frame {
            let k = argmax(&joint_single(params, &e, &pred)) as u32;
            if k == BLANK {
                break;
            }
            out.push(k);
            state = state.advance(params, k);
            pred = project_prediction(params, state.output.view());
        }
    }
    out
}

struct Active {
    labels: Vec<u32>,
    score: f64,
    state: PredictionState,
    pred: Vec<f64>,
}

enum Move {
    Advance,
    Stay(u32),
}

struct Candidate {
    parent: usize,
    mv: Move,
    score: f64,
}

fn candidate_order(a: &Candidate, b: &Candidate, actives: &[Active]) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| {
            let key = |c: &Candidate| -> (Vec<u32>, u32) {
                let base = &actives[c.parent].labels;
                match c.mv {
                    Move::Advance => (base.clone(), 0),
                    Move::Stay(k) => {
                        let mut l = base.clone();
                        l.push(k);
                        (l, 1)
                    }
                }
            };
            let (la, ka) = key(a);
            let (lb, kb) = key(b);
            ka.cmp(&kb).then(la.cmp(&lb))
        })
}

fn hyp_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_score.total_cmp(&a.log_score).then_with(|| a.labels.cmp(&b.labels))
}

/// N-best hypotheses, best first.
pub fn beam_decode(params: &ModelParams, h: ArrayView2<'_, f64>, cfg: &SearchConfig) -> Vec<Hypothesis> {
    let beam = cfg.beam_width.max(1);
    let max_len = cfg.max_output_len.unwrap_or(usize::MAX);
    let enc = project_encoder(params, h);
    let start = PredictionState::start(params);
    let mut frame_set = vec![Hypothesis {
        labels: Vec::new(),
        log_score: 0.0,
        state: start,
    }];

    for t in 0..enc.nrows() {
        let e = enc.row(t).to_vec();
        let mut next: Vec<Hypothesis> = Vec::new();
        let mut next_index: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut actives: Vec<Active> = frame_set
            .into_iter()
            .map(|hyp| Active {
                pred: project_prediction(params, hyp.state.output.view()),
                labels: hyp.labels,
                score: hyp.log_score,
                state: hyp.state,
            })
            .collect();

        for level in 0..=cfg.max_symbols_per_frame {
            if actives.is_empty() {
                break;
            }
            let mut pool = Vec::new();
            for (i, a) in actives.iter().enumerate() {
                let lp = log_softmax(&joint_single(params, &e, &a.pred));
                pool.push(Candidate {
                    parent: i,
                    mv: Move::Advance,
                    score: a.score + lp[BLANK as usize],
                });
                if level < cfg.max_symbols_per_frame && a.labels.len() < max_len {
                    for (k, &l) in lp.iter().enumerate().skip(1) {
                        pool.push(Candidate {
                            parent: i,
                            mv: Move::Stay(k as u32),
                            score: a.score + l,
                        });
                    }
                }
            }
            pool.sort_by(|a, b| candidate_order(a, b, &actives));
            pool.truncate(beam);

            let mut stays: Vec<Active> = Vec::new();
            let mut stay_index: HashMap<Vec<u32>, usize> = HashMap::new();
            for c in pool {
                let parent = &actives[c.parent];
                match c.mv {
                    Move::Advance => match next_index.get(&parent.labels) {
                        Some(&j) => next[j].log_score = log_add_exp(next[j].log_score, c.score),
                        None => {
                            next_index.insert(parent.labels.clone(), next.len());
                            next.push(Hypothesis {
                                labels: parent.labels.clone(),
                                log_score: c.score,
                                state: parent.state.clone(),
                            });
                        }
                    },
                    Move::Stay(k) => {
                        let mut labels = parent.labels.clone();
                        labels.push(k);
                        match stay_index.get(&labels) {
                            Some(&j) => stays[j].score = log_add_exp(stays[j].score, c.score),
                            None => {
                                let state = parent.state.advance(params, k);
                                stay_index.insert(labels.clone(), stays.len());
                                stays.push(Active {
                                    pred: project_prediction(params, state.output.view()),
                                    labels,
                                    score: c.score,
                                    state,
                                });
                            }
                        }
                    }
                }
            }
            actives = stays;
        }
        next.sort_by(hyp_order);
        next.truncate(beam);
        frame_set = next;
    }
    frame_set.sort_by(hyp_order);
    frame_set
}

/// Output for one decoded segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDecode {
    pub utterance: String,
    pub segment: usize,
    pub labels: Vec<u32>,
    pub log_score: f64,
}

/// Decodes the labeled segments of `u` (every segment if none is labeled).
///
/// In [`TrainMode::FullUtterance`] context the encoder runs once over the
/// frames up to the last decoded segment's end and each segment reads its
/// slice; in [`TrainMode::Segmented`] context each segment is encoded alone.
/// The prediction network restarts at every segment.
pub fn decode_utterance_with(
    params: &ModelParams,
    u: &UtteranceRecord,
    cfg: &SearchConfig,
    context: TrainMode,
) -> Result<Vec<SegmentDecode>> {
    let mut targets: Vec<usize> = u.labeled_segments().map(|(i, _)| i).collect();
    if targets.is_empty() {
        targets = (0..u.segments.len()).collect();
    }
    if targets.is_empty() {
        return Err(Error::Record {
            id: u.id.clone(),
            message: "no segment to decode".into(),
        });
    }
    for &i in &targets {
        let s = &u.segments[i];
        if s.start > s.end || s.end >= u.num_frames() {
            return Err(Error::Record {
                id: u.id.clone(),
                message: format!("segment {i} is out of range"),
            });
        }
    }
    let x = u.features.frames.mapv(f64::from);
    let full: Option<Array2<f64>> = match context {
        TrainMode::FullUtterance => {
            let t_max = targets.iter().map(|&i| u.segments[i].end).max().expect("non-empty");
            Some(encoder_forward(params, x.slice(s![..=t_max, ..]))?.0)
        }
        TrainMode::Segmented => None,
    };
    let mut out = Vec::with_capacity(targets.len());
    for i in targets {
        let seg = &u.segments[i];
        let rows = s![seg.start..=seg.end, ..];
        let own;
        let h = match &full {
            Some(h) => h.slice(rows),
            None => {
                own = encoder_forward(params, x.slice(rows))?.0;
                own.view()
            }
        };
        let best = beam_decode(params, h, cfg).into_iter().next().expect("beam keeps one hypothesis");
        out.push(SegmentDecode {
            utterance: u.id.clone(),
            segment: i,
            labels: best.labels,
            log_score: best.log_score,
        });
    }
    Ok(out)
}

/// Full-utterance decoding with the default per-frame symbol cap.
pub fn decode_utterance(params: &ModelParams, u: &UtteranceRecord, beam_width: usize) -> Result<Vec<SegmentDecode>> {
    decode_utterance_with(params, u, &SearchConfig::beam(beam_width), TrainMode::FullUtterance)
}
