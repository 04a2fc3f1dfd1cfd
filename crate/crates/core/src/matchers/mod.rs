//! Query-to-window matchers producing confidence-scored correspondences.

mod fft;
mod ncc;
mod phase;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::raster::{FloatImage, GrayImage, Raster};

pub use fft::{next_fast_len, Fft2};
pub use ncc::{ncc_match, NccMatcher, NccOutcome, NccParams};
pub use phase::{phase_correlate, PhaseMatcher, PhaseParams};

pub const DEFAULT_TOP_K: usize = 500;
pub const NCC_DEFAULT_THRESHOLD: f64 = 0.95;
pub const PHASE_DEFAULT_THRESHOLD: f64 = 0.1;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum MatchError {
    #[error("empty image")]
    Empty,
    #[error("images differ in size: {0}×{1} vs {2}×{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("zero-variance input")]
    ZeroVariance,
    #[error("no scale hypothesis gives a usable overlap")]
    NoOverlap,
    #[error("unknown matcher {0:?}")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub query_u: f64,
    pub query_v: f64,
    pub window_u: f64,
    pub window_v: f64,
    pub confidence: f64,
}

/// Confidence descending, then query `(u, v)` ascending.
pub fn match_order(a: &Match, b: &Match) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.query_u.total_cmp(&b.query_u))
        .then(a.query_v.total_cmp(&b.query_v))
        .then(a.window_u.total_cmp(&b.window_u))
        .then(a.window_v.total_cmp(&b.window_v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub window_id: usize,
    pub matcher: String,
    pub scale: Option<f64>,
    pub matches: Vec<Match>,
}

impl MatchSet {
    /// Builds a set, restoring the canonical order.
    pub fn new(window_id: usize, matcher: &str, scale: Option<f64>, mut matches: Vec<Match>) -> Self {
        matches.sort_by(match_order);
        Self {
            window_id,
            matcher: matcher.to_string(),
            scale,
            matches,
        }
    }

    pub fn empty(window_id: usize, matcher: &str) -> Self {
        Self::new(window_id, matcher, None, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

/// A query↔window matcher. Implementations are pure and may ignore depth.
pub trait Matcher: Send + Sync {
    fn name(&self) -> &str;

    /// Confidence threshold applied across the search area.
    fn default_threshold(&self) -> f64;

    fn match_window(&self, query: &GrayImage, window: &GrayImage, depth: &Raster<f64>, window_id: usize) -> MatchSet;
}

/// Names accepted by [`matcher_by_name`].
pub const MATCHER_NAMES: [&str; 2] = ["ncc", "phase"];

/// Registry lookup; `scale_hint` is the expected query-to-window GSD ratio.
/// Query-to-window scale range searched by the registry matchers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSearch {
    pub min: f64,
    pub max: f64,
    pub hint: Option<f64>,
}

impl Default for ScaleSearch {
    fn default() -> Self {
        let p = NccParams::default();
        Self {
            min: p.min_scale,
            max: p.max_scale,
            hint: None,
        }
    }
}

pub fn matcher_by_name(name: &str, scales: ScaleSearch) -> Result<Box<dyn Matcher>, MatchError> {
    match name {
        "ncc" => Ok(Box::new(NccMatcher::new(NccParams {
            min_scale: scales.min,
            max_scale: scales.max,
            scale_hint: scales.hint,
            ..NccParams::default()
        }))),
        "phase" => Ok(Box::new(PhaseMatcher::new(PhaseParams {
            min_scale: scales.min,
            max_scale: scales.max,
            scale_hint: scales.hint,
            ..PhaseParams::default()
        }))),
        other => Err(MatchError::Unknown(other.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowMatch {
    pub window_id: usize,
    #[serde(flatten)]
    pub matched: Match,
}

/// Keeps the `top_k` best matches of every set, then drops everything below
/// `threshold`. Sets are visited in the given order.
pub fn filter_matches(sets: &[MatchSet], top_k: usize, threshold: f64) -> Vec<WindowMatch> {
    let mut out = Vec::new();
    for set in sets {
        let mut ms = set.matches.clone();
        ms.sort_by(match_order);
        out.extend(
            ms.into_iter()
                .take(top_k)
                .filter(|m| m.confidence >= threshold)
                .map(|m| WindowMatch {
                    window_id: set.window_id,
                    matched: m,
                }),
        );
    }
    out
}

pub(crate) fn to_float(img: &GrayImage) -> FloatImage {
    img.map(|v| v as f64)
}

/// `x_w = a·x_q + b` with a 2×2 linear part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Affine {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl Affine {
    pub fn similarity(scale: f64, bx: f64, by: f64) -> Self {
        Self {
            a: [[scale, 0.0], [0.0, scale]],
            b: [bx, by],
        }
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a[0][0] * x + self.a[0][1] * y + self.b[0],
            self.a[1][0] * x + self.a[1][1] * y + self.b[1],
        )
    }

    pub fn mean_scale(&self) -> f64 {
        (self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]).abs().sqrt()
    }
}

/// Quadratic vertex offset through three equally spaced samples, in [−½, ½].
pub(crate) fn parabola_offset(left: f64, center: f64, right: f64) -> f64 {
    let den = left - 2.0 * center + right;
    if !(den < 0.0) {
        return 0.0;
    }
    (0.5 * (left - right) / den).clamp(-0.5, 0.5)
}

/// Log-spaced scale hypotheses between `lo` and `hi`.
pub(crate) fn scale_pyramid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 || hi <= lo {
        return vec![lo];
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..steps)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (steps - 1) as f64).exp())
        .collect()
}
