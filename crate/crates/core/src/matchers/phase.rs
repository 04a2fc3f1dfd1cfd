//! Phase correlation via the normalized cross-power spectrum.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{next_fast_len, Fft2};
use super::{parabola_offset, scale_pyramid, to_float, Affine, Match, MatchError, MatchSet, Matcher};
use crate::raster::{area_resample, FloatImage, GrayImage, IntegralImage, Raster};

/// Translation `d` with `b(x) ≈ a(x − d)` on equal-sized images, and the
/// peak of the normalized correlation surface.
pub fn phase_correlate(a: &FloatImage, b: &FloatImage) -> Result<(f64, f64, f64), MatchError> {
    if a.is_empty() || b.is_empty() {
        return Err(MatchError::Empty);
    }
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MatchError::SizeMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    let (w, h) = (a.width(), a.height());
    let surface = surface(a, b, w, h).ok_or(MatchError::ZeroVariance)?;
    let (ix, iy) = argmax(&surface, w);
    let at = |x: usize, y: usize| surface[y * w + x];
    let peak = at(ix, iy);
    // Offsets at FFT round-off level are zeroed so integer shifts stay exact.
    let snap = |o: f64| if o.abs() < 1e-9 { 0.0 } else { o };
    let ox = snap(parabola_offset(at((ix + w - 1) % w, iy), peak, at((ix + 1) % w, iy)));
    let oy = snap(parabola_offset(at(ix, (iy + h - 1) % h), peak, at(ix, (iy + 1) % h)));
    let wrap = |i: usize, n: usize| if i > n / 2 { i as f64 - n as f64 } else { i as f64 };
    Ok((wrap(ix, w) + ox, wrap(iy, h) + oy, peak.clamp(0.0, 1.0)))
}

/// Inverse transform of the unit-magnitude cross-power spectrum of the
/// mean-removed inputs, zero-padded into a `w × h` frame.
fn surface(a: &FloatImage, b: &FloatImage, w: usize, h: usize) -> Option<Vec<f64>> {
    let load = |img: &FloatImage| -> Option<Vec<Complex64>> {
        let n = img.data().len() as f64;
        let mean = img.data().iter().sum::<f64>() / n;
        let var = img.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if !(var > 1e-12 * (1.0 + mean * mean)) {
            return None;
        }
        let mut buf = vec![Complex64::default(); w * h];
        for y in 0..img.height() {
            for x in 0..img.width() {
                buf[y * w + x].re = img.get(x, y) - mean;
            }
        }
        Some(buf)
    };
    let mut fa = load(a)?;
    let mut fb = load(b)?;
    let fft = Fft2::new(w, h);
    fft.forward(&mut fa);
    fft.forward(&mut fb);
    let floor = 1e-12 * fb.iter().zip(&fa).map(|(x, y)| (x * y.conj()).norm()).fold(0.0, f64::max);
    for (x, y) in fb.iter_mut().zip(&fa) {
        let r = *x * y.conj();
        let m = r.norm();
        *x = if m > floor { r / m } else { Complex64::default() };
    }
    fft.inverse(&mut fb);
    let n = (w * h) as f64;
    Some(fb.iter().map(|c| c.re / n).collect())
}

fn argmax(v: &[f64], w: usize) -> (usize, usize) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    (best % w, best / w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseParams {
    pub min_scale: f64,
    pub max_scale: f64,
    pub scale_steps: usize,
    pub scale_hint: Option<f64>,
    pub grid_step: usize,
    pub coarse_side: usize,
}

impl Default for PhaseParams {
    fn default() -> Self {
        Self {
            min_scale: 1.0,
            max_scale: 3.12,
            scale_steps: 7,
            scale_hint: None,
            grid_step: 16,
            coarse_side: 60,
        }
    }
}

pub struct PhaseMatcher {
    pub params: PhaseParams,
}

impl PhaseMatcher {
    pub fn new(params: PhaseParams) -> Self {
        Self { params }
    }

    /// Best similarity over the scale pyramid and its response.
    fn search(&self, query: &FloatImage, window: &FloatImage) -> Option<(Affine, f64)> {
        let p = &self.params;
        let c = (query.width().min(query.height()) / p.coarse_side.max(1)).clamp(1, 8);
        let o = 0.5 * (c as f64 - 1.0);
        let q = area_resample(&IntegralImage::new(query), c as f64, o, o);
        let wint = IntegralImage::new(window);
        let scales = match p.scale_hint {
            Some(h) if h > 0.0 => scale_pyramid(h / 1.1, h * 1.1, 3),
            _ => scale_pyramid(p.min_scale, p.max_scale, p.scale_steps),
        };
        let mut best: Option<(Affine, f64)> = None;
        for s in scales {
            let step = c as f64 * s;
            let ow = 0.5 * (step - 1.0);
            let w = area_resample(&wint, step, ow, ow);
            if w.width() < 2 || w.height() < 2 || q.width() < 2 || q.height() < 2 {
                continue;
            }
            let (pw, ph) = (
                next_fast_len(q.width() + w.width() - 1),
                next_fast_len(q.height() + w.height() - 1),
            );
            let Some(surf) = surface(&q, &w, pw, ph) else {
                continue;
            };
            let (ix, iy) = argmax(&surf, pw);
            let peak = surf[iy * pw + ix];
            if best.as_ref().map_or(false, |(_, r)| peak <= *r) {
                continue;
            }
            let at = |x: usize, y: usize| surf[y * pw + x];
            let ox = parabola_offset(at((ix + pw - 1) % pw, iy), peak, at((ix + 1) % pw, iy));
            let oy = parabola_offset(at(ix, (iy + ph - 1) % ph), peak, at(ix, (iy + 1) % ph));
            let signed = |i: usize, n: usize, pos: usize| if i < pos { i as f64 } else { i as f64 - n as f64 };
            let dx = signed(ix, pw, w.width()) + ox;
            let dy = signed(iy, ph, w.height()) + oy;
            let b = |d: f64| step * d + 0.5 * (s - 1.0);
            best = Some((Affine::similarity(s, b(dx), b(dy)), peak));
        }
        best
    }
}

impl Matcher for PhaseMatcher {
    fn name(&self) -> &str {
        "phase"
    }

    fn default_threshold(&self) -> f64 {
        super::PHASE_DEFAULT_THRESHOLD
    }

    fn match_window(&self, query: &GrayImage, window: &GrayImage, _depth: &Raster<f64>, window_id: usize) -> MatchSet {
        if query.is_empty() || window.is_empty() {
            return MatchSet::empty(window_id, self.name());
        }
        let (qf, wf) = (to_float(query), to_float(window));
        let Some((t, response)) = self.search(&qf, &wf) else {
            return MatchSet::empty(window_id, self.name());
        };
        let conf = response.clamp(0.0, 1.0);
        let step = self.params.grid_step.max(1);
        let (wmax, hmax) = ((window.width() - 1) as f64, (window.height() - 1) as f64);
        let mut matches = Vec::new();
        for y in (step / 2..query.height()).step_by(step) {
            for x in (step / 2..query.width()).step_by(step) {
                let (u, v) = t.apply(x as f64, y as f64);
                if u >= 0.0 && v >= 0.0 && u <= wmax && v <= hmax {
                    matches.push(Match {
                        query_u: x as f64,
                        query_v: y as f64,
                        window_u: u,
                        window_v: v,
                        confidence: conf,
                    });
                }
            }
        }
        MatchSet::new(window_id, self.name(), Some(t.mean_scale()), matches)
    }
}
