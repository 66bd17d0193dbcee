//! Static SVG rendering of a score trace.
//!
//! The output depends only on the trace, so identical inputs give identical
//! bytes. The root element carries the plotted value range and the
//! threshold line carries its value, so positions can be checked by parsing
//! the file back.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::scoring::ScoreTrace;

pub const WIDTH: f64 = 960.0;
pub const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 40.0;

/// Maps data coordinates to pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layout {
    pub t_min: f64,
    pub t_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Layout {
    pub fn for_trace(trace: &ScoreTrace) -> Result<Self> {
        let (Some(&first), Some(&last)) = (trace.t.first(), trace.t.last()) else {
            return Err(Error::Data("nothing to plot".into()));
        };
        let finite = trace
            .score
            .iter()
            .copied()
            .chain([trace.threshold])
            .filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() {
            return Err(Error::Data("no finite values to plot".into()));
        }
        let pad = ((hi - lo) * 0.05).max(1e-3);
        Ok(Layout {
            t_min: first as f64,
            t_max: (last as f64).max(first as f64 + 1.0),
            y_min: lo - pad,
            y_max: hi + pad,
        })
    }

    pub fn x_of(&self, t: f64) -> f64 {
        MARGIN_LEFT + (t - self.t_min) / (self.t_max - self.t_min) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    pub fn y_of(&self, v: f64) -> f64 {
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        MARGIN_TOP + (self.y_max - v) / (self.y_max - self.y_min) * h
    }

    /// Inverse of [`Layout::y_of`].
    pub fn value_of(&self, y: f64) -> f64 {
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        self.y_max - (y - MARGIN_TOP) / h * (self.y_max - self.y_min)
    }
}

/// Maximal runs of consecutive indices where `flags` is 1.
fn runs(flags: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (k, &f) in flags.iter().chain([&0]).enumerate() {
        match (f == 1, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push((s, k - 1));
                start = None;
            }
            _ => {}
        }
    }
    out
}

pub fn render_svg(trace: &ScoreTrace) -> Result<String> {
    let lay = Layout::for_trace(trace)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-t-min="{:?}" data-t-max="{:?}" data-y-min="{:?}" data-y-max="{:?}">"#,
        lay.t_min, lay.t_max, lay.y_min, lay.y_max
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    // half a step either side so single-point runs stay visible
    let step = (lay.x_of(lay.t_min + 1.0) - lay.x_of(lay.t_min)) / 2.0;
    if let Some(labels) = &trace.label {
        for (a, b) in runs(labels) {
            let x0 = lay.x_of(trace.t[a] as f64) - step;
            let x1 = lay.x_of(trace.t[b] as f64) + step;
            let _ = writeln!(
                s,
                r##"<rect class="label" x="{x0:.3}" y="{MARGIN_TOP}" width="{:.3}" height="{:.3}" fill="#f4b6b6" fill-opacity="0.6"/>"##,
                x1 - x0,
                HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
            );
        }
    }
    for (a, b) in runs(&trace.verdict) {
        let x0 = lay.x_of(trace.t[a] as f64) - step;
        let x1 = lay.x_of(trace.t[b] as f64) + step;
        let _ = writeln!(
            s,
            r##"<rect class="alarm" x="{x0:.3}" y="{:.3}" width="{:.3}" height="6" fill="#d62728"/>"##,
            HEIGHT - MARGIN_BOTTOM + 4.0,
            x1 - x0
        );
    }

    // axes
    let (x_left, x_right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y_top, y_bottom) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
    let _ = writeln!(
        s,
        r#"<path class="axes" d="M{x_left} {y_top} L{x_left} {y_bottom} L{x_right} {y_bottom}" fill="none" stroke="black"/>"#
    );
    for (v, anchor) in [(lay.y_max, "start"), (lay.y_min, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="end" dominant-baseline="text-{anchor}">{v:.3}</text>"#,
            x_left - 4.0,
            lay.y_of(v)
        );
    }
    for (t, anchor) in [(lay.t_min, "start"), (lay.t_max, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="{anchor}">{t}</text>"#,
            lay.x_of(t),
            y_bottom + 26.0
        );
    }

    let mut d = String::new();
    for (k, (&t, &v)) in trace.t.iter().zip(&trace.score).enumerate() {
        let y = if v.is_finite() { lay.y_of(v) } else { y_top };
        let _ = write!(
            d,
            "{}{:.3} {:.3}",
            if k == 0 { "M" } else { " L" },
            lay.x_of(t as f64),
            y
        );
    }
    let _ = writeln!(
        s,
        r##"<path class="score" d="{d}" fill="none" stroke="#1f77b4" stroke-width="1"/>"##
    );

    let ty = lay.y_of(trace.threshold);
    let _ = writeln!(
        s,
        r##"<line class="threshold" data-threshold="{:?}" x1="{x_left}" y1="{ty:?}" x2="{x_right}" y2="{ty:?}" stroke="#ff7f0e" stroke-dasharray="6 4"/>"##,
        trace.threshold
    );
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(n: usize) -> ScoreTrace {
        ScoreTrace {
            threshold: 1.5,
            t: (10..10 + n).collect(),
            score: (0..n).map(|k| (k as f64 * 0.3).sin() * 2.0).collect(),
            verdict: (0..n).map(|k| u8::from((k as f64 * 0.3).sin() * 2.0 > 1.5)).collect(),
            label: Some((0..n).map(|k| u8::from((20..30).contains(&k))).collect()),
        }
    }

    #[test]
    fn runs_finds_maximal_blocks() {
        assert_eq!(runs(&[0, 1, 1, 0, 1]), vec![(1, 2), (4, 4)]);
        assert!(runs(&[0, 0]).is_empty());
    }

    #[test]
    fn rendering_is_deterministic_and_shades_labels() {
        let a = render_svg(&trace(100)).unwrap();
        assert_eq!(a, render_svg(&trace(100)).unwrap());
        assert_eq!(a.matches(r#"class="label""#).count(), 1);
        assert!(a.starts_with("<svg"));
    }

    #[test]
    fn layout_inverts() {
        let lay = Layout::for_trace(&trace(50)).unwrap();
        for v in [-2.0, 0.0, 1.5] {
            assert!((lay.value_of(lay.y_of(v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_trace_is_rejected() {
        let mut t = trace(1);
        t.t.clear();
        t.score.clear();
        assert!(render_svg(&t).is_err());
    }
}
