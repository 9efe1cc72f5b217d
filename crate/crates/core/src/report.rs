//! Gap measurement against the centralized reference and SVG convergence
//! charts, both built from a run's iteration records alone.

use std::fmt;

use thiserror::Error;

use crate::coordinator::IterationRecord;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("trace contains no iterations")]
    EmptyTrace,
    #[error("no iterate produced a cap-respecting primal value")]
    NoFeasibleIterate,
    #[error("trace contains a non-finite value at iteration {k}")]
    NonFinite { k: usize },
    #[error(
        "recovered primal {primal} undercuts the reference optimum {reference} by more than \
         rounding tolerance — one of the two solvers is wrong"
    )]
    NegativeGap { primal: f64, reference: f64 },
}

/// Best recovered primal versus the exact centralized optimum, with the run
/// parameters echoed for context.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    /// Lowest recovered primal cost over the run.
    pub primal_best: f64,
    /// Iteration (1-based) that produced it; earliest on ties.
    pub best_iteration: usize,
    /// Centralized optimum, when an oracle result was supplied.
    pub reference: Option<f64>,
    /// `100·(primal_best − reference)/reference`.
    pub gap_percent: Option<f64>,
    /// Smallest proximal weight in force during the run.
    pub mu_hat_min: f64,
    /// Initial concave smoothing weight.
    pub kappa1: f64,
    /// Number of iterations in the trace.
    pub maxiter: usize,
}

/// Tiny negative gaps are floating-point noise; anything worse means a bug.
const GAP_TOLERANCE_PERCENT: f64 = 1e-7;

impl GapReport {
    pub fn from_records(
        records: &[IterationRecord],
        reference: Option<f64>,
    ) -> Result<GapReport, ReportError> {
        if records.is_empty() {
            return Err(ReportError::EmptyTrace);
        }
        for r in records {
            let finite =
                r.dual.is_finite() && r.grad_norm.is_finite() && r.primal.map_or(true, f64::is_finite);
            if !finite {
                return Err(ReportError::NonFinite { k: r.k });
            }
        }
        let mut best: Option<(f64, usize)> = None;
        for r in records {
            if let Some(p) = r.primal {
                if best.map_or(true, |(b, _)| p < b) {
                    best = Some((p, r.k));
                }
            }
        }
        let (primal_best, best_iteration) = best.ok_or(ReportError::NoFeasibleIterate)?;
        let gap_percent = match reference {
            Some(opt) => {
                let gap = 100.0 * (primal_best - opt) / opt;
                if gap < -GAP_TOLERANCE_PERCENT {
                    return Err(ReportError::NegativeGap { primal: primal_best, reference: opt });
                }
                Some(gap)
            }
            None => None,
        };
        let mu_hat_min =
            records.iter().map(|r| r.mu_hat).fold(f64::INFINITY, f64::min);
        Ok(GapReport {
            primal_best,
            best_iteration,
            reference,
            gap_percent,
            mu_hat_min,
            kappa1: records[0].kappa,
            maxiter: records.len(),
        })
    }
}

impl fmt::Display for GapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "best primal: {} (iteration {})", self.primal_best, self.best_iteration)?;
        match (self.reference, self.gap_percent) {
            (Some(reference), Some(gap)) => {
                writeln!(f, "reference optimum: {reference}")?;
                writeln!(f, "gap: {gap:.4}%")?;
            }
            _ => writeln!(f, "reference optimum: none supplied; gap not computed")?,
        }
        write!(
            f,
            "parameters: kappa1={}, mu_hat_min={}, iterations={}",
            self.kappa1, self.mu_hat_min, self.maxiter
        )
    }
}

const SVG_WIDTH: f64 = 860.0;
const SVG_HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 32.0;
const MARGIN_BOTTOM: f64 = 48.0;

/// Render the recovered primal and smoothed dual against the iteration
/// number as a self-contained SVG with one polyline per series. Iterations
/// without a feasible primal contribute no point to the primal series.
pub fn render_convergence_svg(records: &[IterationRecord]) -> Result<String, ReportError> {
    if records.is_empty() {
        return Err(ReportError::EmptyTrace);
    }
    for r in records {
        let finite = r.dual.is_finite() && r.primal.map_or(true, f64::is_finite);
        if !finite {
            return Err(ReportError::NonFinite { k: r.k });
        }
    }

    let k_min = records.first().unwrap().k as f64;
    let k_max = records.last().unwrap().k as f64;
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for r in records {
        v_min = v_min.min(r.dual);
        v_max = v_max.max(r.dual);
        if let Some(p) = r.primal {
            v_min = v_min.min(p);
            v_max = v_max.max(p);
        }
    }
    // Pad the value range so lines do not hug the frame; give a degenerate
    // range (single value) some height to live in.
    let span = if v_max > v_min { v_max - v_min } else { v_min.abs().max(1.0) };
    let v_lo = v_min - 0.05 * span;
    let v_hi = v_max + 0.05 * span;
    let k_span = if k_max > k_min { k_max - k_min } else { 1.0 };

    let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x = |k: f64| MARGIN_LEFT + (k - k_min) / k_span * plot_w;
    let y = |v: f64| MARGIN_TOP + (1.0 - (v - v_lo) / (v_hi - v_lo)) * plot_h;

    let dual_points: String = records
        .iter()
        .map(|r| format!("{:.2},{:.2}", x(r.k as f64), y(r.dual)))
        .collect::<Vec<_>>()
        .join(" ");
    let primal_points: String = records
        .iter()
        .filter_map(|r| r.primal.map(|p| format!("{:.2},{:.2}", x(r.k as f64), y(p))))
        .collect::<Vec<_>>()
        .join(" ");

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" \
         viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = SVG_WIDTH - MARGIN_RIGHT;
    let y0 = SVG_HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));

    // Ticks and grid: five divisions per axis.
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let k = k_min + frac * k_span;
        let tick_x = x(k);
        svg.push_str(&format!(
            "<line x1=\"{tick_x:.2}\" y1=\"{y0}\" x2=\"{tick_x:.2}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{tick_x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 18.0,
            k.round() as i64
        ));
        let v = v_lo + frac * (v_hi - v_lo);
        let tick_y = y(v);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{tick_y:.2}\" x2=\"{x0}\" y2=\"{tick_y:.2}\" stroke=\"black\"/>\n",
            x0 - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{:.4}</text>\n",
            x0 - 8.0,
            tick_y + 4.0,
            v
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">iteration</text>\n",
        (x0 + x1) / 2.0,
        SVG_HEIGHT - 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">objective</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));

    // Series: recovered primal cost and smoothed dual value.
    svg.push_str(&format!(
        "<polyline class=\"primal\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\"{primal_points}\"/>\n"
    ));
    svg.push_str(&format!(
        "<polyline class=\"dual\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{dual_points}\"/>\n"
    ));

    // Legend.
    let lx = x1 - 180.0;
    svg.push_str(&format!(
        "<line x1=\"{lx}\" y1=\"{y1}\" x2=\"{}\" y2=\"{y1}\" stroke=\"#d62728\" stroke-width=\"1.5\"/>\n",
        lx + 28.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\">recovered primal</text>\n",
        lx + 34.0,
        y1 + 4.0
    ));
    svg.push_str(&format!(
        "<line x1=\"{lx}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n",
        y1 + 18.0,
        lx + 28.0,
        y1 + 18.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\">smoothed dual</text>\n",
        lx + 34.0,
        y1 + 22.0
    ));

    svg.push_str("</svg>\n");
    Ok(svg)
}
