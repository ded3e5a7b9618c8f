//! Hinton diagrams as SVG 1.1.
//!
//! Each matrix entry becomes a square patch centred in its cell. Patch area is
//! proportional to |value| / max|value|, fill is white for non-negative and
//! black for negative entries, and a blue outline marks entries whose
//! |t-statistic| reaches the threshold.

use std::fmt::Write as _;

use ndarray::{concatenate, Array2, Axis};

use crate::error::{check_dim, Error, Result};
use crate::model::{Block, CrbmParams};
use crate::stats::{Significance, SIGNIFICANCE_Z};

#[derive(Debug, Clone)]
pub struct HintonSpec {
    pub matrix: Array2<f64>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Aligned with `matrix`; no highlighting when absent.
    pub tstats: Option<Array2<f64>>,
    pub threshold: f64,
    pub cell_size: f64,
}

impl HintonSpec {
    pub fn new(matrix: Array2<f64>, row_labels: Vec<String>, col_labels: Vec<String>) -> Self {
        HintonSpec {
            matrix,
            row_labels,
            col_labels,
            tstats: None,
            threshold: SIGNIFICANCE_Z,
            cell_size: 24.0,
        }
    }

    pub fn with_tstats(mut self, t: Array2<f64>) -> Self {
        self.tstats = Some(t);
        self
    }

    fn validate(&self) -> Result<()> {
        let (r, c) = self.matrix.dim();
        check_dim("row labels", r, self.row_labels.len())?;
        check_dim("column labels", c, self.col_labels.len())?;
        if let Some(t) = &self.tstats {
            if t.dim() != (r, c) {
                return Err(Error::invalid("t-statistics and matrix shapes differ"));
            }
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::invalid("cell size must be positive"));
        }
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix contains non-finite values"));
        }
        Ok(())
    }
}

/// Which parameters to plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HintonView {
    Single(Block),
    /// `[B | D | c]`: everything that enters the choice probabilities.
    ChoiceModel,
    /// `[A | d]`: everything that drives the latent units.
    LatentModel,
}

impl std::str::FromStr for HintonView {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BDc" | "choice" => Ok(HintonView::ChoiceModel),
            "Ad" | "latent" => Ok(HintonView::LatentModel),
            _ => Block::from_symbol(s)
                .map(HintonView::Single)
                .ok_or_else(|| Error::invalid(format!("unknown block `{s}` (B, D, A, c, d, BDc, Ad)"))),
        }
    }
}

fn hidden_labels(j: usize) -> Vec<String> {
    (1..=j).map(|j| format!("h{j}")).collect()
}

/// Builds a diagram spec for part of a fitted model, with t-statistics when given.
pub fn spec_for_model(
    p: &CrbmParams,
    view: HintonView,
    alternative_names: &[String],
    feature_names: &[String],
    significance: Option<&Significance>,
) -> Result<HintonSpec> {
    check_dim("alternative names", p.n_alternatives(), alternative_names.len())?;
    check_dim("feature names", p.n_features(), feature_names.len())?;
    let j = p.n_hidden();
    let labels = |b: Block| -> (Vec<String>, Vec<String>) {
        match b {
            Block::ChoiceContext => (alternative_names.to_vec(), feature_names.to_vec()),
            Block::ChoiceHidden => (alternative_names.to_vec(), hidden_labels(j)),
            Block::ChoiceBias => (alternative_names.to_vec(), vec!["const".into()]),
            Block::HiddenContext => (hidden_labels(j), feature_names.to_vec()),
            Block::HiddenBias => (hidden_labels(j), vec!["const".into()]),
        }
    };
    let blocks: Vec<Block> = match view {
        HintonView::Single(b) => vec![b],
        HintonView::ChoiceModel => vec![Block::ChoiceContext, Block::ChoiceHidden, Block::ChoiceBias],
        HintonView::LatentModel => vec![Block::HiddenContext, Block::HiddenBias],
    };
    let stack = |src: &CrbmParams| -> Array2<f64> {
        let mats: Vec<Array2<f64>> = blocks.iter().map(|&b| src.block_matrix(b)).collect();
        let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
        concatenate(Axis(1), &views).expect("blocks share row count")
    };
    let rows = labels(blocks[0]).0;
    let cols: Vec<String> = blocks.iter().flat_map(|&b| labels(b).1).collect();
    let mut spec = HintonSpec::new(stack(p), rows, cols);
    if let Some(sig) = significance {
        spec = spec.with_tstats(stack(&sig.tstats));
    }
    Ok(spec)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Approximate label extent for the 11px monospace font used below.
fn text_width(s: &str) -> f64 {
    s.chars().count() as f64 * 7.0
}

/// Renders the diagram. Output is a pure function of the spec.
pub fn hinton_svg(spec: &HintonSpec) -> Result<String> {
    spec.validate()?;
    let (rows, cols) = spec.matrix.dim();
    let cell = spec.cell_size;
    let pad = 8.0;
    let left = pad + spec.row_labels.iter().map(|l| text_width(l)).fold(0.0, f64::max) + pad;
    let top = pad + spec.col_labels.iter().map(|l| text_width(l)).fold(0.0, f64::max) + pad;
    let width = left + cols as f64 * cell + pad;
    let height = top + rows as f64 * cell + pad;
    let max_abs = spec.matrix.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}">"#
    );
    let _ = writeln!(s, r#"<g font-family="monospace" font-size="11" fill="black">"#);
    for (r, label) in spec.row_labels.iter().enumerate() {
        let y = top + (r as f64 + 0.5) * cell + 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{}</text>"#, left - pad, escape(label));
    }
    for (c, label) in spec.col_labels.iter().enumerate() {
        let x = left + (c as f64 + 0.5) * cell + 4.0;
        let y = top - pad;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" transform="rotate(-90 {x:.1} {y:.1})">{}</text>"#,
            escape(label)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r##"<rect x="{left:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="#808080"/>"##,
        cols as f64 * cell,
        rows as f64 * cell
    );
    for ((r, c), &v) in spec.matrix.indexed_iter() {
        let side = if max_abs > 0.0 { cell * (v.abs() / max_abs).sqrt() } else { 0.0 };
        let x = left + c as f64 * cell + (cell - side) / 2.0;
        let y = top + r as f64 * cell + (cell - side) / 2.0;
        let fill = if v < 0.0 { "black" } else { "white" };
        let t = spec.tstats.as_ref().map(|t| t[[r, c]]);
        let stroke = match t {
            Some(t) if t.abs() >= spec.threshold => r#" stroke="blue" stroke-width="2""#,
            _ => "",
        };
        let t_attr = t.map(|t| format!(r#" data-t="{t:.4}""#)).unwrap_or_default();
        let _ = writeln!(
            s,
            r#"<rect class="patch" data-row="{r}" data-col="{c}" data-value="{v:.6}"{t_attr} x="{x:.3}" y="{y:.3}" width="{side:.3}" height="{side:.3}" fill="{fill}"{stroke}/>"#
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
