//! Plain-text tables and static SVG charts built from metrics and fitted
//! model files.

use super::metrics::MetricsReport;
use super::pipeline::FittedModelFile;
use crate::aggregate::calibration_report;
use std::fmt::Write;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

pub struct ReportFiles {
    pub text: String,
    pub accuracy_svg: String,
    pub rounds_svg: String,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn run_name(m: &MetricsReport) -> String {
    match &m.aggregator {
        Some(a) => format!("{} [{a}]", m.label),
        None => m.label.clone(),
    }
}

pub fn accuracy_table(metrics: &[MetricsReport]) -> String {
    let mut out = String::new();
    for m in metrics {
        let _ = writeln!(out, "== {} ==", run_name(m));
        let _ = writeln!(
            out,
            "items {}  accuracy {:.4}  mean rounds {:.2}  calls {}  abstentions {}",
            m.scored_items, m.accuracy, m.mean_rounds, m.backend_calls, m.abstentions
        );
        if let Some(a) = m.model_judge_accuracy {
            let _ = writeln!(out, "accuracy (model judge) {a:.4}");
        }
        let _ = writeln!(out, "{:>5}  {:>10}  {:>10}", "round", "cumulative", "average");
        for (k, (c, a)) in m.cumulative_accuracy.iter().zip(&m.average_accuracy).enumerate() {
            let _ = writeln!(out, "{:>5}  {:>10.4}  {:>10.4}", k + 1, c, a);
        }
        if !m.per_tag.is_empty() {
            let _ = writeln!(out, "{:<24}  {:>5}  {:>8}", "tag", "items", "accuracy");
            for (tag, t) in &m.per_tag {
                let _ = writeln!(out, "{tag:<24}  {:>5}  {:>8.4}", t.items, t.accuracy);
            }
        }
        let terms: Vec<String> = m.termination_histogram.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "terminations: {}\n", terms.join(" "));
    }
    out
}

/// Entropy / KL / mean-correct table per agent of the final fit.
pub fn calibration_table(model: &FittedModelFile) -> String {
    let mut out = String::new();
    let Some(fit) = model.final_fit() else {
        return out;
    };
    let report = calibration_report(&fit.model);
    let round = fit.round.map_or("pooled".to_string(), |r| format!("round {r}"));
    let _ = writeln!(out, "== calibration: {} ({}, {round}) ==", model.roster.label(), model.aggregator);
    let _ = writeln!(out, "{:<10} {:<20} {:>9} {:>9} {:>9}", "role", "agent", "entropy", "kl-div", "avg");
    for a in &report.agents {
        let names = if a.role == "solver" {
            &model.roster.solvers
        } else {
            &model.roster.reflectors
        };
        let name = names.get(a.index).map_or("?", String::as_str);
        let _ = writeln!(
            out,
            "{:<10} {:<20} {:>9.4} {:>9.4} {:>9.4}",
            a.role, name, a.stats.entropy_bits, a.stats.kl_from_identity_bits, a.stats.mean_correct
        );
    }
    out.push('\n');
    out
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn axes(out: &mut String, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Cumulative (solid) and average (dashed) accuracy per round, one colour
/// per run.
pub fn accuracy_svg(metrics: &[MetricsReport]) -> String {
    let mut out = svg_open("Accuracy by round (solid: cumulative, dashed: average)");
    axes(&mut out, "round", "accuracy");
    let rounds = metrics.iter().map(|m| m.cumulative_accuracy.len()).max().unwrap_or(1).max(1);
    let x = |k: usize| {
        if rounds == 1 {
            (WIDTH) / 2.0
        } else {
            MARGIN + (k - 1) as f64 * (WIDTH - 2.0 * MARGIN) / (rounds - 1) as f64
        }
    };
    let y = |v: f64| HEIGHT - MARGIN - v.clamp(0.0, 1.0) * (HEIGHT - 2.0 * MARGIN);
    for k in 1..=rounds {
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{k}</text>", x(k), HEIGHT - MARGIN + 16.0);
    }
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>", MARGIN - 6.0, y(v) + 4.0);
    }
    for (i, m) in metrics.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        for (series, dash) in [(&m.cumulative_accuracy, ""), (&m.average_accuracy, " stroke-dasharray=\"6 4\"")] {
            let pts: Vec<String> = series
                .iter()
                .enumerate()
                .map(|(k, v)| format!("{:.2},{:.2}", x(k + 1), y(*v)))
                .collect();
            let _ = writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\"{dash} points=\"{}\"/>",
                pts.join(" ")
            );
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{ly}\" fill=\"{colour}\" text-anchor=\"end\">{}</text>",
            WIDTH - MARGIN - 4.0,
            escape(&run_name(m))
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Histogram of debate lengths, bars grouped by run.
pub fn rounds_svg(metrics: &[MetricsReport]) -> String {
    let mut out = svg_open("Rounds to termination");
    axes(&mut out, "rounds", "problems");
    let max_round = metrics
        .iter()
        .flat_map(|m| m.rounds_histogram.keys().copied())
        .max()
        .unwrap_or(1)
        .max(1);
    let max_count = metrics
        .iter()
        .flat_map(|m| m.rounds_histogram.values().copied())
        .max()
        .unwrap_or(1)
        .max(1);
    let slot = (WIDTH - 2.0 * MARGIN) / max_round as f64;
    let bar = slot * 0.8 / metrics.len().max(1) as f64;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    for r in 1..=max_round {
        let cx = MARGIN + (r as f64 - 0.5) * slot;
        let _ = writeln!(out, "<text x=\"{cx:.2}\" y=\"{}\" text-anchor=\"middle\">{r}</text>", HEIGHT - MARGIN + 16.0);
    }
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{max_count}</text>", MARGIN - 6.0, MARGIN + 4.0);
    for (i, m) in metrics.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        for (&r, &count) in &m.rounds_histogram {
            let h = plot_h * count as f64 / max_count as f64;
            let x0 = MARGIN + (r as f64 - 1.0) * slot + slot * 0.1 + i as f64 * bar;
            let _ = writeln!(
                out,
                "<rect x=\"{x0:.2}\" y=\"{:.2}\" width=\"{bar:.2}\" height=\"{h:.2}\" fill=\"{colour}\"/>",
                HEIGHT - MARGIN - h
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{colour}\" text-anchor=\"end\">{}</text>",
            WIDTH - MARGIN - 4.0,
            MARGIN + 16.0 * i as f64,
            escape(&run_name(m))
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn build_report(metrics: &[MetricsReport], models: &[FittedModelFile]) -> ReportFiles {
    let mut text = accuracy_table(metrics);
    for m in models {
        text.push_str(&calibration_table(m));
    }
    ReportFiles {
        text,
        accuracy_svg: accuracy_svg(metrics),
        rounds_svg: rounds_svg(metrics),
    }
}
