use std::fmt::Write;

use crate::app::artifact::{ComparisonRow, FitArtifact};
use crate::posthoc::format_odds;

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn comparison_table(
    out: &mut String,
    title: &str,
    rows: &[ComparisonRow],
    selected: Option<usize>,
) {
    let _ = writeln!(out, "\n{title}");
    let _ = writeln!(
        out,
        "  {:<24} {:>12} {:>12} {:>5} {:>12}",
        "model", "-2lnL", "deviance", "p", "BIC"
    );
    for row in rows {
        let mark = if selected == Some(row.classes) && row.label.starts_with("R=") {
            " *"
        } else {
            ""
        };
        match &row.error {
            Some(e) => {
                let _ = writeln!(out, "  {:<24} failed: {e}", row.label);
            }
            None => {
                let _ = writeln!(
                    out,
                    "  {:<24} {:>12} {:>12} {:>5} {:>12}{mark}",
                    row.label,
                    opt(row.minus_two_loglik, 2),
                    opt(row.deviance, 2),
                    row.n_parameters.map_or("-".into(), |p| p.to_string()),
                    opt(row.bic, 2),
                );
            }
        }
    }
}

/// Plain-text summary of a fit artifact.
pub fn render(a: &FitArtifact) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "rankmix {} (schema {})", a.command, a.schema_version);
    let _ = writeln!(
        out,
        "items: {} (reference {})",
        a.model.items.join(", "),
        a.model.reference_item
    );
    let _ = writeln!(
        out,
        "terms: {}   classes: {}",
        a.model.formula, a.model.classes
    );
    let _ = writeln!(
        out,
        "data: {} respondents ({} rejected), {} covariate sets x {} patterns = {} cells",
        a.data.respondents,
        a.data.rejected_rows,
        a.data.covariate_sets,
        a.data.patterns,
        a.data.cells
    );
    let f = &a.fit;
    let _ = writeln!(
        out,
        "fit: {:?}, -2lnL {:.3}, deviance {:.3}, p {}, BIC {:.3}",
        f.status, f.minus_two_loglik, f.deviance, f.n_parameters, f.bic
    );
    let _ = writeln!(
        out,
        "     {} EM iterations, {} starts (seed {}), best start {:?}",
        f.iterations, f.starts_attempted, f.seed, f.best_start
    );

    let _ = writeln!(out, "\ncoefficients");
    let _ = writeln!(
        out,
        "  {:<28} {:>10} {:>10} {:>10} {:>10}",
        "term", "estimate", "se_raw", "se_corr", "se_hess"
    );
    for c in &a.coefficients {
        let se = a.standard_errors.as_ref().and_then(|s| s.get(&c.name));
        let _ = writeln!(
            out,
            "  {:<28} {:>10.4} {:>10} {:>10} {:>10}",
            c.name,
            c.estimate,
            opt(se.and_then(|s| s.se_raw), 4),
            opt(se.and_then(|s| s.se_corrected), 4),
            opt(se.and_then(|s| s.se_hessian), 4),
        );
    }

    if a.model.classes > 1 {
        if let Some(classes) = &a.classes {
            let _ = writeln!(out, "\nclasses");
            let _ = writeln!(
                out,
                "  {:<6} {:>8} {:>10} {:>12}",
                "class", "mass", "patterns", "respondents"
            );
            for p in &classes.proportions {
                let _ = writeln!(
                    out,
                    "  {:<6} {:>8.4} {:>10.4} {:>12.4}",
                    p.class, p.mass, p.patterns, p.respondents
                );
            }
            let _ = writeln!(
                out,
                "\nlocations (odds vs reference item, relative to the last class)"
            );
            for l in &classes.locations {
                let ci = match (l.ci_low, l.ci_high) {
                    (Some(lo), Some(hi)) => format!("  95% CI [{lo:.3}, {hi:.3}]"),
                    _ => String::new(),
                };
                let _ = writeln!(
                    out,
                    "  class {} {:<12} delta {:>8.4}  odds {}{ci}",
                    l.class,
                    l.item,
                    l.delta,
                    format_odds(l.delta)
                );
            }
        }
    }

    let _ = write!(out, "\nworths");
    let mut current = None;
    for w in &a.worths {
        let key = (w.class, w.set);
        if current != Some(key) {
            current = Some(key);
            let label = &a.data.set_labels[w.set];
            if a.model.classes > 1 {
                let _ = write!(out, "\n  class {} {label}:", w.class);
            } else {
                let _ = write!(out, "\n  {label}:");
            }
        }
        let _ = write!(out, " {}={:.4}", w.item, w.worth);
    }
    out.push('\n');

    if !a.class_search.is_empty() {
        comparison_table(
            &mut out,
            "class search",
            &a.class_search,
            a.selected_classes,
        );
    }
    if !a.term_search.is_empty() {
        comparison_table(&mut out, "term search (one class)", &a.term_search, None);
    }
    let d = &a.diagnostics;
    let _ = writeln!(
        out,
        "\ndiagnostics: weight sum error {:.2e}, mass sum error {:.2e}, {} converged / {} degenerate chains",
        d.weight_sum_error, d.mass_sum_error, d.converged_chains, d.degenerate_chains
    );
    out
}
