//! Text summary and SVG figures rendered from an artifact directory's CSV
//! tables. Figures never hold numbers that are not also in a CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::Value as Json;

use crate::error::CliError;

const POS_COLOR: &str = "#2b6cb0";
const NEG_COLOR: &str = "#dd6b20";

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact {
            path: path.to_path_buf(),
            step: "audit",
        });
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

fn num(s: &str, path: &Path) -> Result<f64, CliError> {
    s.parse()
        .map_err(|_| CliError::Data(format!("{}: `{s}` is not a number", path.display())))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Grouped bars, one group per label, positive beside negative.
pub fn paired_bar_svg(title: &str, rows: &[(String, f64, f64)]) -> String {
    let group = 36.0;
    let (left, top, height) = (60.0, 40.0, 240.0);
    let width = left + group * rows.len() as f64 + 20.0;
    let max = rows
        .iter()
        .map(|r| r.1.max(r.2))
        .fold(0.0, f64::max)
        .max(1e-9);
    let mut s = String::new();
    let total_h = top + height + 120.0;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{total_h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="8" width="10" height="10" fill="{POS_COLOR}"/><text x="{}" y="17">positive</text><rect x="{}" y="8" width="10" height="10" fill="{NEG_COLOR}"/><text x="{}" y="17">negative</text>"#,
        width - 150.0,
        width - 136.0,
        width - 80.0,
        width - 66.0
    );
    let base = top + height;
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        width - 20.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{base}" stroke="black"/>"#
    );
    for k in 0..=4 {
        let v = max * k as f64 / 4.0;
        let y = base - height * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            left - 4.0,
            y + 4.0
        );
    }
    for (i, (label, p, n)) in rows.iter().enumerate() {
        let x = left + group * i as f64 + 4.0;
        let bar = (group - 8.0) / 2.0;
        for (j, (v, color)) in [(p, POS_COLOR), (n, NEG_COLOR)].into_iter().enumerate() {
            let h = height * v / max;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar:.1}" height="{h:.1}" fill="{color}"><title>{}: {v:.4}</title></rect>"#,
                x + bar * j as f64,
                base - h,
                escape(label)
            );
        }
        let tx = x + bar;
        let _ = writeln!(
            s,
            r#"<text x="{tx:.1}" y="{:.1}" transform="rotate(-60 {tx:.1} {:.1})" text-anchor="end">{}</text>"#,
            base + 12.0,
            base + 12.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Cells shaded by percentage; rows are fixed-category sets.
pub fn heatmap_svg(title: &str, columns: &[String], rows: &[(String, Vec<f64>)]) -> String {
    let (cell_w, cell_h, left, top) = (90.0, 28.0, 260.0, 70.0);
    let width = left + cell_w * columns.len() as f64 + 20.0;
    let height = top + cell_h * rows.len() as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    for (j, c) in columns.iter().enumerate() {
        let x = left + cell_w * (j as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#,
            top - 8.0,
            escape(c)
        );
    }
    for (i, (label, values)) in rows.iter().enumerate() {
        let y = top + cell_h * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + cell_h * 0.6,
            escape(label)
        );
        for (j, v) in values.iter().enumerate() {
            let x = left + cell_w * j as f64;
            let shade = 255.0 - 200.0 * (v / 100.0).clamp(0.0, 1.0);
            let text = if shade < 150.0 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell_w}" height="{cell_h}" fill="rgb({:.0},{:.0},255)" stroke="white"/><text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{text}">{v:.1}%</text>"#,
                shade,
                shade,
                x + cell_w / 2.0,
                y + cell_h * 0.6
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Render `report.txt` and `figures/` for the artifact directory `out`.
/// Returns the files written.
pub fn render(out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let report_path = out.join("report.json");
    if !report_path.exists() {
        return Err(CliError::MissingArtifact {
            path: report_path,
            step: "audit",
        });
    }
    let report: Json = serde_json::from_str(&std::fs::read_to_string(&report_path)?)?;
    let figures = out.join("figures");
    std::fs::create_dir_all(&figures)?;
    let tables = out.join("tables");
    let mut written = Vec::new();
    let mut text = String::new();
    let _ = writeln!(
        text,
        "Audit report: dataset {}, seed {}, {} samples per canonical set\n",
        report["dataset"].as_str().unwrap_or("?"),
        report["seed"],
        report["samples"]
    );

    let gm = tables.join("group_metrics.csv");
    if gm.exists() {
        let (_, rows) = read_table(&gm)?;
        let _ = writeln!(
            text,
            "Positivity rate (PR) and true positive rate (TPR), percent, on scored test rows"
        );
        let _ = writeln!(
            text,
            "{:<20} {:<28} {:>8} {:>7} {:>7}",
            "feature", "category", "support", "PR", "TPR"
        );
        for r in &rows {
            let flag = if r[5] == "true" {
                "  (low support)"
            } else {
                ""
            };
            let _ = writeln!(
                text,
                "{:<20} {:<28} {:>8} {:>7} {:>7}{flag}",
                r[0], r[1], r[2], r[3], r[4]
            );
        }
        if let Some(obj) = report["group_metrics"].as_object() {
            for (feature, m) in obj {
                let gap = |k: &str| {
                    m[k]["max_gap"]
                        .as_f64()
                        .map(|g| format!("{:.1} pp", g * 100.0))
                };
                let _ = writeln!(
                    text,
                    "{feature}: max DP gap {}, max EOP gap {}",
                    gap("dp").unwrap_or_else(|| "undefined".into()),
                    gap("eop").unwrap_or_else(|| "undefined".into())
                );
            }
        }
        text.push('\n');
    } else if let Some(note) = report["group_metrics"]["note"].as_str() {
        let _ = writeln!(text, "Group metrics: {note}\n");
    }

    let modes = report["modes"].as_object().cloned().unwrap_or_default();
    for (mode, entry) in &modes {
        if mode == "intersectional" {
            continue;
        }
        let _ = writeln!(text, "== {mode} ==");
        if entry["status"] == "empty" {
            let _ = writeln!(
                text,
                "{}; no charts emitted.\n",
                entry["note"].as_str().unwrap_or("canonical sets are empty")
            );
            continue;
        }
        if let Some(f) = entry["condition_fidelity"].as_f64() {
            let _ = writeln!(
                text,
                "condition fidelity (pre-enforcement argmax match): {:.3}",
                f
            );
        }
        let features = entry["features"].as_object().cloned().unwrap_or_default();
        for feature in features.keys() {
            let path = tables.join(format!("{mode}_{feature}.csv"));
            let (_, rows) = read_table(&path)?;
            let rows = rows
                .iter()
                .map(|r| Ok((r[0].clone(), num(&r[1], &path)?, num(&r[2], &path)?)))
                .collect::<Result<Vec<_>, CliError>>()?;
            let fig = figures.join(format!("{mode}_{feature}.svg"));
            std::fs::write(&fig, paired_bar_svg(&format!("{mode}: {feature}"), &rows))?;
            written.push(fig);
            let d = &entry["distances"][feature];
            let _ = writeln!(
                text,
                "{feature}: W1 {:.4}, JS {:.4}{}",
                d["wasserstein1"].as_f64().unwrap_or(f64::NAN),
                d["jensen_shannon"].as_f64().unwrap_or(f64::NAN),
                d["caveat"]
                    .as_str()
                    .map(|c| format!(" ({c})"))
                    .unwrap_or_default()
            );
        }
        text.push('\n');
    }

    if let Some(ix) = modes.get("intersectional") {
        let _ = writeln!(text, "== intersectional ==");
        for ct in ix["crosstabs"].as_array().cloned().unwrap_or_default() {
            let name = ct["name"].as_str().unwrap_or("crosstab");
            if let Some(note) = ct["note"].as_str() {
                let _ = writeln!(text, "{name}: {note}; no heat map emitted.");
                continue;
            }
            let path = tables.join(format!("{name}.csv"));
            let (header, rows) = read_table(&path)?;
            let columns = header[2..].to_vec();
            let rows = rows
                .iter()
                .map(|r| {
                    Ok((
                        r[0].clone(),
                        r[2..]
                            .iter()
                            .map(|v| num(v, &path))
                            .collect::<Result<Vec<_>, _>>()?,
                    ))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let title = format!(
                "{name}: {} share of positive samples (%)",
                ix["axis"].as_str().unwrap_or("")
            );
            let fig = figures.join(format!("{name}.svg"));
            std::fs::write(&fig, heatmap_svg(&title, &columns, &rows))?;
            written.push(fig);
            let _ = writeln!(
                text,
                "{name} ({} by row, percent)",
                ix["axis"].as_str().unwrap_or("")
            );
            for (label, values) in &rows {
                let cells: Vec<String> = columns
                    .iter()
                    .zip(values)
                    .map(|(c, v)| format!("{c} {v:.1}"))
                    .collect();
                let _ = writeln!(text, "  {label}: {}", cells.join(", "));
            }
        }
        text.push('\n');
    }

    let txt = out.join("report.txt");
    std::fs::write(&txt, text)?;
    written.push(txt);
    Ok(written)
}
