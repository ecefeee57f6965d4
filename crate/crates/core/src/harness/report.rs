//! CSV, SVG and plain-text renderings of a scenario report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::scenario::{ScenarioReport, TechniqueStep};
use crate::error::{Error, Result};
use crate::twin::{records_to_csv, ClosedLoopRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    SvgChart,
    TextTable,
}

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COMPARE_FILE: &str = "compare.csv";
pub const TECHNIQUES_FILE: &str = "techniques.csv";
pub const CHART_FILE: &str = "chart.svg";
pub const BARS_FILE: &str = "bars.svg";

const COMPARE_HEADER: &str = "step,technique,capacity,shaper,achieved,useful";

pub fn technique_steps_to_csv(steps: &[TechniqueStep]) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for s in steps {
        let shaper = s.shaper.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.step, s.technique, s.capacity, shaper, s.achieved, s.useful
        );
    }
    out
}

pub fn technique_steps_from_csv(text: &str) -> Result<Vec<TechniqueStep>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(COMPARE_HEADER) {
        return Err(Error::param("compare csv: missing or wrong header"));
    }
    let bad = |n: usize| Error::param(format!("compare csv line {n}: malformed"));
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(n));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n));
        out.push(TechniqueStep {
            step: f[0].parse().map_err(|_| bad(n))?,
            technique: f[1].to_string(),
            capacity: num(f[2])?,
            shaper: if f[3].is_empty() { None } else { Some(num(f[3])?) },
            achieved: num(f[4])?,
            useful: num(f[5])?,
        });
    }
    Ok(out)
}

fn techniques_csv(report: &ScenarioReport) -> String {
    let mut out = String::from("technique,label,mean_kbps\n");
    for t in &report.summary.techniques {
        let _ = writeln!(out, "{},{},{}", t.id, t.label, t.mean_kbps);
    }
    out
}

/// Writes the report under `out_dir`. CSV and the JSON summary are always
/// written; SVG charts on request. Returns the written paths. Nothing is
/// left behind on failure.
pub fn emit_report(report: &ScenarioReport, formats: &[ReportFormat], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.records.is_empty() {
        return Err(Error::InsufficientData("report has no records".into()));
    }
    let mut files: Vec<(&str, String)> = vec![
        (RECORDS_FILE, records_to_csv(&report.records)),
        (
            SUMMARY_FILE,
            serde_json::to_string_pretty(&report.summary).map_err(|e| Error::param(e.to_string()))?,
        ),
    ];
    let compare = !report.technique_steps.is_empty();
    if compare {
        files.push((COMPARE_FILE, technique_steps_to_csv(&report.technique_steps)));
        files.push((TECHNIQUES_FILE, techniques_csv(report)));
    }
    if formats.contains(&ReportFormat::SvgChart) {
        files.push((CHART_FILE, line_chart_svg(&report.records, &report.name.to_string())));
        if compare {
            files.push((BARS_FILE, bar_chart_svg(report)));
        }
    }

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        if let Err(e) = fs::write(&path, body) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            return Err(Error::io(&path, e));
        }
        written.push(path);
    }
    Ok(written)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const W: f64 = 820.0;
const H: f64 = 380.0;
const ML: f64 = 60.0;
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 50.0;

fn nice_max(v: f64) -> f64 {
    let v = v.max(1.0) * 1.05;
    let mag = 10f64.powf(v.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| v / s <= 8.0)
        .unwrap_or(10.0 * mag);
    (v / step).ceil() * step
}

fn frame(svg: &mut String, title: &str, y_max: f64, x_label: &str) {
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="#ffffff"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
"##,
        W / 2.0,
        esc(title)
    );
    let ph = H - MT - MB;
    for k in 0..=5 {
        let v = y_max * k as f64 / 5.0;
        let y = MT + ph * (1.0 - k as f64 / 5.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{ML}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#e0e0e0"/><text x="{}" y="{:.1}" text-anchor="end">{v:.0}</text>"##,
            W - MR,
            ML - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">Kbps</text>
<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"##,
        MT + ph / 2.0,
        MT + ph / 2.0,
        ML + (W - ML - MR) / 2.0,
        H - 10.0,
        esc(x_label)
    );
}

/// Capacity, predicted state and achieved throughput over time.
pub fn line_chart_svg(records: &[ClosedLoopRecord], title: &str) -> String {
    let y_max = nice_max(
        records
            .iter()
            .flat_map(|r| [r.capacity, r.predicted, r.achieved])
            .fold(0.0, f64::max),
    );
    let n = records.len().max(2);
    let pw = W - ML - MR;
    let ph = H - MT - MB;
    let x = |t: f64| ML + pw * t / (n as f64 - 1.0).max(1.0);
    let y = |v: f64| MT + ph * (1.0 - v / y_max);

    let mut svg = String::new();
    frame(&mut svg, title, y_max, "time step (s)");
    let ticks = (n / 10).max(1);
    for t in (0..n).step_by(ticks) {
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{}" text-anchor="middle">{t}</text>"##,
            x(t as f64),
            H - MB + 16.0
        );
    }
    type Series<'a> = (&'a str, &'a str, fn(&ClosedLoopRecord) -> f64, &'a str);
    let series: [Series; 3] = [
        ("capacity", "#444444", |r| r.capacity, ""),
        ("predicted", "#1f77b4", |r| r.predicted, " stroke-dasharray=\"5 3\""),
        ("achieved", "#d62728", |r| r.achieved, ""),
    ];
    for (i, (name, color, f, dash)) in series.iter().enumerate() {
        let pts: Vec<String> = records
            .iter()
            .enumerate()
            .map(|(t, r)| format!("{:.1},{:.1}", x(t as f64), y(f(r))))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"##,
            pts.join(" ")
        );
        let lx = ML + 10.0 + 120.0 * i as f64;
        let _ = writeln!(
            svg,
            r##"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{name}</text>"##,
            MT - 8.0,
            lx + 20.0,
            MT - 8.0,
            lx + 24.0,
            MT - 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Mean throughput per comparison technique.
pub fn bar_chart_svg(report: &ScenarioReport) -> String {
    let t = &report.summary.techniques;
    let y_max = nice_max(t.iter().map(|t| t.mean_kbps).fold(0.0, f64::max));
    let pw = W - ML - MR;
    let ph = H - MT - MB;
    let slot = pw / t.len().max(1) as f64;
    let colors = ["#7f7f7f", "#d62728", "#ff7f0e", "#2ca02c", "#1f77b4"];
    let mut svg = String::new();
    frame(&mut svg, "mean throughput per technique", y_max, "");
    for (i, tr) in t.iter().enumerate() {
        let h = ph * tr.mean_kbps / y_max;
        let x0 = ML + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            svg,
            r##"<rect x="{x0:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>
<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.1}</text>
<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"##,
            MT + ph - h,
            slot * 0.7,
            colors[i % colors.len()],
            x0 + slot * 0.35,
            MT + ph - h - 5.0,
            tr.mean_kbps,
            x0 + slot * 0.35,
            H - MB + 16.0,
            esc(&tr.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Human-readable summary: one row per contiguous capacity segment, or per
/// technique for a comparison.
pub fn render_text_table(report: &ScenarioReport) -> String {
    let mut out = String::new();
    let s = &report.summary;
    let _ = writeln!(
        out,
        "scenario {}  seed {}  steps {}",
        report.name, report.seed, s.steps
    );
    let _ = writeln!(
        out,
        "{:>9}  {:>8}  {:>9}  {:>14}  {:>8}  provenance",
        "steps", "capacity", "predicted", "action", "achieved"
    );
    let recs = &report.records;
    let mut i = 0;
    while i < recs.len() {
        let mut j = i;
        while j + 1 < recs.len() && recs[j + 1].capacity == recs[i].capacity {
            j += 1;
        }
        let seg = &recs[i..=j];
        let n = seg.len() as f64;
        let pred = seg.iter().map(|r| r.predicted).sum::<f64>() / n;
        let ach = seg.iter().map(|r| r.achieved).sum::<f64>() / n;
        let mut actions: Vec<f64> = Vec::new();
        let mut prov: BTreeMap<&str, usize> = BTreeMap::new();
        for r in seg {
            if !actions.contains(&r.action) {
                actions.push(r.action);
            }
            *prov.entry(r.provenance.as_str()).or_default() += 1;
        }
        let actions: Vec<String> = actions.iter().map(|a| format!("{a}")).collect();
        let prov: Vec<String> = prov.iter().map(|(k, v)| format!("{k}x{v}")).collect();
        let _ = writeln!(
            out,
            "{:>9}  {:>8.1}  {:>9.1}  {:>14}  {:>8.1}  {}",
            format!("{}-{}", seg[0].step, seg[seg.len() - 1].step),
            seg[0].capacity,
            pred,
            actions.join("/"),
            ach,
            prov.join(" ")
        );
        i = j + 1;
    }
    let _ = writeln!(out, "mean achieved              {:.2} Kbps", s.mean_achieved);
    let _ = writeln!(out, "mean |achieved - capacity| {:.2} Kbps", s.mean_abs_error);
    let _ = writeln!(
        out,
        "  after {} warmup steps    {:.2} Kbps",
        s.warmup_steps, s.mean_abs_error_after_warmup
    );
    if !s.techniques.is_empty() {
        let _ = writeln!(out, "\n{:<4} {:<28} {:>10}", "id", "technique", "mean Kbps");
        for t in &s.techniques {
            let _ = writeln!(out, "{:<4} {:<28} {:>10.2}", t.id, t.label, t.mean_kbps);
        }
    }
    out
}
