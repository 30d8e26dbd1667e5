//! Analysis of evaluated turns: per-turn score curves with 95% intervals,
//! between-group Mann-Whitney and chi-square tests, and inter-rater
//! agreement among the three evaluator personas.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use vpsim_core::stats::{
    chi_square_2x2, fleiss_kappa, mann_whitney_u, mean, turn_curves, ChiSquare, CurvePoint, GroupedScores,
    MannWhitney, RatingsMatrix, SessionScores,
};
use vpsim_core::evaluation::EMPATHY_THRESHOLD;
use vpsim_core::AssessmentFlags;

use crate::corpus::EvaluatedTurn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    /// Every evaluated turn is one observation.
    Turn,
    /// Each session contributes its mean score.
    Session,
}

/// The binary Table-1 items compared between groups and across raters.
pub const ITEMS: [(&str, fn(&AssessmentFlags) -> bool); 6] = [
    ("tone", |f| f.calm && f.clear),
    ("empathy", |f| f.empathy_level >= EMPATHY_THRESHOLD),
    ("autonomy", |f| f.autonomy_used),
    ("limit_setting", |f| f.limit_setting_used),
    ("problem_solving", |f| f.problem_solving_used),
    ("prohibited", |f| f.any_prohibited()),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRate {
    pub group: String,
    pub item: String,
    pub present: u64,
    pub absent: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest<T> {
    pub group_a: String,
    pub group_b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    /// `None` when the test is undefined for these data.
    pub result: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub item: String,
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub group_field: String,
    pub unit: Unit,
    pub truncation: usize,
    pub groups: BTreeMap<String, usize>,
    pub curves: Vec<CurvePoint>,
    pub score_tests: Vec<PairTest<MannWhitney>>,
    pub item_rates: Vec<ItemRate>,
    pub item_tests: Vec<PairTest<ChiSquare>>,
    pub agreement: Vec<Agreement>,
}

/// Group label of a row: a carried-through field, or `case_id` / `session_id`.
pub fn group_of(row: &EvaluatedTurn, field: &str) -> String {
    let v = match field {
        "case_id" => return row.case_id.clone(),
        "session_id" => return row.session_id.clone(),
        f => row.extra.get(f),
    };
    match v {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => "(none)".into(),
        Some(other) => other.to_string(),
    }
}

pub fn build_report(rows: &[EvaluatedTurn], group_field: &str, unit: Unit, truncation: usize) -> anyhow::Result<Report> {
    let rows: Vec<&EvaluatedTurn> = rows.iter().filter(|r| r.turn >= 1 && r.turn <= truncation).collect();

    // Sessions in first-seen order, turns sorted.
    let mut sessions: Vec<(String, String, Vec<(usize, f64)>)> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &rows {
        let i = *index.entry(r.session_id.as_str()).or_insert_with(|| {
            sessions.push((r.session_id.clone(), group_of(r, group_field), Vec::new()));
            sessions.len() - 1
        });
        sessions[i].2.push((r.turn, r.score.clamped_total as f64));
    }
    for s in &mut sessions {
        s.2.sort_by_key(|(t, _)| *t);
    }

    let mut groups: BTreeMap<String, usize> = BTreeMap::new();
    for (_, g, _) in &sessions {
        *groups.entry(g.clone()).or_default() += 1;
    }

    let grouped = GroupedScores {
        sessions: sessions
            .iter()
            .map(|(_, g, ts)| SessionScores { group: g.clone(), scores: ts.iter().map(|(_, v)| *v).collect() })
            .collect(),
        truncation,
    };
    let curves = if grouped.sessions.is_empty() { Vec::new() } else { turn_curves(&grouped)? };

    let mut observations: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (_, g, ts) in &sessions {
        let obs = observations.entry(g.as_str()).or_default();
        match unit {
            Unit::Turn => obs.extend(ts.iter().map(|(_, v)| *v)),
            Unit::Session => obs.push(mean(&ts.iter().map(|(_, v)| *v).collect::<Vec<_>>())),
        }
    }
    let names: Vec<&str> = groups.keys().map(String::as_str).collect();
    let pairs: Vec<(&str, &str)> =
        names.iter().enumerate().flat_map(|(i, a)| names[i + 1..].iter().map(move |b| (*a, *b))).collect();

    let score_tests = pairs
        .iter()
        .map(|(a, b)| {
            let r = mann_whitney_u(&observations[a], &observations[b]);
            PairTest {
                group_a: a.to_string(),
                group_b: b.to_string(),
                item: None,
                note: r.as_ref().err().map(|e| e.to_string()),
                result: r.ok(),
            }
        })
        .collect();

    let group_of_row = |r: &EvaluatedTurn| group_of(r, group_field);
    let mut item_rates = Vec::new();
    let mut counts: BTreeMap<(String, &str), [u64; 2]> = BTreeMap::new();
    for r in &rows {
        for (item, f) in ITEMS {
            let c = counts.entry((group_of_row(r), item)).or_default();
            c[usize::from(!f(&r.assessment.flags))] += 1;
        }
    }
    for ((group, item), [present, absent]) in &counts {
        item_rates.push(ItemRate { group: group.clone(), item: item.to_string(), present: *present, absent: *absent });
    }

    let mut item_tests = Vec::new();
    for (a, b) in &pairs {
        for (item, _) in ITEMS {
            let ca = counts.get(&(a.to_string(), item)).copied().unwrap_or_default();
            let cb = counts.get(&(b.to_string(), item)).copied().unwrap_or_default();
            let r = chi_square_2x2([ca, cb]);
            item_tests.push(PairTest {
                group_a: a.to_string(),
                group_b: b.to_string(),
                item: Some(item.to_string()),
                note: r.as_ref().err().map(|e| e.to_string()),
                result: r.ok(),
            });
        }
    }

    let agreement = ITEMS
        .iter()
        .map(|(item, f)| {
            let counts: Vec<Vec<u32>> = rows
                .iter()
                .map(|r| {
                    let yes = r.assessment.per_role.iter().filter(|a| f(&a.flags)).count() as u32;
                    vec![r.assessment.per_role.len() as u32 - yes, yes]
                })
                .collect();
            let k = RatingsMatrix::new(vec!["no".into(), "yes".into()], counts).and_then(|m| fleiss_kappa(&m));
            Agreement { item: item.to_string(), note: k.as_ref().err().map(|e| e.to_string()), kappa: k.ok() }
        })
        .collect();

    Ok(Report {
        group_field: group_field.into(),
        unit,
        truncation,
        groups,
        curves,
        score_tests,
        item_rates,
        item_tests,
        agreement,
    })
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn curves_csv(curves: &[CurvePoint]) -> String {
    to_csv(curves, &["group", "turn", "n", "mean", "sd", "ci_low", "ci_high", "degenerate"])
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line chart of mean score per turn with shaded 95% intervals.
pub fn curves_svg(curves: &[CurvePoint], truncation: usize) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 50.0, 130.0, 20.0, 40.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let max_turn = truncation.max(2) as f64;
    let x = |t: usize| left + (t as f64 - 1.0) / (max_turn - 1.0) * pw;
    let y = |v: f64| top + ph - (v.clamp(0.0, 5.0) / 5.0) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for v in 0..=5 {
        let yy = y(v as f64);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#, left - 6.0, yy + 4.0);
    }
    for t in 1..=truncation {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#, x(t), top + ph + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Turn</text>"#, left + pw / 2.0, h - 6.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">Mean score</text>"#, top + ph / 2.0, top + ph / 2.0);

    let mut by_group: BTreeMap<&str, Vec<&CurvePoint>> = BTreeMap::new();
    for c in curves {
        by_group.entry(c.group.as_str()).or_default().push(c);
    }
    for (gi, (group, pts)) in by_group.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let upper: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", x(p.turn), y(p.ci_high))).collect();
        let lower: Vec<String> = pts.iter().rev().map(|p| format!("{:.1},{:.1}", x(p.turn), y(p.ci_low))).collect();
        let _ = writeln!(s, r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, upper.join(" "), lower.join(" "));
        let line: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", x(p.turn), y(p.mean))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        for p in pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, x(p.turn), y(p.mean));
        }
        let ly = top + 14.0 + gi as f64 * 18.0;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="{color}"/>"#, ly - 10.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 18.0, xml_escape(group));
    }
    s.push_str("</svg>\n");
    s
}

pub fn items_csv(rates: &[ItemRate]) -> String {
    let rows = rates.iter().map(|r| {
        let n = r.present + r.absent;
        let prop = if n == 0 { 0.0 } else { r.present as f64 / n as f64 };
        (&r.group, &r.item, r.present, r.absent, prop)
    });
    to_csv(rows, &["group", "item", "present", "absent", "proportion"])
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

pub fn summary_text(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Groups by {} (first {} turns, unit = {:?}):", r.group_field, r.truncation, r.unit);
    for (g, n) in &r.groups {
        let _ = writeln!(s, "  {g}: {n} session(s)");
    }
    let _ = writeln!(s, "\nScore comparison (Mann-Whitney U, two-sided):");
    for t in &r.score_tests {
        match &t.result {
            Some(m) => {
                let _ = writeln!(s, "  {} vs {}: U = {:.1}, p = {:.4} ({:?})", t.group_a, t.group_b, m.u_a, m.p, m.method);
            }
            None => {
                let _ = writeln!(s, "  {} vs {}: n/a ({})", t.group_a, t.group_b, t.note.as_deref().unwrap_or(""));
            }
        }
    }
    let _ = writeln!(s, "\nItem comparison (chi-square 2x2, df = 1):");
    for t in &r.item_tests {
        let item = t.item.as_deref().unwrap_or("");
        match &t.result {
            Some(c) => {
                let _ = writeln!(s, "  {item:<16} {} vs {}: chi2 = {:.3}, p = {:.4}", t.group_a, t.group_b, c.chi2, c.p);
            }
            None => {
                let _ = writeln!(s, "  {item:<16} {} vs {}: n/a ({})", t.group_a, t.group_b, t.note.as_deref().unwrap_or(""));
            }
        }
    }
    let _ = writeln!(s, "\nEvaluator agreement (Fleiss' kappa, 3 personas):");
    for a in &r.agreement {
        let _ = writeln!(s, "  {:<16} {}", a.item, fmt_opt(a.kappa));
    }
    s
}

/// Writes `report.json`, `report.txt`, `curves.csv`, `curves.svg` and `items.csv`.
pub fn write_report(r: &Report, out_dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let files = [
        ("report.json", serde_json::to_string_pretty(r)?),
        ("report.txt", summary_text(r)),
        ("curves.csv", curves_csv(&r.curves)),
        ("curves.svg", curves_svg(&r.curves, r.truncation)),
        ("items.csv", items_csv(&r.item_rates)),
    ];
    for (name, body) in files {
        let p = out_dir.join(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}
