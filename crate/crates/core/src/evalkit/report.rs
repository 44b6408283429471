use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BleuReport;
use crate::error::{IoContext, Result};

/// Per-run score file; a JSON array of [`ScoreRow`].
pub const SCORES_FILE: &str = "scores.json";

pub const DIRECTIONS: [&str; 2] = ["a2b", "b2a"];

/// Zero-resource ablation cells plus the full-data supervised reference.
pub const ABLATION_CONFIGS: [&str; 6] = [
    "pivot_noreweight",
    "pivot_reweight",
    "ae_random_emb",
    "ae_pivot_emb",
    "combined",
    "supervised_100",
];

pub const SUPERVISED_CONFIGS: [(&str, f64); 3] =
    [("supervised_25", 0.25), ("supervised_50", 0.5), ("supervised_100", 1.0)];

/// Caption BLEU rows use this config with directions `caption_a` / `caption_b`.
pub const CAPTION_CONFIG: &str = "captioner";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub direction: String,
    pub config: String,
    pub seed: u64,
    pub bleu4: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub bp: f64,
    pub config_hash: String,
}

impl ScoreRow {
    pub fn new(direction: &str, config: &str, seed: u64, r: &BleuReport, config_hash: &str) -> Self {
        Self {
            direction: direction.into(),
            config: config.into(),
            seed,
            bleu4: r.bleu4,
            p1: r.precisions[0],
            p2: r.precisions[1],
            p3: r.precisions[2],
            p4: r.precisions[3],
            bp: r.brevity_penalty,
            config_hash: config_hash.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<ScoreRow>,
    /// `seed/config/direction` cells with no score file.
    pub absent: Vec<String>,
}

impl AblationTable {
    pub fn from_rows(mut rows: Vec<ScoreRow>) -> Self {
        rows.sort_by(|a, b| {
            (a.seed, &a.config, &a.direction).cmp(&(b.seed, &b.config, &b.direction))
        });
        let seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
        let mut absent = Vec::new();
        for &s in &seeds {
            let configs = ABLATION_CONFIGS.iter().chain(SUPERVISED_CONFIGS.iter().map(|(c, _)| c));
            for c in configs.collect::<BTreeSet<_>>() {
                for d in DIRECTIONS {
                    if !rows.iter().any(|r| r.seed == s && r.config == *c && r.direction == d) {
                        absent.push(format!("{s}/{c}/{d}"));
                    }
                }
            }
        }
        Self { rows, absent }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.seed).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn scores(&self, direction: &str, config: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.direction == direction && r.config == config)
            .map(|r| r.bleu4)
            .collect()
    }

    pub fn median(&self, direction: &str, config: &str) -> Option<f64> {
        median(&self.scores(direction, config))
    }
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Qualitative claims checked on per-direction medians; `None` when an
/// operand is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orderings {
    pub direction: String,
    pub reweight_helps: Option<bool>,
    pub pivot_embeddings_help: Option<bool>,
    pub combined_best: Option<bool>,
    pub supervised_beats_combined: Option<bool>,
    pub supervised_monotone: Option<bool>,
    /// Median combined BLEU over median full-data supervised BLEU.
    pub zero_resource_ratio: Option<f64>,
}

impl Orderings {
    pub fn compute(t: &AblationTable, direction: &str) -> Self {
        let m = |c: &str| t.median(direction, c);
        let gt = |a: Option<f64>, b: Option<f64>| Some(a? > b?);
        let combined_best = (|| {
            let c = m("combined")?;
            Some(c >= m("pivot_reweight")? && c >= m("ae_pivot_emb")?)
        })();
        let zero_resource_ratio = (|| {
            let s = m("supervised_100")?;
            (s > 0.0).then(|| m("combined").map(|c| c / s))?
        })();
        Self {
            direction: direction.into(),
            reweight_helps: gt(m("pivot_reweight"), m("pivot_noreweight")),
            pivot_embeddings_help: gt(m("ae_pivot_emb"), m("ae_random_emb")),
            combined_best,
            supervised_beats_combined: gt(m("supervised_100"), m("combined")),
            supervised_monotone: (|| Some(m("supervised_25")? <= m("supervised_100")?))(),
            zero_resource_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub table: AblationTable,
    pub orderings: Vec<Orderings>,
    pub markdown: String,
    pub csv: String,
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .ctx(format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .ctx(format!("listing {}", dir.display()))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == SCORES_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Gathers every score file below `run_dir` and renders the report.
pub fn ablation_report(run_dir: &Path) -> Result<AblationReport> {
    let mut files = Vec::new();
    collect(run_dir, &mut files)?;
    let mut rows = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).ctx(format!("reading {}", f.display()))?;
        let mut part: Vec<ScoreRow> = serde_json::from_str(&text)?;
        rows.append(&mut part);
    }
    Ok(render(AblationTable::from_rows(rows)))
}

pub fn render(table: AblationTable) -> AblationReport {
    let orderings: Vec<Orderings> = DIRECTIONS.iter().map(|d| Orderings::compute(&table, d)).collect();
    let markdown = markdown(&table, &orderings);
    let csv = write_csv(&table.rows).expect("csv into memory");
    AblationReport {
        table,
        orderings,
        markdown,
        csv,
    }
}

fn cell(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{:.2}", 100.0 * v))
}

fn flag(x: Option<bool>) -> &'static str {
    match x {
        Some(true) => "yes",
        Some(false) => "NO",
        None => "n/a",
    }
}

fn markdown(t: &AblationTable, orderings: &[Orderings]) -> String {
    let seeds = t.seeds();
    let mut s = String::from("# Ablation report\n\nBLEU-4 x100; median over seeds.\n");
    let header = |s: &mut String, first: &str| {
        let _ = write!(s, "\n| {first} |");
        for seed in &seeds {
            let _ = write!(s, " seed {seed} |");
        }
        s.push_str(" median |\n|---|");
        for _ in &seeds {
            s.push_str("---:|");
        }
        s.push_str("---:|\n");
    };
    let line = |s: &mut String, label: &str, d: &str, c: &str| {
        let _ = write!(s, "| {label} |");
        for &seed in &seeds {
            let v = t.rows.iter().find(|r| r.seed == seed && r.direction == d && r.config == c);
            let _ = write!(s, " {} |", cell(v.map(|r| r.bleu4)));
        }
        let _ = writeln!(s, " {} |", cell(t.median(d, c)));
    };
    for d in DIRECTIONS {
        let _ = writeln!(s, "\n## {d}");
        header(&mut s, "config");
        for c in ABLATION_CONFIGS {
            line(&mut s, c, d, c);
        }
    }
    let _ = writeln!(s, "\n## Caption BLEU on validation");
    header(&mut s, "language");
    for d in ["caption_a", "caption_b"] {
        line(&mut s, d, d, CAPTION_CONFIG);
    }
    let _ = writeln!(s, "\n## Supervised curve");
    header(&mut s, "direction / parallel fraction");
    for d in DIRECTIONS {
        for (c, f) in SUPERVISED_CONFIGS {
            line(&mut s, &format!("{d} @ {f}"), d, c);
        }
    }
    let _ = writeln!(s, "\n## Orderings\n");
    s.push_str("| direction | reweight helps | pivot embeddings help | combined best | supervised > combined | supervised monotone | zero-resource / supervised |\n");
    s.push_str("|---|---|---|---|---|---|---:|\n");
    for o in orderings {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} |",
            o.direction,
            flag(o.reweight_helps),
            flag(o.pivot_embeddings_help),
            flag(o.combined_best),
            flag(o.supervised_beats_combined),
            flag(o.supervised_monotone),
            o.zero_resource_ratio.map_or("-".into(), |r| format!("{r:.3}")),
        );
    }
    if !t.absent.is_empty() {
        let _ = writeln!(s, "\n## Absent runs\n");
        for a in &t.absent {
            let _ = writeln!(s, "- {a}");
        }
    }
    s
}

pub fn write_csv(rows: &[ScoreRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| crate::Error::Format(e.to_string()))
}

pub fn read_csv(text: &str) -> Result<Vec<ScoreRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(Into::into))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(d: &str, c: &str, seed: u64, b: f64) -> ScoreRow {
        ScoreRow {
            direction: d.into(),
            config: c.into(),
            seed,
            bleu4: b,
            p1: b.sqrt(),
            p2: b,
            p3: b * b,
            p4: 0.1 + b / 3.0,
            bp: 1.0,
            config_hash: format!("{seed:016x}"),
        }
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn orderings_from_medians() {
        let mut rows = Vec::new();
        for seed in 1..=3 {
            let s = seed as f64 * 1e-3;
            for (c, b) in [
                ("pivot_noreweight", 0.1),
                ("pivot_reweight", 0.2),
                ("ae_random_emb", 0.05),
                ("ae_pivot_emb", 0.15),
                ("combined", 0.25),
                ("supervised_25", 0.3),
                ("supervised_50", 0.4),
                ("supervised_100", 0.5),
            ] {
                for d in DIRECTIONS {
                    rows.push(row(d, c, seed, b + s));
                }
            }
        }
        let rep = render(AblationTable::from_rows(rows));
        assert!(rep.table.absent.is_empty());
        for o in &rep.orderings {
            assert_eq!(o.reweight_helps, Some(true));
            assert_eq!(o.pivot_embeddings_help, Some(true));
            assert_eq!(o.combined_best, Some(true));
            assert_eq!(o.supervised_beats_combined, Some(true));
            assert_eq!(o.supervised_monotone, Some(true));
            assert!((o.zero_resource_ratio.unwrap() - 0.252 / 0.502).abs() < 1e-12);
        }
        for d in DIRECTIONS {
            let body = rep.markdown.split(&format!("## {d}\n")).nth(1).unwrap();
            let n = body.lines().take_while(|l| !l.starts_with("##")).filter(|l| l.starts_with("| ") && !l.starts_with("| config")).count();
            assert_eq!(n, 6);
        }
    }

    #[test]
    fn missing_runs_are_listed() {
        let rep = render(AblationTable::from_rows(vec![row("a2b", "combined", 7, 0.2)]));
        assert!(rep.table.absent.contains(&"7/combined/b2a".to_string()));
        assert!(rep.table.absent.contains(&"7/pivot_reweight/a2b".to_string()));
        assert_eq!(rep.orderings[0].reweight_helps, None);
        assert!(rep.markdown.contains("Absent runs"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows: Vec<ScoreRow> = (0..20).map(|i| row("b2a", "combined", i, (i as f64 + 0.1).ln().abs() / 7.0)).collect();
        let text = write_csv(&rows).unwrap();
        let back = read_csv(&text).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a, b);
            assert_eq!(a.bleu4.to_bits(), b.bleu4.to_bits());
        }
        assert!(text.starts_with("direction,config,seed,bleu4,p1,p2,p3,p4,bp,config_hash\n"));
    }
}
