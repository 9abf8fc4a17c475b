use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use super::config::{ModelKind, Protocol, Setting};
use super::experiment::RunReport;
use super::HarnessError;

/// Metrics shown in comparison tables, in column order.
pub const TABLE_METRICS: [&str; 8] = [
    "rouge",
    "bleu",
    "dist1",
    "dist2",
    "mrr",
    "precision_at_1",
    "macro_mrr",
    "perplexity",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub setting: Setting,
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    /// `None` when the run does not report this metric.
    pub value: Option<f64>,
    pub cross_lingual: bool,
    /// Highest ROUGE among this language's cross-lingual runs.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub language: String,
    /// Aligned with the table's columns; `None` when no run covers it.
    pub cells: Vec<Option<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub model: ModelKind,
    pub protocol: Protocol,
    pub columns: Vec<Column>,
    pub rows: Vec<TableRow>,
}

/// Lays out runs with one row per eval language and one column per
/// setting and metric. Runs must share a model family and protocol, and
/// no (language, setting) may repeat.
pub fn compare(reports: &[RunReport]) -> Result<ComparisonTable, HarnessError> {
    let first = reports
        .first()
        .ok_or_else(|| HarnessError::Incomparable("no reports given".into()))?;
    let mut seen = BTreeSet::new();
    for r in reports {
        if r.model != first.model {
            return Err(HarnessError::Incomparable(format!(
                "mixed model families {:?} and {:?}",
                first.model, r.model
            )));
        }
        if r.protocol != first.protocol {
            return Err(HarnessError::Incomparable(format!(
                "mixed protocols {:?} and {:?}",
                first.protocol, r.protocol
            )));
        }
        if !seen.insert((r.eval_language.clone(), r.setting)) {
            return Err(HarnessError::Incomparable(format!(
                "two runs for language {} in setting {}",
                r.eval_language,
                r.setting.as_str()
            )));
        }
    }
    let flat: Vec<BTreeMap<String, f64>> = reports.iter().map(|r| r.metrics.to_flat()).collect();
    let settings: BTreeSet<Setting> = reports.iter().map(|r| r.setting).collect();
    let metrics: Vec<&str> = TABLE_METRICS
        .iter()
        .copied()
        .filter(|m| flat.iter().any(|f| f.contains_key(*m)))
        .collect();
    let columns: Vec<Column> = settings
        .iter()
        .flat_map(|&setting| {
            metrics.iter().map(move |m| Column {
                setting,
                metric: m.to_string(),
            })
        })
        .collect();

    let languages: BTreeSet<&str> = reports.iter().map(|r| r.eval_language.as_str()).collect();
    let rows = languages
        .into_iter()
        .map(|lang| {
            let runs: Vec<usize> = (0..reports.len())
                .filter(|&i| reports[i].eval_language == lang)
                .collect();
            let best = runs
                .iter()
                .filter(|&&i| reports[i].cross_lingual)
                .map(|&i| reports[i].metrics.rouge.weighted)
                .fold(None, |acc: Option<f64>, v| {
                    Some(acc.map_or(v, |a| a.max(v)))
                });
            let cells = columns
                .iter()
                .map(|col| {
                    let i = *runs.iter().find(|&&i| reports[i].setting == col.setting)?;
                    let r = &reports[i];
                    let value = flat[i].get(&col.metric).copied();
                    let is_best = col.metric == "rouge"
                        && r.cross_lingual
                        && best == Some(r.metrics.rouge.weighted);
                    Some(Cell {
                        value,
                        cross_lingual: r.cross_lingual,
                        best: is_best,
                    })
                })
                .collect();
            TableRow {
                language: lang.to_string(),
                cells,
            }
        })
        .collect();
    Ok(ComparisonTable {
        model: first.model,
        protocol: first.protocol,
        columns,
        rows,
    })
}

impl ComparisonTable {
    /// Markdown table. Best cross-lingual ROUGE is bold, cross-lingual
    /// cells carry a `†`, missing runs show `-` and absent metrics `n/a`.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| language |");
        for c in &self.columns {
            let _ = write!(out, " {} {} |", c.setting.as_str(), c.metric);
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(self.columns.len()));
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "| {} |", row.language);
            for cell in &row.cells {
                let text = match cell {
                    None => "-".to_string(),
                    Some(Cell { value: None, .. }) => "n/a".to_string(),
                    Some(Cell {
                        value: Some(v),
                        cross_lingual,
                        best,
                    }) => {
                        let mark = if *cross_lingual { "†" } else { "" };
                        if *best {
                            format!("**{v:.4}**{mark}")
                        } else {
                            format!("{v:.4}{mark}")
                        }
                    }
                };
                let _ = write!(out, " {text} |");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ExperimentConfig, TrainSummary};
    use crate::metrics::{MetricReport, RougeScore};

    fn report(lang: &str, setting: Setting, cross_lingual: bool, rouge: f64) -> RunReport {
        RunReport {
            model: ModelKind::Retrieval,
            setting,
            train_languages: vec![lang.to_string()],
            eval_language: lang.to_string(),
            cross_lingual,
            protocol: Protocol::default(),
            metrics: MetricReport {
                rouge: RougeScore {
                    r1: rouge,
                    r2: rouge,
                    r3: rouge,
                    weighted: rouge,
                },
                mrr: Some(0.5),
                ..Default::default()
            },
            absent: BTreeMap::new(),
            empty_suggestions: 0,
            notes: Vec::new(),
            files_read: Vec::new(),
            train: TrainSummary {
                loaded_from: None,
                examples: 0,
                steps: 0,
                first_loss: None,
                final_loss: None,
                params_hash: String::new(),
                loss_curve: None,
            },
            config: ExperimentConfig::default(),
        }
    }

    fn best_settings(table: &ComparisonTable, lang: &str) -> Vec<Setting> {
        let row = table.rows.iter().find(|r| r.language == lang).unwrap();
        table
            .columns
            .iter()
            .zip(&row.cells)
            .filter(|(_, c)| c.as_ref().is_some_and(|c| c.best))
            .map(|(col, _)| col.setting)
            .collect()
    }

    #[test]
    fn best_is_flagged_among_cross_lingual_runs_only() {
        let reports = vec![
            report("de", Setting::Monolingual, false, 0.9),
            report("de", Setting::ZeroShot, true, 0.2),
            report("de", Setting::Mt, true, 0.3),
            report("de", Setting::Multilingual, false, 0.8),
            report("en", Setting::Monolingual, false, 0.7),
            report("en", Setting::ZeroShot, false, 0.7),
        ];
        let table = compare(&reports).unwrap();
        assert_eq!(best_settings(&table, "de"), vec![Setting::Mt]);
        assert!(best_settings(&table, "en").is_empty());
        let metrics: BTreeSet<&str> = table.columns.iter().map(|c| c.metric.as_str()).collect();
        assert_eq!(metrics, BTreeSet::from(["rouge", "dist1", "dist2", "mrr"]));
        assert_eq!(table.columns.len(), 4 * 4);
        let md = table.to_markdown();
        assert!(md.contains("**0.3000**†"));
        assert_eq!(md.lines().count(), 2 + 2);
    }

    #[test]
    fn ties_are_all_flagged() {
        let reports = vec![
            report("fr", Setting::ZeroShot, true, 0.4),
            report("fr", Setting::Mt, true, 0.4),
        ];
        assert_eq!(
            best_settings(&compare(&reports).unwrap(), "fr"),
            vec![Setting::ZeroShot, Setting::Mt]
        );
    }

    #[test]
    fn missing_runs_are_empty_cells() {
        let reports = vec![
            report("de", Setting::Mt, true, 0.1),
            report("en", Setting::Monolingual, false, 0.5),
        ];
        let table = compare(&reports).unwrap();
        let de = &table.rows[0];
        assert_eq!(de.language, "de");
        let mono_rouge = table
            .columns
            .iter()
            .position(|c| c.setting == Setting::Monolingual && c.metric == "rouge")
            .unwrap();
        assert!(de.cells[mono_rouge].is_none());
        assert!(table.to_markdown().contains(" - |"));
    }

    #[test]
    fn incomparable_inputs() {
        assert!(compare(&[]).is_err());
        let a = report("de", Setting::Mt, true, 0.1);
        let mut b = report("en", Setting::Mt, true, 0.1);
        b.model = ModelKind::Generation;
        assert!(compare(&[a.clone(), b]).is_err());
        let mut c = report("en", Setting::Mt, true, 0.1);
        c.protocol.k = 5;
        assert!(compare(&[a.clone(), c]).is_err());
        assert!(compare(&[a.clone(), a]).is_err());
    }
}
