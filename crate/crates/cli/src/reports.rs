//! Aggregate report tables.
//!
//! Every table is tab-separated with a `#` comment header carrying tool,
//! version and config fingerprint. Cells aggregated over seeds print as
//! `mean ± sd`; `summary.json` holds the same numbers unformatted.

use oscd_core::calibrate::{StrategyFamily, StrategyResult};
use oscd_core::communities::Provenance;
use oscd_core::community_metrics::CommunityMetricBundle;
use oscd_core::ingest::{SampleSet, Split};
use oscd_core::robustness::{
    absorption_matrix, confidence_summary, pearson, recommend, spearman, AbsorptionMatrix, ConfidenceRow,
    RecommendationRow, SeedSweepSummary,
};
use oscd_core::sample_metrics::{aupr, auroc, fpr_at_unknown_recall, BinaryScoredSet};
use oscd_core::scoring::{format_f64, ScoreTable};
use serde::Serialize;

use crate::commands::{Context, SeedResults};
use crate::error::CliError;

const DECIMALS: usize = 4;

struct Table {
    title: &'static str,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    notes: Vec<String>,
}

impl Table {
    fn new(title: &'static str, header: &[&str]) -> Self {
        Self {
            title,
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn render(&self, ctx: &Context) -> Result<Vec<u8>, CliError> {
        let mut out = Vec::new();
        out.extend(format!("# {}\n", self.title).bytes());
        for (k, v) in ctx.header() {
            out.extend(format!("# {k}: {v}\n").bytes());
        }
        for n in &self.notes {
            out.extend(format!("# note: {n}\n").bytes());
        }
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
        let err = |e: csv::Error| CliError::Other(e.to_string());
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        w.into_inner().map_err(|e| CliError::Other(e.to_string()))
    }

    fn write(&self, ctx: &Context, name: &str) -> Result<(), CliError> {
        ctx.write(&ctx.path("reports", name), &self.render(ctx)?)
    }
}

fn summary(values: &[(u64, f64)]) -> SeedSweepSummary {
    SeedSweepSummary::new(values).expect("at least one seed")
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodScreening {
    pub method: String,
    pub n_known: usize,
    pub n_unknown: usize,
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    pub fpr_at_95_unknown_recall: Option<f64>,
}

fn screen(table: &ScoreTable, method: &str) -> MethodScreening {
    let m = table.method_index(method).expect("method checked");
    let (scores, unk): (Vec<f64>, Vec<bool>) = table
        .rows_in(Split::Test)
        .map(|(_, r)| (r.scores[m], r.group.is_unknown()))
        .unzip();
    let n_unknown = unk.iter().filter(|u| **u).count();
    let set = BinaryScoredSet::new(scores, unk).ok();
    MethodScreening {
        method: method.to_string(),
        n_known: set.as_ref().map_or(0, |s| s.negatives()),
        n_unknown,
        auroc: set.as_ref().and_then(|s| auroc(s).ok()),
        aupr: set.as_ref().and_then(|s| aupr(s).ok()),
        fpr_at_95_unknown_recall: set.as_ref().and_then(|s| fpr_at_unknown_recall(s, 0.95).ok()).map(|f| f.fpr),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |x| format!("{x:.prec$}", prec = DECIMALS))
}

/// One strategy aggregated over seeds for one method.
#[derive(Debug, Clone, Serialize)]
pub struct StrategySummary {
    pub method: String,
    pub strategy: String,
    pub family: StrategyFamily,
    pub non_deployable: bool,
    pub threshold: SeedSweepSummary,
    pub test_known_recall: SeedSweepSummary,
    pub test_unknown_recall: SeedSweepSummary,
    pub test_detection_f1: SeedSweepSummary,
    pub test_metrics: Vec<(String, SeedSweepSummary)>,
}

fn per_seed<F: Fn(&StrategyResult) -> f64>(hits: &[(u64, &StrategyResult)], f: F) -> Vec<(u64, f64)> {
    hits.iter().map(|(s, r)| (*s, f(r))).collect()
}

fn strategy_summaries(method: &str, runs: &[&SeedResults]) -> Vec<StrategySummary> {
    let mut labels: Vec<String> = Vec::new();
    for run in runs {
        for r in &run.strategies {
            if !labels.contains(&r.strategy) {
                labels.push(r.strategy.clone());
            }
        }
    }
    labels
        .into_iter()
        .filter_map(|label| {
            let hits: Vec<(u64, &StrategyResult)> = runs
                .iter()
                .filter_map(|run| run.strategies.iter().find(|r| r.strategy == label).map(|r| (run.seed, r)))
                .collect();
            let first = hits.first()?.1;
            Some(StrategySummary {
                method: method.to_string(),
                strategy: label.clone(),
                family: first.family,
                non_deployable: first.non_deployable,
                threshold: summary(&per_seed(&hits, |r| r.threshold)),
                test_known_recall: summary(&per_seed(&hits, |r| r.test_confusion.known_recall)),
                test_unknown_recall: summary(&per_seed(&hits, |r| r.test_confusion.unknown_recall)),
                test_detection_f1: summary(&per_seed(&hits, |r| r.test_confusion.detection_f1)),
                test_metrics: CommunityMetricBundle::FIELDS
                    .iter()
                    .enumerate()
                    .map(|(i, f)| (f.to_string(), summary(&per_seed(&hits, |r| r.test_metrics.values()[i]))))
                    .collect(),
            })
        })
        .collect()
}

fn closed_set_summary(runs: &[&SeedResults]) -> Vec<(String, SeedSweepSummary)> {
    CommunityMetricBundle::FIELDS
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let v: Vec<(u64, f64)> = runs
                .iter()
                .map(|r| (r.seed, r.closed_set.test_metrics.values()[i]))
                .collect();
            (f.to_string(), summary(&v))
        })
        .collect()
}

fn metric<'a>(m: &'a [(String, SeedSweepSummary)], name: &str) -> &'a SeedSweepSummary {
    &m.iter().find(|(n, _)| n == name).expect("known field").1
}

/// Best non-community-aware sample-level strategy within one setting, by
/// mean test OSCD over seeds; ties keep the earlier strategy.
fn best_sample(runs: &[&SeedResults], setting: &str) -> Option<(String, Vec<(u64, f64)>)> {
    let mut best: Option<(String, Vec<(u64, f64)>, f64)> = None;
    let first = runs.first()?;
    for r in first.strategies.iter().filter(|r| r.family.is_sample_level()) {
        let series: Option<Vec<(u64, f64)>> = runs
            .iter()
            .map(|run| {
                run.strategies
                    .iter()
                    .find(|x| x.strategy == r.strategy)
                    .and_then(|x| x.test_by_setting.iter().find(|b| b.setting == setting))
                    .map(|b| (run.seed, b.metrics.oscd))
            })
            .collect();
        let Some(series) = series else { continue };
        let mean = series.iter().map(|p| p.1).sum::<f64>() / series.len() as f64;
        if best.as_ref().is_none_or(|b| mean < b.2) {
            best = Some((r.strategy.clone(), series, mean));
        }
    }
    best.map(|(s, v, _)| (s, v))
}

fn setting_series(runs: &[&SeedResults], strategy: &str, setting: &str) -> Option<Vec<(u64, f64)>> {
    runs.iter()
        .map(|run| {
            run.strategies
                .iter()
                .find(|x| x.strategy == strategy)
                .and_then(|x| x.test_by_setting.iter().find(|b| b.setting == setting))
                .map(|b| (run.seed, b.metrics.oscd))
        })
        .collect()
}

fn recommendations(
    ctx: &Context,
    method: &str,
    runs: &[&SeedResults],
    notes: &mut Vec<String>,
) -> Result<Vec<(String, RecommendationRow)>, CliError> {
    let mut out = Vec::new();
    if runs.len() < 2 {
        notes.push(format!("{method}: recommendations need at least 2 seeds"));
        return Ok(out);
    }
    for setting in &runs[0].settings {
        let Some((best_name, best)) = best_sample(runs, setting) else {
            notes.push(format!("{method} {setting}: no sample-level strategy results"));
            continue;
        };
        let scoped = format!("{}({setting})", StrategyFamily::CommunityAwareSetting);
        let ca = setting_series(runs, &scoped, setting)
            .or_else(|| setting_series(runs, StrategyFamily::CommunityAwareOscd.as_str(), setting));
        let oracle = setting_series(runs, &format!("{}({setting})", StrategyFamily::OracleSetting), setting);
        let (Some(ca), Some(oracle)) = (ca, oracle) else {
            notes.push(format!(
                "{method} {setting}: needs community-aware and oracle_setting results"
            ));
            continue;
        };
        let row = recommend(setting, &best_name, &best, &ca, &oracle, &ctx.config.rule())?;
        out.push((method.to_string(), row));
    }
    Ok(out)
}

#[derive(Serialize)]
struct Summary<'a> {
    provenance: Provenance,
    methods: &'a [MethodScreening],
    strategies: &'a [StrategySummary],
    closed_set: Vec<(String, Vec<(String, SeedSweepSummary)>)>,
    recommendations: &'a [(String, RecommendationRow)],
    rank_consistency: Option<RankConsistency>,
    confidence: Vec<(Split, Vec<ConfidenceRow>)>,
    absorption: Vec<AbsorptionMatrix>,
}

#[derive(Serialize, Clone)]
struct RankConsistency {
    methods: Vec<String>,
    auroc: Vec<f64>,
    community_aware_oscd: Vec<f64>,
    spearman: Option<f64>,
    pearson: Option<f64>,
}

fn table_strategy_rows(t: &mut Table, s: &StrategySummary) {
    t.rows.push(vec![
        s.method.clone(),
        s.strategy.clone(),
        s.non_deployable.to_string(),
        s.threshold.format(DECIMALS),
        s.test_known_recall.format(DECIMALS),
        s.test_unknown_recall.format(DECIMALS),
        s.test_detection_f1.format(DECIMALS),
        metric(&s.test_metrics, "oscd").format(DECIMALS),
    ]);
}

pub fn write_reports(ctx: &Context, set: &SampleSet, table: &ScoreTable, all: &[SeedResults]) -> Result<(), CliError> {
    let mut methods: Vec<String> = Vec::new();
    for r in all {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }

    // method screening
    let screening: Vec<MethodScreening> = methods.iter().map(|m| screen(table, m)).collect();
    let mut t1 = Table::new(
        "method screening on test samples",
        &["method", "n_known", "n_unknown", "auroc", "aupr", "fpr_at_95_unknown_recall"],
    );
    for s in &screening {
        t1.rows.push(vec![
            s.method.clone(),
            s.n_known.to_string(),
            s.n_unknown.to_string(),
            opt(s.auroc),
            opt(s.aupr),
            opt(s.fpr_at_95_unknown_recall),
        ]);
    }
    t1.write(ctx, "table1_methods.tsv")?;

    // closed-set confidence profile
    let mut confidence = Vec::new();
    let mut tc = Table::new(
        "closed-set confidence by group",
        &["split", "group", "n", "accuracy", "mean_confidence", "frac_confidence_ge_0.90"],
    );
    for split in [Split::Val, Split::Test] {
        match confidence_summary(set, split) {
            Ok(rows) => {
                for r in &rows {
                    tc.rows.push(vec![
                        split.to_string(),
                        r.group.as_str().into(),
                        r.n.to_string(),
                        opt(r.accuracy),
                        format!("{:.*}", DECIMALS, r.mean_confidence),
                        format!("{:.*}", DECIMALS, r.frac_confident),
                    ]);
                }
                confidence.push((split, rows));
            }
            Err(e) => tc.notes.push(format!("{split}: {e}")),
        }
    }
    tc.write(ctx, "table1_confidence.tsv")?;

    // strategies, directions, objectives
    let mut t3 = Table::new(
        "threshold strategies (test metrics, mean ± sd over seeds)",
        &[
            "method",
            "strategy",
            "non_deployable",
            "threshold",
            "known_recall",
            "unknown_recall",
            "detection_f1",
            "oscd",
        ],
    );
    let mut t4 = Table::new(
        "error direction (test communities, mean ± sd over seeds)",
        &["method", "strategy", "oscd", "oscd_plus", "oscd_minus", "dominant"],
    );
    let mut t5_header = vec!["method", "objective", "threshold", "known_recall"];
    t5_header.extend(CommunityMetricBundle::FIELDS);
    let mut t5 = Table::new("objective-aware calibration trade-offs (test communities)", &t5_header);
    let mut t6 = Table::new(
        "per-setting recommendation",
        &[
            "method",
            "setting",
            "best_sample_strategy",
            "best_sample_oscd",
            "ca_oscd",
            "setting_oracle_oscd",
            "paired_t",
            "paired_p",
            "recommendation",
        ],
    );
    let mut strategies = Vec::new();
    let mut closed = Vec::new();
    let mut recs = Vec::new();
    for method in &methods {
        let runs: Vec<&SeedResults> = all.iter().filter(|r| &r.method == method).collect();
        let cs = closed_set_summary(&runs);
        t3.rows.push(vec![
            method.clone(),
            "closed_set".into(),
            "false".into(),
            "inf".into(),
            "1.0000".into(),
            "0.0000".into(),
            "0.0000".into(),
            metric(&cs, "oscd").format(DECIMALS),
        ]);
        let sums = strategy_summaries(method, &runs);
        for s in &sums {
            let scoped = matches!(s.family, StrategyFamily::CommunityAwareSetting | StrategyFamily::OracleSetting);
            if !scoped && s.family != StrategyFamily::ObjectiveAware {
                table_strategy_rows(&mut t3, s);
            }
            if !scoped {
                let plus = metric(&s.test_metrics, "oscd_plus");
                let minus = metric(&s.test_metrics, "oscd_minus");
                let dominant = if minus.mean > plus.mean {
                    "minus"
                } else if plus.mean > minus.mean {
                    "plus"
                } else {
                    "balanced"
                };
                t4.rows.push(vec![
                    method.clone(),
                    s.strategy.clone(),
                    metric(&s.test_metrics, "oscd").format(DECIMALS),
                    plus.format(DECIMALS),
                    minus.format(DECIMALS),
                    dominant.into(),
                ]);
            }
            if s.family == StrategyFamily::ObjectiveAware {
                let objective = s
                    .strategy
                    .trim_start_matches("objective_aware(")
                    .trim_end_matches(')')
                    .to_string();
                let mut row = vec![
                    method.clone(),
                    objective,
                    s.threshold.format(DECIMALS),
                    s.test_known_recall.format(DECIMALS),
                ];
                row.extend(s.test_metrics.iter().map(|(_, v)| v.format(DECIMALS)));
                t5.rows.push(row);
            }
        }
        recs.extend(recommendations(ctx, method, &runs, &mut t6.notes)?);
        strategies.extend(sums);
        closed.push((method.clone(), cs));

        for run in &runs {
            let mut curve = Table::new(
                "detection F1 and mean test OSCD against known recall",
                &[
                    "grid_index",
                    "threshold",
                    "test_known_recall",
                    "test_detection_f1",
                    "mean_test_oscd",
                    "val_known_recall",
                    "val_detection_f1",
                    "mean_val_oscd",
                ],
            );
            for p in &run.curve {
                curve.rows.push(vec![
                    p.grid_index.to_string(),
                    format_f64(p.threshold),
                    format_f64(p.test_known_recall),
                    format_f64(p.test_detection_f1),
                    format_f64(p.mean_test_oscd),
                    format_f64(p.val_known_recall),
                    format_f64(p.val_detection_f1),
                    format_f64(p.mean_val_oscd),
                ]);
            }
            curve.write(ctx, &format!("fig4_curve_{method}_seed{}.tsv", run.seed))?;
            let mut markers = Table::new(
                "strategy markers on the curve",
                &["strategy", "grid_index", "threshold", "test_known_recall", "test_detection_f1", "mean_test_oscd"],
            );
            for r in run.strategies.iter().filter(|r| {
                !matches!(r.family, StrategyFamily::CommunityAwareSetting | StrategyFamily::OracleSetting)
            }) {
                markers.rows.push(vec![
                    r.strategy.clone(),
                    r.grid_index.to_string(),
                    format_f64(r.threshold),
                    format_f64(r.test_confusion.known_recall),
                    format_f64(r.test_confusion.detection_f1),
                    format_f64(r.test_metrics.oscd),
                ]);
            }
            markers.write(ctx, &format!("fig4_markers_{method}_seed{}.tsv", run.seed))?;
        }
    }
    for (method, r) in &recs {
        t6.rows.push(vec![
            method.clone(),
            r.setting.clone(),
            r.best_sample_strategy.clone(),
            r.best_sample_oscd.format(DECIMALS),
            r.ca_oscd.format(DECIMALS),
            r.setting_oracle_oscd.format(DECIMALS),
            format!("{:.3}", r.paired_t),
            format!("{:.3e}", r.paired_p),
            r.recommendation.as_str().into(),
        ]);
    }
    t3.write(ctx, "table3_strategies.tsv")?;
    t4.write(ctx, "table4_direction.tsv")?;
    t5.write(ctx, "table5_objectives.tsv")?;
    t6.write(ctx, "table6_recommendations.tsv")?;

    // rank agreement between sample-level screening and community-aware OSCD
    let ca_label = StrategyFamily::CommunityAwareOscd.as_str();
    let paired: Vec<(String, f64, f64)> = screening
        .iter()
        .filter_map(|s| {
            let ca = strategies
                .iter()
                .find(|x| x.method == s.method && x.strategy == ca_label)?;
            Some((s.method.clone(), s.auroc?, metric(&ca.test_metrics, "oscd").mean))
        })
        .collect();
    let mut tr = Table::new(
        "rank consistency: test AUROC against community-aware test OSCD (negated)",
        &["statistic", "value"],
    );
    let rank = (paired.len() >= 2).then(|| {
        let a: Vec<f64> = paired.iter().map(|p| p.1).collect();
        let o: Vec<f64> = paired.iter().map(|p| -p.2).collect();
        RankConsistency {
            methods: paired.iter().map(|p| p.0.clone()).collect(),
            spearman: spearman(&a, &o).ok(),
            pearson: pearson(&a, &o).ok(),
            auroc: a,
            community_aware_oscd: paired.iter().map(|p| p.2).collect(),
        }
    });
    match &rank {
        Some(r) => {
            tr.rows.push(vec!["methods".into(), r.methods.len().to_string()]);
            tr.rows.push(vec!["spearman".into(), opt(r.spearman)]);
            tr.rows.push(vec!["pearson".into(), opt(r.pearson)]);
        }
        None => tr.notes.push("needs at least 2 methods with AUROC and community-aware results".into()),
    }
    tr.write(ctx, "rank_consistency.tsv")?;

    // absorption
    let mut absorption = Vec::new();
    for split in [Split::Val, Split::Test] {
        let mut header = vec!["category".to_string(), "group".to_string(), "n".to_string()];
        header.extend(set.known_classes.iter().cloned());
        let mut ta = Table {
            title: "closed-set absorption (% of category predicted as each known class)",
            header,
            rows: Vec::new(),
            notes: vec![format!("split: {split}")],
        };
        match absorption_matrix(set, table, split) {
            Ok(m) => {
                for r in &m.rows {
                    let mut row = vec![r.category.clone(), r.group.as_str().into(), r.n.to_string()];
                    row.extend(r.percentages.iter().map(|p| format!("{p:.2}")));
                    ta.rows.push(row);
                }
                absorption.push(m);
            }
            Err(e) => ta.notes.push(e.to_string()),
        }
        ta.write(ctx, &format!("absorption_{split}.tsv"))?;
    }

    let summary = Summary {
        provenance: ctx.provenance(),
        methods: &screening,
        strategies: &strategies,
        closed_set: closed,
        recommendations: &recs,
        rank_consistency: rank,
        confidence,
        absorption,
    };
    ctx.write_json(&ctx.path("reports", "summary.json"), &summary)?;
    Ok(())
}
