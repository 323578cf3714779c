//! Variants, per-seed runs, and the report they produce.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::phases::{
    evaluate, phase1_mine, phase2_rescore, phase3_robust_retrain, train_oracle, Ablation, PhaseReport,
    PseudoLabelSet, RetrainOptions, SeedData,
};
use crate::detector::DetectorParams;
use crate::error::{Error, Result};
use crate::eval::PseudoLabelQuality;
use crate::fusion::AlphaSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SourceOnly,
    PseudoLabel,
    OursCls,
    OursClsBox,
    OursFull,
    OracleTarget,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::SourceOnly,
        Variant::PseudoLabel,
        Variant::OursCls,
        Variant::OursClsBox,
        Variant::OursFull,
        Variant::OracleTarget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SourceOnly => "source_only",
            Variant::PseudoLabel => "pseudo_label",
            Variant::OursCls => "ours_cls",
            Variant::OursClsBox => "ours_cls_box",
            Variant::OursFull => "ours_full",
            Variant::OracleTarget => "oracle_target",
        }
    }

    /// Parses a comma-separated list, keeping the given order and dropping repeats.
    pub fn parse_list(text: &str) -> Result<Vec<Variant>> {
        let mut out = Vec::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let v: Variant = part.parse()?;
            if !out.contains(&v) {
                out.push(v);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("empty variant list".into()));
        }
        Ok(out)
    }

    /// Phase-3 settings, or `None` for variants without retraining.
    /// `ours_full` takes its corrections from the config's `robust` table.
    pub fn retrain_options(self, config: &PipelineConfig) -> Option<RetrainOptions> {
        let base = RetrainOptions::from_config(config);
        let ablation = match self {
            Variant::SourceOnly | Variant::OracleTarget => return None,
            Variant::PseudoLabel => {
                return Some(RetrainOptions {
                    ablation: Ablation::NONE,
                    alpha: AlphaSchedule::constant(0.0),
                    ..base
                })
            }
            Variant::OursCls => Ablation {
                cls_cor: true,
                box_r: false,
                fn_cor: false,
            },
            Variant::OursClsBox => Ablation {
                cls_cor: true,
                box_r: true,
                fn_cor: false,
            },
            Variant::OursFull => base.ablation,
        };
        Some(RetrainOptions { ablation, ..base })
    }

    fn uses_aux(self) -> bool {
        matches!(self, Variant::OursCls | Variant::OursClsBox | Variant::OursFull)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: Variant,
    pub seed: u64,
    pub map: f64,
    pub per_class_ap: Vec<f64>,
    /// Quality of the phase-1 pseudo-labels this variant trained on.
    pub pseudo_labels: Option<PseudoLabelQuality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub variant: Variant,
    pub map: f64,
    pub per_class_ap: Vec<f64>,
    pub num_seeds: usize,
}

/// Everything one seed produced, kept for inspection and tests.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub params: Vec<(Variant, DetectorParams)>,
    pub pseudo_labels: PseudoLabelSet,
    pub phase_reports: Vec<PhaseReport>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub num_classes: usize,
    pub rows: Vec<ReportRow>,
    pub means: Vec<MeanRow>,
    pub runs: Vec<SeedRun>,
}

/// Runs every variant on one seed. Phase 1 and phase 2 are shared between
/// the variants that need them.
pub fn run_seed(config: &PipelineConfig, variants: &[Variant], seed: u64) -> Result<(Vec<ReportRow>, SeedRun)> {
    let started = Instant::now();
    let data = SeedData::generate(config, seed)?;
    let needs_phase1 = variants.iter().any(|&v| v != Variant::OracleTarget);
    let needs_aux = variants.iter().any(|v| v.uses_aux());

    let mut rows = Vec::new();
    let mut params_out = Vec::new();
    let mut phase_reports = Vec::new();
    let mut pseudo = PseudoLabelSet::default();
    let mut quality = None;
    let mut phase1_params = None;
    if needs_phase1 {
        let (p, set, report) = phase1_mine(config, &data)?;
        log::info!(
            "seed {seed}: phase 1 done in {:.2}s, {} pseudo-labels",
            report.seconds,
            set.len()
        );
        quality = report.quality;
        phase_reports.push(report);
        pseudo = set;
        phase1_params = Some(p);
    }
    let rescored = if needs_aux {
        let (set, report) = phase2_rescore(&pseudo, config, &data)?;
        phase_reports.push(report);
        Some(set)
    } else {
        None
    };

    for &variant in variants {
        let params = match variant {
            Variant::SourceOnly => phase1_params.clone().expect("phase 1 ran"),
            Variant::OracleTarget => train_oracle(config, &data)?,
            v => {
                let options = v.retrain_options(config).expect("retraining variant");
                let labels = if v.uses_aux() {
                    rescored.as_ref().expect("phase 2 ran")
                } else {
                    &pseudo
                };
                let (p, report) = phase3_robust_retrain(labels, config, &data, &options, phase1_params.as_ref())?;
                phase_reports.push(report);
                p
            }
        };
        let eval = evaluate(&params, config, &data);
        log::info!("seed {seed}: {variant} mAP {:.4}", eval.map);
        rows.push(ReportRow {
            variant,
            seed,
            map: eval.map,
            per_class_ap: eval.per_class,
            pseudo_labels: if variant == Variant::SourceOnly || variant == Variant::OracleTarget {
                None
            } else {
                quality
            },
        });
        params_out.push((variant, params));
    }
    Ok((
        rows,
        SeedRun {
            seed,
            params: params_out,
            pseudo_labels: pseudo,
            phase_reports,
            seconds: started.elapsed().as_secs_f64(),
        },
    ))
}

/// Runs `variants` over `seeds`. Rows are sorted by (variant, seed).
pub fn run_experiment(config: &PipelineConfig, variants: &[Variant], seeds: &[u64]) -> Result<ExperimentReport> {
    config.validate()?;
    if variants.is_empty() {
        return Err(Error::Config("no variants requested".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("no seeds requested".into()));
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &seed in seeds {
        let (r, run) = run_seed(config, variants, seed)?;
        rows.extend(r);
        runs.push(run);
    }
    rows.sort_by(|a, b| a.variant.cmp(&b.variant).then(a.seed.cmp(&b.seed)));
    let mut order: Vec<Variant> = variants.to_vec();
    order.sort();
    let means = order
        .iter()
        .map(|&variant| {
            let mine: Vec<&ReportRow> = rows.iter().filter(|r| r.variant == variant).collect();
            let n = mine.len() as f64;
            let classes = mine[0].per_class_ap.len();
            MeanRow {
                variant,
                map: mine.iter().map(|r| r.map).sum::<f64>() / n,
                per_class_ap: (0..classes)
                    .map(|c| mine.iter().map(|r| r.per_class_ap[c]).sum::<f64>() / n)
                    .collect(),
                num_seeds: mine.len(),
            }
        })
        .collect();
    Ok(ExperimentReport {
        num_classes: config.world.num_classes,
        rows,
        means,
        runs,
    })
}

impl ExperimentReport {
    pub fn mean_map(&self, variant: Variant) -> Option<f64> {
        self.means.iter().find(|m| m.variant == variant).map(|m| m.map)
    }

    pub fn per_seed_map(&self, variant: Variant) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| (r.seed, r.map))
            .collect()
    }

    /// One row per (variant, seed) followed by one `mean` row per variant.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,map");
        for c in 1..=self.num_classes {
            out.push_str(&format!(",ap_class{c}"));
        }
        out.push_str(",pl_total,pl_true_positives,pl_false_positives,pl_false_negatives,pl_class_accuracy,pl_mean_iou\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.6}", r.variant, r.seed, r.map));
            for ap in &r.per_class_ap {
                out.push_str(&format!(",{ap:.6}"));
            }
            match &r.pseudo_labels {
                Some(q) => out.push_str(&format!(
                    ",{},{},{},{},{:.6},{:.6}\n",
                    q.total, q.true_positives, q.false_positives, q.false_negatives, q.class_accuracy, q.mean_iou
                )),
                None => out.push_str(",,,,,,\n"),
            }
        }
        for m in &self.means {
            out.push_str(&format!("{},mean,{:.6}", m.variant, m.map));
            for ap in &m.per_class_ap {
                out.push_str(&format!(",{ap:.6}"));
            }
            out.push_str(",,,,,,\n");
        }
        out
    }

    /// Methods as rows with their correction flags and mean AP in points.
    pub fn ablation_table(&self) -> String {
        let mut out = String::from("method,cls_cor,box_r,fn_cor,ap\n");
        for m in &self.means {
            let (cls, bx, fnc) = match m.variant {
                Variant::OursCls => ("x", "", ""),
                Variant::OursClsBox => ("x", "x", ""),
                Variant::OursFull => ("x", "x", "x"),
                _ => ("", "", ""),
            };
            out.push_str(&format!("{},{cls},{bx},{fnc},{:.2}\n", m.variant, 100.0 * m.map));
        }
        out
    }

    pub fn summary(&self) -> Summary {
        let mean = |v| self.mean_map(v);
        let chain = [
            Variant::SourceOnly,
            Variant::PseudoLabel,
            Variant::OursCls,
            Variant::OursClsBox,
            Variant::OursFull,
        ];
        let present: Vec<(Variant, f64)> = chain.iter().filter_map(|&v| mean(v).map(|m| (v, m))).collect();
        let ordering_holds = present.windows(2).all(|w| w[1].1 >= w[0].1);
        let oracle_max_seeds = mean(Variant::OracleTarget).map(|_| {
            self.runs
                .iter()
                .filter(|run| {
                    let of = |v: Variant| self.rows.iter().find(|r| r.seed == run.seed && r.variant == v).map(|r| r.map);
                    let oracle = of(Variant::OracleTarget).unwrap_or(f64::NEG_INFINITY);
                    Variant::ALL
                        .iter()
                        .filter(|&&v| v != Variant::OracleTarget)
                        .filter_map(|&v| of(v))
                        .all(|m| oracle >= m)
                })
                .count()
        });
        Summary {
            variants: self
                .means
                .iter()
                .map(|m| VariantSummary {
                    variant: m.variant,
                    mean_map: m.map,
                    per_seed: self.per_seed_map(m.variant).into_iter().map(|(seed, map)| SeedMap { seed, map }).collect(),
                })
                .collect(),
            ordering_holds,
            oracle_max_seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMap {
    pub seed: u64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub mean_map: f64,
    pub per_seed: Vec<SeedMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub variants: Vec<VariantSummary>,
    /// Mean AP non-decreasing along source_only, pseudo_label, ours_cls,
    /// ours_cls_box, ours_full (over the variants that ran).
    pub ordering_holds: bool,
    /// Seeds on which oracle_target is at least every other variant.
    pub oracle_max_seeds: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("ours_best".parse::<Variant>(), Err(Error::UnknownVariant(s)) if s == "ours_best"));
    }

    #[test]
    fn parse_list_dedups_and_rejects_unknown() {
        assert_eq!(
            Variant::parse_list("ours_full, source_only,ours_full").unwrap(),
            vec![Variant::OursFull, Variant::SourceOnly]
        );
        assert!(Variant::parse_list("source_only,bogus").is_err());
        assert!(Variant::parse_list(" , ").is_err());
    }

    #[test]
    fn pseudo_label_is_uncorrected_with_zero_alpha() {
        let cfg = PipelineConfig::default();
        let o = Variant::PseudoLabel.retrain_options(&cfg).unwrap();
        assert_eq!(o.ablation, Ablation::NONE);
        assert_eq!(o.alpha.alpha_at(0), 0.0);
        assert_eq!(o.alpha.alpha_at(10_000), 0.0);
        assert!(Variant::SourceOnly.retrain_options(&cfg).is_none());
        assert_eq!(Variant::OursFull.retrain_options(&cfg).unwrap().ablation, Ablation::FULL);
    }
}
