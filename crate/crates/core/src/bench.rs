//! Domain-balance comparison between hierarchical instance mixing and class
//! mixing over many seeded episodes.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{tags, RngState};
use crate::synth::{
    run_pipeline_episode, EpisodeSettings, MixStrategy, MockSegmenterConfig, SceneConfig,
    ScenePair, NUM_CLASSES,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchConfig {
    pub source: SceneConfig,
    pub target: SceneConfig,
    pub segmenter: MockSegmenterConfig,
    pub settings: EpisodeSettings,
}

impl Default for BenchConfig {
    /// Rural source scenes (dominated by agricultural cover) mixed onto urban
    /// target scenes.
    fn default() -> Self {
        Self {
            source: SceneConfig::rural(),
            target: SceneConfig::urban(),
            segmenter: MockSegmenterConfig::default(),
            settings: EpisodeSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub strategy: MixStrategy,
    pub source_fraction: f64,
    pub class_shares: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BalanceStats {
    pub strategy: MixStrategy,
    pub fractions: Vec<f64>,
    pub mean: f64,
    /// Mean of `|fraction - 0.5|`.
    pub mean_abs_deviation: f64,
    /// Per class, the mean share of pixels pasted from the source.
    pub class_shares: Vec<f64>,
}

impl BalanceStats {
    fn from_records(strategy: MixStrategy, records: &[&TrialRecord]) -> Self {
        let n = records.len() as f64;
        let fractions: Vec<f64> = records.iter().map(|r| r.source_fraction).collect();
        let mean = fractions.iter().sum::<f64>() / n;
        let mean_abs_deviation = fractions.iter().map(|f| (f - 0.5).abs()).sum::<f64>() / n;
        let width = records.first().map_or(0, |r| r.class_shares.len());
        let class_shares = (0..width)
            .map(|c| records.iter().map(|r| r.class_shares[c]).sum::<f64>() / n)
            .collect();
        Self {
            strategy,
            fractions,
            mean,
            mean_abs_deviation,
            class_shares,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub himix: BalanceStats,
    pub classmix: BalanceStats,
    /// Ordered by trial, then classmix before himix.
    pub records: Vec<TrialRecord>,
}

impl BenchReport {
    /// CSV with header `trial,strategy,source_fraction,share_c0,...`, LF
    /// line endings, six decimals.
    pub fn to_csv(&self) -> String {
        let width = self
            .records
            .first()
            .map_or(NUM_CLASSES as usize, |r| r.class_shares.len());
        let mut out = String::from("trial,strategy,source_fraction");
        for c in 0..width {
            out.push_str(&format!(",share_c{c}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{:.6}", r.trial, r.strategy.name(), r.source_fraction));
            for s in &r.class_shares {
                out.push_str(&format!(",{s:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// State for trial `trial` under `master_seed`.
pub fn trial_rng(master_seed: u64, trial: usize) -> RngState {
    RngState::new(master_seed).derive(tags::TRIAL).derive(trial as u64)
}

fn run_trial(strategy: MixStrategy, cfg: &BenchConfig, rng: &RngState) -> Result<(f64, Vec<f64>)> {
    let pair = ScenePair::generate(&cfg.source, &cfg.target, rng)?;
    let report = run_pipeline_episode(&pair, &cfg.segmenter, strategy, &cfg.settings, rng)?;
    Ok((report.source_fraction, report.class_shares))
}

/// Source pixel fraction of one full mixing episode.
pub fn balance_trial(strategy: MixStrategy, cfg: &BenchConfig, rng: &RngState) -> Result<f64> {
    run_trial(strategy, cfg, rng).map(|(fraction, _)| fraction)
}

/// Runs `trials` paired trials (both strategies see the same scene pair and
/// seed) on up to `parallelism` threads. The report does not depend on the
/// thread count.
pub fn bench_compare(
    trials: usize,
    cfg: &BenchConfig,
    master_seed: u64,
    parallelism: usize,
) -> Result<BenchReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("at least one trial is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;

    let strategies = [MixStrategy::Classmix, MixStrategy::Himix];
    let records: Vec<TrialRecord> = pool.install(|| {
        (0..trials * strategies.len())
            .into_par_iter()
            .map(|job| {
                let (trial, strategy) = (job / strategies.len(), strategies[job % strategies.len()]);
                let (source_fraction, class_shares) =
                    run_trial(strategy, cfg, &trial_rng(master_seed, trial))?;
                Ok(TrialRecord {
                    trial,
                    strategy,
                    source_fraction,
                    class_shares,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let pick = |s: MixStrategy| -> Vec<&TrialRecord> {
        records.iter().filter(|r| r.strategy == s).collect()
    };
    Ok(BenchReport {
        himix: BalanceStats::from_records(MixStrategy::Himix, &pick(MixStrategy::Himix)),
        classmix: BalanceStats::from_records(MixStrategy::Classmix, &pick(MixStrategy::Classmix)),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LabelMap;
    use crate::himix::{build_layer_stack, instance_pair, reduce_to_mask};
    use crate::instances::Connectivity;
    use crate::synth::class_shares;

    fn small() -> BenchConfig {
        BenchConfig {
            source: SceneConfig {
                height: 32,
                width: 32,
                ..SceneConfig::rural()
            },
            target: SceneConfig {
                height: 32,
                width: 32,
                ..SceneConfig::urban()
            },
            ..BenchConfig::default()
        }
    }

    #[test]
    fn single_trial_stats() {
        let cfg = small();
        let report = bench_compare(1, &cfg, 3, 1).unwrap();
        let f = balance_trial(MixStrategy::Himix, &cfg, &trial_rng(3, 0)).unwrap();
        assert_eq!(report.himix.fractions, vec![f]);
        assert_eq!(report.himix.mean, f);
        assert_eq!(report.himix.mean_abs_deviation, (f - 0.5).abs());
        assert_eq!(report.records.len(), 2);
    }

    #[test]
    fn fixed_seed_is_repeatable() {
        let cfg = small();
        let rng = trial_rng(9, 4);
        assert_eq!(
            balance_trial(MixStrategy::Classmix, &cfg, &rng).unwrap(),
            balance_trial(MixStrategy::Classmix, &cfg, &rng).unwrap()
        );
    }

    #[test]
    fn single_class_source_classmix_is_all_source() {
        let cfg = BenchConfig {
            source: SceneConfig::empty(32, 32, 0.0),
            ..small()
        };
        assert_eq!(balance_trial(MixStrategy::Classmix, &cfg, &trial_rng(1, 0)).unwrap(), 1.0);
    }

    #[test]
    fn empty_selection_has_zero_fraction() {
        let y_s = LabelMap::new(2, 2, 7, vec![0, 1, 1, 2]).unwrap();
        let y_t = LabelMap::new(2, 2, 7, vec![3, 3, 4, 4]).unwrap();
        let (s, t) = instance_pair(&y_s, &y_t, Connectivity::Four).unwrap();
        let mask = reduce_to_mask(&build_layer_stack(&s, &[], &t).unwrap()).unwrap();
        assert_eq!(mask.source_fraction(), 0.0);
        assert!(class_shares(&mask, &y_s, 7).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parallelism_does_not_change_output() {
        let cfg = small();
        let a = bench_compare(12, &cfg, 42, 1).unwrap();
        let b = bench_compare(12, &cfg, 42, 4).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a, b);
    }

    #[test]
    fn csv_layout() {
        let report = bench_compare(2, &small(), 1, 2).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "trial,strategy,source_fraction,share_c0,share_c1,share_c2,share_c3,share_c4,share_c5,share_c6"
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].starts_with("0,classmix,"));
        assert!(rows[1].starts_with("0,himix,"));
        assert!(rows[2].starts_with("1,classmix,"));
        assert!(!csv.contains('\r'));
        for r in &report.records {
            let sum: f64 = r.class_shares.iter().sum();
            assert!((sum - r.source_fraction).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(bench_compare(0, &small(), 1, 1).is_err());
    }
}
