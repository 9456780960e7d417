//! Batch evaluation and reporting: greedy agent rollouts or baseline
//! registrations over a set of pairs, per-pair JSONL reports, and summary
//! tables (mean, population std, linear-interpolation quartiles).

use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::greedy_action;
use crate::baseline::{register, BaselineConfig};
use crate::dataset::{LoadedPair, TransformParams};
use crate::error::{Error, Result};
use crate::imgcore::warp;
use crate::neural::QNetwork;
use crate::rlenv::{run_episode, EnvConfig, RegistrationEnv, RewardForm, RewardMode};
use crate::simkit::{correlation, nmi};

/// One evaluated pair. `score` is the episode's cumulative reward and is
/// null for methods that have no episodes (the baseline); for the baseline,
/// `steps` counts metric evaluations.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EpisodeReport {
    pub pair_id: String,
    pub method: String,
    pub nmi: f64,
    pub rho: f64,
    pub score: Option<f64>,
    pub steps: usize,
    pub wall_s: f64,
    pub final_t: TransformParams,
    pub truth_t: Option<TransformParams>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StatSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Quantile by linear interpolation between closest ranks: the value at
/// fractional index p·(n−1) of the sorted sample.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let idx = p * (n - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn summarize_values(values: &[f64]) -> Result<StatSummary> {
    if values.is_empty() {
        return Err(Error::Input("nothing to summarize".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in summary input".into()));
    }
    // Moments over the sorted sample, so the summary depends only on the
    // multiset of values, not their order.
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(StatSummary {
        mean,
        std: var.sqrt(),
        q25: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q75: quantile(&sorted, 0.75),
    })
}

/// The per-pair quantities a summary covers, in report order.
pub const SUMMARY_METRICS: [&str; 4] = ["nmi", "rho", "score", "wall_s"];

fn metric_values(reports: &[EpisodeReport], metric: &str) -> Option<Vec<f64>> {
    let values: Vec<f64> = match metric {
        "nmi" => reports.iter().map(|r| r.nmi).collect(),
        "rho" => reports.iter().map(|r| r.rho).collect(),
        "score" => reports.iter().filter_map(|r| r.score).collect(),
        "wall_s" => reports.iter().map(|r| r.wall_s).collect(),
        _ => return None,
    };
    if values.is_empty() {
        None
    } else {
        Some(values)
    }
}

pub fn summarize(reports: &[EpisodeReport], metric: &str) -> Result<StatSummary> {
    if reports.is_empty() {
        return Err(Error::Input("no reports to summarize".into()));
    }
    match metric_values(reports, metric) {
        Some(values) => summarize_values(&values),
        None if SUMMARY_METRICS.contains(&metric) => {
            Err(Error::Input(format!("no values for metric {:?}", metric)))
        }
        None => Err(Error::Input(format!(
            "unknown metric {:?}; expected one of {:?}",
            metric, SUMMARY_METRICS
        ))),
    }
}

/// Methods in first-appearance order with their reports.
fn group_by_method(reports: &[EpisodeReport]) -> Vec<(String, Vec<&EpisodeReport>)> {
    let mut groups: Vec<(String, Vec<&EpisodeReport>)> = Vec::new();
    for r in reports {
        match groups.iter_mut().find(|(m, _)| *m == r.method) {
            Some((_, list)) => list.push(r),
            None => groups.push((r.method.clone(), vec![r])),
        }
    }
    groups
}

fn summary_rows(reports: &[EpisodeReport]) -> Result<Vec<(String, &'static str, StatSummary)>> {
    if reports.is_empty() {
        return Err(Error::Input("no reports to summarize".into()));
    }
    let mut rows = Vec::new();
    for (method, group) in group_by_method(reports) {
        let owned: Vec<EpisodeReport> = group.into_iter().cloned().collect();
        for metric in SUMMARY_METRICS {
            if let Some(values) = metric_values(&owned, metric) {
                rows.push((method.clone(), metric, summarize_values(&values)?));
            }
        }
    }
    Ok(rows)
}

/// `method,metric,mean,std,q25,median,q75` with three-decimal numbers, one
/// row per method and metric (score omitted where absent).
pub fn summary_csv(reports: &[EpisodeReport]) -> Result<String> {
    let mut out = String::from("method,metric,mean,std,q25,median,q75\n");
    for (method, metric, s) in summary_rows(reports)? {
        out.push_str(&format!(
            "{},{},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
            method, metric, s.mean, s.std, s.q25, s.median, s.q75
        ));
    }
    Ok(out)
}

/// The same numbers as [`summary_csv`] as an aligned text table.
pub fn summary_text(reports: &[EpisodeReport]) -> Result<String> {
    let rows = summary_rows(reports)?;
    let header = ["method", "metric", "mean", "std", "q25", "median", "q75"];
    let mut cells: Vec<[String; 7]> = vec![header.map(str::to_string)];
    for (method, metric, s) in rows {
        cells.push([
            method,
            metric.to_string(),
            format!("{:.3}", s.mean),
            format!("{:.3}", s.std),
            format!("{:.3}", s.q25),
            format!("{:.3}", s.median),
            format!("{:.3}", s.q75),
        ]);
    }
    let mut widths = [0usize; 7];
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for row in &cells {
        let mut line = String::new();
        for (i, (c, w)) in row.iter().zip(widths).enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{:<width$}", c, width = w));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    Ok(out)
}

fn check_frames(pair: &LoadedPair) -> Result<()> {
    if pair.fixed.height() != pair.moving.height() || pair.fixed.width() != pair.moving.width() {
        return Err(Error::Dimension(format!(
            "pair {:?}: fixed is {}x{}, moving is {}x{}",
            pair.pair_id,
            pair.fixed.height(),
            pair.fixed.width(),
            pair.moving.height(),
            pair.moving.width()
        )));
    }
    Ok(())
}

/// Runs independent per-pair jobs, sequentially for `workers` = 1 and on a
/// dedicated pool otherwise, preserving input order either way.
fn run_jobs<T: Send, F: Fn(usize) -> Result<T> + Send + Sync>(
    n: usize,
    workers: usize,
    job: F,
) -> Result<Vec<T>> {
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    if workers == 1 {
        (0..n).map(job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::State(format!("cannot build worker pool: {}", e)))?;
        pool.install(|| (0..n).into_par_iter().map(job).collect())
    }
}

/// Greedy rollouts of a trained network over `pairs`, one report per pair
/// in pair order. The environment always scores with the signed
/// unsupervised reward so scores stay comparable across methods and
/// training modes. `measure_wall` = false pins wall_s to zero for
/// reproducible output.
pub fn evaluate_agent(
    pairs: &[LoadedPair],
    net: &QNetwork<f32>,
    env_cfg: &EnvConfig,
    method: &str,
    workers: usize,
    measure_wall: bool,
) -> Result<Vec<EpisodeReport>> {
    let ncfg = net.config();
    run_jobs(pairs.len(), workers, |i| {
        let pair = &pairs[i];
        check_frames(pair)?;
        if pair.fixed.height() != ncfg.input_h
            || pair.fixed.width() != ncfg.input_w
            || env_cfg.history != ncfg.in_channels
        {
            return Err(Error::Format(format!(
                "pair {:?} is {}x{} with history {}, network expects {}x{}x{}",
                pair.pair_id,
                pair.fixed.height(),
                pair.fixed.width(),
                env_cfg.history,
                ncfg.input_h,
                ncfg.input_w,
                ncfg.in_channels
            )));
        }
        let env = RegistrationEnv::new(
            env_cfg.clone(),
            pair.fixed.clone(),
            pair.moving.clone(),
            RewardMode::Unsupervised { form: RewardForm::Signed },
        )?;
        let rollout = run_episode(&env, |state| greedy_action(net, state))?;
        Ok(EpisodeReport {
            pair_id: pair.pair_id.clone(),
            method: method.to_string(),
            nmi: rollout.nmi,
            rho: rollout.rho,
            score: Some(rollout.score),
            steps: rollout.steps,
            wall_s: if measure_wall { rollout.wall_s } else { 0.0 },
            final_t: rollout.transform.into(),
            truth_t: pair.truth.map(Into::into),
        })
    })
}

/// Pattern-search registration over `pairs`, one report per pair in pair
/// order. `steps` carries the evaluation count and `score` is null.
pub fn evaluate_baseline(
    pairs: &[LoadedPair],
    cfg: &BaselineConfig,
    workers: usize,
    measure_wall: bool,
) -> Result<Vec<EpisodeReport>> {
    run_jobs(pairs.len(), workers, |i| {
        let pair = &pairs[i];
        check_frames(pair)?;
        let started = std::time::Instant::now();
        let result = register(&pair.fixed, &pair.moving, cfg)?;
        let wall = started.elapsed().as_secs_f64();
        let aligned = warp(&pair.moving, &result.transform);
        Ok(EpisodeReport {
            pair_id: pair.pair_id.clone(),
            method: "baseline".to_string(),
            nmi: nmi(&pair.fixed, &aligned, cfg.similarity.nmi_bins)?,
            rho: correlation(&pair.fixed, &aligned)?,
            score: None,
            steps: result.evals,
            wall_s: if measure_wall { wall } else { 0.0 },
            final_t: result.transform.into(),
            truth_t: pair.truth.map(Into::into),
        })
    })
}

pub fn write_reports(path: &Path, reports: &[EpisodeReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in reports {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::Data(format!("cannot serialize report {}: {}", r.pair_id, e)))?;
        writeln!(f, "{}", line)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_reports(path: &Path) -> Result<Vec<EpisodeReport>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EpisodeReport = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("report line {}: {}", i + 1, e)))?;
        out.push(r);
    }
    Ok(out)
}

pub struct Comparison {
    /// Rows = methods, columns = metrics as mean ± std.
    pub text: String,
    /// Same rows as [`summary_csv`], methods stacked.
    pub csv: String,
}

/// Side-by-side comparison of report sets covering identical pairs. Each
/// set must hold exactly one method.
pub fn compare(sets: &[Vec<EpisodeReport>]) -> Result<Comparison> {
    if sets.len() < 2 {
        return Err(Error::Input(format!(
            "comparison needs at least 2 report sets, got {}",
            sets.len()
        )));
    }
    let mut methods = Vec::new();
    for set in sets {
        let first = set
            .first()
            .ok_or_else(|| Error::Input("empty report set in comparison".into()))?;
        if let Some(other) = set.iter().find(|r| r.method != first.method) {
            return Err(Error::Input(format!(
                "report set mixes methods {:?} and {:?}",
                first.method, other.method
            )));
        }
        methods.push(first.method.clone());
    }

    let id_set = |set: &[EpisodeReport]| -> std::collections::BTreeSet<String> {
        set.iter().map(|r| r.pair_id.clone()).collect()
    };
    let reference = id_set(&sets[0]);
    for (set, method) in sets[1..].iter().zip(&methods[1..]) {
        let ids = id_set(set);
        if ids != reference {
            let offender = reference
                .symmetric_difference(&ids)
                .next()
                .expect("unequal sets differ somewhere");
            return Err(Error::Input(format!(
                "pair sets differ between {:?} and {:?}: {:?} is not in both",
                methods[0], method, offender
            )));
        }
    }

    let all: Vec<EpisodeReport> = sets.iter().flatten().cloned().collect();
    let csv = summary_csv(&all)?;

    let mut cells: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["method".to_string()];
    header.extend(SUMMARY_METRICS.iter().map(|m| m.to_string()));
    cells.push(header);
    for set in sets {
        let mut row = vec![set[0].method.clone()];
        for metric in SUMMARY_METRICS {
            row.push(match metric_values(set, metric) {
                Some(values) => {
                    let s = summarize_values(&values)?;
                    format!("{:.3} ± {:.3}", s.mean, s.std)
                }
                None => "-".to_string(),
            });
        }
        cells.push(row);
    }
    let cols = cells[0].len();
    let mut widths = vec![0usize; cols];
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut text = String::new();
    for row in &cells {
        let mut line = String::new();
        for (i, (c, w)) in row.iter().zip(&widths).enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            let pad = w - c.chars().count();
            line.push_str(c);
            line.push_str(&" ".repeat(pad));
        }
        text.push_str(line.trim_end());
        text.push('\n');
    }
    Ok(Comparison { text, csv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::tiny_net_config;
    use crate::imgcore::{Image2D, RigidTransform2D};
    use crate::simkit::SimilarityConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quartiles_match_the_hand_example() {
        let s = summarize_values(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.q25, 1.75);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q75, 3.25);
        let expected_std = (1.25f64).sqrt();
        assert!((s.std - expected_std).abs() < 1e-15);
    }

    #[test]
    fn single_value_collapses_all_statistics() {
        let s = summarize_values(&[7.25]).unwrap();
        assert_eq!(
            (s.mean, s.std, s.q25, s.median, s.q75),
            (7.25, 0.0, 7.25, 7.25, 7.25)
        );
    }

    #[test]
    fn summary_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut values: Vec<f64> = (0..101).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let a = summarize_values(&values).unwrap();
        values.reverse();
        values.swap(10, 60);
        let b = summarize_values(&values).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_and_std_match_a_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..57).map(|_| rng.gen_range(-3.0..7.0)).collect();
        let s = summarize_values(&values).unwrap();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.std - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_are_input_errors() {
        assert!(matches!(summarize_values(&[]), Err(Error::Input(_))));
        assert!(matches!(summarize(&[], "nmi"), Err(Error::Input(_))));
    }

    fn textured_pair(seed: u64, shift: (f64, f64)) -> LoadedPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image2D::new(16, 16);
        for y in 3..13 {
            for x in 3..13 {
                let fy = (y as f32 - 7.5) / 5.0;
                let fx = (x as f32 - 7.5) / 5.0;
                let envl = (-(fx * fx + fy * fy)).exp();
                img.set(y, x, envl * (1.0 + 0.5 * rng.gen_range(-1.0f32..1.0)));
            }
        }
        let truth = RigidTransform2D::new(shift.0, shift.1, 0.0);
        LoadedPair {
            pair_id: format!("p{}", seed),
            fixed: img.clone(),
            moving: warp(&img, &truth),
            truth: Some(truth),
        }
    }

    fn small_env_cfg() -> EnvConfig {
        EnvConfig {
            epsilon_d: 0.05,
            bonus: 10.0,
            max_steps: 12,
            history: 4,
            step_translation: 1.0,
            step_rotation: 1.0,
            param_bound: 5.0,
            similarity: SimilarityConfig::default(),
        }
    }

    #[test]
    fn agent_evaluation_reports_every_pair_in_order() {
        let pairs = vec![
            textured_pair(1, (1.0, 0.0)),
            textured_pair(2, (-1.0, 1.0)),
            textured_pair(3, (0.0, -2.0)),
        ];
        let net = QNetwork::<f32>::new(tiny_net_config(false), 0).unwrap();
        let reports =
            evaluate_agent(&pairs, &net, &small_env_cfg(), "agent-dqn", 1, false).unwrap();
        assert_eq!(reports.len(), 3);
        for (r, p) in reports.iter().zip(&pairs) {
            assert_eq!(r.pair_id, p.pair_id);
            assert_eq!(r.method, "agent-dqn");
            assert!(r.score.is_some());
            assert!(r.nmi.is_finite() && r.rho.is_finite());
            assert_eq!(r.wall_s, 0.0);
            assert_eq!(r.truth_t.map(|t| t.tx), p.truth.map(|t| t.tx));
        }

        let again = evaluate_agent(&pairs, &net, &small_env_cfg(), "agent-dqn", 1, false).unwrap();
        assert_eq!(reports, again);
        let parallel =
            evaluate_agent(&pairs, &net, &small_env_cfg(), "agent-dqn", 3, false).unwrap();
        assert_eq!(reports, parallel);
    }

    #[test]
    fn agent_evaluation_rejects_wrong_frame_size() {
        let mut pair = textured_pair(1, (1.0, 0.0));
        pair.fixed = Image2D::new(20, 20);
        pair.moving = Image2D::new(20, 20);
        let net = QNetwork::<f32>::new(tiny_net_config(false), 0).unwrap();
        match evaluate_agent(&[pair], &net, &small_env_cfg(), "agent-dqn", 1, false) {
            Err(Error::Format(msg)) => assert!(msg.contains("p1"), "{}", msg),
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }

    fn quick_baseline_cfg() -> BaselineConfig {
        BaselineConfig { starts: 4, max_evals: 60, ..BaselineConfig::default() }
    }

    #[test]
    fn baseline_evaluation_has_null_scores_and_eval_counts() {
        let pairs = vec![textured_pair(4, (2.0, -1.0)), textured_pair(5, (0.0, 1.0))];
        let reports = evaluate_baseline(&pairs, &quick_baseline_cfg(), 1, false).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert_eq!(r.method, "baseline");
            assert_eq!(r.score, None);
            assert!(r.steps > 0);
        }
        let line = serde_json::to_string(&reports[0]).unwrap();
        assert!(line.contains("\"score\":null"), "{}", line);
    }

    #[test]
    fn report_files_round_trip() {
        let pairs = vec![textured_pair(6, (1.0, 1.0))];
        let reports = evaluate_baseline(&pairs, &quick_baseline_cfg(), 1, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.jsonl");
        write_reports(&path, &reports).unwrap();
        assert_eq!(read_reports(&path).unwrap(), reports);
    }

    fn fake_report(pair_id: &str, method: &str, nmi: f64, score: Option<f64>) -> EpisodeReport {
        EpisodeReport {
            pair_id: pair_id.to_string(),
            method: method.to_string(),
            nmi,
            rho: nmi * 0.9,
            score,
            steps: 5,
            wall_s: 0.0,
            final_t: TransformParams { tx: 0.0, ty: 0.0, theta_deg: 0.0 },
            truth_t: None,
        }
    }

    #[test]
    fn summary_tables_share_numbers_and_skip_absent_scores() {
        let reports = vec![
            fake_report("a", "baseline", 0.8, None),
            fake_report("b", "baseline", 0.6, None),
        ];
        let csv = summary_csv(&reports).unwrap();
        let text = summary_text(&reports).unwrap();
        assert!(csv.starts_with("method,metric,mean,std,q25,median,q75\n"));
        assert!(csv.contains("baseline,nmi,0.700,0.100,0.650,0.700,0.750"));
        assert!(!csv.contains("score"), "{}", csv);
        for number in ["0.700", "0.100", "0.650", "0.750"] {
            assert!(text.contains(number), "{} missing from:\n{}", number, text);
        }
    }

    #[test]
    fn comparison_requires_matching_pair_sets() {
        let a = vec![fake_report("a", "agent-dueling", 0.9, Some(3.0))];
        let b = vec![fake_report("b", "baseline", 0.7, None)];
        match compare(&[a, b]) {
            Err(Error::Input(msg)) => {
                assert!(msg.contains('a') || msg.contains('b'), "{}", msg)
            }
            other => panic!("expected input error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn comparison_renders_methods_by_metrics() {
        let agent = vec![
            fake_report("a", "agent-dueling", 0.9, Some(3.0)),
            fake_report("b", "agent-dueling", 0.8, Some(2.0)),
        ];
        let base = vec![
            fake_report("a", "baseline", 0.7, None),
            fake_report("b", "baseline", 0.5, None),
        ];
        let cmp = compare(&[agent.clone(), base]).unwrap();
        let lines: Vec<&str> = cmp.text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("method"));
        assert!(lines[1].starts_with("agent-dueling"));
        assert!(lines[2].starts_with("baseline"));
        assert!(lines[2].contains('-'), "null score column should render as -");
        assert!(cmp.csv.contains("agent-dueling,score,2.500,0.500,2.250,2.500,2.750"));

        let self_cmp = compare(&[agent.clone(), agent]).unwrap();
        let l: Vec<&str> = self_cmp.text.lines().collect();
        assert_eq!(l[1], l[2]);
    }

    #[test]
    fn comparison_needs_two_sets() {
        let a = vec![fake_report("a", "agent-dqn", 0.9, Some(1.0))];
        assert!(matches!(compare(&[a]), Err(Error::Input(_))));
    }
}
