//! Open-set metrics: cosine trial scoring, adaptive score normalization,
//! EER and minDCF, and comparison-report rendering.
//!
//! EER interpolates linearly between the two threshold sweep points that
//! bracket the FAR/FRR crossing. minDCF enumerates every distinct-score
//! threshold plus the reject-all sentinel, so including the trivial
//! accept-all/reject-all systems caps the normalized cost at 1.

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::numeric::cosine;
use crate::par;
use std::collections::HashMap;

/// Parallel score/label sequences for one trial list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrials {
    scores: Vec<f64>,
    targets: Vec<bool>,
}

impl ScoredTrials {
    pub fn new(scores: Vec<f64>, targets: Vec<bool>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::DegenerateLabels("empty trial list".into()));
        }
        if scores.len() != targets.len() {
            return Err(Error::Domain(format!(
                "{} scores vs {} labels",
                scores.len(),
                targets.len()
            )));
        }
        if !scores.iter().all(|s| s.is_finite()) {
            return Err(Error::NonFinite("trial score".into()));
        }
        Ok(ScoredTrials { scores, targets })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn targets(&self) -> &[bool] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Detection-cost parameters; the normalization divisor is the cost of the
/// better trivial system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl DcfParams {
    pub fn new(p_target: f64, c_miss: f64, c_fa: f64) -> Result<Self> {
        if !(0.0 < p_target && p_target < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "p_target={p_target} outside (0, 1)"
            )));
        }
        if c_miss <= 0.0 || c_fa <= 0.0 {
            return Err(Error::InvalidConfig(
                "c_miss and c_fa must be positive".into(),
            ));
        }
        Ok(DcfParams {
            p_target,
            c_miss,
            c_fa,
        })
    }

    fn divisor(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }
}

/// Cosine-scores every trial against an id -> embedding map.
pub fn score_trials(
    embeddings: &HashMap<String, Vec<f64>>,
    trials: &TrialSet,
) -> Result<ScoredTrials> {
    let scores: Vec<Result<f64>> = par::map_slice(trials.as_slice(), |t| {
        let e = embeddings
            .get(&t.enroll)
            .ok_or_else(|| Error::MissingId(t.enroll.clone()))?;
        let x = embeddings
            .get(&t.test)
            .ok_or_else(|| Error::MissingId(t.test.clone()))?;
        cosine(e, x)
    });
    let scores = scores.into_iter().collect::<Result<Vec<f64>>>()?;
    let targets = trials.iter().map(|t| t.target).collect();
    ScoredTrials::new(scores, targets)
}

/// One operating point of the threshold sweep (accept iff score >= theta).
#[derive(Debug, Clone, Copy)]
struct OperatingPoint {
    threshold: f64,
    far: f64,
    frr: f64,
}

/// Sweep points at every distinct score, plus a reject-all sentinel.
fn sweep(st: &ScoredTrials) -> Result<Vec<OperatingPoint>> {
    let n_target = st.targets.iter().filter(|&&t| t).count();
    let n_nontarget = st.len() - n_target;
    if n_target == 0 || n_nontarget == 0 {
        return Err(Error::DegenerateLabels(format!(
            "{n_target} target and {n_nontarget} non-target trials"
        )));
    }
    let mut target_scores = Vec::with_capacity(n_target);
    let mut nontarget_scores = Vec::with_capacity(n_nontarget);
    for (s, t) in st.scores.iter().zip(&st.targets) {
        if *t {
            target_scores.push(*s);
        } else {
            nontarget_scores.push(*s);
        }
    }
    target_scores.sort_unstable_by(f64::total_cmp);
    nontarget_scores.sort_unstable_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = st.scores.clone();
    thresholds.sort_unstable_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let points = thresholds
        .iter()
        .map(|&theta| {
            // FAR: accepted non-targets; FRR: rejected targets.
            let accepted_nontargets =
                n_nontarget - nontarget_scores.partition_point(|&s| s < theta);
            let rejected_targets = target_scores.partition_point(|&s| s < theta);
            OperatingPoint {
                threshold: theta,
                far: accepted_nontargets as f64 / n_nontarget as f64,
                frr: rejected_targets as f64 / n_target as f64,
            }
        })
        .collect();
    Ok(points)
}

/// Equal error rate and the (interpolated) threshold achieving it.
pub fn eer(st: &ScoredTrials) -> Result<(f64, f64)> {
    let points = sweep(st)?;
    // FAR - FRR starts at 1 (accept everything) and ends at -1; find the
    // first sign change and interpolate between its endpoints.
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = a.far - a.frr;
        let db = b.far - b.frr;
        if da == 0.0 {
            return Ok((a.far, a.threshold));
        }
        if da > 0.0 && db < 0.0 {
            let t = da / (da - db);
            let value = a.far + t * (b.far - a.far);
            let threshold = if b.threshold.is_finite() {
                a.threshold + t * (b.threshold - a.threshold)
            } else {
                a.threshold
            };
            return Ok((value, threshold));
        }
    }
    let last = points.last().expect("sweep is never empty");
    Ok((last.far.max(last.frr), last.threshold))
}

/// Minimum normalized detection cost over all sweep thresholds; ties break
/// toward the lowest threshold.
pub fn min_dcf(st: &ScoredTrials, params: &DcfParams) -> Result<(f64, f64)> {
    DcfParams::new(params.p_target, params.c_miss, params.c_fa)?;
    let points = sweep(st)?;
    let mut best = f64::INFINITY;
    let mut best_threshold = f64::NEG_INFINITY;
    for p in &points {
        let cost =
            params.c_miss * params.p_target * p.frr + params.c_fa * (1.0 - params.p_target) * p.far;
        if cost < best {
            best = cost;
            best_threshold = p.threshold;
        }
    }
    Ok((best / params.divisor(), best_threshold))
}

/// Per-utterance cohort statistics: mean and population standard deviation
/// of the top-N cohort scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortStats {
    pub mean: f64,
    pub std: f64,
}

fn top_n_stats(scores: &mut [f64], top_n: usize) -> CohortStats {
    scores.sort_unstable_by(|a, b| f64::total_cmp(b, a));
    let top = &scores[..top_n];
    let mean = top.iter().sum::<f64>() / top_n as f64;
    let var = top.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / top_n as f64;
    CohortStats {
        mean,
        std: var.sqrt(),
    }
}

/// Adaptive score normalization: each trial score is standardized against
/// the statistics of its enroll- and test-side top-N cohort scores, then
/// the two standardizations are averaged.
pub fn asnorm(
    raw: &ScoredTrials,
    trials: &TrialSet,
    embeddings: &HashMap<String, Vec<f64>>,
    cohort: &[Vec<f64>],
    top_n: usize,
) -> Result<ScoredTrials> {
    if raw.len() != trials.len() {
        return Err(Error::Domain(format!(
            "{} scores vs {} trials",
            raw.len(),
            trials.len()
        )));
    }
    if top_n < 2 || cohort.len() < top_n {
        return Err(Error::InvalidConfig(format!(
            "need cohort size >= top_n >= 2, got cohort {} and top_n {top_n}",
            cohort.len()
        )));
    }
    // Each utterance's cohort statistics are reused across trials.
    let mut unique_ids: Vec<&str> = trials
        .iter()
        .flat_map(|t| [t.enroll.as_str(), t.test.as_str()])
        .collect();
    unique_ids.sort_unstable();
    unique_ids.dedup();

    let stats: Vec<Result<CohortStats>> = par::map_slice(&unique_ids, |id| {
        let e = embeddings
            .get(*id)
            .ok_or_else(|| Error::MissingId(id.to_string()))?;
        let mut scores = cohort
            .iter()
            .map(|c| cosine(e, c))
            .collect::<Result<Vec<f64>>>()?;
        let s = top_n_stats(&mut scores, top_n);
        if s.std < 1e-12 {
            return Err(Error::ZeroVariance(format!("cohort for utterance {id}")));
        }
        Ok(s)
    });
    let mut by_id: HashMap<&str, CohortStats> = HashMap::with_capacity(unique_ids.len());
    for (id, s) in unique_ids.iter().zip(stats) {
        by_id.insert(id, s?);
    }

    let normalized: Vec<f64> = raw
        .scores
        .iter()
        .zip(trials)
        .map(|(s, t)| {
            let e = by_id[t.enroll.as_str()];
            let x = by_id[t.test.as_str()];
            0.5 * ((s - e.mean) / e.std + (s - x.mean) / x.std)
        })
        .collect();
    ScoredTrials::new(normalized, raw.targets.clone())
}

/// EER/minDCF pair for one trial set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPair {
    pub eer: f64,
    pub min_dcf: f64,
}

/// One system's metrics across trial sets, for comparison tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub system: String,
    pub metrics: Vec<(String, MetricPair)>,
}

/// Renders an aligned text table and a CSV twin. Column order is EER then
/// DCF per trial set, in the order the first row lists them.
pub fn report(rows: &[ReportRow]) -> Result<(String, String)> {
    if rows.is_empty() {
        return Err(Error::Domain("no rows to report".into()));
    }
    let sets: Vec<&str> = rows[0].metrics.iter().map(|(s, _)| s.as_str()).collect();
    for row in rows {
        let row_sets: Vec<&str> = row.metrics.iter().map(|(s, _)| s.as_str()).collect();
        if row_sets != sets {
            return Err(Error::Domain(format!(
                "system '{}' reports trial sets {row_sets:?}, expected {sets:?}",
                row.system
            )));
        }
    }

    let mut header = vec!["system".to_string()];
    for set in &sets {
        header.push(format!("{set}_eer%"));
        header.push(format!("{set}_dcf"));
    }
    let mut table: Vec<Vec<String>> = vec![header];
    for row in rows {
        let mut line = vec![row.system.clone()];
        for (_, m) in &row.metrics {
            line.push(format!("{:.3}", m.eer * 100.0));
            line.push(format!("{:.4}", m.min_dcf));
        }
        table.push(line);
    }

    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for row in &table {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:<width$}", width = widths[c]));
        }
        text.push_str(line.trim_end());
        text.push('\n');
    }

    let mut csv = String::new();
    csv.push_str(&table[0].join(","));
    csv.push('\n');
    for row in &table[1..] {
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    Ok((text, csv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trial;
    use crate::rng::Rng;

    fn st(scores: Vec<f64>, targets: Vec<bool>) -> ScoredTrials {
        ScoredTrials::new(scores, targets).unwrap()
    }

    #[test]
    fn score_trials_identity_antipodal_and_missing() {
        let mut embeddings = HashMap::new();
        embeddings.insert("a".to_string(), vec![0.6, 0.8]);
        embeddings.insert("b".to_string(), vec![0.6, 0.8]);
        embeddings.insert("c".to_string(), vec![-0.6, -0.8]);
        let trials = vec![
            Trial {
                enroll: "a".into(),
                test: "b".into(),
                target: true,
            },
            Trial {
                enroll: "a".into(),
                test: "c".into(),
                target: false,
            },
        ];
        let scored = score_trials(&embeddings, &trials).unwrap();
        assert!((scored.scores()[0] - 1.0).abs() <= 1e-12);
        assert!((scored.scores()[1] + 1.0).abs() <= 1e-12);

        let missing = vec![Trial {
            enroll: "a".into(),
            test: "ghost".into(),
            target: false,
        }];
        let err = score_trials(&embeddings, &missing).unwrap_err();
        assert_eq!(err.category(), "MissingId");
    }

    #[test]
    fn report_handles_many_systems_and_trial_sets() {
        let sets = ["set-o", "set-e", "set-h", "val20", "val21"];
        let rows: Vec<ReportRow> = (0..10)
            .map(|i| ReportRow {
                system: format!("system-{i}"),
                metrics: sets
                    .iter()
                    .map(|s| {
                        (
                            s.to_string(),
                            MetricPair {
                                eer: 0.01 * (i + 1) as f64,
                                min_dcf: 0.1 * (i + 1) as f64,
                            },
                        )
                    })
                    .collect(),
            })
            .collect();
        let (text, csv) = report(&rows).unwrap();
        assert_eq!(text.lines().count(), 11, "header + 10 systems");
        for s in sets {
            assert!(text.lines().next().unwrap().contains(s));
        }
        assert!(csv.lines().all(|l| l.split(',').count() == 1 + 2 * sets.len()));
    }

    /// Brute-force oracle: evaluates FAR/FRR at every midpoint threshold
    /// and the extremes, returning the bracket that must contain the
    /// interpolated EER.
    pub(crate) fn eer_bracket_oracle(st: &ScoredTrials) -> (f64, f64) {
        let mut all: Vec<f64> = st.scores().to_vec();
        all.sort_unstable_by(f64::total_cmp);
        all.dedup();
        let mut candidates = vec![all[0] - 1.0];
        candidates.extend(all.iter().cloned());
        for w in all.windows(2) {
            candidates.push((w[0] + w[1]) / 2.0);
        }
        candidates.push(all[all.len() - 1] + 1.0);
        candidates.sort_unstable_by(f64::total_cmp);

        let n_t = st.targets().iter().filter(|&&t| t).count() as f64;
        let n_n = st.len() as f64 - n_t;
        let rates = |theta: f64| {
            let mut fa = 0.0;
            let mut fr = 0.0;
            for (s, t) in st.scores().iter().zip(st.targets()) {
                if *t && *s < theta {
                    fr += 1.0;
                }
                if !*t && *s >= theta {
                    fa += 1.0;
                }
            }
            (fa / n_n, fr / n_t)
        };
        let mut prev = rates(candidates[0]);
        for &theta in &candidates[1..] {
            let cur = rates(theta);
            if prev.0 - prev.1 == 0.0 {
                return (prev.0, prev.0);
            }
            if (prev.0 - prev.1) > 0.0 && (cur.0 - cur.1) < 0.0 {
                let lo = cur.0.max(prev.1);
                let hi = prev.0.min(cur.1);
                return (lo.min(hi), lo.max(hi));
            }
            prev = cur;
        }
        (prev.0.max(prev.1), prev.0.max(prev.1))
    }

    /// Brute-force minDCF over every midpoint and extreme threshold.
    pub(crate) fn min_dcf_oracle(st: &ScoredTrials, p: &DcfParams) -> f64 {
        let mut all: Vec<f64> = st.scores().to_vec();
        all.sort_unstable_by(f64::total_cmp);
        all.dedup();
        let mut candidates = vec![f64::NEG_INFINITY, f64::INFINITY];
        candidates.extend(all.iter().cloned());
        for w in all.windows(2) {
            candidates.push((w[0] + w[1]) / 2.0);
        }
        let n_t = st.targets().iter().filter(|&&t| t).count() as f64;
        let n_n = st.len() as f64 - n_t;
        let mut best = f64::INFINITY;
        for &theta in &candidates {
            let mut fa = 0.0;
            let mut fr = 0.0;
            for (s, t) in st.scores().iter().zip(st.targets()) {
                if *t && *s < theta {
                    fr += 1.0;
                }
                if !*t && *s >= theta {
                    fa += 1.0;
                }
            }
            let cost = p.c_miss * p.p_target * fr / n_t + p.c_fa * (1.0 - p.p_target) * fa / n_n;
            best = best.min(cost);
        }
        best / (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target))
    }

    #[test]
    fn perfect_separation_gives_zero() {
        let s = st(vec![0.9, 0.8, 0.2, 0.1], vec![true, true, false, false]);
        let (e, _) = eer(&s).unwrap();
        assert_eq!(e, 0.0);
        let p = DcfParams::new(0.01, 1.0, 1.0).unwrap();
        let (d, _) = min_dcf(&s, &p).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn four_trial_hand_case() {
        // Targets {0.9, 0.2}, non-targets {0.8, 0.1}: the step functions
        // cross on the plateau where FAR = FRR = 0.5.
        let s = st(vec![0.9, 0.2, 0.8, 0.1], vec![true, true, false, false]);
        let (e, _) = eer(&s).unwrap();
        let (lo, hi) = eer_bracket_oracle(&s);
        assert!(
            e >= lo - 1e-12 && e <= hi + 1e-12,
            "eer {e} not in [{lo}, {hi}]"
        );
        assert!((e - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn chance_level_scores_give_half() {
        let mut rng = Rng::from_seed(123);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let targets: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
        let s = st(scores, targets);
        let (e, _) = eer(&s).unwrap();
        assert!((e - 0.5).abs() < 0.03, "chance EER {e}");
    }

    #[test]
    fn eer_matches_oracle_bracket_on_random_sets() {
        let mut rng = Rng::from_seed(321);
        for trial in 0..200 {
            let n = 2 + rng.index(200);
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let mut targets: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
            targets[0] = true;
            targets[if n > 1 { 1 } else { 0 }] = false;
            let s = st(scores, targets);
            let (e, _) = eer(&s).unwrap();
            let (lo, hi) = eer_bracket_oracle(&s);
            assert!(
                e >= lo - 1e-12 && e <= hi + 1e-12,
                "trial {trial}: eer {e} outside oracle bracket [{lo}, {hi}]"
            );
        }
    }

    #[test]
    fn min_dcf_matches_oracle_exactly() {
        let mut rng = Rng::from_seed(55);
        let p = DcfParams::new(0.01, 1.0, 1.0).unwrap();
        for trial in 0..100 {
            let n = 2 + rng.index(64);
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let mut targets: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
            targets[0] = true;
            targets[if n > 1 { 1 } else { 0 }] = false;
            let s = st(scores, targets);
            let (d, _) = min_dcf(&s, &p).unwrap();
            let oracle = min_dcf_oracle(&s, &p);
            assert!(
                (d - oracle).abs() <= 1e-12,
                "trial {trial}: mindcf {d} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn identical_scores_give_normalized_cost_one() {
        let s = st(vec![0.5; 6], vec![true, false, true, false, true, false]);
        let p = DcfParams::new(0.05, 1.0, 1.0).unwrap();
        let (d, _) = min_dcf(&s, &p).unwrap();
        assert!((d - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn metrics_invariant_under_increasing_transforms() {
        let mut rng = Rng::from_seed(77);
        let n = 500;
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let mut targets: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
        targets[0] = true;
        targets[1] = false;
        let base = st(scores.clone(), targets.clone());
        let p = DcfParams::new(0.01, 1.0, 1.0).unwrap();
        let (e0, _) = eer(&base).unwrap();
        let (d0, _) = min_dcf(&base, &p).unwrap();
        for transform in [|x: f64| 2.0 * x + 1.0, |x: f64| x.tanh()] {
            let mapped = st(
                scores.iter().map(|&x| transform(x)).collect(),
                targets.clone(),
            );
            let (e1, _) = eer(&mapped).unwrap();
            let (d1, _) = min_dcf(&mapped, &p).unwrap();
            assert!((e0 - e1).abs() <= 1e-12);
            assert!((d0 - d1).abs() <= 1e-12);
        }
    }

    #[test]
    fn eer_invariant_under_trial_permutation() {
        let mut rng = Rng::from_seed(200);
        let n = 300;
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let mut targets: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
        targets[0] = true;
        targets[1] = false;
        let (e0, _) = eer(&st(scores.clone(), targets.clone())).unwrap();
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        let (e1, _) = eer(&st(
            idx.iter().map(|&i| scores[i]).collect(),
            idx.iter().map(|&i| targets[i]).collect(),
        ))
        .unwrap();
        assert_eq!(e0, e1);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let s = st(vec![0.5, 0.4], vec![true, true]);
        assert_eq!(eer(&s).unwrap_err().category(), "DegenerateLabels");
    }

    #[test]
    fn asnorm_hand_case() {
        // Enroll-side top-2 {0.4, 0.2}: mean 0.3, std 0.1. Test-side top-2
        // {0.5, 0.1}: mean 0.3, std 0.2. Score 0.5 -> (2 + 1)/2 = 1.5.
        let d = 4;
        let e = vec![1.0, 0.0, 0.0, 0.0];
        let t = vec![0.0, 1.0, 0.0, 0.0];
        // Cohort vectors engineered so cosine(e, c1) = 0.4, cosine(e, c2) = 0.2,
        // cosine(t, c1) = 0.5, cosine(t, c2) = 0.1.
        let mk = |ce: f64, ct: f64| {
            let mut v = vec![0.0; d];
            v[0] = ce;
            v[1] = ct;
            v[2] = (1.0 - ce * ce - ct * ct).sqrt();
            v
        };
        let cohort = vec![mk(0.4, 0.5), mk(0.2, 0.1)];
        let mut embeddings = HashMap::new();
        embeddings.insert("e".to_string(), e);
        embeddings.insert("t".to_string(), t);
        let trials = vec![Trial {
            enroll: "e".into(),
            test: "t".into(),
            target: true,
        }];
        let raw = st(vec![0.5], vec![true]);
        let out = asnorm(&raw, &trials, &embeddings, &cohort, 2).unwrap();
        assert!(
            (out.scores()[0] - 1.5).abs() <= 1e-12,
            "got {}",
            out.scores()[0]
        );
    }

    #[test]
    fn asnorm_shift_moves_mean_not_zscore() {
        // Shifting the raw score and every cohort score by the same delta
        // moves the cohort means but leaves (s - mu)/sigma unchanged.
        let d = 6;
        let e = {
            let mut v = vec![0.0; d];
            v[0] = 1.0;
            v
        };
        let t = {
            let mut v = vec![0.0; d];
            v[1] = 1.0;
            v
        };
        let mk = |ce: f64, ct: f64| {
            let mut v = vec![0.0; d];
            v[0] = ce;
            v[1] = ct;
            v[2] = (1.0 - ce * ce - ct * ct).max(0.0).sqrt();
            v
        };
        let trials = vec![Trial {
            enroll: "e".into(),
            test: "t".into(),
            target: true,
        }];
        let mut embeddings = HashMap::new();
        embeddings.insert("e".to_string(), e);
        embeddings.insert("t".to_string(), t);

        let delta = 0.15;
        let base_cohort = vec![mk(0.4, 0.5), mk(0.2, 0.1)];
        let shifted_cohort = vec![mk(0.4 + delta, 0.5 + delta), mk(0.2 + delta, 0.1 + delta)];
        let raw = st(vec![0.5], vec![true]);
        let shifted_raw = st(vec![0.5 + delta], vec![true]);
        let a = asnorm(&raw, &trials, &embeddings, &base_cohort, 2).unwrap();
        let b = asnorm(&shifted_raw, &trials, &embeddings, &shifted_cohort, 2).unwrap();
        assert!(
            (a.scores()[0] - b.scores()[0]).abs() <= 1e-9,
            "z-score changed under a uniform shift: {} vs {}",
            a.scores()[0],
            b.scores()[0]
        );
    }

    #[test]
    fn asnorm_top_n_equal_to_cohort_is_plain_snorm() {
        // With top_n = cohort size the adaptive selection is a no-op and
        // the statistics are those of the full cohort.
        let d = 4;
        let e = vec![1.0, 0.0, 0.0, 0.0];
        let t = vec![0.0, 1.0, 0.0, 0.0];
        let mk = |ce: f64, ct: f64| {
            let mut v = vec![0.0; d];
            v[0] = ce;
            v[1] = ct;
            v[2] = (1.0 - ce * ce - ct * ct).sqrt();
            v
        };
        let cohort = vec![mk(0.4, 0.5), mk(0.2, 0.1), mk(-0.3, 0.2)];
        let mut embeddings = HashMap::new();
        embeddings.insert("e".to_string(), e);
        embeddings.insert("t".to_string(), t);
        let trials = vec![Trial {
            enroll: "e".into(),
            test: "t".into(),
            target: true,
        }];
        let raw = st(vec![0.5], vec![true]);
        let out = asnorm(&raw, &trials, &embeddings, &cohort, 3).unwrap();
        let stats = |scores: &[f64]| {
            let mu = scores.iter().sum::<f64>() / scores.len() as f64;
            let var = scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / scores.len() as f64;
            (mu, var.sqrt())
        };
        let (mu_e, sd_e) = stats(&[0.4, 0.2, -0.3]);
        let (mu_t, sd_t) = stats(&[0.5, 0.1, 0.2]);
        let expected = 0.5 * ((0.5 - mu_e) / sd_e + (0.5 - mu_t) / sd_t);
        assert!((out.scores()[0] - expected).abs() <= 1e-12);
    }

    #[test]
    fn asnorm_zero_variance_rejected() {
        let e = vec![1.0, 0.0];
        let mut embeddings = HashMap::new();
        embeddings.insert("a".to_string(), e.clone());
        embeddings.insert("b".to_string(), vec![0.0, 1.0]);
        let cohort = vec![e.clone(), e.clone()];
        let trials = vec![Trial {
            enroll: "a".into(),
            test: "b".into(),
            target: false,
        }];
        let raw = st(vec![0.0], vec![false]);
        let err = asnorm(&raw, &trials, &embeddings, &cohort, 2).unwrap_err();
        assert_eq!(err.category(), "ZeroVariance");
    }

    #[test]
    fn report_renders_deterministically() {
        let rows = vec![
            ReportRow {
                system: "baseline".into(),
                metrics: vec![(
                    "unseen".into(),
                    MetricPair {
                        eer: 0.0321,
                        min_dcf: 0.41,
                    },
                )],
            },
            ReportRow {
                system: "margin".into(),
                metrics: vec![(
                    "unseen".into(),
                    MetricPair {
                        eer: 0.0123,
                        min_dcf: 0.22,
                    },
                )],
            },
        ];
        let (text, csv) = report(&rows).unwrap();
        let (text2, csv2) = report(&rows).unwrap();
        assert_eq!(text, text2);
        assert_eq!(csv, csv2);
        assert!(text.contains("baseline"));
        assert!(csv.starts_with("system,unseen_eer%,unseen_dcf\n"));
        assert!(csv.contains("margin,1.230,0.2200"));
    }

    #[test]
    fn report_rejects_mismatched_columns() {
        let rows = vec![
            ReportRow {
                system: "a".into(),
                metrics: vec![(
                    "x".into(),
                    MetricPair {
                        eer: 0.1,
                        min_dcf: 0.2,
                    },
                )],
            },
            ReportRow {
                system: "b".into(),
                metrics: vec![(
                    "y".into(),
                    MetricPair {
                        eer: 0.1,
                        min_dcf: 0.2,
                    },
                )],
            },
        ];
        assert!(report(&rows).is_err());
    }
}
