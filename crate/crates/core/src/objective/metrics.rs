use std::collections::BTreeMap;

use super::{Label, LabeledScore, MetricsError};

/// Miss and false-alarm rates at one threshold. An utterance is accepted
/// as genuine when its score is `>= threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    /// Fraction of genuine scores below the threshold (FRR).
    pub p_miss: f64,
    /// Fraction of spoof scores at or above the threshold (FAR).
    pub p_fa: f64,
}

fn split(scores: &[LabeledScore]) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    let mut genuine = Vec::new();
    let mut spoof = Vec::new();
    for s in scores {
        if !s.score.is_finite() {
            return Err(MetricsError::NonFinite(s.score));
        }
        match s.label {
            Label::Genuine => genuine.push(s.score),
            Label::Spoof => spoof.push(s.score),
        }
    }
    if genuine.is_empty() || spoof.is_empty() {
        return Err(MetricsError::SingleClass {
            genuine: genuine.len(),
            spoof: spoof.len(),
        });
    }
    Ok((genuine, spoof))
}

/// Operating points at every distinct score, in increasing order, followed
/// by `+∞` (everything rejected).
pub fn det_curve(scores: &[LabeledScore]) -> Result<Vec<DetPoint>, MetricsError> {
    let (genuine, spoof) = split(scores)?;
    Ok(sweep(&genuine, &spoof))
}

fn sweep(genuine: &[f64], spoof: &[f64]) -> Vec<DetPoint> {
    let mut all: Vec<(f64, Label)> = genuine
        .iter()
        .map(|&s| (s, Label::Genuine))
        .chain(spoof.iter().map(|&s| (s, Label::Spoof)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (ng, ns) = (genuine.len() as f64, spoof.len() as f64);
    let mut below_genuine = 0usize;
    let mut below_spoof = 0usize;
    let mut points = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let threshold = all[i].0;
        points.push(DetPoint {
            threshold,
            p_miss: below_genuine as f64 / ng,
            p_fa: (spoof.len() - below_spoof) as f64 / ns,
        });
        while i < all.len() && all[i].0 == threshold {
            match all[i].1 {
                Label::Genuine => below_genuine += 1,
                Label::Spoof => below_spoof += 1,
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        p_miss: 1.0,
        p_fa: 0.0,
    });
    points
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    /// Percent in `[0, 100]`.
    pub percent: f64,
    pub threshold: f64,
}

/// Equal error rate by linear interpolation between the two operating
/// points bracketing `FAR = FRR`. When the bracket ends at `+∞` the
/// threshold reported is the largest score.
pub fn compute_eer(scores: &[LabeledScore]) -> Result<Eer, MetricsError> {
    let (genuine, spoof) = split(scores)?;
    Ok(eer_from_points(&sweep(&genuine, &spoof)))
}

fn eer_from_points(points: &[DetPoint]) -> Eer {
    // p_fa − p_miss is 1 at the first point, −1 at +∞ and non-increasing.
    let b = points
        .iter()
        .position(|p| p.p_fa - p.p_miss <= 0.0)
        .expect("last point has FAR < FRR");
    let (pa, pb) = (points[b - 1], points[b]);
    let (da, db) = (pa.p_fa - pa.p_miss, pb.p_fa - pb.p_miss);
    let w = da / (da - db);
    let rate = pa.p_fa + w * (pb.p_fa - pa.p_fa);
    let threshold = if pb.threshold.is_finite() {
        pa.threshold + w * (pb.threshold - pa.threshold)
    } else {
        pa.threshold
    };
    Eer {
        percent: 100.0 * rate,
        threshold,
    }
}

/// Constants of the legacy normalized tandem detection cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdcfParams {
    pub p_target: f64,
    pub p_nontarget: f64,
    pub p_spoof: f64,
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub c_miss_cm: f64,
    pub c_fa_cm: f64,
    pub p_miss_asv: f64,
    pub p_fa_asv: f64,
    pub p_miss_spoof_asv: f64,
}

impl Default for TdcfParams {
    fn default() -> Self {
        TdcfParams {
            p_target: 0.9405,
            p_nontarget: 0.0095,
            p_spoof: 0.05,
            c_miss_asv: 1.0,
            c_fa_asv: 10.0,
            c_miss_cm: 1.0,
            c_fa_cm: 10.0,
            p_miss_asv: 0.01,
            p_fa_asv: 0.01,
            p_miss_spoof_asv: 0.01,
        }
    }
}

impl TdcfParams {
    pub fn with_asv_errors(self, (p_miss_asv, p_fa_asv, p_miss_spoof_asv): (f64, f64, f64)) -> Self {
        TdcfParams {
            p_miss_asv,
            p_fa_asv,
            p_miss_spoof_asv,
            ..self
        }
    }

    /// `(C1, C2)` after validation.
    pub fn constants(&self) -> Result<(f64, f64), MetricsError> {
        let bad = |m: String| Err(MetricsError::InvalidParams(m));
        let priors = [self.p_target, self.p_nontarget, self.p_spoof];
        if priors.iter().any(|p| !(0.0..=1.0).contains(p)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("priors {priors:?} must be probabilities summing to 1"));
        }
        let costs = [self.c_miss_asv, self.c_fa_asv, self.c_miss_cm, self.c_fa_cm];
        if costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return bad(format!("costs {costs:?} must be positive"));
        }
        let rates = [self.p_miss_asv, self.p_fa_asv, self.p_miss_spoof_asv];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad(format!("ASV error rates {rates:?} must lie in [0, 1]"));
        }
        let c1 = self.p_target * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv)
            - self.p_nontarget * self.c_fa_asv * self.p_fa_asv;
        let c2 = self.c_fa_cm * self.p_spoof * (1.0 - self.p_miss_spoof_asv);
        if c1 <= 0.0 || c2 <= 0.0 {
            return bad(format!("degenerate cost constants C1 = {c1}, C2 = {c2}"));
        }
        Ok((c1, c2))
    }
}

/// Normalized t-DCF at given CM miss and false-alarm rates.
pub fn tdcf_at(p_miss_cm: f64, p_fa_cm: f64, params: &TdcfParams) -> Result<f64, MetricsError> {
    let (c1, c2) = params.constants()?;
    Ok((c1 * p_miss_cm + c2 * p_fa_cm) / c1.min(c2))
}

/// Minimum normalized t-DCF over every score threshold and `+∞`.
pub fn min_tdcf(scores: &[LabeledScore], params: &TdcfParams) -> Result<f64, MetricsError> {
    let (c1, c2) = params.constants()?;
    let points = det_curve(scores)?;
    let norm = c1.min(c2);
    Ok(points
        .iter()
        .map(|p| (c1 * p.p_miss + c2 * p.p_fa) / norm)
        .fold(f64::INFINITY, f64::min))
}

/// Reads `P_miss_asv P_fa_asv P_miss_spoof_asv` from one line of text.
pub fn parse_asv_errors(text: &str) -> Result<(f64, f64, f64), MetricsError> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| MetricsError::InvalidParams(format!("ASV error rate {s:?}: {e}")))
    };
    match fields.as_slice() {
        [a, b, c] if text.trim().lines().count() == 1 => Ok((parse(a)?, parse(b)?, parse(c)?)),
        _ => Err(MetricsError::InvalidParams(format!(
            "expected three numbers on one line, got {:?}",
            text.trim()
        ))),
    }
}

/// Per-attack EER (percent); each attack is scored against all genuine
/// utterances.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Breakdown {
    pub eer: BTreeMap<String, f64>,
    /// Requested attacks that had no spoof scores.
    pub missing: Vec<String>,
}

pub fn per_attack_breakdown(scores: &[LabeledScore], expected: &[&str]) -> Result<Breakdown, MetricsError> {
    let (genuine, _) = split(scores)?;
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.label == Label::Spoof) {
        groups.entry(s.attack.as_str()).or_default().push(s.score);
    }
    let mut out = Breakdown::default();
    for (attack, spoof) in &groups {
        out.eer
            .insert(attack.to_string(), eer_from_points(&sweep(&genuine, spoof)).percent);
    }
    out.missing = expected
        .iter()
        .filter(|a| !groups.contains_key(*a))
        .map(|a| a.to_string())
        .collect();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub eer: Eer,
    pub min_tdcf: f64,
    pub per_attack: Breakdown,
    pub n_genuine: usize,
    pub n_spoof: usize,
}

pub fn evaluate(scores: &[LabeledScore], params: &TdcfParams) -> Result<EvalReport, MetricsError> {
    let (genuine, spoof) = split(scores)?;
    Ok(EvalReport {
        eer: compute_eer(scores)?,
        min_tdcf: min_tdcf(scores, params)?,
        per_attack: per_attack_breakdown(scores, &[])?,
        n_genuine: genuine.len(),
        n_spoof: spoof.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(genuine: &[f64], spoof: &[f64]) -> Vec<LabeledScore> {
        genuine
            .iter()
            .map(|&s| LabeledScore::new("g", s, Label::Genuine, "-"))
            .chain(spoof.iter().map(|&s| LabeledScore::new("s", s, Label::Spoof, "A01")))
            .collect()
    }

    /// Counts errors directly at every candidate threshold.
    fn oracle_points(g: &[f64], s: &[f64]) -> Vec<(f64, f64, f64)> {
        let mut th: Vec<f64> = g.iter().chain(s).copied().collect();
        th.sort_by(f64::total_cmp);
        th.dedup();
        th.push(f64::INFINITY);
        th.into_iter()
            .map(|t| {
                let frr = g.iter().filter(|&&v| v < t).count() as f64 / g.len() as f64;
                let far = s.iter().filter(|&&v| v >= t).count() as f64 / s.len() as f64;
                (t, frr, far)
            })
            .collect()
    }

    fn oracle_eer(g: &[f64], s: &[f64]) -> f64 {
        let pts = oracle_points(g, s);
        for w in pts.windows(2) {
            let (_, frr0, far0) = w[0];
            let (_, frr1, far1) = w[1];
            if far0 > frr0 && far1 <= frr1 {
                // Solve far0 + λ(far1 − far0) = frr0 + λ(frr1 − frr0).
                let lambda = (far0 - frr0) / ((far0 - frr0) - (far1 - frr1));
                return 100.0 * (frr0 + lambda * (frr1 - frr0));
            }
        }
        unreachable!("no crossing")
    }

    fn oracle_tdcf(g: &[f64], s: &[f64], p: &TdcfParams) -> f64 {
        let c1 = p.p_target * (p.c_miss_cm - p.c_miss_asv * p.p_miss_asv) - p.p_nontarget * p.c_fa_asv * p.p_fa_asv;
        let c2 = p.c_fa_cm * p.p_spoof * (1.0 - p.p_miss_spoof_asv);
        oracle_points(g, s)
            .into_iter()
            .map(|(_, miss, fa)| (c1 * miss + c2 * fa) / c1.min(c2))
            .fold(f64::INFINITY, f64::min)
    }

    fn random_set(rng: &mut ChaCha8Rng, max: usize) -> (Vec<f64>, Vec<f64>) {
        let ng = rng.gen_range(1..max / 2);
        let ns = rng.gen_range(1..max / 2);
        let shift = rng.gen_range(0.0..2.0);
        // Coarse rounding produces ties across and within classes.
        let q = |v: f64| (v * 20.0).round() / 20.0;
        let g = (0..ng).map(|_| q(rng.gen_range(-1.0..1.0) + shift)).collect();
        let s = (0..ns).map(|_| q(rng.gen_range(-1.0..1.0))).collect();
        (g, s)
    }

    #[test]
    fn trivial_eers() {
        let e = compute_eer(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap();
        assert_eq!(e.percent, 0.0);
        assert!(e.threshold > 0.2 && e.threshold <= 0.8);
        assert_eq!(compute_eer(&set(&[0.1, 0.2], &[0.8, 0.9])).unwrap().percent, 100.0);
        assert_eq!(compute_eer(&set(&[0.5], &[0.5])).unwrap().percent, 50.0);
        assert!(matches!(compute_eer(&set(&[0.1], &[])), Err(MetricsError::SingleClass { .. })));
    }

    #[test]
    fn eer_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (g, s) = random_set(&mut rng, 1000);
            let e = compute_eer(&set(&g, &s)).unwrap();
            assert!((e.percent - oracle_eer(&g, &s)).abs() < 1e-9);
            assert!((0.0..=100.0).contains(&e.percent));
        }
    }

    #[test]
    fn overlapping_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g: Vec<f64> = (0..200).map(|_| rng.gen_range(-0.5..1.0)).collect();
        let s: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..0.5)).collect();
        let e = compute_eer(&set(&g, &s)).unwrap();
        assert!((e.percent - oracle_eer(&g, &s)).abs() < 1e-9);
        assert!(e.percent > 10.0 && e.percent < 50.0);
    }

    #[test]
    fn tdcf_constants_and_boundaries() {
        let p = TdcfParams::default();
        let (c1, c2) = p.constants().unwrap();
        assert!((c1 - 0.930145).abs() < 1e-12);
        assert!((c2 - 0.495).abs() < 1e-12);
        assert_eq!(min_tdcf(&set(&[0.9, 0.8], &[0.1, 0.2]), &p).unwrap(), 0.0);
        assert!((tdcf_at(1.0, 0.0, &p).unwrap() - c1 / c2).abs() < 1e-12);
        let bad = TdcfParams { c_fa_cm: 0.0, ..p };
        assert!(bad.constants().is_err());
        let degenerate = TdcfParams { p_miss_asv: 1.0, c_miss_asv: 1.0, p_fa_asv: 1.0, ..p };
        assert!(degenerate.constants().is_err());
        let bad_priors = TdcfParams { p_spoof: 0.5, ..p };
        assert!(bad_priors.constants().is_err());
    }

    #[test]
    fn tdcf_matches_oracle_and_bounds_fixed_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = TdcfParams::default();
        for _ in 0..50 {
            let (g, s) = random_set(&mut rng, 1000);
            let scores = set(&g, &s);
            let m = min_tdcf(&scores, &p).unwrap();
            assert!((m - oracle_tdcf(&g, &s, &p)).abs() < 1e-9);
            for pt in det_curve(&scores).unwrap() {
                assert!(m <= tdcf_at(pt.p_miss, pt.p_fa, &p).unwrap() + 1e-15);
            }
        }
    }

    #[test]
    fn monotone_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = TdcfParams::default();
        for _ in 0..20 {
            let (g, s) = random_set(&mut rng, 400);
            let base = set(&g, &s);
            let e = compute_eer(&base).unwrap().percent;
            let t = min_tdcf(&base, &p).unwrap();
            for f in [|v: f64| 2.0 * v + 1.0, |v: f64| v.tanh()] {
                let mapped: Vec<LabeledScore> = base
                    .iter()
                    .map(|x| LabeledScore { score: f(x.score), ..x.clone() })
                    .collect();
                assert!((compute_eer(&mapped).unwrap().percent - e).abs() < 1e-9);
                assert!((min_tdcf(&mapped, &p).unwrap() - t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn breakdown() {
        let mut scores = set(&[0.4, 0.6], &[]);
        scores.push(LabeledScore::new("a", 0.1, Label::Spoof, "A07"));
        scores.push(LabeledScore::new("b", 0.9, Label::Spoof, "A08"));
        let b = per_attack_breakdown(&scores, &["A07", "A08", "A09"]).unwrap();
        assert_eq!(b.eer["A07"], 0.0);
        assert_eq!(b.eer["A08"], 100.0);
        assert_eq!(b.missing, vec!["A09".to_string()]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let single = {
            let (g, s) = random_set(&mut rng, 300);
            set(&g, &s)
        };
        let b = per_attack_breakdown(&single, &[]).unwrap();
        assert_eq!(b.eer["A01"], compute_eer(&single).unwrap().percent);

        // Three attacks with different overlaps, each against its subset oracle.
        let g: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut scores = set(&g, &[]);
        let mut subsets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (attack, shift) in [("A10", 0.9), ("A11", 0.5), ("A12", 0.1)] {
            for i in 0..60 {
                let v = rng.gen_range(-1.0..0.0) + shift + 0.001 * i as f64;
                scores.push(LabeledScore::new(format!("{attack}_{i}"), v, Label::Spoof, attack));
                subsets.entry(attack.to_string()).or_default().push(v);
            }
        }
        let b = per_attack_breakdown(&scores, &[]).unwrap();
        for (attack, s) in &subsets {
            assert!((b.eer[attack] - oracle_eer(&g, s)).abs() < 1e-9);
        }
    }

    #[test]
    fn asv_error_file() {
        assert_eq!(parse_asv_errors("0.02 0.03\t0.5\n").unwrap(), (0.02, 0.03, 0.5));
        assert!(parse_asv_errors("0.02 0.03").is_err());
        assert!(parse_asv_errors("0.02 0.03 x").is_err());
        assert!(parse_asv_errors("0.02\n0.03 0.1").is_err());
    }

    #[test]
    fn report() {
        let r = evaluate(&set(&[0.9, 0.8, 0.3], &[0.1, 0.2]), &TdcfParams::default()).unwrap();
        assert_eq!((r.n_genuine, r.n_spoof), (3, 2));
        assert!(r.min_tdcf >= 0.0);
    }
}
