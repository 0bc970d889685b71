//! Two-sample significance testing for configuration comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FAMILY_ALPHA: f64 = 0.05;

// ---------------------------------------------------------------------------
// special functions

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student t CDF with `df` degrees of freedom (real `df > 0`).
pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * inc_beta(df / 2.0, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided tail probability `P(|T| ≥ |t|)`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Inverse t CDF for `p` in (0, 1).
pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile probability must lie in (0, 1)");
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -t_quantile(1.0 - p, df);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while t_cdf(hi, df) < p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// two-sample tests

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    /// Pooled variance.
    #[default]
    Student,
    /// Unequal variances, Welch-Satterthwaite degrees of freedom.
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

struct Moments {
    n: f64,
    mean: f64,
    var: f64,
}

fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Moments { n, mean, var }
}

struct Setup {
    diff: f64,
    se: f64,
    df: f64,
    pooled_sd: f64,
}

fn setup(a: &[f64], b: &[f64], kind: TTestKind) -> Result<Setup> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!(
            "each sample needs at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples contain non-finite values"));
    }
    let (ma, mb) = (moments(a), moments(b));
    let df_pooled = ma.n + mb.n - 2.0;
    let pooled_var = ((ma.n - 1.0) * ma.var + (mb.n - 1.0) * mb.var) / df_pooled;
    // Constant samples leave rounding residue in the variance; treat spread
    // below a few ulps of the data scale as none.
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if !(pooled_var.sqrt() > 64.0 * f64::EPSILON * scale) {
        return Err(Error::invalid("samples have zero pooled variance"));
    }
    let pooled_sd = pooled_var.sqrt();
    let (se, df) = match kind {
        TTestKind::Student => (pooled_sd * (1.0 / ma.n + 1.0 / mb.n).sqrt(), df_pooled),
        TTestKind::Welch => {
            let (qa, qb) = (ma.var / ma.n, mb.var / mb.n);
            let se2 = qa + qb;
            let df = se2 * se2 / (qa * qa / (ma.n - 1.0) + qb * qb / (mb.n - 1.0));
            (se2.sqrt(), df)
        }
    };
    Ok(Setup {
        diff: ma.mean - mb.mean,
        se,
        df,
        pooled_sd,
    })
}

/// Independent two-sample t test of `mean(a) - mean(b)`.
pub fn t_test_ind(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTest> {
    let s = setup(a, b, kind)?;
    let t = s.diff / s.se;
    Ok(TTest {
        t,
        p: t_two_sided_p(t, s.df),
        df: s.df,
    })
}

/// `(mean(a) - mean(b)) / pooled SD`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    let s = setup(a, b, TTestKind::Student)?;
    Ok(s.diff / s.pooled_sd)
}

/// 95% interval for `mean(a) - mean(b)`.
pub fn ci95_mean_diff(a: &[f64], b: &[f64], kind: TTestKind) -> Result<(f64, f64)> {
    let s = setup(a, b, kind)?;
    let half = t_quantile(0.975, s.df) * s.se;
    Ok((s.diff - half, s.diff + half))
}

pub fn bonferroni_alpha(m: usize) -> f64 {
    FAMILY_ALPHA / m.max(1) as f64
}

pub fn bonferroni_significant(p: f64, m: usize) -> bool {
    p < bonferroni_alpha(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSize {
    Negligible,
    Small,
    Medium,
    Large,
}

impl EffectSize {
    pub fn from_d(d: f64) -> Self {
        match d.abs() {
            v if v >= 0.8 => EffectSize::Large,
            v if v >= 0.5 => EffectSize::Medium,
            v if v >= 0.2 => EffectSize::Small,
            _ => EffectSize::Negligible,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EffectSize::Negligible => "negligible",
            EffectSize::Small => "small",
            EffectSize::Medium => "medium",
            EffectSize::Large => "large",
        }
    }
}

/// Candidate versus baseline. Inferential fields are absent when either
/// sample is too small or has no spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub baseline: String,
    pub candidate: String,
    pub n_baseline: usize,
    pub n_candidate: usize,
    /// `mean(candidate) - mean(baseline)`.
    pub mean_diff: f64,
    /// `mean_diff / mean(baseline)`.
    pub relative_gain: Option<f64>,
    pub t_stat: Option<f64>,
    pub df: Option<f64>,
    pub p_value: Option<f64>,
    pub cohens_d: Option<f64>,
    pub effect: Option<EffectSize>,
    pub ci95: Option<(f64, f64)>,
    pub significant_bonferroni: bool,
    pub m_comparisons: usize,
    pub test: TTestKind,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Compares one candidate sample against a baseline sample.
pub fn compare(
    baseline: (&str, &[f64]),
    candidate: (&str, &[f64]),
    m: usize,
    kind: TTestKind,
) -> Result<ComparisonResult> {
    if m == 0 {
        return Err(Error::invalid("number of comparisons must be >= 1"));
    }
    let (bn, b) = baseline;
    let (cn, c) = candidate;
    if b.is_empty() || c.is_empty() {
        return Err(Error::invalid(format!("comparison {bn} vs {cn} has an empty sample")));
    }
    let mb = mean(b);
    let mean_diff = mean(c) - mb;
    let relative_gain = (mb != 0.0).then(|| mean_diff / mb);
    let inferential = match (t_test_ind(c, b, kind), cohens_d(c, b), ci95_mean_diff(c, b, kind)) {
        (Ok(t), Ok(d), Ok(ci)) => Some((t, d, ci)),
        _ => None,
    };
    let p = inferential.map(|(t, _, _)| t.p);
    Ok(ComparisonResult {
        baseline: bn.to_string(),
        candidate: cn.to_string(),
        n_baseline: b.len(),
        n_candidate: c.len(),
        mean_diff,
        relative_gain,
        t_stat: inferential.map(|(t, _, _)| t.t),
        df: inferential.map(|(t, _, _)| t.df),
        p_value: p,
        cohens_d: inferential.map(|(_, d, _)| d),
        effect: inferential.map(|(_, d, _)| EffectSize::from_d(d)),
        ci95: inferential.map(|(_, _, ci)| ci),
        significant_bonferroni: p.is_some_and(|p| bonferroni_significant(p, m)),
        m_comparisons: m,
        test: kind,
    })
}

/// Runs each `(baseline, candidate)` pair over the grouped samples.
pub fn compare_configurations(
    results: &BTreeMap<String, Vec<f64>>,
    pairs: &[(String, String)],
    m: usize,
    kind: TTestKind,
) -> Result<Vec<ComparisonResult>> {
    if results.len() < 2 {
        return Err(Error::invalid("need at least two configurations to compare"));
    }
    pairs
        .iter()
        .map(|(b, c)| {
            let get = |name: &str| {
                results
                    .get(name)
                    .ok_or_else(|| Error::invalid(format!("no samples for configuration {name}")))
            };
            compare((b, get(b)?), (c, get(c)?), m, kind)
        })
        .collect()
}

/// Every other configuration against `baseline`, in key order.
pub fn pairs_against(results: &BTreeMap<String, Vec<f64>>, baseline: &str) -> Vec<(String, String)> {
    results
        .keys()
        .filter(|k| k.as_str() != baseline)
        .map(|k| (baseline.to_string(), k.clone()))
        .collect()
}

// ---------------------------------------------------------------------------
// reports

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map(|v| format!("{v:.prec$}")).unwrap_or_default()
}

fn fmt_p(p: Option<f64>) -> String {
    match p {
        None => "n/a".into(),
        Some(p) if p < 0.001 => "<0.001".into(),
        Some(p) => format!("{p:.4}"),
    }
}

pub fn report_csv(rows: &[ComparisonResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "baseline",
        "candidate",
        "n_baseline",
        "n_candidate",
        "mean_diff",
        "relative_gain",
        "t_stat",
        "df",
        "p_value",
        "cohens_d",
        "effect",
        "ci95_lo",
        "ci95_hi",
        "significant_bonferroni",
        "alpha",
        "test",
    ])?;
    for r in rows {
        w.write_record([
            r.baseline.clone(),
            r.candidate.clone(),
            r.n_baseline.to_string(),
            r.n_candidate.to_string(),
            format!("{:.6}", r.mean_diff),
            opt(r.relative_gain, 6),
            opt(r.t_stat, 6),
            opt(r.df, 3),
            r.p_value.map(|p| format!("{p:.6e}")).unwrap_or_default(),
            opt(r.cohens_d, 6),
            r.effect.map(|e| e.as_str().to_string()).unwrap_or_default(),
            opt(r.ci95.map(|c| c.0), 6),
            opt(r.ci95.map(|c| c.1), 6),
            r.significant_bonferroni.to_string(),
            format!("{:.6}", bonferroni_alpha(r.m_comparisons)),
            match r.test {
                TTestKind::Student => "student",
                TTestKind::Welch => "welch",
            }
            .to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Aligned plain-text table.
pub fn report_text(rows: &[ComparisonResult]) -> String {
    let header = [
        "Comparison",
        "Mean Difference",
        "Gain",
        "t-statistic",
        "p-value",
        "Cohen's d",
        "95% CI",
        "Significant",
    ];
    let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        table.push(vec![
            format!("{} vs {}", r.baseline, r.candidate),
            format!("{:+.3}", r.mean_diff),
            r.relative_gain
                .map(|g| format!("{:+.1}%", g * 100.0))
                .unwrap_or_else(|| "n/a".into()),
            r.t_stat.map(|t| format!("{t:.2}")).unwrap_or_else(|| "n/a".into()),
            fmt_p(r.p_value),
            r.cohens_d
                .map(|d| format!("{d:.2} ({})", EffectSize::from_d(d).as_str()))
                .unwrap_or_else(|| "n/a".into()),
            r.ci95
                .map(|(lo, hi)| format!("[{lo:.3}, {hi:.3}]"))
                .unwrap_or_else(|| "n/a".into()),
            if r.significant_bonferroni { "yes" } else { "no" }.into(),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("  "));
        }
    }
    if let Some(r) = rows.first() {
        let _ = writeln!(
            out,
            "Bonferroni: alpha = {}/{} = {:.6}",
            FAMILY_ALPHA,
            r.m_comparisons,
            bonferroni_alpha(r.m_comparisons)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn t_cdf_symmetry_and_center() {
        assert_eq!(t_cdf(0.0, 7.0), 0.5);
        for t in [0.3, 1.0, 2.5, 8.0] {
            assert!((t_cdf(t, 4.0) + t_cdf(-t, 4.0) - 1.0).abs() < 1e-14);
        }
        // df = 1 is Cauchy
        assert!((t_cdf(1.0, 1.0) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for df in [1.0, 3.0, 8.0, 30.5, 200.0] {
            let q = t_quantile(0.975, df);
            assert!((t_cdf(q, df) - 0.975).abs() < 1e-12, "df={df}");
        }
    }

    #[test]
    fn identical_samples() {
        let a = [0.3, 0.5, 0.7, 0.4];
        let r = t_test_ind(&a, &a, TTestKind::Student).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
        assert_eq!(cohens_d(&a, &a).unwrap(), 0.0);
        let (lo, hi) = ci95_mean_diff(&a, &a, TTestKind::Student).unwrap();
        assert!((lo + hi).abs() < 1e-12);
    }

    #[test]
    fn reference_fixture() {
        // values from an independent reference implementation
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        let r = t_test_ind(&a, &b, TTestKind::Student).unwrap();
        assert!((r.t + 1.0).abs() < 1e-12);
        assert!((r.p - 0.346_593_507_087_334_16).abs() < 1e-10);
        let (lo, hi) = ci95_mean_diff(&a, &b, TTestKind::Student).unwrap();
        assert!((lo + 3.306_004_135_204_166).abs() < 1e-9);
        assert!((hi - 1.306_004_135_204_165_8).abs() < 1e-9);

        let a = [0.61, 0.72, 0.68, 0.70, 0.65, 0.74];
        let b = [0.35, 0.41, 0.38, 0.33, 0.40];
        let r = t_test_ind(&a, &b, TTestKind::Student).unwrap();
        assert!((r.t - 12.171_720_340_741_28).abs() < 1e-9);
        assert!((r.p - 6.821_514_274_901_979e-7).abs() < 1e-15);
        let (lo, hi) = ci95_mean_diff(&a, &b, TTestKind::Student).unwrap();
        assert!((lo - 0.251_842_642_114_665_45).abs() < 1e-9);
        assert!((hi - 0.366_824_024_552_001).abs() < 1e-9);
        let w = t_test_ind(&a, &b, TTestKind::Welch).unwrap();
        assert!((w.t - 12.588_910_882_896_872).abs() < 1e-9);
        assert!((w.p - 6.143_937_205_537_533e-7).abs() < 1e-15);
    }

    #[test]
    fn one_pooled_sd_apart() {
        let a = [1.0, 2.0, 3.0];
        let b = [0.0, 1.0, 2.0];
        assert!((cohens_d(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(EffectSize::from_d(1.0), EffectSize::Large);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(t_test_ind(&[1.0], &[1.0, 2.0], TTestKind::Student).is_err());
        assert!(t_test_ind(&[1.0, 1.0], &[1.0, 1.0], TTestKind::Student).is_err());
        assert!(cohens_d(&[2.0, 2.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn bonferroni_examples() {
        assert!(bonferroni_significant(0.001, 6));
        assert!(!bonferroni_significant(0.01, 6));
        assert!(bonferroni_significant(0.04, 1));
        assert_eq!(format!("{:.6}", bonferroni_alpha(6)), "0.008333");
    }

    #[test]
    fn point_masses_give_mean_diff_only() {
        let mut results = BTreeMap::new();
        results.insert("basic".to_string(), vec![0.378; 3]);
        results.insert("query_reform".to_string(), vec![0.564; 3]);
        let rows = compare_configurations(
            &results,
            &pairs_against(&results, "basic"),
            6,
            TTestKind::Student,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean_diff - 0.186).abs() < 1e-12);
        assert!((rows[0].relative_gain.unwrap() - 0.186 / 0.378).abs() < 1e-12);
        assert!(rows[0].p_value.is_none());
        assert!(!rows[0].significant_bonferroni);
        let text = report_text(&rows);
        assert!(text.contains("+0.186"), "{text}");
        assert!(text.contains("0.008333"));
        assert!(report_csv(&rows).unwrap().lines().count() == 2);
    }

    #[test]
    fn missing_configuration_is_an_error() {
        let mut results = BTreeMap::new();
        results.insert("a".to_string(), vec![1.0, 2.0]);
        results.insert("b".to_string(), vec![1.0, 2.0]);
        let pairs = vec![("a".to_string(), "zzz".to_string())];
        assert!(compare_configurations(&results, &pairs, 1, TTestKind::Student).is_err());
    }
}
