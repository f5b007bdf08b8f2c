//! One-way ANOVA, Welch's t-test and descriptives.
//!
//! The p-values come from the regularized incomplete beta function
//! (continued fraction, modified Lentz) with a Lanczos log-gamma.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    Empty,
    #[error("need at least {needed} groups, got {got}")]
    TooFewGroups { needed: usize, got: usize },
    #[error("group {group} has {got} value(s); at least 2 are required")]
    GroupTooSmall { group: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("non-finite value in input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptives {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub two_sided: bool,
}

/// Mean and sample standard deviation (n - 1 denominator; 0 when n = 1).
pub fn descriptives(sample: &[f64]) -> Result<Descriptives, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::Empty);
    }
    check_finite(sample)?;
    let n = sample.len();
    let mean = sample.iter().sum::<f64>() / n as f64;
    let sd = if n == 1 {
        0.0
    } else {
        (sum_sq_dev(sample, mean) / (n - 1) as f64).sqrt()
    };
    Ok(Descriptives { n, mean, sd })
}

fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

fn sum_sq_dev(values: &[f64], mean: f64) -> f64 {
    values.iter().map(|v| (v - mean) * (v - mean)).sum()
}

#[derive(Debug, Clone, Copy)]
struct GroupSummary {
    n: usize,
    sum: f64,
    mean: f64,
    ss: f64,
}

/// Per-group sums computed over sorted values so the result does not depend
/// on the order values were supplied in.
fn summarize(group: &[f64]) -> GroupSummary {
    let mut sorted = group.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let sum: f64 = sorted.iter().sum();
    let mean = sum / n as f64;
    GroupSummary {
        n,
        sum,
        mean,
        ss: sum_sq_dev(&sorted, mean),
    }
}

/// Classical one-way (between-groups) ANOVA.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups { needed: 2, got: groups.len() });
    }
    for g in groups {
        if g.is_empty() {
            return Err(StatsError::Empty);
        }
        check_finite(g)?;
    }
    let mut summaries: Vec<GroupSummary> = groups.iter().map(|g| summarize(g)).collect();
    summaries.sort_by(|a, b| {
        a.mean
            .total_cmp(&b.mean)
            .then(a.n.cmp(&b.n))
            .then(a.ss.total_cmp(&b.ss))
    });

    let total_n: usize = summaries.iter().map(|s| s.n).sum();
    let grand_mean = summaries.iter().map(|s| s.sum).sum::<f64>() / total_n as f64;
    let ss_between: f64 = summaries
        .iter()
        .map(|s| s.n as f64 * (s.mean - grand_mean) * (s.mean - grand_mean))
        .sum();
    let ss_within: f64 = summaries.iter().map(|s| s.ss).sum();

    if ss_between == 0.0 && ss_within == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(StatsError::GroupTooSmall { group: i, got: g.len() });
        }
    }

    let k = summaries.len();
    let df_between = k - 1;
    let df_within = total_n - k;
    let ms_between = ss_between / df_between as f64;
    let ms_within = ss_within / df_within as f64;
    let f = if ms_within == 0.0 { f64::INFINITY } else { ms_between / ms_within };
    Ok(AnovaResult {
        f,
        df_between,
        df_within,
        p: f_sf(f, df_between as f64, df_within as f64),
    })
}

/// Linear-trend test: regress the values on the group index (1..=k) and test
/// the slope. Reported with df (1, N - 2).
pub fn linear_trend(groups: &[Vec<f64>]) -> Result<AnovaResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups { needed: 2, got: groups.len() });
    }
    let points: Vec<(f64, f64)> = groups
        .iter()
        .enumerate()
        .flat_map(|(i, g)| g.iter().map(move |&y| ((i + 1) as f64, y)))
        .collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    check_finite(&ys)?;
    let n = points.len();
    if n < 3 {
        return Err(StatsError::GroupTooSmall { group: 0, got: n });
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if syy == 0.0 || sxx == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let ss_reg = sxy * sxy / sxx;
    let ss_res = (syy - ss_reg).max(0.0);
    let df_within = n - 2;
    let f = if ss_res == 0.0 {
        f64::INFINITY
    } else {
        ss_reg / (ss_res / df_within as f64)
    };
    Ok(AnovaResult {
        f,
        df_between: 1,
        df_within,
        p: f_sf(f, 1.0, df_within as f64),
    })
}

/// Welch's unequal-variance t-test, two-sided.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    let (da, db) = two_samples(a, b)?;
    let va = da.sd * da.sd / da.n as f64;
    let vb = db.sd * db.sd / db.n as f64;
    if va == 0.0 && vb == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let se2 = va + vb;
    let t = (da.mean - db.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (da.n - 1) as f64 + vb * vb / (db.n - 1) as f64);
    Ok(TTestResult {
        t,
        df,
        p: t_two_sided_p(t, df),
        two_sided: true,
    })
}

/// Student's pooled-variance t-test, two-sided.
pub fn pooled_t(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    let (da, db) = two_samples(a, b)?;
    let df = (da.n + db.n - 2) as f64;
    let pooled = ((da.n - 1) as f64 * da.sd * da.sd + (db.n - 1) as f64 * db.sd * db.sd) / df;
    if pooled == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t = (da.mean - db.mean) / (pooled * (1.0 / da.n as f64 + 1.0 / db.n as f64)).sqrt();
    Ok(TTestResult {
        t,
        df,
        p: t_two_sided_p(t, df),
        two_sided: true,
    })
}

fn two_samples(a: &[f64], b: &[f64]) -> Result<(Descriptives, Descriptives), StatsError> {
    let da = descriptives(a)?;
    let db = descriptives(b)?;
    for (i, d) in [da, db].iter().enumerate() {
        if d.n < 2 {
            return Err(StatsError::GroupTooSmall { group: i, got: d.n });
        }
    }
    Ok((da, db))
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Survival function of the F distribution, P(X > f).
pub fn f_sf(f: f64, df1: f64, df2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
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

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

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
    for m in 1..=MAX_ITER {
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
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
