use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{EvalError, ItemResult};

const Z95: f64 = 1.96;

/// Largest discordant count whose binomial coefficients fit exactly in u128.
const EXACT_U128_MAX: u64 = 120;

/// Exact-match accuracy: correct / n, rounded to 6 decimals.
pub fn score_run(items: &[ItemResult]) -> Result<f64, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty("cannot score an empty run"));
    }
    let correct = items.iter().filter(|i| i.correct).count();
    Ok(round6(correct as f64 / items.len() as f64))
}

pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Normal-approximation (Wald) 95% interval, clamped to [0, 1].
pub fn wald_ci95(acc: f64, n: usize) -> (f64, f64) {
    let half = Z95 * (acc * (1.0 - acc) / n.max(1) as f64).max(0.0).sqrt();
    ((acc - half).clamp(0.0, 1.0), (acc + half).clamp(0.0, 1.0))
}

/// Wilson score 95% interval, for comparison with [`wald_ci95`].
pub fn wilson_ci95(acc: f64, n: usize) -> (f64, f64) {
    let n = n.max(1) as f64;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (acc + z2 / (2.0 * n)) / denom;
    let half = Z95 * (acc * (1.0 - acc) / n + z2 / (4.0 * n * n)).max(0.0).sqrt() / denom;
    (
        (centre - half).clamp(0.0, 1.0),
        (centre + half).clamp(0.0, 1.0),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    #[default]
    Wald,
    Wilson,
}

pub fn ci95(method: CiMethod, acc: f64, n: usize) -> (f64, f64) {
    match method {
        CiMethod::Wald => wald_ci95(acc, n),
        CiMethod::Wilson => wilson_ci95(acc, n),
    }
}

/// Examples per second; zero examples is zero throughput.
pub fn throughput(n: usize, runtime_s: f64) -> Result<f64, EvalError> {
    if n == 0 {
        return Ok(0.0);
    }
    // also rejects NaN
    if runtime_s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(EvalError::InvalidArgument(format!(
            "runtime must be positive, got {runtime_s}"
        )));
    }
    Ok(n as f64 / runtime_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McNemarMethod {
    /// Exact when b + c ≤ 25, chi-square with continuity correction above.
    #[default]
    Auto,
    Exact,
    Chi2cc,
}

/// Paired comparison of run A against run B.
///
/// `b` counts items only B got right, `c` items only A got right, and
/// `delta_acc = acc(B) − acc(A) = (b − c) / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub name: String,
    pub n: usize,
    pub b: u64,
    pub c: u64,
    pub delta_acc: f64,
    pub p_value: f64,
    /// `exact` or `chi2cc`; never `auto`.
    pub method: McNemarMethod,
}

/// Two-sided exact McNemar p-value: min(1, 2·P(X ≤ min(b, c))) with
/// X ~ Binomial(b + c, 1/2).
pub fn mcnemar_exact_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let m = b.min(c);
    if n <= EXACT_U128_MAX {
        let mut coef: u128 = 1;
        let mut tail: u128 = 1;
        for k in 1..=m {
            coef = coef * u128::from(n - k + 1) / u128::from(k);
            tail += coef;
        }
        return (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0);
    }
    // log-space summation for large n
    let ln2n = n as f64 * std::f64::consts::LN_2;
    let mut ln_coef = 0.0_f64;
    let terms: Vec<f64> = (0..=m)
        .map(|k| {
            if k > 0 {
                ln_coef += ((n - k + 1) as f64).ln() - (k as f64).ln();
            }
            ln_coef - ln2n
        })
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail = top.exp() * terms.iter().map(|t| (t - top).exp()).sum::<f64>();
    (2.0 * tail).min(1.0)
}

/// McNemar chi-square with continuity correction, 1 degree of freedom.
pub fn mcnemar_chi2cc_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let diff = (b.abs_diff(c) as f64 - 1.0).max(0.0);
    let stat = diff * diff / n as f64;
    let chi = ChiSquared::new(1.0).expect("1 degree of freedom is valid");
    chi.sf(stat)
}

/// Returns the p-value and the method actually used.
pub fn mcnemar_counts(b: u64, c: u64, method: McNemarMethod) -> (f64, McNemarMethod) {
    let resolved = match method {
        McNemarMethod::Auto if b + c <= 25 => McNemarMethod::Exact,
        McNemarMethod::Auto => McNemarMethod::Chi2cc,
        m => m,
    };
    let p = match resolved {
        McNemarMethod::Exact => mcnemar_exact_p(b, c),
        _ => mcnemar_chi2cc_p(b, c),
    };
    (p, resolved)
}

/// Paired McNemar test between two runs over the same qids.
pub fn mcnemar(
    name: &str,
    items_a: &[ItemResult],
    items_b: &[ItemResult],
    method: McNemarMethod,
) -> Result<PairedComparison, EvalError> {
    let a: HashMap<&str, bool> = items_a
        .iter()
        .map(|i| (i.qid.as_str(), i.correct))
        .collect();
    let b_map: HashMap<&str, bool> = items_b
        .iter()
        .map(|i| (i.qid.as_str(), i.correct))
        .collect();
    if a.len() != items_a.len() || b_map.len() != items_b.len() {
        return Err(EvalError::QidMismatch("duplicate qids within a run".into()));
    }
    if a.len() != b_map.len() || a.keys().any(|q| !b_map.contains_key(q)) {
        return Err(EvalError::QidMismatch(format!(
            "runs cover different questions ({} vs {} items)",
            items_a.len(),
            items_b.len()
        )));
    }
    if a.is_empty() {
        return Err(EvalError::Empty("no paired items"));
    }
    let (mut b, mut c) = (0u64, 0u64);
    for (q, &ra) in &a {
        match (ra, b_map[q]) {
            (false, true) => b += 1,
            (true, false) => c += 1,
            _ => {}
        }
    }
    let n = a.len();
    let (p_value, method) = mcnemar_counts(b, c, method);
    Ok(PairedComparison {
        name: name.to_string(),
        n,
        b,
        c,
        delta_acc: (b as f64 - c as f64) / n as f64,
        p_value,
        method,
    })
}
