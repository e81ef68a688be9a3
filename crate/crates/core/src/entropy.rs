//! Conditional human-robot entropy of patch posteriors, distributional
//! summaries per painting category, annotated-region selection and the
//! Mann-Whitney U test on painting-level medians.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::grid_coords;

/// Gate below which a patch counts as low-content and is excluded from
/// entropy analysis.
pub const DEFAULT_TAU: f64 = 0.2;

/// A classifier posterior over (blank, human, robot).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ClassPosterior {
    pub p_blank: f64,
    pub p_human: f64,
    pub p_robot: f64,
}

impl ClassPosterior {
    pub fn new(p_blank: f64, p_human: f64, p_robot: f64) -> Result<Self> {
        let p = ClassPosterior {
            p_blank,
            p_human,
            p_robot,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let components = [self.p_blank, self.p_human, self.p_robot];
        if components.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Usage(format!(
                "posterior components must lie in [0,1]: {components:?}"
            )));
        }
        let sum: f64 = components.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Usage(format!(
                "posterior must sum to 1 (got {sum})"
            )));
        }
        Ok(())
    }
}

/// Entropy of one patch, or its exclusion by the content gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EntropyOutcome {
    /// Conditional entropy in bits, `[0,1]`.
    Included(f64),
    /// `p_human + p_robot <= tau`: low-content patch.
    Excluded,
}

impl EntropyOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            EntropyOutcome::Included(h) => Some(*h),
            EntropyOutcome::Excluded => None,
        }
    }
}

/// Conditional Shannon entropy of the renormalized human-robot posterior.
/// Patches with `p_human + p_robot <= tau` are excluded (the comparison is
/// strict: boundary patches do not pass the gate). `0 * log2(0)` is zero.
pub fn conditional_entropy(p: &ClassPosterior, tau: f64) -> Result<EntropyOutcome> {
    p.validate()?;
    let painted = p.p_human + p.p_robot;
    if !(painted > tau) {
        return Ok(EntropyOutcome::Excluded);
    }
    let ph = p.p_human / painted;
    let pr = 1.0 - ph;
    let term = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    let h = (term(ph) + term(pr)).clamp(0.0, 1.0);
    Ok(EntropyOutcome::Included(h))
}

/// One patch's entropy record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub painting_id: String,
    pub x: usize,
    pub y: usize,
    pub outcome: EntropyOutcome,
}

/// Pooled and per-painting distributional summaries of included records.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyStats {
    pub n_patches: usize,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
    /// 25th and 75th percentiles (linear interpolation between order
    /// statistics).
    pub iqr: (f64, f64),
    pub frac_above_0_5: f64,
    pub frac_above_0_7: f64,
    pub frac_above_0_9: f64,
    /// Per-painting medians, sorted by painting id.
    pub per_painting_medians: Vec<(String, f64)>,
    pub mean_of_medians: f64,
    pub std_of_medians: f64,
}

/// Percentile by linear interpolation between order statistics
/// (`q` in 0..=100). `values` must be sorted.
pub fn percentile_sorted(values: &[f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    if values.len() == 1 {
        return values[0];
    }
    let rank = (q / 100.0) * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    let frac = rank - lo as f64;
    values[lo] * (1.0 - frac) + values[hi] * frac
}

fn median_sorted(values: &[f64]) -> f64 {
    percentile_sorted(values, 50.0)
}

/// Summarizes included entropy records, pooled and grouped by painting.
pub fn summarize(records: &[EntropyRecord]) -> Result<EntropyStats> {
    let mut pooled = Vec::new();
    let mut per_painting: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for record in records {
        if let EntropyOutcome::Included(h) = record.outcome {
            pooled.push(h);
            per_painting
                .entry(record.painting_id.as_str())
                .or_default()
                .push(h);
        }
    }
    if pooled.is_empty() {
        return Err(Error::Usage(
            "no records remain after the content gate; nothing to summarize".into(),
        ));
    }
    pooled.sort_by(|a, b| a.partial_cmp(b).expect("entropies are finite"));
    let n = pooled.len();
    let mean = pooled.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (pooled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let frac_above = |t: f64| pooled.iter().filter(|&&v| v > t).count() as f64 / n as f64;

    let mut per_painting_medians: Vec<(String, f64)> = per_painting
        .into_iter()
        .map(|(id, mut values)| {
            values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            (id.to_string(), median_sorted(&values))
        })
        .collect();
    per_painting_medians.sort_by(|a, b| a.0.cmp(&b.0));
    let medians: Vec<f64> = per_painting_medians.iter().map(|(_, m)| *m).collect();
    let mean_of_medians = medians.iter().sum::<f64>() / medians.len() as f64;
    let std_of_medians = if medians.len() > 1 {
        (medians
            .iter()
            .map(|v| (v - mean_of_medians) * (v - mean_of_medians))
            .sum::<f64>()
            / (medians.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };

    Ok(EntropyStats {
        n_patches: n,
        median: median_sorted(&pooled),
        mean,
        std,
        iqr: (percentile_sorted(&pooled, 25.0), percentile_sorted(&pooled, 75.0)),
        frac_above_0_5: frac_above(0.5),
        frac_above_0_7: frac_above(0.7),
        frac_above_0_9: frac_above(0.9),
        per_painting_medians,
        mean_of_medians,
        std_of_medians,
    })
}

/// A rectangle of scan pixels marking visible mixed authorship.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnotationRegion {
    pub painting_id: String,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl AnnotationRegion {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::Validation(format!(
                "region ({},{})..({},{}) of '{}' is degenerate",
                self.x0, self.y0, self.x1, self.y1, self.painting_id
            )));
        }
        if self.x1 > width || self.y1 > height {
            return Err(Error::Validation(format!(
                "region ({},{})..({},{}) of '{}' exceeds the {width}x{height} image",
                self.x0, self.y0, self.x1, self.y1, self.painting_id
            )));
        }
        Ok(())
    }
}

/// Area of the union of `regions`, clipped to the given rectangle.
/// Exact, via coordinate compression.
fn union_area_in_rect(
    regions: &[&AnnotationRegion],
    rx0: usize,
    ry0: usize,
    rx1: usize,
    ry1: usize,
) -> u64 {
    let mut xs = vec![rx0, rx1];
    let mut ys = vec![ry0, ry1];
    for r in regions {
        xs.push(r.x0.clamp(rx0, rx1));
        xs.push(r.x1.clamp(rx0, rx1));
        ys.push(r.y0.clamp(ry0, ry1));
        ys.push(r.y1.clamp(ry0, ry1));
    }
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();

    let mut area = 0u64;
    for yi in 0..ys.len() - 1 {
        for xi in 0..xs.len() - 1 {
            let (cx, cy) = (xs[xi], ys[yi]);
            let covered = regions
                .iter()
                .any(|r| r.x0 <= cx && cx < r.x1 && r.y0 <= cy && cy < r.y1);
            if covered {
                area += ((xs[xi + 1] - xs[xi]) as u64) * ((ys[yi + 1] - ys[yi]) as u64);
            }
        }
    }
    area
}

/// Grid patches (same grid as patch extraction) whose overlap with the
/// union of annotated regions covers at least half the patch area.
pub fn select_annotated_patches(
    width: usize,
    height: usize,
    regions: &[AnnotationRegion],
    size: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    for region in regions {
        region.validate(width, height)?;
    }
    let region_refs: Vec<&AnnotationRegion> = regions.iter().collect();
    let half_patch = (size * size) as u64;
    let mut selected = Vec::new();
    for (x, y) in grid_coords(width, height, size, stride)? {
        let area = union_area_in_rect(&region_refs, x, y, x + size, y + size);
        if 2 * area >= half_patch {
            selected.push((x, y));
        }
    }
    Ok(selected)
}

/// Mann-Whitney U with midrank tie handling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MwuResult {
    /// `min(U_a, U_b)`.
    pub u: f64,
    /// Two-sided p: exact by enumeration when `n_a + n_b <= 12`, otherwise
    /// the tie- and continuity-corrected normal approximation.
    pub p: f64,
    /// Exact enumeration p, when the assignment count is tractable.
    pub p_exact: Option<f64>,
    pub p_normal: f64,
}

const EXACT_SWITCH_N: usize = 12;
const EXACT_MAX_ASSIGNMENTS: u128 = 2_000_000;

/// Midranks of the pooled sample (average rank across ties).
fn midranks(pooled: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].partial_cmp(&pooled[j]).expect("finite values"));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; ties share the average rank.
        let shared = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = shared;
        }
        i = j;
    }
    ranks
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 0..k {
        result = result * (n - i) as u128 / (i + 1) as u128;
    }
    result
}

/// Exact two-sided p by full enumeration of the C(n, n_a) rank
/// assignments: `P(U_A <= u) + P(U_A >= n_a*n_b - u)`, clamped to (0,1].
fn exact_p(ranks: &[f64], n_a: usize, u_min: f64) -> f64 {
    let n = ranks.len();
    let n_b = n - n_a;
    let nab = (n_a * n_b) as f64;
    let offset = (n_a * (n_a + 1)) as f64 / 2.0;
    let eps = 1e-9;

    let mut hits: u128 = 0;
    let mut total: u128 = 0;
    // Iterate subsets of size n_a via the revolving-door order.
    let mut idx: Vec<usize> = (0..n_a).collect();
    loop {
        let rank_sum: f64 = idx.iter().map(|&i| ranks[i]).sum();
        let u_a = rank_sum - offset;
        if u_a <= u_min + eps || u_a >= nab - u_min - eps {
            hits += 1;
        }
        total += 1;

        // Next combination in lexicographic order.
        let mut pos = n_a;
        while pos > 0 {
            pos -= 1;
            if idx[pos] != pos + n - n_a {
                idx[pos] += 1;
                for later in pos + 1..n_a {
                    idx[later] = idx[later - 1] + 1;
                }
                break;
            }
            if pos == 0 {
                debug_assert_eq!(total, binomial(n, n_a));
                let p = hits as f64 / total as f64;
                return p.clamp(f64::MIN_POSITIVE, 1.0);
            }
        }
    }
}

/// Complementary error function (Abramowitz & Stegun 7.1.26, |err| < 1.5e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * z);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let result = poly * (-z * z).exp();
    if x >= 0.0 {
        result
    } else {
        2.0 - result
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Normal approximation with tie correction and continuity correction.
fn normal_p(ranks: &[f64], n_a: usize, u_min: f64) -> f64 {
    let n = ranks.len();
    let n_b = n - n_a;
    let mu = (n_a * n_b) as f64 / 2.0;

    // Tie counts from the midrank multiset.
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let nf = n as f64;
    let variance =
        (n_a * n_b) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if variance <= 0.0 {
        return 1.0;
    }
    let z = (u_min - mu + 0.5) / variance.sqrt();
    (2.0 * normal_cdf(z)).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Mann-Whitney U test. `U = min(U_a, U_b)` with the rank-sum definition
/// and midrank tie handling; twoer-sided p follows the documented exact /
/// approximate switching rule.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MwuResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Usage("mann_whitney_u requires non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("mann_whitney_u requires finite values".into()));
    }
    let n_a = a.len();
    let n_b = b.len();
    let mut pooled = Vec::with_capacity(n_a + n_b);
    pooled.extend_from_slice(a);
    pooled.extend_from_slice(b);
    let ranks = midranks(&pooled);

    let rank_sum_a: f64 = ranks[..n_a].iter().sum();
    let u_a = rank_sum_a - (n_a * (n_a + 1)) as f64 / 2.0;
    let u_b = (n_a * n_b) as f64 - u_a;
    let u = u_a.min(u_b);

    let p_normal = normal_p(&ranks, n_a, u);
    let p_exact = if binomial(n_a + n_b, n_a) <= EXACT_MAX_ASSIGNMENTS {
        Some(exact_p(&ranks, n_a, u))
    } else {
        None
    };
    let p = if n_a + n_b <= EXACT_SWITCH_N {
        p_exact.expect("exact enumeration is tractable for n <= 12")
    } else {
        p_normal
    };

    Ok(MwuResult {
        u,
        p,
        p_exact,
        p_normal,
    })
}
