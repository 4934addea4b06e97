//! Differential-privacy machinery.
//!
//! * disjoint partitioning of the causality training data,
//! * PATE-style noisy vote aggregation of per-partition causality matrices,
//! * DP-SGD gradient sanitisation (per-example clipping plus Gaussian noise),
//! * Rényi-DP accounting for the subsampled Gaussian mechanism.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::causality::CausalityMatrix;
use crate::data::TraceSet;
use crate::error::{ForgeError, Result};

/// `(epsilon, delta)`; `epsilon = inf` disables noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacyBudget {
    #[serde(with = "extended_f64")]
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for PrivacyBudget {
    fn default() -> Self {
        Self { epsilon: f64::INFINITY, delta: 5e-4 }
    }
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let b = Self { epsilon, delta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(0.0..1.0).contains(&self.delta) {
            return Err(ForgeError::Config(format!(
                "privacy budget needs epsilon >= 0 and delta in [0, 1), got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn is_disabled(&self) -> bool {
        self.epsilon.is_infinite()
    }
}

/// JSON has no infinity; accept and emit the string `"inf"`.
pub mod extended_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity") => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PateConfig {
    pub n_partitions: usize,
    /// Quantisation levels for matrix entries.
    pub bins: usize,
}

impl Default for PateConfig {
    fn default() -> Self {
        Self { n_partitions: 5, bins: 20 }
    }
}

impl PateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_partitions == 0 || self.bins < 2 {
            return Err(ForgeError::Config(format!("invalid PATE config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    #[serde(with = "extended_f64")]
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub sample_rate: f64,
    pub steps: u64,
}

impl DpSgdConfig {
    /// Pass-through sanitiser: no clipping, no noise.
    pub fn disabled(sample_rate: f64, steps: u64) -> Self {
        Self { clip_norm: f64::INFINITY, noise_multiplier: 0.0, sample_rate, steps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0)
            || !(self.noise_multiplier >= 0.0)
            || !(self.sample_rate > 0.0 && self.sample_rate <= 1.0)
            || self.steps == 0
        {
            return Err(ForgeError::Config(format!("invalid DP-SGD config {self:?}")));
        }
        Ok(())
    }
}

/// Near-equal contiguous split into `n` disjoint parts; the first
/// `|s| mod n` parts get one extra trace.
pub fn partition(s: &TraceSet, n: usize) -> Result<Vec<TraceSet>> {
    if n == 0 || n > s.len() {
        return Err(ForgeError::invalid(format!("cannot split {} traces into {n} non-empty partitions", s.len())));
    }
    let base = s.len() / n;
    let extra = s.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for k in 0..n {
        let size = base + usize::from(k < extra);
        let part = TraceSet::new(s.traces()[start..start + size].to_vec())?;
        out.push(match s.provenance {
            Some(p) => part.with_provenance(p),
            None => part,
        });
        start += size;
    }
    Ok(out)
}

/// Draws from Laplace(0, scale) by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

/// Bin of `v` among `bins` equal-width bins over `[0, 1]`.
#[inline]
pub fn quantize(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

#[inline]
pub fn bin_center(k: usize, bins: usize) -> f64 {
    (k as f64 + 0.5) / bins as f64
}

/// Noisy per-entry vote over quantised teacher values. Each of the `m^2`
/// entries spends `epsilon / m^2` and gets Laplace noise of scale
/// `2 / epsilon_entry` on every bin count. The output is the centre of the
/// winning bin (ties go to the lower bin).
pub fn pate_aggregate<R: Rng + ?Sized>(
    matrices: &[CausalityMatrix],
    budget: &PrivacyBudget,
    cfg: &PateConfig,
    rng: &mut R,
) -> Result<CausalityMatrix> {
    cfg.validate()?;
    budget.validate()?;
    let first = matrices.first().ok_or_else(|| ForgeError::invalid("no teacher matrices"))?;
    let m = first.m();
    if let Some(bad) = matrices.iter().find(|t| t.m() != m) {
        return Err(ForgeError::DimensionMismatch(format!("teacher matrices disagree on m: {m} vs {}", bad.m())));
    }
    let eps_entry = budget.epsilon / (m * m) as f64;
    let scale = 2.0 / eps_entry;
    let mut out = Array2::zeros((m, m));
    let mut hist = vec![0.0f64; cfg.bins];
    for i in 0..m {
        for j in 0..m {
            hist.iter_mut().for_each(|h| *h = 0.0);
            for t in matrices {
                hist[quantize(t.entries()[[i, j]], cfg.bins)] += 1.0;
            }
            let winner = if budget.epsilon == 0.0 {
                rng.random_range(0..cfg.bins)
            } else {
                if scale > 0.0 && scale.is_finite() {
                    for h in hist.iter_mut() {
                        *h += sample_laplace(rng, scale);
                    }
                }
                crate::causality::argmax(hist.iter().copied())
            };
            out[[i, j]] = bin_center(winner, cfg.bins);
        }
    }
    CausalityMatrix::new(out)
}

/// Euclidean norm of a flat gradient.
pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Clipped mean of per-example gradients plus Gaussian noise with standard
/// deviation `z * C / B` per coordinate.
pub fn clip_and_noise<R: Rng + ?Sized>(per_example: &[Vec<f64>], cfg: &DpSgdConfig, rng: &mut R) -> Result<Vec<f64>> {
    let dim = check_grads(per_example)?;
    let mut sum = vec![0.0; dim];
    for g in per_example {
        let factor = (cfg.clip_norm / l2_norm(g)).min(1.0);
        for (s, x) in sum.iter_mut().zip(g) {
            *s += x * factor;
        }
    }
    let b = per_example.len() as f64;
    sum.iter_mut().for_each(|s| *s /= b);
    if cfg.noise_multiplier > 0.0 {
        let std = cfg.noise_multiplier * cfg.clip_norm / b;
        for s in sum.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *s += std * n;
        }
    }
    Ok(sum)
}

/// Plain mean, summed in the same order as [`clip_and_noise`].
pub fn mean_gradient(per_example: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = check_grads(per_example)?;
    let mut sum = vec![0.0; dim];
    for g in per_example {
        for (s, x) in sum.iter_mut().zip(g) {
            *s += x * 1.0;
        }
    }
    let b = per_example.len() as f64;
    sum.iter_mut().for_each(|s| *s /= b);
    Ok(sum)
}

fn check_grads(per_example: &[Vec<f64>]) -> Result<usize> {
    let dim = per_example.first().ok_or_else(|| ForgeError::invalid("no per-example gradients"))?.len();
    if per_example.iter().any(|g| g.len() != dim) {
        return Err(ForgeError::DimensionMismatch("per-example gradients differ in length".into()));
    }
    Ok(dim)
}

/// Integer Rényi orders used for accounting.
pub fn rdp_orders() -> impl Iterator<Item = u32> {
    2..=256
}

/// RDP of one step of the Poisson-subsampled Gaussian mechanism at integer
/// order `alpha`.
pub fn rdp_subsampled_gaussian(q: f64, z: f64, alpha: u32) -> f64 {
    if z <= 0.0 {
        return f64::INFINITY;
    }
    if q <= 0.0 {
        return 0.0;
    }
    let a = alpha as f64;
    if q >= 1.0 {
        return a / (2.0 * z * z);
    }
    let (lq, l1q) = (q.ln(), (1.0 - q).ln());
    let mut terms = Vec::with_capacity(alpha as usize + 1);
    let mut log_binom = 0.0;
    for k in 0..=alpha {
        if k > 0 {
            log_binom += ((alpha - k + 1) as f64).ln() - (k as f64).ln();
        }
        let kf = k as f64;
        terms.push(log_binom + (a - kf) * l1q + kf * lq + (kf * kf - kf) / (2.0 * z * z));
    }
    log_sum_exp(&terms) / (a - 1.0)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `(epsilon, delta)` spent by `cfg.steps` DP-SGD steps: the RDP curve is
/// composed over steps and converted with
/// `epsilon = min_alpha rdp(alpha) + ln(1/delta) / (alpha - 1)`.
pub fn epsilon_of(cfg: &DpSgdConfig, delta: f64) -> f64 {
    if cfg.noise_multiplier <= 0.0 || !(delta > 0.0) {
        return f64::INFINITY;
    }
    let steps = cfg.steps as f64;
    rdp_orders()
        .map(|a| {
            steps * rdp_subsampled_gaussian(cfg.sample_rate, cfg.noise_multiplier, a)
                + (1.0 / delta).ln() / (a as f64 - 1.0)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Smallest noise multiplier (to 1e-6 relative) reaching `epsilon`.
pub fn noise_multiplier_for(epsilon: f64, delta: f64, sample_rate: f64, steps: u64) -> Result<f64> {
    if epsilon.is_infinite() {
        return Ok(0.0);
    }
    if !(epsilon > 0.0) {
        return Err(ForgeError::Config("DP-SGD needs a positive epsilon".into()));
    }
    let eps_at = |z: f64| epsilon_of(&DpSgdConfig { clip_norm: 1.0, noise_multiplier: z, sample_rate, steps }, delta);
    let (mut lo, mut hi) = (1e-3, 1.0);
    while eps_at(hi) > epsilon {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(ForgeError::Config(format!("epsilon {epsilon} unreachable")));
        }
    }
    while (hi - lo) > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid) > epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    #[serde(with = "extended_f64")]
    pub epsilon: f64,
    pub delta: f64,
    pub mechanism: String,
    pub parameters: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GlucoseTrace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(n: usize) -> TraceSet {
        TraceSet::new((0..n).map(|i| GlucoseTrace::new(format!("t{i}"), vec![100.0; 2]).unwrap()).collect()).unwrap()
    }

    #[test]
    fn partition_sizes() {
        let parts = partition(&set(10), 5).unwrap();
        assert!(parts.iter().all(|p| p.len() == 2));
        assert_eq!(partition(&set(10), 1).unwrap()[0].traces(), set(10).traces());
        assert!(partition(&set(10), 11).is_err());
        let sizes: Vec<_> = partition(&set(11), 3).unwrap().iter().map(TraceSet::len).collect();
        assert_eq!(sizes, vec![4, 4, 3]);
    }

    fn constant(m: usize, v: f64) -> CausalityMatrix {
        CausalityMatrix::new(Array2::from_elem((m, m), v)).unwrap()
    }

    #[test]
    fn pate_noise_free_vote() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let budget = PrivacyBudget::default();
        let cfg = PateConfig { n_partitions: 3, bins: 10 };
        let out =
            pate_aggregate(&[constant(2, 0.5), constant(2, 0.5), constant(2, 0.5)], &budget, &cfg, &mut rng).unwrap();
        assert!(out.entries().iter().all(|&v| (v - 0.55).abs() < 1e-12));
        let out =
            pate_aggregate(&[constant(1, 0.1), constant(1, 0.1), constant(1, 0.9)], &budget, &cfg, &mut rng).unwrap();
        assert!((out.entries()[[0, 0]] - 0.15).abs() < 1e-12);
    }

    #[test]
    fn pate_rejects_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = pate_aggregate(
            &[constant(1, 0.1), constant(2, 0.1)],
            &PrivacyBudget::default(),
            &PateConfig::default(),
            &mut rng,
        );
        assert!(r.is_err());
    }

    #[test]
    fn clipping_at_zero_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = DpSgdConfig { clip_norm: 1.0, noise_multiplier: 0.0, sample_rate: 1.0, steps: 1 };
        let out = clip_and_noise(&[vec![6.0, 8.0]], &cfg, &mut rng).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-15 && (out[1] - 0.8).abs() < 1e-15);
        let out = clip_and_noise(&[vec![0.1, 0.2], vec![0.3, 0.0]], &cfg, &mut rng).unwrap();
        assert_eq!(out, mean_gradient(&[vec![0.1, 0.2], vec![0.3, 0.0]]).unwrap());
    }

    #[test]
    fn epsilon_infinite_without_noise() {
        let cfg = DpSgdConfig { clip_norm: 1.0, noise_multiplier: 0.0, sample_rate: 0.1, steps: 10 };
        assert!(epsilon_of(&cfg, 5e-4).is_infinite());
    }

    #[test]
    fn noise_multiplier_inverts_epsilon() {
        let z = noise_multiplier_for(2.0, 5e-4, 0.1, 100).unwrap();
        let eps = epsilon_of(&DpSgdConfig { clip_norm: 1.0, noise_multiplier: z, sample_rate: 0.1, steps: 100 }, 5e-4);
        assert!(eps <= 2.0 && eps > 1.99, "{eps}");
        assert_eq!(noise_multiplier_for(f64::INFINITY, 5e-4, 0.1, 100).unwrap(), 0.0);
    }

    #[test]
    fn budget_json_infinity() {
        let b = PrivacyBudget::default();
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.contains("\"inf\""));
        let back: PrivacyBudget = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }
}
