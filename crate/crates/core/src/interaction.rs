//! Harsanyi dividends over the subset lattice of a set of input variables.
//!
//! For active variables `0..n` and a set function `v` on bitmasks, the
//! dividend of `S` is `I(S) = sum_{T ⊆ S} (-1)^{|S|-|T|} v(T)`, and
//! `v(T) = sum_{S ⊆ T} I(S)` recovers the function exactly. Bit `i` of a mask
//! stands for the `i`-th active variable. A variable is "present" when its
//! input components keep their sample values and "masked" when they take their
//! reference values.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::nn::Classifier;
use crate::par;
use crate::rng;
use crate::{Error, Result};

/// Largest active-set size for which full tables are built.
pub const MAX_ACTIVE: usize = 20;

pub const DEFAULT_TAU: f64 = 0.5;

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` before the log-odds.
pub const P_CLAMP: f64 = 1e-7;

pub const DEFAULT_SALIENT_THRESHOLD: f64 = 0.05;

/// Reference value per variable: `tau` toward the dataset mean, never past it.
pub fn reference_values(x: &[f64], means: &[f64], tau: f64) -> Result<Vec<f64>> {
    if x.len() != means.len() {
        return Err(Error::shape("reference_values means", x.len(), means.len()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::arg("tau must be positive"));
    }
    Ok(x.iter()
        .zip(means)
        .map(|(&xi, &m)| {
            if xi > m {
                (xi - tau).max(m)
            } else {
                (xi + tau).min(m)
            }
        })
        .collect())
}

/// A sample, its reference point and the variables that are switched on and
/// off when building a table.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskContext {
    x: Vec<f64>,
    reference: Vec<f64>,
    means: Vec<f64>,
    tau: f64,
    groups: Vec<Vec<usize>>,
}

impl MaskContext {
    /// One variable per listed input index.
    pub fn new(x: Vec<f64>, means: Vec<f64>, tau: f64, active: &[usize]) -> Result<Self> {
        let groups = active.iter().map(|&i| vec![i]).collect();
        Self::with_groups(x, means, tau, groups)
    }

    /// Every input index is its own variable.
    pub fn all_inputs(x: Vec<f64>, means: Vec<f64>, tau: f64) -> Result<Self> {
        let active: Vec<usize> = (0..x.len()).collect();
        Self::new(x, means, tau, &active)
    }

    /// Each group of input indices is masked and unmasked as one variable.
    pub fn with_groups(x: Vec<f64>, means: Vec<f64>, tau: f64, groups: Vec<Vec<usize>>) -> Result<Self> {
        let reference = reference_values(&x, &means, tau)?;
        Self::from_parts(x, reference, means, tau, groups)
    }

    /// Uses the given reference point verbatim.
    pub fn from_parts(
        x: Vec<f64>,
        reference: Vec<f64>,
        means: Vec<f64>,
        tau: f64,
        groups: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if reference.len() != x.len() || means.len() != x.len() {
            return Err(Error::shape("MaskContext reference", x.len(), reference.len()));
        }
        if groups.len() > MAX_ACTIVE {
            return Err(Error::arg(alloc::format!(
                "{} active variables exceed the exact limit of {MAX_ACTIVE}",
                groups.len()
            )));
        }
        let mut seen = vec![false; x.len()];
        for &i in groups.iter().flatten() {
            if i >= x.len() || seen[i] {
                return Err(Error::arg("active groups must be disjoint indices inside the input"));
            }
            seen[i] = true;
        }
        if x.iter().chain(&reference).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MaskContext input".into()));
        }
        Ok(Self {
            x,
            reference,
            means,
            tau,
            groups,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn n_active(&self) -> usize {
        self.groups.len()
    }

    pub fn num_masks(&self) -> usize {
        1 << self.groups.len()
    }

    /// `x_T`: present variables keep `x`, everything else takes `r`.
    pub fn masked_input(&self, mask: usize) -> Vec<f64> {
        debug_assert!(mask < self.num_masks());
        let mut out = self.reference.clone();
        for (bit, group) in self.groups.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                for &i in group {
                    out[i] = self.x[i];
                }
            }
        }
        out
    }

    /// The same context around `x + noise`; the reference point stays fixed.
    pub fn perturbed(&self, noise: &[f64]) -> Result<Self> {
        if noise.len() != self.x.len() {
            return Err(Error::shape("MaskContext::perturbed", self.x.len(), noise.len()));
        }
        let x = self.x.iter().zip(noise).map(|(a, b)| a + b).collect();
        Self::from_parts(x, self.reference.clone(), self.means.clone(), self.tau, self.groups.clone())
    }
}

/// `log(p / (1 - p))` with `p` clamped away from 0 and 1.
pub fn log_odds(p: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    math::log(p / (1.0 - p))
}

/// Log-odds of class `label` under the classifier's predictive distribution.
pub fn output_logit<C: Classifier + ?Sized>(model: &C, input: &[f64], label: usize) -> Result<f64> {
    if label >= model.num_classes() {
        return Err(Error::arg("label index out of range"));
    }
    Ok(log_odds(model.probabilities(input)?[label]))
}

/// In-place Möbius transform over the subset lattice (`O(n 2^n)`).
pub fn mobius_in_place(values: &mut [f64]) {
    let n = values.len();
    let mut bit = 1;
    while bit < n {
        for m in 0..n {
            if m & bit != 0 {
                values[m] -= values[m ^ bit];
            }
        }
        bit <<= 1;
    }
}

/// In-place zeta transform (subset sums), the inverse of [`mobius_in_place`].
pub fn zeta_in_place(values: &mut [f64]) {
    let n = values.len();
    let mut bit = 1;
    while bit < n {
        for m in 0..n {
            if m & bit != 0 {
                values[m] += values[m ^ bit];
            }
        }
        bit <<= 1;
    }
}

fn check_table_len(len: usize) -> Result<usize> {
    if !len.is_power_of_two() {
        return Err(Error::arg(alloc::format!("table length {len} is not a power of two")));
    }
    let n = len.trailing_zeros() as usize;
    if n > MAX_ACTIVE {
        return Err(Error::arg("table exceeds the exact-computation limit"));
    }
    Ok(n)
}

/// All `2^n` dividends of one sample together with the outputs they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTable {
    n_active: usize,
    values: Vec<f64>,
    raw: Vec<f64>,
}

impl InteractionTable {
    pub fn n_active(&self) -> usize {
        self.n_active
    }

    /// `values[m] = I(S_m)`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `raw[m] = v(x_{S_m})`.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn get(&self, mask: usize) -> f64 {
        self.values[mask]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn order(mask: usize) -> usize {
    mask.count_ones() as usize
}

/// Dividends of the set function given as `raw[m] = v(S_m)`.
pub fn harsanyi_transform(raw: &[f64]) -> Result<InteractionTable> {
    let n_active = check_table_len(raw.len())?;
    let mut values = raw.to_vec();
    mobius_in_place(&mut values);
    Ok(InteractionTable {
        n_active,
        values,
        raw: raw.to_vec(),
    })
}

/// `v(S_m) = sum over submasks of I`, rebuilt from the dividends alone.
pub fn zeta_reconstruct(table: &InteractionTable) -> Vec<f64> {
    let mut out = table.values.clone();
    zeta_in_place(&mut out);
    out
}

/// Builds a table from a set function evaluated on every mask.
pub fn table_from_fn<F>(n_active: usize, f: F) -> Result<InteractionTable>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    if n_active > MAX_ACTIVE {
        return Err(Error::arg("table exceeds the exact-computation limit"));
    }
    let raw = par::map_indexed(1 << n_active, f)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    harsanyi_transform(&raw)
}

/// Table of `v(x_T) = output_logit(model, x_T, label)` over every mask.
pub fn interaction_table<C: Classifier + ?Sized>(model: &C, ctx: &MaskContext, label: usize) -> Result<InteractionTable> {
    if model.input_dim() != ctx.x.len() {
        return Err(Error::shape("interaction_table input", model.input_dim(), ctx.x.len()));
    }
    table_from_fn(ctx.n_active(), |m| output_logit(model, &ctx.masked_input(m), label))
}

/// Concepts whose magnitude reaches a fraction of the largest one, and what
/// the rest of the table leaves unexplained.
#[derive(Debug, Clone, PartialEq)]
pub struct SalientSet {
    pub threshold: f64,
    /// `(mask, I)` pairs sorted by decreasing `|I|`, ties by mask.
    pub concepts: Vec<(usize, f64)>,
    /// `residuals[T] = v(T) - sum of salient I(S) with S ⊆ T`.
    pub residuals: Vec<f64>,
}

impl SalientSet {
    /// One-based position of `mask` in `concepts`.
    pub fn rank_of(&self, mask: usize) -> Option<usize> {
        self.concepts.iter().position(|&(m, _)| m == mask).map(|p| p + 1)
    }

    pub fn contains(&self, mask: usize) -> bool {
        self.rank_of(mask).is_some()
    }
}

/// Nonempty concepts `S` with `|I(S)| >= threshold * max |I|`.
pub fn extract_salient(table: &InteractionTable, threshold: f64) -> Result<SalientSet> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::arg("salient threshold must lie in (0, 1]"));
    }
    let max = table.values[1..].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut concepts: Vec<(usize, f64)> = if max > 0.0 {
        (1..table.len())
            .filter(|&m| table.values[m].abs() >= threshold * max)
            .map(|m| (m, table.values[m]))
            .collect()
    } else {
        Vec::new()
    };
    concepts.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    let mut rest = table.values.clone();
    for &(m, _) in &concepts {
        rest[m] = 0.0;
    }
    zeta_in_place(&mut rest);
    Ok(SalientSet {
        threshold,
        concepts,
        residuals: rest,
    })
}

/// `|I(S)|` for every nonempty `S`, largest first.
pub fn sparsity_curve(table: &InteractionTable) -> Vec<f64> {
    let mut mags: Vec<f64> = table.values[1..].iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags
}

/// Restricts which input indices the active-variable sampler may pick.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionFilter {
    All,
    /// Inputs form a row-major `width x height` grid; keep the centred
    /// `region_width x region_height` block.
    CentralRegion {
        width: usize,
        height: usize,
        region_width: usize,
        region_height: usize,
    },
    Indices(Vec<usize>),
}

impl RegionFilter {
    pub fn candidates(&self, n_total: usize) -> Result<Vec<usize>> {
        match self {
            RegionFilter::All => Ok((0..n_total).collect()),
            RegionFilter::CentralRegion {
                width,
                height,
                region_width,
                region_height,
            } => {
                if width * height != n_total || region_width > width || region_height > height {
                    return Err(Error::arg("grid filter does not fit the input"));
                }
                let (c0, r0) = ((width - region_width) / 2, (height - region_height) / 2);
                let mut out = Vec::with_capacity(region_width * region_height);
                for r in r0..r0 + region_height {
                    for c in c0..c0 + region_width {
                        out.push(r * width + c);
                    }
                }
                Ok(out)
            }
            RegionFilter::Indices(ix) => {
                if ix.iter().any(|&i| i >= n_total) {
                    return Err(Error::arg("filter index outside the input"));
                }
                let mut v = ix.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
        }
    }
}

/// Number of active variables used when none is requested.
pub fn default_n_active(n_total: usize) -> usize {
    if n_total > 16 {
        12
    } else {
        n_total
    }
}

/// Seeded uniform sample of `n_active` candidates without replacement,
/// returned in increasing order. Taking every candidate returns them as is.
pub fn sample_active_variables(n_total: usize, n_active: usize, filter: &RegionFilter, seed: u64) -> Result<Vec<usize>> {
    let mut pool = filter.candidates(n_total)?;
    if n_active > pool.len() {
        return Err(Error::arg(alloc::format!(
            "cannot pick {n_active} variables from {} candidates",
            pool.len()
        )));
    }
    if n_active == pool.len() {
        return Ok(pool);
    }
    let mut r = rng::seeded(seed);
    rng::shuffle(&mut r, &mut pool);
    pool.truncate(n_active);
    pool.sort_unstable();
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_examples() {
        assert_eq!(reference_values(&[2.0], &[0.0], 0.5).unwrap(), vec![1.5]);
        assert_eq!(reference_values(&[0.3], &[0.0], 0.5).unwrap(), vec![0.0]);
        assert_eq!(reference_values(&[0.7], &[0.7], 0.5).unwrap(), vec![0.7]);
        assert_eq!(reference_values(&[-2.0], &[0.0], 0.5).unwrap(), vec![-1.5]);
    }

    #[test]
    fn masking() {
        let ctx = MaskContext::from_parts(
            vec![1.0, 2.0, 3.0],
            vec![10.0, 20.0, 30.0],
            vec![0.0; 3],
            0.5,
            vec![vec![0], vec![1]],
        )
        .unwrap();
        assert_eq!(ctx.masked_input(0), vec![10.0, 20.0, 30.0]);
        assert_eq!(ctx.masked_input(0b11), vec![1.0, 2.0, 30.0]);
        assert_eq!(ctx.masked_input(0b01), vec![1.0, 20.0, 30.0]);
    }

    #[test]
    fn log_odds_examples() {
        assert_eq!(log_odds(0.5), 0.0);
        assert!((log_odds(0.9) - math::log(9.0)).abs() < 1e-12);
        assert!(log_odds(1.0).is_finite());
    }

    #[test]
    fn two_variable_example() {
        let t = harsanyi_transform(&[0.0, 1.0, 2.0, 5.0]).unwrap();
        assert_eq!(t.values(), &[0.0, 1.0, 2.0, 2.0]);
        assert_eq!(zeta_reconstruct(&t), vec![0.0, 1.0, 2.0, 5.0]);
        assert!(harsanyi_transform(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn single_pair_dividend_reconstructs_as_and() {
        let mut values = vec![0.0; 8];
        values[0b011] = 2.5;
        let t = InteractionTable {
            n_active: 3,
            raw: vec![],
            values,
        };
        for (m, v) in zeta_reconstruct(&t).into_iter().enumerate() {
            assert_eq!(v, if m & 0b011 == 0b011 { 2.5 } else { 0.0 });
        }
    }

    #[test]
    fn salient_extremes() {
        let t = harsanyi_transform(&[1.0, 2.0, 4.0, 9.0]).unwrap();
        // I = [1, 1, 3, 4]
        let all = extract_salient(&t, 1e-9).unwrap();
        assert_eq!(all.concepts.len(), 3);
        assert!(all.residuals.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        let top = extract_salient(&t, 1.0).unwrap();
        assert_eq!(top.concepts, vec![(3, 4.0)]);
        let zero = harsanyi_transform(&[0.0; 4]).unwrap();
        let s = extract_salient(&zero, 0.05).unwrap();
        assert!(s.concepts.is_empty() && s.residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn central_region_excludes_edges() {
        let f = RegionFilter::CentralRegion {
            width: 8,
            height: 8,
            region_width: 6,
            region_height: 6,
        };
        let c = f.candidates(64).unwrap();
        assert_eq!(c.len(), 36);
        assert!(c.iter().all(|&i| (1..7).contains(&(i / 8)) && (1..7).contains(&(i % 8))));
        let picked = sample_active_variables(64, 12, &f, 3).unwrap();
        assert_eq!(picked, sample_active_variables(64, 12, &f, 3).unwrap());
        assert_eq!(picked.len(), 12);
        assert_eq!(sample_active_variables(5, 5, &RegionFilter::All, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(sample_active_variables(64, 40, &f, 1).is_err());
    }
}
