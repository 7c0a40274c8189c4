//! Order-indexed aggregates over interaction tables: variance and relative
//! stability of dividends under input noise or weight sampling, mean dividend
//! strength, and the train/test similarity of per-class mean effects.

use alloc::vec;
use alloc::vec::Vec;

use crate::bnn::BnnModel;
use crate::interaction::{self, InteractionTable, MaskContext};
use crate::math;
use crate::nn::Classifier;
use crate::par;
use crate::rng;
use crate::stats::RunningMoments;
use crate::{Error, Result};

/// Variances below this are replaced by it inside the stability ratio.
pub const STABILITY_VARIANCE_FLOOR: f64 = 1e-12;

/// Gaussian input noise `N(0, variance I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub variance: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            variance: 0.05 * 0.05,
            draws: 100,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn sigma(&self) -> f64 {
        math::sqrt(self.variance)
    }

    /// Requires a positive variance, at least two draws and `sigma < tau`.
    pub fn validate(&self, tau: f64) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::arg("noise variance must be positive"));
        }
        if self.sigma() >= tau {
            return Err(Error::arg("noise standard deviation must stay below tau"));
        }
        if self.draws < 2 {
            return Err(Error::arg("need at least two noise draws"));
        }
        Ok(())
    }
}

/// A sample to explain: its masking context and the class whose log-odds
/// define the set function.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub context: MaskContext,
    pub label: usize,
}

/// Per-order aggregates; index `s - 1` holds order `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderMetrics {
    pub n_active: usize,
    /// Mean over concepts of the dividend variance.
    pub variance: Vec<f64>,
    /// Mean over concepts of `|E[I]| / Var[I]`.
    pub stability: Vec<f64>,
    /// Mean over concepts of `|E[I]|`.
    pub strength: Vec<f64>,
    /// Concepts per order, `binomial(n_active, s)`.
    pub counts: Vec<u64>,
    /// Concepts whose variance was floored, summed over samples.
    pub floored: Vec<usize>,
    pub draws: usize,
    pub samples: usize,
}

impl OrderMetrics {
    fn empty(n_active: usize, draws: usize) -> Self {
        Self {
            n_active,
            variance: vec![0.0; n_active],
            stability: vec![0.0; n_active],
            strength: vec![0.0; n_active],
            counts: (1..=n_active).map(|s| math::binomial(n_active, s)).collect(),
            floored: vec![0; n_active],
            draws,
            samples: 0,
        }
    }

    /// Order-wise statistics of one sample's dividends across repeated draws.
    pub fn from_tables(tables: &[InteractionTable]) -> Result<Self> {
        let first = tables.first().ok_or_else(|| Error::arg("no tables"))?;
        if tables.len() < 2 {
            return Err(Error::arg("need at least two draws"));
        }
        let n = first.n_active();
        if tables.iter().any(|t| t.n_active() != n) {
            return Err(Error::arg("tables disagree on the active-set size"));
        }
        let mut moments = RunningMoments::new(first.len());
        for t in tables {
            moments.push(t.values());
        }
        let mean = moments.mean();
        let var = moments.variance();
        let mut out = Self::empty(n, tables.len());
        for m in 1..first.len() {
            let s = interaction::order(m) - 1;
            let v = var[m];
            out.variance[s] += v;
            out.strength[s] += mean[m].abs();
            if v < STABILITY_VARIANCE_FLOOR {
                out.floored[s] += 1;
            }
            out.stability[s] += mean[m].abs() / v.max(STABILITY_VARIANCE_FLOOR);
        }
        for s in 0..n {
            let c = out.counts[s] as f64;
            out.variance[s] /= c;
            out.stability[s] /= c;
            out.strength[s] /= c;
        }
        out.samples = 1;
        Ok(out)
    }

    /// Sample-averaged metrics; floored counts are summed.
    pub fn average(parts: &[OrderMetrics]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::arg("nothing to average"))?;
        let n = first.n_active;
        if parts.iter().any(|p| p.n_active != n) {
            return Err(Error::arg("metrics disagree on the active-set size"));
        }
        let mut out = Self::empty(n, first.draws);
        let k = parts.len() as f64;
        for p in parts {
            for s in 0..n {
                out.variance[s] += p.variance[s] / k;
                out.stability[s] += p.stability[s] / k;
                out.strength[s] += p.strength[s] / k;
                out.floored[s] += p.floored[s];
            }
            out.samples += p.samples;
        }
        Ok(out)
    }
}

fn check_probes<C: Classifier + ?Sized>(model: &C, probes: &[Probe]) -> Result<usize> {
    let first = probes.first().ok_or_else(|| Error::arg("no probes"))?;
    let n = first.context.n_active();
    for p in probes {
        if p.context.x().len() != model.input_dim() {
            return Err(Error::shape("probe input", model.input_dim(), p.context.x().len()));
        }
        if p.context.n_active() != n {
            return Err(Error::arg("probes disagree on the active-set size"));
        }
        if n == 0 {
            return Err(Error::arg("probes need at least one active variable"));
        }
    }
    Ok(n)
}

/// `V` and `K` under input noise: for probe `i` and draw `d` the table is
/// built around `x + eps` with `eps` seeded by `derive_path(seed, [i, d])`
/// while the reference point stays fixed.
pub fn order_variance_stability_noise<C: Classifier + ?Sized>(
    model: &C,
    probes: &[Probe],
    noise: &NoiseSpec,
) -> Result<OrderMetrics> {
    check_probes(model, probes)?;
    let mut parts = Vec::with_capacity(probes.len());
    for (i, p) in probes.iter().enumerate() {
        noise.validate(p.context.tau())?;
        let sigma = noise.sigma();
        let tables = par::map_indexed(noise.draws, |d| {
            let mut r = rng::seeded(rng::derive_path(noise.seed, &[i as u64, d as u64]));
            let mut eps = vec![0.0; p.context.x().len()];
            rng::fill_standard_normal(&mut r, &mut eps);
            eps.iter_mut().for_each(|e| *e *= sigma);
            interaction::interaction_table(model, &p.context.perturbed(&eps)?, p.label)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        parts.push(OrderMetrics::from_tables(&tables)?);
    }
    OrderMetrics::average(&parts)
}

/// `V` and `K` under weight sampling: draw `d` is the single network
/// `bnn.sample_weights(derive(seed, d))`, shared by all probes.
pub fn order_variance_stability_bnn(bnn: &BnnModel, probes: &[Probe], draws: usize, seed: u64) -> Result<OrderMetrics> {
    if draws < 2 {
        return Err(Error::arg("need at least two weight draws"));
    }
    let nets = par::map_indexed(draws, |d| bnn.sample_weights(rng::derive(seed, d as u64)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    check_probes(&nets[0], probes)?;
    let mut parts = Vec::with_capacity(probes.len());
    for p in probes {
        let tables = par::map_indexed(draws, |d| interaction::interaction_table(&nets[d], &p.context, p.label))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        parts.push(OrderMetrics::from_tables(&tables)?);
    }
    OrderMetrics::average(&parts)
}

/// Mean `|I(S)|` per order of one table; index `s - 1` holds order `s`.
pub fn table_order_strength(table: &InteractionTable) -> Vec<f64> {
    let n = table.n_active();
    let mut out = vec![0.0; n];
    for m in 1..table.len() {
        out[interaction::order(m) - 1] += table.get(m).abs();
    }
    for (s, v) in out.iter_mut().enumerate() {
        *v /= math::binomial(n, s + 1) as f64;
    }
    out
}

/// `I_strength(s)`: mean `|I(S)|` over order-`s` concepts, averaged over probes.
pub fn order_strength<C: Classifier + ?Sized>(model: &C, probes: &[Probe]) -> Result<Vec<f64>> {
    let n = check_probes(model, probes)?;
    let mut out = vec![0.0; n];
    for p in probes {
        let t = interaction::interaction_table(model, &p.context, p.label)?;
        for (o, v) in out.iter_mut().zip(table_order_strength(&t)) {
            *o += v / probes.len() as f64;
        }
    }
    Ok(out)
}

/// Rank of one planted concept on one probe where the ground truth says it
/// is present.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedRank {
    pub probe: usize,
    pub concept: usize,
    /// 1-based position in the model's salient set, `None` if not salient.
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedRecovery {
    pub planted: usize,
    pub ranks: Vec<PlantedRank>,
}

impl PlantedRecovery {
    pub fn eligible(&self) -> usize {
        self.ranks.len()
    }

    pub fn found(&self) -> usize {
        self.ranks.iter().filter(|r| r.rank.is_some()).count()
    }

    /// Mean rank over eligible pairs; `None` if any of them is not salient
    /// or nothing was eligible.
    pub fn mean_rank(&self) -> Option<f64> {
        if self.ranks.is_empty() {
            return None;
        }
        let mut sum = 0usize;
        for r in &self.ranks {
            sum += r.rank?;
        }
        Some(sum as f64 / self.ranks.len() as f64)
    }
}

/// Scores how well a model surfaces planted concepts.
///
/// `truth` is the generator's label rule evaluated on a masked input. Its
/// Harsanyi dividends over the same masks are the ground truth: a planted
/// concept counts on a probe only when its true dividend is nonzero, i.e.
/// masking actually switches the AND on that sample. Ranks come from the
/// model's salient set at `threshold` for the probe's label.
pub fn planted_recovery<C, F>(model: &C, probes: &[Probe], planted: &[usize], truth: F, threshold: f64) -> Result<PlantedRecovery>
where
    C: Classifier + ?Sized,
    F: Fn(&[f64]) -> bool + Sync,
{
    let n = check_probes(model, probes)?;
    if planted.iter().any(|&m| m == 0 || m >> n != 0) {
        return Err(Error::arg("planted masks must be non-empty subsets of the active set"));
    }
    let mut ranks = Vec::new();
    for (i, p) in probes.iter().enumerate() {
        let gt = interaction::table_from_fn(n, |m| Ok(if truth(&p.context.masked_input(m)) { 1.0 } else { 0.0 }))?;
        let present: Vec<usize> = (0..planted.len()).filter(|&c| gt.get(planted[c]).abs() > 0.5).collect();
        if present.is_empty() {
            continue;
        }
        let table = interaction::interaction_table(model, &p.context, p.label)?;
        let salient = interaction::extract_salient(&table, threshold)?;
        for c in present {
            ranks.push(PlantedRank {
                probe: i,
                concept: c,
                rank: salient.rank_of(planted[c]),
            });
        }
    }
    Ok(PlantedRecovery {
        planted: planted.len(),
        ranks,
    })
}

/// Jaccard similarity of two real vectors after splitting each into its
/// positive part and negated negative part. Returns `(sim, degenerate)`;
/// two all-zero vectors are degenerate with similarity 1.
pub fn jaccard(a: &[f64], b: &[f64]) -> Result<(f64, bool)> {
    if a.len() != b.len() {
        return Err(Error::shape("jaccard", a.len(), b.len()));
    }
    let (mut lo, mut hi) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        for (u, v) in [(x.max(0.0), y.max(0.0)), ((-x).max(0.0), (-y).max(0.0))] {
            lo += u.min(v);
            hi += u.max(v);
        }
    }
    if hi == 0.0 {
        return Ok((1.0, true));
    }
    Ok((lo / hi, false))
}

/// Similarity of one category's train and test mean effects.
#[derive(Debug, Clone, PartialEq)]
pub struct CategorySimilarity {
    pub category: usize,
    pub similarity: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationReport {
    pub order: usize,
    pub g: f64,
    pub categories: Vec<CategorySimilarity>,
}

/// Order-`m` dividends of a table, masks in increasing order.
fn order_slice(table: &InteractionTable, m: usize) -> Vec<f64> {
    (1..table.len())
        .filter(|&mask| interaction::order(mask) == m)
        .map(|mask| table.get(mask))
        .collect()
}

fn class_tables<C: Classifier + ?Sized>(model: &C, probes: &[Probe]) -> Result<Vec<(usize, InteractionTable)>> {
    par::map_indexed(probes.len(), |i| {
        let p = &probes[i];
        Ok((p.label, interaction::interaction_table(model, &p.context, p.label)?))
    })
    .into_iter()
    .collect()
}

fn mean_effects(tables: &[(usize, InteractionTable)], category: usize, m: usize) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for (_, t) in tables.iter().filter(|(c, _)| *c == category) {
        let v = order_slice(t, m);
        match &mut acc {
            None => acc = Some(v),
            Some(a) => a.iter_mut().zip(v).for_each(|(a, b)| *a += b),
        }
        count += 1;
    }
    acc.map(|mut a| {
        a.iter_mut().for_each(|v| *v /= count as f64);
        a
    })
}

/// `g(m)` for every order `m` in `orders`, with the probe label as category.
/// Categories are those present in both sets.
pub fn generalization_profile<C: Classifier + ?Sized>(
    model: &C,
    train: &[Probe],
    test: &[Probe],
    orders: &[usize],
) -> Result<Vec<GeneralizationReport>> {
    let n = check_probes(model, train)?;
    if check_probes(model, test)? != n {
        return Err(Error::arg("train and test probes disagree on the active-set size"));
    }
    let groups = train[0].context.groups();
    if train.iter().chain(test).any(|p| p.context.groups() != groups) {
        return Err(Error::arg("probes must share the active-variable convention"));
    }
    if orders.iter().any(|&m| m == 0 || m > n) {
        return Err(Error::arg("order outside 1..=n_active"));
    }
    let tr = class_tables(model, train)?;
    let te = class_tables(model, test)?;
    let mut categories: Vec<usize> = tr.iter().map(|(c, _)| *c).filter(|c| te.iter().any(|(d, _)| d == c)).collect();
    categories.sort_unstable();
    categories.dedup();
    if categories.is_empty() {
        return Err(Error::arg("no category has both train and test probes"));
    }
    orders
        .iter()
        .map(|&m| {
            let mut sims = Vec::with_capacity(categories.len());
            for &c in &categories {
                let a = mean_effects(&tr, c, m).expect("category present");
                let b = mean_effects(&te, c, m).expect("category present");
                let (similarity, degenerate) = jaccard(&a, &b)?;
                sims.push(CategorySimilarity {
                    category: c,
                    similarity,
                    degenerate,
                });
            }
            let g = sims.iter().map(|s| s.similarity).sum::<f64>() / sims.len() as f64;
            Ok(GeneralizationReport {
                order: m,
                g,
                categories: sims,
            })
        })
        .collect()
}

pub fn generalization_g<C: Classifier + ?Sized>(model: &C, train: &[Probe], test: &[Probe], order: usize) -> Result<GeneralizationReport> {
    Ok(generalization_profile(model, train, test, &[order])?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), (1.0, false));
        assert_eq!(jaccard(&[1.0, -2.0], &[-1.0, 2.0]).unwrap(), (0.0, false));
        assert_eq!(jaccard(&[0.0], &[0.0]).unwrap(), (1.0, true));
        assert_eq!(jaccard(&[1.0], &[3.0]).unwrap(), (1.0 / 3.0, false));
    }

    #[test]
    fn constant_tables_have_zero_variance() {
        let t = interaction::harsanyi_transform(&[1.0, 2.0, 3.0, 7.0]).unwrap();
        let m = OrderMetrics::from_tables(&[t.clone(), t.clone(), t]).unwrap();
        assert_eq!(m.variance, vec![0.0, 0.0]);
        assert_eq!(m.counts, vec![2, 1]);
        assert_eq!(m.floored, vec![2, 1]);
        assert_eq!(m.strength, vec![1.5, 3.0]);
    }

    struct AndModel;

    impl Classifier for AndModel {
        fn input_dim(&self) -> usize {
            3
        }
        fn num_classes(&self) -> usize {
            2
        }
        fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
            let z = 8.0 * (x[0].min(x[1]) - 0.25);
            let p = math::sigmoid(z);
            Ok(vec![1.0 - p, p])
        }
    }

    #[test]
    fn planted_and_is_recovered_first() {
        let probes: Vec<Probe> = [[0.5, 0.5, 1.0], [0.5, -1.0, 0.5], [1.0, 1.0, 0.0]]
            .iter()
            .map(|x| Probe {
                context: MaskContext::all_inputs(x.to_vec(), vec![0.0; 3], 0.5).unwrap(),
                label: 1,
            })
            .collect();
        let truth = |x: &[f64]| x[0] > 0.25 && x[1] > 0.25;
        let r = planted_recovery(&AndModel, &probes, &[0b011], truth, 0.05).unwrap();
        // only the first probe switches the AND off when masked
        assert_eq!(r.eligible(), 1);
        assert_eq!(r.ranks[0].probe, 0);
        assert_eq!(r.mean_rank(), Some(1.0));
        assert!(planted_recovery(&AndModel, &probes, &[0b1000], truth, 0.05).is_err());
    }

    #[test]
    fn noise_spec_rejects_large_sigma() {
        let n = NoiseSpec {
            variance: 0.36,
            ..NoiseSpec::default()
        };
        assert!(n.validate(0.5).is_err());
        assert!(NoiseSpec::default().validate(0.5).is_ok());
    }
}
