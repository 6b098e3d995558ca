//! Bernoulli designs and exact expectations of products of centered weights
//! `w_j = (Z_j - p_j) / (p_j (1 - p_j))` and raw indicators `Z_j`.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::subset::{self, for_each_bounded_subset};

/// Independent Bernoulli treatment probabilities with a global floor.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    probs: Vec<f64>,
    floor: f64,
}

impl Design {
    /// Every unit treated with probability `p`.
    pub fn uniform(n: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; n])
    }

    /// Per-unit probabilities; the floor is the tightest one they satisfy.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        for &p in &probs {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidProbability(p));
            }
        }
        let floor = probs.iter().map(|&p| p.min(1.0 - p)).fold(0.5, f64::min);
        Ok(Design { probs, floor })
    }

    /// Per-unit probabilities checked against an explicit floor.
    pub fn with_floor(probs: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor <= 0.5) {
            return Err(Error::InvalidProbability(floor));
        }
        for (unit, &p) in probs.iter().enumerate() {
            if !(p >= floor && p <= 1.0 - floor) {
                return Err(Error::ProbabilityFloor { unit, p, floor });
            }
        }
        Ok(Design { probs, floor })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn p(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// The common probability when all units share one.
    pub fn uniform_p(&self) -> Option<f64> {
        let first = *self.probs.first()?;
        self.probs.iter().all(|&p| p == first).then_some(first)
    }

    /// Probability of a full assignment.
    pub fn assignment_prob(&self, z: &[bool]) -> f64 {
        z.iter().zip(&self.probs).map(|(&zi, &p)| if zi { p } else { 1.0 - p }).product()
    }

    /// Draws one assignment.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<bool> {
        self.probs.iter().map(|&p| rng.random::<f64>() < p).collect()
    }

    /// The design restricted to `units`, keeping the global floor.
    pub fn restrict(&self, units: &[usize]) -> Self {
        Design { probs: units.iter().map(|&i| self.probs[i]).collect(), floor: self.floor }
    }

    /// The centered weight `(z - p_j) / (p_j (1 - p_j))`.
    pub fn weight(&self, j: usize, z: bool) -> f64 {
        let p = self.probs[j];
        if z {
            1.0 / p
        } else {
            -1.0 / (1.0 - p)
        }
    }
}

/// `g(S) = ∏(1 - p_j) - ∏(-p_j)` over `j ∈ S`.
pub fn g_coeff(s: &[usize], design: &Design) -> f64 {
    let (mut a, mut b) = (1.0, 1.0);
    for &j in s {
        let p = design.p(j);
        a *= 1.0 - p;
        b *= -p;
    }
    a - b
}

/// `E[w^a Z^b]` for `Z ~ Bernoulli(p)` and `w = (Z - p)/(p(1-p))`, by summing
/// over the two outcomes of `Z`. Any `b ≥ 1` acts like `b = 1`.
pub fn bernoulli_moment(a: u32, b: u32, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    let treated = p * (1.0 / p).powi(a as i32);
    let control = if b == 0 { (1.0 - p) * (-1.0 / (1.0 - p)).powi(a as i32) } else { 0.0 };
    Ok(treated + control)
}

/// Integrand `∏_j w_j^{a_j} ∏_{k ∈ indicators} Z_k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MomentSpec {
    pub weight_exponents: BTreeMap<usize, u32>,
    pub indicators: BTreeSet<usize>,
}

impl MomentSpec {
    pub fn new() -> Self {
        Self::default()
    }

    /// Multiplies the integrand by `w_j` for every `j` in `s`.
    pub fn weights(mut self, s: &[usize]) -> Self {
        for &j in s {
            *self.weight_exponents.entry(j).or_insert(0) += 1;
        }
        self
    }

    /// Multiplies the integrand by `Z_k` for every `k` in `s`.
    pub fn indicators(mut self, s: &[usize]) -> Self {
        self.indicators.extend(s.iter().copied());
        self
    }
}

/// `E` of the spec's integrand; factors over units by independence.
///
/// # Panics
/// If an index is outside the design.
pub fn expect_product(spec: &MomentSpec, design: &Design) -> f64 {
    let mut acc = 1.0;
    for (&j, &a) in &spec.weight_exponents {
        let b = spec.indicators.contains(&j) as u32;
        acc *= bernoulli_moment(a, b, design.p(j)).expect("design probabilities are valid");
    }
    for &k in spec.indicators.iter().filter(|k| !spec.weight_exponents.contains_key(k)) {
        acc *= design.p(k);
    }
    acc
}

/// `M_{i,i2} = E[ω_i ω_{i2}] = Σ g(S)² ∏_{j ∈ S} 1/(p_j(1-p_j))` over shared
/// subsets of size at most `beta`.
pub fn pair_gram(g: &Graph, design: &Design, beta: usize, i: usize, i2: usize) -> f64 {
    let shared = subset::intersect(g.in_neighbors(i), g.in_neighbors(i2));
    let mut total = 0.0;
    for_each_bounded_subset(&shared, beta, |s| {
        if s.is_empty() {
            return;
        }
        let gs = g_coeff(s, design);
        let inv: f64 = s.iter().map(|&j| 1.0 / (design.p(j) * (1.0 - design.p(j)))).product();
        total += gs * gs * inv;
    });
    total
}

/// `E[ω_i ω_{i2} ∏_{k ∈ S} Z_k]` for `S ⊆ N_i`.
pub fn vim_kernel(g: &Graph, design: &Design, beta: usize, i: usize, i2: usize, s: &[usize]) -> f64 {
    weighted_pair_moment(g.in_neighbors(i), g.in_neighbors(i2), s, beta, design)
}

/// The same expectation as [`vim_kernel`], computed as the literal double sum
/// over `S' ∈ S_i^β`, `T ∈ S_{i2}^β` of `g(S') g(T) E[∏w ∏w ∏Z]`.
pub fn vim_kernel_full_sum(g: &Graph, design: &Design, beta: usize, i: usize, i2: usize, s: &[usize]) -> f64 {
    let left = subset::bounded_subsets(g.in_neighbors(i), beta);
    let right = subset::bounded_subsets(g.in_neighbors(i2), beta);
    let mut total = 0.0;
    for a in left.iter().filter(|a| !a.is_empty()) {
        for b in right.iter().filter(|b| !b.is_empty()) {
            let spec = MomentSpec::new().weights(a).weights(b).indicators(s);
            total += g_coeff(a, design) * g_coeff(b, design) * expect_product(&spec, design);
        }
    }
    total
}

/// `E[ω_a ω_b ∏_{k ∈ U} Z_k]` for weights built on neighborhoods `na`, `nb`
/// and an arbitrary sorted indicator set `U`.
///
/// A pair `(S', T)` contributes only when every index of `S' △ T` lies in `U`
/// (a lone `w_j` without `Z_j` has mean zero). Writing `C = S' ∩ T`,
/// `D1 = S' \ T` and `D2 = T \ S'`, the sum runs over `D1 ⊆ U ∩ na`,
/// `D2 ⊆ U ∩ nb` and `C ⊆ na ∩ nb`, with per-index factors `E[w Z] = 1`,
/// `E[w²] = 1/(p(1-p))`, `E[w² Z] = 1/p` and `E[Z] = p`.
pub fn weighted_pair_moment(na: &[usize], nb: &[usize], u: &[usize], beta: usize, design: &Design) -> f64 {
    let shared = subset::intersect(na, nb);
    let ua = subset::intersect(u, na);
    let ub = subset::intersect(u, nb);
    let p_all: f64 = u.iter().map(|&k| design.p(k)).product();
    let ratio: Vec<f64> = shared
        .iter()
        .map(|&c| {
            let p = design.p(c);
            if u.binary_search(&c).is_ok() {
                1.0 / (p * p)
            } else {
                1.0 / (p * (1.0 - p))
            }
        })
        .collect();

    let mut total = 0.0;
    let mut free: Vec<usize> = Vec::with_capacity(shared.len());
    for_each_bounded_subset(&ua, beta, |d1| {
        let rest_b = subset::difference(&ub, d1);
        for_each_bounded_subset(&rest_b, beta, |d2| {
            let (a1, b1) = products(d1, design);
            let (a2, b2) = products(d2, design);
            let removed: f64 = d1.iter().chain(d2).map(|&k| design.p(k)).product();
            let base = p_all / removed;
            free.clear();
            free.extend((0..shared.len()).filter(|&q| !d1.contains(&shared[q]) && !d2.contains(&shared[q])));
            let cmax = beta - d1.len().max(d2.len());
            let mut acc = 0.0;
            sum_over_c(&free, 0, cmax, &shared, &ratio, design, (a1, b1, a2, b2, 1.0), d1.is_empty(), d2.is_empty(), &mut acc);
            total += base * acc;
        });
    });
    total
}

fn products(s: &[usize], design: &Design) -> (f64, f64) {
    s.iter().fold((1.0, 1.0), |(a, b), &j| (a * (1.0 - design.p(j)), b * -design.p(j)))
}

#[allow(clippy::too_many_arguments)]
fn sum_over_c(
    free: &[usize],
    start: usize,
    left: usize,
    shared: &[usize],
    ratio: &[f64],
    design: &Design,
    state: (f64, f64, f64, f64, f64),
    s_empty: bool,
    t_empty: bool,
    acc: &mut f64,
) {
    let (a1, b1, a2, b2, m) = state;
    if !s_empty && !t_empty {
        *acc += (a1 - b1) * (a2 - b2) * m;
    }
    if left == 0 {
        return;
    }
    for k in start..free.len() {
        let q = free[k];
        let p = design.p(shared[q]);
        let next = (a1 * (1.0 - p), b1 * -p, a2 * (1.0 - p), b2 * -p, m * ratio[q]);
        sum_over_c(free, k + 1, left - 1, shared, ratio, design, next, false, false, acc);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> (Graph, Design) {
        (Graph::from_in_neighbors(vec![vec![1], vec![0], vec![]]).unwrap(), Design::uniform(3, 0.5).unwrap())
    }

    /// `E[f(Z)]` by brute-force enumeration of all assignments.
    fn enumerate(design: &Design, f: impl Fn(&[bool]) -> f64) -> f64 {
        let n = design.len();
        (0u32..1 << n)
            .map(|bits| {
                let z: Vec<bool> = (0..n).map(|k| bits >> k & 1 == 1).collect();
                design.assignment_prob(&z) * f(&z)
            })
            .sum()
    }

    fn omega(g: &Graph, design: &Design, beta: usize, i: usize, z: &[bool]) -> f64 {
        g.neighbor_subsets(i, beta).unwrap().iter().map(|s| g_coeff(s, design) * s.iter().map(|&j| design.weight(j, z[j])).product::<f64>()).sum()
    }

    #[test]
    fn g_examples() {
        let d = Design::uniform(3, 0.5).unwrap();
        assert_eq!(g_coeff(&[], &d), 0.0);
        assert_eq!(g_coeff(&[1], &d), 1.0);
        assert_eq!(g_coeff(&[0, 2], &d), 0.0);
    }

    #[test]
    fn moment_examples() {
        for p in [0.1, 0.3, 0.5, 0.9] {
            assert!(bernoulli_moment(1, 0, p).unwrap().abs() < 1e-14);
            assert!((bernoulli_moment(1, 1, p).unwrap() - 1.0).abs() < 1e-14);
            assert!((bernoulli_moment(2, 0, p).unwrap() - 1.0 / (p * (1.0 - p))).abs() < 1e-12);
            assert!((bernoulli_moment(0, 1, p).unwrap() - p).abs() < 1e-15);
        }
        assert!((bernoulli_moment(2, 1, 0.5).unwrap() - 2.0).abs() < 1e-15);
        assert!(bernoulli_moment(1, 0, 1.0).is_err());
    }

    #[test]
    fn moments_match_two_point_enumeration() {
        for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
            for a in 0..=4u32 {
                for b in 0..=1u32 {
                    let w = |z: f64| (z - p) / (p * (1.0 - p));
                    let direct = (1.0 - p) * w(0.0).powi(a as i32) * 0f64.powi(b as i32) + p * w(1.0).powi(a as i32);
                    let m = bernoulli_moment(a, b, p).unwrap();
                    assert!((m - direct).abs() <= 1e-14 * direct.abs().max(1.0), "{a} {b} {p}");
                }
            }
        }
    }

    #[test]
    fn toy_second_moments() {
        let (g, d) = toy();
        assert!((pair_gram(&g, &d, 1, 0, 0) - 8.0).abs() < 1e-12);
        assert!((pair_gram(&g, &d, 1, 0, 1) - 8.0).abs() < 1e-12);
        assert!((pair_gram(&g, &d, 1, 2, 2) - 4.0).abs() < 1e-12);
        assert_eq!(pair_gram(&g, &d, 1, 0, 2), 0.0);
        // E[ω_1²] assembled from single products.
        let subsets = g.neighbor_subsets(0, 1).unwrap();
        let mut e = 0.0;
        for s in &subsets {
            for t in &subsets {
                e += g_coeff(s, &d) * g_coeff(t, &d) * expect_product(&MomentSpec::new().weights(s).weights(t), &d);
            }
        }
        assert!((e - 8.0).abs() < 1e-12);
        let by_enum = enumerate(&d, |z| omega(&g, &d, 1, 0, z) * omega(&g, &d, 1, 1, z));
        assert!((by_enum - 8.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_with_empty_set_is_gram() {
        let (g, d) = toy();
        for (i, k) in [(0, 0), (0, 1), (2, 2)] {
            assert!((vim_kernel(&g, &d, 1, i, k, &[]) - pair_gram(&g, &d, 1, i, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn expect_product_single_weight_is_zero() {
        let d = Design::uniform(2, 0.3).unwrap();
        assert_eq!(expect_product(&MomentSpec::new().weights(&[1]), &d), 0.0);
    }

    fn instance() -> impl Strategy<Value = (Graph, Design, usize)> {
        (2usize..7).prop_flat_map(|n| {
            (prop::collection::vec(prop::collection::vec(0..n, 0..4), n), prop::collection::vec(0.2f64..0.8, n), 1usize..=3)
                .prop_map(|(lists, probs, beta)| (Graph::from_in_neighbors(lists).unwrap(), Design::new(probs).unwrap(), beta))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn g_is_bounded(probs in prop::collection::vec(0.01f64..0.99, 0..8)) {
            let d = Design::new(probs).unwrap();
            let all: Vec<usize> = (0..d.len()).collect();
            for s in subset::bounded_subsets(&all, 8) {
                prop_assert!(g_coeff(&s, &d).abs() <= 1.0 + 1e-15);
            }
        }

        #[test]
        fn gram_and_kernel_match_enumeration((g, d, beta) in instance(), pick in any::<prop::sample::Index>()) {
            let n = g.n();
            for i in 0..n {
                let gram_ii = pair_gram(&g, &d, beta, i, i);
                let (d_in, _) = g.max_degrees();
                let pf = d.floor();
                let upper = (std::f64::consts::E * d_in as f64 / (beta as f64 * pf * (1.0 - pf))).powi(beta as i32);
                prop_assert!(gram_ii >= 4.0 - 1e-12 && gram_ii <= upper * (1.0 + 1e-12));
                for k in 0..n {
                    let exact = enumerate(&d, |z| omega(&g, &d, beta, i, z) * omega(&g, &d, beta, k, z));
                    prop_assert!((pair_gram(&g, &d, beta, i, k) - exact).abs() < 1e-9 * exact.abs().max(1.0));
                    let subsets = g.neighbor_subsets(i, beta).unwrap();
                    let s = &subsets[pick.index(subsets.len())];
                    let exact = enumerate(&d, |z| {
                        omega(&g, &d, beta, i, z) * omega(&g, &d, beta, k, z) * s.iter().map(|&j| z[j] as u8 as f64).product::<f64>()
                    });
                    let fast = vim_kernel(&g, &d, beta, i, k, s);
                    let slow = vim_kernel_full_sum(&g, &d, beta, i, k, s);
                    prop_assert!((fast - exact).abs() < 1e-9 * exact.abs().max(1.0), "{} {} {:?}: {} vs {}", i, k, s, fast, exact);
                    prop_assert!((slow - exact).abs() < 1e-9 * exact.abs().max(1.0));
                }
            }
        }

        #[test]
        fn general_indicator_sets_match_enumeration((g, d, beta) in instance(), mask in any::<u8>()) {
            let n = g.n();
            let u: Vec<usize> = (0..n).filter(|&k| mask >> k & 1 == 1).collect();
            for i in 0..n {
                for k in 0..n {
                    let exact = enumerate(&d, |z| {
                        omega(&g, &d, beta, i, z) * omega(&g, &d, beta, k, z) * u.iter().map(|&j| z[j] as u8 as f64).product::<f64>()
                    });
                    let fast = weighted_pair_moment(g.in_neighbors(i), g.in_neighbors(k), &u, beta, &d);
                    prop_assert!((fast - exact).abs() < 1e-9 * exact.abs().max(1.0));
                }
            }
        }
    }
}
