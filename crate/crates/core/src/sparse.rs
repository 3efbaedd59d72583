//! Support-agnostic Bayesian sparse recovery.
//!
//! For a unit-norm patch `y = A h + w` with `w ~ N(0, sigma^2 I)`, the MMSE
//! estimate of `h` is the posterior-weighted sum of per-support conditional
//! means. Here the conditional mean is replaced by the least-squares (BLUE)
//! fit on the support, the likelihood of a support is the Gaussian density
//! of the residual left after projecting `y` off the span of its atoms, and
//! the support prior is an independent Bernoulli product with one activity
//! probability per atom. The sum runs over a small dominant set of supports
//! found by a greedy beam search, and the same posteriors yield the per-atom
//! activity probabilities `lambda`.
//!
//! Least-squares fits are done with an incrementally grown orthonormal basis
//! (Gram-Schmidt with one re-orthogonalization pass), so the orthogonal
//! projector is never formed.

use std::collections::HashSet;

use crate::dict::{dot, Dictionary};
use crate::error::{Error, Result};

/// Default clamp for per-atom activity probabilities.
pub const LAMBDA_MIN: f64 = 1e-4;

/// Remainder norm below which a new atom is treated as linearly dependent on
/// the atoms already selected (atoms are unit norm).
const RANK_TOL: f64 = 1e-10;

/// Per-atom prior activity probabilities, clamped to
/// `[lambda_min, 1 - lambda_min]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsePrior {
    tap_probs: Vec<f64>,
    /// `log(p / (1 - p))` per atom.
    log_odds: Vec<f64>,
    /// `sum_j log(1 - p_j)`, the log-prior of the empty support.
    log_empty: f64,
}

impl SparsePrior {
    pub fn new(probs: &[f64], lambda_min: f64) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_min < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "lambda_min must lie in (0, 0.5), got {lambda_min}"
            )));
        }
        if probs.iter().any(|p| p.is_nan()) {
            return Err(Error::InvalidParameter("prior probability is NaN".into()));
        }
        let tap_probs: Vec<f64> =
            probs.iter().map(|p| p.clamp(lambda_min, 1.0 - lambda_min)).collect();
        let log_odds = tap_probs.iter().map(|p| (p / (1.0 - p)).ln()).collect();
        let log_empty = tap_probs.iter().map(|p| (1.0 - p).ln()).sum();
        Ok(SparsePrior { tap_probs, log_odds, log_empty })
    }

    /// Every atom active with the same probability `p`.
    pub fn uniform(num_atoms: usize, p: f64, lambda_min: f64) -> Result<Self> {
        SparsePrior::new(&vec![p; num_atoms], lambda_min)
    }

    pub fn tap_probs(&self) -> &[f64] {
        &self.tap_probs
    }

    pub fn len(&self) -> usize {
        self.tap_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tap_probs.is_empty()
    }

    fn log_prior_of(&self, support: &[usize]) -> f64 {
        self.log_empty + support.iter().map(|&j| self.log_odds[j]).sum::<f64>()
    }
}

/// `sum_{j in S} log p_j + sum_{j not in S} log(1 - p_j)`.
pub fn log_support_prior(prior: &SparsePrior, support: &[usize]) -> Result<f64> {
    if let Some(&j) = support.iter().find(|&&j| j >= prior.len()) {
        return Err(Error::InvalidParameter(format!(
            "support index {j} out of range for {} taps",
            prior.len()
        )));
    }
    Ok(prior.log_prior_of(support))
}

/// Search parameters for [`solve`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverParams {
    /// Largest support size explored.
    pub max_support: usize,
    /// Beam width, and the number of extensions tried per beam member. A
    /// width of at least the dictionary size enumerates every support.
    pub beam_width: usize,
    /// Supports whose log-posterior is within this much of the best one form
    /// the dominant set. `f64::INFINITY` keeps every evaluated support.
    pub dominant_window: f64,
    pub lambda_min: f64,
}

impl SolverParams {
    /// Defaults for an `n x n` patch: supports up to `ceil(n^2 / 2)`, beam
    /// width 4 and a window of three decades of posterior mass.
    pub fn for_patch_size(n: usize) -> Self {
        SolverParams {
            max_support: (n * n).div_ceil(2),
            beam_width: 4,
            dominant_window: 1e3f64.ln(),
            lambda_min: LAMBDA_MIN,
        }
    }
}

/// One evaluated support.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportCandidate {
    /// Strictly increasing atom indices.
    pub support: Vec<usize>,
    /// Unnormalized log-posterior (log-likelihood plus log-prior).
    pub log_posterior: f64,
    /// Least-squares coefficients, aligned with `support`.
    pub coeffs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseEstimate {
    /// MMSE coefficient estimate over the dominant supports.
    pub coeffs: Vec<f64>,
    /// Posterior probability of each atom being active.
    pub active_probs: Vec<f64>,
    /// Dominant supports, best first.
    pub candidates: Vec<SupportCandidate>,
    /// Normalized posteriors of `candidates`.
    pub posteriors: Vec<f64>,
}

impl SparseEstimate {
    pub fn best(&self) -> &SupportCandidate {
        &self.candidates[0]
    }

    /// Normalized posterior of a support, if it is in the dominant set.
    pub fn posterior_of(&self, support: &[usize]) -> Option<f64> {
        let mut key = support.to_vec();
        key.sort_unstable();
        self.candidates
            .iter()
            .position(|c| c.support == key)
            .map(|i| self.posteriors[i])
    }

    /// Nonzero entries of `active_probs` as `(atom, probability)` pairs.
    pub fn sparse_active_probs(&self) -> Vec<(usize, f64)> {
        self.active_probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(j, &p)| (j, p))
            .collect()
    }
}

/// Orthonormal basis of the span of the selected atoms together with the
/// running least-squares residual.
#[derive(Clone)]
struct Fit {
    /// Atom indices in insertion order.
    order: Vec<usize>,
    /// Orthonormal vectors, one per selected atom.
    q: Vec<Vec<f64>>,
    /// Columns of the upper-triangular factor: `atom(order[i]) = sum_l r[i][l] q[l]`.
    r: Vec<Vec<f64>>,
    /// `q[l] . y`.
    z: Vec<f64>,
    residual: Vec<f64>,
}

impl Fit {
    fn empty(y: &[f64]) -> Self {
        Fit { order: Vec::new(), q: Vec::new(), r: Vec::new(), z: Vec::new(), residual: y.to_vec() }
    }

    fn extend(&self, dict: &Dictionary, j: usize) -> Result<Fit> {
        let mut w = dict.atom(j).to_vec();
        let mut rcol = vec![0.0; self.q.len() + 1];
        for _pass in 0..2 {
            for (l, q) in self.q.iter().enumerate() {
                let c = dot(q, &w);
                rcol[l] += c;
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        let rn = dot(&w, &w).sqrt();
        if rn <= RANK_TOL {
            return Err(Error::DegenerateSupport);
        }
        w.iter_mut().for_each(|v| *v /= rn);
        rcol[self.q.len()] = rn;
        let zn = dot(&w, &self.residual);
        let residual = self.residual.iter().zip(&w).map(|(r, q)| r - zn * q).collect();

        let mut next = self.clone();
        next.order.push(j);
        next.q.push(w);
        next.r.push(rcol);
        next.z.push(zn);
        next.residual = residual;
        Ok(next)
    }

    fn residual_sq(&self) -> f64 {
        dot(&self.residual, &self.residual)
    }

    /// Least-squares coefficients in insertion order (back substitution).
    fn coefficients(&self) -> Vec<f64> {
        let s = self.order.len();
        let mut c = vec![0.0; s];
        for i in (0..s).rev() {
            let mut acc = self.z[i];
            for (k, ck) in c.iter().enumerate().skip(i + 1) {
                acc -= self.r[k][i] * ck;
            }
            c[i] = acc / self.r[i][i];
        }
        c
    }

    /// `(sorted support, coefficients aligned with it)`.
    fn sorted_solution(&self) -> (Vec<usize>, Vec<f64>) {
        let mut pairs: Vec<(usize, f64)> =
            self.order.iter().copied().zip(self.coefficients()).collect();
        pairs.sort_unstable_by_key(|p| p.0);
        pairs.into_iter().unzip()
    }
}

fn check_signal(dict: &Dictionary, y: &[f64]) -> Result<()> {
    if y.len() != dict.atom_len() {
        return Err(Error::DimensionMismatch(format!(
            "signal of length {} for atoms of length {}",
            y.len(),
            dict.atom_len()
        )));
    }
    Ok(())
}

fn fit_support(dict: &Dictionary, support: &[usize], y: &[f64]) -> Result<Fit> {
    check_signal(dict, y)?;
    let mut fit = Fit::empty(y);
    for &j in support {
        if j >= dict.num_atoms() {
            return Err(Error::InvalidParameter(format!(
                "atom index {j} out of range for {} atoms",
                dict.num_atoms()
            )));
        }
        fit = fit.extend(dict, j)?;
    }
    Ok(fit)
}

/// Least-squares coefficients of `y` on the atoms in `support`, aligned with
/// the order of `support`.
pub fn blue_estimate(dict: &Dictionary, support: &[usize], y: &[f64]) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::InvalidParameter("BLUE needs a nonempty support".into()));
    }
    Ok(fit_support(dict, support, y)?.coefficients())
}

/// Residual of `y` after projecting off the span of `support`.
pub fn projection_residual(dict: &Dictionary, support: &[usize], y: &[f64]) -> Result<Vec<f64>> {
    Ok(fit_support(dict, support, y)?.residual)
}

/// `-||P_perp y||^2 / (2 sigma^2)`.
pub fn log_likelihood(dict: &Dictionary, support: &[usize], y: &[f64], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(-fit_support(dict, support, y)?.residual_sq() / (2.0 * sigma * sigma))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("noise sigma must be positive, got {sigma}")))
    }
}

struct Node {
    fit: Fit,
    support: Vec<usize>,
    log_posterior: f64,
}

impl Node {
    fn new(fit: Fit, prior: &SparsePrior, sigma: f64) -> Self {
        let mut support = fit.order.clone();
        support.sort_unstable();
        let log_posterior =
            -fit.residual_sq() / (2.0 * sigma * sigma) + prior.log_prior_of(&support);
        Node { fit, support, log_posterior }
    }

    fn candidate(&self) -> SupportCandidate {
        let (support, coeffs) = self.fit.sorted_solution();
        SupportCandidate { support, log_posterior: self.log_posterior, coeffs }
    }
}

/// Higher log-posterior first, ties by lexicographic support.
fn rank(a: &Node, b: &Node) -> std::cmp::Ordering {
    b.log_posterior
        .total_cmp(&a.log_posterior)
        .then_with(|| a.support.cmp(&b.support))
}

/// The `width` atoms outside the current support with the largest absolute
/// correlation to the residual (ties to the lower index).
fn best_extensions(dict: &Dictionary, node: &Node, width: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..dict.num_atoms())
        .filter(|j| node.support.binary_search(j).is_err())
        .map(|j| (dot(dict.atom(j), &node.fit.residual).abs(), j))
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if scored.len() > width {
        scored.select_nth_unstable_by(width, order);
        scored.truncate(width);
    }
    scored.sort_unstable_by(order);
    scored.into_iter().map(|(_, j)| j).collect()
}

/// MMSE sparse estimate of `y` under `prior` with noise level `sigma`.
pub fn solve(
    dict: &Dictionary,
    y: &[f64],
    sigma: f64,
    prior: &SparsePrior,
    params: &SolverParams,
) -> Result<SparseEstimate> {
    check_signal(dict, y)?;
    check_sigma(sigma)?;
    if prior.len() != dict.num_atoms() {
        return Err(Error::DimensionMismatch(format!(
            "prior has {} taps, dictionary has {} atoms",
            prior.len(),
            dict.num_atoms()
        )));
    }
    if params.beam_width == 0 {
        return Err(Error::InvalidParameter("beam width must be at least 1".into()));
    }

    let root = Node::new(Fit::empty(y), prior, sigma);
    let mut best = root.log_posterior;
    let mut evaluated = vec![root.candidate()];
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut beam = vec![root];

    for _level in 0..params.max_support.min(dict.num_atoms()) {
        let mut children = Vec::new();
        for node in &beam {
            for j in best_extensions(dict, node, params.beam_width) {
                let mut key = node.support.clone();
                let at = key.binary_search(&j).unwrap_err();
                key.insert(at, j);
                if !seen.insert(key) {
                    continue;
                }
                // dependent atoms are skipped; the empty support always survives
                if let Ok(fit) = node.fit.extend(dict, j) {
                    children.push(Node::new(fit, prior, sigma));
                }
            }
        }
        if children.is_empty() {
            break;
        }
        evaluated.extend(children.iter().map(Node::candidate));
        children.sort_by(rank);
        // a beam as wide as the dictionary keeps every child: exhaustive search
        if params.beam_width < dict.num_atoms() {
            children.truncate(params.beam_width);
        }
        let level_best = children[0].log_posterior;
        beam = children;
        if level_best <= best {
            break;
        }
        best = level_best;
    }

    Ok(assemble(evaluated, dict.num_atoms(), params.dominant_window))
}

/// Normalizes posteriors over the dominant set and forms the MMSE estimate
/// and the per-atom activity probabilities.
fn assemble(mut evaluated: Vec<SupportCandidate>, num_atoms: usize, window: f64) -> SparseEstimate {
    evaluated.sort_by(|a, b| {
        b.log_posterior
            .total_cmp(&a.log_posterior)
            .then_with(|| a.support.cmp(&b.support))
    });
    let top = evaluated[0].log_posterior;
    evaluated.retain(|c| c.log_posterior >= top - window);
    let weights: Vec<f64> = evaluated.iter().map(|c| (c.log_posterior - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let posteriors: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let mut coeffs = vec![0.0; num_atoms];
    let mut active_probs = vec![0.0; num_atoms];
    for (cand, &w) in evaluated.iter().zip(&posteriors) {
        for (&j, &h) in cand.support.iter().zip(&cand.coeffs) {
            coeffs[j] += w * h;
            active_probs[j] += w;
        }
    }
    active_probs.iter_mut().for_each(|p| *p = p.min(1.0));
    SparseEstimate { coeffs, active_probs, candidates: evaluated, posteriors }
}

/// Re-solves with a collaborative activity prior `lambda` (clamped to
/// `[lambda_min, 1 - lambda_min]`).
pub fn refine(
    dict: &Dictionary,
    y: &[f64],
    sigma: f64,
    lambda: &[f64],
    params: &SolverParams,
) -> Result<SparseEstimate> {
    let prior = SparsePrior::new(lambda, params.lambda_min)?;
    solve(dict, y, sigma, &prior, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dict::{build_dictionary, decorrelate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(len: usize) -> Dictionary {
        let atoms = (0..len)
            .map(|j| (0..len).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Dictionary::from_columns(len, atoms).unwrap()
    }

    fn random_dict(rng: &mut ChaCha8Rng, len: usize, m: usize) -> Dictionary {
        let atoms = (0..m)
            .map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        Dictionary::from_columns(len, atoms).unwrap()
    }

    #[test]
    fn blue_on_orthonormal_atoms_is_inner_product() {
        let d = identity(9);
        let y: Vec<f64> = (0..9).map(|i| i as f64 - 3.5).collect();
        let c = blue_estimate(&d, &[7, 2, 4], &y).unwrap();
        assert_eq!(c.len(), 3);
        for (cj, j) in c.iter().zip([7, 2, 4]) {
            assert!((cj - y[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn blue_exact_representation() {
        let d = decorrelate(&build_dictionary(3, 4.0).unwrap(), 0.95).unwrap();
        let y: Vec<f64> = d.atom(5).iter().map(|v| 2.0 * v).collect();
        let c = blue_estimate(&d, &[5], &y).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dependent_support_is_degenerate() {
        let atoms = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0, 0.0]];
        let d = Dictionary::from_columns(4, atoms).unwrap();
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(blue_estimate(&d, &[0, 1, 2], &y), Err(Error::DegenerateSupport)));
        assert!(matches!(blue_estimate(&d, &[1, 1], &y), Err(Error::DegenerateSupport)));
        assert!(blue_estimate(&d, &[], &y).is_err());
    }

    #[test]
    fn likelihood_edge_cases() {
        let d = identity(4);
        let y = [1.0, 2.0, 0.0, 0.0];
        let sigma = 0.5;
        let empty = log_likelihood(&d, &[], &y, sigma).unwrap();
        assert!((empty - -5.0 / (2.0 * 0.25)).abs() < 1e-12);
        assert!(log_likelihood(&d, &[0, 1], &y, sigma).unwrap().abs() < 1e-14);
        assert!(log_likelihood(&d, &[0], &y, 0.0).is_err());
    }

    #[test]
    fn prior_matches_bernoulli_product() {
        let p = 0.2;
        let prior = SparsePrior::uniform(10, p, LAMBDA_MIN).unwrap();
        let got = log_support_prior(&prior, &[1, 4, 9]).unwrap();
        let want = 3.0 * p.ln() + 7.0 * (1.0 - p).ln();
        assert!((got - want).abs() < 1e-12);

        let half = SparsePrior::uniform(4, 0.5, LAMBDA_MIN).unwrap();
        assert!((log_support_prior(&half, &[]).unwrap() - 4.0 * 0.5f64.ln()).abs() < 1e-12);

        let taps = SparsePrior::new(&[0.9, 0.1, 0.1], LAMBDA_MIN).unwrap();
        let direct = 0.9f64.ln() + (1.0f64 - 0.1).ln() + (1.0f64 - 0.1).ln();
        assert!((log_support_prior(&taps, &[0]).unwrap() - direct).abs() < 1e-12);
        assert!(log_support_prior(&taps, &[3]).is_err());
    }

    #[test]
    fn prior_clamps_certain_taps() {
        let prior = SparsePrior::new(&[0.0, 1.0, 0.5], LAMBDA_MIN).unwrap();
        assert_eq!(prior.tap_probs(), &[LAMBDA_MIN, 1.0 - LAMBDA_MIN, 0.5]);
        for s in [&[][..], &[0], &[1], &[0, 1, 2]] {
            assert!(log_support_prior(&prior, s).unwrap().is_finite());
        }
    }

    #[test]
    fn zero_signal_prefers_empty_support() {
        let d = decorrelate(&build_dictionary(3, 4.0).unwrap(), 0.95).unwrap();
        let prior = SparsePrior::uniform(d.num_atoms(), 0.1, LAMBDA_MIN).unwrap();
        let est = solve(&d, &[0.0; 9], 0.1, &prior, &SolverParams::for_patch_size(3)).unwrap();
        assert!(est.best().support.is_empty());
        assert!(est.coeffs.iter().all(|&h| h == 0.0));
        assert!(est.active_probs.iter().all(|&p| p < 0.2));
    }

    #[test]
    fn single_atom_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_dict(&mut rng, 9, 12);
        let y: Vec<f64> =
            d.atom(3).iter().map(|v| 5.0 * v + rng.gen_range(-0.005..0.005)).collect();
        let prior = SparsePrior::uniform(12, 0.01, LAMBDA_MIN).unwrap();
        let params = SolverParams { max_support: 3, beam_width: 12, dominant_window: f64::INFINITY, lambda_min: LAMBDA_MIN };
        let est = solve(&d, &y, 0.01, &prior, &params).unwrap();
        assert_eq!(est.best().support, vec![3]);
        assert!(est.active_probs[3] > 0.99);
    }

    #[test]
    fn posteriors_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = decorrelate(&build_dictionary(5, 4.0).unwrap(), 0.95).unwrap();
        let prior = SparsePrior::uniform(d.num_atoms(), 0.05, LAMBDA_MIN).unwrap();
        for _ in 0..20 {
            let y: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let est = solve(&d, &y, 0.3, &prior, &SolverParams::for_patch_size(5)).unwrap();
            let total: f64 = est.posteriors.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(est.active_probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
            for w in est.candidates.windows(2) {
                assert!(w[0].log_posterior >= w[1].log_posterior);
            }
            for c in &est.candidates {
                assert!(c.support.windows(2).all(|p| p[0] < p[1]));
                assert!(c.support.len() <= 13);
            }
        }
    }

    #[test]
    fn uniform_refine_equals_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = decorrelate(&build_dictionary(3, 4.0).unwrap(), 0.95).unwrap();
        let y: Vec<f64> = (0..9).map(|_| rng.gen_range(0.0..1.0)).collect();
        let params = SolverParams::for_patch_size(3);
        let prior = SparsePrior::uniform(d.num_atoms(), 0.2, params.lambda_min).unwrap();
        let a = solve(&d, &y, 0.05, &prior, &params).unwrap();
        let b = refine(&d, &y, 0.05, &vec![0.2; d.num_atoms()], &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let d = identity(4);
        let prior = SparsePrior::uniform(4, 0.1, LAMBDA_MIN).unwrap();
        let params = SolverParams::for_patch_size(2);
        assert!(solve(&d, &[0.0; 3], 0.1, &prior, &params).is_err());
        assert!(solve(&d, &[0.0; 4], -1.0, &prior, &params).is_err());
        let short = SparsePrior::uniform(3, 0.1, LAMBDA_MIN).unwrap();
        assert!(solve(&d, &[0.0; 4], 0.1, &short, &params).is_err());
    }
}
