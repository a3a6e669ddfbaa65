//! Finite-support distributions on the unit cube.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp;
use crate::norm::{lp_dist, NormIndex};

pub const PROKHOROV_TOL: f64 = 1e-4;
pub const PROKHOROV_CAP: usize = 10_000;

/// Bit pattern of a point, with `-0.0` folded into `0.0`.
fn point_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|&v| if v == 0.0 { 0 } else { v.to_bits() }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDist")]
pub struct DiscreteDist {
    support: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDist {
    support: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl TryFrom<RawDist> for DiscreteDist {
    type Error = Error;
    fn try_from(r: RawDist) -> Result<Self> {
        DiscreteDist::new(r.support, r.probs)
    }
}

impl DiscreteDist {
    /// Validates and renormalizes. Probabilities must be positive and sum to
    /// one within `1e-9`; points must be distinct and lie in `[0,1]^k`.
    pub fn new(support: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidInput("support and probs must be non-empty and aligned".into()));
        }
        let k = support[0].len();
        if k == 0 {
            return Err(Error::InvalidInput("zero-dimensional support".into()));
        }
        for x in &support {
            if x.len() != k {
                return Err(Error::InvalidInput("ragged support".into()));
            }
            if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput(format!("support point {x:?} outside [0,1]^k")));
            }
        }
        if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::BadProbabilities("probabilities must be positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::BadProbabilities(format!("probabilities sum to {total}")));
        }
        let mut seen = std::collections::HashSet::new();
        for x in &support {
            if !seen.insert(point_key(x)) {
                return Err(Error::InvalidInput(format!("duplicate support point {x:?}")));
            }
        }
        let probs = probs.iter().map(|p| p / total).collect();
        Ok(DiscreteDist { support, probs })
    }

    pub fn point_mass(x: Vec<f64>) -> Result<Self> {
        DiscreteDist::new(vec![x], vec![1.0])
    }

    /// Uniform over the given points.
    pub fn uniform(support: Vec<Vec<f64>>) -> Result<Self> {
        let n = support.len();
        DiscreteDist::new(support, vec![1.0 / n as f64; n])
    }

    /// Sums the mass of repeated points, keeping first-appearance order.
    pub fn from_weighted(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut support = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (x, w) in atoms {
            if w <= 0.0 {
                continue;
            }
            match index.get(&point_key(&x)) {
                Some(&i) => probs[i] += w,
                None => {
                    index.insert(point_key(&x), support.len());
                    support.push(x);
                    probs.push(w);
                }
            }
        }
        DiscreteDist::new(support, probs)
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&Vec<f64>, f64)> {
        self.support.iter().zip(self.probs.iter().copied())
    }

    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        let key = point_key(x);
        self.support.iter().position(|s| point_key(s) == key)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[f64] {
        &self.support[sample_index(&self.probs, rng)]
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundingParams {
    pub ell: Vec<f64>,
    pub delta: f64,
}

impl RoundingParams {
    pub fn new(ell: Vec<f64>, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidInput(format!("grid width {delta} must be positive")));
        }
        if ell.iter().any(|&l| !(0.0..=delta).contains(&l)) {
            return Err(Error::InvalidInput("offsets must lie in [0, delta]".into()));
        }
        Ok(RoundingParams { ell, delta })
    }

    /// Offsets drawn uniformly from `[0, delta]^k`.
    pub fn random<R: Rng + ?Sized>(k: usize, delta: f64, rng: &mut R) -> Result<Self> {
        let ell = (0..k).map(|_| rng.random::<f64>() * delta).collect();
        RoundingParams::new(ell, delta)
    }

    pub fn dim(&self) -> usize {
        self.ell.len()
    }

    /// Value of grid cell `m` on coordinate `j` (cell -1 is the clamp at 0).
    pub fn grid_value(&self, j: usize, m: i64) -> f64 {
        if m < 0 {
            return 0.0;
        }
        (m as f64 * self.delta + self.ell[j]).max(0.0)
    }

    /// Largest `m >= -1` with `grid_value(j, m) <= x`, evaluated with the
    /// same arithmetic that produces grid points so that rounding is
    /// idempotent on the grid.
    pub fn cell(&self, j: usize, x: f64) -> i64 {
        let raw = |m: i64| m as f64 * self.delta + self.ell[j];
        let mut m = ((x - self.ell[j]) / self.delta).floor() as i64;
        while raw(m + 1) <= x {
            m += 1;
        }
        while m > -1 && raw(m) > x {
            m -= 1;
        }
        m.max(-1)
    }

    pub fn cells(&self, x: &[f64]) -> Vec<i64> {
        x.iter().enumerate().map(|(j, &v)| self.cell(j, v)).collect()
    }
}

/// `r_j(x) = max(floor((x_j - l_j)/delta) * delta + l_j, 0)`.
pub fn round_point(x: &[f64], rp: &RoundingParams) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(j, &v)| rp.grid_value(j, rp.cell(j, v)))
        .collect()
}

/// Pushforward of `f` under `round_point`, merging points in the same cell.
pub fn round_dist(f: &DiscreteDist, rp: &RoundingParams) -> DiscreteDist {
    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut support = Vec::new();
    let mut probs: Vec<f64> = Vec::new();
    for (x, p) in f.atoms() {
        let key = rp.cells(x);
        match index.get(&key) {
            Some(&i) => probs[i] += p,
            None => {
                index.insert(key.clone(), support.len());
                support.push(
                    key.iter()
                        .enumerate()
                        .map(|(j, &m)| rp.grid_value(j, m))
                        .collect(),
                );
                probs.push(p);
            }
        }
    }
    DiscreteDist::new(support, probs).expect("rounding keeps a valid distribution")
}

fn normalized(hits: Vec<(Vec<f64>, f64)>) -> Result<Vec<(Vec<f64>, f64)>> {
    if hits.is_empty() {
        return Err(Error::EmptyCube);
    }
    let mass: f64 = hits.iter().map(|h| h.1).sum();
    Ok(hits.into_iter().map(|(x, p)| (x, p / mass)).collect())
}

/// Exact law of `f` conditioned on the rounding cell `cells`: the cube of
/// the grid point, with membership decided on cell indices rather than on
/// `corner + width`.
pub fn cell_law(f: &DiscreteDist, rp: &RoundingParams, cells: &[i64]) -> Result<Vec<(Vec<f64>, f64)>> {
    let hits = f
        .atoms()
        .filter(|(x, _)| x.iter().all(|&v| v >= 0.0) && rp.cells(x) == cells)
        .map(|(x, p)| (x.clone(), p))
        .collect();
    normalized(hits)
}

fn in_cube(x: &[f64], corner: &[f64], widths: &[f64]) -> bool {
    x.iter()
        .zip(corner.iter().zip(widths))
        .all(|(&v, (&c, &w))| v >= c && v < c + w)
}

/// Exact law of `f` conditioned on the half-open cube `prod [x_j, x_j + w_j)`.
pub fn conditional_law(f: &DiscreteDist, corner: &[f64], widths: &[f64]) -> Result<Vec<(Vec<f64>, f64)>> {
    let hits = f
        .atoms()
        .filter(|(x, _)| in_cube(x, corner, widths))
        .map(|(x, p)| (x.clone(), p))
        .collect();
    normalized(hits)
}

pub fn conditional_sample<R: Rng + ?Sized>(
    f: &DiscreteDist,
    corner: &[f64],
    widths: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let law = conditional_law(f, corner, widths)?;
    let probs: Vec<f64> = law.iter().map(|l| l.1).collect();
    Ok(law[sample_index(&probs, rng)].0.clone())
}

/// Index of the nearest support point; ties go to the lowest index.
pub fn closest_support_index(f: &DiscreteDist, x: &[f64], p: NormIndex) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, s) in f.support().iter().enumerate() {
        let d = lp_dist(s, x, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

pub fn closest_support_point(f: &DiscreteDist, x: &[f64], p: NormIndex) -> Vec<f64> {
    f.support()[closest_support_index(f, x, p)].clone()
}

/// Half the l1 distance between the probability vectors.
pub fn tv_distance(f: &DiscreteDist, g: &DiscreteDist) -> f64 {
    let mut diff: HashMap<Vec<u64>, f64> = HashMap::new();
    for (x, p) in f.atoms() {
        *diff.entry(point_key(x)).or_insert(0.0) += p;
    }
    for (x, p) in g.atoms() {
        *diff.entry(point_key(x)).or_insert(0.0) -= p;
    }
    let mut vals: Vec<f64> = diff.values().map(|v| v.abs()).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    0.5 * vals.iter().sum::<f64>()
}

/// Largest coupled mass on pairs at lp distance at most `eps`.
pub fn admissible_mass(f: &DiscreteDist, g: &DiscreteDist, dist: &[Vec<f64>], eps: f64) -> Result<f64> {
    let pairs: Vec<(usize, usize)> = (0..f.len())
        .flat_map(|i| (0..g.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| dist[i][j] <= eps)
        .collect();
    lp::max_coupled_mass(f.probs(), g.probs(), &pairs)
}

/// Prokhorov distance in the lp metric.
///
/// `eps` is feasible when some coupling puts mass at least `1 - eps` on
/// pairs within distance `eps`. Bisection brackets the smallest feasible
/// value; the answer is then snapped to the exact breakpoint when one lies
/// at the top of the bracket.
pub fn prokhorov_distance(f: &DiscreteDist, g: &DiscreteDist, p: NormIndex, tol: f64) -> Result<f64> {
    // canonical argument order
    if canonical_cmp(f, g) == std::cmp::Ordering::Greater {
        prokhorov_ordered(g, f, p, tol)
    } else {
        prokhorov_ordered(f, g, p, tol)
    }
}

fn canonical_cmp(f: &DiscreteDist, g: &DiscreteDist) -> std::cmp::Ordering {
    let bits = |d: &DiscreteDist| -> Vec<u64> {
        d.support()
            .iter()
            .flatten()
            .chain(d.probs())
            .map(|v| v.to_bits())
            .collect()
    };
    f.len().cmp(&g.len()).then_with(|| bits(f).cmp(&bits(g)))
}

fn prokhorov_ordered(f: &DiscreteDist, g: &DiscreteDist, p: NormIndex, tol: f64) -> Result<f64> {
    let size = f.len() * g.len();
    if size > PROKHOROV_CAP {
        return Err(Error::TooLarge {
            size,
            cap: PROKHOROV_CAP,
        });
    }
    if f.dim() != g.dim() {
        return Err(Error::ShapeMismatch {
            expected: f.dim(),
            found: g.dim(),
        });
    }
    let dist: Vec<Vec<f64>> = f
        .support()
        .iter()
        .map(|x| g.support().iter().map(|y| lp_dist(x, y, p)).collect())
        .collect();
    let slack = 1e-12;
    let feasible = |eps: f64| -> Result<bool> { Ok(admissible_mass(f, g, &dist, eps)? >= 1.0 - eps - slack) };
    if feasible(0.0)? {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let below = dist
        .iter()
        .flatten()
        .copied()
        .filter(|&v| v <= hi)
        .fold(f64::NEG_INFINITY, f64::max);
    if below.is_finite() {
        let m = admissible_mass(f, g, &dist, below)?;
        let cand = below.max(1.0 - m);
        if cand <= hi {
            return Ok(cand);
        }
    }
    Ok(hi)
}

/// Query interface to a latent prior: conditional laws on cubes and
/// nearest support points. Mechanisms see priors only through this trait.
pub trait PriorOracle: Send + Sync {
    fn dim(&self) -> usize;
    fn conditional(&self, corner: &[f64], widths: &[f64]) -> Result<Vec<(Vec<f64>, f64)>>;
    fn cell_conditional(&self, rp: &RoundingParams, cells: &[i64]) -> Result<Vec<(Vec<f64>, f64)>>;
    fn closest_point(&self, x: &[f64], p: NormIndex) -> Vec<f64>;
}

impl PriorOracle for DiscreteDist {
    fn dim(&self) -> usize {
        DiscreteDist::dim(self)
    }
    fn conditional(&self, corner: &[f64], widths: &[f64]) -> Result<Vec<(Vec<f64>, f64)>> {
        conditional_law(self, corner, widths)
    }
    fn cell_conditional(&self, rp: &RoundingParams, cells: &[i64]) -> Result<Vec<(Vec<f64>, f64)>> {
        cell_law(self, rp, cells)
    }
    fn closest_point(&self, x: &[f64], p: NormIndex) -> Vec<f64> {
        closest_support_point(self, x, p)
    }
}

/// Prior handle that counts how often it is consulted.
pub struct CountingPrior<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: PriorOracle> CountingPrior<P> {
    pub fn new(inner: P) -> Self {
        CountingPrior {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: PriorOracle> PriorOracle for CountingPrior<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn conditional(&self, corner: &[f64], widths: &[f64]) -> Result<Vec<(Vec<f64>, f64)>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.conditional(corner, widths)
    }
    fn cell_conditional(&self, rp: &RoundingParams, cells: &[i64]) -> Result<Vec<(Vec<f64>, f64)>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.cell_conditional(rp, cells)
    }
    fn closest_point(&self, x: &[f64], p: NormIndex) -> Vec<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.closest_point(x, p)
    }
}
