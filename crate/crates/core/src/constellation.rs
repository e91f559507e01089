//! Gray-labeled square QAM and Maxwell-Boltzmann probabilistic shaping.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const PROB_TOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;
const BISECTION_ENTROPY_TOL: f64 = 1e-9;

/// A finite complex constellation with symbol priors and bit labels.
///
/// `labels[i]` holds the bit label of `points[i]` as an integer whose most
/// significant of the `m` bits is bit 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    probs: Vec<f64>,
    labels: Vec<u32>,
    bits_per_symbol: usize,
    sym_order: usize,
}

/// JSON layout of a constellation: `{points: [[re, im]...], probs, labels, sym_order}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstellationDoc {
    pub points: Vec<[f64; 2]>,
    pub probs: Vec<f64>,
    pub labels: Vec<u32>,
    pub sym_order: usize,
}

impl Constellation {
    /// Builds a constellation from raw parts, checking every structural invariant.
    pub fn new(
        points: Vec<Complex64>,
        probs: Vec<f64>,
        labels: Vec<u32>,
        sym_order: usize,
    ) -> Result<Self> {
        let size = points.len();
        if size < 2 || !size.is_power_of_two() {
            return Err(Error::invalid(format!(
                "constellation size {size} is not a power of two"
            )));
        }
        if probs.len() != size || labels.len() != size {
            return Err(Error::invalid("points, probs and labels differ in length"));
        }
        if sym_order == 0 {
            return Err(Error::invalid("symmetry order must be at least 1"));
        }
        if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid("probabilities must be positive and finite"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        let bits_per_symbol = size.trailing_zeros() as usize;
        let mut seen = vec![false; size];
        for &l in &labels {
            let l = l as usize;
            if l >= size || seen[l] {
                return Err(Error::invalid("bit labels are not a bijection"));
            }
            seen[l] = true;
        }
        for i in 0..size {
            for j in (i + 1)..size {
                if (points[i] - points[j]).norm() < 1e-12 {
                    return Err(Error::invalid("constellation points are not distinct"));
                }
            }
        }
        Ok(Constellation {
            points,
            probs,
            labels,
            bits_per_symbol,
            sym_order,
        })
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of bits per symbol, `m = log2(|points|)`.
    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    /// Degree of rotational symmetry `n`.
    pub fn sym_order(&self) -> usize {
        self.sym_order
    }

    /// Bit `b` (0 = most significant) of the label of point `index`.
    #[inline]
    pub fn bit(&self, index: usize, b: usize) -> u8 {
        ((self.labels[index] >> (self.bits_per_symbol - 1 - b)) & 1) as u8
    }

    /// Average energy under the symbol priors.
    pub fn average_energy(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| p * x.norm_sqr())
            .sum()
    }

    /// Entropy of the symbol distribution in bits.
    pub fn entropy(&self) -> f64 {
        entropy_bits(&self.probs)
    }

    /// Points scaled back onto the odd-integer lattice `{±1, ±3, ...}²`.
    fn lattice(&self) -> Vec<Complex64> {
        let unit = self
            .points
            .iter()
            .map(|p| p.re.abs())
            .fold(f64::INFINITY, f64::min);
        self.points.iter().map(|p| p / unit).collect()
    }

    pub fn to_doc(&self) -> ConstellationDoc {
        ConstellationDoc {
            points: self.points.iter().map(|p| [p.re, p.im]).collect(),
            probs: self.probs.clone(),
            labels: self.labels.clone(),
            sym_order: self.sym_order,
        }
    }

    pub fn from_doc(doc: ConstellationDoc) -> Result<Self> {
        let points = doc
            .points
            .iter()
            .map(|&[re, im]| Complex64::new(re, im))
            .collect();
        Constellation::new(points, doc.probs, doc.labels, doc.sym_order)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Constellation::from_doc(serde_json::from_str(s)?)
    }
}

/// `-sum p log2 p`, ignoring zero entries.
pub fn entropy_bits(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Gray-labeled square QAM with uniform priors and unit average energy.
///
/// Each axis carries half of the label bits using a reflected Gray code; the
/// in-phase bits are the most significant ones.
pub fn build_qam(order: usize) -> Result<Constellation> {
    if order < 4 || !order.is_power_of_two() || order.trailing_zeros() % 2 != 0 {
        return Err(Error::invalid(format!(
            "QAM order {order} is not a power of four"
        )));
    }
    let bits = order.trailing_zeros() as usize;
    let half = bits / 2;
    let side = 1usize << half;
    let mut points = Vec::with_capacity(order);
    let mut labels = Vec::with_capacity(order);
    for i in 0..side {
        for q in 0..side {
            let re = (2 * i) as f64 - (side - 1) as f64;
            let im = (2 * q) as f64 - (side - 1) as f64;
            points.push(Complex64::new(re, im));
            let gi = (i ^ (i >> 1)) as u32;
            let gq = (q ^ (q >> 1)) as u32;
            labels.push((gi << half) | gq);
        }
    }
    let probs = vec![1.0 / order as f64; order];
    let points = normalize_energy(&points, &probs);
    Constellation::new(points, probs, labels, 4)
}

fn normalize_energy(points: &[Complex64], probs: &[f64]) -> Vec<Complex64> {
    let energy: f64 = points
        .iter()
        .zip(probs)
        .map(|(x, p)| p * x.norm_sqr())
        .sum();
    let scale = energy.sqrt().recip();
    points.iter().map(|x| x * scale).collect()
}

fn mb_probs(lattice: &[Complex64], lambda: f64) -> Vec<f64> {
    let min_e = lattice
        .iter()
        .map(|x| x.norm_sqr())
        .fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = lattice
        .iter()
        .map(|x| (-lambda * (x.norm_sqr() - min_e)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    // Points that underflow keep a strictly positive (tiny) prior.
    for p in probs.iter_mut() {
        if *p < f64::MIN_POSITIVE {
            *p = f64::MIN_POSITIVE;
        }
    }
    probs
}

/// Applies Maxwell-Boltzmann shaping `P(x) ∝ exp(-λ|x|²)` evaluated on the
/// odd-integer lattice geometry, then rescales to unit average energy under
/// the shaped priors.
pub fn maxwell_boltzmann_shape(c: &Constellation, lambda: f64) -> Result<Constellation> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("shaping parameter {lambda} must be >= 0")));
    }
    let lattice = c.lattice();
    let probs = mb_probs(&lattice, lambda);
    let points = normalize_energy(&lattice, &probs);
    Constellation::new(points, probs, c.labels.clone(), c.sym_order)
}

/// Finds the shaping parameter whose shaped distribution has entropy
/// `target_bits`, by bisection on λ.
pub fn shape_for_entropy(c: &Constellation, target_bits: f64) -> Result<(Constellation, f64)> {
    let max_bits = (c.len() as f64).log2();
    if !(2.0..=max_bits).contains(&target_bits) {
        return Err(Error::invalid(format!(
            "target entropy {target_bits} outside achievable range [2, {max_bits}]"
        )));
    }
    let lattice = c.lattice();
    let h = |lambda: f64| entropy_bits(&mb_probs(&lattice, lambda));
    if max_bits - target_bits <= BISECTION_ENTROPY_TOL {
        return Ok((maxwell_boltzmann_shape(c, 0.0)?, 0.0));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while h(hi) > target_bits {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            break;
        }
    }
    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..BISECTION_MAX_ITER {
        lambda = 0.5 * (lo + hi);
        let value = h(lambda);
        if (value - target_bits).abs() < BISECTION_ENTROPY_TOL {
            break;
        }
        if value > target_bits {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }
    Ok((maxwell_boltzmann_shape(c, lambda)?, lambda))
}

/// A stream of sampled symbols together with their indices and bit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    pub indices: Vec<usize>,
    pub symbols: Vec<Complex64>,
    /// Row-major `count × m` bits.
    pub bits: Vec<u8>,
}

/// Draws `count` i.i.d. symbols from the constellation priors by inverse CDF
/// over the fixed point ordering.
pub fn sample(c: &Constellation, count: usize, seed: u64) -> SymbolStream {
    let mut rng = rng::stream(seed, rng::STREAM_SYMBOLS);
    sample_with(c, count, &mut rng)
}

pub(crate) fn sample_with<R: Rng>(c: &Constellation, count: usize, rng: &mut R) -> SymbolStream {
    let mut cdf = Vec::with_capacity(c.len());
    let mut acc = 0.0;
    for p in &c.probs {
        acc += p;
        cdf.push(acc);
    }
    let m = c.bits_per_symbol;
    let mut indices = Vec::with_capacity(count);
    let mut symbols = Vec::with_capacity(count);
    let mut bits = Vec::with_capacity(count * m);
    for _ in 0..count {
        let u: f64 = rng.random::<f64>() * acc;
        let idx = cdf.partition_point(|&v| v <= u).min(c.len() - 1);
        indices.push(idx);
        symbols.push(c.points[idx]);
        for b in 0..m {
            bits.push(c.bit(idx, b));
        }
    }
    SymbolStream {
        indices,
        symbols,
        bits,
    }
}
