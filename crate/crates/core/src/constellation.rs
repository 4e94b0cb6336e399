//! Square QAM alphabets with unit average power.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::numerics::{RngStream, StreamRng, C64};

/// Indices into a constellation, one per transmitter.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SymbolVector(pub Vec<usize>);

impl SymbolVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A square `M`-QAM constellation normalized to unit average power.
///
/// Points are ordered row-major over the amplitude grid with the real part
/// on the fast axis, so index `k` has real level `k % L` and imaginary level
/// `k / L` for `L = √M`, levels ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    order: usize,
    levels: Vec<f64>,
    points: Vec<C64>,
    scale: f64,
}

impl Constellation {
    pub fn new(order: usize) -> Result<Self> {
        let side = match order {
            4 => 2,
            16 => 4,
            64 => 8,
            _ => {
                return Err(contract(format!(
                    "unsupported constellation order {order}; expected 4, 16 or 64"
                )))
            }
        };
        // E|x|^2 of the unnormalized grid {±1, ±3, ...}^2 is 2(M-1)/3.
        let scale = 1.0 / (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
        let levels: Vec<f64> = (0..side)
            .map(|k| (2.0 * k as f64 - (side as f64 - 1.0)) * scale)
            .collect();
        let points = (0..order)
            .map(|k| C64::new(levels[k % side], levels[k / side]))
            .collect();
        Ok(Self {
            order,
            levels,
            points,
            scale,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of amplitude levels per real dimension.
    pub fn side(&self) -> usize {
        self.levels.len()
    }

    /// Ascending per-axis amplitudes (the underlying PAM alphabet).
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn point(&self, index: usize) -> C64 {
        self.points[index]
    }

    pub fn max_magnitude(&self) -> f64 {
        let m = self.levels[self.levels.len() - 1];
        (2.0 * m * m).sqrt()
    }

    pub fn to_points(&self, s: &SymbolVector) -> Vec<C64> {
        s.0.iter().map(|&i| self.points[i]).collect()
    }

    /// Nearest level on one axis; equidistant levels resolve to the lower one.
    #[inline]
    fn nearest_level(&self, v: f64) -> usize {
        let mut best = 0;
        let mut best_d = (v - self.levels[0]).abs();
        for (k, &l) in self.levels.iter().enumerate().skip(1) {
            let d = (v - l).abs();
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }

    /// Index of the closest point; ties go to the lexicographically smallest
    /// `(re, im)`.
    #[inline]
    pub fn nearest(&self, z: C64) -> usize {
        self.nearest_level(z.im) * self.side() + self.nearest_level(z.re)
    }

    pub fn hard_decision(&self, z: &[C64]) -> SymbolVector {
        SymbolVector(z.iter().map(|&v| self.nearest(v)).collect())
    }

    pub fn sample_symbols(&self, n_t: usize, rng: &mut StreamRng) -> SymbolVector {
        SymbolVector((0..n_t).map(|_| rng.gen_range(0..self.order)).collect())
    }

    pub fn sample_symbols_from(&self, n_t: usize, stream: RngStream) -> SymbolVector {
        self.sample_symbols(n_t, &mut stream.rng())
    }

    /// Wrong real-axis plus wrong imaginary-axis decisions between two
    /// symbol vectors.
    pub fn dimension_errors(&self, estimate: &SymbolVector, truth: &SymbolVector) -> Result<usize> {
        check_lengths(estimate, truth)?;
        let l = self.side();
        Ok(estimate
            .0
            .iter()
            .zip(&truth.0)
            .map(|(&a, &b)| usize::from(a % l != b % l) + usize::from(a / l != b / l))
            .sum())
    }
}

impl fmt::Display for Constellation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "qam{}", self.order)
    }
}

impl FromStr for Constellation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qam4" | "qpsk" | "4" => Constellation::new(4),
            "qam16" | "16" => Constellation::new(16),
            "qam64" | "64" => Constellation::new(64),
            other => Err(contract(format!("unknown modulation '{other}'"))),
        }
    }
}

pub fn make_constellation(order: usize) -> Result<Constellation> {
    Constellation::new(order)
}

fn check_lengths(a: &SymbolVector, b: &SymbolVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(contract(format!(
            "symbol vectors of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Number of transmitters whose decided symbol differs from the truth.
pub fn symbol_errors(estimate: &SymbolVector, truth: &SymbolVector) -> Result<usize> {
    check_lengths(estimate, truth)?;
    Ok(estimate.0.iter().zip(&truth.0).filter(|(a, b)| a != b).count())
}

/// Fraction of transmitters decided wrongly.
pub fn ser(estimate: &SymbolVector, truth: &SymbolVector) -> Result<f64> {
    let e = symbol_errors(estimate, truth)?;
    if truth.is_empty() {
        return Ok(0.0);
    }
    Ok(e as f64 / truth.len() as f64)
}
