//! Sobol low-discrepancy points and the calibration parameter pool.
//!
//! Direction numbers are the first 16 dimensions of Joe & Kuo's
//! `new-joe-kuo-6.21201` table (<https://web.maths.unsw.edu.au/~fkuo/sobol/>).
//! Points are generated in Gray-code order, so the unscrambled sequence
//! starts `0, 1/2, 3/4, 1/4, ...` in every dimension's first coordinate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facts::DistanceBreakdown;

pub const MAX_DIM: usize = 16;
const BITS: usize = 32;

/// `(s, a, m)` rows for dimensions 2..=16: degree of the primitive
/// polynomial, its packed interior coefficients, and initial direction
/// integers.
const JOE_KUO: [(u32, u32, &[u32]); MAX_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
];

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (31 - k);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim - 1];
    let s = s as usize;
    for k in 0..s {
        v[k] = m[k] << (31 - k);
    }
    for k in s..BITS {
        v[k] = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                v[k] ^= v[k - j];
            }
        }
    }
    v
}

/// Incremental Sobol generator.
#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self> {
        Self::starting_at(dim, 0)
    }

    /// Generator whose next point is the `index`-th of the sequence.
    pub fn starting_at(dim: usize, index: u64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::SobolDimension(dim));
        }
        if index >= 1 << BITS {
            return Err(Error::InvalidInput("Sobol index exceeds 2^32".into()));
        }
        let directions: Vec<[u32; BITS]> = (0..dim).map(direction_numbers).collect();
        let gray = index ^ (index >> 1);
        let state = directions
            .iter()
            .map(|v| {
                (0..BITS)
                    .filter(|&k| (gray >> k) & 1 == 1)
                    .fold(0u32, |acc, k| acc ^ v[k])
            })
            .collect();
        Ok(Self {
            directions,
            state,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// Writes the next point into `out` and advances.
    pub fn next_into(&mut self, out: &mut [f64]) {
        const SCALE: f64 = 1.0 / (1u64 << BITS) as f64;
        for (o, x) in out.iter_mut().zip(&self.state) {
            *o = *x as f64 * SCALE;
        }
        let c = self.index.trailing_ones() as usize;
        for (x, v) in self.state.iter_mut().zip(&self.directions) {
            *x ^= v[c.min(BITS - 1)];
        }
        self.index += 1;
    }
}

impl Iterator for Sobol {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.index >= 1 << BITS {
            return None;
        }
        let mut p = vec![0.0; self.dim()];
        self.next_into(&mut p);
        Some(p)
    }
}

/// `n` Sobol points in `[0, 1)^dim` after skipping the first `skip`.
pub fn sobol_points(dim: usize, n: usize, skip: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    if (skip as u64).saturating_add(n as u64) > 1 << BITS {
        return Err(Error::InvalidInput("Sobol index exceeds 2^32".into()));
    }
    Ok(Sobol::starting_at(dim, skip as u64)?.take(n).collect())
}

/// Admissible box for `(kappa, beta, sigma_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    pub kappa: (f64, f64),
    pub beta: (f64, f64),
    pub sigma_n: (f64, f64),
}

impl ParameterBounds {
    /// Box scaled to a day's return standard deviation `sigma_hat`:
    /// kappa in [0, 0.5], beta in [0, 5 sigma_hat], sigma_n in [1e-6, 3 sigma_hat].
    pub fn stock_scaled(sigma_hat: f64) -> Self {
        Self {
            kappa: (0.0, 0.5),
            beta: (0.0, 5.0 * sigma_hat),
            sigma_n: (1e-6, 3.0 * sigma_hat),
        }
    }

    pub fn as_array(&self) -> [(f64, f64); 3] {
        [self.kappa, self.beta, self.sigma_n]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in ["kappa", "beta", "sigma_n"].iter().zip(self.as_array()) {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
                return Err(Error::InvalidParams(format!(
                    "bounds for {name} must satisfy 0 <= low < high, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, theta: &[f64; 3]) -> bool {
        theta
            .iter()
            .zip(self.as_array())
            .all(|(v, (lo, hi))| *v >= lo && *v <= hi)
    }
}

/// Candidate parameter vectors with their (optional) evaluated labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPool {
    pub points: Vec<[f64; 3]>,
    pub labels: Vec<Option<DistanceBreakdown>>,
}

impl ParameterPool {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_evaluated(&self, i: usize) -> bool {
        self.labels[i].is_some()
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_evaluated(i)).collect()
    }

    pub fn labeled(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_evaluated(i)).collect()
    }
}

/// Maps unit-cube points onto `bounds` with `low + u * (high - low)`.
pub fn scale(points: &[Vec<f64>], bounds: &ParameterBounds) -> Result<ParameterPool> {
    let box3 = bounds.as_array();
    let scaled = points
        .iter()
        .map(|u| {
            if u.len() != 3 {
                return Err(Error::DimensionMismatch {
                    expected: 3,
                    got: u.len(),
                });
            }
            let mut p = [0.0; 3];
            for k in 0..3 {
                let (lo, hi) = box3[k];
                p[k] = lo + u[k] * (hi - lo);
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scaled.len();
    Ok(ParameterPool {
        points: scaled,
        labels: vec![None; n],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_dimension_is_van_der_corput() {
        let p = sobol_points(1, 3, 1).unwrap();
        assert_eq!(p, vec![vec![0.5], vec![0.75], vec![0.25]]);
    }

    // Reference values from an independent implementation (SciPy's
    // unscrambled `qmc.Sobol`, which uses the same direction-number table).
    #[test]
    fn matches_reference_points() {
        let cases: [(usize, [f64; 16]); 3] = [
            (11, [0.4375, 0.5625, 0.1875, 0.6875, 0.8125, 0.0625, 0.6875, 0.6875, 0.6875, 0.0625, 0.9375, 0.3125, 0.1875, 0.1875, 0.5625, 0.1875]),
            (1000, [0.2197265625, 0.0966796875, 0.5185546875, 0.6767578125, 0.2802734375, 0.9072265625, 0.0458984375, 0.8994140625, 0.5009765625, 0.0693359375, 0.0849609375, 0.2548828125, 0.1611328125, 0.3837890625, 0.1435546875, 0.3701171875]),
            (12345, [0.64093017578125, 0.81341552734375, 0.16033935546875, 0.52679443359375, 0.88848876953125, 0.05889892578125, 0.12725830078125, 0.11334228515625, 0.80181884765625, 0.42962646484375, 0.07427978515625, 0.59881591796875, 0.93096923828125, 0.94183349609375, 0.03448486328125, 0.64080810546875]),
        ];
        for (index, expected) in cases {
            let direct = sobol_points(16, 1, index).unwrap();
            assert_eq!(direct[0], expected.to_vec(), "index {index}");
            let walked = sobol_points(16, index + 1, 0).unwrap();
            assert_eq!(walked[index], expected.to_vec(), "index {index}");
        }
    }

    #[test]
    fn stratified_in_dyadic_bins() {
        let pts = sobol_points(MAX_DIM, 1024, 0).unwrap();
        for m in 0..=10 {
            let n = 1usize << m;
            for d in 0..MAX_DIM {
                let mut seen = vec![false; n];
                for p in &pts[..n] {
                    let bin = (p[d] * n as f64) as usize;
                    assert!(!seen[bin], "m={m} d={d} bin={bin}");
                    seen[bin] = true;
                }
            }
        }
    }

    #[test]
    fn range_and_dimension_errors() {
        let pts = sobol_points(3, 16384, 1).unwrap();
        assert!(pts.iter().flatten().all(|&u| (0.0..1.0).contains(&u)));
        assert!(matches!(sobol_points(17, 1, 0), Err(Error::SobolDimension(17))));
        assert!(matches!(sobol_points(0, 1, 0), Err(Error::SobolDimension(0))));
        assert!(sobol_points(2, 0, 0).is_err());
    }

    #[test]
    fn deterministic() {
        assert_eq!(sobol_points(3, 100, 7).unwrap(), sobol_points(3, 100, 7).unwrap());
    }

    #[test]
    fn scaling() {
        let b = ParameterBounds {
            kappa: (2.0, 4.0),
            beta: (0.0, 1.0),
            sigma_n: (1.0, 3.0),
        };
        let pool = scale(&[vec![0.5, 0.25, 0.0]], &b).unwrap();
        assert_eq!(pool.points[0], [3.0, 0.25, 1.0]);
        assert_eq!(pool.unlabeled(), vec![0]);

        let unit = ParameterBounds {
            kappa: (0.0, 1.0),
            beta: (0.0, 1.0),
            sigma_n: (0.0, 1.0),
        };
        let pts = sobol_points(3, 64, 1).unwrap();
        let pool = scale(&pts, &unit).unwrap();
        for (p, u) in pool.points.iter().zip(&pts) {
            assert_eq!(p.to_vec(), *u);
        }
        let almost_one = 1.0 - f64::EPSILON;
        let pool = scale(&[vec![almost_one; 3]], &b).unwrap();
        assert!(pool.points[0][0] < 4.0 && pool.points[0][0] > 3.999);
        assert!(scale(&[vec![0.1, 0.2]], &b).is_err());
    }

    #[test]
    fn bounds_validation() {
        assert!(ParameterBounds::stock_scaled(0.02).validate().is_ok());
        let bad = ParameterBounds {
            kappa: (0.5, 0.5),
            ..ParameterBounds::stock_scaled(0.02)
        };
        assert!(bad.validate().is_err());
        let neg = ParameterBounds {
            beta: (-1.0, 1.0),
            ..ParameterBounds::stock_scaled(0.02)
        };
        assert!(neg.validate().is_err());
    }
}
