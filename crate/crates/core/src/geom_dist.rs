//! Truncated and untruncated geometric laws and the limits of `E λ(Z_n)`.
//!
//! `Z_n ~ geom_n(z)` has `P(Z_n = j) ∝ z^j` on `[0, n]`; `Z ~ geom(z)` has
//! `P(Z = j) = (1 - z) z^j` on `Z+`. Throughout the crate `z = μ1/μ2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rate_model::RateFunction;

/// Unnormalized weights of `geom_n(z)`.
///
/// For `z > 1` the weights are anchored at `j = n`, i.e. `z^{j-n}`, so that
/// nothing overflows for large `n`.
fn weights(z: f64, n: u64) -> impl DoubleEndedIterator<Item = f64> + ExactSizeIterator {
    let n = n as usize;
    let w: Vec<f64> = if z > 1.0 {
        let inv = 1.0 / z;
        let mut w = vec![0.0; n + 1];
        let mut acc = 1.0;
        for slot in w.iter_mut().rev() {
            *slot = acc;
            acc *= inv;
        }
        w
    } else if z == 0.0 {
        let mut w = vec![0.0; n + 1];
        w[0] = 1.0;
        w
    } else {
        let mut acc = 1.0;
        (0..=n)
            .map(|_| {
                let v = acc;
                acc *= z;
                v
            })
            .collect()
    };
    w.into_iter()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGeometric {
    z: f64,
    n: u64,
}

impl TruncatedGeometric {
    pub fn new(z: f64, n: u64) -> Result<Self> {
        if !(z.is_finite() && z >= 0.0) {
            return Err(Error::OutOfRange {
                what: "ratio z",
                value: z,
            });
        }
        Ok(TruncatedGeometric { z, n })
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn pmf(&self) -> Vec<f64> {
        let w: Vec<f64> = weights(self.z, self.n).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    /// `E f(Z_n)`.
    pub fn expectation(&self, f: impl Fn(u64) -> f64) -> f64 {
        let (num, den) = weights(self.z, self.n)
            .enumerate()
            .fold((0.0, 0.0), |(num, den), (j, w)| {
                (num + f(j as u64) * w, den + w)
            });
        num / den
    }

    /// `P(Z_n > 0)`.
    pub fn prob_positive(&self) -> f64 {
        let w: Vec<f64> = weights(self.z, self.n).collect();
        let total: f64 = w.iter().sum();
        w[1..].iter().sum::<f64>() / total
    }

    /// `P(Z_n = n)`.
    pub fn prob_top(&self) -> f64 {
        let w: Vec<f64> = weights(self.z, self.n).collect();
        let total: f64 = w.iter().sum();
        w[self.n as usize] / total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricDist {
    z: f64,
}

impl GeometricDist {
    pub fn new(z: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&z) {
            return Err(Error::OutOfRange {
                what: "ratio z (need 0 <= z < 1)",
                value: z,
            });
        }
        Ok(GeometricDist { z })
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn pmf(&self, j: u64) -> f64 {
        (1.0 - self.z) * self.z.powf(j as f64)
    }
}

/// Probability vector of `geom_n(z)` over `[0, n]`.
pub fn pmf_truncated(z: f64, n: u64) -> Result<Vec<f64>> {
    Ok(TruncatedGeometric::new(z, n)?.pmf())
}

/// `E λ(Z_n)` with `Z_n ~ geom_n(z)`.
pub fn expected_rate_truncated(lambda: &RateFunction, z: f64, n: u64) -> Result<f64> {
    Ok(TruncatedGeometric::new(z, n)?.expectation(|j| lambda.eval(j)))
}

/// `E λ(Z)` with `Z ~ geom(z)`, summed in closed form over the periodic tail:
/// `(1-z)[Σ_{n<m} λ(n) z^n + z^m Σ_{j<p} c_j z^j / (1 - z^p)]`.
pub fn expected_rate_geometric(lambda: &RateFunction, z: f64) -> Result<f64> {
    GeometricDist::new(z)?;
    let head: f64 = lambda
        .prefix()
        .iter()
        .enumerate()
        .map(|(n, v)| v * z.powi(n as i32))
        .sum();
    let p = lambda.period();
    let cycle: f64 = lambda
        .cycle()
        .iter()
        .enumerate()
        .map(|(j, v)| v * z.powi(j as i32))
        .sum();
    let tail = z.powi(lambda.tail_start() as i32) * cycle / (1.0 - z.powi(p as i32));
    Ok((1.0 - z) * (head + tail))
}

/// Limits of `E λ(Z_n)` along each residue class together with the
/// extreme tail values of `λ` itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitBundle {
    pub limsup_e: f64,
    pub liminf_e: f64,
    pub liminf_lambda: f64,
    pub limsup_lambda: f64,
    /// `residue_values[r] = lim E λ(Z_n)` along `n - m ≡ r (mod p)`.
    pub residue_values: Vec<f64>,
}

/// Exact per-residue limits of `E λ(Z_n)` for `z ≥ 1`.
///
/// For `z > 1` the mass of `Z_n` concentrates near `n` and
/// `lim E λ(Z_n) = (1 - 1/z)/(1 - z^{-p}) Σ_{k<p} c_{(r-k) mod p} z^{-k}`.
/// For `z = 1` the law is uniform and every residue converges to the cycle mean.
pub fn limit_bundle(lambda: &RateFunction, z: f64) -> Result<LimitBundle> {
    if !(z.is_finite() && z >= 1.0) {
        return Err(Error::OutOfRange {
            what: "ratio z (need z >= 1)",
            value: z,
        });
    }
    let cycle = lambda.cycle();
    let p = cycle.len();
    let residue_values: Vec<f64> = if z == 1.0 {
        let mean = cycle.iter().sum::<f64>() / p as f64;
        vec![mean; p]
    } else {
        let inv = 1.0 / z;
        let scale = (1.0 - inv) / (1.0 - inv.powi(p as i32));
        (0..p)
            .map(|r| {
                let s: f64 = (0..p)
                    .map(|k| cycle[(r + p - k) % p] * inv.powi(k as i32))
                    .sum();
                scale * s
            })
            .collect()
    };
    let limsup_e = residue_values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let liminf_e = residue_values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LimitBundle {
        limsup_e,
        liminf_e,
        liminf_lambda: lambda.cycle_min(),
        limsup_lambda: lambda.cycle_max(),
        residue_values,
    })
}

/// `limsup_n E λ(Z_n)` for any `z ≥ 0`: the geometric mean `E λ(Z)` below
/// one, the largest residue limit otherwise.
pub fn limsup_expected_rate(lambda: &RateFunction, z: f64) -> Result<f64> {
    if z < 1.0 {
        expected_rate_geometric(lambda, z)
    } else {
        Ok(limit_bundle(lambda, z)?.limsup_e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pmf_examples() {
        assert_eq!(pmf_truncated(7.5, 0).unwrap(), vec![1.0]);
        assert_eq!(pmf_truncated(1.0, 3).unwrap(), vec![0.25; 4]);
        let p = pmf_truncated(2.0, 2).unwrap();
        for (a, b) in p.iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
            assert!(close(*a, b, 1e-15));
        }
        assert_eq!(pmf_truncated(0.0, 3).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert!(pmf_truncated(-0.1, 3).is_err());
    }

    #[test]
    fn pmf_normalized_on_grid() {
        for z in [0.0, 0.5, 1.0, 2.0, 10.0] {
            for n in 0..=64 {
                let s: f64 = pmf_truncated(z, n).unwrap().iter().sum();
                assert!(close(s, 1.0, 1e-12), "z={z} n={n} sum={s}");
            }
        }
        // no overflow far out
        let p = pmf_truncated(10.0, 5000).unwrap();
        assert!(close(p[5000], 0.9, 1e-12));
    }

    #[test]
    fn truncated_expectation_examples() {
        let c = RateFunction::constant(1.7).unwrap();
        for z in [0.0, 0.3, 1.0, 4.0] {
            assert!(close(
                expected_rate_truncated(&c, z, 9).unwrap(),
                1.7,
                1e-14
            ));
        }
        let k1 = RateFunction::threshold(1);
        assert!(close(
            expected_rate_truncated(&k1, 0.5, 200).unwrap(),
            0.75,
            1e-9
        ));
    }

    #[test]
    fn geometric_mean_examples() {
        let c = RateFunction::constant(2.5).unwrap();
        assert!(close(expected_rate_geometric(&c, 0.4).unwrap(), 2.5, 1e-14));
        assert!(close(
            expected_rate_geometric(&RateFunction::threshold(0), 0.5).unwrap(),
            0.5,
            1e-15
        ));
        let two = RateFunction::vanishing(vec![2.0]).unwrap();
        assert!(close(
            expected_rate_geometric(&two, 0.5).unwrap(),
            1.0,
            1e-15
        ));
        assert!(matches!(
            expected_rate_geometric(&two, 1.0),
            Err(Error::OutOfRange { .. })
        ));
        for k in [0u64, 3, 9] {
            let z: f64 = 0.37;
            let e = expected_rate_geometric(&RateFunction::threshold(k), z).unwrap();
            assert!(close(e, 1.0 - z.powi(k as i32 + 1), 1e-14));
        }
    }

    #[test]
    fn alternating_limit_examples() {
        let (a, b) = (0.4, 2.0);
        let (mu1, mu2) = (3.0, 1.5);
        let f = RateFunction::new(vec![], vec![a, b]).unwrap();
        let bundle = limit_bundle(&f, mu1 / mu2).unwrap();
        let eq10 = (mu1 * b + mu2 * a) / (mu1 + mu2);
        assert!(close(bundle.limsup_e, eq10, 1e-12));
        assert!(close(
            bundle.liminf_e,
            (mu1 * a + mu2 * b) / (mu1 + mu2),
            1e-12
        ));
        // odd n approach the limsup
        let brute = expected_rate_truncated(&f, mu1 / mu2, 2001).unwrap();
        assert!(close(brute, eq10, 1e-9));

        let uniform = limit_bundle(&f, 1.0).unwrap();
        assert_eq!(uniform.limsup_e, (a + b) / 2.0);
        assert_eq!(uniform.liminf_e, (a + b) / 2.0);
        assert_eq!(uniform.liminf_lambda, a);
        let brute = expected_rate_truncated(&f, 1.0, 10_000).unwrap();
        assert!(close(brute, (a + b) / 2.0, 1e-4));

        let c = limit_bundle(&RateFunction::constant(0.9).unwrap(), 2.0).unwrap();
        for v in [c.limsup_e, c.liminf_e, c.liminf_lambda, c.limsup_lambda] {
            assert!(close(v, 0.9, 1e-15));
        }
        assert!(limit_bundle(&f, 0.99).is_err());
    }

    fn periodic() -> impl Strategy<Value = RateFunction> {
        (
            prop::collection::vec(0.0..4.0f64, 0..5),
            prop::collection::vec(0.0..4.0f64, 1..5),
        )
            .prop_map(|(p, c)| RateFunction::new(p, c).unwrap())
    }

    proptest! {
        #[test]
        fn sandwich_for_diverging_ratio(f in periodic(), z in 1.0..5.0f64, extra in 0u64..40) {
            let n = (f.tail_start() + f.period()) as u64 + extra;
            let e = expected_rate_truncated(&f, z, n).unwrap();
            let lo = f.cycle_min();
            let hi = f.cycle_max();
            // prefix values still carry weight z^{j-n}; the sandwich binds in the limit,
            // so compare against the envelope over everything at or beyond n - p
            let env_lo = lo.min(f.prefix().iter().copied().fold(f64::INFINITY, f64::min));
            let env_hi = hi.max(f.prefix().iter().copied().fold(0.0, f64::max));
            prop_assert!(e >= env_lo - 1e-9 && e <= env_hi + 1e-9);
        }

        #[test]
        fn sandwich_in_the_limit(f in periodic(), z in 1.0..5.0f64) {
            let b = limit_bundle(&f, z).unwrap();
            prop_assert!(b.liminf_lambda - 1e-12 <= b.liminf_e);
            prop_assert!(b.liminf_e <= b.limsup_e);
            prop_assert!(b.limsup_e <= b.limsup_lambda + 1e-12);
        }

        #[test]
        fn truncated_converges_to_geometric(f in periodic(), z in 0.0..0.9f64) {
            let n = 1000;
            let e_n = expected_rate_truncated(&f, z, n).unwrap();
            let e = expected_rate_geometric(&f, z).unwrap();
            prop_assert!((e_n - e).abs() <= z.powf(n as f64 / 2.0).max(1e-12), "{} vs {}", e_n, e);
        }

        #[test]
        fn residues_match_brute_force(f in periodic(), z in 1.05..6.0f64) {
            let b = limit_bundle(&f, z).unwrap();
            let (m, p) = (f.tail_start() as u64, f.period() as u64);
            // at least 50 periods, more when z is close to 1 and the tail decays slowly
            let periods = 50u64.max((32.0 / (p as f64 * z.ln())).ceil() as u64);
            for r in 0..p {
                let brute = expected_rate_truncated(&f, z, m + periods * p + r).unwrap();
                prop_assert!((brute - b.residue_values[r as usize]).abs() < 1e-9);
            }
        }
    }
}
