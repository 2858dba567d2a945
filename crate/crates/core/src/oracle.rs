//! Brute-force machinery over 2×2 joint distributions of `(Y⁰, Y¹)`.
//!
//! This module is the ground truth the closed-form bounds are checked
//! against. It deliberately avoids calling into [`crate::bounds`] for
//! anything but the input/output types: feasibility comes from cell
//! nonnegativity and extremes come from scanning tables.

use serde::{Deserialize, Serialize};

use crate::bounds::{AssociationMeasures, MarginalPair, RhoInterval};
use crate::error::{Error, Result};

/// Tolerance on cell nonnegativity and on the unit sum.
pub const CELL_TOL: f64 = 1e-12;

/// Default number of correlation values scanned by [`extremize_fna`].
pub const DEFAULT_GRID: usize = 10_000;

/// `pi_jk = P(Y⁰ = j, Y¹ = k | X = x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub pi00: f64,
    pub pi01: f64,
    pub pi10: f64,
    pub pi11: f64,
}

impl JointTable {
    pub fn new(pi00: f64, pi01: f64, pi10: f64, pi11: f64) -> Result<Self> {
        let cells = [pi00, pi01, pi10, pi11];
        if cells.iter().any(|c| !c.is_finite() || *c < -CELL_TOL || *c > 1.0 + CELL_TOL) {
            return Err(Error::InvalidJoint(format!("cells {cells:?} outside [0, 1]")));
        }
        let total: f64 = cells.iter().sum();
        if (total - 1.0).abs() > CELL_TOL {
            return Err(Error::InvalidJoint(format!("cells sum to {total}")));
        }
        let c = |v: f64| v.clamp(0.0, 1.0);
        Ok(Self {
            pi00: c(pi00),
            pi01: c(pi01),
            pi10: c(pi10),
            pi11: c(pi11),
        })
    }

    /// `P(Y⁰ = 1)`.
    pub fn mu0(&self) -> f64 {
        self.pi10 + self.pi11
    }

    /// `P(Y¹ = 1)`.
    pub fn mu1(&self) -> f64 {
        self.pi01 + self.pi11
    }

    /// Fraction negatively affected.
    pub fn fna(&self) -> f64 {
        self.pi10
    }

    /// Fraction positively affected.
    pub fn fpa(&self) -> f64 {
        self.pi01
    }

    fn covariance(&self) -> f64 {
        self.pi11 * self.pi00 - self.pi10 * self.pi01
    }
}

/// Range of `pi11` allowed by the margins.
fn pi11_range(m: MarginalPair) -> (f64, f64) {
    let (mu0, mu1) = (m.mu0(), m.mu1());
    ((mu0 + mu1 - 1.0).max(0.0), mu0.min(mu1))
}

fn table_from_pi11(m: MarginalPair, pi11: f64) -> Result<JointTable> {
    let (mu0, mu1) = (m.mu0(), m.mu1());
    let pi10 = mu0 - pi11;
    let pi01 = mu1 - pi11;
    let pi00 = 1.0 - mu0 - mu1 + pi11;
    if [pi00, pi01, pi10, pi11].iter().any(|&c| c < -CELL_TOL) {
        return Err(Error::InfeasibleRho {
            rho: f64::NAN,
            feasible_lower: f64::NAN,
            feasible_upper: f64::NAN,
        });
    }
    JointTable::new(pi00, pi01, pi10, pi11)
}

fn std_product(m: MarginalPair) -> f64 {
    (m.mu0() * (1.0 - m.mu0())).sqrt() * (m.mu1() * (1.0 - m.mu1())).sqrt()
}

/// Correlation range implied by the admissible `pi11` values.
fn oracle_rho_range(m: MarginalPair) -> Option<(f64, f64)> {
    let sd = std_product(m);
    if sd <= 0.0 {
        return None;
    }
    let (lo, hi) = pi11_range(m);
    let base = m.mu0() * m.mu1();
    Some(((lo - base) / sd, (hi - base) / sd))
}

/// The unique joint table with the given margins and correlation.
pub fn joint_from_rho(m: MarginalPair, rho: f64) -> Result<JointTable> {
    let sd = std_product(m);
    let pi11 = m.mu0() * m.mu1() + rho * sd;
    table_from_pi11(m, pi11).map_err(|_| {
        let (lo, hi) = oracle_rho_range(m).unwrap_or((f64::NAN, f64::NAN));
        Error::InfeasibleRho {
            rho,
            feasible_lower: lo,
            feasible_upper: hi,
        }
    })
}

/// Correlation, risk difference, risk ratio and odds ratio of `Y¹` on `Y⁰`.
pub fn measures_of(j: &JointTable) -> AssociationMeasures {
    let mu0 = j.mu0();
    let mu1 = j.mu1();
    let var0 = mu0 * (1.0 - mu0);
    let var1 = mu1 * (1.0 - mu1);
    let rho = (var0 > 0.0 && var1 > 0.0).then(|| j.covariance() / (var0 * var1).sqrt());

    // P(Y¹ = 1 | Y⁰ = 1) and P(Y¹ = 1 | Y⁰ = 0)
    let p_given_1 = (mu0 > 0.0).then(|| j.pi11 / mu0);
    let p_given_0 = (mu0 < 1.0).then(|| j.pi01 / (1.0 - mu0));

    let rd = match (p_given_1, p_given_0) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    let rr = match (p_given_1, p_given_0) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let odds_ratio = (j.pi10 > 0.0 && j.pi01 > 0.0).then(|| j.pi11 * j.pi00 / (j.pi10 * j.pi01));
    AssociationMeasures {
        rho,
        rd,
        rr,
        odds_ratio,
    }
}

/// Extremes of the harm probability over a correlation scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FnaExtremes {
    pub min_fna: f64,
    pub max_fna: f64,
    pub witness_low: JointTable,
    pub witness_high: JointTable,
}

/// Scan `grid` equally spaced correlations across `ri ∩ feasible` (endpoints
/// included), build each joint table and keep the extreme `pi10` values.
pub fn extremize_fna(m: MarginalPair, ri: RhoInterval, grid: usize) -> Result<FnaExtremes> {
    let Some((lo_f, hi_f)) = oracle_rho_range(m) else {
        // A degenerate margin admits exactly one table.
        let (lo, _) = pi11_range(m);
        let t = table_from_pi11(m, lo)?;
        return Ok(FnaExtremes {
            min_fna: t.fna(),
            max_fna: t.fna(),
            witness_low: t,
            witness_high: t,
        });
    };
    let lo = ri.lower().max(lo_f);
    let hi = ri.upper().min(hi_f);
    if lo > hi {
        return Err(Error::EmptyFeasibleSet(format!(
            "[{}, {}] misses the feasible correlations [{lo_f}, {hi_f}]",
            ri.lower(),
            ri.upper()
        )));
    }
    let steps = grid.max(2) - 1;
    let mut best: Option<FnaExtremes> = None;
    for k in 0..=steps {
        let rho = if k == steps {
            hi
        } else {
            lo + (hi - lo) * (k as f64 / steps as f64)
        };
        let t = joint_from_rho(m, rho)?;
        best = Some(match best {
            None => FnaExtremes {
                min_fna: t.fna(),
                max_fna: t.fna(),
                witness_low: t,
                witness_high: t,
            },
            Some(mut e) => {
                if t.fna() < e.min_fna {
                    e.min_fna = t.fna();
                    e.witness_low = t;
                }
                if t.fna() > e.max_fna {
                    e.max_fna = t.fna();
                    e.witness_high = t;
                }
                e
            }
        });
    }
    Ok(best.expect("grid has at least two points"))
}

/// Which Fréchet–Hoeffding bounds the table reaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attainability {
    pub lower_attained: bool,
    pub upper_attained: bool,
}

pub fn fh_attainability(j: &JointTable) -> Attainability {
    let zero = |c: f64| c.abs() <= CELL_TOL;
    Attainability {
        lower_attained: zero(j.pi01) || zero(j.pi10),
        upper_attained: zero(j.pi11) || zero(j.pi00),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mp(mu0: f64, mu1: f64) -> MarginalPair {
        MarginalPair::new(mu0, mu1).unwrap()
    }

    #[test]
    fn joint_examples() {
        let t = joint_from_rho(mp(0.5, 0.5), 1.0).unwrap();
        assert!((t.pi00 - 0.5).abs() < 1e-15 && (t.pi11 - 0.5).abs() < 1e-15);
        assert!(t.pi01.abs() < 1e-15 && t.pi10.abs() < 1e-15);
        let t = joint_from_rho(mp(0.5, 0.5), 0.0).unwrap();
        for c in [t.pi00, t.pi01, t.pi10, t.pi11] {
            assert!((c - 0.25).abs() < 1e-15);
        }
        let t = joint_from_rho(mp(0.690, 0.842), 0.128).unwrap();
        assert!((t.pi10 - 0.0874).abs() < 1e-4);
        assert!(joint_from_rho(mp(0.690, 0.842), 0.9).is_err());
    }

    #[test]
    fn joint_table_validates() {
        assert!(JointTable::new(0.5, 0.5, 0.1, 0.0).is_err());
        assert!(JointTable::new(-0.1, 0.6, 0.3, 0.2).is_err());
        assert!(JointTable::new(0.25, 0.25, 0.25, 0.25).is_ok());
    }

    #[test]
    fn measures_examples() {
        let m = measures_of(&JointTable::new(0.25, 0.25, 0.25, 0.25).unwrap());
        assert!(m.rho.unwrap().abs() < 1e-15);
        assert!(m.rd.unwrap().abs() < 1e-15);
        assert!((m.rr.unwrap() - 1.0).abs() < 1e-15);
        assert!((m.odds_ratio.unwrap() - 1.0).abs() < 1e-15);

        let m = measures_of(&JointTable::new(0.3, 0.2, 0.1, 0.4).unwrap());
        assert!((m.rd.unwrap() - 0.4).abs() < 1e-12);
        assert!(m.rho.unwrap() > 0.0);
        assert!(m.rr.unwrap() > 1.0 && m.odds_ratio.unwrap() > 1.0);

        let m = measures_of(&JointTable::new(0.5, 0.0, 0.0, 0.5).unwrap());
        assert!(m.rr.is_none() && m.odds_ratio.is_none());
        assert!((m.rho.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extremize_examples() {
        let m = mp(0.690, 0.842);
        let e = extremize_fna(m, RhoInterval::new(0.0, 0.3).unwrap(), DEFAULT_GRID).unwrap();
        let line = |r: f64| m.mu0() * (1.0 - m.mu1()) - r * std_product(m);
        assert!((e.min_fna - line(0.3)).abs() < 1e-12);
        assert!((e.max_fna - line(0.0)).abs() < 1e-12);
        assert!((e.min_fna - 0.058).abs() < 1e-3);

        let e = extremize_fna(m, RhoInterval::full(), DEFAULT_GRID).unwrap();
        assert!(e.min_fna.abs() < 1e-12 && (e.max_fna - 0.158).abs() < 1e-12);

        let e = extremize_fna(m, RhoInterval::point(0.2).unwrap(), 10).unwrap();
        assert_eq!(e.min_fna, e.max_fna);

        assert!(extremize_fna(mp(0.7, 0.4), RhoInterval::new(0.8, 1.0).unwrap(), 100).is_err());
    }

    #[test]
    fn attainability_examples() {
        let a = fh_attainability(&JointTable::new(0.5, 0.0, 0.0, 0.5).unwrap());
        assert!(a.lower_attained);
        let a = fh_attainability(&JointTable::new(0.25, 0.25, 0.25, 0.25).unwrap());
        assert!(!a.lower_attained && !a.upper_attained);

        let m = mp(0.7, 0.6);
        let (lo, _) = oracle_rho_range(m).unwrap();
        let t = joint_from_rho(m, lo).unwrap();
        assert!(t.pi00.abs() < 1e-12);
        assert!(fh_attainability(&t).upper_attained);
    }
}
