//! Closed-form item response theory.
//!
//! All curves here are the four-parameter logistic
//! `P(θ) = c + (d − c)·σ(a(θ − b))`; the smaller families are the same curve
//! with some parameters pinned (see [`ModelFamily`]).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic function, branched on sign so neither tail overflows.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic IRT family. Smaller families pin parameters of the 4PL curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelFamily {
    /// `a = 1, c = 0, d = 1`
    #[serde(rename = "1pl")]
    OnePL,
    /// `c = 0, d = 1`
    #[serde(rename = "2pl")]
    TwoPL,
    /// `d = 1`
    #[serde(rename = "3pl")]
    ThreePL,
    #[serde(rename = "4pl")]
    FourPL,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::OnePL,
        ModelFamily::TwoPL,
        ModelFamily::ThreePL,
        ModelFamily::FourPL,
    ];

    /// Number of free item parameters (and item-network output heads).
    pub fn free_item_params(self) -> usize {
        match self {
            ModelFamily::OnePL => 1,
            ModelFamily::TwoPL => 2,
            ModelFamily::ThreePL => 3,
            ModelFamily::FourPL => 4,
        }
    }

    pub fn has_discrimination(self) -> bool {
        self != ModelFamily::OnePL
    }

    pub fn has_guessing(self) -> bool {
        matches!(self, ModelFamily::ThreePL | ModelFamily::FourPL)
    }

    pub fn has_feasibility(self) -> bool {
        self == ModelFamily::FourPL
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::OnePL => "1pl",
            ModelFamily::TwoPL => "2pl",
            ModelFamily::ThreePL => "3pl",
            ModelFamily::FourPL => "4pl",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1pl" => Ok(ModelFamily::OnePL),
            "2pl" => Ok(ModelFamily::TwoPL),
            "3pl" => Ok(ModelFamily::ThreePL),
            "4pl" => Ok(ModelFamily::FourPL),
            other => Err(Error::InvalidArgument(format!(
                "unknown model family `{other}` (expected 1pl, 2pl, 3pl or 4pl)"
            ))),
        }
    }
}

/// Parameters of one item.
///
/// * `a` discriminability, `> 0`
/// * `b` difficulty, on the ability scale
/// * `c` guessing rate (lower asymptote)
/// * `d` feasibility (upper asymptote), with `0 ≤ c ≤ d ≤ 1`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl ItemParams {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let params = ItemParams { a, b, c, d };
        params.validate()?;
        Ok(params)
    }

    /// A 1PL item of difficulty `b`.
    pub fn rasch(b: f64) -> Self {
        ItemParams {
            a: 1.0,
            b,
            c: 0.0,
            d: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.c, self.d].iter().all(|v| v.is_finite());
        if !finite || self.a <= 0.0 || !(0.0 <= self.c && self.c <= self.d && self.d <= 1.0) {
            return Err(Error::InvalidData(format!(
                "item parameters out of range: {self:?} (need a > 0, 0 <= c <= d <= 1)"
            )));
        }
        Ok(())
    }

    /// Checks that the parameters pinned by `family` hold exactly.
    pub fn check_family(&self, family: ModelFamily) -> Result<()> {
        let ok = match family {
            ModelFamily::OnePL => self.a == 1.0 && self.c == 0.0 && self.d == 1.0,
            ModelFamily::TwoPL => self.c == 0.0 && self.d == 1.0,
            ModelFamily::ThreePL => self.d == 1.0,
            ModelFamily::FourPL => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "item parameters {self:?} violate {family} constraints"
            )))
        }
    }

    #[inline]
    fn slope_term(&self, theta: f64) -> f64 {
        logistic(self.a * (theta - self.b))
    }

    /// 4PL response probability, without family checks.
    #[inline]
    pub fn probability(&self, theta: f64) -> f64 {
        if self.d == self.c {
            return self.c;
        }
        self.c + (self.d - self.c) * self.slope_term(theta)
    }
}

/// Latent ability of one examinee model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityEstimate {
    #[serde(rename = "model")]
    pub model_id: String,
    pub theta: f64,
}

/// Item characteristic curve `P(X = 1 | θ)` under `family`.
pub fn icc(params: &ItemParams, theta: f64, family: ModelFamily) -> Result<f64> {
    params.check_family(family)?;
    Ok(params.probability(theta))
}

/// `dP/dθ = a(d − c)·s(1 − s)` with `s = σ(a(θ − b))`.
pub fn icc_derivative(params: &ItemParams, theta: f64) -> f64 {
    let s = params.slope_term(theta);
    params.a * (params.d - params.c) * s * (1.0 - s)
}

/// Local efficiency headroom: slope of the ICC at the strongest observed
/// ability. Near zero means the item is saturated for the top examinee.
pub fn leh(params: &ItemParams, theta_max: f64) -> f64 {
    icc_derivative(params, theta_max)
}

/// Fisher information of a 4PL item,
/// `a²(P − c)²(d − P)² / ((d − c)²·P(1 − P))`.
///
/// Zero for degenerate items (`d = c`) and in the limits `P ∈ {0, 1}`.
pub fn fisher_information(params: &ItemParams, theta: f64) -> f64 {
    let range = params.d - params.c;
    if range <= 0.0 {
        return 0.0;
    }
    let s = params.slope_term(theta);
    let p = params.c + range * s;
    let denom = p * (1.0 - p);
    if denom <= 0.0 {
        return 0.0;
    }
    // (P − c) = (d − c)s and (d − P) = (d − c)(1 − s); this cancels one (d − c)²
    // and avoids catastrophic cancellation near the asymptotes.
    let a = params.a;
    a * a * range * range * s * s * (1.0 - s) * (1.0 - s) / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn item(a: f64, b: f64, c: f64, d: f64) -> ItemParams {
        ItemParams::new(a, b, c, d).unwrap()
    }

    #[test]
    fn one_pl_at_difficulty_is_half() {
        let p = icc(&ItemParams::rasch(0.7), 0.7, ModelFamily::OnePL).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn four_pl_midpoint() {
        let p = icc(&item(1.3, -0.4, 0.2, 0.9), -0.4, ModelFamily::FourPL).unwrap();
        assert_relative_eq!(p, 0.55, epsilon = 1e-15);
    }

    #[test]
    fn asymptotes() {
        let it = item(1.0, 0.0, 0.2, 0.9);
        assert_relative_eq!(it.probability(-1e3), 0.2, epsilon = 1e-15);
        assert_relative_eq!(it.probability(1e3), 0.9, epsilon = 1e-15);
        assert!(it.probability(-1e300).is_finite());
    }

    #[test]
    fn family_violation_is_an_error() {
        let it = item(1.5, 0.0, 0.0, 1.0);
        assert!(icc(&it, 0.0, ModelFamily::OnePL).is_err());
        assert!(icc(&it, 0.0, ModelFamily::TwoPL).is_ok());
        assert!(icc(&item(1.0, 0.0, 0.1, 1.0), 0.0, ModelFamily::TwoPL).is_err());
        assert!(icc(&item(1.0, 0.0, 0.1, 0.9), 0.0, ModelFamily::ThreePL).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ItemParams::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(ItemParams::new(1.0, 0.0, 0.5, 0.4).is_err());
        assert!(ItemParams::new(1.0, 0.0, -0.1, 0.4).is_err());
        assert!(ItemParams::new(1.0, 0.0, 0.1, 1.1).is_err());
        assert!(ItemParams::new(1.0, f64::NAN, 0.1, 0.9).is_err());
    }

    #[test]
    fn derivative_at_difficulty() {
        let it = item(1.2, 0.3, 0.1, 0.9);
        assert_relative_eq!(icc_derivative(&it, 0.3), 0.24, epsilon = 1e-15);
        assert_relative_eq!(leh(&it, 0.3), 1.2 * 0.8 / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn leh_vanishes_for_saturated_items() {
        let it = item(1.5, -2.0, 0.1, 0.95);
        assert!(leh(&it, 30.0) < 1e-15);
        let steep = item(2.0, 0.0, 0.0, 1.0);
        let flat = item(1.0, 0.0, 0.0, 1.0);
        assert!(leh(&steep, 0.0) > leh(&flat, 0.0));
    }

    #[test]
    fn fisher_examples() {
        assert_relative_eq!(
            fisher_information(&item(2.0, 0.5, 0.0, 1.0), 0.5),
            1.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            fisher_information(&item(1.0, 0.0, 0.25, 1.0), 0.0),
            0.15,
            epsilon = 1e-14
        );
    }

    #[test]
    fn fisher_degenerate_cases() {
        let flat = ItemParams {
            a: 1.0,
            b: 0.0,
            c: 0.4,
            d: 0.4,
        };
        assert_eq!(fisher_information(&flat, 0.0), 0.0);
        assert_eq!(flat.probability(3.0), 0.4);
        let it = item(3.0, 0.0, 0.0, 1.0);
        assert_eq!(fisher_information(&it, f64::INFINITY), 0.0);
        assert_eq!(fisher_information(&it, f64::NEG_INFINITY), 0.0);
        assert_eq!(fisher_information(&it, 500.0), 0.0);
    }

    #[test]
    fn literal_fisher_formula_agrees() {
        let it = item(1.7, 0.2, 0.15, 0.85);
        for k in -20..=20 {
            let theta = k as f64 * 0.25;
            let p = it.probability(theta);
            let literal = it.a.powi(2) * (p - it.c).powi(2) * (it.d - p).powi(2)
                / ((it.d - it.c).powi(2) * p * (1.0 - p));
            assert_relative_eq!(fisher_information(&it, theta), literal, max_relative = 1e-9);
        }
    }

    #[test]
    fn family_parses() {
        for fam in ModelFamily::ALL {
            assert_eq!(fam.as_str().parse::<ModelFamily>().unwrap(), fam);
        }
        assert!("5pl".parse::<ModelFamily>().is_err());
    }

    fn arb_item() -> impl proptest::strategy::Strategy<Value = ItemParams> {
        use proptest::prelude::*;
        (0.1f64..4.0, -4.0f64..4.0, 0.0f64..0.45, 0.55f64..=1.0)
            .prop_map(|(a, b, c, d)| ItemParams::new(a, b, c, d).unwrap())
    }

    proptest::proptest! {
        #[test]
        fn icc_is_monotone_within_asymptotes(it in arb_item(), t in -6.0f64..6.0, dt in 1e-3f64..3.0) {
            let (lo, hi) = (it.probability(t), it.probability(t + dt));
            proptest::prop_assert!(lo <= hi);
            proptest::prop_assert!(it.c <= lo && hi <= it.d);
            proptest::prop_assert!(icc_derivative(&it, t) >= 0.0);
        }

        #[test]
        fn fisher_depends_on_theta_minus_b(it in arb_item(), t in -4.0f64..4.0, shift in -2.0f64..2.0) {
            let moved = ItemParams { b: it.b + shift, ..it };
            let (x, y) = (fisher_information(&it, t), fisher_information(&moved, t + shift));
            proptest::prop_assert!((x - y).abs() <= 1e-9 * x.max(1e-12));
        }

        #[test]
        fn families_nest_at_their_fixed_values(a in 0.1f64..4.0, b in -4.0f64..4.0, t in -6.0f64..6.0) {
            let two = ItemParams::new(a, b, 0.0, 1.0).unwrap();
            let p2 = icc(&two, t, ModelFamily::TwoPL).unwrap();
            proptest::prop_assert_eq!(icc(&two, t, ModelFamily::FourPL).unwrap(), p2);
            proptest::prop_assert_eq!(icc(&two, t, ModelFamily::ThreePL).unwrap(), p2);
            let one = ItemParams::rasch(b);
            proptest::prop_assert_eq!(
                icc(&one, t, ModelFamily::OnePL).unwrap(),
                icc(&one, t, ModelFamily::FourPL).unwrap()
            );
        }
    }
}
