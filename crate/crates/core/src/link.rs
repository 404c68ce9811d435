//! Maps unconstrained head values onto valid item parameters.
//!
//! Head layout per family (in order): 1PL `[b]`, 2PL `[a, b]`,
//! 3PL `[a, b, c]`, 4PL `[a, b, c, d]`.
//!
//! * `a = softplus(r_a) + A_FLOOR`
//! * `b = r_b`
//! * `d = σ(r_d)` (4PL) else 1
//! * `c = d · σ(r_c)` (3PL, 4PL) else 0
//!
//! so `a > 0` and `0 ≤ c ≤ d ≤ 1` hold for every finite input.

use crate::irt::{logistic, ItemParams, ModelFamily};
use crate::nn::{logit, softplus, softplus_inverse};

pub const A_FLOOR: f64 = 1e-3;

pub fn item_params(family: ModelFamily, raw: &[f64]) -> ItemParams {
    debug_assert_eq!(raw.len(), family.free_item_params());
    match family {
        ModelFamily::OnePL => ItemParams::rasch(raw[0]),
        ModelFamily::TwoPL => ItemParams {
            a: softplus(raw[0]) + A_FLOOR,
            b: raw[1],
            c: 0.0,
            d: 1.0,
        },
        ModelFamily::ThreePL => ItemParams {
            a: softplus(raw[0]) + A_FLOOR,
            b: raw[1],
            c: logistic(raw[2]),
            d: 1.0,
        },
        ModelFamily::FourPL => {
            let d = logistic(raw[3]);
            ItemParams {
                a: softplus(raw[0]) + A_FLOOR,
                b: raw[1],
                c: d * logistic(raw[2]),
                d,
            }
        }
    }
}

/// Head values that reproduce `params` under `family` (inverse link).
/// Values on a boundary are nudged inside by `1e-9`.
pub fn raw_heads(family: ModelFamily, params: &ItemParams) -> Vec<f64> {
    let inner = |p: f64| p.clamp(1e-9, 1.0 - 1e-9);
    let r_a = softplus_inverse((params.a - A_FLOOR).max(1e-9));
    match family {
        ModelFamily::OnePL => vec![params.b],
        ModelFamily::TwoPL => vec![r_a, params.b],
        ModelFamily::ThreePL => vec![r_a, params.b, logit(inner(params.c))],
        ModelFamily::FourPL => {
            let d = inner(params.d);
            vec![r_a, params.b, logit(inner(params.c / d)), logit(d)]
        }
    }
}

/// Response probability with its gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityGrad {
    pub p: f64,
    pub d_theta: f64,
    /// `dP/d r_k` for each head, unused tail entries zero.
    pub d_heads: [f64; 4],
}

pub fn probability_grad(family: ModelFamily, theta: f64, raw: &[f64]) -> ProbabilityGrad {
    let params = item_params(family, raw);
    let delta = theta - params.b;
    let s = logistic(params.a * delta);
    let ds = s * (1.0 - s);
    let range = params.d - params.c;
    let p = params.c + range * s;

    // Partials of P with respect to a, b, c, d.
    let dp_da = range * ds * delta;
    let dp_db = -range * ds * params.a;
    let dp_dc = 1.0 - s;
    let dp_dd = s;
    let d_theta = range * ds * params.a;

    let mut d_heads = [0.0; 4];
    match family {
        ModelFamily::OnePL => d_heads[0] = dp_db,
        ModelFamily::TwoPL => {
            d_heads[0] = dp_da * logistic(raw[0]);
            d_heads[1] = dp_db;
        }
        ModelFamily::ThreePL => {
            d_heads[0] = dp_da * logistic(raw[0]);
            d_heads[1] = dp_db;
            // d = 1 is fixed, so only the c path remains.
            let c = params.c;
            d_heads[2] = dp_dc * c * (1.0 - c);
        }
        ModelFamily::FourPL => {
            d_heads[0] = dp_da * logistic(raw[0]);
            d_heads[1] = dp_db;
            let sc = logistic(raw[2]);
            let d = params.d;
            d_heads[2] = dp_dc * d * sc * (1.0 - sc);
            // c = d·σ(r_c) depends on d too.
            d_heads[3] = (dp_dd + dp_dc * sc) * d * (1.0 - d);
        }
    }
    ProbabilityGrad { p, d_theta, d_heads }
}
