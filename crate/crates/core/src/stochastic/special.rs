use super::StochasticError;

/// Natural log of the Gamma function (Lanczos approximation from `statrs`).
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Digamma function psi(x) = d/dx ln Gamma(x) for x > 0.
///
/// Shifts x above 10 with psi(x) = psi(x + 1) - 1/x, then applies the
/// asymptotic expansion through the x^-14 term.
pub fn digamma(x: f64) -> Result<f64, StochasticError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(StochasticError::Domain {
            function: "digamma",
            x,
        });
    }
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli terms B_2k / (2k)
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    shift + x.ln() - 0.5 * inv - series
}
