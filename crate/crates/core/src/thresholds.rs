//! Threshold distributions.
//!
//! A node activates once the summed weight of its active parents reaches a
//! random threshold `U ~ F` supported on `[0, h]`. Every family here has a
//! strictly increasing cdf on its support and closed-form density and density
//! derivative, which is what the likelihood and its derivatives need.

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{GltError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Uniform,
    Exponential,
    Beta { alpha: f64, beta: f64 },
}

/// Threshold cdf `F_v` with its analytic companions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdDoc", into = "ThresholdDoc")]
pub struct ThresholdSpec {
    family: Family,
    // ln B(alpha, beta) for the beta family, 0 otherwise
    ln_norm: f64,
}

/// Wire form: `{"family":"uniform"}`, `{"family":"exponential"}`,
/// `{"family":"beta","alpha":a,"beta":b}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ThresholdDoc {
    Uniform,
    Exponential,
    Beta { alpha: f64, beta: f64 },
}

impl TryFrom<ThresholdDoc> for ThresholdSpec {
    type Error = GltError;

    fn try_from(doc: ThresholdDoc) -> Result<Self> {
        match doc {
            ThresholdDoc::Uniform => Ok(ThresholdSpec::uniform()),
            ThresholdDoc::Exponential => Ok(ThresholdSpec::exponential()),
            ThresholdDoc::Beta { alpha, beta } => ThresholdSpec::beta(alpha, beta),
        }
    }
}

impl From<ThresholdSpec> for ThresholdDoc {
    fn from(spec: ThresholdSpec) -> Self {
        match spec.family {
            Family::Uniform => ThresholdDoc::Uniform,
            Family::Exponential => ThresholdDoc::Exponential,
            Family::Beta { alpha, beta } => ThresholdDoc::Beta { alpha, beta },
        }
    }
}

impl std::fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.family {
            Family::Uniform => write!(f, "uniform"),
            Family::Exponential => write!(f, "exponential"),
            Family::Beta { alpha, beta } => write!(f, "beta({alpha},{beta})"),
        }
    }
}

/// Parses `uniform`, `exponential`, `beta(a,b)` or `beta:a,b`.
impl std::str::FromStr for ThresholdSpec {
    type Err = GltError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "uniform" | "lt" => return Ok(ThresholdSpec::uniform()),
            "exponential" | "ic" => return Ok(ThresholdSpec::exponential()),
            _ => {}
        }
        let bad = || GltError::InvalidThreshold(format!("cannot parse threshold family '{s}'"));
        let args = s
            .strip_prefix("beta")
            .map(|r| r.trim_start_matches([':', '(']).trim_end_matches(')'))
            .ok_or_else(bad)?;
        let parts: Vec<f64> = args
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match parts[..] {
            [a, b] => ThresholdSpec::beta(a, b),
            _ => Err(bad()),
        }
    }
}

impl ThresholdSpec {
    /// Uniform on [0, 1]: the linear threshold model.
    pub fn uniform() -> Self {
        ThresholdSpec {
            family: Family::Uniform,
            ln_norm: 0.0,
        }
    }

    /// Exponential(1): the independent cascade model.
    pub fn exponential() -> Self {
        ThresholdSpec {
            family: Family::Exponential,
            ln_norm: 0.0,
        }
    }

    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(GltError::InvalidThreshold(format!(
                "beta parameters must be positive, got ({alpha}, {beta})"
            )));
        }
        Ok(ThresholdSpec {
            family: Family::Beta { alpha, beta },
            ln_norm: ln_beta(alpha, beta),
        })
    }

    /// Beta thresholds restricted to `alpha, beta >= 1` (log-concave density,
    /// hence a concave likelihood).
    pub fn beta_fit_safe(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 1.0 && beta >= 1.0) {
            return Err(GltError::InvalidThreshold(format!(
                "fitting requires alpha, beta >= 1, got ({alpha}, {beta})"
            )));
        }
        Self::beta(alpha, beta)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Upper end `h` of the support.
    pub fn support_bound(&self) -> f64 {
        match self.family {
            Family::Exponential => f64::INFINITY,
            _ => 1.0,
        }
    }

    pub fn has_log_concave_density(&self) -> bool {
        match self.family {
            Family::Uniform | Family::Exponential => true,
            Family::Beta { alpha, beta } => alpha >= 1.0 && beta >= 1.0,
        }
    }

    /// Decided analytically from the sign of `F''`.
    pub fn has_concave_cdf(&self) -> bool {
        match self.family {
            Family::Uniform | Family::Exponential => true,
            Family::Beta { alpha, beta } => alpha <= 1.0 && beta >= 1.0,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let p = match self.family {
            Family::Uniform => x.min(1.0),
            Family::Exponential => -(-x).exp_m1(),
            Family::Beta { alpha, beta } => {
                if x >= 1.0 {
                    1.0
                } else if alpha == 1.0 {
                    -(beta * (-x).ln_1p()).exp_m1()
                } else if beta == 1.0 {
                    x.powf(alpha)
                } else {
                    beta_reg(alpha, beta, x)
                }
            }
        };
        p.clamp(0.0, 1.0)
    }

    /// Complementary cdf `1 - F(x)`, evaluated without cancellation.
    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        let q = match self.family {
            Family::Uniform => (1.0 - x).max(0.0),
            Family::Exponential => (-x).exp(),
            Family::Beta { alpha, beta } => {
                if x >= 1.0 {
                    0.0
                } else if alpha == 1.0 {
                    (beta * (-x).ln_1p()).exp()
                } else if beta == 1.0 {
                    -(alpha * x.ln()).exp_m1()
                } else {
                    beta_reg(beta, alpha, 1.0 - x)
                }
            }
        };
        q.clamp(0.0, 1.0)
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 || x > self.support_bound() {
            return 0.0;
        }
        match self.family {
            Family::Uniform => 1.0,
            Family::Exponential => (-x).exp(),
            Family::Beta { alpha, beta } => {
                let mut log = -self.ln_norm;
                if alpha != 1.0 {
                    log += (alpha - 1.0) * x.ln();
                }
                if beta != 1.0 {
                    log += (beta - 1.0) * (-x).ln_1p();
                }
                log.exp()
            }
        }
    }

    pub fn density_derivative(&self, x: f64) -> f64 {
        if x < 0.0 || x > self.support_bound() {
            return 0.0;
        }
        match self.family {
            Family::Uniform => 0.0,
            Family::Exponential => -(-x).exp(),
            Family::Beta { alpha, beta } => {
                // f'(x) = [(a-1) x^(a-2) (1-x)^(b-1) - (b-1) x^(a-1) (1-x)^(b-2)] / B(a, b)
                let norm = (-self.ln_norm).exp();
                let left = if alpha == 1.0 {
                    0.0
                } else {
                    (alpha - 1.0) * x.powf(alpha - 2.0) * (1.0 - x).powf(beta - 1.0)
                };
                let right = if beta == 1.0 {
                    0.0
                } else {
                    (beta - 1.0) * x.powf(alpha - 1.0) * (1.0 - x).powf(beta - 2.0)
                };
                norm * (left - right)
            }
        }
    }

    pub fn inverse_cdf(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self.family {
            Family::Uniform => p,
            Family::Exponential => -(-p).ln_1p(),
            Family::Beta { alpha, beta } => {
                if p == 0.0 {
                    0.0
                } else if p == 1.0 {
                    1.0
                } else if alpha == 1.0 {
                    -((-p).ln_1p() / beta).exp_m1()
                } else if beta == 1.0 {
                    p.powf(1.0 / alpha)
                } else {
                    self.invert_numerically(p)
                }
            }
        }
    }

    // Safeguarded Newton on [0, 1]; falls back to bisection when a Newton
    // step leaves the bracket.
    fn invert_numerically(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut x = 0.5;
        for _ in 0..200 {
            let diff = self.cdf(x) - p;
            if diff == 0.0 {
                return x;
            }
            if diff < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let dens = self.density(x);
            let mut next = x - diff / dens;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-16 * x.max(1e-300) || hi - lo <= f64::EPSILON * hi {
                return next;
            }
            x = next;
        }
        x
    }

    /// `ln(1 - F(x))`.
    pub fn ln_sf(&self, x: f64) -> f64 {
        match self.family {
            Family::Uniform => (-x.clamp(0.0, 1.0)).ln_1p(),
            Family::Exponential => -x.max(0.0),
            Family::Beta { .. } => self.sf(x).ln(),
        }
    }

    /// `ln(F(hi) - F(lo))` for `hi >= lo >= 0`.
    pub fn ln_cdf_diff(&self, hi: f64, lo: f64) -> f64 {
        match self.family {
            Family::Uniform => (hi.min(1.0) - lo.clamp(0.0, 1.0)).ln(),
            Family::Exponential => {
                let lo = lo.max(0.0);
                -lo + (-(-(hi - lo)).exp_m1()).ln()
            }
            Family::Beta { .. } => {
                if lo <= 0.0 {
                    return self.cdf(hi).ln();
                }
                let f_lo = self.cdf(lo);
                let diff = if f_lo > 0.5 {
                    self.sf(lo) - self.sf(hi)
                } else {
                    self.cdf(hi) - f_lo
                };
                diff.ln()
            }
        }
    }

    /// `F'(0)`, the Lipschitz constant of a concave cdf.
    pub fn density_at_zero(&self) -> f64 {
        self.density(0.0)
    }
}

/// Analytic concavity decision for `F`.
pub fn check_concave_cdf(spec: &ThresholdSpec) -> bool {
    spec.has_concave_cdf()
}

#[cfg(test)]
mod tests {

    #[test]
    fn parse_family_names() {
        assert_eq!("uniform".parse::<ThresholdSpec>().unwrap(), ThresholdSpec::uniform());
        assert_eq!("IC".parse::<ThresholdSpec>().unwrap(), ThresholdSpec::exponential());
        let b = ThresholdSpec::beta(2.0, 1.5).unwrap();
        assert_eq!("beta:2,1.5".parse::<ThresholdSpec>().unwrap(), b);
        assert_eq!(b.to_string().parse::<ThresholdSpec>().unwrap(), b);
        assert!("beta:2".parse::<ThresholdSpec>().is_err());
        assert!("gamma".parse::<ThresholdSpec>().is_err());
    }

    use super::*;

    fn beta(a: f64, b: f64) -> ThresholdSpec {
        ThresholdSpec::beta(a, b).unwrap()
    }

    fn families() -> Vec<ThresholdSpec> {
        vec![
            ThresholdSpec::uniform(),
            ThresholdSpec::exponential(),
            beta(2.0, 2.0),
            beta(1.0, 3.0),
            beta(2.0, 1.0),
            beta(2.5, 4.0),
            beta(1.0, 1.0),
            beta(3.0, 1.5),
        ]
    }

    #[test]
    fn closed_form_values() {
        assert!((ThresholdSpec::uniform().cdf(0.3) - 0.3).abs() < 1e-15);
        assert!((ThresholdSpec::exponential().cdf(2f64.ln()) - 0.5).abs() < 1e-15);
        assert!((beta(2.0, 1.0).cdf(0.5) - 0.25).abs() < 1e-15);
        assert_eq!(ThresholdSpec::uniform().cdf(1.7), 1.0);
        assert_eq!(beta(2.0, 3.0).cdf(1.2), 1.0);
        assert_eq!(ThresholdSpec::exponential().cdf(0.0), 0.0);
    }

    #[test]
    fn beta_cdf_reference_values() {
        // scipy.stats.beta.cdf reference values
        let cases = [
            (2.0, 2.0, 0.3, 0.216),
            (2.0, 3.0, 0.4, 0.5248),
            (2.5, 4.0, 0.35, 0.454_809_783_749_592_97),
            (3.0, 1.5, 0.8, 0.695_894_755_060_028_6),
            (7.0, 9.0, 0.45, 0.547_839_597_959_583_9),
            (10.0, 10.0, 0.05, 5.939_339_059_664_379_6e-9),
        ];
        for (a, b, x, want) in cases {
            let got = beta(a, b).cdf(x);
            assert!((got - want).abs() < 1e-12, "beta({a},{b}) at {x}: {got} vs {want}");
        }
    }

    #[test]
    fn beta_one_one_is_uniform() {
        let b = beta(1.0, 1.0);
        let u = ThresholdSpec::uniform();
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            assert!((b.cdf(x) - u.cdf(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn flags() {
        assert!(beta(1.0, 2.0).has_concave_cdf());
        assert!(!beta(2.0, 1.0).has_concave_cdf());
        assert!(beta(2.0, 1.0).has_log_concave_density());
        assert!(!beta(0.5, 2.0).has_log_concave_density());
        assert!(check_concave_cdf(&ThresholdSpec::uniform()));
        assert!(check_concave_cdf(&ThresholdSpec::exponential()));
        assert!(!check_concave_cdf(&beta(2.0, 2.0)));
    }

    #[test]
    fn concavity_flag_matches_numerical_second_derivative() {
        // Oracle: sign of the second difference of F on a grid.
        let specs = [beta(2.0, 2.0), beta(1.0, 2.0), beta(0.7, 1.5), beta(2.0, 1.0), beta(1.0, 1.0)];
        for spec in specs {
            let h = 1e-4;
            let convex_somewhere = (1..200).any(|i| {
                let x = i as f64 / 200.0;
                spec.cdf(x + h) - 2.0 * spec.cdf(x) + spec.cdf(x - h) > 1e-12
            });
            assert_eq!(check_concave_cdf(&spec), !convex_somewhere, "{spec}");
        }
    }

    #[test]
    fn construction_errors() {
        assert!(ThresholdSpec::beta(0.0, 1.0).is_err());
        assert!(ThresholdSpec::beta(1.0, -2.0).is_err());
        assert!(ThresholdSpec::beta_fit_safe(0.5, 2.0).is_err());
        assert!(ThresholdSpec::beta_fit_safe(1.0, 2.0).is_ok());
    }

    #[test]
    fn inverse_round_trip() {
        for spec in families() {
            let top = spec.support_bound().min(10.0);
            for i in 1..100 {
                let x = top * i as f64 / 100.0;
                let back = spec.inverse_cdf(spec.cdf(x));
                assert!((back - x).abs() < 1e-10, "{spec} at {x}: {back}");
            }
        }
    }

    #[test]
    fn density_matches_cdf_differences() {
        for spec in families() {
            let top = spec.support_bound().min(10.0);
            for i in 1..50 {
                let x = top * i as f64 / 50.0;
                let h = 1e-5 * top;
                let fd = (spec.cdf(x + h) - spec.cdf(x - h)) / (2.0 * h);
                let d = spec.density(x);
                assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0), "{spec} at {x}: {fd} vs {d}");
            }
        }
    }

    #[test]
    fn density_derivative_matches_density_differences() {
        for spec in families() {
            let top = spec.support_bound().min(10.0);
            for i in 1..50 {
                let x = top * i as f64 / 50.0;
                let h = 1e-5 * top;
                let fd = (spec.density(x + h) - spec.density(x - h)) / (2.0 * h);
                let d = spec.density_derivative(x);
                assert!((fd - d).abs() <= 1e-5 * d.abs().max(1.0), "{spec} at {x}: {fd} vs {d}");
            }
        }
    }

    #[test]
    fn log_density_midpoint_concave() {
        for spec in families().into_iter().filter(|s| s.has_log_concave_density()) {
            let top = spec.support_bound().min(10.0);
            for i in 1..40 {
                for j in i + 1..40 {
                    let (a, b) = (top * i as f64 / 40.0, top * j as f64 / 40.0);
                    let mid = spec.density(0.5 * (a + b)).ln();
                    let avg = 0.5 * (spec.density(a).ln() + spec.density(b).ln());
                    assert!(mid >= avg - 1e-12, "{spec}");
                }
            }
        }
    }

    #[test]
    fn stable_log_forms_agree_with_naive() {
        for spec in families() {
            let top = spec.support_bound().min(3.0);
            for i in 0..20 {
                for j in i + 1..=20 {
                    let (lo, hi) = (top * i as f64 / 21.0, top * j as f64 / 21.0);
                    let naive = (spec.cdf(hi) - spec.cdf(lo)).ln();
                    assert!((spec.ln_cdf_diff(hi, lo) - naive).abs() < 1e-9, "{spec}");
                }
                let x = top * i as f64 / 21.0;
                assert!((spec.ln_sf(x) - (1.0 - spec.cdf(x)).ln()).abs() < 1e-9);
            }
        }
        // far tail of the exponential where 1 - F underflows in the naive form
        let e = ThresholdSpec::exponential();
        assert!((e.ln_sf(50.0) + 50.0).abs() < 1e-12);
        assert!((e.ln_cdf_diff(41.0, 40.0) - (-40.0 + (1.0 - (-1.0f64).exp()).ln())).abs() < 1e-12);
    }

    #[test]
    fn json_encoding() {
        let cases = [
            (ThresholdSpec::uniform(), r#"{"family":"uniform"}"#),
            (ThresholdSpec::exponential(), r#"{"family":"exponential"}"#),
            (beta(2.0, 1.5), r#"{"family":"beta","alpha":2.0,"beta":1.5}"#),
        ];
        for (spec, text) in cases {
            assert_eq!(serde_json::to_string(&spec).unwrap(), text);
            assert_eq!(serde_json::from_str::<ThresholdSpec>(text).unwrap(), spec);
        }
        assert!(serde_json::from_str::<ThresholdSpec>(r#"{"family":"beta","alpha":0,"beta":1}"#).is_err());
    }
}
