//! Wavelet filter-bank registry.
//!
//! Taps are stored in correlation order: row `i` of the analysis matrix holds
//! `taps[k]` at column `2i + k`. Under that convention the Haar analysis pair is
//! `{1/√2, 1/√2}` / `{1/√2, −1/√2}`. The Daubechies and CDF (biorthogonal) taps
//! come from the standard published tables; every bank is checked against its
//! invariants when constructed.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Wavelet {
    Haar,
    Db2,
    Db3,
    Bior22,
    Bior33,
}

impl Wavelet {
    pub const ALL: [Wavelet; 5] = [Wavelet::Haar, Wavelet::Db2, Wavelet::Db3, Wavelet::Bior22, Wavelet::Bior33];

    pub fn name(self) -> &'static str {
        match self {
            Wavelet::Haar => "haar",
            Wavelet::Db2 => "db2",
            Wavelet::Db3 => "db3",
            Wavelet::Bior22 => "bior2.2",
            Wavelet::Bior33 => "bior3.3",
        }
    }

    pub fn is_orthogonal(self) -> bool {
        matches!(self, Wavelet::Haar | Wavelet::Db2 | Wavelet::Db3)
    }

    pub fn filter_bank(self) -> FilterBank {
        let fb = match self {
            Wavelet::Haar => FilterBank::orthogonal("haar", vec![SQRT_2 / 2.0, SQRT_2 / 2.0]),
            Wavelet::Db2 => FilterBank::orthogonal(
                "db2",
                vec![
                    0.48296291314453416,
                    0.8365163037378079,
                    0.2241438680420134,
                    -0.12940952255126037,
                ],
            ),
            Wavelet::Db3 => FilterBank::orthogonal(
                "db3",
                vec![
                    0.33267055295008263,
                    0.8068915093110925,
                    0.45987750211849154,
                    -0.13501102001025458,
                    -0.08544127388202666,
                    0.03522629188570953,
                ],
            ),
            Wavelet::Bior22 => FilterBank::biorthogonal(
                "bior2.2",
                scaled(SQRT_2 / 8.0, &[-1.0, 2.0, 6.0, 2.0, -1.0, 0.0]),
                scaled(SQRT_2 / 4.0, &[0.0, 0.0, 1.0, -2.0, 1.0, 0.0]),
                scaled(SQRT_2 / 4.0, &[0.0, 1.0, 2.0, 1.0, 0.0, 0.0]),
                scaled(SQRT_2 / 8.0, &[0.0, 1.0, 2.0, -6.0, 2.0, 1.0]),
            ),
            Wavelet::Bior33 => FilterBank::biorthogonal(
                "bior3.3",
                scaled(SQRT_2 / 64.0, &[3.0, -9.0, -7.0, 45.0, 45.0, -7.0, -9.0, 3.0]),
                scaled(SQRT_2 / 8.0, &[0.0, 0.0, 1.0, -3.0, 3.0, -1.0, 0.0, 0.0]),
                scaled(SQRT_2 / 8.0, &[0.0, 0.0, 1.0, 3.0, 3.0, 1.0, 0.0, 0.0]),
                scaled(SQRT_2 / 64.0, &[3.0, 9.0, -7.0, -45.0, 45.0, 7.0, -9.0, -3.0]),
            ),
        };
        debug_assert!(fb.validate().is_ok(), "{}", self.name());
        fb
    }
}

fn scaled(factor: f64, v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x * factor).collect()
}

fn valid_names() -> String {
    Wavelet::ALL.iter().map(|w| w.name()).collect::<Vec<_>>().join(", ")
}

impl FromStr for Wavelet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Wavelet::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::Registry { name: s.to_string(), valid: valid_names() })
    }
}

impl fmt::Display for Wavelet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Analysis and synthesis filter pairs of a two-channel filter bank.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub name: String,
    pub analysis_lo: Vec<f64>,
    pub analysis_hi: Vec<f64>,
    pub synthesis_lo: Vec<f64>,
    pub synthesis_hi: Vec<f64>,
    pub orthogonal: bool,
}

/// Looks up a registered filter bank by name.
pub fn filter_bank(name: &str) -> Result<FilterBank> {
    Ok(name.parse::<Wavelet>()?.filter_bank())
}

impl FilterBank {
    /// Orthogonal bank from its low-pass taps; the high-pass follows the
    /// quadrature-mirror relation `h_k = (−1)^k · l_{m−1−k}` and synthesis aliases analysis.
    pub fn orthogonal(name: &str, lo: Vec<f64>) -> Self {
        let m = lo.len();
        let hi = (0..m).map(|k| if k % 2 == 0 { lo[m - 1 - k] } else { -lo[m - 1 - k] }).collect::<Vec<_>>();
        FilterBank {
            name: name.to_string(),
            synthesis_lo: lo.clone(),
            synthesis_hi: hi.clone(),
            analysis_lo: lo,
            analysis_hi: hi,
            orthogonal: true,
        }
    }

    pub fn biorthogonal(name: &str, lo: Vec<f64>, hi: Vec<f64>, syn_lo: Vec<f64>, syn_hi: Vec<f64>) -> Self {
        FilterBank {
            name: name.to_string(),
            analysis_lo: lo,
            analysis_hi: hi,
            synthesis_lo: syn_lo,
            synthesis_hi: syn_hi,
            orthogonal: false,
        }
    }

    pub fn len(&self) -> usize {
        self.analysis_lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.analysis_lo.is_empty()
    }

    /// Checks the tap-level invariants. Perfect reconstruction is a property of
    /// the transform and is checked by the wavelet tests instead.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("filter bank {}: {msg}", self.name)));
        let lens = [&self.analysis_lo, &self.analysis_hi, &self.synthesis_lo, &self.synthesis_hi].map(|v| v.len());
        if lens[0] == 0 || lens.iter().any(|&l| l != lens[0]) {
            return bad(format!("tap vectors must share one non-zero length, got {lens:?}"));
        }
        let lo: f64 = self.analysis_lo.iter().sum();
        let hi: f64 = self.analysis_hi.iter().sum();
        if (lo - SQRT_2).abs() > 1e-10 {
            return bad(format!("sum of low-pass taps is {lo}, expected √2"));
        }
        if hi.abs() > 1e-10 {
            return bad(format!("sum of high-pass taps is {hi}, expected 0"));
        }
        if self.orthogonal {
            let m = self.len();
            for k in 0..m {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                if (self.analysis_hi[k] - sign * self.analysis_lo[m - 1 - k]).abs() > 1e-12 {
                    return bad(format!("quadrature-mirror relation fails at k={k}"));
                }
            }
            if self.synthesis_lo != self.analysis_lo || self.synthesis_hi != self.analysis_hi {
                return bad("orthogonal bank must reuse analysis filters for synthesis".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_taps() {
        let fb = filter_bank("haar").unwrap();
        let s = 0.7071067811865476;
        assert_eq!(fb.analysis_lo, vec![s, s]);
        assert_eq!(fb.analysis_hi, vec![s, -s]);
        assert!(fb.orthogonal);
    }

    #[test]
    fn every_registered_bank_validates() {
        for w in Wavelet::ALL {
            let fb = w.filter_bank();
            fb.validate().unwrap();
            assert_eq!(fb.orthogonal, w.is_orthogonal());
            assert_eq!(fb.name, w.name());
        }
        assert_eq!(filter_bank("db2").unwrap().len(), 4);
    }

    #[test]
    fn unknown_name_lists_valid_ones() {
        let err = filter_bank("nosuch").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Registry { .. }));
        assert!(msg.contains("haar") && msg.contains("bior3.3"), "{msg}");
    }

    #[test]
    fn perturbed_bank_fails_validation() {
        let mut fb = filter_bank("haar").unwrap();
        fb.analysis_lo[0] += 1e-3;
        assert!(fb.validate().is_err());
    }
}
