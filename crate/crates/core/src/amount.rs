use std::fmt;
use std::iter::Sum;

use serde::{Deserialize, Serialize};

/// Currency amount in minor units (cents). All arithmetic is checked.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Amount(pub u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub const fn from_minor(units: u64) -> Self {
        Amount(units)
    }

    /// Whole currency units, e.g. `Amount::units(5)` is 5.00.
    pub const fn units(whole: u64) -> Self {
        Amount(whole * 100)
    }

    pub fn minor(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: Amount) -> Option<Amount> {
        self.0.checked_add(other.0).map(Amount)
    }

    pub fn checked_sub(self, other: Amount) -> Option<Amount> {
        self.0.checked_sub(other.0).map(Amount)
    }

    pub fn saturating_sub(self, other: Amount) -> Amount {
        Amount(self.0.saturating_sub(other.0))
    }

    pub fn checked_sum<I: IntoIterator<Item = Amount>>(items: I) -> Option<Amount> {
        items
            .into_iter()
            .try_fold(Amount::ZERO, |acc, a| acc.checked_add(a))
    }
}

/// Panics on overflow; use `checked_sum` on untrusted input.
impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Self {
        Amount::checked_sum(iter).expect("amount overflow")
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid amount {0:?}: expected units with at most two decimals")]
pub struct ParseAmountError(pub String);

/// Parses `"12"`, `"12.5"` or `"12.05"`.
impl std::str::FromStr for Amount {
    type Err = ParseAmountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseAmountError(s.to_string());
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        let digits = |x: &str| !x.is_empty() && x.bytes().all(|b| b.is_ascii_digit());
        if !digits(whole)
            || frac.len() > 2
            || (!frac.is_empty() && !digits(frac))
            || (s.contains('.') && frac.is_empty())
        {
            return Err(err());
        }
        let whole: u64 = whole.parse().map_err(|_| err())?;
        let cents: u64 = format!("{frac:0<2}").parse().map_err(|_| err())?;
        whole
            .checked_mul(100)
            .and_then(|w| w.checked_add(cents))
            .map(Amount)
            .ok_or_else(err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimal_strings() {
        assert_eq!("12".parse::<Amount>(), Ok(Amount(1200)));
        assert_eq!("12.5".parse::<Amount>(), Ok(Amount(1250)));
        assert_eq!("0.05".parse::<Amount>(), Ok(Amount(5)));
        for bad in [
            "",
            ".5",
            "1.",
            "1.234",
            "-1",
            "1e3",
            "x",
            "184467440737095516.16",
        ] {
            assert!(bad.parse::<Amount>().is_err(), "{bad}");
        }
        let a = Amount(123_456);
        assert_eq!(a.to_string().parse::<Amount>(), Ok(a));
    }

    #[test]
    fn display_and_arithmetic() {
        assert_eq!(Amount::from_minor(1005).to_string(), "10.05");
        assert_eq!(Amount::units(3).to_string(), "3.00");
        assert_eq!(Amount(u64::MAX).checked_add(Amount(1)), None);
        assert_eq!(Amount(1).checked_sub(Amount(2)), None);
        assert_eq!(Amount::checked_sum([Amount(1), Amount(2)]), Some(Amount(3)));
    }
}
