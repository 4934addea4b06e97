//! Clarke Error Grid zones for (reference, predicted) glucose pairs.

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Zone {
    A,
    B,
    C,
    D,
    E,
}

impl Zone {
    pub const ALL: [Zone; 5] = [Zone::A, Zone::B, Zone::C, Zone::D, Zone::E];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Zone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Zone of one pair, rules evaluated in the order A, E, C, D, else B. The
/// comparisons mirror the widely used reference implementation, including
/// its inclusive `<= 70` corner for zone A.
pub fn clarke_zone(reference: f64, pred: f64) -> Result<Zone> {
    if !(reference > 0.0 && pred > 0.0 && reference.is_finite() && pred.is_finite()) {
        return Err(ForgeError::invalid(format!(
            "Clarke grid needs positive finite values, got ({reference}, {pred})"
        )));
    }
    let (r, p) = (reference, pred);
    let zone = if (r <= 70.0 && p <= 70.0) || (p <= 1.2 * r && p >= 0.8 * r) {
        Zone::A
    } else if (r >= 180.0 && p <= 70.0) || (r <= 70.0 && p >= 180.0) {
        Zone::E
    } else if ((70.0..=290.0).contains(&r) && p >= r + 110.0)
        || ((130.0..=180.0).contains(&r) && p <= (7.0 / 5.0) * r - 182.0)
    {
        Zone::C
    } else if (r >= 240.0 && (70.0..=180.0).contains(&p))
        || (r <= 175.0 / 3.0 && (70.0..=180.0).contains(&p))
        || ((175.0 / 3.0..=70.0).contains(&r) && p >= (6.0 / 5.0) * r)
    {
        Zone::D
    } else {
        Zone::B
    };
    Ok(zone)
}

/// Fraction of pairs in each zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClarkeSummary {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl ClarkeSummary {
    pub fn fractions(&self) -> [f64; 5] {
        [self.a, self.b, self.c, self.d, self.e]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("zone,fraction\n");
        for (z, f) in Zone::ALL.iter().zip(self.fractions()) {
            out.push_str(&format!("{z},{f}\n"));
        }
        out
    }
}

pub fn clarke_summary(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<ClarkeSummary> {
    let mut counts = [0usize; 5];
    let mut n = 0usize;
    for (r, p) in pairs {
        counts[clarke_zone(r, p)?.index()] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(ForgeError::invalid("Clarke summary of zero pairs"));
    }
    let f = |k: usize| counts[k] as f64 / n as f64;
    Ok(ClarkeSummary { a: f(0), b: f(1), c: f(2), d: f(3), e: f(4) })
}
