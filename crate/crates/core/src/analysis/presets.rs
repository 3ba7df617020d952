//! Named top-code and splitting-threshold schemes for the business
//! establishment measures EMP, PAYANN and PAYQTR1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::splitting::SplitThresholds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopCodePreset {
    Conservative,
    Moderate,
    Aggressive,
}

impl TopCodePreset {
    pub const ALL: [TopCodePreset; 3] = [Self::Conservative, Self::Moderate, Self::Aggressive];

    pub fn top_codes(self) -> BTreeMap<String, f64> {
        let (emp, payann, payqtr1) = match self {
            TopCodePreset::Conservative => (1e3, 1e5, 2.5e4),
            TopCodePreset::Moderate => (3e2, 1e4, 2.5e3),
            TopCodePreset::Aggressive => (1e2, 1e3, 2.5e2),
        };
        BTreeMap::from([
            ("EMP".to_string(), emp),
            ("PAYANN".to_string(), payann),
            ("PAYQTR1".to_string(), payqtr1),
        ])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPreset {
    Conservative,
    Moderate,
    Median,
}

impl ThresholdPreset {
    pub const ALL: [ThresholdPreset; 3] = [Self::Conservative, Self::Moderate, Self::Median];

    pub fn thresholds(self) -> SplitThresholds {
        let (emp, payann, payqtr1) = match self {
            ThresholdPreset::Conservative => (100.0, 10000.0, 2500.0),
            ThresholdPreset::Moderate => (5.0, 500.0, 125.0),
            ThresholdPreset::Median => (2.0, 104.0, 24.0),
        };
        SplitThresholds::new([("EMP", emp), ("PAYANN", payann), ("PAYQTR1", payqtr1)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering() {
        let t: Vec<_> = ThresholdPreset::ALL
            .iter()
            .map(|p| p.thresholds())
            .collect();
        for w in t.windows(2) {
            for (k, v) in &w[0].0 {
                assert!(w[1].0[k] < *v);
            }
        }
        let c: Vec<_> = TopCodePreset::ALL.iter().map(|p| p.top_codes()).collect();
        for w in c.windows(2) {
            for (k, v) in &w[0] {
                assert!(w[1][k] < *v);
            }
        }
        assert_eq!(TopCodePreset::Moderate.top_codes()["PAYQTR1"], 2500.0);
        assert_eq!(
            ThresholdPreset::Median.thresholds().get("PAYANN"),
            Some(104.0)
        );
    }
}
