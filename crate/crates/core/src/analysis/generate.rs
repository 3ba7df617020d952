//! Synthetic tables: the heavy-tailed SIM design and a skewed
//! business-establishment stand-in.

use std::sync::Arc;

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{Attribute, Row, Schema, Table};

pub const SIM_CATEGORIES: usize = 1000;
pub const HT1_SHAPE: f64 = 1.2;
pub const HT2_SHAPE: f64 = 1.5;

/// Distribution of a categorical label over `1..=k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CategoryWeights {
    /// Weight of category `i` proportional to `i^(-exponent)`.
    Zipf {
        exponent: f64,
        categories: usize,
    },
    Explicit {
        weights: Vec<f64>,
    },
}

impl Default for CategoryWeights {
    fn default() -> Self {
        CategoryWeights::Zipf {
            exponent: 1.0,
            categories: SIM_CATEGORIES,
        }
    }
}

impl CategoryWeights {
    pub fn weights(&self) -> Result<Vec<f64>> {
        let w: Vec<f64> = match self {
            CategoryWeights::Zipf {
                exponent,
                categories,
            } => {
                if !exponent.is_finite() || *categories == 0 {
                    return Err(Error::BadWeights(format!("{self:?}")));
                }
                (1..=*categories)
                    .map(|i| (i as f64).powf(-exponent))
                    .collect()
            }
            CategoryWeights::Explicit { weights } => weights.clone(),
        };
        if w.is_empty()
            || w.iter().any(|x| !(x.is_finite() && *x >= 0.0))
            || w.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::BadWeights(
                "weights must be finite, non-negative and not all zero".into(),
            ));
        }
        Ok(w)
    }

    fn sampler(&self) -> Result<WeightedIndex<f64>> {
        WeightedIndex::new(self.weights()?).map_err(|e| Error::BadWeights(e.to_string()))
    }
}

/// Pareto(scale, shape) by inverse CDF on `U ∈ (0, 1]`.
pub fn pareto<R: Rng + ?Sized>(rng: &mut R, scale: f64, shape: f64) -> f64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    scale * u.powf(-1.0 / shape)
}

pub fn sim_schema() -> Schema {
    Schema::new(vec![
        Attribute::conditional("CatIX"),
        Attribute::measure("HT1"),
        Attribute::measure("HT2"),
    ])
    .expect("static schema")
}

/// `n` rows of `CatIX ~ φ`, `HT1 ~ Pareto(1, 1.2)`, `HT2 ~ Pareto(1, 1.5)`.
pub fn gen_sim_data(n: usize, seed: u64, weights: &CategoryWeights) -> Result<Table> {
    if n == 0 {
        return Err(Error::NonpositiveInput {
            name: "n",
            value: 0.0,
        });
    }
    let cat = weights.sampler()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rows = (1..=n as u64)
        .map(|id| {
            let c = cat.sample(&mut rng) + 1;
            let h1 = pareto(&mut rng, 1.0, HT1_SHAPE);
            let h2 = pareto(&mut rng, 1.0, HT2_SHAPE);
            Row::new(id, vec![c.to_string()], vec![h1, h2])
        })
        .collect();
    Ok(Table::from_parts(Arc::new(sim_schema()), rows))
}

/// Parameters of the business-establishment generator. Payroll is in
/// thousands of dollars; defaults put the median establishment near the
/// "Median" splitting thresholds (EMP 2, PAYANN 104, PAYQTR1 24).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BusinessParams {
    pub counties: usize,
    pub industries: Vec<String>,
    pub county_weights: CategoryWeights,
    pub emp_median: f64,
    pub emp_log_sd: f64,
    /// Share of establishments drawn from the Pareto tail instead.
    pub tail_share: f64,
    pub tail_scale: f64,
    pub tail_shape: f64,
    /// Median annual payroll per employee.
    pub wage_median: f64,
    pub wage_log_sd: f64,
    /// Relative sd of first-quarter payroll around a quarter of the annual.
    pub quarter_sd: f64,
}

impl Default for BusinessParams {
    fn default() -> Self {
        BusinessParams {
            counties: 50,
            industries: [
                "11", "21", "22", "23", "31-33", "42", "44-45", "48-49", "51", "52", "53", "54",
                "56", "62", "72", "81",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            county_weights: CategoryWeights::Zipf {
                exponent: 1.0,
                categories: 50,
            },
            emp_median: 2.0,
            emp_log_sd: 1.2,
            tail_share: 0.03,
            tail_scale: 50.0,
            tail_shape: 1.1,
            wage_median: 45.0,
            wage_log_sd: 0.5,
            quarter_sd: 0.1,
        }
    }
}

impl BusinessParams {
    fn validate(&self) -> Result<()> {
        let positive = [
            self.emp_median,
            self.emp_log_sd,
            self.tail_scale,
            self.tail_shape,
            self.wage_median,
            self.wage_log_sd,
        ];
        let ok = self.counties > 0
            && !self.industries.is_empty()
            && positive.iter().all(|v| v.is_finite() && *v > 0.0)
            && (0.0..=1.0).contains(&self.tail_share)
            && self.quarter_sd.is_finite()
            && self.quarter_sd >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::BadParams(format!("{self:?}")))
        }
    }
}

pub fn business_schema() -> Schema {
    Schema::new(vec![
        Attribute::conditional("County"),
        Attribute::conditional("NAICS"),
        Attribute::measure("EMP"),
        Attribute::measure("PAYANN"),
        Attribute::measure("PAYQTR1"),
    ])
    .expect("static schema")
}

/// Establishments with a county × industry key and skewed EMP, PAYANN and
/// PAYQTR1 (about a quarter of PAYANN).
pub fn gen_business_data(n: usize, seed: u64, params: &BusinessParams) -> Result<Table> {
    params.validate()?;
    if params.county_weights.weights()?.len() != params.counties {
        return Err(Error::BadParams(
            "county weights must cover every county".into(),
        ));
    }
    let county = params.county_weights.sampler()?;
    let emp_body = LogNormal::new(params.emp_median.ln(), params.emp_log_sd)
        .map_err(|e| Error::BadParams(e.to_string()))?;
    let wage = LogNormal::new(params.wage_median.ln(), params.wage_log_sd)
        .map_err(|e| Error::BadParams(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rows = (1..=n as u64)
        .map(|id| {
            let c = county.sample(&mut rng) + 1;
            let ind = &params.industries[rng.gen_range(0..params.industries.len())];
            let raw = if rng.gen::<f64>() < params.tail_share {
                pareto(&mut rng, params.tail_scale, params.tail_shape)
            } else {
                emp_body.sample(&mut rng)
            };
            let emp = raw.round();
            let payann = (emp.max(0.5) * wage.sample(&mut rng)).round();
            let z: f64 = StandardNormal.sample(&mut rng);
            let payqtr1 = (payann / 4.0 * (1.0 + params.quarter_sd * z))
                .max(0.0)
                .round();
            Row::new(
                id,
                vec![format!("C{c:03}"), ind.clone()],
                vec![emp, payann, payqtr1],
            )
        })
        .collect();
    Ok(Table::from_parts(Arc::new(business_schema()), rows))
}
