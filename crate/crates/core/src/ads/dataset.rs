use std::fmt;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::features::{TxnFeatures, FEATURE_NAMES};
use super::AdsError;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Label {
    Legit,
    Fraud,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_fraud(self) -> bool {
        self == Label::Fraud
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub features: TxnFeatures,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub rows: Vec<LabeledRow>,
    /// Generator seed, when the rows were synthesized.
    pub seed: Option<u64>,
    pub fraud_rate: f64,
}

/// Distribution parameters for synthetic traffic. These are frozen: the
/// fraud-detection regression bound depends on them.
pub mod params {
    /// Log-normal amount, currency units.
    pub const LEGIT_AMOUNT_MU: f64 = 3.5;
    pub const AMOUNT_SIGMA: f64 = 0.8;
    /// Fraudulent amounts run ten times larger.
    pub const FRAUD_AMOUNT_SCALE: f64 = 10.0;

    pub const LEGIT_HOUR_MEAN: f64 = 14.0;
    pub const FRAUD_HOUR_MEAN: f64 = 2.0;
    pub const HOUR_SD: f64 = 4.0;

    pub const LEGIT_COUNT_24H: f64 = 1.5;
    pub const FRAUD_COUNT_24H: f64 = 5.0;

    pub const LOCAL_RADIUS_KM: f64 = 50.0;
    pub const FRAUD_FAR_PROB: f64 = 0.7;
    pub const FRAUD_FAR_MIN_KM: f64 = 500.0;
    pub const FRAUD_FAR_MAX_KM: f64 = 5000.0;

    pub const LEGIT_AGENT_INTERACTIONS: f64 = 10.0;
    pub const FRAUD_AGENT_INTERACTIONS: f64 = 6.0;

    pub const LEGIT_DURATION_MEDIAN_S: f64 = 90.0;
    pub const FRAUD_DURATION_MEDIAN_S: f64 = 45.0;
    pub const DURATION_SIGMA: f64 = 0.6;
}

struct Sampler {
    legit_amount: LogNormal<f64>,
    fraud_amount: LogNormal<f64>,
    legit_hour: Normal<f64>,
    fraud_hour: Normal<f64>,
    legit_count: Poisson<f64>,
    fraud_count: Poisson<f64>,
    legit_agent: Poisson<f64>,
    fraud_agent: Poisson<f64>,
    legit_duration: LogNormal<f64>,
    fraud_duration: LogNormal<f64>,
}

impl Sampler {
    fn new() -> Self {
        use params::*;
        Sampler {
            legit_amount: LogNormal::new(LEGIT_AMOUNT_MU, AMOUNT_SIGMA).unwrap(),
            fraud_amount: LogNormal::new(LEGIT_AMOUNT_MU + FRAUD_AMOUNT_SCALE.ln(), AMOUNT_SIGMA)
                .unwrap(),
            legit_hour: Normal::new(LEGIT_HOUR_MEAN, HOUR_SD).unwrap(),
            fraud_hour: Normal::new(FRAUD_HOUR_MEAN, HOUR_SD).unwrap(),
            legit_count: Poisson::new(LEGIT_COUNT_24H).unwrap(),
            fraud_count: Poisson::new(FRAUD_COUNT_24H).unwrap(),
            legit_agent: Poisson::new(LEGIT_AGENT_INTERACTIONS).unwrap(),
            fraud_agent: Poisson::new(FRAUD_AGENT_INTERACTIONS).unwrap(),
            legit_duration: LogNormal::new(LEGIT_DURATION_MEDIAN_S.ln(), DURATION_SIGMA).unwrap(),
            fraud_duration: LogNormal::new(FRAUD_DURATION_MEDIAN_S.ln(), DURATION_SIGMA).unwrap(),
        }
    }

    fn local_distance<R: Rng>(rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        params::LOCAL_RADIUS_KM * u * u
    }

    fn wrap_hour(h: f64) -> f64 {
        let w = h.rem_euclid(24.0);
        if w >= 24.0 {
            0.0
        } else {
            w
        }
    }

    fn draw<R: Rng>(&self, label: Label, rng: &mut R) -> TxnFeatures {
        // Amounts are whole cents so that they survive a trip through a
        // transaction unchanged.
        let cents = |v: f64| (v * 100.0).round() / 100.0;
        match label {
            Label::Legit => TxnFeatures {
                amount: cents(self.legit_amount.sample(rng)),
                hour_of_day: Self::wrap_hour(self.legit_hour.sample(rng)),
                txn_count_24h: self.legit_count.sample(rng),
                geo_distance_km: Self::local_distance(rng),
                agent_interaction_count: self.legit_agent.sample(rng),
                duration_s: self.legit_duration.sample(rng),
            },
            Label::Fraud => TxnFeatures {
                amount: cents(self.fraud_amount.sample(rng)),
                hour_of_day: Self::wrap_hour(self.fraud_hour.sample(rng)),
                txn_count_24h: self.fraud_count.sample(rng),
                geo_distance_km: if rng.gen_bool(params::FRAUD_FAR_PROB) {
                    rng.gen_range(params::FRAUD_FAR_MIN_KM..params::FRAUD_FAR_MAX_KM)
                } else {
                    Self::local_distance(rng)
                },
                agent_interaction_count: self.fraud_agent.sample(rng),
                duration_s: self.fraud_duration.sample(rng),
            },
        }
    }
}

/// Number of fraud rows for `n` rows at `fraud_rate`.
pub fn fraud_count(n: usize, fraud_rate: f64) -> usize {
    (n as f64 * fraud_rate).round() as usize
}

/// Synthesize `n` labelled rows with exactly `round(n * fraud_rate)` fraud
/// rows placed at random positions.
pub fn generate_dataset(n: usize, fraud_rate: f64, seed: u64) -> Result<LabeledDataset, AdsError> {
    if n == 0 {
        return Err(AdsError::InvalidArgument(
            "dataset size must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&fraud_rate) {
        return Err(AdsError::InvalidArgument(format!(
            "fraud rate {fraud_rate} outside [0, 1]"
        )));
    }
    if (n as f64) * fraud_rate < 1.0 {
        return Err(AdsError::InvalidArgument(format!(
            "{n} rows at fraud rate {fraud_rate} yield less than one fraud row"
        )));
    }
    let mut data = generate_with_fraud_count(n, fraud_count(n, fraud_rate), seed)?;
    data.fraud_rate = fraud_rate;
    Ok(data)
}

/// Like [`generate_dataset`] with an exact number of fraud rows, which may
/// be zero.
pub fn generate_with_fraud_count(
    n: usize,
    n_fraud: usize,
    seed: u64,
) -> Result<LabeledDataset, AdsError> {
    if n_fraud > n {
        return Err(AdsError::InvalidArgument(format!(
            "{n_fraud} fraud rows requested out of {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Label> = (0..n)
        .map(|i| {
            if i < n_fraud {
                Label::Fraud
            } else {
                Label::Legit
            }
        })
        .collect();
    labels.shuffle(&mut rng);
    let sampler = Sampler::new();
    let rows = labels
        .into_iter()
        .map(|label| LabeledRow {
            features: sampler.draw(label, &mut rng),
            label,
        })
        .collect();
    Ok(LabeledDataset {
        rows,
        seed: Some(seed),
        fraud_rate: if n == 0 {
            0.0
        } else {
            n_fraud as f64 / n as f64
        },
    })
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    amount: f64,
    hour_of_day: f64,
    txn_count_24h: f64,
    geo_distance_km: f64,
    agent_interaction_count: f64,
    duration_s: f64,
    label: Label,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_fraud(&self) -> usize {
        self.rows.iter().filter(|r| r.label.is_fraud()).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let f = self.n_fraud();
        f > 0 && f < self.rows.len()
    }

    /// Row-major feature matrix and class indices, for training.
    pub fn to_matrix(&self) -> (Vec<f64>, Vec<u8>) {
        let mut x = Vec::with_capacity(self.rows.len() * FEATURE_NAMES.len());
        let mut y = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            x.extend_from_slice(&r.features.to_array());
            y.push(r.label.index() as u8);
        }
        (x, y)
    }

    /// Shuffle with `seed` and cut into a training part holding
    /// `round(train_fraction * n)` rows and a disjoint test part.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (LabeledDataset, LabeledDataset) {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.rows.len() as f64) * train_fraction).round() as usize;
        let part = |ids: &[usize]| {
            let rows: Vec<LabeledRow> = ids.iter().map(|&i| self.rows[i]).collect();
            let rate = if rows.is_empty() {
                0.0
            } else {
                rows.iter().filter(|r| r.label.is_fraud()).count() as f64 / rows.len() as f64
            };
            LabeledDataset {
                rows,
                seed: self.seed,
                fraud_rate: rate,
            }
        };
        (part(&idx[..cut]), part(&idx[cut..]))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), AdsError> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            let f = r.features;
            wr.serialize(CsvRow {
                amount: f.amount,
                hour_of_day: f.hour_of_day,
                txn_count_24h: f.txn_count_24h,
                geo_distance_km: f.geo_distance_km,
                agent_interaction_count: f.agent_interaction_count,
                duration_s: f.duration_s,
                label: r.label,
            })?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, AdsError> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let expected: Vec<&str> = FEATURE_NAMES.iter().copied().chain(["label"]).collect();
        if header != expected {
            return Err(AdsError::InvalidArgument(format!(
                "unexpected CSV header {header:?}"
            )));
        }
        let mut rows = Vec::new();
        for rec in rd.deserialize() {
            let c: CsvRow = rec?;
            let features = TxnFeatures {
                amount: c.amount,
                hour_of_day: c.hour_of_day,
                txn_count_24h: c.txn_count_24h,
                geo_distance_km: c.geo_distance_km,
                agent_interaction_count: c.agent_interaction_count,
                duration_s: c.duration_s,
            };
            if !features.is_valid() {
                return Err(AdsError::InvalidArgument(format!(
                    "row {} has out-of-range features",
                    rows.len() + 1
                )));
            }
            rows.push(LabeledRow {
                features,
                label: c.label,
            });
        }
        if rows.is_empty() {
            return Err(AdsError::EmptyDataset);
        }
        let fraud_rate =
            rows.iter().filter(|r| r.label.is_fraud()).count() as f64 / rows.len() as f64;
        Ok(LabeledDataset {
            rows,
            seed: None,
            fraud_rate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fraud_count() {
        let d = generate_dataset(10_000, 0.10, 1).unwrap();
        assert_eq!(d.len(), 10_000);
        assert_eq!(d.n_fraud(), 1_000);
        assert!(d.rows.iter().all(|r| r.features.is_valid()));
    }

    #[test]
    fn all_fraud_when_rate_rounds_to_n() {
        let d = generate_dataset(10, 0.97, 3).unwrap();
        assert_eq!(d.n_fraud(), 10);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            generate_dataset(500, 0.1, 9).unwrap(),
            generate_dataset(500, 0.1, 9).unwrap()
        );
        assert_ne!(
            generate_dataset(500, 0.1, 9).unwrap(),
            generate_dataset(500, 0.1, 10).unwrap()
        );
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(generate_dataset(0, 0.5, 1).is_err());
        assert!(generate_dataset(5, 0.1, 1).is_err());
        assert!(generate_dataset(5, 1.5, 1).is_err());
    }

    #[test]
    fn legit_rows_stay_local_and_fraud_skews_far() {
        let d = generate_dataset(5_000, 0.2, 4).unwrap();
        let legit_max = d
            .rows
            .iter()
            .filter(|r| !r.label.is_fraud())
            .map(|r| r.features.geo_distance_km)
            .fold(0.0, f64::max);
        assert!(legit_max <= params::LOCAL_RADIUS_KM);
        let fraud: Vec<_> = d.rows.iter().filter(|r| r.label.is_fraud()).collect();
        let far = fraud
            .iter()
            .filter(|r| r.features.geo_distance_km > params::FRAUD_FAR_MIN_KM)
            .count() as f64
            / fraud.len() as f64;
        assert!((far - params::FRAUD_FAR_PROB).abs() < 0.05);
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let d = generate_dataset(1_000, 0.1, 2).unwrap();
        let (train, test) = d.split(0.8, 7);
        assert_eq!(train.len(), 800);
        assert_eq!(test.len(), 200);
        assert_eq!(train.n_fraud() + test.n_fraud(), 100);
    }

    #[test]
    fn csv_roundtrip() {
        let d = generate_dataset(100, 0.1, 5).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "amount,hour_of_day,txn_count_24h,geo_distance_km,agent_interaction_count,duration_s,label\n"
        ));
        assert_eq!(text.lines().filter(|l| l.ends_with(",Fraud")).count(), 10);
        let back = LabeledDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows, d.rows);
        assert!(LabeledDataset::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
