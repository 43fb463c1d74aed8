use serde::{Deserialize, Serialize};

use crate::model::{GeoPoint, Transaction};

pub const FEATURE_DIM: usize = 6;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "amount",
    "hour_of_day",
    "txn_count_24h",
    "geo_distance_km",
    "agent_interaction_count",
    "duration_s",
];

/// Mean Earth radius (IUGG), kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

const DAY_MS: u64 = 86_400_000;
const HOUR_MS: f64 = 3_600_000.0;

/// Screening features for one transaction.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TxnFeatures {
    /// Currency units.
    pub amount: f64,
    /// Fractional hour in `[0, 24)`.
    pub hour_of_day: f64,
    /// Sender transactions in the trailing 24 hours.
    pub txn_count_24h: f64,
    /// Great-circle distance from the sender's home.
    pub geo_distance_km: f64,
    /// Earlier transactions between this sender and this agent.
    pub agent_interaction_count: f64,
    /// Session duration in seconds.
    pub duration_s: f64,
}

impl TxnFeatures {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.amount,
            self.hour_of_day,
            self.txn_count_24h,
            self.geo_distance_km,
            self.agent_interaction_count,
            self.duration_s,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_DIM]) -> Self {
        TxnFeatures {
            amount: a[0],
            hour_of_day: a[1],
            txn_count_24h: a[2],
            geo_distance_km: a[3],
            agent_interaction_count: a[4],
            duration_s: a[5],
        }
    }

    /// All fields non-negative and the hour below 24.
    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= 0.0) && self.hour_of_day < 24.0
    }
}

/// Haversine distance between two micro-degree coordinates.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lon1) = (a.lat_degrees().to_radians(), a.lon_degrees().to_radians());
    let (lat2, lon2) = (b.lat_degrees().to_radians(), b.lon_degrees().to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Derive screening features from a transaction and the sender's earlier
/// transactions. `history` entries from other senders or at/after the
/// transaction's timestamp are ignored.
pub fn extract_features(
    txn: &Transaction,
    history: &[Transaction],
    home: GeoPoint,
    session_duration_s: f64,
) -> TxnFeatures {
    let window_start = txn.timestamp.saturating_sub(DAY_MS);
    let prior = history
        .iter()
        .filter(|h| h.sender_id == txn.sender_id && h.timestamp < txn.timestamp);
    let mut count_24h = 0u64;
    let mut agent_count = 0u64;
    for h in prior {
        if h.timestamp >= window_start {
            count_24h += 1;
        }
        if h.agent_id == txn.agent_id {
            agent_count += 1;
        }
    }
    TxnFeatures {
        amount: txn.amount.as_units(),
        hour_of_day: (txn.timestamp % DAY_MS) as f64 / HOUR_MS,
        txn_count_24h: count_24h as f64,
        geo_distance_km: haversine_km(home, txn.location),
        agent_interaction_count: agent_count as f64,
        duration_s: session_duration_s.max(0.0),
    }
}
