use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::AuthError;

pub const TEMPLATE_DIM: usize = 8;
pub const DEFAULT_TAU: f64 = 0.95;
const UNIT_TOLERANCE: f64 = 1e-9;

/// A simulated biometric embedding: a unit vector in eight dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate")]
pub struct BiometricTemplate {
    vector: [f64; TEMPLATE_DIM],
}

#[derive(Deserialize)]
struct RawTemplate {
    vector: Vec<f64>,
}

impl TryFrom<RawTemplate> for BiometricTemplate {
    type Error = AuthError;

    fn try_from(raw: RawTemplate) -> Result<Self, AuthError> {
        let v: [f64; TEMPLATE_DIM] = raw.vector.try_into().map_err(|v: Vec<f64>| {
            AuthError::NonUnitTemplate(format!(
                "expected {TEMPLATE_DIM} components, got {}",
                v.len()
            ))
        })?;
        BiometricTemplate::new(v)
    }
}

fn check_unit(v: &[f64]) -> Result<(), AuthError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(AuthError::NonUnitTemplate("non-finite component".into()));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(AuthError::NonUnitTemplate(format!("norm {norm}")));
    }
    Ok(())
}

impl BiometricTemplate {
    pub fn new(vector: [f64; TEMPLATE_DIM]) -> Result<Self, AuthError> {
        check_unit(&vector)?;
        Ok(BiometricTemplate { vector })
    }

    /// Scale `v` to unit length.
    pub fn normalized(mut v: [f64; TEMPLATE_DIM]) -> Result<Self, AuthError> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(AuthError::NonUnitTemplate("cannot normalize".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        BiometricTemplate::new(v)
    }

    /// A uniformly random direction.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v: [f64; TEMPLATE_DIM] = std::array::from_fn(|_| StandardNormal.sample(rng));
            if let Ok(t) = Self::normalized(v) {
                return t;
            }
        }
    }

    /// A fresh reading of this template: Gaussian noise of standard
    /// deviation `sigma` per component, renormalized.
    pub fn noisy_probe<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Self {
        loop {
            let v: [f64; TEMPLATE_DIM] = std::array::from_fn(|i| {
                let n: f64 = StandardNormal.sample(rng);
                self.vector[i] + sigma * n
            });
            if let Ok(t) = Self::normalized(v) {
                return t;
            }
        }
    }

    pub fn vector(&self) -> &[f64; TEMPLATE_DIM] {
        &self.vector
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiometricMatch {
    pub similarity: f64,
    pub accepted: bool,
}

/// Cosine similarity of two unit vectors, accepted at `tau` or above.
pub fn cosine_match(
    enrolled: &[f64],
    probe: &[f64],
    tau: f64,
) -> Result<BiometricMatch, AuthError> {
    if enrolled.len() != probe.len() {
        return Err(AuthError::NonUnitTemplate("dimension mismatch".into()));
    }
    check_unit(enrolled)?;
    check_unit(probe)?;
    let similarity: f64 = enrolled.iter().zip(probe).map(|(a, b)| a * b).sum();
    Ok(BiometricMatch {
        similarity,
        accepted: similarity >= tau,
    })
}

pub fn biometric_match(
    enrolled: &BiometricTemplate,
    probe: &BiometricTemplate,
    tau: f64,
) -> BiometricMatch {
    cosine_match(&enrolled.vector, &probe.vector, tau).expect("templates are unit vectors")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(i: usize) -> [f64; TEMPLATE_DIM] {
        let mut v = [0.0; TEMPLATE_DIM];
        v[i] = 1.0;
        v
    }

    #[test]
    fn identical_and_orthogonal() {
        let a = BiometricTemplate::new(e(0)).unwrap();
        let m = biometric_match(&a, &a, DEFAULT_TAU);
        assert_eq!(m.similarity, 1.0);
        assert!(m.accepted);
        let m = biometric_match(&a, &BiometricTemplate::new(e(3)).unwrap(), DEFAULT_TAU);
        assert_eq!(m.similarity, 0.0);
        assert!(!m.accepted);
    }

    #[test]
    fn hand_computed_point_six() {
        let mut b = [0.0; TEMPLATE_DIM];
        b[0] = 0.6;
        b[1] = 0.8;
        let m = cosine_match(&e(0), &b, DEFAULT_TAU).unwrap();
        assert!((m.similarity - 0.6).abs() < 1e-15);
        assert!(!m.accepted);
    }

    #[test]
    fn non_unit_rejected() {
        let mut v = e(0);
        v[0] = 1.1;
        assert!(BiometricTemplate::new(v).is_err());
        assert!(cosine_match(&v, &e(0), 0.9).is_err());
        assert!(BiometricTemplate::normalized([0.0; TEMPLATE_DIM]).is_err());
        let json = r#"{"vector":[1.0,0.0]}"#;
        assert!(serde_json::from_str::<BiometricTemplate>(json).is_err());
    }

    #[test]
    fn small_noise_still_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1_000 {
            let t = BiometricTemplate::random(&mut rng);
            let p = t.noisy_probe(0.03, &mut rng);
            assert!(biometric_match(&t, &p, DEFAULT_TAU).accepted);
        }
    }

    #[test]
    fn json_roundtrip() {
        let t = BiometricTemplate::random(&mut ChaCha8Rng::seed_from_u64(1));
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<BiometricTemplate>(&s).unwrap(), t);
    }
}
