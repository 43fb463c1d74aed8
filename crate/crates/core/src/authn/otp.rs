use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha1::Sha1;

use crate::hexfmt;

pub const OTP_KEY_LEN: usize = 20;
pub const OTP_DIGITS: usize = 6;
/// Codes for counters `current..=current + OTP_WINDOW` are accepted.
pub const OTP_WINDOW: u64 = 2;

type HmacSha1 = Hmac<Sha1>;

/// HOTP code for `counter`, zero-padded to six digits.
pub fn hotp(key: &[u8; OTP_KEY_LEN], counter: u64) -> String {
    let mut mac = HmacSha1::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(&counter.to_be_bytes());
    let h = mac.finalize().into_bytes();
    let offset = (h[19] & 0x0f) as usize;
    let bin = u32::from_be_bytes([
        h[offset] & 0x7f,
        h[offset + 1],
        h[offset + 2],
        h[offset + 3],
    ]);
    format!("{:06}", bin % 1_000_000)
}

/// Shared HOTP secret with the verifier's moving counter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtpSecret {
    #[serde(with = "hexfmt")]
    pub key: [u8; OTP_KEY_LEN],
    pub counter: u64,
}

impl OtpSecret {
    pub fn new(key: [u8; OTP_KEY_LEN]) -> Self {
        OtpSecret { key, counter: 0 }
    }

    /// The code the token shows for the current counter.
    pub fn current_code(&self) -> String {
        hotp(&self.key, self.counter)
    }

    pub fn code_at(&self, counter: u64) -> String {
        hotp(&self.key, counter)
    }

    /// Accept `submitted` if it matches a counter inside the look-ahead
    /// window; the counter then moves past the match so the code cannot be
    /// used again.
    pub fn verify(&mut self, submitted: &str) -> bool {
        if submitted.len() != OTP_DIGITS || !submitted.bytes().all(|b| b.is_ascii_digit()) {
            return false;
        }
        let last = self.counter.saturating_add(OTP_WINDOW);
        for c in self.counter..=last {
            if hotp(&self.key, c) == submitted {
                self.counter = c + 1;
                return true;
            }
        }
        false
    }
}

pub fn verify_otp(secret: &mut OtpSecret, submitted: &str) -> bool {
    secret.verify(submitted)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RFC_KEY: &[u8; 20] = b"12345678901234567890";
    const RFC_CODES: [&str; 10] = [
        "755224", "287082", "359152", "969429", "338314", "254676", "287922", "162583", "399871",
        "520489",
    ];

    #[test]
    fn rfc4226_vectors() {
        for (c, code) in RFC_CODES.iter().enumerate() {
            assert_eq!(hotp(RFC_KEY, c as u64), *code);
        }
    }

    #[test]
    fn accept_then_replay_rejects() {
        let mut s = OtpSecret::new(*RFC_KEY);
        assert!(s.verify("755224"));
        assert_eq!(s.counter, 1);
        assert!(!s.verify("755224"));
    }

    #[test]
    fn window_bounds() {
        let mut s = OtpSecret::new(*RFC_KEY);
        assert!(!s.verify(RFC_CODES[3]));
        assert_eq!(s.counter, 0);
        assert!(s.verify(RFC_CODES[2]));
        assert_eq!(s.counter, 3);
        assert!(!s.verify(RFC_CODES[1]));
    }

    #[test]
    fn malformed_codes_reject() {
        let mut s = OtpSecret::new(*RFC_KEY);
        for bad in ["", "75522", "7552240", "75522a", " 55224"] {
            assert!(!s.verify(bad));
        }
        assert_eq!(s.counter, 0);
    }

    #[test]
    fn json_is_hex() {
        let s = OtpSecret::new(*RFC_KEY);
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(
            j,
            r#"{"key":"3132333435363738393031323334353637383930","counter":0}"#
        );
        assert_eq!(serde_json::from_str::<OtpSecret>(&j).unwrap(), s);
    }
}
