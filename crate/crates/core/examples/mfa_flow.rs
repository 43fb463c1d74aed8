//! Three-factor authentication of an agent acting for a user: biometric
//! match, HOTP code, and a signed challenge backed by an agent certificate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use txnguard::authn::{
    issue_certificate, respond_to_challenge, AuthConfig, AuthInputs, Authenticator,
    BiometricTemplate, EnrollmentStore, OtpSecret,
};
use txnguard::crypto::KeyPair;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let issuer = KeyPair::generate(&mut rng);
    let agent = KeyPair::generate(&mut rng);
    let template = BiometricTemplate::random(&mut rng);

    let mut store = EnrollmentStore::new("issuer", issuer.public_key());
    store.enroll_user(
        "alice",
        template.clone(),
        OtpSecret::new(*b"12345678901234567890"),
    );
    store.enroll_agent(issue_certificate(
        "shopper-bot",
        agent.public_key(),
        "issuer",
        &issuer,
        u64::MAX,
    ));
    let mut auth = Authenticator::new(store, AuthConfig::default(), 7);

    let attempts = [
        "all factors valid",
        "wrong face",
        "stale OTP",
        "impostor agent",
    ];
    for (t, name) in attempts.into_iter().enumerate() {
        let now = 1_000 * t as u64;
        let mut session = auth.issue_challenge("alice", "shopper-bot", now);
        let otp = auth.store().otp("alice").unwrap().current_code();
        let mut inputs = AuthInputs {
            probe: template.noisy_probe(0.02, &mut rng),
            otp_code: otp,
            challenge_response: respond_to_challenge(&session.nonce, &agent),
        };
        match t {
            1 => inputs.probe = BiometricTemplate::random(&mut rng),
            2 => inputs.otp_code = "000000".into(),
            3 => {
                let impostor = KeyPair::generate(&mut rng);
                inputs.challenge_response = respond_to_challenge(&session.nonce, &impostor);
            }
            _ => {}
        }
        let result = auth.authenticate(&mut session, &inputs, now + 10).unwrap();
        println!("{name:>18}: {result:?} (stopped at {:?})", session.stage());
    }

    // A code is good once: replaying the last accepted one fails.
    let mut otp = OtpSecret::new(*b"12345678901234567890");
    println!("HOTP counter 0: {}", otp.current_code());
    println!("first use accepted: {}", otp.verify("755224"));
    println!("replay accepted:    {}", otp.verify("755224"));
}
