//! Keys, addresses and signatures.
//!
//! Accounts are secp256k1 keys. An account's address is the full SHA256
//! digest of its 33-byte compressed public key. Payloads are signed with
//! deterministic-nonce ECDSA over SHA256 of their canonical encoding.

mod bytes;
pub mod canonical;

use std::collections::HashMap;
use std::sync::Mutex;

use k256::ecdsa::signature::hazmat::{PrehashSigner, PrehashVerifier};
use k256::ecdsa::{SigningKey, VerifyingKey};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use bytes::{Hash, HexError};
pub use canonical::{canonical_hash, canonical_serialize, from_canonical, to_canonical, CanonicalError};

use bytes::hex_newtype;

hex_newtype!(
    /// SHA256 of a compressed public key; the account identifier.
    Address,
    32
);

hex_newtype!(
    /// Compressed SEC1 secp256k1 point.
    PublicKey,
    33
);

hex_newtype!(
    /// Compact (r || s) ECDSA signature.
    Signature,
    64
);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdentityError {
    #[error("not a valid secp256k1 point")]
    InvalidPoint,
    #[error("signature must be 64 bytes, got {0}")]
    SignatureLength(usize),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

/// A signing key together with its derived public key and address.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
    address: Address,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.private_key() == other.private_key()
    }
}

impl Eq for KeyPair {}

/// Build a keypair from seed material. Candidates outside the scalar range
/// (zero, or >= the group order) are rehashed with SHA256 until one is valid.
/// Without a seed, fresh OS entropy is used.
pub fn generate_keypair(seed: Option<[u8; 32]>) -> KeyPair {
    let mut candidate = seed.unwrap_or_else(rand::random);
    loop {
        if let Ok(kp) = KeyPair::from_private_key(&candidate) {
            return kp;
        }
        candidate = Sha256::digest(candidate).into();
    }
}

impl KeyPair {
    /// Fails if the bytes are not a valid non-zero scalar.
    pub fn from_private_key(bytes: &[u8; 32]) -> Result<Self, IdentityError> {
        let signing = SigningKey::from_slice(bytes).map_err(|_| IdentityError::InvalidPoint)?;
        let point = signing.verifying_key().to_sec1_point(true);
        let public = PublicKey::from_slice(point.as_bytes()).expect("compressed point is 33 bytes");
        let address = derive_address(&public).expect("derived key is a valid point");
        Ok(Self {
            signing,
            public,
            address,
        })
    }

    /// Deterministic key from an arbitrary label (e.g. a scenario key seed).
    pub fn from_label(label: &str) -> Self {
        generate_keypair(Some(Sha256::digest(label.as_bytes()).into()))
    }

    pub fn private_key(&self) -> [u8; 32] {
        self.signing.to_bytes().into()
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn sign<T: Serialize + ?Sized>(&self, payload: &T) -> Result<Signature, IdentityError> {
        let bytes = to_canonical(payload)?;
        Ok(self.sign_bytes(&bytes))
    }

    pub fn sign_bytes(&self, canonical: &[u8]) -> Signature {
        let digest: [u8; 32] = Sha256::digest(canonical).into();
        let sig: k256::ecdsa::Signature = self
            .signing
            .sign_prehash(&digest)
            .expect("prehash signing over a 32-byte digest cannot fail");
        Signature::from_slice(&sig.to_bytes()).expect("compact signature is 64 bytes")
    }
}

pub fn derive_address(public_key: &PublicKey) -> Result<Address, IdentityError> {
    VerifyingKey::from_sec1_bytes(public_key.as_bytes()).map_err(|_| IdentityError::InvalidPoint)?;
    Ok(Address(Sha256::digest(public_key.as_bytes()).into()))
}

/// Verify a signature over a payload's canonical encoding.
pub fn verify<T: Serialize + ?Sized>(public_key: &PublicKey, payload: &T, signature: &Signature) -> bool {
    match to_canonical(payload) {
        Ok(bytes) => verify_bytes(public_key, &bytes, signature),
        Err(_) => false,
    }
}

pub fn verify_bytes(public_key: &PublicKey, canonical: &[u8], signature: &Signature) -> bool {
    let digest: [u8; 32] = Sha256::digest(canonical).into();
    verify_digest(public_key, &digest, signature)
}

fn verify_digest(public_key: &PublicKey, digest: &[u8; 32], signature: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_sec1_bytes(public_key.as_bytes()) else {
        return false;
    };
    let Ok(sig) = k256::ecdsa::Signature::from_slice(signature.as_bytes()) else {
        return false;
    };
    vk.verify_prehash(digest, &sig).is_ok()
}

/// Parse a signature from raw bytes, rejecting anything but 64 bytes.
pub fn signature_from_bytes(raw: &[u8]) -> Result<Signature, IdentityError> {
    Signature::from_slice(raw).map_err(|_| IdentityError::SignatureLength(raw.len()))
}

/// Signature checking strategy. Replicas call this for every transaction
/// and consensus message.
pub trait SignatureVerifier: Send + Sync {
    fn verify_bytes(&self, public_key: &PublicKey, canonical: &[u8], signature: &Signature) -> bool;
}

/// Verifies every call directly.
#[derive(Debug, Default, Clone, Copy)]
pub struct DirectVerifier;

impl SignatureVerifier for DirectVerifier {
    fn verify_bytes(&self, public_key: &PublicKey, canonical: &[u8], signature: &Signature) -> bool {
        verify_bytes(public_key, canonical, signature)
    }
}

/// Memoizes verification results. Verification is a pure function of
/// (key, digest, signature), so a cache shared between replicas in one
/// process returns exactly what each replica would compute.
#[derive(Debug, Default)]
pub struct CachedVerifier {
    seen: Mutex<HashMap<[u8; 32], bool>>,
}

impl CachedVerifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.seen.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SignatureVerifier for CachedVerifier {
    fn verify_bytes(&self, public_key: &PublicKey, canonical: &[u8], signature: &Signature) -> bool {
        let digest: [u8; 32] = Sha256::digest(canonical).into();
        let mut h = Sha256::new();
        h.update(public_key.as_bytes());
        h.update(digest);
        h.update(signature.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        if let Some(hit) = self.seen.lock().expect("cache lock").get(&key) {
            return *hit;
        }
        let ok = verify_digest(public_key, &digest, signature);
        self.seen.lock().expect("cache lock").insert(key, ok);
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn zero_seed_is_rehashed_and_deterministic() {
        let a = generate_keypair(Some([0u8; 32]));
        let b = generate_keypair(Some([0u8; 32]));
        assert_eq!(a, b);
        assert_eq!(a.private_key(), <[u8; 32]>::from(Sha256::digest([0u8; 32])));
    }

    #[test]
    fn order_overflow_seed_is_rehashed() {
        // 0xff..ff exceeds the secp256k1 group order.
        let kp = generate_keypair(Some([0xff; 32]));
        assert_ne!(kp.private_key(), [0xff; 32]);
        assert!(KeyPair::from_private_key(&[0xff; 32]).is_err());
    }

    #[test]
    fn fresh_keys_differ() {
        let a = generate_keypair(None);
        let b = generate_keypair(None);
        assert_ne!(a.public_key(), b.public_key());
    }

    #[test]
    fn invalid_point_rejected() {
        let mut raw = [0u8; 33];
        raw[0] = 0x05;
        assert_eq!(derive_address(&PublicKey(raw)), Err(IdentityError::InvalidPoint));
        // x >= field modulus
        let mut big_x = [0xffu8; 33];
        big_x[0] = 0x02;
        assert_eq!(derive_address(&PublicKey(big_x)), Err(IdentityError::InvalidPoint));
    }

    #[test]
    fn sign_verify_and_tamper() {
        let kp = KeyPair::from_label("alice");
        let other = KeyPair::from_label("bob");
        let payload = json!({"kind": "ORDER", "energy_wh": 3000, "limit_price_mct": 4000});
        let sig = kp.sign(&payload).unwrap();
        assert!(verify(&kp.public_key(), &payload, &sig));
        assert!(!verify(&other.public_key(), &payload, &sig));

        let tampered = json!({"kind": "ORDER", "energy_wh": 3001, "limit_price_mct": 4000});
        assert!(!verify(&kp.public_key(), &tampered, &sig));

        let mut bad = sig;
        bad.0[10] ^= 0x01;
        assert!(!verify(&kp.public_key(), &payload, &bad));
    }

    #[test]
    fn deterministic_signatures() {
        let kp = KeyPair::from_label("alice");
        let payload = json!({"a": 1});
        assert_eq!(kp.sign(&payload).unwrap(), kp.sign(&payload).unwrap());
    }

    #[test]
    fn malformed_signature_length() {
        assert_eq!(signature_from_bytes(&[0u8; 63]), Err(IdentityError::SignatureLength(63)));
        assert!(signature_from_bytes(&[0u8; 64]).is_ok());
    }

    #[test]
    fn cached_verifier_matches_direct() {
        let kp = KeyPair::from_label("carol");
        let bytes = b"{\"x\":1}";
        let sig = kp.sign_bytes(bytes);
        let cache = CachedVerifier::new();
        assert!(cache.verify_bytes(&kp.public_key(), bytes, &sig));
        assert!(cache.verify_bytes(&kp.public_key(), bytes, &sig));
        assert!(!cache.verify_bytes(&kp.public_key(), b"{\"x\":2}", &sig));
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn address_hex_roundtrip() {
        let kp = KeyPair::from_label("dave");
        let text = kp.address().to_string();
        assert_eq!(text.len(), 64);
        assert_eq!(text, text.to_lowercase());
        assert_eq!(text.parse::<Address>().unwrap(), kp.address());
        assert_eq!(text.to_uppercase().parse::<Address>(), Err(HexError::Uppercase));
    }
}
