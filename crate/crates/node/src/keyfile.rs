use std::path::Path;

use gridmarket_core::identity::{Address, KeyPair, PublicKey};
use serde::{Deserialize, Serialize};

use crate::NodeError;

/// On-disk form of a keypair. The public parts are redundant and checked
/// on load so a hand-edited file cannot silently sign as someone else.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyFile {
    pub address: Address,
    pub public_key: PublicKey,
    pub private_key: String,
}

impl KeyFile {
    pub fn from_keypair(k: &KeyPair) -> Self {
        Self {
            address: k.address(),
            public_key: k.public_key(),
            private_key: hex::encode(k.private_key()),
        }
    }

    pub fn keypair(&self) -> Result<KeyPair, NodeError> {
        let bad = |m: &str| NodeError::Key(m.to_string());
        let mut raw = [0u8; 32];
        hex::decode_to_slice(&self.private_key, &mut raw).map_err(|_| bad("private_key is not 64 hex characters"))?;
        let k = KeyPair::from_private_key(&raw).map_err(|e| bad(&e.to_string()))?;
        if k.public_key() != self.public_key {
            return Err(bad("public_key does not match private_key"));
        }
        if k.address() != self.address {
            return Err(bad("address does not match public_key"));
        }
        Ok(k)
    }
}

pub fn write_key(path: &Path, k: &KeyPair) -> Result<(), NodeError> {
    if path.exists() {
        return Err(NodeError::Key(format!("{} already exists", path.display())));
    }
    let mut text = serde_json::to_string_pretty(&KeyFile::from_keypair(k)).expect("key file serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| NodeError::io(path, e))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600)).map_err(|e| NodeError::io(path, e))?;
    }
    Ok(())
}

pub fn read_key(path: &Path) -> Result<KeyPair, NodeError> {
    let text = std::fs::read_to_string(path).map_err(|e| NodeError::io(path, e))?;
    let file: KeyFile =
        serde_json::from_str(&text).map_err(|e| NodeError::Key(format!("{}: {e}", path.display())))?;
    file.keypair()
}
