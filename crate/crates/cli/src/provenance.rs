use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "mvuq";

/// Written into every artifact. Carries no timestamps or host details so
/// that equal inputs give equal bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub seed: u64,
    pub config_sha256: String,
}

impl Provenance {
    pub fn new(stage: &str, seed: u64, config_sha256: impl Into<String>) -> Self {
        Provenance {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stage: stage.into(),
            seed,
            config_sha256: config_sha256.into(),
        }
    }

    /// Single-line form used as a leading `#` comment in CSV outputs.
    pub fn comment_line(&self) -> String {
        format!(
            "# {} {} stage={} seed={} config_sha256={}",
            self.tool, self.version, self.stage, self.seed, self.config_sha256
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the compact JSON form of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config serializes"))
}

#[derive(Serialize)]
struct Stamped<'a, T> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON with a leading `provenance` object and a trailing newline.
pub fn write_stamped_json<T: Serialize>(path: impl AsRef<Path>, provenance: &Provenance, body: &T) -> io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(&Stamped { provenance, body }).map_err(io::Error::other)?;
    bytes.push(b'\n');
    fs::write(path, bytes)
}
