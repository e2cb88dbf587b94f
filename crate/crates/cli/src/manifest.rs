use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Provenance block embedded in every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the compact JSON encoding of the resolved settings.
    pub config_digest: String,
    /// Master seed, absent for commands without randomness.
    pub seed: Option<u64>,
    pub versions: String,
}

impl RunManifest {
    pub fn new<S: Serialize>(command: &str, settings: &S, seed: Option<u64>) -> CliResult<Self> {
        Ok(Self {
            command: command.to_string(),
            config_digest: digest(settings)?,
            seed,
            versions: versions(),
        })
    }

    /// `# key=value` lines for delimited outputs.
    pub fn comment_lines(&self) -> String {
        let seed = self
            .seed
            .map_or_else(|| "none".to_string(), |s| s.to_string());
        format!(
            "# command={}\n# config_digest={}\n# seed={seed}\n# versions={}\n",
            self.command, self.config_digest, self.versions
        )
    }
}

pub fn digest<S: Serialize>(settings: &S) -> CliResult<String> {
    let bytes = serde_json::to_vec(settings).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn versions() -> String {
    format!("robust-irt {}", env!("CARGO_PKG_VERSION"))
}

/// The nested `{manifest, settings, results}` document.
#[derive(Debug, Serialize, Deserialize)]
pub struct Report<S, R> {
    pub manifest: RunManifest,
    pub settings: S,
    pub results: R,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Settings {
        a: u32,
        b: &'static str,
    }

    #[test]
    fn digest_is_content_addressed() {
        let x = digest(&Settings { a: 1, b: "x" }).unwrap();
        assert_eq!(x.len(), 64);
        assert_eq!(x, digest(&Settings { a: 1, b: "x" }).unwrap());
        assert_ne!(x, digest(&Settings { a: 2, b: "x" }).unwrap());
        // SHA-256 of the bytes `{"a":1,"b":"x"}`.
        assert_eq!(x, hex::encode(Sha256::digest(br#"{"a":1,"b":"x"}"#)));
    }

    #[test]
    fn comment_block() {
        let m = RunManifest::new("fit", &Settings { a: 1, b: "x" }, None).unwrap();
        let c = m.comment_lines();
        assert!(c.starts_with("# command=fit\n# config_digest="));
        assert!(c.contains("# seed=none\n"));
    }
}
