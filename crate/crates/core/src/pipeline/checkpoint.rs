//! Checkpoint files: `{"format_version", "checksum", "state"}` where the
//! checksum is the SHA-256 of the exact `state` text.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::run::RunState;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a> {
    format_version: u32,
    checksum: String,
    state: &'a RawValue,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    format_version: u32,
    checksum: String,
    state: Box<RawValue>,
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn save(path: &Path, state: &RunState) -> Result<()> {
    let raw = serde_json::to_string(state)?;
    let raw_value = RawValue::from_string(raw)?;
    let doc = serde_json::to_string(&Envelope {
        format_version: FORMAT_VERSION,
        checksum: digest(raw_value.get()),
        state: &raw_value,
    })?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(doc.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<RunState> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let env: EnvelopeIn =
        serde_json::from_str(&text).map_err(|e| Error::Checksum(format!("{}: not a checkpoint: {e}", path.display())))?;
    if env.format_version != FORMAT_VERSION {
        return Err(Error::Checksum(format!(
            "{}: unsupported format version {}",
            path.display(),
            env.format_version
        )));
    }
    let actual = digest(env.state.get());
    if actual != env.checksum {
        return Err(Error::Checksum(format!(
            "{}: checksum {actual} does not match recorded {}",
            path.display(),
            env.checksum
        )));
    }
    serde_json::from_str(env.state.get()).map_err(|e| Error::Checksum(format!("{}: {e}", path.display())))
}
