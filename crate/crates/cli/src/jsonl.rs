//! Profiles as JSON lines: one RequestProfile object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use relay_core::RequestProfile;

pub fn write_profiles(path: &Path, profiles: &[RequestProfile]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for p in profiles {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn read_profiles(path: &Path) -> Result<Vec<RequestProfile>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line).with_context(|| format!("{}:{}: bad profile", path.display(), i + 1))?;
        out.push(p);
    }
    Ok(out)
}
