//! Regenerate the data files under `data/`.

use std::path::Path;

fn main() -> anyhow::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    emitron::fixtures::write_all(&dir)?;
    println!("fixtures written to {}", dir.display());
    Ok(())
}
