//! Regenerates the files under `crates/core/assets/`.

use std::path::PathBuf;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets");
    std::fs::create_dir_all(&dir)?;
    for (name, content) in hag_core::synthetic::assets() {
        std::fs::write(dir.join(name), content)?;
        println!("wrote {}", dir.join(name).display());
    }
    Ok(())
}
