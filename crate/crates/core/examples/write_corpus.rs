//! Regenerates the JSON files under `corpus/`.
//!
//! cargo run -p meshtensor --example write_corpus -- corpus

use std::path::PathBuf;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "corpus".into()));
    std::fs::create_dir_all(&dir)?;
    for (name, file) in meshtensor::corpus::standard_corpus() {
        std::fs::write(dir.join(&name), file.to_json() + "\n")?;
        println!("wrote {}", dir.join(&name).display());
    }
    Ok(())
}
