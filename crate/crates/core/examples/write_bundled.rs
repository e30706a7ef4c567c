//! Regenerate the geometry files in `data/` from their builders.
//!
//! cargo run --example write_bundled -- [output dir]

use std::path::PathBuf;

use dgiga::cli::bundled::bundled_geometries;
use dgiga::cli::geometry_file::GeometryFile;

fn main() -> std::io::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data"));
    std::fs::create_dir_all(&dir)?;
    for (name, degree, surface) in bundled_geometries() {
        let file = GeometryFile::from_surface(&surface);
        let header = format!(
            "# {name}: {} patches of degree {degree}, generated by examples/write_bundled.rs\n",
            surface.patches().len()
        );
        std::fs::write(dir.join(name), header + &file.to_string())?;
        println!("wrote {}", dir.join(name).display());
    }
    Ok(())
}
