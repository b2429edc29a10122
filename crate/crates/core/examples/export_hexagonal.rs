//! Writes the hexagonal mesh family (levels 0 to 4) as `json-poly` files.
//!
//! Usage: `cargo run -p hho-brinkman --example export_hexagonal [DIR]`

use hho_brinkman::harness::{level_subdivisions, shipped_hexagonal_dir};
use hho_brinkman::mesh::generate_hexagonal;
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(shipped_hexagonal_dir);
    std::fs::create_dir_all(&dir)?;
    for level in 0..5 {
        let mesh = generate_hexagonal(level_subdivisions(level))?;
        let path = dir.join(format!("hexagonal_level{level}.json"));
        std::fs::write(&path, serde_json::to_string(&mesh.to_json_poly())?)?;
        println!("{} ({} cells)", path.display(), mesh.num_cells());
    }
    Ok(())
}
