//! Renders a small synthetic dataset, reads every scene back and prints
//! what was generated.
//!
//!     cargo run --release --example render_dataset -- /tmp/ps_data 8

use photostereo::dataset::read_dataset;
use photostereo::render::{generate_reference_dataset, RenderConfig};
use std::path::PathBuf;

fn main() -> photostereo::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "ps_data".into()));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let config = RenderConfig { resolution: 64, num_images: 6, seed: 11, ..RenderConfig::default() };
    let manifest = generate_reference_dataset(n, &config, &out)?;
    println!("wrote {}", manifest.display());
    for (name, scene) in read_dataset(&out)? {
        let kind = scene.meta.lighting[0].kind;
        let gain = scene.meta.exposure.as_ref().map_or(1.0, |e| e.gain);
        println!(
            "{name}: {}x{}, {} images, lighting {kind:?}, {} masked pixels, exposure gain {gain:.3}",
            scene.height(),
            scene.width(),
            scene.num_images(),
            scene.mask.count()
        );
    }
    Ok(())
}
