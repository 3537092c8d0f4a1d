//! Shows how an R x R tensor is split into P^2 interleaved G x G
//! sub-tensors, and encodes a stack of images into per-light feature maps.

use photostereo::encoder::{merge_maps, split_tensor, BackboneConfig, Encoder};
use photostereo::image::Map;
use photostereo::nn::{Graph, ParamStore};
use photostereo::preprocess::{prepare_inputs, Fit, Mode};
use photostereo::rng::Rng;

fn main() -> photostereo::Result<()> {
    let r = 8;
    let data: Vec<u32> = (0..(r * r) as u32).collect();
    let subs = split_tensor(&data, r, 1, 4)?;
    for (i, s) in subs.iter().enumerate() {
        println!("sub-tensor {i}: {s:?}");
    }
    assert_eq!(merge_maps(&subs, 4, 1)?, data);

    let mut rng = Rng::new(5);
    let images: Vec<Map> = (0..3)
        .map(|_| Map::from_vec(64, 64, 3, (0..64 * 64 * 3).map(|_| rng.uniform() as f32).collect()).unwrap())
        .collect();
    let obs = prepare_inputs(&images, None, 64, Mode::Infer, Fit::Resize, 0)?;
    let mut store = ParamStore::new();
    let encoder = Encoder::new(&mut store, &BackboneConfig::toy(), &mut Rng::new(1))?;
    let g = Graph::inference(&store);
    let features = encoder.encode_features(&g, &obs)?;
    println!(
        "{} parameters; {} lights -> {}x{} feature maps with {} channels",
        store.num_scalars(),
        features.k,
        features.size,
        features.size,
        features.channels
    );
    Ok(())
}
