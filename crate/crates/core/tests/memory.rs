//! Peak heap use of full-map inference at 512 x 512 as the pixel-set size
//! grows. A counting allocator records the high-water mark of live bytes.

use photostereo::image::{Map, Mask};
use photostereo::model::{InferOptions, ModelConfig, Network};
use photostereo::nn::Graph;
use photostereo::preprocess::{prepare_inputs, Fit, Mode};
use photostereo::rng::Rng;
use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

fn inputs(r: usize, k: usize) -> (Vec<Map>, Mask) {
    let mut rng = Rng::new(3);
    let images = (0..k)
        .map(|_| Map::from_vec(r, r, 3, (0..r * r * 3).map(|_| rng.uniform() as f32).collect()).unwrap())
        .collect();
    // A centered square of 96 x 96 = 9216 pixels: several sets for every m.
    let mut mask = Mask::zeros(r, r);
    let lo = r / 2 - 48;
    for y in lo..lo + 96 {
        for x in lo..lo + 96 {
            mask.data[y * r + x] = true;
        }
    }
    (images, mask)
}

fn measure<T>(f: impl FnOnce() -> T) -> usize {
    let base = LIVE.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    drop(f());
    PEAK.load(Ordering::Relaxed) - base
}

fn mib(b: usize) -> f64 {
    b as f64 / (1 << 20) as f64
}

#[test]
fn peak_memory_does_not_grow_quadratically_with_m() {
    let r = 512;
    let cfg = ModelConfig { resolution: r, ..ModelConfig::toy() };
    let net = Network::new(&cfg, 0).unwrap();
    let (images, mask) = inputs(r, 3);
    let opts = |m| InferOptions { m, seed: 1, no_mask: false };
    // Warm-up: first-use allocations are not part of the comparison.
    net.infer_full_map(&images, Some(&mask), &opts(256)).unwrap();

    let ms = [256, 1024, 4096];
    let full: Vec<usize> = ms.iter().map(|&m| measure(|| net.infer_full_map(&images, Some(&mask), &opts(m)).unwrap())).collect();

    // Decoder alone on one set of m pixels, with the features already built.
    let obs = prepare_inputs(&images, Some(&mask), r, Mode::Infer, Fit::Resize, 0).unwrap();
    let g = Graph::inference(&net.store);
    let features = net.encode(&g, &obs).unwrap();
    let pixels = mask.indices();
    let decode: Vec<usize> = ms.iter().map(|&m| measure(|| net.decode(&g, &features, &obs, &pixels[..m]))).collect();

    for i in 0..ms.len() {
        println!("m = {}: full inference peak {:.1} MiB, one decoder set {:.1} MiB", ms[i], mib(full[i]), mib(decode[i]));
    }
    // Full inference is dominated by the encoder and stays flat.
    assert!(full[2] <= full[0] + full[0] / 10, "full-map peak {full:?}");
    // The decoder may grow linearly in m; a quadratic one would hold an
    // m x m logit matrix per head.
    let per_point = (decode[2] - decode[0]) as f64 / (ms[2] - ms[0]) as f64;
    let per_point_hi = (decode[2] - decode[1]) as f64 / (ms[2] - ms[1]) as f64;
    let per_point_lo = (decode[1] - decode[0]) as f64 / (ms[1] - ms[0]) as f64;
    println!("decoder bytes per added sample: {per_point:.0} (low range {per_point_lo:.0}, high range {per_point_hi:.0})");
    assert!(per_point_hi <= per_point_lo * 1.25 + 1024.0, "decoder memory grows faster than linearly");
    let quadratic = ms[2] * ms[2] * 8 * cfg.decoder.heads;
    assert!(decode[2] * 10 < quadratic, "decoder peak {} near quadratic logits {quadratic}", decode[2]);
}
