//! Prints a random box scene as JSON, ready to be listed in a manifest.
//!
//! `cargo run --example scene -- [name] [points] [seed] > scene.json`

use rslf_core::sim::SCENE_ANCHOR_DEPTH;
use rslf_core::Scene;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map_or("standard", String::as_str);
    let n: usize = args.get(1).map_or(50, |s| s.parse().expect("point count"));
    let seed: u64 = args.get(2).map_or(7, |s| s.parse().expect("seed"));
    let scene = Scene::random_box(name, n, SCENE_ANCHOR_DEPTH, [1.0, 1.0, 0.5].into(), seed);
    println!("{}", serde_json::to_string_pretty(&scene).unwrap());
}
