use gan_introspect::dataio::{normalize_per_domain, synth_dataset, SynthConfig};
use gan_introspect::net::GeneratorConfig;
use gan_introspect::trainer::{train, InitFrom, TrainConfig};
use std::time::Instant;

fn main() {
    let (mut ds, stats) = synth_dataset(&SynthConfig::default()).unwrap();
    normalize_per_domain(&mut ds, &stats).unwrap();
    let gc = GeneratorConfig::default();
    let cfg = TrainConfig {
        total_iterations: 20,
        checkpoint_every: 20,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let out = train(&gc, &cfg, &ds, InitFrom::Fresh).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "20 iters in {:.2}s => {:.1}ms/iter => 2000 iters ~ {:.1}s",
        dt,
        dt * 50.0,
        dt * 100.0
    );
    println!(
        "first total_g {:.4}, last total_g {:.4}",
        out.log.records.first().unwrap().total_g,
        out.log.records.last().unwrap().total_g
    );
}
