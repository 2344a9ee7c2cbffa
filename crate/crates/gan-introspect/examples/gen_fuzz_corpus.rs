//! Regenerate the seed corpus for the fuzz targets in ../fuzz/corpus/.
//!
//! Usage: cargo run --example gen_fuzz_corpus [corpus-dir]

use std::fs;
use std::path::{Path, PathBuf};

use gan_introspect::dataio::{amat_to_bytes, amat_to_csv_string, fseq_to_bytes, FeatureSequence};
use gan_introspect::experiments::{report_to_csv_string, ExperimentReport, ReportRow};
use gan_introspect::net::{
    build_discriminator, build_generator, checkpoint_to_bytes, initial_checkpoint,
    GeneratorConfig,
};
use gan_introspect::svcca::ActivationMatrix;

fn main() {
    let root: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| PathBuf::from("fuzz/corpus"));

    let amat = ActivationMatrix::new(
        "R1",
        3,
        6,
        (0..18).map(|v| (v as f64 * 0.173).sin()).collect(),
        400,
    )
    .unwrap();
    let amat_bytes = amat_to_bytes(&amat);
    write(&root, "fuzz_amat/valid.amat", &amat_bytes);
    write(
        &root,
        "fuzz_amat/truncated.amat",
        &amat_bytes[..amat_bytes.len() / 2],
    );
    write(&root, "fuzz_amat_csv/valid.csv", amat_to_csv_string(&amat).as_bytes());

    let fseq = FeatureSequence {
        q: 4,
        t: 8,
        data: (0..32).map(|v| (v as f64 * 0.31).cos()).collect(),
        domain: 1,
        id: "d1_s000".into(),
    };
    write(&root, "fuzz_fseq/valid.fseq", &fseq_to_bytes(&fseq));

    // smallest legal geometry keeps the checkpoint seed compact
    let cfg = GeneratorConfig {
        q_features: 4,
        base_channels: 1,
        repeat_blocks: 1,
        n_domains: 2,
        seed: 1,
    };
    let gen = build_generator(&cfg).unwrap();
    let disc = build_discriminator(&cfg).unwrap();
    let rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let ckpt = initial_checkpoint(&gen, &disc, &rng);
    write(&root, "fuzz_checkpoint/valid.gick", &checkpoint_to_bytes(&ckpt));

    write(&root, "fuzz_config/empty.json", b"{}");
    write(
        &root,
        "fuzz_config/tiny.json",
        br#"{"generator": {"q_features": 8, "base_channels": 1, "repeat_blocks": 2, "n_domains": 2, "seed": 1},
 "dataset": {"n_domains": 2, "sentences_per_domain": 4, "q": 8, "t_min": 24, "t_max": 40, "seed": 3},
 "seeds": [1], "probe_sequences": 2}"#,
    );

    let report = ExperimentReport {
        experiment: "exp1".into(),
        seed: 1,
        fingerprint: 0,
        rows: vec![
            ReportRow {
                checkpoint: 200,
                layer: "D1".into(),
                similarity: 0.998,
            },
            ReportRow {
                checkpoint: 200,
                layer: "GROUP_D".into(),
                similarity: 0.99,
            },
        ],
    };
    write(
        &root,
        "fuzz_report_csv/valid.csv",
        report_to_csv_string(&report).as_bytes(),
    );

    println!("corpus written under {}", root.display());
}

fn write(root: &Path, rel: &str, bytes: &[u8]) {
    let path = root.join(rel);
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(&path, bytes).unwrap();
    println!("  {} ({} bytes)", path.display(), bytes.len());
}
