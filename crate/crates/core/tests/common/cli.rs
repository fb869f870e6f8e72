//! Helpers for driving the `edgenet` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use edgenet::dataset::idx::{encode_idx_images, encode_idx_labels};

pub fn edgenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgenet"))
        .args(args)
        .output()
        .expect("spawn edgenet")
}

pub fn ok(args: &[&str]) -> String {
    let out = edgenet(args);
    assert!(
        out.status.success(),
        "edgenet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// `n` synthetic 28x28 digits: a dark bar whose position encodes the label.
pub fn tiny_idx(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let images: Vec<Vec<u8>> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let col = 3 + 2 * usize::from(l);
            (0..28 * 28)
                .map(|p| {
                    let (y, x) = (p / 28, p % 28);
                    if (4..24).contains(&y) && (col..col + 2).contains(&x) {
                        (i % 5) as u8 * 10
                    } else {
                        250
                    }
                })
                .collect()
        })
        .collect();
    let refs: Vec<&[u8]> = images.iter().map(Vec::as_slice).collect();
    let (ip, lp) = (dir.join("tiny-images.idx"), dir.join("tiny-labels.idx"));
    fs::write(&ip, encode_idx_images(28, 28, &refs).unwrap()).unwrap();
    fs::write(&lp, encode_idx_labels(&labels).unwrap()).unwrap();
    (ip, lp)
}

pub fn source(pair: &(PathBuf, PathBuf)) -> String {
    format!("{},{}", pair.0.display(), pair.1.display())
}
