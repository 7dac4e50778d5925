#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use lpcaug::signal::save_wav;
use lpcaug::synth::{synthetic_vowel, VowelSpec};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Roots of a random real polynomial of `degree`, all strictly inside the
/// unit circle. Conjugate pairs are emitted adjacently.
pub fn random_stable_roots(rng: &mut ChaCha8Rng, degree: usize, max_mag: f64) -> Vec<Complex64> {
    let n_real = if degree % 2 == 1 {
        1 + 2 * rng.random_range(0..=1)
    } else {
        2 * rng.random_range(0..=1)
    }
    .min(degree);
    let mut roots = Vec::with_capacity(degree);
    for _ in 0..n_real {
        roots.push(Complex64::new(rng.random_range(-max_mag..max_mag), 0.0));
    }
    while roots.len() < degree {
        let z = Complex64::from_polar(rng.random_range(0.2..max_mag), rng.random_range(0.05..3.09));
        roots.push(z);
        roots.push(z.conj());
    }
    roots
}

/// Predictor coefficients `a_k` of `prod (1 - z_i z^-1) = 1 - sum a_k z^-k`,
/// expanded in complex arithmetic.
pub fn predictor_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut poly = vec![Complex64::new(1.0, 0.0)];
    for &z in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * z;
        }
        poly = next;
    }
    poly[1..].iter().map(|c| -c.re).collect()
}

pub fn white_noise(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Direct-form all-pole filter, independent of the library's.
pub fn ar_filter(x: &[f64], a: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let mut acc = x[n];
        for (k, ak) in a.iter().enumerate() {
            if n > k {
                acc += ak * y[n - k - 1];
            }
        }
        y[n] = acc;
    }
    y
}

/// Writes `n` one-second synthetic vowels with distinct formants plus a
/// manifest referencing them by relative path.
pub fn write_vowel_corpus(dir: &Path, n: usize) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut manifest = String::new();
    for i in 0..n {
        let f = i as f64;
        let spec =
            VowelSpec::with_formants(&[400.0 + 30.0 * f, 1200.0 + 60.0 * f, 2400.0 + 40.0 * f]);
        let name = format!("utt{i:02}.wav");
        save_wav(&synthetic_vowel(&spec), dir.join(&name)).unwrap();
        manifest.push_str(&format!(
            "{{\"id\":\"utt{i:02}\",\"path\":\"{name}\",\"text\":\"vowel {i}\"}}\n"
        ));
    }
    let path = dir.join("input.jsonl");
    fs::write(&path, manifest).unwrap();
    path
}

pub type Snapshot = Vec<(String, Vec<u8>)>;

/// Every regular file in `dir` with its bytes, sorted by name.
pub fn dir_snapshot(dir: &Path) -> Snapshot {
    let mut files: Snapshot = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}
