//! Golden output of the learned head on a fixed seeded input, produced by a
//! deliberately naive loop-nest forward pass kept in this file.

#![allow(clippy::needless_range_loop)]

use std::path::PathBuf;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tad_core::ingest::FeatureSequence;
use tad_core::propgen::{forward_head, HeadWeights};

const T: usize = 100;
const C: usize = 8;
const H: usize = 6;
const D: usize = 100;

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/head_golden.f64")
}

fn inputs() -> (FeatureSequence, HeadWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let x = Array2::from_shape_fn((T, C), |_| rng.random_range(-1.0..1.0));
    (
        FeatureSequence::new("golden", x).unwrap(),
        HeadWeights::seeded(T, C, H, D, 2024),
    )
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn naive_conv(x: &[Vec<f64>], w: &ndarray::Array3<f64>, b: &ndarray::Array1<f64>) -> Vec<Vec<f64>> {
    let t = x.len();
    let (c_out, c_in, _) = w.dim();
    let mut y = vec![vec![0.0; c_out]; t];
    for r in 0..t {
        for o in 0..c_out {
            let mut acc = b[o];
            for k in 0..3 {
                let src = r as isize + k as isize - 1;
                if src < 0 || src >= t as isize {
                    continue;
                }
                for ci in 0..c_in {
                    acc += w[[o, ci, k]] * x[src as usize][ci];
                }
            }
            y[r][o] = if acc > 0.0 { acc } else { 0.0 };
        }
    }
    y
}

/// p_start, p_end, m_cc (row-major d x t), m_cr, concatenated.
fn naive_forward(seq: &FeatureSequence, w: &HeadWeights) -> Vec<f64> {
    let x: Vec<Vec<f64>> = seq.data().rows().into_iter().map(|r| r.to_vec()).collect();
    let z1 = naive_conv(&x, &w.conv1_w, &w.conv1_b);
    let z2 = naive_conv(&z1, &w.conv2_w, &w.conv2_b);
    let mut out = Vec::new();
    for (head_w, head_b) in [(&w.start_w, w.start_b), (&w.end_w, w.end_b)] {
        for row in &z2 {
            let mut acc = head_b;
            for h in 0..H {
                acc += head_w[h] * row[h];
            }
            out.push(sigmoid(acc));
        }
    }
    for channel in 0..2 {
        for d in 0..D {
            for i in 0..T {
                if i + d + 1 > T {
                    out.push(0.0);
                    continue;
                }
                let mut pooled = [0.0; H];
                for row in &z2[i..=i + d] {
                    for h in 0..H {
                        pooled[h] += row[h];
                    }
                }
                let mut acc = w.map_b[channel];
                for h in 0..H {
                    acc += w.map_w[[channel, h]] * (pooled[h] / (d + 1) as f64);
                }
                out.push(sigmoid(acc));
            }
        }
    }
    out
}

fn read_golden() -> Vec<f64> {
    std::fs::read(fixture_path())
        .expect("golden fixture present; regenerate with `cargo test --test head_golden -- --ignored`")
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect()
}

#[test]
#[ignore = "rewrites the golden fixture"]
fn regenerate_golden() {
    let (seq, w) = inputs();
    let bytes: Vec<u8> = naive_forward(&seq, &w).iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(fixture_path(), bytes).unwrap();
}

#[test]
fn naive_pass_reproduces_golden() {
    let (seq, w) = inputs();
    assert_eq!(naive_forward(&seq, &w), read_golden());
}

#[test]
fn forward_head_matches_golden() {
    let (seq, w) = inputs();
    let golden = read_golden();
    assert_eq!(golden.len(), 2 * T + 2 * D * T);
    let maps = forward_head(&seq, &w).unwrap();
    let got: Vec<f64> = maps
        .p_start
        .iter()
        .chain(maps.p_end.iter())
        .chain(maps.m_cc.iter())
        .chain(maps.m_cr.iter())
        .copied()
        .collect();
    let worst = got.iter().zip(&golden).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12, "max deviation {worst}");
    // invalid cells are exactly zero in both
    assert_eq!(maps.m_cc[[D - 1, 1]], 0.0);
    assert_eq!(golden[2 * T + (D - 1) * T + 1], 0.0);
}
