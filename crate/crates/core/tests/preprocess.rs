mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use vesseg::gradcore::{Shape, Tensor};
use vesseg::mask::BinaryMask;
use vesseg::preprocess::{
    augment, clahe, prepare, to_grayscale, AugmentationOp, ClaheConfig, PreprocessError, RasterImage,
};

/// Global histogram equalization computed straight from sorted pixel values.
fn global_equalization(pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() as f64;
    let mut sorted = pixels.to_vec();
    sorted.sort_unstable();
    let smallest = sorted[0];
    let cdf_min = sorted.iter().filter(|&&v| v == smallest).count() as f64;
    if cdf_min == n {
        return pixels.to_vec();
    }
    pixels
        .iter()
        .map(|&v| {
            let at_or_below = sorted.partition_point(|&s| s <= v) as f64;
            (255.0 * (at_or_below - cdf_min) / (n - cdf_min)).round() as u8
        })
        .collect()
}

#[test]
fn single_unclipped_tile_is_global_equalization() {
    let cfg = ClaheConfig {
        tiles: (1, 1),
        clip_limit: f64::INFINITY,
    };
    for seed in 0..20u64 {
        let mut r = rng(seed);
        let (w, h) = (r.gen_range(1..40), r.gen_range(1..40));
        let lo = r.gen_range(0..200u8);
        let hi = r.gen_range(lo..=255);
        let data: Vec<u8> = (0..w * h).map(|_| r.gen_range(lo..=hi)).collect();
        let img = RasterImage::gray(w, h, data.clone()).unwrap();
        let out = clahe(&img, &cfg).unwrap();
        assert_eq!(out.data(), global_equalization(&data).as_slice(), "seed {seed}");
    }
}

#[test]
fn grayscale_examples() {
    let red = RasterImage::new(1, 1, 3, vec![255, 0, 0]).unwrap();
    assert_eq!(to_grayscale(&red).unwrap().data(), &[76]);
    let white = RasterImage::new(1, 1, 3, vec![255, 255, 255]).unwrap();
    assert_eq!(to_grayscale(&white).unwrap().data(), &[255]);
    let gray = RasterImage::gray(2, 1, vec![3, 200]).unwrap();
    assert_eq!(to_grayscale(&gray).unwrap(), gray);
    assert!(matches!(
        RasterImage::new(1, 1, 2, vec![0, 0]),
        Err(PreprocessError::Channels(2))
    ));
}

#[test]
fn prepare_rerun_stays_in_range() {
    let mut r = rng(31);
    let data: Vec<u8> = (0..60 * 50 * 3).map(|_| r.gen()).collect();
    let img = RasterImage::new(60, 50, 3, data).unwrap();
    let once = prepare(&img, (64, 64), &ClaheConfig::default()).unwrap();
    let render: Vec<u8> = once.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
    let twice = prepare(&RasterImage::gray(64, 64, render).unwrap(), (64, 64), &ClaheConfig::default()).unwrap();
    assert!(twice.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

fn random_tensor(seed: u64, w: usize, h: usize) -> Tensor {
    let mut r = rng(seed);
    uniform(&mut r, Shape::new(1, 1, h, w), 0.0, 1.0)
}

fn random_mask(seed: u64, w: usize, h: usize) -> BinaryMask {
    let mut r = rng(seed);
    BinaryMask::from_fn(w, h, |_, _| r.gen_bool(0.3))
}

#[test]
fn transpose_is_flip_after_rotation() {
    let img = random_tensor(40, 7, 5);
    let composed = AugmentationOp::FlipH.apply_tensor(&AugmentationOp::Rotate90.apply_tensor(&img));
    let transposed = AugmentationOp::Transpose.apply_tensor(&img);
    assert_eq!(composed, transposed);
    for y in 0..5 {
        for x in 0..7 {
            assert_eq!(transposed.at(0, 0, x, y), img.at(0, 0, y, x));
        }
    }
}

proptest! {
    #[test]
    fn augmentation_preserves_foreground(seed in any::<u64>(), w in 1usize..20, h in 1usize..20, k in 0usize..7) {
        let op = AugmentationOp::ALL[k];
        let img = random_tensor(seed, w, h);
        let mask = random_mask(seed ^ 1, w, h);
        let (img2, mask2) = augment(&img, &mask, op).unwrap();
        prop_assert_eq!(mask2.count(), mask.count());
        prop_assert_eq!(mask2.dims(), op.output_dims(w, h));
        let mut a = img.data().to_vec();
        let mut b = img2.data().to_vec();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn image_and_mask_move_together(seed in any::<u64>(), w in 1usize..16, h in 1usize..16, k in 0usize..7) {
        let op = AugmentationOp::ALL[k];
        let mask = random_mask(seed, w, h);
        let img = mask.to_tensor();
        let (img2, mask2) = augment(&img, &mask, op).unwrap();
        prop_assert_eq!(mask2.to_tensor(), img2);
    }

    #[test]
    fn clipped_single_tile_mapping_is_monotone(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (w, h) = (r.gen_range(8..48), r.gen_range(8..48));
        let data: Vec<u8> = (0..w * h).map(|_| r.gen()).collect();
        let img = RasterImage::gray(w, h, data.clone()).unwrap();
        let cfg = ClaheConfig { tiles: (1, 1), clip_limit: r.gen_range(1.0..4.0) };
        let out = clahe(&img, &cfg).unwrap();
        for i in 0..data.len() {
            for j in 0..data.len().min(i + 20) {
                if data[i] <= data[j] {
                    prop_assert!(out.data()[i] <= out.data()[j]);
                }
            }
        }
    }
}
