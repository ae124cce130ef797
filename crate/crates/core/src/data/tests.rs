use std::fs;
use std::path::Path;

use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cifar_record(label: u8, fill: u8) -> Vec<u8> {
    let mut r = vec![fill; CIFAR_RECORD_BYTES];
    r[0] = label;
    r
}

#[test]
fn cifar_record_decoding() {
    let mut bytes = cifar_record(7, 0);
    bytes.extend(cifar_record(2, 255));
    let (px, labels) = parse_cifar_records(&bytes, Path::new("x")).unwrap();
    assert_eq!(labels, vec![7, 2]);
    assert!(px[..3072].iter().all(|&v| v == 0.0));
    assert!(px[3072..].iter().all(|&v| v == 1.0));
}

#[test]
fn cifar_bad_size_is_corrupt() {
    let err = parse_cifar_records(&vec![0u8; 3074], Path::new("b.bin")).unwrap_err();
    assert!(matches!(err, Error::CorruptDataset { .. }), "{err}");
}

#[test]
fn cifar_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_cifar10(&dir.path().join("nope")), Err(Error::DatasetNotFound(_))));
    for (i, name) in ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"]
        .iter()
        .enumerate()
    {
        fs::write(dir.path().join(name), cifar_record(i as u8, 10)).unwrap();
    }
    assert!(matches!(load_cifar10(dir.path()), Err(Error::DatasetNotFound(_))));
    fs::write(dir.path().join("test_batch.bin"), cifar_record(9, 20)).unwrap();
    let (train, test) = load_cifar10(dir.path()).unwrap();
    assert_eq!(train.labels, vec![0, 1, 2, 3, 4]);
    assert_eq!(train.images.dims(), &[5, 3, 32, 32]);
    assert_eq!(test.labels, vec![9]);
    assert_eq!(test.split, Split::Test);
}

fn idx_images(n: u32, rows: u32, cols: u32, px: &[u8]) -> Vec<u8> {
    let mut b = 0x0803u32.to_be_bytes().to_vec();
    for v in [n, rows, cols] {
        b.extend(v.to_be_bytes());
    }
    b.extend(px);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = 0x0801u32.to_be_bytes().to_vec();
    b.extend((labels.len() as u32).to_be_bytes());
    b.extend(labels);
    b
}

#[test]
fn mnist_header_is_big_endian() {
    let mut header = idx_images(60000, 28, 28, &[]);
    header.truncate(16);
    assert_eq!(&header[4..8], &[0x00, 0x00, 0xEA, 0x60]);
    let err = parse_idx_images(&header, Path::new("h")).unwrap_err();
    assert!(err.to_string().contains("60000×28×28"), "{err}");
}

#[test]
fn mnist_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let px: Vec<u8> = (0..784).map(|i| (i % 256) as u8).collect();
    for prefix in ["train", "t10k"] {
        fs::write(dir.path().join(format!("{prefix}-images-idx3-ubyte")), idx_images(1, 28, 28, &px)).unwrap();
        fs::write(dir.path().join(format!("{prefix}-labels-idx1-ubyte")), idx_labels(&[3])).unwrap();
    }
    let (train, test) = load_mnist_idx(dir.path()).unwrap();
    assert_eq!(train.images.dims(), &[1, 1, 28, 28]);
    assert_eq!(train.labels, vec![3]);
    assert_eq!(train.images.data()[255], 1.0);
    assert_eq!(test.len(), 1);
    let wrong = idx_labels(&[3]);
    assert!(parse_idx_images(&wrong, Path::new("w")).unwrap_err().to_string().contains("magic"));
    assert!(parse_idx_labels(&idx_labels(&[1, 2])[..9], Path::new("t")).is_err());
}

#[test]
fn synth_is_deterministic_and_in_range() {
    let a = synth_shapes(40, 5).unwrap();
    let b = synth_shapes(40, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.images, synth_shapes(40, 6).unwrap().images);
    assert_eq!(a.images.dims(), &[40, 3, 32, 32]);
    assert!(a.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let boxes = a.boxes.as_ref().unwrap();
    assert_eq!(boxes.len(), 40);
    assert!(boxes.iter().all(|b| b.y1 <= 32 && b.x1 <= 32 && b.area() >= 64));
}

#[test]
fn synth_classes_balanced() {
    let d = synth_shapes(10000, 0).unwrap();
    for c in d.class_counts() {
        assert!((c as f64 / 10000.0 - 0.25).abs() <= 0.02 * 0.25, "{c}");
    }
}

#[test]
fn synth_shape_pixels_differ_from_background() {
    let d = synth_shapes(1, 3).unwrap();
    let b = d.boxes.unwrap()[0];
    let px = d.images.data();
    let at = |y: usize, x: usize| (0..3).map(|c| px[c * 1024 + y * 32 + x]).collect::<Vec<_>>();
    let center = at((b.y0 + b.y1) / 2, (b.x0 + b.x1) / 2);
    let corner = if b.y0 > 0 { at(b.y0 - 1, b.x0) } else { at(b.y1, b.x0) };
    let dist: f32 = center.iter().zip(&corner).map(|(a, b)| (a - b).powi(2)).sum::<f32>().sqrt();
    assert!(dist > 0.15, "{dist}");
}

#[test]
fn stratified_subset_takes_first_per_class() {
    let images = Tensor::zeros(&[8, 1, 2, 2]);
    let d = Dataset::new(images, vec![0, 0, 0, 1, 0, 1, 1, 1], 2, Split::Train).unwrap();
    let s = d.stratified_subset(4).unwrap();
    assert_eq!(s.labels, vec![0, 0, 1, 1]);
    let skewed = Dataset::new(Tensor::zeros(&[4, 1, 2, 2]), vec![0, 0, 0, 1], 2, Split::Train).unwrap();
    assert_eq!(skewed.stratified_subset(4).unwrap().len(), 4);
    assert!(d.stratified_subset(9).is_err());
}

#[test]
fn dataset_rejects_bad_labels() {
    assert!(Dataset::new(Tensor::zeros(&[2, 1, 2, 2]), vec![0, 3], 3, Split::Train).is_err());
    assert!(Dataset::new(Tensor::zeros(&[2, 1, 2, 2]), vec![0], 3, Split::Train).is_err());
}

#[test]
fn augment_policies() {
    let d = synth_shapes(8, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ident = MeanStd::identity(3);
    let off = augment(&d.images, &AugmentPolicy::none(ident.clone()), &mut rng).unwrap();
    assert_eq!(off, d.images);

    let sym = Tensor::from_fn(&[1, 1, 4, 4], |i| [1.0, 2.0, 2.0, 1.0][i % 4]);
    let flip_only = AugmentPolicy {
        flip: true,
        crop_pad: None,
        normalize: MeanStd::identity(1),
    };
    for _ in 0..5 {
        assert_eq!(augment(&sym, &flip_only, &mut rng).unwrap(), sym);
    }

    let full = AugmentPolicy::standard(ident);
    let a = augment(&d.images, &full, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = augment(&d.images, &full, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, d.images);
    let too_big = AugmentPolicy {
        crop_pad: Some(4),
        ..flip_only
    };
    assert!(augment(&sym, &too_big, &mut rng).is_err());
}

#[test]
fn normalized_train_set_is_standardized() {
    let d = synth_shapes(200, 2).unwrap();
    let stats = MeanStd::compute(&d);
    let normalized = Dataset::new(stats.apply(&d.images).unwrap(), d.labels.clone(), 4, Split::Train).unwrap();
    let after = MeanStd::compute(&normalized);
    for c in 0..3 {
        assert!(after.mean[c].abs() < 0.05, "{:?}", after.mean);
        assert!((after.std[c] - 1.0).abs() < 0.05, "{:?}", after.std);
    }
}
