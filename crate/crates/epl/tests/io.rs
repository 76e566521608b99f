use epl::io::{
    load_tensor, read_labels, read_pgm, read_sample, save_tensor, tensor_potential, write_sample,
    Tensor, IMAGE_FILE, LABELS_FILE,
};
use epl::Error;
use epl_core::datagen::{generate_dataset, SceneSpec};
use epl_core::field::{one_hot, AcConfig, Conversion, SplitterKind};

fn samples(count: usize) -> Vec<epl_core::datagen::Sample> {
    generate_dataset(&SceneSpec { count, seed: 3, ..SceneSpec::default() }).unwrap()
}

#[test]
fn sample_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, s) in samples(6).iter().enumerate() {
        let d = dir.path().join(i.to_string());
        write_sample(&d, s).unwrap();
        let back = read_sample(&d, 3).unwrap();
        assert_eq!(&back, s);
        for (a, b) in back.image.data().iter().zip(s.image.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn labels_are_stored_as_8bit_greymaps() {
    let dir = tempfile::tempdir().unwrap();
    let s = &samples(1)[0];
    write_sample(dir.path(), s).unwrap();
    let g = read_pgm(std::fs::File::open(dir.path().join(LABELS_FILE)).unwrap()).unwrap();
    assert_eq!((g.height, g.width, g.maxval), (64, 64, 255));
    assert!(g.pixels.iter().all(|&p| p < 3));
}

#[test]
fn corrupt_magic_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    write_sample(dir.path(), &samples(1)[0]).unwrap();
    let path = dir.path().join(IMAGE_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, bytes).unwrap();
    let err = read_sample(dir.path(), 3).unwrap_err();
    assert!(matches!(err.root(), Error::BadMagic { .. }), "{err}");
    assert!(err.to_string().contains(IMAGE_FILE));
}

#[test]
fn truncated_tensor_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.eplt");
    save_tensor(&path, &Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load_tensor(&path).unwrap_err().root(), Error::Format(_)));
}

#[test]
fn labels_out_of_range_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_sample(dir.path(), &samples(1)[0]).unwrap();
    assert!(read_labels(&dir.path().join(LABELS_FILE), 2).is_err());
    assert!(read_labels(&dir.path().join("missing.pgm"), 3).is_err());
}

#[test]
fn potential_dump_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = &samples(1)[0];
    let conv = Conversion::Anisotropic(AcConfig::new(5, SplitterKind::C).unwrap());
    let e = conv.apply(&one_hot(&s.labels, 3).unwrap());
    let path = dir.path().join("e.eplt");
    save_tensor(&path, &epl::io::potential_tensor(&e).unwrap()).unwrap();
    let t = load_tensor(&path).unwrap();
    assert_eq!(t.dims, vec![8, 3, 64, 64]);
    assert_eq!(tensor_potential(&t).unwrap(), e);
}
