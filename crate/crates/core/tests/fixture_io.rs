use std::fs;

use in2out_core::synthdata::{generate, SynthSpec};
use in2out_core::tensorio::{list_clips, load_clip, load_fixture, save_clip, save_fixture};
use in2out_core::{Space, Tensor, VideoTensor};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vten_roundtrip_is_bit_exact(
        shape in prop::collection::vec(1usize..5, 1..5),
        seed in any::<u32>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.vten");
        let mut s = seed;
        let t = Tensor::from_fn(&shape, |_| {
            s = s.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
            f32::from_bits(0x3f00_0000 | (s >> 9)) - 1.0
        });
        save_fixture(&t, &path).unwrap();
        let back = load_fixture(&path).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn truncated_fixture_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.vten");
    save_fixture(&Tensor::<f32>::zeros(&[2, 3]), &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert_eq!(load_fixture(&path).unwrap_err().kind(), "fixture");
    fs::write(&path, b"NOPE").unwrap();
    assert_eq!(load_fixture(&path).unwrap_err().kind(), "fixture");
}

#[test]
fn clip_roundtrip_quantizes_to_8_bits() {
    let dir = tempfile::tempdir().unwrap();
    let data = Tensor::from_fn(&[1, 2, 3, 4, 8], |i| (i[2] * 32 + i[3] * 8 + i[4]) as f32 / 127.0);
    let v = VideoTensor::new(data, Space::Pixel).unwrap();
    save_clip(&v, dir.path().join("c"), "c", 24.0).unwrap();
    let back = load_clip(dir.path().join("c")).unwrap();
    assert_eq!(back.dims(), v.dims());
    assert!(back.tensor().max_abs_diff(v.tensor()) <= 0.5 / 255.0 + 1e-6);
}

#[test]
fn synthetic_corpus_is_seed_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_clips: 2,
        frames: 3,
        width: 32,
        height: 16,
        ..SynthSpec::default()
    };
    generate(&spec, dir.path().join("a")).unwrap();
    generate(&spec, dir.path().join("b")).unwrap();
    let a = list_clips(dir.path().join("a")).unwrap();
    let b = list_clips(dir.path().join("b")).unwrap();
    assert_eq!(a.len(), 2);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(load_clip(x).unwrap().tensor(), load_clip(y).unwrap().tensor());
    }
}
