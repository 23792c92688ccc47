use aar::checkpoint::{
    encoder_from_bytes, encoder_to_bytes, export_retriever, index_from_bytes, index_to_bytes, load_encoder, load_index,
    reader_from_bytes, reader_to_bytes, save_encoder, save_index, ENCODER_MAGIC,
};
use aar_core::seed;
use aar_core::{EncoderParams, Index, IndexMode, ReaderConfig, ReaderModel};
use proptest::prelude::*;
use rand::Rng;
use tempfile::TempDir;

fn index(mode: IndexMode) -> Index {
    let mut rng = seed::rng(4);
    let ids = (0..60).map(|i| format!("doc-{i}")).collect();
    let vectors = (0..60 * 6).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Index::from_vectors(ids, 6, vectors, mode, 3).unwrap()
}

fn small_reader() -> ReaderModel {
    ReaderModel::init(ReaderConfig { layers: 1, heads: 2, d_model: 8, vocab_size: 50, max_seg_len: 12, seed: 7 }).unwrap()
}

#[test]
fn encoder_round_trip_gives_identical_embeddings() {
    let dir = TempDir::new().unwrap();
    let params = EncoderParams::init(500, 8, 11);
    let path = dir.path().join("e.aenc");
    save_encoder(&params, &path).unwrap();
    let loaded = load_encoder(&path).unwrap();
    assert_eq!(loaded, params);
    for i in 0..100 {
        let text = format!("sample text number {i} with words {}", i * 7);
        assert_eq!(loaded.encode_text(&text, 32), params.encode_text(&text, 32));
    }
}

#[test]
fn exporting_an_untrained_encoder_equals_its_initialisation() {
    let dir = TempDir::new().unwrap();
    let params = EncoderParams::init(100, 4, 2);
    let path = dir.path().join("sub/r.aenc");
    export_retriever(&params, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), encoder_to_bytes(&params));
}

#[test]
fn export_overwrites_an_existing_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("r.aenc");
    export_retriever(&EncoderParams::init(100, 4, 1), &path).unwrap();
    let second = EncoderParams::init(100, 4, 2);
    export_retriever(&second, &path).unwrap();
    assert_eq!(load_encoder(&path).unwrap(), second);
}

#[test]
fn exact_index_round_trip_answers_alike() {
    let dir = TempDir::new().unwrap();
    let original = index(IndexMode::Exact);
    let path = dir.path().join("i.aidx");
    save_index(&original, &path).unwrap();
    assert!(std::fs::read(&path).unwrap().starts_with(b"AARIDX01"));
    let loaded = load_index(&path).unwrap();
    let mut rng = seed::rng(9);
    for _ in 0..50 {
        let q: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(loaded.search(&q, 10).unwrap(), original.search(&q, 10).unwrap());
    }
}

#[test]
fn ivf_index_round_trip_keeps_assignments() {
    let original = index(IndexMode::Ivf { n_lists: 4, n_probe: 2 });
    let loaded = index_from_bytes(&index_to_bytes(&original)).unwrap();
    assert_eq!(loaded, original);
    assert_eq!(loaded.mode(), IndexMode::Ivf { n_lists: 4, n_probe: 2 });
}

#[test]
fn reader_round_trip() {
    let model = small_reader();
    let bytes = reader_to_bytes(&model);
    assert!(bytes.starts_with(b"AARFID01"));
    assert_eq!(reader_from_bytes(&bytes).unwrap(), model);
}

#[test]
fn bad_magic_is_a_format_error() {
    let mut bytes = encoder_to_bytes(&EncoderParams::init(10, 2, 0));
    bytes[..8].copy_from_slice(b"NOTMAGIC");
    let err = encoder_from_bytes(&bytes).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("magic"));
    assert!(index_from_bytes(ENCODER_MAGIC).is_err());
}

#[test]
fn trailing_bytes_are_rejected() {
    let mut bytes = encoder_to_bytes(&EncoderParams::init(10, 2, 0));
    bytes.push(0);
    assert!(encoder_from_bytes(&bytes).unwrap_err().to_string().contains("trailing"));
}

#[test]
fn index_truncated_mid_vector() {
    let bytes = index_to_bytes(&index(IndexMode::Exact));
    let cut = bytes.len() - 3;
    let err = index_from_bytes(&bytes[..cut]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("truncated while reading vectors"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_truncation_is_an_error(frac in 0.0f64..1.0) {
        let enc = encoder_to_bytes(&EncoderParams::init(20, 3, 1));
        let idx = index_to_bytes(&index(IndexMode::Ivf { n_lists: 3, n_probe: 1 }));
        let rdr = reader_to_bytes(&small_reader());
        let cut = |b: &[u8]| (frac * b.len() as f64) as usize;
        prop_assert!(encoder_from_bytes(&enc[..cut(&enc)]).is_err());
        prop_assert!(index_from_bytes(&idx[..cut(&idx)]).is_err());
        prop_assert!(reader_from_bytes(&rdr[..cut(&rdr)]).is_err());
    }

    #[test]
    fn encoder_bytes_round_trip(seed_value in 0u64..1000, vocab in 2u32..60, dim in 1usize..6) {
        let params = EncoderParams::init(vocab, dim, seed_value);
        prop_assert_eq!(encoder_from_bytes(&encoder_to_bytes(&params)).unwrap(), params);
    }
}
