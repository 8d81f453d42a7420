use geopoi_autodiff::{read_checkpoint, write_checkpoint, ParamStore, Tensor};

#[test]
fn round_trip_preserves_names_shapes_and_bits() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ParamStore::new();
    s.insert("gcim.w_s", Tensor::matrix(2, 3, vec![0.1, -0.2, 1e-300, f64::MAX, -0.0, 7.0]).unwrap());
    s.insert("pam.bias", Tensor::vector(vec![1.5, 2.5]));
    s.insert("scalar", Tensor::scalar(std::f64::consts::PI));
    let (idx, blob) = (dir.path().join("params.index"), dir.path().join("params.bin"));
    write_checkpoint(&s, &idx, &blob).unwrap();

    let back = read_checkpoint(&idx, &blob).unwrap();
    assert_eq!(back.names().collect::<Vec<_>>(), vec!["gcim.w_s", "pam.bias", "scalar"]);
    for (name, p) in s.iter() {
        let q = back.get(name).unwrap();
        assert_eq!(p.value.shape(), q.value.shape());
        let a: Vec<u64> = p.value.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = q.value.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    let index = std::fs::read_to_string(&idx).unwrap();
    assert!(index.contains("gcim.w_s\t2x3\t0\n"));
    assert!(index.contains("pam.bias\t2\t48\n"));
    assert!(index.contains("scalar\t-\t64\n"));
    assert_eq!(std::fs::metadata(&blob).unwrap().len(), 72);
    // little-endian f64 at the recorded offset
    let bytes = std::fs::read(&blob).unwrap();
    assert_eq!(f64::from_le_bytes(bytes[48..56].try_into().unwrap()), 1.5);
}

#[test]
fn truncated_blob_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ParamStore::new();
    s.insert("w", Tensor::vector(vec![1.0, 2.0, 3.0]));
    let (idx, blob) = (dir.path().join("i"), dir.path().join("b"));
    write_checkpoint(&s, &idx, &blob).unwrap();
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..16]).unwrap();
    assert!(read_checkpoint(&idx, &blob).is_err());
}
