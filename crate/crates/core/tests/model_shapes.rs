use waferseg_core::{Model, ModelConfig, Shape4, Variant};

fn trace_of(cfg: &ModelConfig) -> Vec<(String, Shape4)> {
    Model::<f32>::build(cfg).unwrap().shape_trace().unwrap()
}

fn get(trace: &[(String, Shape4)], name: &str) -> Shape4 {
    trace
        .iter()
        .find(|(n, _)| n == name)
        .unwrap_or_else(|| panic!("no {name} in trace"))
        .1
}

#[test]
fn dense_aspp2_full_size_shape_ledger() {
    let t = trace_of(&ModelConfig::new(Variant::DenseAspp2, 442, 440));
    assert_eq!(get(&t, "pool1"), Shape4::new(1, 221, 220, 64));
    assert_eq!(get(&t, "block2"), Shape4::new(1, 221, 220, 192));
    assert_eq!(get(&t, "pool2"), Shape4::new(1, 111, 110, 192));
    assert_eq!(get(&t, "block4"), Shape4::new(1, 56, 55, 768));
    assert_eq!(get(&t, "aspp_enc"), Shape4::new(1, 56, 55, 1408));
    assert_eq!(get(&t, "merge1"), Shape4::new(1, 111, 110, 128));
    assert_eq!(get(&t, "merge2"), Shape4::new(1, 221, 220, 128));
    assert_eq!(get(&t, "aspp_dec"), Shape4::new(1, 221, 220, 224));
    assert_eq!(get(&t, "merge3"), Shape4::new(1, 442, 440, 128));
    assert_eq!(get(&t, "probs"), Shape4::new(1, 442, 440, 3));
}
