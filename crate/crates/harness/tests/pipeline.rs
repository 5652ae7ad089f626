use trimsketch::oracle::check_condition;
use trimsketch::{MomentQuery, StackShape, SubsampledSketchStack};
use trimsketch_harness::experiment::OursConfig;
use trimsketch_harness::{gen_synthetic, StreamFile};

#[test]
fn synthetic_vector_satisfies_the_accuracy_hypothesis() {
    let stream = gen_synthetic(1_000_000, 1000, 0).unwrap();
    let report = check_condition(&stream.vector(), 1000, 0.25, 1.0, 1).unwrap();
    assert!(report.holds, "lhs {} rhs {}", report.lhs, report.rhs);
}

#[test]
fn single_bucket_single_row_layout_still_answers() {
    let stream = gen_synthetic(200, 4, 3).unwrap();
    let cfg = OursConfig {
        levels: 1,
        rows: 1,
        consensus: None,
        ..OursConfig::default()
    };
    let sketch = cfg.sketch(&stream, 1, 5).unwrap();
    assert_eq!(sketch.stack().shape(), StackShape::new(200, 1, 1).with_max_level(0));
    for q in [
        MomentQuery::top_k(4, 1.0, 0.25),
        MomentQuery::trimmed_k(4, 1.0, 0.25),
        MomentQuery::sum_above(10, 1.0, 0.25),
        MomentQuery::g_index(1.0, 0.25),
        MomentQuery::h_index(0.0, 0.25),
    ] {
        let r = sketch.query(&q).unwrap();
        assert!(r.value.is_finite() && r.value >= 0.0, "{:?}", r);
    }
}

#[test]
fn stream_files_merge_like_their_sketches() {
    let a = gen_synthetic(500, 5, 1).unwrap();
    let b = gen_synthetic(500, 5, 2).unwrap();
    let shape = StackShape::new(500, 3, 32);
    let seed = trimsketch::SketchSeed::new(11);
    let sketch = |s: &StreamFile| {
        let mut st = SubsampledSketchStack::new(shape, seed).unwrap();
        st.extend(s.updates.iter().copied()).unwrap();
        st
    };
    let mut merged = sketch(&a);
    merged.merge(&sketch(&b)).unwrap();
    let joined = StreamFile::new(500, a.max_magnitude + b.max_magnitude, [a.updates.clone(), b.updates.clone()].concat()).unwrap();
    let reread = StreamFile::read_from(joined.render().as_bytes()).unwrap();
    assert_eq!(merged.to_bytes(), sketch(&reread).to_bytes());
}
