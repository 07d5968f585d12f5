use lwot::measures::{from_grid, Atom, AtomicMeasure, GriddedMeasure};
use lwot::skeleton::{validate, SkeletalRootMeasure, Strength};

#[test]
fn atoms_roundtrip_through_csv() {
    let mu = AtomicMeasure::new(
        2,
        vec![Atom::new(vec![0.1, -2.5], 0.0, 0.3), Atom::new(vec![1.0 / 3.0, 4.0], 1.5, 0.7)],
    )
    .unwrap();
    let mut buf = Vec::new();
    mu.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("x1,x2,y,w\n"));
    assert_eq!(AtomicMeasure::read_csv(buf.as_slice()).unwrap(), mu);
}

#[test]
fn malformed_csv_is_a_parse_error() {
    let err = AtomicMeasure::read_csv("x1,w,y\n0,1,1\n".as_bytes()).unwrap_err();
    assert_eq!(err.code(), "ParseError");
    let err = AtomicMeasure::read_csv("x1,y,w\n0,1,abc\n".as_bytes()).unwrap_err();
    assert_eq!(err.code(), "ParseError");
}

#[test]
fn grid_json_uses_nested_density() {
    let text = r#"{"axes": [[0, 1, 2]], "vertical_edges": [0, 0.5, 1], "density": [[0.5, 0.5], [0.25, 0.75]]}"#;
    let g = GriddedMeasure::read_json(text.as_bytes()).unwrap();
    assert_eq!(g.shape(), vec![2, 2]);
    assert!((g.total_mass() - 1.0).abs() < 1e-15);
    let back = GriddedMeasure::from_json_value(g.to_json_value()).unwrap();
    assert_eq!(back, g);
    let atoms = from_grid(&g).unwrap();
    assert_eq!(atoms.len(), 4);
    assert!((atoms.atoms()[0].y - 0.25).abs() < 1e-15);

    let bad = r#"{"axes": [[0, 1, 2]], "vertical_edges": [0, 1], "density": [[1, 1, 1]]}"#;
    assert_eq!(GriddedMeasure::read_json(bad.as_bytes()).unwrap_err().code(), "ParseError");
}

#[test]
fn skeleton_documents_roundtrip() {
    let text = r#"{
        "depth": 1,
        "limbs": [
            {"polyline": [[0, 0], [1, 0]], "density": [{"y_lo": 0, "y_hi": 1, "m": 0.5}]},
            {"polyline": [[0.5, 0], [1, 0.4]], "density": [{"y_lo": 0.5, "y_hi": 1, "m": 1.0}], "parent": 0, "attach_y": 0.5}
        ],
        "bounds": [0.5, 1.5]
    }"#;
    let skm = SkeletalRootMeasure::read_json(text.as_bytes()).unwrap();
    assert_eq!(validate(&skm).strength, Strength::Strong);
    let back = SkeletalRootMeasure::from_json_value(skm.to_json_value()).unwrap();
    assert_eq!(back, skm);

    let unnormalized = text.replace("\"m\": 1.0", "\"m\": 2.0");
    let err = SkeletalRootMeasure::read_json(unnormalized.as_bytes()).unwrap_err();
    assert_eq!(err.code(), "NotProbability");
}
