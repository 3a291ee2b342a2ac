use std::fs;

use scm_core::tensor_store::{read_annotations, read_tensor, write_annotations, write_tensor};
use scm_core::{Annotation, BBox, ScmError, Tensor};

#[test]
fn tensor_file_layout_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.scmt");
    let t = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 0.0, 3.25, -0.125]).unwrap();
    write_tensor(&path, &t).unwrap();

    let mut expected = b"SCMT".to_vec();
    expected.extend([1u8, 0, 2]);
    expected.extend(2u32.to_le_bytes());
    expected.extend(3u32.to_le_bytes());
    for v in t.data() {
        expected.extend(v.to_le_bytes());
    }
    assert_eq!(fs::read(&path).unwrap(), expected);
    assert_eq!(read_tensor(&path).unwrap(), t);
}

#[test]
fn every_rank_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    for dims in [vec![5], vec![2, 3], vec![2, 1, 3], vec![3, 3, 2, 2]] {
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|i| i as f32 * 0.75 - 3.0).collect();
        let t = Tensor::new(dims.clone(), data).unwrap();
        let path = dir.path().join(format!("r{}.scmt", dims.len()));
        write_tensor(&path, &t).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
    }
}

#[test]
fn damaged_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let good = Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap().to_bytes();
    let cases: Vec<(&str, Vec<u8>)> = vec![
        ("magic", [b"SCMX".as_slice(), &good[4..]].concat()),
        ("version", [&good[..4], &[2u8], &good[5..]].concat()),
        ("dtype", [&good[..5], &[1u8], &good[6..]].concat()),
        ("rank0", [&good[..6], &[0u8], &good[7..]].concat()),
        ("rank5", [&good[..6], &[5u8], &good[7..]].concat()),
        ("short", good[..good.len() - 1].to_vec()),
        ("long", [good.as_slice(), &[0u8]].concat()),
        ("header", good[..6].to_vec()),
    ];
    for (name, bytes) in cases {
        let path = dir.path().join(format!("{name}.scmt"));
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(ScmError::Format(_))), "{name}");
    }
}

#[test]
fn missing_file_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("absent.scmt");
    match read_tensor(&path) {
        Err(ScmError::Storage { path: p, .. }) => assert_eq!(p, path),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn annotations_round_trip_as_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.jsonl");
    let anns = vec![
        Annotation {
            image_id: "a".into(),
            image_width: 64,
            image_height: 48,
            class_label: 2,
            gt_boxes: vec![BBox::new(0, 0, 10, 12).unwrap(), BBox::new(30, 5, 64, 48).unwrap()],
        },
        Annotation {
            image_id: "b".into(),
            image_width: 8,
            image_height: 8,
            class_label: 0,
            gt_boxes: vec![BBox::new(1, 2, 3, 4).unwrap()],
        },
    ];
    write_annotations(&path, &anns).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with(
        r#"{"image_id":"a","width":64,"height":48,"label":2,"boxes":[[0,0,10,12],[30,5,64,48]]}"#
    ));
    assert_eq!(read_annotations(&path).unwrap(), anns);
}

#[test]
fn annotation_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.jsonl");
    let ok = r#"{"image_id":"a","width":8,"height":8,"label":0,"boxes":[[0,0,4,4]]}"#;
    fs::write(&path, format!("{ok}\n\n{{not json\n")).unwrap();
    assert!(matches!(read_annotations(&path), Err(ScmError::Parse { line: 3, .. })));

    let oob = r#"{"image_id":"b","width":8,"height":8,"label":0,"boxes":[[0,0,9,4]]}"#;
    fs::write(&path, format!("{ok}\n{oob}\n")).unwrap();
    match read_annotations(&path) {
        Err(ScmError::Validation(m)) => assert!(m.starts_with("line 2"), "{m}"),
        other => panic!("unexpected {other:?}"),
    }
}
