use std::io::Write;

use groundcast::detection::{load_detections, to_json, DetectorId};
use groundcast::{EmbeddingTable, Error};

#[test]
fn dump_round_trips_through_a_file() {
    let text = r#"[{"image_id": "42", "width": 640, "height": 480, "detector_id": "tfoid", "detections": [
        {"label": "Human face", "box": [10.4, 20.6, 110, 220], "confidence": 0.8},
        {"label": "Tree", "box": [-5, -5, 900, 700], "confidence": 0.3}]}]"#;
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    let dump = load_detections(f.path(), None).unwrap();
    let img = &dump.images[0];
    assert_eq!(img.detections[0].bbox.to_array(), [10, 21, 110, 220]);
    assert_eq!(img.detections[1].bbox.to_array(), [0, 0, 640, 480]);
    assert_eq!(img.detections[0].detector, DetectorId::Tfoid);

    let mut g = tempfile::NamedTempFile::new().unwrap();
    g.write_all(to_json(&dump.images).to_string().as_bytes()).unwrap();
    assert_eq!(
        load_detections(g.path(), Some(DetectorId::Tfoid)).unwrap().images,
        dump.images
    );
}

#[test]
fn schema_errors_name_the_field() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(br#"[{"image_id": "1", "width": 5, "height": 5, "detections": [{"label": "x", "box": [0, 0, 1], "confidence": 1}]}]"#)
        .unwrap();
    let err = load_detections(f.path(), Some(DetectorId::Tfcoco)).unwrap_err();
    assert!(matches!(err, Error::Schema { .. }), "{err}");
    assert!(err.to_string().contains("detections[0]"), "{err}");
}

#[test]
fn missing_files_report_their_path() {
    let err = load_detections("/nonexistent/dets.json", None).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/dets.json"));
    let err = EmbeddingTable::load("/nonexistent/vectors.txt").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

#[test]
fn embedding_file_with_header() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(b"3 2\ndog 1 0\nScotch_whiskey 0 1\ncat 0.5 0.5\n").unwrap();
    let t = EmbeddingTable::load(f.path()).unwrap();
    assert_eq!(t.len(), 3);
    assert_eq!(t.frequency("dog"), Some(3));
    assert_eq!(t.lookup("scotch_whiskey").unwrap().0, "Scotch_whiskey");
}
