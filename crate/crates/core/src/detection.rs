//! Detector dumps: loading, confidence thresholds, category subsets, scene
//! classifier boxes and grouping into concepts.
//!
//! A dump is a JSON list of per-image records:
//!
//! ```json
//! [{"image_id": "1000", "width": 500, "height": 375, "detector_id": "tfcoco",
//!   "detections": [{"label": "person", "box": [10, 20, 110, 300], "confidence": 0.93},
//!                  {"synset": ["car", "automobile"], "box": [0, 0, 5, 5], "confidence": 0.4}]}]
//! ```
//!
//! `detector_id` may be omitted when the caller names the detector. Scene
//! classifier records omit `box`; their scores are kept aside until
//! [`places_to_boxes`] turns them into whole-image detections.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::embedding::{label_vector, synset_vector, EmbeddingTable, PhraseVector};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ImageSize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorId {
    Tfcoco,
    Tfcoco20,
    Tfoid,
    Places365,
    Yolo9000,
    Colour,
}

impl DetectorId {
    pub const ALL: [DetectorId; 6] = [
        DetectorId::Tfcoco,
        DetectorId::Tfcoco20,
        DetectorId::Tfoid,
        DetectorId::Places365,
        DetectorId::Yolo9000,
        DetectorId::Colour,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorId::Tfcoco => "tfcoco",
            DetectorId::Tfcoco20 => "tfcoco20",
            DetectorId::Tfoid => "tfoid",
            DetectorId::Places365 => "places365",
            DetectorId::Yolo9000 => "yolo9000",
            DetectorId::Colour => "colour",
        }
    }
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tfcoco" | "cc" => Ok(DetectorId::Tfcoco),
            "tfcoco20" | "20" => Ok(DetectorId::Tfcoco20),
            "tfoid" | "oi" => Ok(DetectorId::Tfoid),
            "places365" | "pl" => Ok(DetectorId::Places365),
            "yolo9000" => Ok(DetectorId::Yolo9000),
            "colour" | "color" | "cl" => Ok(DetectorId::Colour),
            _ => Err(Error::UnknownDetector(s.to_owned())),
        }
    }
}

/// The 20 PASCAL VOC classes under their MS COCO label names.
pub const VOC20_COCO_LABELS: [&str; 20] = [
    "airplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "dining table",
    "dog",
    "horse",
    "motorcycle",
    "person",
    "potted plant",
    "sheep",
    "couch",
    "train",
    "tv",
];

/// A detector's category: a plain label, or a WordNet synset given as its
/// list of terms.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConceptLabel {
    Plain(String),
    Synset(Vec<String>),
}

impl ConceptLabel {
    /// Grouping key. Plain labels are lowercased with whitespace collapsed so
    /// that `Person` and `person` from different detectors share a concept.
    pub fn key(&self) -> String {
        match self {
            ConceptLabel::Plain(s) => s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase(),
            ConceptLabel::Synset(terms) => terms.join(", "),
        }
    }

    pub fn vector(&self, table: &EmbeddingTable) -> PhraseVector {
        match self {
            ConceptLabel::Plain(s) => label_vector(table, s),
            ConceptLabel::Synset(terms) => synset_vector(table, terms),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: ConceptLabel,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub detector: DetectorId,
}

/// Boxless classifier output awaiting [`places_to_boxes`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneScore {
    pub label: ConceptLabel,
    pub confidence: f64,
    pub detector: DetectorId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDetections {
    pub image_id: String,
    pub size: ImageSize,
    pub detections: Vec<Detection>,
    pub scene_scores: Vec<SceneScore>,
}

impl ImageDetections {
    pub fn new(image_id: impl Into<String>, size: ImageSize) -> Self {
        Self {
            image_id: image_id.into(),
            size,
            detections: Vec::new(),
            scene_scores: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DetectionDump {
    pub images: Vec<ImageDetections>,
    /// Detections discarded because nothing of their box lay inside the image.
    pub dropped: usize,
}

pub fn load_detections(path: impl AsRef<Path>, detector: Option<DetectorId>) -> Result<DetectionDump> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dump = parse_detections(&text, detector)?;
    if dump.dropped > 0 {
        log::warn!(
            "{}: dropped {} detections with no area inside the image",
            path.display(),
            dump.dropped
        );
    }
    Ok(dump)
}

pub fn parse_detections(text: &str, detector: Option<DetectorId>) -> Result<DetectionDump> {
    let root: Value = serde_json::from_str(text)?;
    let records = root.as_array().ok_or_else(|| Error::Schema {
        image_id: String::new(),
        path: "$".into(),
        message: "expected a list of image records".into(),
    })?;
    let mut dump = DetectionDump::default();
    for (i, record) in records.iter().enumerate() {
        let image = parse_image(record, i, detector, &mut dump.dropped)?;
        dump.images.push(image);
    }
    Ok(dump)
}

fn parse_image(record: &Value, index: usize, hint: Option<DetectorId>, dropped: &mut usize) -> Result<ImageDetections> {
    let here = format!("[{index}]");
    let obj = record.as_object().ok_or_else(|| Error::Schema {
        image_id: String::new(),
        path: here.clone(),
        message: "expected an object".into(),
    })?;
    let image_id = match obj.get("image_id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => {
            return Err(Error::Schema {
                image_id: String::new(),
                path: format!("{here}.image_id"),
                message: "missing or not a string".into(),
            })
        }
    };
    let schema = |path: String, message: &str| Error::Schema {
        image_id: image_id.clone(),
        path,
        message: message.into(),
    };

    let dim = |field: &str| -> Result<u32> {
        obj.get(field)
            .and_then(Value::as_u64)
            .and_then(|v| u32::try_from(v).ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| schema(format!("{here}.{field}"), "missing or not a positive integer"))
    };
    let size = ImageSize::new(dim("width")?, dim("height")?)?;

    let detector = match (obj.get("detector_id"), hint) {
        (Some(Value::String(s)), hint) => {
            let id: DetectorId = s.parse()?;
            if let Some(h) = hint.filter(|&h| h != id) {
                return Err(Error::Invalid(format!(
                    "image {image_id}: file declares detector {id} but {h} was requested"
                )));
            }
            id
        }
        (Some(_), _) => return Err(schema(format!("{here}.detector_id"), "not a string")),
        (None, Some(h)) => h,
        (None, None) => return Err(schema(format!("{here}.detector_id"), "missing")),
    };

    let dets = obj
        .get("detections")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(format!("{here}.detections"), "missing or not a list"))?;

    let mut image = ImageDetections::new(image_id.clone(), size);
    for (j, det) in dets.iter().enumerate() {
        let path = format!("{here}.detections[{j}]");
        let det = det
            .as_object()
            .ok_or_else(|| schema(path.clone(), "expected an object"))?;
        let label = parse_label(det).map_err(|m| schema(path.clone(), m))?;
        let confidence = det
            .get("confidence")
            .and_then(Value::as_f64)
            .ok_or_else(|| schema(format!("{path}.confidence"), "missing or not a number"))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(schema(format!("{path}.confidence"), "outside [0, 1]"));
        }
        match det.get("box") {
            None | Some(Value::Null) if detector == DetectorId::Places365 => {
                image.scene_scores.push(SceneScore {
                    label,
                    confidence,
                    detector,
                });
            }
            None | Some(Value::Null) => return Err(schema(format!("{path}.box"), "missing")),
            Some(raw) => {
                let coords = parse_coords(raw)
                    .ok_or_else(|| schema(format!("{path}.box"), "expected [x_min, y_min, x_max, y_max]"))?;
                match BoundingBox::clamped(coords[0], coords[1], coords[2], coords[3], size) {
                    Some(bbox) => image.detections.push(Detection {
                        label,
                        bbox,
                        confidence,
                        detector,
                    }),
                    None => *dropped += 1,
                }
            }
        }
    }
    Ok(image)
}

fn parse_label(det: &Map<String, Value>) -> std::result::Result<ConceptLabel, &'static str> {
    if let Some(label) = det.get("label") {
        return match label.as_str() {
            Some(s) if !s.trim().is_empty() => Ok(ConceptLabel::Plain(s.to_owned())),
            _ => Err("label must be a nonempty string"),
        };
    }
    match det.get("synset").and_then(Value::as_array) {
        Some(terms) if !terms.is_empty() => terms
            .iter()
            .map(|t| t.as_str().map(str::to_owned).ok_or("synset terms must be strings"))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(ConceptLabel::Synset),
        _ => Err("needs `label` or a nonempty `synset`"),
    }
}

fn parse_coords(raw: &Value) -> Option<[i64; 4]> {
    let arr = raw.as_array().filter(|a| a.len() == 4)?;
    let mut out = [0i64; 4];
    for (slot, v) in out.iter_mut().zip(arr) {
        let f = v.as_f64().filter(|f| f.is_finite())?;
        *slot = f.round() as i64;
    }
    Some(out)
}

/// Serializes detections back into the dump schema.
pub fn to_json(images: &[ImageDetections]) -> Value {
    let records: Vec<Value> = images
        .iter()
        .map(|img| {
            let dets: Vec<Value> = img
                .detections
                .iter()
                .map(|d| {
                    let mut m = Map::new();
                    match &d.label {
                        ConceptLabel::Plain(s) => m.insert("label".into(), s.clone().into()),
                        ConceptLabel::Synset(t) => m.insert("synset".into(), t.clone().into()),
                    };
                    m.insert("box".into(), d.bbox.to_array().to_vec().into());
                    m.insert("confidence".into(), d.confidence.into());
                    Value::Object(m)
                })
                .collect();
            let detector = img
                .detections
                .first()
                .map(|d| d.detector)
                .or_else(|| img.scene_scores.first().map(|s| s.detector));
            let mut m = Map::new();
            m.insert("image_id".into(), img.image_id.clone().into());
            m.insert("width".into(), img.size.width.into());
            m.insert("height".into(), img.size.height.into());
            if let Some(d) = detector {
                m.insert("detector_id".into(), d.as_str().into());
            }
            m.insert("detections".into(), dets.into());
            Value::Object(m)
        })
        .collect();
    Value::Array(records)
}

/// Per-detector inclusive confidence floors. Detectors without an entry keep
/// everything.
#[derive(Debug, Clone, Default)]
pub struct Thresholds(HashMap<DetectorId, f64>);

impl Thresholds {
    pub fn new() -> Self {
        Self::default()
    }

    /// 0.1 for the two Faster R-CNN detectors and the COCO subset.
    pub fn standard() -> Self {
        let mut t = Self::new();
        t.set(DetectorId::Tfcoco, 0.1);
        t.set(DetectorId::Tfcoco20, 0.1);
        t.set(DetectorId::Tfoid, 0.1);
        t
    }

    pub fn set(&mut self, detector: DetectorId, threshold: f64) {
        self.0.insert(detector, threshold);
    }

    pub fn get(&self, detector: DetectorId) -> f64 {
        self.0.get(&detector).copied().unwrap_or(0.0)
    }
}

/// Keeps detections with `confidence >= threshold` for their detector.
pub fn threshold_confidence(dets: &ImageDetections, thresholds: &Thresholds) -> ImageDetections {
    ImageDetections {
        detections: dets
            .detections
            .iter()
            .filter(|d| d.confidence >= thresholds.get(d.detector))
            .cloned()
            .collect(),
        ..dets.clone()
    }
}

/// Normalizes labels for subset membership the same way concept keys are.
pub fn label_set<I, S>(labels: I) -> HashSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    labels
        .into_iter()
        .map(|l| ConceptLabel::Plain(l.as_ref().to_owned()).key())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Reads a category subset file: one label per line.
pub fn load_label_set(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(label_set(text.lines()))
}

/// Keeps detections whose label is in `allowed` (compare with [`label_set`]).
pub fn subset_categories(dets: &ImageDetections, allowed: &HashSet<String>) -> ImageDetections {
    ImageDetections {
        detections: dets
            .detections
            .iter()
            .filter(|d| allowed.contains(&d.label.key()))
            .cloned()
            .collect(),
        ..dets.clone()
    }
}

/// Whole-image detections for the `top_k` most confident scene labels that
/// reach `min_conf`.
pub fn places_to_boxes(scores: &[SceneScore], size: ImageSize, top_k: usize, min_conf: f64) -> Vec<Detection> {
    let mut ranked: Vec<&SceneScore> = scores.iter().filter(|s| s.confidence >= min_conf).collect();
    ranked.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.label.cmp(&b.label))
    });
    ranked
        .into_iter()
        .take(top_k)
        .map(|s| Detection {
            label: s.label.clone(),
            bbox: size.whole(),
            confidence: s.confidence,
            detector: s.detector,
        })
        .collect()
}

/// All detected instances of one concept in an image.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptGroup {
    pub label: String,
    pub vector: PhraseVector,
    pub instances: Vec<Detection>,
}

impl ConceptGroup {
    /// False when the label has no embedding; such groups are never ranked.
    pub fn is_scoreable(&self) -> bool {
        !self.vector.is_missing()
    }
}

/// Groups detections by concept key, ordered by key.
pub fn build_concept_groups(dets: &ImageDetections, table: &EmbeddingTable) -> Vec<ConceptGroup> {
    let mut by_key: BTreeMap<String, (ConceptLabel, Vec<Detection>)> = BTreeMap::new();
    for d in &dets.detections {
        by_key
            .entry(d.label.key())
            .or_insert_with(|| (d.label.clone(), Vec::new()))
            .1
            .push(d.clone());
    }
    by_key
        .into_iter()
        .map(|(label, (concept, instances))| ConceptGroup {
            label,
            vector: concept.vector(table),
            instances,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn size() -> ImageSize {
        ImageSize::new(100, 80).unwrap()
    }

    fn det(label: &str, conf: f64) -> Detection {
        Detection {
            label: ConceptLabel::Plain(label.into()),
            bbox: BoundingBox::new(0, 0, 10, 10).unwrap(),
            confidence: conf,
            detector: DetectorId::Tfcoco,
        }
    }

    fn image(dets: Vec<Detection>) -> ImageDetections {
        ImageDetections {
            detections: dets,
            ..ImageDetections::new("img", size())
        }
    }

    const ONE_IMAGE: &str = r#"[{"image_id": "42", "width": 100, "height": 80, "detector_id": "tfcoco",
        "detections": [
            {"label": "person", "box": [10, 10, 50, 70], "confidence": 0.9},
            {"label": "dog", "box": [-5, 60, 40, 95.6], "confidence": 0.2}
        ]}]"#;

    #[test]
    fn loads_and_clamps() {
        let dump = parse_detections(ONE_IMAGE, None).unwrap();
        assert_eq!(dump.images.len(), 1);
        let img = &dump.images[0];
        assert_eq!(img.detections.len(), 2);
        assert_eq!(img.detections[1].bbox, BoundingBox::new(0, 60, 40, 80).unwrap());
        assert_eq!(dump.dropped, 0);
    }

    #[test]
    fn degenerate_box_is_dropped() {
        let text = r#"[{"image_id": "a", "width": 10, "height": 10, "detections": [
            {"label": "x", "box": [5, 0, 5, 4], "confidence": 0.5},
            {"label": "y", "box": [1, 1, 4, 4], "confidence": 0.5}]}]"#;
        let dump = parse_detections(text, Some(DetectorId::Tfoid)).unwrap();
        assert_eq!(dump.dropped, 1);
        assert_eq!(dump.images[0].detections.len(), 1);
        assert_eq!(dump.images[0].detections[0].detector, DetectorId::Tfoid);
    }

    #[test]
    fn schema_errors_name_field() {
        let text = r#"[{"image_id": "a7", "height": 10, "detections": []}]"#;
        match parse_detections(text, Some(DetectorId::Tfcoco)) {
            Err(Error::Schema { image_id, path, .. }) => {
                assert_eq!(image_id, "a7");
                assert!(path.ends_with("width"), "{path}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = r#"[{"image_id": "a", "width": 9, "height": 9, "detections": [{"label": "x", "confidence": 0.3}]}]"#;
        let err = parse_detections(text, Some(DetectorId::Tfcoco)).unwrap_err();
        assert!(err.to_string().contains("detections[0].box"), "{err}");
        let text = r#"[{"image_id": "a", "width": 9, "height": 9, "detections": []}]"#;
        assert!(parse_detections(text, None).is_err());
    }

    #[test]
    fn unknown_detector_is_an_error() {
        let text = r#"[{"image_id": "a", "width": 9, "height": 9, "detector_id": "rcnn", "detections": []}]"#;
        assert!(matches!(parse_detections(text, None), Err(Error::UnknownDetector(_))));
        let mismatch = r#"[{"image_id": "a", "width": 9, "height": 9, "detector_id": "tfoid", "detections": []}]"#;
        assert!(parse_detections(mismatch, Some(DetectorId::Tfcoco)).is_err());
    }

    #[test]
    fn scene_records_without_boxes() {
        let text = r#"[{"image_id": "s", "width": 30, "height": 20, "detector_id": "places365",
            "detections": [{"label": "beach", "confidence": 0.6}, {"label": "ocean", "confidence": 0.05}]}]"#;
        let dump = parse_detections(text, None).unwrap();
        let img = &dump.images[0];
        assert!(img.detections.is_empty());
        assert_eq!(img.scene_scores.len(), 2);
        let boxes = places_to_boxes(&img.scene_scores, img.size, 20, 0.1);
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].bbox, img.size.whole());
    }

    #[test]
    fn synset_labels() {
        let text = r#"[{"image_id": "y", "width": 30, "height": 20, "detector_id": "yolo9000",
            "detections": [{"synset": ["car", "automobile"], "box": [0, 0, 5, 5], "confidence": 0.3}]}]"#;
        let dump = parse_detections(text, None).unwrap();
        assert_eq!(
            dump.images[0].detections[0].label,
            ConceptLabel::Synset(vec!["car".into(), "automobile".into()])
        );
    }

    #[test]
    fn json_round_trip() {
        let dump = parse_detections(ONE_IMAGE, None).unwrap();
        let text = to_json(&dump.images).to_string();
        let again = parse_detections(&text, None).unwrap();
        assert_eq!(again.images, dump.images);
    }

    #[test]
    fn thresholds_are_inclusive() {
        let img = image(vec![det("a", 0.05), det("b", 0.11), det("c", 0.30), det("d", 0.1)]);
        let kept = threshold_confidence(&img, &Thresholds::standard());
        let labels: Vec<_> = kept.detections.iter().map(|d| d.label.key()).collect();
        assert_eq!(labels, ["b", "c", "d"]);
        assert!(threshold_confidence(&image(vec![]), &Thresholds::standard())
            .detections
            .is_empty());
    }

    #[test]
    fn category_subsets() {
        let img = image(vec![det("person", 0.5), det("giraffe", 0.5), det("Dining Table", 0.5)]);
        let voc = label_set(VOC20_COCO_LABELS);
        let kept = subset_categories(&img, &voc);
        assert_eq!(kept.detections.len(), 2);
        let all = label_set(["person", "giraffe", "dining table"]);
        assert_eq!(subset_categories(&img, &all), img);
        assert!(subset_categories(&img, &HashSet::new()).detections.is_empty());
    }

    #[test]
    fn places_keeps_top_k() {
        let scores: Vec<SceneScore> = (0..25)
            .map(|i| SceneScore {
                label: ConceptLabel::Plain(format!("scene{i:02}")),
                confidence: 0.1 + f64::from(i) * 0.01,
                detector: DetectorId::Places365,
            })
            .collect();
        let boxes = places_to_boxes(&scores, size(), 20, 0.1);
        assert_eq!(boxes.len(), 20);
        assert!(boxes.iter().all(|d| d.confidence >= 0.1 + 5.0 * 0.01 - 1e-12));
        let low: Vec<_> = scores
            .iter()
            .map(|s| SceneScore {
                confidence: 0.05,
                ..s.clone()
            })
            .collect();
        assert!(places_to_boxes(&low, size(), 20, 0.1).is_empty());
        assert_eq!(places_to_boxes(&scores[..3], size(), 20, 0.1).len(), 3);
    }

    #[test]
    fn grouping() {
        let table = EmbeddingTable::from_entries(
            2,
            [
                ("person", vec![1.0, 0.0]),
                ("car", vec![0.0, 1.0]),
                ("automobile", vec![0.0, 1.0]),
            ],
        )
        .unwrap();
        let mut img = image(vec![
            det("person", 0.5),
            det("Person", 0.7),
            det("car", 0.4),
            det("qzxv", 0.9),
        ]);
        img.detections.push(Detection {
            label: ConceptLabel::Synset(vec!["car".into(), "automobile".into()]),
            detector: DetectorId::Yolo9000,
            ..det("", 0.3)
        });
        let groups = build_concept_groups(&img, &table);
        let sizes: Vec<_> = groups.iter().map(|g| (g.label.as_str(), g.instances.len())).collect();
        assert_eq!(sizes, [("car", 1), ("car, automobile", 1), ("person", 2), ("qzxv", 1)]);
        assert!(!groups[3].is_scoreable());
        assert!(groups[1].is_scoreable());
        let total: usize = groups.iter().map(|g| g.instances.len()).sum();
        assert_eq!(total, img.detections.len());
    }

    #[test]
    fn detector_names() {
        for id in DetectorId::ALL {
            assert_eq!(id.as_str().parse::<DetectorId>().unwrap(), id);
        }
        assert_eq!("color".parse::<DetectorId>().unwrap(), DetectorId::Colour);
    }
}
