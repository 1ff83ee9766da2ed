//! Conversion of Flickr30k Entities annotations (`Sentences/<id>.txt`,
//! `Annotations/<id>.xml`) into queries.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{Category, GtMerge, Query};
use crate::geometry::{union_box, BoundingBox, ImageSize};

/// One bracketed phrase of an annotated sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseMention {
    pub entity: String,
    pub types: Vec<String>,
    pub text: String,
}

/// Extracts `[/EN#<id>/<type>[/<type>...] <text>]` mentions from one line.
pub fn parse_sentence(line: &str) -> Result<Vec<PhraseMention>> {
    let mut out = Vec::new();
    let mut rest = line;
    while let Some(start) = rest.find("[/EN#") {
        let after = &rest[start + 5..];
        let end = after
            .find(']')
            .ok_or_else(|| Error::Invalid(format!("unterminated phrase in `{line}`")))?;
        let inner = &after[..end];
        let (tag, text) = inner
            .split_once(' ')
            .ok_or_else(|| Error::Invalid(format!("phrase without text in `{line}`")))?;
        let mut parts = tag.split('/');
        let entity = parts.next().unwrap_or_default().to_owned();
        out.push(PhraseMention {
            entity,
            types: parts.map(str::to_owned).collect(),
            text: text.trim().to_owned(),
        });
        rest = &after[end + 1..];
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ImageAnnotation {
    pub size: Option<ImageSize>,
    /// Entity id to its boxes, already converted to exclusive maxima.
    pub boxes: HashMap<String, Vec<BoundingBox>>,
}

fn child_text<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Option<&'a str> {
    node.children().find(|c| c.has_tag_name(name)).and_then(|c| c.text())
}

/// Parses an annotation XML file. Coordinates there are inclusive, so one is
/// added to the maxima before clamping to the image.
pub fn parse_annotation(xml: &str) -> Result<ImageAnnotation> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| Error::Invalid(format!("annotation xml: {e}")))?;
    let root = doc.root_element();
    let num = |node: roxmltree::Node<'_, '_>, name: &str| -> Result<i64> {
        let t = child_text(node, name).ok_or_else(|| Error::Invalid(format!("missing <{name}>")))?;
        t.trim()
            .parse::<f64>()
            .map(|v| v.round() as i64)
            .map_err(|_| Error::Invalid(format!("<{name}> `{t}` is not a number")))
    };
    let size = match root.children().find(|c| c.has_tag_name("size")) {
        Some(s) => Some(ImageSize::new(num(s, "width")? as u32, num(s, "height")? as u32)?),
        None => None,
    };
    let mut ann = ImageAnnotation {
        size,
        ..ImageAnnotation::default()
    };
    for object in root.children().filter(|c| c.has_tag_name("object")) {
        let Some(bb) = object.children().find(|c| c.has_tag_name("bndbox")) else {
            continue;
        };
        let size = size.ok_or_else(|| Error::Invalid("boxes without an image <size>".into()))?;
        let Some(bbox) = BoundingBox::clamped(
            num(bb, "xmin")?,
            num(bb, "ymin")?,
            num(bb, "xmax")? + 1,
            num(bb, "ymax")? + 1,
            size,
        ) else {
            continue;
        };
        for name in object.children().filter(|c| c.has_tag_name("name")) {
            if let Some(id) = name.text() {
                ann.boxes.entry(id.trim().to_owned()).or_default().push(bbox);
            }
        }
    }
    Ok(ann)
}

/// Queries for every mention whose entity has at least one box, in sentence
/// order. Types outside the eight reporting categories are dropped.
pub fn image_queries(
    image_id: &str,
    sentences: &str,
    annotation: &ImageAnnotation,
    merge: GtMerge,
) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    for line in sentences.lines() {
        for mention in parse_sentence(line)? {
            let Some(boxes) = annotation.boxes.get(&mention.entity).filter(|b| !b.is_empty()) else {
                continue;
            };
            let size = annotation
                .size
                .ok_or_else(|| Error::Invalid(format!("image {image_id} has no size")))?;
            let mut categories: Vec<Category> = mention.types.iter().filter_map(|t| t.parse().ok()).collect();
            categories.dedup();
            out.push(Query {
                image_id: image_id.to_owned(),
                size,
                phrase: mention.text,
                gt: match merge {
                    GtMerge::Union => union_box(boxes)?,
                    GtMerge::First => boxes[0],
                },
                categories,
            });
        }
    }
    Ok(out)
}

/// Converts the images listed in `split` (one id per line) under a dataset
/// root holding `Sentences/` and `Annotations/`.
pub fn convert_split(root: &Path, split: &Path, merge: GtMerge) -> Result<Vec<Query>> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let ids = read(split)?;
    let mut out = Vec::new();
    for id in ids.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let sentences = read(&root.join("Sentences").join(format!("{id}.txt")))?;
        let annotation = parse_annotation(&read(&root.join("Annotations").join(format!("{id}.xml")))?)?;
        out.extend(image_queries(id, &sentences, &annotation, merge)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const XML: &str = r#"<annotation>
  <filename>1.jpg</filename>
  <size><width>100</width><height>80</height><depth>3</depth></size>
  <object><name>10</name><bndbox><xmin>0</xmin><ymin>0</ymin><xmax>9</xmax><ymax>19</ymax></bndbox></object>
  <object><name>10</name><name>12</name><bndbox><xmin>50</xmin><ymin>50</ymin><xmax>99</xmax><ymax>79</ymax></bndbox></object>
  <object><name>11</name><nobndbox>1</nobndbox></object>
  <object><name>13</name><scene>1</scene></object>
</annotation>"#;

    #[test]
    fn sentence_mentions() {
        let m = parse_sentence("[/EN#10/people A man] in [/EN#12/clothing/other a red hat] runs .").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].entity, "10");
        assert_eq!(m[1].types, ["clothing", "other"]);
        assert_eq!(m[1].text, "a red hat");
        assert!(parse_sentence("[/EN#10/people A man").is_err());
    }

    #[test]
    fn annotation_boxes_are_exclusive() {
        let a = parse_annotation(XML).unwrap();
        assert_eq!(a.size, Some(ImageSize::new(100, 80).unwrap()));
        assert_eq!(a.boxes["10"].len(), 2);
        assert_eq!(a.boxes["10"][0], BoundingBox::new(0, 0, 10, 20).unwrap());
        assert_eq!(a.boxes["12"][0], BoundingBox::new(50, 50, 100, 80).unwrap());
        assert!(!a.boxes.contains_key("11"));
    }

    #[test]
    fn queries_skip_boxless_entities() {
        let a = parse_annotation(XML).unwrap();
        let s = "[/EN#10/people Two men] near [/EN#11/other a wall] and [/EN#13/scene a street] .\n\
                 [/EN#12/clothing/other A red hat] .";
        let q = image_queries("1", s, &a, GtMerge::Union).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].gt, BoundingBox::new(0, 0, 100, 80).unwrap());
        assert_eq!(q[1].categories, [Category::Clothing, Category::Other]);
        let q = image_queries("1", s, &a, GtMerge::First).unwrap();
        assert_eq!(q[0].gt, BoundingBox::new(0, 0, 10, 20).unwrap());
    }
}
