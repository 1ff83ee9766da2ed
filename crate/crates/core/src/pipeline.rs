//! End-to-end localization runs: merging detector dumps for a detector set,
//! predicting one box per query, and the prediction file format.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::concepts::{represent_query, score_concepts, QueryMode};
use crate::detection::{
    build_concept_groups, label_set, places_to_boxes, subset_categories, threshold_confidence, ConceptGroup,
    DetectionDump, DetectorId, ImageDetections, Thresholds, VOC20_COCO_LABELS,
};
use crate::embedding::{EmbeddingTable, OovFallback};
use crate::error::{Error, Result};
use crate::eval::{EvalRecord, Query};
use crate::geometry::{BoundingBox, ImageSize};
use crate::localize::{localize, localize_unfiltered, query_seed, ConsensusConfig, Fallback, Localization, Strategy};
use crate::spell::SpellCorrector;

/// Concept selection setting: a query aggregation mode, or no filtering at
/// all (every detection in the image is a candidate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Similarity {
    NoFilter,
    Mode(QueryMode),
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Similarity::NoFilter => f.write_str("no_filter"),
            Similarity::Mode(m) => m.fmt(f),
        }
    }
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace(['-', ' '], "_").as_str() {
            "no_filter" | "none" => Ok(Similarity::NoFilter),
            other => other.parse().map(Similarity::Mode),
        }
    }
}

/// Parses `tfcoco+tfoid`, `tfcoco,tfoid` or the short keys `CC+OI+PL+CL`.
pub fn parse_detector_set(s: &str) -> Result<Vec<DetectorId>> {
    let mut out: Vec<DetectorId> = s
        .split(['+', ','])
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err(Error::Invalid("empty detector set".into()));
    }
    Ok(out)
}

pub fn detector_set_name(detectors: &[DetectorId]) -> String {
    detectors.iter().map(DetectorId::as_str).collect::<Vec<_>>().join("+")
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub detectors: Vec<DetectorId>,
    pub similarity: Similarity,
    pub strategy: Strategy,
    pub consensus: ConsensusConfig,
    pub spell_correct: bool,
    pub seed: u64,
    pub thresholds: Thresholds,
    pub places_top_k: usize,
    pub places_min_conf: f64,
    /// Labels kept when deriving the 20-category COCO subset.
    pub subset20: HashSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            detectors: vec![DetectorId::Tfcoco],
            similarity: Similarity::Mode(QueryMode::Avg),
            strategy: Strategy::Union,
            consensus: ConsensusConfig::default(),
            spell_correct: true,
            seed: 0,
            thresholds: Thresholds::standard(),
            places_top_k: 20,
            places_min_conf: 0.1,
            subset20: label_set(VOC20_COCO_LABELS),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.detectors.is_empty() {
            return Err(Error::Invalid("no detectors selected".into()));
        }
        if self.strategy == Strategy::Consensus && self.similarity == Similarity::NoFilter {
            return Err(Error::Invalid("the consensus strategy needs a similarity mode".into()));
        }
        self.consensus.validate()
    }

    /// `detectors/similarity/strategy`, used as the report's config column.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}",
            detector_set_name(&self.detectors),
            self.similarity,
            self.strategy
        )
    }
}

/// Detections of the selected detectors, thresholded and merged per image.
#[derive(Debug, Clone, Default)]
pub struct DetectionIndex {
    images: BTreeMap<String, ImageDetections>,
}

impl DetectionIndex {
    /// Merges `dumps` for `config.detectors`. Dumps of other detectors are
    /// ignored, except that a `tfcoco` dump supplies `tfcoco20` when no
    /// dedicated dump is given.
    pub fn build(dumps: &[DetectionDump], config: &RunConfig) -> Result<Self> {
        let supplied: HashSet<DetectorId> = dumps
            .iter()
            .flat_map(|d| d.images.iter())
            .flat_map(|img| {
                img.detections
                    .iter()
                    .map(|d| d.detector)
                    .chain(img.scene_scores.iter().map(|s| s.detector))
            })
            .collect();
        let declared: HashSet<DetectorId> = dumps.iter().filter_map(dump_detector).collect();
        let have = |d: DetectorId| supplied.contains(&d) || declared.contains(&d);
        let derive20 = config.detectors.contains(&DetectorId::Tfcoco20) && !have(DetectorId::Tfcoco20);
        for &d in &config.detectors {
            let ok = have(d) || (d == DetectorId::Tfcoco20 && have(DetectorId::Tfcoco));
            if !ok && !dumps.is_empty() {
                log::warn!("no detections supplied for detector {d}");
            }
        }

        let mut index = DetectionIndex::default();
        for dump in dumps {
            for img in &dump.images {
                for (source, target) in [(None, None), (Some(DetectorId::Tfcoco), Some(DetectorId::Tfcoco20))] {
                    if source.is_some() && !derive20 {
                        continue;
                    }
                    let part = select(img, config, source, target);
                    index.merge(part)?;
                }
            }
        }
        Ok(index)
    }

    fn merge(&mut self, part: ImageDetections) -> Result<()> {
        match self.images.get_mut(&part.image_id) {
            Some(existing) => {
                if existing.size != part.size {
                    return Err(Error::Invalid(format!(
                        "image {}: sizes {}x{} and {}x{} disagree across dumps",
                        part.image_id, existing.size.width, existing.size.height, part.size.width, part.size.height
                    )));
                }
                existing.detections.extend(part.detections);
            }
            None => {
                self.images.insert(part.image_id.clone(), part);
            }
        }
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageDetections> {
        self.images.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn dump_detector(dump: &DetectionDump) -> Option<DetectorId> {
    dump.images.iter().find_map(|img| {
        img.detections
            .first()
            .map(|d| d.detector)
            .or_else(|| img.scene_scores.first().map(|s| s.detector))
    })
}

/// Detections of one dump image that belong to the run, with scene scores
/// turned into boxes. `source -> target` relabels a detector (tfcoco ->
/// tfcoco20) before selection.
fn select(
    img: &ImageDetections,
    config: &RunConfig,
    source: Option<DetectorId>,
    target: Option<DetectorId>,
) -> ImageDetections {
    let active = |d: DetectorId| config.detectors.contains(&d);
    let mut part = ImageDetections::new(img.image_id.clone(), img.size);
    for d in &img.detections {
        let mut d = d.clone();
        match (source, target) {
            (Some(s), Some(t)) if d.detector == s => d.detector = t,
            (Some(_), _) => continue,
            _ => {}
        }
        if active(d.detector) {
            part.detections.push(d);
        }
    }
    if source.is_none() {
        let scenes: Vec<_> = img
            .scene_scores
            .iter()
            .filter(|s| active(s.detector))
            .cloned()
            .collect();
        part.detections.extend(places_to_boxes(
            &scenes,
            img.size,
            config.places_top_k,
            config.places_min_conf,
        ));
    }
    let mut part = threshold_confidence(&part, &config.thresholds);
    if part.detections.iter().any(|d| d.detector == DetectorId::Tfcoco20) {
        let (coco20, rest): (Vec<_>, Vec<_>) = part
            .detections
            .into_iter()
            .partition(|d| d.detector == DetectorId::Tfcoco20);
        let kept = subset_categories(
            &ImageDetections {
                detections: coco20,
                ..ImageDetections::new(img.image_id.clone(), img.size)
            },
            &config.subset20,
        );
        part.detections = rest.into_iter().chain(kept.detections).collect();
    }
    part
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: String,
    pub query_index: usize,
    pub bbox: BoundingBox,
    pub concept: Option<String>,
    pub score: Option<f64>,
    pub strategy: String,
    /// Boxes the concept selection stage offered, for upperbounds.
    pub candidates: Vec<BoundingBox>,
}

/// Localizes queries against prepared detections.
pub struct Engine<'a> {
    table: Option<&'a EmbeddingTable>,
    config: &'a RunConfig,
    groups: HashMap<&'a str, (ImageSize, Vec<ConceptGroup>)>,
}

impl<'a> Engine<'a> {
    /// `table` may be omitted only for the no-filter setting.
    pub fn new(table: Option<&'a EmbeddingTable>, index: &'a DetectionIndex, config: &'a RunConfig) -> Result<Self> {
        config.validate()?;
        let empty;
        let table_ref = match (table, config.similarity) {
            (Some(t), _) => t,
            (None, Similarity::NoFilter) => {
                empty = EmbeddingTable::from_entries(1, [("", vec![0.0])])?;
                &empty
            }
            (None, Similarity::Mode(_)) => {
                return Err(Error::Invalid("similarity modes need an embedding table".into()))
            }
        };
        let groups = index
            .images
            .iter()
            .map(|(id, img)| (id.as_str(), (img.size, build_concept_groups(img, table_ref))))
            .collect();
        Ok(Self { table, config, groups })
    }

    pub fn predict(&self, query_index: usize, query: &Query) -> Prediction {
        let loc_and_candidates = self.localize(query_index, query);
        let (loc, mut candidates) = loc_and_candidates;
        if loc.fallback == Some(Fallback::WholeImage) {
            candidates = vec![loc.bbox];
        }
        Prediction {
            image_id: query.image_id.clone(),
            query_index,
            bbox: loc.bbox,
            concept: loc.concept,
            score: loc.score,
            strategy: self.config.strategy.to_string(),
            candidates,
        }
    }

    fn localize(&self, query_index: usize, query: &Query) -> (Localization, Vec<BoundingBox>) {
        let Some((size, groups)) = self.groups.get(query.image_id.as_str()) else {
            log::warn!("no detections for image {}; predicting the whole image", query.image_id);
            return (Localization::whole_image(query.size), Vec::new());
        };
        if *size != query.size {
            log::warn!(
                "image {}: query size {}x{} differs from detection size {}x{}",
                query.image_id,
                query.size.width,
                query.size.height,
                size.width,
                size.height
            );
        }
        let seed = query_seed(self.config.seed, &query.image_id, query_index);
        match self.config.similarity {
            Similarity::NoFilter => {
                let loc =
                    localize_unfiltered(groups, self.config.strategy, query.size, seed).expect("config validated");
                let candidates = groups.iter().flat_map(|g| g.instances.iter().map(|d| d.bbox)).collect();
                (loc, candidates)
            }
            Similarity::Mode(mode) => {
                let table = self.table.expect("checked in Engine::new");
                let corrector = SpellCorrector::new(table);
                let fallback: Option<&dyn OovFallback> = self.config.spell_correct.then_some(&corrector as _);
                let rep = represent_query(table, fallback, &query.phrase, mode);
                let scored = score_concepts(&rep, groups).unwrap_or_default();
                let loc = localize(&scored, self.config.strategy, query.size, &self.config.consensus, seed);
                let candidates = scored
                    .first()
                    .map(|top| top.group.instances.iter().map(|d| d.bbox).collect())
                    .unwrap_or_default();
                (loc, candidates)
            }
        }
    }

    /// Predictions for every query, in input order.
    pub fn run(&self, queries: &[Query]) -> Vec<Prediction> {
        queries
            .par_iter()
            .enumerate()
            .map(|(i, q)| self.predict(i, q))
            .collect()
    }
}

/// Whole-image predictions, needing neither detections nor embeddings.
pub fn whole_image_predictions(queries: &[Query]) -> Vec<Prediction> {
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| Prediction {
            image_id: q.image_id.clone(),
            query_index: i,
            bbox: q.size.whole(),
            concept: None,
            score: None,
            strategy: "whole_image".into(),
            candidates: vec![q.size.whole()],
        })
        .collect()
}

/// One line per prediction, no header: `image_id, query_index, x_min, y_min,
/// x_max, y_max, concept, score, strategy, candidates`. Candidates are
/// `;`-separated boxes; missing concept and score are empty fields.
pub fn write_predictions<W: Write>(mut w: W, predictions: &[Prediction]) -> std::io::Result<()> {
    for p in predictions {
        let b = p.bbox;
        let candidates: Vec<String> = p.candidates.iter().map(ToString::to_string).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.image_id,
            p.query_index,
            b.x_min(),
            b.y_min(),
            b.x_max(),
            b.y_max(),
            p.concept.as_deref().unwrap_or(""),
            p.score.map(|s| format!("{s:.6}")).unwrap_or_default(),
            p.strategy,
            candidates.join(";")
        )?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<predictions>", e))?;
        if line.trim().is_empty() || (i == 0 && line.starts_with("image_id\t")) {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 10 {
            return Err(Error::parse(line_no, format!("expected 10 fields, found {}", f.len())));
        }
        let bad = |what: &str| Error::parse(line_no, format!("invalid {what}"));
        let num = |s: &str, what: &str| s.parse::<u32>().map_err(|_| bad(what));
        let bbox = BoundingBox::new(
            num(f[2], "x_min")?,
            num(f[3], "y_min")?,
            num(f[4], "x_max")?,
            num(f[5], "y_max")?,
        )
        .map_err(|e| Error::parse(line_no, e.to_string()))?;
        let candidates = f[9]
            .split(';')
            .filter(|c| !c.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<BoundingBox>>>()
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        out.push(Prediction {
            image_id: f[0].to_owned(),
            query_index: f[1].parse().map_err(|_| bad("query_index"))?,
            bbox,
            concept: (!f[6].is_empty()).then(|| f[6].to_owned()),
            score: if f[7].is_empty() {
                None
            } else {
                Some(f[7].parse().map_err(|_| bad("score"))?)
            },
            strategy: f[8].to_owned(),
            candidates,
        });
    }
    Ok(out)
}

/// Pairs predictions with their queries by `query_index`.
pub fn score_predictions(queries: &[Query], predictions: &[Prediction]) -> Result<Vec<EvalRecord>> {
    if queries.len() != predictions.len() {
        return Err(Error::Invalid(format!(
            "{} queries but {} predictions",
            queries.len(),
            predictions.len()
        )));
    }
    let mut slots: Vec<Option<&Prediction>> = vec![None; queries.len()];
    for p in predictions {
        let slot = slots
            .get_mut(p.query_index)
            .ok_or_else(|| Error::Invalid(format!("prediction for unknown query {}", p.query_index)))?;
        if slot.replace(p).is_some() {
            return Err(Error::Invalid(format!(
                "duplicate prediction for query {}",
                p.query_index
            )));
        }
    }
    queries
        .iter()
        .zip(slots)
        .enumerate()
        .map(|(i, (q, p))| {
            let p = p.ok_or_else(|| Error::Invalid(format!("no prediction for query {i}")))?;
            if p.image_id != q.image_id {
                return Err(Error::Invalid(format!(
                    "query {i}: prediction is for image {} but query is on {}",
                    p.image_id, q.image_id
                )));
            }
            Ok(EvalRecord::new(q, p.bbox, p.candidates.clone()))
        })
        .collect()
}
