//! From ranked concepts to one predicted box.
//!
//! The four instance strategies (`random`, `largest`, `confidence`, `union`)
//! pick among the instances of the best-ranked concept. `consensus` lets the
//! top concepts vote: every pixel receives the sum of the similarity scores of
//! the concepts with an instance covering it, and the prediction is taken from
//! the instances covering the best-voted pixels.
//!
//! The vote field is stored on the grid induced by the instances' box edges.
//! Inside one cell of that grid every pixel is covered by exactly the same
//! boxes, so the cell value equals every pixel value.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::concepts::ScoredConcept;
use crate::detection::{ConceptGroup, Detection};
use crate::error::{Error, Result};
use crate::geometry::{union_box, BoundingBox, ImageSize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Random,
    Largest,
    Confidence,
    Union,
    Consensus,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::Largest,
        Strategy::Confidence,
        Strategy::Union,
        Strategy::Consensus,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Largest => "largest",
            Strategy::Confidence => "confidence",
            Strategy::Union => "union",
            Strategy::Consensus => "consensus",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusConfig {
    pub top_k: usize,
    pub similarity_threshold: f64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            similarity_threshold: 0.6,
        }
    }
}

impl ConsensusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Invalid("consensus top-k must be at least 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::Invalid(format!(
                "consensus threshold {} outside [-1, 1]",
                self.similarity_threshold
            )));
        }
        Ok(())
    }
}

/// Why a prediction did not come from the requested strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    /// Nothing to localize against: no resolvable query word or no concepts.
    WholeImage,
    /// No concept reached the consensus threshold; union over the top concept.
    ConsensusToUnion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub bbox: BoundingBox,
    pub concept: Option<String>,
    pub score: Option<f64>,
    pub fallback: Option<Fallback>,
}

impl Localization {
    pub fn whole_image(size: ImageSize) -> Self {
        Self {
            bbox: size.whole(),
            concept: None,
            score: None,
            fallback: Some(Fallback::WholeImage),
        }
    }
}

/// Per-query generator seed, independent of processing order.
pub fn query_seed(seed: u64, image_id: &str, query_index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((image_id.len() as u64).to_le_bytes());
    h.update(image_id.as_bytes());
    h.update((query_index as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Uniform pick from a generator seeded with `seed`.
pub fn strategy_random(instances: &[Detection], seed: u64) -> BoundingBox {
    assert!(!instances.is_empty(), "strategy_random needs at least one instance");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    instances[rng.random_range(0..instances.len())].bbox
}

fn corner_order(a: &BoundingBox, b: &BoundingBox) -> Ordering {
    (a.x_min(), a.y_min(), a.x_max(), a.y_max()).cmp(&(b.x_min(), b.y_min(), b.x_max(), b.y_max()))
}

/// Largest area; ties by higher confidence, then top-left corner.
pub fn strategy_largest(instances: &[Detection]) -> BoundingBox {
    instances
        .iter()
        .min_by(|a, b| {
            b.bbox
                .area()
                .cmp(&a.bbox.area())
                .then_with(|| b.confidence.total_cmp(&a.confidence))
                .then_with(|| corner_order(&a.bbox, &b.bbox))
        })
        .expect("strategy_largest needs at least one instance")
        .bbox
}

/// Highest confidence; ties by larger area, then top-left corner.
pub fn strategy_confidence(instances: &[Detection]) -> BoundingBox {
    instances
        .iter()
        .min_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then_with(|| b.bbox.area().cmp(&a.bbox.area()))
                .then_with(|| corner_order(&a.bbox, &b.bbox))
        })
        .expect("strategy_confidence needs at least one instance")
        .bbox
}

pub fn strategy_union(instances: &[Detection]) -> BoundingBox {
    let boxes: Vec<BoundingBox> = instances.iter().map(|d| d.bbox).collect();
    union_box(&boxes).expect("strategy_union needs at least one instance")
}

fn pick_instance(instances: &[Detection], strategy: Strategy, seed: u64) -> BoundingBox {
    match strategy {
        Strategy::Random => strategy_random(instances, seed),
        Strategy::Largest => strategy_largest(instances),
        Strategy::Confidence => strategy_confidence(instances),
        Strategy::Union | Strategy::Consensus => strategy_union(instances),
    }
}

/// Predicts a box from concepts ranked best first. Falls back to the whole
/// image when there is nothing to rank.
pub fn localize(
    scored: &[ScoredConcept<'_>],
    strategy: Strategy,
    size: ImageSize,
    config: &ConsensusConfig,
    seed: u64,
) -> Localization {
    let Some(top) = scored.first() else {
        return Localization::whole_image(size);
    };
    if strategy == Strategy::Consensus {
        return strategy_consensus(scored, size, config);
    }
    Localization {
        bbox: pick_instance(&top.group.instances, strategy, seed),
        concept: Some(top.group.label.clone()),
        score: Some(top.score),
        fallback: None,
    }
}

/// Applies an instance strategy to every detection in the image, ignoring
/// the query. Consensus needs similarity scores and is rejected.
pub fn localize_unfiltered(
    groups: &[ConceptGroup],
    strategy: Strategy,
    size: ImageSize,
    seed: u64,
) -> Result<Localization> {
    if strategy == Strategy::Consensus {
        return Err(Error::Invalid("consensus requires a similarity mode".into()));
    }
    let pooled: Vec<Detection> = groups.iter().flat_map(|g| g.instances.iter().cloned()).collect();
    if pooled.is_empty() {
        return Ok(Localization::whole_image(size));
    }
    let bbox = pick_instance(&pooled, strategy, seed);
    let concept = match strategy {
        Strategy::Union => None,
        _ => pooled.iter().find(|d| d.bbox == bbox).map(|d| d.label.key()),
    };
    Ok(Localization {
        bbox,
        concept,
        score: None,
        fallback: None,
    })
}

/// Weighted vote over the grid induced by box edges.
#[derive(Debug, Clone)]
pub struct VoteField {
    x_cuts: Vec<u32>,
    y_cuts: Vec<u32>,
    /// Row-major over cells: `values[j * (x_cuts.len() - 1) + i]`.
    values: Vec<f64>,
    /// `(concept, instance)` index pairs covering each cell.
    contributing: Vec<Vec<(usize, usize)>>,
}

impl VoteField {
    pub fn x_cuts(&self) -> &[u32] {
        &self.x_cuts
    }

    pub fn y_cuts(&self) -> &[u32] {
        &self.y_cuts
    }

    fn columns(&self) -> usize {
        self.x_cuts.len() - 1
    }

    fn cell_of(&self, x: u32, y: u32) -> Option<usize> {
        let i = self.x_cuts.partition_point(|&c| c <= x).checked_sub(1)?;
        let j = self.y_cuts.partition_point(|&c| c <= y).checked_sub(1)?;
        (i < self.columns() && j + 1 < self.y_cuts.len()).then(|| j * self.columns() + i)
    }

    /// Vote at pixel `(x, y)`; zero outside the image.
    pub fn value_at(&self, x: u32, y: u32) -> f64 {
        self.cell_of(x, y).map_or(0.0, |c| self.values[c])
    }

    pub fn contributors_at(&self, x: u32, y: u32) -> &[(usize, usize)] {
        self.cell_of(x, y).map_or(&[], |c| &self.contributing[c])
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    /// Highest vote over cells covered by at least one instance, with the
    /// indices of the cells holding it.
    pub fn max_cells(&self) -> Option<(f64, Vec<usize>)> {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for (c, &v) in self.values.iter().enumerate() {
            if self.contributing[c].is_empty() {
                continue;
            }
            match &mut best {
                Some((b, cells)) if v == *b => cells.push(c),
                Some((b, _)) if v < *b => {}
                _ => best = Some((v, vec![c])),
            }
        }
        best
    }
}

fn cuts(size: u32, edges: impl Iterator<Item = u32>) -> Vec<u32> {
    let mut v: Vec<u32> = std::iter::once(0)
        .chain(std::iter::once(size))
        .chain(edges.map(|e| e.min(size)))
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Builds the field for `concepts`, which the caller has already restricted
/// to the voting set. Each concept adds its score once per covered cell, no
/// matter how many of its instances overlap there.
pub fn build_vote_field(concepts: &[ScoredConcept<'_>], size: ImageSize) -> VoteField {
    let boxes = || concepts.iter().flat_map(|c| c.group.instances.iter().map(|d| d.bbox));
    let x_cuts = cuts(size.width, boxes().flat_map(|b| [b.x_min(), b.x_max()]));
    let y_cuts = cuts(size.height, boxes().flat_map(|b| [b.y_min(), b.y_max()]));
    let (cols, rows) = (x_cuts.len() - 1, y_cuts.len() - 1);

    let mut values = vec![0.0; cols * rows];
    let mut contributing = vec![Vec::new(); cols * rows];
    for (ci, concept) in concepts.iter().enumerate() {
        let mut covered = vec![false; cols * rows];
        for (ii, inst) in concept.group.instances.iter().enumerate() {
            let b = inst.bbox;
            // cut lists contain every box edge, so these are exact indices
            let i0 = x_cuts.partition_point(|&c| c < b.x_min());
            let i1 = x_cuts.partition_point(|&c| c < b.x_max().min(size.width));
            let j0 = y_cuts.partition_point(|&c| c < b.y_min());
            let j1 = y_cuts.partition_point(|&c| c < b.y_max().min(size.height));
            for j in j0..j1 {
                for i in i0..i1 {
                    let cell = j * cols + i;
                    covered[cell] = true;
                    contributing[cell].push((ci, ii));
                }
            }
        }
        for (v, _) in values.iter_mut().zip(&covered).filter(|(_, &c)| c) {
            *v += concept.score;
        }
    }
    VoteField {
        x_cuts,
        y_cuts,
        values,
        contributing,
    }
}

/// The voting set: up to `top_k` best concepts scoring at least the threshold.
pub fn voting_concepts<'a, 'g>(scored: &'a [ScoredConcept<'g>], config: &ConsensusConfig) -> &'a [ScoredConcept<'g>] {
    let n = scored
        .iter()
        .take(config.top_k)
        .take_while(|c| c.score >= config.similarity_threshold)
        .count();
    &scored[..n]
}

pub fn strategy_consensus(scored: &[ScoredConcept<'_>], size: ImageSize, config: &ConsensusConfig) -> Localization {
    let Some(top) = scored.first() else {
        return Localization::whole_image(size);
    };
    let voters = voting_concepts(scored, config);
    if voters.is_empty() {
        log::debug!(
            "no concept reaches consensus threshold {}; using union of `{}`",
            config.similarity_threshold,
            top.group.label
        );
        return Localization {
            bbox: strategy_union(&top.group.instances),
            concept: Some(top.group.label.clone()),
            score: Some(top.score),
            fallback: Some(Fallback::ConsensusToUnion),
        };
    }

    let field = build_vote_field(voters, size);
    let (_, cells) = field.max_cells().expect("voting concepts have instances");
    let mut winners: Vec<(usize, usize)> = cells
        .iter()
        .flat_map(|&c| field.contributing[c].iter().copied())
        .collect();
    winners.sort_unstable();
    winners.dedup();

    let best = winners
        .iter()
        .map(|&(ci, _)| voters[ci].score)
        .fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<(usize, usize)> = winners
        .into_iter()
        .filter(|&(ci, _)| voters[ci].score == best)
        .collect();
    let boxes: Vec<BoundingBox> = tied
        .iter()
        .map(|&(ci, ii)| voters[ci].group.instances[ii].bbox)
        .collect();
    let lead = &voters[tied[0].0];
    Localization {
        bbox: union_box(&boxes).expect("at least one winning instance"),
        concept: Some(lead.group.label.clone()),
        score: Some(lead.score),
        fallback: None,
    }
}
