//! Accuracy, candidate upperbounds and per-category reports.
//!
//! A prediction is correct when its IoU with the ground truth is at least
//! 0.5. The upperbound asks the same of the best box among the candidates the
//! concept selection stage produced, optionally adding their enclosing box.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use crate::colour::ColourTerm;
use crate::error::{Error, Result};
use crate::geometry::{iou, union_box, BoundingBox, ImageSize};
use crate::text::tokenize;

pub const IOU_THRESHOLD: f64 = 0.5;

/// Phrase types of the Flickr30k Entities annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    People,
    Clothing,
    Bodyparts,
    Animals,
    Vehicles,
    Instruments,
    Scene,
    Other,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::People,
        Category::Clothing,
        Category::Bodyparts,
        Category::Animals,
        Category::Vehicles,
        Category::Instruments,
        Category::Scene,
        Category::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::People => "people",
            Category::Clothing => "clothing",
            Category::Bodyparts => "bodyparts",
            Category::Animals => "animals",
            Category::Vehicles => "vehicles",
            Category::Instruments => "instruments",
            Category::Scene => "scene",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| Error::UnknownCategory(s.to_owned()))
    }
}

/// How several ground-truth boxes of one phrase become one box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GtMerge {
    /// Enclosing box of all of them.
    #[default]
    Union,
    /// The first box listed.
    First,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub image_id: String,
    pub size: ImageSize,
    pub phrase: String,
    pub gt: BoundingBox,
    /// A phrase may carry several types; empty means uncategorized.
    pub categories: Vec<Category>,
}

impl Query {
    /// Categories used for reporting: uncategorized queries count as `other`.
    pub fn report_categories(&self) -> Vec<Category> {
        if self.categories.is_empty() {
            vec![Category::Other]
        } else {
            self.categories.clone()
        }
    }
}

/// Reads the query TSV: `image_id, width, height, phrase, category, gt boxes`.
/// Categories are `|`-separated; boxes are `;`-separated
/// `x_min,y_min,x_max,y_max` tuples. A first line starting with `image_id` is
/// treated as a header.
pub fn read_queries<R: BufRead>(reader: R, merge: GtMerge) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<queries>", e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || (i == 0 && line.starts_with("image_id\t")) {
            continue;
        }
        out.push(parse_query_line(line, merge).map_err(|e| Error::parse(line_no, e.to_string()))?);
    }
    Ok(out)
}

pub fn load_queries(path: impl AsRef<Path>, merge: GtMerge) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_queries(BufReader::new(file), merge)
}

fn parse_query_line(line: &str, merge: GtMerge) -> Result<Query> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 {
        return Err(Error::Invalid(format!(
            "expected 6 tab-separated fields, found {}",
            fields.len()
        )));
    }
    let dim = |s: &str, name: &str| {
        s.trim()
            .parse::<u32>()
            .map_err(|_| Error::Invalid(format!("{name} `{s}` is not an integer")))
    };
    let size = ImageSize::new(dim(fields[1], "width")?, dim(fields[2], "height")?)?;
    let categories = fields[4]
        .split(['|', ','])
        .filter(|c| !c.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Category>>>()?;
    let boxes = fields[5]
        .split(';')
        .filter(|b| !b.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<BoundingBox>>>()?;
    if boxes.is_empty() {
        return Err(Error::Invalid("query has no ground-truth box".into()));
    }
    if let Some(b) = boxes.iter().find(|b| !b.fits(size)) {
        return Err(Error::Invalid(format!(
            "ground-truth box {b} exceeds image {}x{}",
            size.width, size.height
        )));
    }
    let gt = match merge {
        GtMerge::Union => union_box(&boxes)?,
        GtMerge::First => boxes[0],
    };
    Ok(Query {
        image_id: fields[0].to_owned(),
        size,
        phrase: fields[3].to_owned(),
        gt,
        categories,
    })
}

pub fn write_queries<W: Write>(mut w: W, queries: &[Query]) -> std::io::Result<()> {
    writeln!(w, "image_id\twidth\theight\tphrase\tcategory\tgt_boxes")?;
    for q in queries {
        let cats: Vec<&str> = q.categories.iter().map(Category::as_str).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            q.image_id,
            q.size.width,
            q.size.height,
            q.phrase,
            cats.join("|"),
            q.gt
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub predicted: BoundingBox,
    pub candidates: Vec<BoundingBox>,
    pub iou: f64,
    pub correct: bool,
}

impl EvalRecord {
    pub fn new(query: &Query, predicted: BoundingBox, candidates: Vec<BoundingBox>) -> Self {
        let iou = iou(&query.gt, &predicted);
        Self {
            predicted,
            candidates,
            iou,
            correct: iou >= IOU_THRESHOLD,
        }
    }
}

pub fn accuracy(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Whether any candidate (plus their enclosing box, with `include_union`)
/// reaches the IoU threshold.
pub fn candidates_hit(gt: &BoundingBox, candidates: &[BoundingBox], include_union: bool) -> bool {
    let single = candidates.iter().any(|c| iou(gt, c) >= IOU_THRESHOLD);
    single || (include_union && union_box(candidates).is_ok_and(|u| iou(gt, &u) >= IOU_THRESHOLD))
}

/// Fraction of queries for which some candidate box is correct. Queries with
/// no candidates count as misses; an empty input gives 0.
pub fn upperbound(gts: &[BoundingBox], candidate_sets: &[Vec<BoundingBox>], include_union: bool) -> f64 {
    assert_eq!(gts.len(), candidate_sets.len(), "one candidate set per query");
    if gts.is_empty() {
        return 0.0;
    }
    let hits = gts
        .iter()
        .zip(candidate_sets)
        .filter(|(g, c)| candidates_hit(g, c, include_union))
        .count();
    hits as f64 / gts.len() as f64
}

/// Counts for one report row. Accuracies are computed from exact counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub count: usize,
    pub correct: usize,
    pub upper_minus_union: usize,
    pub upper_plus_union: usize,
}

impl Tally {
    fn add(&mut self, query: &Query, record: &EvalRecord) {
        self.count += 1;
        self.correct += usize::from(record.correct);
        self.upper_minus_union += usize::from(candidates_hit(&query.gt, &record.candidates, false));
        self.upper_plus_union += usize::from(candidates_hit(&query.gt, &record.candidates, true));
    }

    fn pct(&self, n: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.count as f64
        }
    }

    pub fn accuracy_pct(&self) -> f64 {
        self.pct(self.correct)
    }

    pub fn upper_minus_union_pct(&self) -> f64 {
        self.pct(self.upper_minus_union)
    }

    pub fn upper_plus_union_pct(&self) -> f64 {
        self.pct(self.upper_plus_union)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryReport {
    /// Only categories with at least one query, in [`Category::ALL`] order.
    pub rows: Vec<(Category, Tally)>,
    pub overall: Tally,
}

/// Per-category and overall tallies. A query with several types counts once
/// in each of its categories and once overall.
pub fn per_category_report(queries: &[Query], records: &[EvalRecord]) -> Result<CategoryReport> {
    if queries.len() != records.len() {
        return Err(Error::Invalid(format!(
            "{} queries but {} records",
            queries.len(),
            records.len()
        )));
    }
    let mut by_cat: BTreeMap<Category, Tally> = BTreeMap::new();
    let mut overall = Tally::default();
    for (q, r) in queries.iter().zip(records) {
        overall.add(q, r);
        for c in q.report_categories() {
            by_cat.entry(c).or_default().add(q, r);
        }
    }
    Ok(CategoryReport {
        rows: by_cat.into_iter().collect(),
        overall,
    })
}

/// True when the phrase contains one of the 11 basic colour terms as a token.
pub fn has_colour_term(phrase: &str) -> bool {
    tokenize(phrase)
        .iter()
        .any(|t| ColourTerm::ALL.iter().any(|c| c.as_str() == t))
}

pub fn colour_subset_filter(queries: &[Query]) -> Vec<usize> {
    queries
        .iter()
        .enumerate()
        .filter(|(_, q)| has_colour_term(&q.phrase))
        .map(|(i, _)| i)
        .collect()
}

pub const REPORT_HEADER: &str = "config,category,count,accuracy,upperbound_minus_union,upperbound_plus_union";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Machine-readable report rows (no header), percentages to two decimals.
pub fn report_csv_rows(config: &str, report: &CategoryReport) -> Vec<String> {
    let row = |name: &str, t: &Tally| {
        format!(
            "{},{},{},{:.2},{:.2},{:.2}",
            csv_field(config),
            name,
            t.count,
            t.accuracy_pct(),
            t.upper_minus_union_pct(),
            t.upper_plus_union_pct()
        )
    };
    report
        .rows
        .iter()
        .map(|(c, t)| row(c.as_str(), t))
        .chain(std::iter::once(row("overall", &report.overall)))
        .collect()
}

/// Human-readable table.
pub fn report_table(config: &str, report: &CategoryReport) -> String {
    let mut s = format!(
        "{config}\n{:<12} {:>8} {:>9} {:>9} {:>9}\n",
        "category", "count", "acc%", "ub-u%", "ub+u%"
    );
    let mut line = |name: &str, t: &Tally| {
        s.push_str(&format!(
            "{:<12} {:>8} {:>9.2} {:>9.2} {:>9.2}\n",
            name,
            t.count,
            t.accuracy_pct(),
            t.upper_minus_union_pct(),
            t.upper_plus_union_pct()
        ));
    };
    for (c, t) in &report.rows {
        line(c.as_str(), t);
    }
    line("overall", &report.overall);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x0: u32, y0: u32, x1: u32, y1: u32) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn query(phrase: &str, gt: BoundingBox, cats: &[Category]) -> Query {
        Query {
            image_id: "i".into(),
            size: ImageSize::new(100, 100).unwrap(),
            phrase: phrase.into(),
            gt,
            categories: cats.to_vec(),
        }
    }

    #[test]
    fn reads_tsv() {
        let text = "image_id\twidth\theight\tphrase\tcategory\tgt_boxes\n\
                    1\t100\t80\ta red dog\tanimals\t0,0,10,10;20,20,30,30\n\
                    2\t50\t50\tthe scene\t\t0,0,50,50\n\
                    3\t50\t50\tmen\tpeople|other\t1,1,5,5\n";
        let qs = read_queries(text.as_bytes(), GtMerge::Union).unwrap();
        assert_eq!(qs.len(), 3);
        assert_eq!(qs[0].gt, bb(0, 0, 30, 30));
        assert_eq!(qs[1].categories, []);
        assert_eq!(qs[1].report_categories(), [Category::Other]);
        assert_eq!(qs[2].categories, [Category::People, Category::Other]);
        let first = read_queries(text.as_bytes(), GtMerge::First).unwrap();
        assert_eq!(first[0].gt, bb(0, 0, 10, 10));

        let mut buf = Vec::new();
        write_queries(&mut buf, &qs).unwrap();
        assert_eq!(read_queries(buf.as_slice(), GtMerge::Union).unwrap(), qs);
    }

    #[test]
    fn tsv_errors_carry_line() {
        let bad = "1\t100\t80\tdog\tanimals\t0,0,200,10\n";
        assert!(matches!(
            read_queries(bad.as_bytes(), GtMerge::Union),
            Err(Error::Parse { line: 1, .. })
        ));
        let bad = "1\t100\t80\tdog\tanimal\t0,0,20,10\n";
        assert!(read_queries(bad.as_bytes(), GtMerge::Union).is_err());
        let bad = "x\n1\t100\t80\tdog\n";
        assert!(matches!(
            read_queries(bad.as_bytes(), GtMerge::Union),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn accuracy_cases() {
        let q = query("dog", bb(0, 0, 10, 10), &[]);
        let hit = EvalRecord::new(&q, bb(0, 0, 10, 10), vec![]);
        let miss = EvalRecord::new(&q, bb(50, 50, 60, 60), vec![]);
        assert_eq!(accuracy(&[hit.clone(), hit.clone()]).unwrap(), 1.0);
        assert_eq!(accuracy(std::slice::from_ref(&miss)).unwrap(), 0.0);
        assert_eq!(accuracy(&[hit, miss]).unwrap(), 0.5);
        assert_eq!(accuracy(&[]).unwrap_err().to_string(), "no records");
    }

    #[test]
    fn iou_exactly_half_is_correct() {
        // 50 / 100
        let q = query("x", bb(0, 0, 10, 10), &[]);
        let r = EvalRecord::new(&q, bb(0, 0, 10, 5), vec![]);
        assert_eq!(r.iou, 0.5);
        assert!(r.correct);
    }

    #[test]
    fn upperbound_cases() {
        let gt = bb(0, 0, 5, 5);
        assert_eq!(upperbound(&[gt], &[vec![gt]], false), 1.0);
        let split = vec![bb(0, 0, 2, 2), bb(3, 3, 5, 5)];
        assert_eq!(upperbound(&[gt], std::slice::from_ref(&split), false), 0.0);
        assert_eq!(upperbound(&[gt], &[split], true), 1.0);
        assert_eq!(upperbound(&[gt], &[vec![]], true), 0.0);
        assert_eq!(upperbound(&[], &[], true), 0.0);
    }

    #[test]
    fn category_report() {
        let people = query("two men", bb(0, 0, 10, 10), &[Category::People]);
        let animal = query("a dog", bb(0, 0, 10, 10), &[Category::Animals]);
        let qs = vec![people.clone(), people.clone(), animal.clone()];
        let recs = vec![
            EvalRecord::new(&people, bb(0, 0, 10, 10), vec![]),
            EvalRecord::new(&people, bb(50, 50, 60, 60), vec![]),
            EvalRecord::new(&animal, bb(0, 0, 10, 10), vec![]),
        ];
        let rep = per_category_report(&qs, &recs).unwrap();
        let rows: Vec<_> = rep.rows.iter().map(|(c, t)| (*c, t.count, t.accuracy_pct())).collect();
        assert_eq!(rows, [(Category::People, 2, 50.0), (Category::Animals, 1, 100.0)]);
        assert_eq!(rep.overall.count, 3);
        assert_eq!(format!("{:.1}", rep.overall.accuracy_pct()), "66.7");
        let csv = report_csv_rows("cfg", &rep);
        assert_eq!(csv[0], "cfg,people,2,50.00,0.00,0.00");
        assert_eq!(csv[2], "cfg,overall,3,66.67,0.00,0.00");
        assert!(per_category_report(&qs, &recs[..2]).is_err());
    }

    #[test]
    fn colour_subset() {
        let qs = vec![
            query("a blue swimsuit", bb(0, 0, 1, 1), &[]),
            query("three men", bb(0, 0, 1, 1), &[]),
            query("Red-haired bluebird", bb(0, 0, 1, 1), &[]),
            query("GREY.", bb(0, 0, 1, 1), &[]),
        ];
        assert_eq!(colour_subset_filter(&qs), [0, 3]);
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
