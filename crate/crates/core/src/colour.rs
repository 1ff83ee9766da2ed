//! Colour-term detections from RGB images.
//!
//! Each pixel is mapped through a binned RGB lookup table to a posterior over
//! the 11 basic English colour terms. Per colour, the posterior is thresholded
//! and the resulting mask is split into 8-connected components; components
//! whose bounding box is large enough become detections.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;

use crate::detection::{ConceptLabel, Detection, DetectorId};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

pub const NUM_COLOURS: usize = 11;

/// Posterior threshold applied before labelling.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

/// Minimum bounding-box area, in pixels, for a component to be kept.
pub const DEFAULT_MIN_AREA: u64 = 625;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ColourTerm {
    Black,
    Blue,
    Brown,
    Grey,
    Green,
    Orange,
    Pink,
    Purple,
    Red,
    White,
    Yellow,
}

impl ColourTerm {
    /// Table column order.
    pub const ALL: [ColourTerm; NUM_COLOURS] = [
        ColourTerm::Black,
        ColourTerm::Blue,
        ColourTerm::Brown,
        ColourTerm::Grey,
        ColourTerm::Green,
        ColourTerm::Orange,
        ColourTerm::Pink,
        ColourTerm::Purple,
        ColourTerm::Red,
        ColourTerm::White,
        ColourTerm::Yellow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColourTerm::Black => "black",
            ColourTerm::Blue => "blue",
            ColourTerm::Brown => "brown",
            ColourTerm::Grey => "grey",
            ColourTerm::Green => "green",
            ColourTerm::Orange => "orange",
            ColourTerm::Pink => "pink",
            ColourTerm::Purple => "purple",
            ColourTerm::Red => "red",
            ColourTerm::White => "white",
            ColourTerm::Yellow => "yellow",
        }
    }
}

impl fmt::Display for ColourTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ColourTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ColourTerm::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown colour term `{s}`")))
    }
}

/// RGB lookup table: `bins³` cells, each an 11-way posterior. Cells are
/// stored with the red bin varying slowest and the blue bin fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    bins: usize,
    cells: Vec<[f32; NUM_COLOURS]>,
}

impl PosteriorTable {
    pub fn new(bins: usize, cells: Vec<[f32; NUM_COLOURS]>) -> Result<Self> {
        if bins == 0 || bins > 256 {
            return Err(Error::Invalid(format!("bins per channel {bins} must be in 1..=256")));
        }
        if cells.len() != bins * bins * bins {
            return Err(Error::Invalid(format!(
                "expected {} cells for {bins} bins, got {}",
                bins * bins * bins,
                cells.len()
            )));
        }
        for (i, cell) in cells.iter().enumerate() {
            let sum: f32 = cell.iter().sum();
            if cell.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > 1e-4 {
                return Err(Error::Invalid(format!(
                    "cell {i}: posteriors must be non-negative and sum to 1 (sum {sum})"
                )));
            }
        }
        Ok(Self { bins, cells })
    }

    /// A table assigning every RGB value the posterior `f(r, g, b)` evaluated
    /// at the lower corner of its bin.
    pub fn from_fn(bins: usize, f: impl Fn(u8, u8, u8) -> [f32; NUM_COLOURS]) -> Result<Self> {
        let corner = |b: usize| (b * 256 / bins) as u8;
        let mut cells = Vec::with_capacity(bins * bins * bins);
        for r in 0..bins {
            for g in 0..bins {
                for b in 0..bins {
                    cells.push(f(corner(r), corner(g), corner(b)));
                }
            }
        }
        Self::new(bins, cells)
    }

    pub fn bins_per_channel(&self) -> usize {
        self.bins
    }

    fn bin(&self, v: u8) -> usize {
        usize::from(v) * self.bins / 256
    }

    pub fn posterior(&self, r: u8, g: u8, b: u8) -> &[f32; NUM_COLOURS] {
        let idx = (self.bin(r) * self.bins + self.bin(g)) * self.bins + self.bin(b);
        &self.cells[idx]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    /// Reads the `PTAB <bins> 11` text format.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate().filter(|(_, l)| match l {
            Ok(l) => !l.trim().is_empty(),
            Err(_) => true,
        });
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "missing PTAB header"))?;
        let header = header.map_err(|e| Error::io("<ptab>", e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let bins = match fields.as_slice() {
            ["PTAB", bins, "11"] => bins
                .parse::<usize>()
                .map_err(|_| Error::parse(1, format!("bad bin count `{bins}`")))?,
            _ => return Err(Error::parse(1, "expected `PTAB <bins> 11`")),
        };
        let mut cells = Vec::with_capacity(bins.pow(3));
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io("<ptab>", e))?;
            let mut cell = [0f32; NUM_COLOURS];
            let mut n = 0;
            for field in line.split_whitespace() {
                if n == NUM_COLOURS {
                    n += 1;
                    break;
                }
                cell[n] = field
                    .parse()
                    .map_err(|_| Error::parse(i + 1, format!("invalid float `{field}`")))?;
                n += 1;
            }
            if n != NUM_COLOURS {
                return Err(Error::DimensionMismatch {
                    line: i + 1,
                    expected: NUM_COLOURS,
                    found: line.split_whitespace().count(),
                });
            }
            cells.push(cell);
        }
        Self::new(bins, cells)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "PTAB {} {NUM_COLOURS}", self.bins)?;
        for cell in &self.cells {
            let row: Vec<String> = cell.iter().map(|p| p.to_string()).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Per-pixel colour posteriors, row-major with the 11 channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl PosteriorMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        let expected = width as usize * height as usize * NUM_COLOURS;
        if values.len() != expected {
            return Err(Error::Invalid(format!(
                "posterior map {width}x{height} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32, colour: ColourTerm) -> f32 {
        self.values[(y as usize * self.width as usize + x as usize) * NUM_COLOURS + colour.index()]
    }

    /// One colour's channel as a row-major plane.
    pub fn channel(&self, colour: ColourTerm) -> Vec<f32> {
        self.values
            .chunks_exact(NUM_COLOURS)
            .map(|px| px[colour.index()])
            .collect()
    }

    /// Reads the `PFMAP <w> <h> 11` header followed by little-endian f32s.
    pub fn read<R: BufRead>(mut reader: R) -> Result<Self> {
        let mut header = String::new();
        reader.read_line(&mut header).map_err(|e| Error::io("<pfmap>", e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (width, height) = match fields.as_slice() {
            ["PFMAP", w, h, "11"] => (
                w.parse::<u32>().map_err(|_| Error::parse(1, "bad width"))?,
                h.parse::<u32>().map_err(|_| Error::parse(1, "bad height"))?,
            ),
            _ => return Err(Error::parse(1, "expected `PFMAP <width> <height> 11`")),
        };
        let count = width as usize * height as usize * NUM_COLOURS;
        let mut bytes = vec![0u8; count * 4];
        reader.read_exact(&mut bytes).map_err(|e| Error::io("<pfmap>", e))?;
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(width, height, values)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "PFMAP {} {} {NUM_COLOURS}", self.width, self.height)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    Ok(reader.decode()?.to_rgb8())
}

pub fn apply_lookup(image: &RgbImage, table: &PosteriorTable) -> PosteriorMap {
    let mut values = Vec::with_capacity(image.width() as usize * image.height() as usize * NUM_COLOURS);
    for px in image.pixels() {
        let [r, g, b] = px.0;
        values.extend_from_slice(table.posterior(r, g, b));
    }
    PosteriorMap {
        width: image.width(),
        height: image.height(),
        values,
    }
}

/// Disjoint-set forest over provisional labels. The root of a set is always
/// its smallest member.
struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass 8-connected labelling of a row-major mask. Background is 0;
/// components are numbered from 1 in raster order of their first pixel.
/// Returns the label image and the component count.
pub fn label_components(mask: &[bool], width: usize, height: usize) -> (Vec<u32>, u32) {
    assert_eq!(mask.len(), width * height, "mask size does not match dimensions");
    const NONE: u32 = u32::MAX;
    let mut provisional = vec![NONE; mask.len()];
    let mut sets = DisjointSet::new();

    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !mask[i] {
                continue;
            }
            // already-visited neighbours: W, NW, N, NE
            let mut neighbours = [NONE; 4];
            if x > 0 {
                neighbours[0] = provisional[i - 1];
            }
            if y > 0 {
                let up = i - width;
                if x > 0 {
                    neighbours[1] = provisional[up - 1];
                }
                neighbours[2] = provisional[up];
                if x + 1 < width {
                    neighbours[3] = provisional[up + 1];
                }
            }
            let mut label = NONE;
            for &n in neighbours.iter().filter(|&&n| n != NONE) {
                if label == NONE {
                    label = n;
                } else {
                    sets.union(label, n);
                }
            }
            provisional[i] = if label == NONE { sets.make() } else { label };
        }
    }

    let mut canonical = vec![0u32; sets.parent.len()];
    let mut count = 0;
    let mut labels = vec![0u32; mask.len()];
    for (out, &p) in labels.iter_mut().zip(&provisional) {
        if p == NONE {
            continue;
        }
        let root = sets.find(p) as usize;
        if canonical[root] == 0 {
            count += 1;
            canonical[root] = count;
        }
        *out = canonical[root];
    }
    (labels, count)
}

/// A connected set of above-threshold pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub pixels: Vec<(u32, u32)>,
    pub bbox: BoundingBox,
    /// Mean posterior of the colour over the component's pixels.
    pub mean_posterior: f64,
}

/// Components of the pixels whose `colour` posterior is at least `threshold`,
/// in raster order of their first pixel.
pub fn threshold_and_label(map: &PosteriorMap, colour: ColourTerm, threshold: f64) -> Vec<Component> {
    let (w, h) = (map.width as usize, map.height as usize);
    let plane = map.channel(colour);
    let mask: Vec<bool> = plane.iter().map(|&p| f64::from(p) >= threshold).collect();
    let (labels, count) = label_components(&mask, w, h);

    struct Acc {
        pixels: Vec<(u32, u32)>,
        bounds: [u32; 4],
        sum: f64,
    }
    let mut accs: Vec<Acc> = (0..count)
        .map(|_| Acc {
            pixels: Vec::new(),
            bounds: [u32::MAX, u32::MAX, 0, 0],
            sum: 0.0,
        })
        .collect();
    for (i, &label) in labels.iter().enumerate() {
        if label == 0 {
            continue;
        }
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        let acc = &mut accs[label as usize - 1];
        acc.pixels.push((x, y));
        acc.bounds = [
            acc.bounds[0].min(x),
            acc.bounds[1].min(y),
            acc.bounds[2].max(x + 1),
            acc.bounds[3].max(y + 1),
        ];
        acc.sum += f64::from(plane[i]);
    }
    accs.into_iter()
        .map(|a| {
            let [x0, y0, x1, y1] = a.bounds;
            Component {
                mean_posterior: a.sum / a.pixels.len() as f64,
                bbox: BoundingBox::new(x0, y0, x1, y1).expect("component has at least one pixel"),
                pixels: a.pixels,
            }
        })
        .collect()
}

/// One detection per component whose bounding-box area reaches `min_area`.
pub fn boxes_from_components(components: &[Component], colour: ColourTerm, min_area: u64) -> Vec<Detection> {
    components
        .iter()
        .filter(|c| c.bbox.area() >= min_area)
        .map(|c| Detection {
            label: ConceptLabel::Plain(colour.as_str().to_owned()),
            bbox: c.bbox,
            confidence: c.mean_posterior.clamp(0.0, 1.0),
            detector: DetectorId::Colour,
        })
        .collect()
}

/// Runs every colour over the image, in colour-term order.
pub fn detect_colours(image: &RgbImage, table: &PosteriorTable, threshold: f64, min_area: u64) -> Vec<Detection> {
    let map = apply_lookup(image, table);
    ColourTerm::ALL
        .into_iter()
        .flat_map(|colour| {
            let components = threshold_and_label(&map, colour, threshold);
            boxes_from_components(&components, colour, min_area)
        })
        .collect()
}
