//! Multi-resolution basis embeddings.
//!
//! Space is covered by regular knot lattices over the unit square, one per
//! resolution level, each carrying a compactly supported Wendland bump.
//! Time is covered by equally spaced Gaussian bumps on `[0, 1]`. A feature
//! row is the temporal block followed by the spatial block, each in
//! ascending level order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::BBox;
use crate::provenance;

pub const DEFAULT_SPATIAL_SIDES: [usize; 4] = [9, 17, 35, 73];
pub const DEFAULT_TEMPORAL_COUNTS: [usize; 3] = [50, 350, 1000];
/// Wendland support radius as a multiple of the knot spacing.
pub const DEFAULT_SUPPORT_FACTOR: f64 = 2.5;
/// Gaussian bandwidth as a multiple of the center spacing.
pub const DEFAULT_BANDWIDTH_FACTOR: f64 = 2.0;

/// Bumped whenever the column layout of an embedding row changes.
pub const FEATURE_LAYOUT_VERSION: u32 = 1;

/// C4 Wendland function `(1 - d)^6 (35 d^2 + 18 d + 3) / 3`, zero for `d >= 1`.
pub fn wendland_kernel(d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::InvalidArgument(format!("wendland distance must be >= 0, got {d}")));
    }
    Ok(wendland_unchecked(d))
}

#[inline]
fn wendland_unchecked(d: f64) -> f64 {
    if d >= 1.0 {
        return 0.0;
    }
    let r = 1.0 - d;
    let r2 = r * r;
    let r6 = r2 * r2 * r2;
    r6 * (35.0 * d * d + 18.0 * d + 3.0) / 3.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisConfig {
    pub spatial_sides: Vec<usize>,
    pub temporal_counts: Vec<usize>,
    pub support_factor: f64,
    pub bandwidth_factor: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            spatial_sides: DEFAULT_SPATIAL_SIDES.to_vec(),
            temporal_counts: DEFAULT_TEMPORAL_COUNTS.to_vec(),
            support_factor: DEFAULT_SUPPORT_FACTOR,
            bandwidth_factor: DEFAULT_BANDWIDTH_FACTOR,
        }
    }
}

impl BasisConfig {
    /// Canonical text used for hashing; includes the feature layout version.
    pub fn canonical_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "layout_version={}\nspatial_sides={}\ntemporal_counts={}\nsupport_factor={:e}\nbandwidth_factor={:e}\n",
            FEATURE_LAYOUT_VERSION,
            join(&self.spatial_sides),
            join(&self.temporal_counts),
            self.support_factor,
            self.bandwidth_factor
        )
    }

    pub fn hash(&self) -> String {
        provenance::hash_bytes(self.canonical_text().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialKnotLevel {
    pub level_index: usize,
    pub grid_side: usize,
    /// Surviving knots in lattice order (row-major, `v` outer).
    pub knots: Vec<(f64, f64)>,
    pub support_radius: f64,
    /// Output position of each lattice slot, `None` once masked out.
    slots: Vec<Option<usize>>,
}

impl SpatialKnotLevel {
    fn lattice(level_index: usize, side: usize, support_factor: f64) -> Self {
        let step = 1.0 / (side - 1) as f64;
        let mut knots = Vec::with_capacity(side * side);
        for j in 0..side {
            for i in 0..side {
                knots.push((i as f64 * step, j as f64 * step));
            }
        }
        Self {
            level_index,
            grid_side: side,
            knots,
            support_radius: support_factor * step,
            slots: (0..side * side).map(Some).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Writes this level's features for `(u, v)` into `out` (length = `len()`).
    ///
    /// Only lattice slots within one support radius are visited.
    fn embed_into(&self, u: f64, v: f64, out: &mut [f64]) {
        out.fill(0.0);
        let last = self.grid_side - 1;
        let spacing = 1.0 / last as f64;
        let r = self.support_radius;
        let range = |c: f64| {
            let lo = ((c - r) / spacing).ceil().max(0.0) as usize;
            let hi = (((c + r) / spacing).floor().max(0.0) as usize).min(last);
            lo..=hi
        };
        for j in range(v) {
            let row = j * self.grid_side;
            for i in range(u) {
                if let Some(pos) = self.slots[row + i] {
                    let (ku, kv) = self.knots[pos];
                    let d = ((u - ku).powi(2) + (v - kv).powi(2)).sqrt() / r;
                    out[pos] = wendland_unchecked(d);
                }
            }
        }
    }
}

pub fn make_spatial_knots(grid_sides: &[usize]) -> Result<Vec<SpatialKnotLevel>> {
    make_spatial_knots_with(grid_sides, DEFAULT_SUPPORT_FACTOR)
}

/// Regular `side x side` lattices over `[0, 1]^2` including the boundary,
/// support radius `support_factor / (side - 1)`.
pub fn make_spatial_knots_with(grid_sides: &[usize], support_factor: f64) -> Result<Vec<SpatialKnotLevel>> {
    if !(support_factor > 0.0) {
        return Err(Error::InvalidArgument(format!("support factor must be > 0, got {support_factor}")));
    }
    grid_sides
        .iter()
        .enumerate()
        .map(|(level, &side)| {
            if side < 2 {
                return Err(Error::InvalidArgument(format!("level {level}: grid side must be >= 2, got {side}")));
            }
            Ok(SpatialKnotLevel::lattice(level, side, support_factor))
        })
        .collect()
}

/// Boolean raster marking water cells; row 0 is the northern edge.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterMask {
    pub rows: usize,
    pub cols: usize,
    pub bbox: BBox,
    water: Vec<bool>,
}

impl WaterMask {
    pub fn new(rows: usize, cols: usize, bbox: BBox, water: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("water mask must be at least 1x1".into()));
        }
        if water.len() != rows * cols {
            return Err(Error::Shape(format!(
                "water mask declares {rows}x{cols} but holds {} cells",
                water.len()
            )));
        }
        Ok(Self { rows, cols, bbox, water })
    }

    pub fn all_land(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, BBox::UNIT, vec![false; rows * cols])
    }

    pub fn all_water(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, BBox::UNIT, vec![true; rows * cols])
    }

    /// Parses `rows cols lon_min lon_max lat_min lat_max` followed by `rows`
    /// lines of `0`/`1` characters.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("water mask: empty file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: 1,
                message: format!("water mask header needs 6 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            line: 1,
            message: format!("water mask header: bad {what}"),
        };
        let rows: usize = fields[0].parse().map_err(|_| bad("rows"))?;
        let cols: usize = fields[1].parse().map_err(|_| bad("cols"))?;
        let nums: Vec<f64> = fields[2..]
            .iter()
            .map(|f| f.parse().map_err(|_| bad("bbox")))
            .collect::<Result<_>>()?;
        let bbox = BBox::new(nums[0], nums[1], nums[2], nums[3])?;
        let mut water = Vec::with_capacity(rows * cols);
        for (r, line) in lines.enumerate() {
            let line = line.trim();
            if r >= rows {
                return Err(Error::Parse {
                    line: r as u64 + 2,
                    message: format!("water mask has more than {rows} rows"),
                });
            }
            if line.len() != cols {
                return Err(Error::Parse {
                    line: r as u64 + 2,
                    message: format!("expected {cols} cells, found {}", line.len()),
                });
            }
            for c in line.chars() {
                match c {
                    '0' => water.push(false),
                    '1' => water.push(true),
                    other => {
                        return Err(Error::Parse {
                            line: r as u64 + 2,
                            message: format!("unexpected mask character `{other}`"),
                        })
                    }
                }
            }
        }
        Self::new(rows, cols, bbox, water)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {} {} {} {}\n",
            self.rows, self.cols, self.bbox.lon_min, self.bbox.lon_max, self.bbox.lat_min, self.bbox.lat_max
        );
        for row in self.water.chunks(self.cols) {
            s.extend(row.iter().map(|&w| if w { '1' } else { '0' }));
            s.push('\n');
        }
        s
    }

    /// Water flag of the cell containing unit-square point `(u, v)`.
    pub fn is_water(&self, u: f64, v: f64) -> bool {
        let col = ((u * self.cols as f64).floor().max(0.0) as usize).min(self.cols - 1);
        let from_bottom = ((v * self.rows as f64).floor().max(0.0) as usize).min(self.rows - 1);
        let row = self.rows - 1 - from_bottom;
        self.water[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, water: bool) {
        self.water[row * self.cols + col] = water;
    }
}

/// Drops every knot that falls in a water cell, keeping survivor order.
pub fn apply_water_mask(levels: &[SpatialKnotLevel], mask: &WaterMask) -> Vec<SpatialKnotLevel> {
    let out: Vec<SpatialKnotLevel> = levels
        .iter()
        .map(|level| {
            let mut knots = Vec::with_capacity(level.knots.len());
            let mut slots = vec![None; level.slots.len()];
            for (slot, pos) in level.slots.iter().enumerate() {
                if let Some(pos) = *pos {
                    let (u, v) = level.knots[pos];
                    if !mask.is_water(u, v) {
                        slots[slot] = Some(knots.len());
                        knots.push((u, v));
                    }
                }
            }
            SpatialKnotLevel {
                knots,
                slots,
                ..level.clone()
            }
        })
        .collect();
    let before: usize = levels.iter().map(SpatialKnotLevel::len).sum();
    let after: usize = out.iter().map(SpatialKnotLevel::len).sum();
    if after == 0 {
        log::warn!("water mask removed every spatial knot ({before} -> 0)");
    } else {
        log::debug!("water mask kept {after} of {before} spatial knots");
    }
    out
}

fn check_unit_point(u: f64, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("point ({u}, {v}) lies outside the unit square")));
    }
    Ok(())
}

pub fn spatial_width(levels: &[SpatialKnotLevel]) -> usize {
    levels.iter().map(SpatialKnotLevel::len).sum()
}

pub fn spatial_embedding(point: (f64, f64), levels: &[SpatialKnotLevel]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spatial_width(levels)];
    spatial_embedding_into(point, levels, &mut out)?;
    Ok(out)
}

fn spatial_embedding_into(point: (f64, f64), levels: &[SpatialKnotLevel], out: &mut [f64]) -> Result<()> {
    let (u, v) = point;
    check_unit_point(u, v)?;
    let mut offset = 0;
    for level in levels {
        level.embed_into(u, v, &mut out[offset..offset + level.len()]);
        offset += level.len();
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalBasisLevel {
    pub level_index: usize,
    pub centers: Vec<f64>,
    pub bandwidth: f64,
}

pub fn make_temporal_centers(counts: &[usize]) -> Result<Vec<TemporalBasisLevel>> {
    make_temporal_centers_with(counts, DEFAULT_BANDWIDTH_FACTOR)
}

/// Equally spaced centers on `[0, 1]`, bandwidth `width_factor / (count - 1)`.
pub fn make_temporal_centers_with(counts: &[usize], width_factor: f64) -> Result<Vec<TemporalBasisLevel>> {
    if !(width_factor > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth factor must be > 0, got {width_factor}")));
    }
    counts
        .iter()
        .enumerate()
        .map(|(level, &count)| {
            if count < 2 {
                return Err(Error::InvalidArgument(format!(
                    "level {level}: temporal count must be >= 2, got {count}"
                )));
            }
            let step = 1.0 / (count - 1) as f64;
            Ok(TemporalBasisLevel {
                level_index: level,
                centers: (0..count).map(|k| k as f64 * step).collect(),
                bandwidth: width_factor * step,
            })
        })
        .collect()
}

pub fn temporal_width(levels: &[TemporalBasisLevel]) -> usize {
    levels.iter().map(|l| l.centers.len()).sum()
}

pub fn gaussian_temporal_embedding(t: f64, levels: &[TemporalBasisLevel]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; temporal_width(levels)];
    temporal_embedding_into(t, levels, &mut out)?;
    Ok(out)
}

fn temporal_embedding_into(t: f64, levels: &[TemporalBasisLevel], out: &mut [f64]) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} lies outside [0, 1]")));
    }
    let mut k = 0;
    for level in levels {
        let denom = 2.0 * level.bandwidth * level.bandwidth;
        for &c in &level.centers {
            out[k] = (-(t - c) * (t - c) / denom).exp();
            k += 1;
        }
    }
    Ok(())
}

/// Dense feature rows: temporal block first, then spatial.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: usize,
    pub n_temporal: usize,
    pub n_spatial: usize,
    pub data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn cols(&self) -> usize {
        self.n_temporal + self.n_spatial
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Copies the selected rows into a new matrix.
    pub fn select(&self, rows: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols());
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        EmbeddingMatrix {
            rows: rows.len(),
            data,
            ..*self
        }
    }
}

pub fn embed_space_time(
    points: &[(f64, f64, f64)],
    spatial_levels: &[SpatialKnotLevel],
    temporal_levels: &[TemporalBasisLevel],
) -> Result<EmbeddingMatrix> {
    let n_temporal = temporal_width(temporal_levels);
    let n_spatial = spatial_width(spatial_levels);
    let cols = n_temporal + n_spatial;
    let mut data = vec![0.0; points.len() * cols];
    for (row, &(u, v, t)) in data.chunks_mut(cols.max(1)).zip(points) {
        let (temporal, spatial) = row.split_at_mut(n_temporal);
        temporal_embedding_into(t, temporal_levels, temporal)?;
        spatial_embedding_into((u, v), spatial_levels, spatial)?;
    }
    Ok(EmbeddingMatrix {
        rows: points.len(),
        n_temporal,
        n_spatial,
        data,
    })
}

/// Built spatial and temporal levels for a config, with an optional mask.
#[derive(Debug, Clone)]
pub struct Basis {
    pub spatial: Vec<SpatialKnotLevel>,
    pub temporal: Vec<TemporalBasisLevel>,
}

impl Basis {
    pub fn build(config: &BasisConfig, mask: Option<&WaterMask>) -> Result<Self> {
        let spatial = make_spatial_knots_with(&config.spatial_sides, config.support_factor)?;
        let spatial = match mask {
            Some(m) => apply_water_mask(&spatial, m),
            None => spatial,
        };
        let temporal = make_temporal_centers_with(&config.temporal_counts, config.bandwidth_factor)?;
        Ok(Self { spatial, temporal })
    }

    pub fn width(&self) -> usize {
        spatial_width(&self.spatial) + temporal_width(&self.temporal)
    }

    pub fn embed(&self, points: &[(f64, f64, f64)]) -> Result<EmbeddingMatrix> {
        embed_space_time(points, &self.spatial, &self.temporal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute force over every surviving knot of every level.
    fn brute_spatial(u: f64, v: f64, levels: &[SpatialKnotLevel]) -> Vec<f64> {
        let mut out = Vec::new();
        for level in levels {
            for &(ku, kv) in &level.knots {
                let d = ((u - ku).hypot(v - kv)) / level.support_radius;
                out.push(if d < 1.0 { (1.0 - d).powi(6) * (35.0 * d * d + 18.0 * d + 3.0) / 3.0 } else { 0.0 });
            }
        }
        out
    }

    #[test]
    fn wendland_examples() {
        assert_eq!(wendland_kernel(0.0).unwrap(), 1.0);
        assert_eq!(wendland_kernel(1.0).unwrap(), 0.0);
        assert_eq!(wendland_kernel(3.0).unwrap(), 0.0);
        // 0.5^6 * (35/4 + 9 + 3) / 3 = 0.015625 * 20.75 / 3
        let expected = 0.015625 * 20.75 / 3.0;
        assert!((wendland_kernel(0.5).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.108_072_916_666_666_67).abs() < 1e-15);
        assert!(matches!(wendland_kernel(-1e-9), Err(Error::InvalidArgument(_))));
        assert!(wendland_kernel(f64::NAN).is_err());
    }

    #[test]
    fn wendland_monotone_and_continuous() {
        let mut prev = wendland_kernel(0.0).unwrap();
        for k in 1..=10_000 {
            let cur = wendland_kernel(k as f64 / 10_000.0).unwrap();
            assert!(cur <= prev);
            assert!(prev - cur < 2e-3);
            prev = cur;
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn default_knot_counts() {
        let levels = make_spatial_knots(&DEFAULT_SPATIAL_SIDES).unwrap();
        let counts: Vec<usize> = levels.iter().map(|l| l.len()).collect();
        assert_eq!(counts, vec![81, 289, 1225, 5329]);
        assert_eq!(spatial_width(&levels), 6924);
        assert!((levels[0].support_radius - 2.5 / 8.0).abs() < 1e-15);

        let two = make_spatial_knots(&[2]).unwrap();
        assert_eq!(two[0].knots, vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert!(make_spatial_knots(&[9, 1]).is_err());
    }

    #[test]
    fn masks() {
        let levels = make_spatial_knots(&DEFAULT_SPATIAL_SIDES).unwrap();
        let land = apply_water_mask(&levels, &WaterMask::all_land(10, 10).unwrap());
        assert_eq!(land, levels);
        let water = apply_water_mask(&levels, &WaterMask::all_water(3, 7).unwrap());
        assert_eq!(spatial_width(&water), 0);

        // Western half water: counting oracle over the lattice coordinates.
        let mut mask = WaterMask::all_land(4, 4).unwrap();
        for r in 0..4 {
            mask.set(r, 0, true);
            mask.set(r, 1, true);
        }
        let kept = apply_water_mask(&levels, &mask);
        let expected: usize = DEFAULT_SPATIAL_SIDES
            .iter()
            .map(|&s| (0..s).filter(|&i| (i as f64 / (s - 1) as f64) >= 0.5).count() * s)
            .sum();
        assert_eq!(spatial_width(&kept), expected);
        assert!(kept.iter().all(|l| l.knots.iter().all(|k| k.0 >= 0.5)));
    }

    #[test]
    fn mask_file_round_trip() {
        let text = "2 3 0 1 0 1\n010\n001\n";
        let m = WaterMask::parse(text).unwrap();
        assert_eq!(m.to_text(), text);
        // Row 0 is north: (u, v) near the top middle is water.
        assert!(m.is_water(0.5, 0.9));
        assert!(!m.is_water(0.5, 0.1));
        assert!(m.is_water(0.99, 0.0));
        assert!(WaterMask::parse("2 3 0 1 0 1\n010\n").is_err());
        assert!(WaterMask::parse("2 3 0 1 0 1\n01x\n001\n").is_err());
        assert!(WaterMask::parse("2 3 0 1 0\n").is_err());
        assert!(WaterMask::parse("2 3 0 1 0 1\n010\n001\n111\n").is_err());
    }

    #[test]
    fn spatial_embedding_examples() {
        let levels = make_spatial_knots(&[9]).unwrap();
        let e = spatial_embedding((0.25, 0.5), &levels).unwrap();
        // (0.25, 0.5) is lattice slot i=2, j=4.
        assert_eq!(e[4 * 9 + 2], 1.0);

        // Small support: a point midway between knots sees none of them.
        let sparse = make_spatial_knots_with(&[3], 0.2).unwrap();
        let e = spatial_embedding((0.25, 0.25), &sparse).unwrap();
        assert!(e.iter().all(|&x| x == 0.0));

        assert!(spatial_embedding((1.01, 0.5), &levels).is_err());
        assert!(spatial_embedding((0.5, -0.01), &levels).is_err());
    }

    #[test]
    fn spatial_embedding_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut levels = make_spatial_knots(&DEFAULT_SPATIAL_SIDES).unwrap();
        let mut mask = WaterMask::all_land(13, 17).unwrap();
        for _ in 0..40 {
            mask.set(rng.random_range(0..13), rng.random_range(0..17), true);
        }
        levels = apply_water_mask(&levels, &mask);
        for _ in 0..500 {
            let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
            let fast = spatial_embedding((u, v), &levels).unwrap();
            let slow = brute_spatial(u, v, &levels);
            assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn temporal_examples() {
        let levels = make_temporal_centers(&DEFAULT_TEMPORAL_COUNTS).unwrap();
        assert_eq!(temporal_width(&levels), 1400);
        let two = make_temporal_centers(&[2]).unwrap();
        assert_eq!(two[0].centers, vec![0.0, 1.0]);
        let fifty = make_temporal_centers(&[50]).unwrap();
        for w in fifty[0].centers.windows(2) {
            assert!((w[1] - w[0] - 1.0 / 49.0).abs() < 1e-15);
        }
        assert!(make_temporal_centers(&[50, 1]).is_err());

        let c = fifty[0].centers[10];
        let e = gaussian_temporal_embedding(c, &fifty).unwrap();
        assert_eq!(e[10], 1.0);
        let sigma = fifty[0].bandwidth;
        let e = gaussian_temporal_embedding(c + sigma, &fifty).unwrap();
        assert!((e[10] - (-0.5f64).exp()).abs() < 1e-12);
        assert!((e[10] - 0.60653).abs() < 1e-5);
        assert_eq!(gaussian_temporal_embedding(0.3, &levels).unwrap().len(), 1400);
        assert!(gaussian_temporal_embedding(1.2, &levels).is_err());
    }

    #[test]
    fn embed_layout() {
        let basis = Basis::build(&BasisConfig::default(), None).unwrap();
        let m = basis.embed(&[(0.3, 0.6, 0.2); 3]).unwrap();
        assert_eq!(m.cols(), 8324);
        assert_eq!((m.n_temporal, m.n_spatial), (1400, 6924));
        assert_eq!(m.row(0), m.row(1));
        assert_eq!(m.row(1), m.row(2));
        let t = gaussian_temporal_embedding(0.2, &basis.temporal).unwrap();
        let s = spatial_embedding((0.3, 0.6), &basis.spatial).unwrap();
        assert_eq!(&m.row(0)[..1400], &t[..]);
        assert_eq!(&m.row(0)[1400..], &s[..]);
        assert!(basis.embed(&[(0.3, 0.6, 1.5)]).is_err());
    }

    #[test]
    fn entries_bounded_and_local() {
        let basis = Basis::build(&BasisConfig::default(), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..50).map(|_| (rng.random(), rng.random(), rng.random())).collect();
        let m = basis.embed(&pts).unwrap();
        assert!(m.data.iter().all(|&x| (0.0..=1.0).contains(&x)));
        for (i, &(u, v, _)) in pts.iter().enumerate() {
            let spatial = &m.row(i)[m.n_temporal..];
            let mut off = 0;
            for level in &basis.spatial {
                let block = &spatial[off..off + level.len()];
                assert!(block.iter().any(|&x| x > 0.0), "interior point has an empty level block");
                for (k, &x) in block.iter().enumerate() {
                    if x != 0.0 {
                        let (ku, kv) = level.knots[k];
                        assert!((u - ku).hypot(v - kv) < level.support_radius);
                    }
                }
                off += level.len();
            }
        }
    }

    #[test]
    fn row_order_follows_point_order() {
        let basis = Basis::build(
            &BasisConfig {
                spatial_sides: vec![5, 9],
                temporal_counts: vec![6],
                ..Default::default()
            },
            None,
        )
        .unwrap();
        let pts = vec![(0.1, 0.2, 0.3), (0.9, 0.4, 0.0), (0.5, 0.5, 1.0)];
        let perm = [2usize, 0, 1];
        let permuted: Vec<_> = perm.iter().map(|&i| pts[i]).collect();
        let a = basis.embed(&pts).unwrap();
        let b = basis.embed(&permuted).unwrap();
        for (row, &src) in perm.iter().enumerate() {
            assert_eq!(b.row(row), a.row(src));
        }
    }

    #[test]
    fn spatial_embedding_is_lipschitz() {
        // |d/dd psi| = (56/3) d (5d + 1) (1 - d)^5, maximized on a fine scan.
        let max_slope = (0..=100_000)
            .map(|k| {
                let d = k as f64 / 100_000.0;
                56.0 / 3.0 * d * (5.0 * d + 1.0) * (1.0 - d).powi(5)
            })
            .fold(0.0, f64::max);
        let levels = make_spatial_knots(&DEFAULT_SPATIAL_SIDES).unwrap();
        let min_radius = levels.iter().map(|l| l.support_radius).fold(f64::INFINITY, f64::min);
        let lipschitz = max_slope / min_radius;
        let delta = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (u, v) = (rng.random_range(0.0..1.0 - delta), rng.random_range(0.0..1.0 - delta));
            let a = spatial_embedding((u, v), &levels).unwrap();
            let b = spatial_embedding((u + delta, v), &levels).unwrap();
            let c = spatial_embedding((u, v + delta), &levels).unwrap();
            for k in 0..a.len() {
                assert!((a[k] - b[k]).abs() <= lipschitz * delta * (1.0 + 1e-6));
                assert!((a[k] - c[k]).abs() <= lipschitz * delta * (1.0 + 1e-6));
            }
        }
    }

    #[test]
    fn config_hash_tracks_changes() {
        let a = BasisConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.support_factor = 2.4;
        assert_ne!(a.hash(), b.hash());
    }
}
