//! Tagged binary rasters and skeletonization.
//!
//! The density field is binarized (fixed level, Otsu, or volume matching),
//! tagged pixels are forced on, the image is padded with a zero border, and
//! a two-subpass thinning with a non-removability tag guard reduces it to a
//! one-pixel-wide skeleton. Pixels of the skeleton are then classified as
//! end, joint or regular from their 8-neighbor counts.

use crate::problem::Pixel;
use crate::topopt::DensityField;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("empty structure at threshold: no untagged pixels survive")]
    EmptyStructure,
    #[error("degenerate histogram: field has fewer than two distinct values")]
    DegenerateHistogram,
    #[error("cannot unpad: set pixel on the border at (row {row}, col {col})")]
    SetBorderPixel { row: usize, col: usize },
    #[error("thinning requires a padded raster (zero border)")]
    NotPadded,
    #[error("invalid PBM: {0}")]
    Pbm(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Binary image with a set of non-removable (tagged) pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryRaster {
    pub width: usize,
    pub height: usize,
    bits: Vec<bool>,
    /// Row-major indices of tagged pixels; always a subset of the set pixels.
    tags: BTreeSet<usize>,
}

impl BinaryRaster {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
            tags: BTreeSet::new(),
        }
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        let i = self.idx(row, col);
        self.bits[i] = value;
        if !value {
            self.tags.remove(&i);
        }
    }

    pub fn tag(&mut self, row: usize, col: usize) {
        let i = self.idx(row, col);
        self.bits[i] = true;
        self.tags.insert(i);
    }

    pub fn is_tagged(&self, row: usize, col: usize) -> bool {
        self.tags.contains(&(row * self.width + col))
    }

    pub fn tags(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.tags.iter().map(|&i| Pixel {
            row: i / self.width,
            col: i % self.width,
        })
    }

    pub fn set_pixel_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn set_pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| Pixel {
            row: i / self.width,
            col: i % self.width,
        })
    }

    /// Count of set pixels among the 8 neighbors (out-of-bounds = unset).
    pub fn neighbor_count(&self, row: usize, col: usize) -> usize {
        let mut n = 0;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let r = row as i64 + dr;
                let c = col as i64 + dc;
                if r >= 0
                    && c >= 0
                    && (r as usize) < self.height
                    && (c as usize) < self.width
                    && self.get(r as usize, c as usize)
                {
                    n += 1;
                }
            }
        }
        n
    }

    /// Write as ASCII PBM (P1): 1 = material.
    pub fn write_pbm(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "P1")?;
        writeln!(w, "{} {}", self.width, self.height)?;
        for row in 0..self.height {
            let line: Vec<&str> = (0..self.width)
                .map(|col| if self.get(row, col) { "1" } else { "0" })
                .collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Read an ASCII PBM (P1). Tags are stored separately (sidecar JSON).
    pub fn read_pbm(r: impl BufRead) -> Result<BinaryRaster, RasterError> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("");
            tokens.extend(body.split_whitespace().map(String::from));
        }
        if tokens.first().map(String::as_str) != Some("P1") {
            return Err(RasterError::Pbm("missing P1 magic".into()));
        }
        if tokens.len() < 3 {
            return Err(RasterError::Pbm("missing dimensions".into()));
        }
        let width: usize = tokens[1]
            .parse()
            .map_err(|_| RasterError::Pbm(format!("bad width {}", tokens[1])))?;
        let height: usize = tokens[2]
            .parse()
            .map_err(|_| RasterError::Pbm(format!("bad height {}", tokens[2])))?;
        let mut raster = BinaryRaster::new(width, height);
        let mut count = 0;
        for tok in &tokens[3..] {
            for ch in tok.chars() {
                let value = match ch {
                    '1' => true,
                    '0' => false,
                    _ => return Err(RasterError::Pbm(format!("bad digit {ch}"))),
                };
                if count >= width * height {
                    return Err(RasterError::Pbm("too many pixels".into()));
                }
                raster.bits[count] = value;
                count += 1;
            }
        }
        if count != width * height {
            return Err(RasterError::Pbm(format!(
                "expected {} pixels, got {count}",
                width * height
            )));
        }
        Ok(raster)
    }

    /// Restore a tag set (after PBM import).
    pub fn apply_tags(&mut self, tags: &[Pixel]) {
        for p in tags {
            self.tag(p.row, p.col);
        }
    }
}

/// Sidecar document carrying the tag list next to a PBM file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TagSidecar {
    pub tags: Vec<Pixel>,
}

/// Classification of a skeleton pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelClass {
    Void,
    Regular,
    End,
    Joint,
}

/// One-pixel-wide skeleton with per-pixel classification.
#[derive(Debug, Clone)]
pub struct Skeleton {
    pub raster: BinaryRaster,
    /// Row-major, same dimensions as the raster.
    pub classes: Vec<PixelClass>,
}

impl Skeleton {
    pub fn from_raster(raster: BinaryRaster) -> Skeleton {
        let classes = classify_pixels(&raster);
        Skeleton { raster, classes }
    }

    pub fn class(&self, row: usize, col: usize) -> PixelClass {
        self.classes[row * self.raster.width + col]
    }
}

/// Fixed-level threshold: a pixel is material when its filtered density is
/// at or above `eta`, or when it is tagged.
pub fn threshold_fixed(
    field: &DensityField,
    eta: f64,
    tags: &[Pixel],
) -> Result<BinaryRaster, RasterError> {
    assert!(eta > 0.0 && eta < 1.0, "eta out of range (0,1)");
    let mut raster = BinaryRaster::new(field.nx, field.ny);
    let mut untagged = 0usize;
    for row in 0..field.ny {
        for col in 0..field.nx {
            if field.filtered[row * field.nx + col] >= eta {
                raster.set(row, col, true);
                untagged += 1;
            }
        }
    }
    raster.apply_tags(tags);
    if untagged == 0 {
        return Err(RasterError::EmptyStructure);
    }
    Ok(raster)
}

/// Quantize a density in [0,1] to one of 256 histogram bins.
fn bin_of(rho: f64) -> usize {
    ((rho * 256.0).floor() as i64).clamp(0, 255) as usize
}

/// The cut level corresponding to a histogram split after bin `t`:
/// pixels with bin > t are material, so the threshold is (t+1)/256.
fn eta_of_cut(t: usize) -> f64 {
    (t as f64 + 1.0) / 256.0
}

/// Between-class variance of the split "bin <= t vs bin > t".
fn between_class_variance(hist: &[u64; 256], total: u64, t: usize) -> f64 {
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    for (b, &h) in hist.iter().enumerate().take(t + 1) {
        w0 += h;
        sum0 += (b as f64) * h as f64;
    }
    let w1 = total - w0;
    if w0 == 0 || w1 == 0 {
        return -1.0;
    }
    let sum_total: f64 = hist
        .iter()
        .enumerate()
        .map(|(b, &h)| (b as f64) * h as f64)
        .sum();
    let m0 = sum0 / w0 as f64;
    let m1 = (sum_total - sum0) / w1 as f64;
    (w0 as f64) * (w1 as f64) * (m0 - m1) * (m0 - m1)
}

/// Otsu's threshold over a 256-bin histogram of the filtered densities.
/// Ties resolve to the smallest level.
pub fn threshold_otsu(
    field: &DensityField,
    tags: &[Pixel],
) -> Result<(f64, BinaryRaster), RasterError> {
    let mut hist = [0u64; 256];
    for &rho in &field.filtered {
        hist[bin_of(rho)] += 1;
    }
    if hist.iter().filter(|&&h| h > 0).count() < 2 {
        return Err(RasterError::DegenerateHistogram);
    }
    let total = field.filtered.len() as u64;
    let mut best_t = 0usize;
    let mut best_var = -1.0;
    for t in 0..=255 {
        let var = between_class_variance(&hist, total, t);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }
    let eta = eta_of_cut(best_t);
    let raster = threshold_fixed(field, eta, tags)?;
    Ok((eta, raster))
}

/// Volume-matching threshold: bisect the cut level until the set-pixel
/// fraction is as close as possible to `target_fraction`. Opt-in only; the
/// fixed and Otsu modes are much cheaper.
pub fn threshold_volume(
    field: &DensityField,
    target_fraction: f64,
    tags: &[Pixel],
) -> Result<(f64, BinaryRaster), RasterError> {
    assert!(target_fraction > 0.0 && target_fraction <= 1.0);
    let n = field.filtered.len() as f64;
    let fraction_at = |eta: f64| {
        field.filtered.iter().filter(|&&r| r >= eta).count() as f64 / n
    };
    let mut lo = 1e-9; // fraction_at is non-increasing in eta
    let mut hi = 1.0 - 1e-9;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if fraction_at(mid) > target_fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eta = if (fraction_at(lo) - target_fraction).abs()
        <= (fraction_at(hi) - target_fraction).abs()
    {
        lo
    } else {
        hi
    };
    let raster = threshold_fixed(field, eta, tags)?;
    Ok((eta, raster))
}

/// Add a one-pixel zero border on all four sides; tags shift by (1,1).
pub fn pad(raster: &BinaryRaster) -> BinaryRaster {
    let mut out = BinaryRaster::new(raster.width + 2, raster.height + 2);
    for row in 0..raster.height {
        for col in 0..raster.width {
            if raster.get(row, col) {
                out.set(row + 1, col + 1, true);
            }
        }
    }
    for p in raster.tags() {
        out.tag(p.row + 1, p.col + 1);
    }
    out
}

/// Remove the one-pixel border added by [`pad`]; fails if any border pixel
/// is set.
pub fn unpad(raster: &BinaryRaster) -> Result<BinaryRaster, RasterError> {
    for col in 0..raster.width {
        for row in [0, raster.height - 1] {
            if raster.get(row, col) {
                return Err(RasterError::SetBorderPixel { row, col });
            }
        }
    }
    for row in 0..raster.height {
        for col in [0, raster.width - 1] {
            if raster.get(row, col) {
                return Err(RasterError::SetBorderPixel { row, col });
            }
        }
    }
    let mut out = BinaryRaster::new(raster.width - 2, raster.height - 2);
    for row in 0..out.height {
        for col in 0..out.width {
            if raster.get(row + 1, col + 1) {
                out.set(row, col, true);
            }
        }
    }
    for p in raster.tags() {
        out.tag(p.row - 1, p.col - 1);
    }
    Ok(out)
}

/// Neighbor values P2..P9 clockwise from north.
#[inline]
fn neighborhood(raster: &BinaryRaster, row: usize, col: usize) -> [bool; 8] {
    [
        raster.get(row - 1, col),     // P2 N
        raster.get(row - 1, col + 1), // P3 NE
        raster.get(row, col + 1),     // P4 E
        raster.get(row + 1, col + 1), // P5 SE
        raster.get(row + 1, col),     // P6 S
        raster.get(row + 1, col - 1), // P7 SW
        raster.get(row, col - 1),     // P8 W
        raster.get(row - 1, col - 1), // P9 NW
    ]
}

fn transitions(p: &[bool; 8]) -> usize {
    let mut a = 0;
    for i in 0..8 {
        if !p[i] && p[(i + 1) % 8] {
            a += 1;
        }
    }
    a
}

/// Two-subpass thinning with tagged pixels exempt from removal.
///
/// A set pixel is flagged in subpass A when 2 <= B <= 6, A = 1,
/// P2·P4·P6 = 0 and P4·P6·P8 = 0; subpass B swaps the products for
/// P2·P4·P8 = 0 and P2·P6·P8 = 0. Flags are applied after each full scan
/// and the subpasses repeat until neither removes a pixel. The input must
/// be padded so every set pixel has a full neighborhood.
pub fn thin(raster: &BinaryRaster) -> Result<Skeleton, RasterError> {
    for col in 0..raster.width {
        if raster.get(0, col) || raster.get(raster.height - 1, col) {
            return Err(RasterError::NotPadded);
        }
    }
    for row in 0..raster.height {
        if raster.get(row, 0) || raster.get(row, raster.width - 1) {
            return Err(RasterError::NotPadded);
        }
    }
    let mut image = raster.clone();
    let mut flags: Vec<usize> = Vec::new();
    loop {
        let mut removed = false;
        for pass_b in [false, true] {
            flags.clear();
            for row in 1..image.height - 1 {
                for col in 1..image.width - 1 {
                    if !image.get(row, col) || image.is_tagged(row, col) {
                        continue;
                    }
                    let p = neighborhood(&image, row, col);
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) || transitions(&p) != 1 {
                        continue;
                    }
                    let (c1, c2) = if pass_b {
                        (p[0] && p[2] && p[6], p[0] && p[4] && p[6]) // P2P4P8, P2P6P8
                    } else {
                        (p[0] && p[2] && p[4], p[2] && p[4] && p[6]) // P2P4P6, P4P6P8
                    };
                    if !c1 && !c2 {
                        flags.push(image.idx(row, col));
                    }
                }
            }
            if !flags.is_empty() {
                removed = true;
                for &i in &flags {
                    image.bits[i] = false;
                }
            }
        }
        if !removed {
            break;
        }
    }
    Ok(Skeleton::from_raster(image))
}

/// Classify every skeleton pixel: exactly one set 8-neighbor is an end,
/// three or more distinct branches a joint, anything else regular.
///
/// Branches are counted as 0-to-1 transitions around the neighbor ring, so
/// a diagonal neighbor that belongs to the same branch as an adjacent
/// orthogonal neighbor is not double counted.
pub fn classify_pixels(raster: &BinaryRaster) -> Vec<PixelClass> {
    let at = |row: i64, col: i64| -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < raster.height
            && (col as usize) < raster.width
            && raster.get(row as usize, col as usize)
    };
    let mut classes = vec![PixelClass::Void; raster.width * raster.height];
    for row in 0..raster.height {
        for col in 0..raster.width {
            if !raster.get(row, col) {
                continue;
            }
            let (r, c) = (row as i64, col as i64);
            // Ring order: N, NE, E, SE, S, SW, W, NW.
            let ring = [
                at(r - 1, c),
                at(r - 1, c + 1),
                at(r, c + 1),
                at(r + 1, c + 1),
                at(r + 1, c),
                at(r + 1, c - 1),
                at(r, c - 1),
                at(r - 1, c - 1),
            ];
            let set_count = ring.iter().filter(|&&v| v).count();
            let branches = (0..8)
                .filter(|&i| !ring[i] && ring[(i + 1) % 8])
                .count();
            classes[row * raster.width + col] = if set_count == 1 {
                PixelClass::End
            } else if branches >= 3 {
                PixelClass::Joint
            } else {
                PixelClass::Regular
            };
        }
    }
    classes
}
