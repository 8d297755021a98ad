//! Per-pixel probability rasters: grid files, batched prediction, heat-map
//! rendering and block aggregation.
//!
//! Grid file layout (integers and floats little-endian):
//!
//! ```text
//! "PXGR" | u32 version | u32 width | u32 height | u32 n_features
//! f64 origin_x | f64 origin_y | f64 pixel_width | f64 pixel_height
//! per feature: u32 len, UTF-8 name
//! nodata bitmask, ceil(width * height / 8) bytes, least significant bit first
//! n_features planes of width * height f32, row-major
//! u8 block-id flag | if 1: width * height u32 block ids
//! u32 CRC32 of every preceding byte
//! ```

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::BinaryClassifier;
use crate::error::{dim_err, Error, Result};
use crate::eval::TabularDataset;
use crate::numerics::{ExactSum, Tensor};
use crate::pfn::file::Reader;
use crate::preprocess::{transform, FittedStats, PreprocessPlan};

pub const GRID_MAGIC: &[u8; 4] = b"PXGR";
pub const GRID_VERSION: u32 = 1;
/// Pixels predicted per call to the model.
pub const PREDICT_BATCH: usize = 4096;

/// Georeferencing carried through unchanged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeoRef {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_width: f64,
    pub pixel_height: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelGrid {
    pub width: usize,
    pub height: usize,
    pub feature_names: Vec<String>,
    /// `n_features` planes of `width * height` values, row-major.
    pub planes: Vec<f32>,
    pub nodata: Vec<bool>,
    pub block_id: Option<Vec<u32>>,
    pub georef: GeoRef,
}

impl PixelGrid {
    pub fn new(
        width: usize,
        height: usize,
        feature_names: Vec<String>,
        planes: Vec<f32>,
        nodata: Vec<bool>,
        block_id: Option<Vec<u32>>,
        georef: GeoRef,
    ) -> Result<Self> {
        let n = width.checked_mul(height).ok_or_else(|| Error::InvalidInput("grid too large".into()))?;
        if n == 0 {
            return Err(Error::InvalidInput("grid must have at least one pixel".into()));
        }
        if planes.len() != n * feature_names.len() || nodata.len() != n || block_id.as_ref().is_some_and(|b| b.len() != n) {
            return dim_err(format!(
                "grid {width}x{height} with {} features has inconsistent plane, mask or block lengths",
                feature_names.len()
            ));
        }
        Ok(Self { width, height, feature_names, planes, nodata, block_id, georef })
    }

    /// A `width x height` grid holding tabular rows in row-major pixel order,
    /// rounded to `f32`.
    pub fn from_rows(rows: &Tensor<f64>, width: usize, height: usize, feature_names: Vec<String>) -> Result<Self> {
        let (n, f) = rows.dims2()?;
        if n != width * height {
            return dim_err(format!("{n} rows do not fill a {width}x{height} grid"));
        }
        let mut planes = vec![0f32; n * f];
        for i in 0..n {
            for (j, &v) in rows.row(i).iter().enumerate() {
                planes[j * n + i] = v as f32;
            }
        }
        Self::new(width, height, feature_names, planes, vec![false; n], None, GeoRef::default())
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Keeps the named planes, in the order given.
    pub fn select_features(&self, names: &[String]) -> Result<Self> {
        let n = self.n_pixels();
        let mut planes = Vec::with_capacity(n * names.len());
        for name in names {
            let j = self
                .feature_names
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| Error::InvalidInput(format!("grid has no feature named {name:?}")))?;
            planes.extend_from_slice(&self.planes[j * n..(j + 1) * n]);
        }
        Ok(Self { feature_names: names.to_vec(), planes, ..self.clone() })
    }

    fn pixel_rows(&self, pixels: &[usize]) -> Result<Tensor<f64>> {
        let (n, f) = (self.n_pixels(), self.n_features());
        let mut data = Vec::with_capacity(pixels.len() * f);
        for &p in pixels {
            data.extend((0..f).map(|j| self.planes[j * n + p] as f64));
        }
        Tensor::new(vec![pixels.len(), f], data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(GRID_MAGIC);
        for v in [GRID_VERSION, self.width as u32, self.height as u32, self.n_features() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let g = &self.georef;
        for v in [g.origin_x, g.origin_y, g.pixel_width, g.pixel_height] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for name in &self.feature_names {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        let mut mask = vec![0u8; self.n_pixels().div_ceil(8)];
        for (i, _) in self.nodata.iter().enumerate().filter(|(_, &m)| m) {
            mask[i / 8] |= 1 << (i % 8);
        }
        out.extend_from_slice(&mask);
        for v in &self.planes {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.block_id {
            None => out.push(0),
            Some(ids) => {
                out.push(1);
                ids.iter().for_each(|b| out.extend_from_slice(&b.to_le_bytes()));
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses a grid file; the magic and CRC are checked before the body.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != GRID_MAGIC {
            return Err(Error::Format("bad grid magic".into()));
        }
        if bytes.len() < 8 {
            return Err(Error::Format("grid file truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(Error::Format("grid CRC mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != GRID_VERSION {
            return Err(Error::Format(format!("unsupported grid version {version}")));
        }
        let (width, height, f) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let georef = GeoRef { origin_x: r.f64()?, origin_y: r.f64()?, pixel_width: r.f64()?, pixel_height: r.f64()? };
        let names = (0..f)
            .map(|_| {
                let len = r.u32()? as usize;
                String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::Format(format!("feature name: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = width.checked_mul(height).ok_or_else(|| Error::Format("grid too large".into()))?;
        let mask = r.take(n.div_ceil(8))?;
        let nodata = (0..n).map(|i| mask[i / 8] >> (i % 8) & 1 == 1).collect();
        let plane_bytes = n.checked_mul(f).and_then(|v| v.checked_mul(4)).ok_or_else(|| Error::Format("grid too large".into()))?;
        let planes = r.take(plane_bytes)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
        let block_id = match r.take(1)?[0] {
            0 => None,
            1 => Some(r.take(n * 4)?.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4"))).collect()),
            flag => return Err(Error::Format(format!("bad block-id flag {flag}"))),
        };
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes in grid file".into()));
        }
        Self::new(width, height, names, planes, nodata, block_id, georef).map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityRaster {
    pub width: usize,
    pub height: usize,
    /// Positive-class probability per pixel; NaN where masked.
    pub probs: Vec<f64>,
    pub nodata: Vec<bool>,
}

/// Predicts every unmasked pixel, optionally after applying fitted
/// preprocessing; masked pixels stay masked.
pub fn predict_grid(
    predictor: &dyn BinaryClassifier,
    grid: &PixelGrid,
    preprocess: Option<(&FittedStats, &PreprocessPlan)>,
) -> Result<ProbabilityRaster> {
    if grid.n_features() != predictor.n_features() {
        return dim_err(format!("grid has {} features, the model expects {}", grid.n_features(), predictor.n_features()));
    }
    let live: Vec<usize> = (0..grid.n_pixels()).filter(|&p| !grid.nodata[p]).collect();
    let mut probs = vec![f64::NAN; grid.n_pixels()];
    for batch in live.chunks(PREDICT_BATCH) {
        let mut rows = grid.pixel_rows(batch)?;
        if let Some((stats, plan)) = preprocess {
            rows = transform(&rows, stats, plan)?;
        }
        let p = predictor.predict_proba(&rows)?;
        if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Numeric(format!("model returned probability {bad}")));
        }
        for (&pixel, v) in batch.iter().zip(p) {
            probs[pixel] = v;
        }
    }
    Ok(ProbabilityRaster { width: grid.width, height: grid.height, probs, nodata: grid.nodata.clone() })
}

/// Linear RGB ramp between two endpoint colours.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Colormap {
    pub low: [u8; 3],
    pub high: [u8; 3],
}

impl Default for Colormap {
    /// Green at probability 0, yellow at 1.
    fn default() -> Self {
        Self { low: [0, 128, 0], high: [255, 255, 0] }
    }
}

impl Colormap {
    /// Opaque colour of `p`, each channel rounded half up.
    pub fn color(&self, p: f64) -> [u8; 4] {
        let p = p.clamp(0.0, 1.0);
        let mut out = [0, 0, 0, 255];
        for c in 0..3 {
            let (lo, hi) = (self.low[c] as f64, self.high[c] as f64);
            out[c] = (lo + (hi - lo) * p + 0.5).floor() as u8;
        }
        out
    }
}

/// RGBA pixels, row-major; masked pixels are fully transparent.
pub fn render_rgba(raster: &ProbabilityRaster, colormap: &Colormap) -> Vec<u8> {
    raster.probs.iter().zip(&raster.nodata).flat_map(|(&p, &masked)| if masked { [0, 0, 0, 0] } else { colormap.color(p) }).collect()
}

/// 8-bit RGBA PNG of the raster.
pub fn render_png(raster: &ProbabilityRaster, colormap: &Colormap) -> Result<Vec<u8>> {
    let rgba = render_rgba(raster, colormap);
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(encoder, &rgba, raster.width as u32, raster.height as u32, image::ExtendedColorType::Rgba8)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMean {
    pub block_id: u32,
    pub mean_probability: f64,
    pub n_pixels: usize,
}

/// Mean probability over the unmasked pixels of each block, by block id.
pub fn aggregate_blocks(raster: &ProbabilityRaster, block_id: &[u32]) -> Result<Vec<BlockMean>> {
    if block_id.len() != raster.probs.len() {
        return dim_err(format!("{} block ids for {} pixels", block_id.len(), raster.probs.len()));
    }
    let mut acc: BTreeMap<u32, (ExactSum, usize)> = BTreeMap::new();
    for ((&p, &masked), &b) in raster.probs.iter().zip(&raster.nodata).zip(block_id) {
        if !masked {
            let e = acc.entry(b).or_default();
            e.0.add(p);
            e.1 += 1;
        }
    }
    Ok(acc.into_iter().map(|(block_id, (sum, n))| BlockMean { block_id, mean_probability: sum.value() / n as f64, n_pixels: n }).collect())
}

pub fn block_csv(blocks: &[BlockMean]) -> String {
    let mut s = String::from("block_id,mean_probability,n_pixels\n");
    for b in blocks {
        s.push_str(&format!("{},{},{}\n", b.block_id, crate::eval::round6(b.mean_probability), b.n_pixels));
    }
    s
}

/// Demo field: the grid is cut into `blocks_x * blocks_y` rectangular blocks,
/// each seeded from a random dataset row (missing cells take the column mean). Columns whose name starts with
/// `spectral` vary per pixel around the source value; the others are
/// broadcast block attributes. A one-pixel lane between blocks and the
/// corners outside an elliptical boundary are masked.
pub fn demo_grid(dataset: &TabularDataset, seed: u64, width: usize, height: usize, blocks_x: usize, blocks_y: usize) -> Result<PixelGrid> {
    if width == 0 || height == 0 || blocks_x == 0 || blocks_y == 0 || blocks_x > width || blocks_y > height {
        return Err(Error::InvalidInput(format!("cannot cut a {width}x{height} grid into {blocks_x}x{blocks_y} blocks")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, f) = dataset.x.dims2()?;
    let n = width * height;
    // Per column mean (fills missing source cells) and std (jitter scale).
    let moments: Vec<(f64, f64)> = (0..f)
        .map(|j| {
            let v: Vec<f64> = (0..rows).map(|i| dataset.x.at(i, j)).filter(|v| v.is_finite()).collect();
            let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
            (mean, (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len().max(1) as f64).sqrt())
        })
        .collect();
    let spectral: Vec<bool> = dataset.feature_names.iter().map(|s| s.starts_with("spectral")).collect();
    let source: Vec<usize> = (0..blocks_x * blocks_y).map(|_| rng.random_range(0..rows)).collect();
    let mut planes = vec![0f32; n * f];
    let mut nodata = vec![false; n];
    let mut block_id = vec![0u32; n];
    for yy in 0..height {
        for xx in 0..width {
            let p = yy * width + xx;
            let (bx, by) = (xx * blocks_x / width, yy * blocks_y / height);
            let b = by * blocks_x + bx;
            block_id[p] = b as u32;
            let lane = (xx > 0 && (xx - 1) * blocks_x / width != bx) || (yy > 0 && (yy - 1) * blocks_y / height != by);
            let (u, v) = ((xx as f64 + 0.5) / width as f64 - 0.5, (yy as f64 + 0.5) / height as f64 - 0.5);
            nodata[p] = lane || u * u + v * v > 0.3;
            let row = dataset.x.row(source[b]);
            for j in 0..f {
                let (mean, std) = moments[j];
                let base = if row[j].is_nan() { mean } else { row[j] };
                let jitter = if spectral[j] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    0.15 * std * z
                } else {
                    0.0
                };
                planes[j * n + p] = (base + jitter) as f32;
            }
        }
    }
    let georef = GeoRef { origin_x: 0.0, origin_y: 0.0, pixel_width: 1.0, pixel_height: 1.0 };
    PixelGrid::new(width, height, dataset.feature_names.clone(), planes, nodata, Some(block_id), georef)
}
