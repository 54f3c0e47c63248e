//! Ground-truth scalar fields on a fine regular grid.
//!
//! Fields are either synthesized as Gaussian random fields or loaded from
//! CSV. A fine-grid sample belongs to a region when its center lies in the
//! half-open rectangle `[x_min, x_max) x [y_min, y_max)`; this is the single
//! membership rule used for sensor averages, map predictions and RMSE.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::io::write_atomic;
use crate::kernel::Hyperparams;
use crate::ndtree::NdTree;

/// Ground-truth values at or above this are hotspots.
pub const HOTSPOT_THRESHOLD: f64 = 0.7;

// Largest circulant embedding per axis before falling back to Cholesky.
const MAX_EMBEDDING: usize = 1024;

/// Geometry of a regular grid of square samples covering `extent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineGrid {
    pub extent: Rect,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
}

impl FineGrid {
    pub fn new(extent: Rect, resolution: f64) -> Result<Self> {
        extent.validate()?;
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidField(format!(
                "resolution {resolution} must be positive"
            )));
        }
        let count = |len: f64| -> Result<usize> {
            let n = (len / resolution).round();
            if n < 1.0 || (n * resolution - len).abs() > 1e-9 * len {
                return Err(Error::InvalidField(format!(
                    "side {len} m is not a multiple of the {resolution} m resolution"
                )));
            }
            Ok(n as usize)
        };
        Ok(FineGrid {
            extent,
            resolution,
            nx: count(extent.width())?,
            ny: count(extent.height())?,
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Center of sample `(i, j)`; `j` counts rows from the south edge.
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.extent.x_min + (i as f64 + 0.5) * self.resolution,
            self.extent.y_min + (j as f64 + 0.5) * self.resolution,
        )
    }

    /// Column and row index ranges of the samples whose centers lie in
    /// `region`. Either range may be empty.
    pub fn index_ranges(&self, region: &Rect) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let xs = self.axis_range(region.x_min, region.x_max, self.extent.x_min, self.nx);
        let ys = self.axis_range(region.y_min, region.y_max, self.extent.y_min, self.ny);
        (xs, ys)
    }

    fn axis_range(&self, a: f64, b: f64, origin: f64, n: usize) -> std::ops::Range<usize> {
        let first = |edge: f64| -> usize {
            let t = (edge - origin) / self.resolution - 0.5;
            let r = t.round();
            let k = if (t - r).abs() < 1e-9 { r } else { t.ceil() };
            k.clamp(0.0, n as f64) as usize
        };
        let lo = first(a);
        let hi = first(b);
        lo..hi.max(lo)
    }

    pub fn sample_count(&self, region: &Rect) -> usize {
        let (xs, ys) = self.index_ranges(region);
        xs.len() * ys.len()
    }

    /// Leaf index of every sample, row-major from the south-west corner.
    pub fn leaf_map(&self, tree: &NdTree) -> Vec<usize> {
        let mut map = vec![usize::MAX; self.len()];
        for (leaf, rect) in tree.leaf_rects().iter().enumerate() {
            let (xs, ys) = self.index_ranges(rect);
            for j in ys {
                map[j * self.nx + xs.start..j * self.nx + xs.end].fill(leaf);
            }
        }
        debug_assert!(
            map.iter().all(|&l| l != usize::MAX),
            "leaves must tile the grid"
        );
        map
    }
}

/// Provenance and scaling of a field, stored next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMetadata {
    /// `[width, height]` in meters.
    pub extent_m: [f64; 2],
    #[serde(default)]
    pub origin_m: [f64; 2],
    pub resolution_m: f64,
    pub normalized: bool,
    /// Set when the random field came from the coarse Cholesky fallback.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cholesky_fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Immutable scalar field sampled on a [`FineGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthField {
    grid: FineGrid,
    // row-major, row 0 is the southern edge
    values: Vec<f64>,
    normalized: bool,
    cholesky_fallback: bool,
    seed: Option<u64>,
}

impl GroundTruthField {
    pub fn from_values(grid: FineGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite value".into()));
        }
        Ok(GroundTruthField {
            grid,
            values,
            normalized: false,
            cholesky_fallback: false,
            seed: None,
        })
    }

    /// Field defined by a function of the sample center.
    pub fn from_fn(grid: FineGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.center(i, j);
                values.push(f(x, y));
            }
        }
        Self::from_values(grid, values)
    }

    pub fn grid(&self) -> &FineGrid {
        &self.grid
    }

    pub fn extent(&self) -> Rect {
        self.grid.extent
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn used_cholesky_fallback(&self) -> bool {
        self.cholesky_fallback
    }

    pub fn metadata(&self) -> FieldMetadata {
        FieldMetadata {
            extent_m: [self.grid.extent.width(), self.grid.extent.height()],
            origin_m: [self.grid.extent.x_min, self.grid.extent.y_min],
            resolution_m: self.grid.resolution,
            normalized: self.normalized,
            cholesky_fallback: self.cholesky_fallback,
            seed: self.seed,
        }
    }

    /// Min-max rescaling to `[0, 1]`. A constant field maps to zeros.
    pub fn normalize(&mut self) {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if lo == 0.0 && hi == 1.0 {
            self.normalized = true;
            return;
        }
        let span = hi - lo;
        for v in &mut self.values {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
        self.normalized = true;
    }

    /// Samples above the hotspot threshold.
    pub fn hotspot_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v > HOTSPOT_THRESHOLD).collect()
    }

    /// Mean of the samples whose centers fall in `region`.
    pub fn average_over(&self, region: &Rect) -> Result<f64> {
        let (sum, count) = self.sum_over(region);
        if count == 0 {
            return Err(Error::EmptyRegion);
        }
        Ok(sum / count as f64)
    }

    /// Sum and count of the samples in `region`, plus their range.
    pub(crate) fn sum_over(&self, region: &Rect) -> (f64, usize) {
        let (xs, ys) = self.grid.index_ranges(region);
        let mut sum = 0.0;
        let count = xs.len() * ys.len();
        for j in ys {
            let row = &self.values[j * self.grid.nx..(j + 1) * self.grid.nx];
            sum += row[xs.clone()].iter().sum::<f64>();
        }
        (sum, count)
    }

    /// Writes the CSV and its `.json` sidecar, each atomically.
    ///
    /// The CSV is plain comma-separated floats, one grid row per line, the
    /// first line being the northern edge. Values are written in their
    /// shortest round-trip form so a load reproduces them bit for bit.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.values.len() * 20);
        for j in (0..self.grid.ny).rev() {
            let row = &self.values[j * self.grid.nx..(j + 1) * self.grid.nx];
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())?;
        let meta = serde_json::to_vec_pretty(&self.metadata()).expect("metadata serializes");
        write_atomic(&sidecar_path(path), &meta)
    }

    /// Reads a CSV field. Extent and resolution come from the `.json`
    /// sidecar when present; otherwise the grid is assumed to start at the
    /// origin with 0.1 m samples. With `normalize`, values are rescaled to
    /// `[0, 1]` unless the sidecar says they already are.
    pub fn load_csv(path: &Path, normalize: bool) -> Result<Self> {
        let rows = read_rows(path)?;
        let ny = rows.len();
        let nx = rows.first().map_or(0, Vec::len);
        if ny == 0 || nx == 0 {
            return Err(Error::CsvParse {
                path: path.to_path_buf(),
                row: 1,
                col: 1,
                msg: "empty field".into(),
            });
        }
        let sidecar = sidecar_path(path);
        let meta = if sidecar.exists() {
            let text = std::fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            Some(
                serde_json::from_slice::<FieldMetadata>(&text).map_err(|e| Error::Json {
                    path: sidecar.clone(),
                    source: e,
                })?,
            )
        } else {
            None
        };
        let (extent, resolution) = match &meta {
            Some(m) => (
                Rect::new(
                    m.origin_m[0],
                    m.origin_m[0] + m.extent_m[0],
                    m.origin_m[1],
                    m.origin_m[1] + m.extent_m[1],
                )?,
                m.resolution_m,
            ),
            None => (Rect::from_size(nx as f64 * 0.1, ny as f64 * 0.1)?, 0.1),
        };
        let grid = FineGrid::new(extent, resolution)?;
        if grid.nx != nx || grid.ny != ny {
            return Err(Error::InvalidField(format!(
                "CSV is {nx}x{ny} but the metadata describes {}x{}",
                grid.nx, grid.ny
            )));
        }
        let mut values = Vec::with_capacity(nx * ny);
        for row in rows.iter().rev() {
            values.extend_from_slice(row);
        }
        let mut field = GroundTruthField::from_values(grid, values)?;
        if let Some(m) = &meta {
            field.normalized = m.normalized;
            field.cholesky_fallback = m.cholesky_fallback;
            field.seed = m.seed;
        }
        if normalize && !field.normalized {
            field.normalize();
        }
        Ok(field)
    }
}

/// `field.csv` → `field.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::CsvParse {
                        path: path.to_path_buf(),
                        row: r + 1,
                        col: c + 1,
                        msg: format!("`{cell}` is not a finite number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::CsvParse {
                    path: path.to_path_buf(),
                    row: r + 1,
                    col: row.len().min(first.len()) + 1,
                    msg: format!("row has {} values, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::CsvParse {
            path: path.to_path_buf(),
            row,
            col: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// Seeded zero-mean Gaussian random field with the squared-exponential
/// covariance, min-max normalized to `[0, 1]`.
///
/// The sample is drawn exactly on the fine grid by circulant embedding: the
/// covariance of a periodic grid at least twice the field size (and several
/// length scales wider) is diagonalized by the 2-D FFT, and a complex white
/// noise colored by the square-rooted spectrum yields the field. If the
/// embedding has significantly negative eigenvalues, which happens when the
/// length scale is large relative to the largest allowed embedding, a field
/// is drawn by Cholesky factorization on a coarser grid and bilinearly
/// upsampled; [`GroundTruthField::used_cholesky_fallback`] then reports it.
pub fn generate_grf(
    seed: u64,
    extent: Rect,
    resolution: f64,
    hyper: &Hyperparams,
) -> Result<GroundTruthField> {
    hyper.validate()?;
    let grid = FineGrid::new(extent, resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (values, fallback) = match circulant_sample(&grid, hyper, &mut rng) {
        Some(v) => (v, false),
        None => (cholesky_sample(&grid, hyper, &mut rng)?, true),
    };
    let mut field = GroundTruthField::from_values(grid, values)?;
    field.cholesky_fallback = fallback;
    field.seed = Some(seed);
    field.normalize();
    Ok(field)
}

fn embedding_size(n: usize, res: f64, l: f64) -> usize {
    let reach = (10.0 * l / res).ceil() as usize;
    (2 * n).max(n + reach).next_power_of_two()
}

fn circulant_sample(
    grid: &FineGrid,
    hyper: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<f64>> {
    let res = grid.resolution;
    let l = hyper.length_scale;
    let mx = embedding_size(grid.nx, res, l)
        .min(MAX_EMBEDDING)
        .max(grid.nx.next_power_of_two());
    let my = embedding_size(grid.ny, res, l)
        .min(MAX_EMBEDDING)
        .max(grid.ny.next_power_of_two());
    let two_l2 = 2.0 * l * l;
    let mut c: Vec<Complex<f64>> = Vec::with_capacity(mx * my);
    for j in 0..my {
        let dy = j.min(my - j) as f64 * res;
        for i in 0..mx {
            let dx = i.min(mx - i) as f64 * res;
            let v = hyper.signal_variance * (-(dx * dx + dy * dy) / two_l2).exp();
            c.push(Complex::new(v, 0.0));
        }
    }
    let mut planner = FftPlanner::new();
    fft2(&mut planner, &mut c, mx, my);
    let lambda_max = c.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = c.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if lambda_min < -1e-8 * lambda_max {
        return None;
    }
    let scale = 1.0 / (mx * my) as f64;
    let mut w: Vec<Complex<f64>> = c
        .iter()
        .map(|lam| {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            Complex::new(a, b) * (lam.re.max(0.0) * scale).sqrt()
        })
        .collect();
    fft2(&mut planner, &mut w, mx, my);
    let mut out = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        out.extend(w[j * mx..j * mx + grid.nx].iter().map(|z| z.re));
    }
    Some(out)
}

/// In-place forward 2-D FFT of a row-major `my x mx` array.
fn fft2(planner: &mut FftPlanner<f64>, data: &mut [Complex<f64>], mx: usize, my: usize) {
    let row_fft = planner.plan_fft_forward(mx);
    for row in data.chunks_exact_mut(mx) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(my);
    let mut col = vec![Complex::new(0.0, 0.0); my];
    for i in 0..mx {
        for j in 0..my {
            col[j] = data[j * mx + i];
        }
        col_fft.process(&mut col);
        for j in 0..my {
            data[j * mx + i] = col[j];
        }
    }
}

fn cholesky_sample(grid: &FineGrid, hyper: &Hyperparams, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let e = grid.extent;
    let spacing = (hyper.length_scale / 4.0).max(grid.resolution);
    let kx = ((e.width() / spacing).ceil() as usize + 1).clamp(2, 60);
    let ky = ((e.height() / spacing).ceil() as usize + 1).clamp(2, 60);
    let pts: Vec<(f64, f64)> = (0..ky)
        .flat_map(|j| {
            (0..kx).map(move |i| {
                (
                    e.x_min + e.width() * i as f64 / (kx - 1) as f64,
                    e.y_min + e.height() * j as f64 / (ky - 1) as f64,
                )
            })
        })
        .collect();
    let n = pts.len();
    let mut k = DMatrix::from_fn(n, n, |a, b| crate::kernel::se_kernel(pts[a], pts[b], hyper));
    let jitter = 1e-8 * hyper.signal_variance;
    let chol = loop {
        if let Some(ch) = k.clone().cholesky() {
            break ch;
        }
        for i in 0..n {
            k[(i, i)] += jitter;
        }
    };
    let xi = nalgebra::DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let coarse = chol.l() * xi;
    let at = |i: usize, j: usize| coarse[j * kx + i];
    let mut out = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.center(i, j);
            let u = ((x - e.x_min) / e.width() * (kx - 1) as f64).clamp(0.0, (kx - 1) as f64);
            let v = ((y - e.y_min) / e.height() * (ky - 1) as f64).clamp(0.0, (ky - 1) as f64);
            let (i0, j0) = (
                (u.floor() as usize).min(kx - 2),
                (v.floor() as usize).min(ky - 2),
            );
            let (fu, fv) = (u - i0 as f64, v - j0 as f64);
            out.push(
                (1.0 - fu) * (1.0 - fv) * at(i0, j0)
                    + fu * (1.0 - fv) * at(i0 + 1, j0)
                    + (1.0 - fu) * fv * at(i0, j0 + 1)
                    + fu * fv * at(i0 + 1, j0 + 1),
            );
        }
    }
    Ok(out)
}
