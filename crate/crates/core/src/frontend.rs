//! Scalogram front end: SOM-learned convolution filters, tanh and two
//! max-pool stages, flattened to a short feature vector.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataprep::{segment_packet, FeatureSet};
use crate::error::{Error, Result};
use crate::seed::rng;
use crate::signal::IqPacket;
use crate::wavelet::{channel_select, Channel, CwtPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEndConfig {
    /// Patch height (scales) and width (translations).
    pub patch: (usize, usize),
    pub stride: (usize, usize),
    pub som_rows: usize,
    pub som_cols: usize,
    pub pools: Vec<(usize, usize)>,
    pub output_dim: usize,
}

impl Default for FrontEndConfig {
    /// Sized for a 128 x 2048 scalogram.
    fn default() -> Self {
        Self {
            patch: (8, 8),
            stride: (4, 4),
            som_rows: 4,
            som_cols: 4,
            pools: vec![(4, 8), (4, 8)],
            output_dim: 256,
        }
    }
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

impl FrontEndConfig {
    /// Default filters with pooling windows chosen so that a `rows x cols`
    /// scalogram still lands on a 2 x 8 grid per filter.
    pub fn for_input(rows: usize, cols: usize) -> Result<Self> {
        let base = Self::default();
        let (cr, cc) = base.conv_shape(rows, cols)?;
        let first = (4, 8);
        let (r1, c1) = (ceil_div(cr, first.0), ceil_div(cc, first.1));
        let second = (ceil_div(r1, 2), ceil_div(c1, 8));
        let cfg = Self {
            pools: vec![first, second],
            ..base
        };
        cfg.validate(rows, cols)?;
        Ok(cfg)
    }

    pub fn n_filters(&self) -> usize {
        self.som_rows * self.som_cols
    }

    pub fn patch_dim(&self) -> usize {
        self.patch.0 * self.patch.1
    }

    pub fn conv_shape(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        let (p, q) = self.patch;
        let (sp, sq) = self.stride;
        if p == 0 || q == 0 || sp == 0 || sq == 0 || rows < p || cols < q {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} scalogram with patch {p}x{q} and stride {sp}x{sq}"
            )));
        }
        Ok(((rows - p) / sp + 1, (cols - q) / sq + 1))
    }

    /// Per-filter grid after all pooling stages.
    pub fn pooled_shape(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        let (mut r, mut c) = self.conv_shape(rows, cols)?;
        for &(pr, pc) in &self.pools {
            if pr == 0 || pc == 0 {
                return Err(Error::InvalidParameter("zero pooling window".into()));
            }
            r = ceil_div(r, pr);
            c = ceil_div(c, pc);
        }
        Ok((r, c))
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.n_filters() == 0 {
            return Err(Error::InvalidParameter("no SOM filters".into()));
        }
        let (r, c) = self.pooled_shape(rows, cols)?;
        if r * c * self.n_filters() != self.output_dim {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} input gives {} features, expected {}",
                r * c * self.n_filters(),
                self.output_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub nodes: Vec<Vec<f64>>,
    pub lr_start: f64,
    pub lr_end: f64,
    pub radius_start: f64,
    pub radius_end: f64,
    pub seed: u64,
    pub trained: bool,
}

impl SomGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, seed: u64) -> Self {
        Self {
            rows,
            cols,
            dim,
            nodes: Vec::new(),
            lr_start: 0.5,
            lr_end: 0.01,
            radius_start: (rows.max(cols) as f64 / 2.0).max(1.0),
            radius_end: 0.5,
            seed,
            trained: false,
        }
    }

    pub fn k(&self) -> usize {
        self.rows * self.cols
    }

    pub fn best_match(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.nodes.iter().enumerate() {
            let d: f64 = n.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

/// Classical online SOM. Nodes start on distinct randomly chosen patches;
/// rate and Gaussian neighborhood radius decay geometrically over all steps.
pub fn train_som(patches: &[Vec<f64>], grid: &SomGrid, epochs: usize) -> Result<SomGrid> {
    if patches.is_empty() {
        return Err(Error::EmptyPatchSet);
    }
    if patches.iter().any(|p| p.len() != grid.dim) {
        return Err(Error::ShapeMismatch(format!("patches must have length {}", grid.dim)));
    }
    let k = grid.k();
    if k == 0 {
        return Err(Error::InvalidParameter("empty SOM grid".into()));
    }
    let mut r = rng(grid.seed, &[0x50e]);
    let mut som = grid.clone();
    som.nodes = (0..k).map(|_| patches[r.gen_range(0..patches.len())].clone()).collect();
    let total = (epochs.max(1) * patches.len()) as f64;
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut step = 0usize;
    for _ in 0..epochs.max(1) {
        order.shuffle(&mut r);
        for &i in &order {
            let frac = step as f64 / total;
            let lr = grid.lr_start * (grid.lr_end / grid.lr_start).powf(frac);
            let radius = grid.radius_start * (grid.radius_end / grid.radius_start).powf(frac);
            let x = &patches[i];
            let b = som.best_match(x);
            let (br, bc) = ((b / grid.cols) as f64, (b % grid.cols) as f64);
            for (j, node) in som.nodes.iter_mut().enumerate() {
                let (jr, jc) = ((j / grid.cols) as f64, (j % grid.cols) as f64);
                let d2 = (jr - br).powi(2) + (jc - bc).powi(2);
                let h = lr * (-d2 / (2.0 * radius * radius)).exp();
                if h < 1e-12 {
                    continue;
                }
                for (w, v) in node.iter_mut().zip(x) {
                    *w += h * (v - *w);
                }
            }
            step += 1;
        }
    }
    som.trained = true;
    Ok(som)
}

/// Flattened `p x q` patch with its top-left corner at `(r, c)`.
pub fn patch_at(s: &DMatrix<f64>, r: usize, c: usize, p: usize, q: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(p * q);
    for i in 0..p {
        for j in 0..q {
            out.push(s[(r + i, c + j)]);
        }
    }
    out
}

/// Trained front end: SOM filters plus the input scaling fitted on training
/// scalograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEnd {
    pub cfg: FrontEndConfig,
    pub som: SomGrid,
    pub input_scale: f64,
    pub input_shape: (usize, usize),
}

pub const PATCHES_PER_SCALOGRAM: usize = 32;
pub const SOM_EPOCHS: usize = 5;

impl FrontEnd {
    /// Sample patches from training scalograms, fit the input scale (largest
    /// sampled patch norm) and train the SOM on the scaled patches.
    pub fn fit<I>(scalograms: I, cfg: &FrontEndConfig, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = DMatrix<f64>>,
    {
        let mut r = rng(seed, &[0xf0e]);
        let (p, q) = cfg.patch;
        let mut patches = Vec::new();
        let mut shape = None;
        for s in scalograms {
            match shape {
                None => {
                    cfg.validate(s.nrows(), s.ncols())?;
                    shape = Some(s.shape());
                }
                Some(sh) if sh != s.shape() => {
                    return Err(Error::ShapeMismatch(format!("scalogram {:?} vs {:?}", s.shape(), sh)));
                }
                _ => {}
            }
            let (cr, cc) = cfg.conv_shape(s.nrows(), s.ncols())?;
            for _ in 0..PATCHES_PER_SCALOGRAM {
                let i = r.gen_range(0..cr) * cfg.stride.0;
                let j = r.gen_range(0..cc) * cfg.stride.1;
                patches.push(patch_at(&s, i, j, p, q));
            }
        }
        let shape = shape.ok_or(Error::EmptyPatchSet)?;
        let norm = |v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let input_scale = patches.iter().map(norm).fold(0.0, f64::max);
        let input_scale = if input_scale > 0.0 { input_scale } else { 1.0 };
        for v in &mut patches {
            v.iter_mut().for_each(|x| *x /= input_scale);
        }
        let grid = SomGrid::new(cfg.som_rows, cfg.som_cols, cfg.patch_dim(), seed);
        let som = train_som(&patches, &grid, SOM_EPOCHS)?;
        Ok(Self {
            cfg: cfg.clone(),
            som,
            input_scale,
            input_shape: shape,
        })
    }

    /// Unit-norm filters, one row each.
    fn filters(&self) -> DMatrix<f64> {
        let k = self.som.nodes.len();
        let d = self.cfg.patch_dim();
        DMatrix::from_fn(k, d, |i, j| {
            let n = self.som.nodes[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                self.som.nodes[i][j] / n
            } else {
                0.0
            }
        })
    }

    pub fn extract(&self, s: &DMatrix<f64>) -> Result<Vec<f64>> {
        extract_features(s, &self.som, &self.cfg, self.input_scale)
    }
}

/// Valid strided convolution with each unit-norm SOM filter, tanh, max
/// pooling (partial windows at the edges) and filter-major flattening.
pub fn extract_features(s: &DMatrix<f64>, som: &SomGrid, cfg: &FrontEndConfig, input_scale: f64) -> Result<Vec<f64>> {
    if !som.trained {
        return Err(Error::UntrainedModel);
    }
    if som.dim != cfg.patch_dim() || som.k() != cfg.n_filters() {
        return Err(Error::ShapeMismatch("SOM does not match front-end config".into()));
    }
    cfg.validate(s.nrows(), s.ncols())?;
    let fe = FrontEnd {
        cfg: cfg.clone(),
        som: som.clone(),
        input_scale,
        input_shape: s.shape(),
    };
    let filters = fe.filters();
    let (cr, cc) = cfg.conv_shape(s.nrows(), s.ncols())?;
    let (p, q) = cfg.patch;
    let inv = 1.0 / input_scale;
    let mut cols = DMatrix::zeros(cfg.patch_dim(), cr * cc);
    for i in 0..cr {
        for j in 0..cc {
            let mut col = cols.column_mut(i * cc + j);
            let (r0, c0) = (i * cfg.stride.0, j * cfg.stride.1);
            for a in 0..p {
                for b in 0..q {
                    col[a * q + b] = s[(r0 + a, c0 + b)] * inv;
                }
            }
        }
    }
    let conv = (filters * cols).map(f64::tanh);
    let mut out = Vec::with_capacity(cfg.output_dim);
    for f in 0..cfg.n_filters() {
        let mut map = DMatrix::from_fn(cr, cc, |i, j| conv[(f, i * cc + j)]);
        for &(pr, pc) in &cfg.pools {
            map = max_pool(&map, pr, pc);
        }
        for i in 0..map.nrows() {
            out.extend(map.row(i).iter());
        }
    }
    Ok(out)
}

pub fn max_pool(m: &DMatrix<f64>, pr: usize, pc: usize) -> DMatrix<f64> {
    let (r, c) = (ceil_div(m.nrows(), pr), ceil_div(m.ncols(), pc));
    DMatrix::from_fn(r, c, |i, j| {
        let mut best = f64::NEG_INFINITY;
        for a in i * pr..((i + 1) * pr).min(m.nrows()) {
            for b in j * pc..((j + 1) * pc).min(m.ncols()) {
                best = best.max(m[(a, b)]);
            }
        }
        best
    })
}

/// Scalogram of one channel of the packet's wN segment.
pub fn packet_scalogram(p: &IqPacket, tau: f64, channel: Channel, plan: &CwtPlan) -> Result<DMatrix<f64>> {
    let seg = segment_packet(p, tau, plan.len())?;
    plan.scalogram(&channel_select(&seg.g, channel))
}

/// Front-end features for every packet.
pub fn wavelet_features(packets: &[IqPacket], fe: &FrontEnd, plan: &CwtPlan, tau: f64, channel: Channel) -> Result<FeatureSet> {
    use rayon::prelude::*;
    let rows: Vec<Vec<f64>> = packets
        .par_iter()
        .map(|p| fe.extract(&packet_scalogram(p, tau, channel, plan)?))
        .collect::<Result<_>>()?;
    let mut set = FeatureSet::new(fe.cfg.output_dim);
    for (p, v) in packets.iter().zip(rows) {
        set.push(&v, p.tx_label, p.name.clone())?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensional_contract() {
        let cfg = FrontEndConfig::default();
        assert_eq!(cfg.conv_shape(128, 2048).unwrap(), (31, 511));
        assert_eq!(cfg.pooled_shape(128, 2048).unwrap(), (2, 8));
        cfg.validate(128, 2048).unwrap();
        assert!(cfg.validate(128, 1000).is_err());
        for cols in [1024, 512, 2048] {
            let c = FrontEndConfig::for_input(128, cols).unwrap();
            assert_eq!(c.pooled_shape(128, cols).unwrap(), (2, 8));
        }
    }

    #[test]
    fn som_single_patch_fixed_point() {
        let patch = vec![0.3, -0.2, 0.9, 0.1];
        let som = train_som(&[patch.clone()], &SomGrid::new(1, 1, 4, 0), 50).unwrap();
        let d: f64 = som.nodes[0].iter().zip(&patch).map(|(a, b)| (a - b).abs()).sum();
        assert!(d < 1e-6);
        assert!(train_som(&[], &SomGrid::new(1, 1, 4, 0), 1).is_err());
    }

    #[test]
    fn som_two_clusters() {
        let mut r = rng(9, &[]);
        let mut pts = Vec::new();
        for i in 0..200 {
            let c = if i % 2 == 0 { 1.0 } else { -1.0 };
            pts.push(vec![c + r.gen_range(-0.1..0.1), c + r.gen_range(-0.1..0.1)]);
        }
        let mut grid = SomGrid::new(1, 2, 2, 4);
        grid.radius_start = 1.0;
        grid.radius_end = 0.1;
        let som = train_som(&pts, &grid, 10).unwrap();
        let near = |c: f64| som.nodes.iter().position(|n| (n[0] - c).abs() < 0.1 && (n[1] - c).abs() < 0.1);
        let (a, b) = (near(1.0).unwrap(), near(-1.0).unwrap());
        assert_ne!(a, b);
        assert_eq!(som, train_som(&pts, &grid, 10).unwrap());
    }

    fn toy_frontend() -> FrontEnd {
        let cfg = FrontEndConfig::for_input(32, 256).unwrap();
        let scal: Vec<DMatrix<f64>> = (0..4)
            .map(|k| DMatrix::from_fn(32, 256, |i, j| ((i * 3 + j * (k + 1)) % 7) as f64))
            .collect();
        FrontEnd::fit(scal, &cfg, 1).unwrap()
    }

    #[test]
    fn zero_input_and_monotone_max() {
        let fe = toy_frontend();
        let zero = fe.extract(&DMatrix::zeros(32, 256)).unwrap();
        assert_eq!(zero.len(), fe.cfg.output_dim);
        assert!(zero.iter().all(|v| *v == 0.0));
        let mut s = DMatrix::from_element(32, 256, 0.1);
        s[(10, 40)] = 2.0;
        let base = fe.extract(&s).unwrap();
        s[(10, 40)] = 4.0;
        let bright = fe.extract(&s).unwrap();
        // SOM nodes are averages of non-negative patches, so every filter
        // weight is non-negative and brightening a pixel cannot lower a max.
        assert!(fe.som.nodes.iter().flatten().all(|w| *w >= 0.0));
        for (a, b) in base.iter().zip(&bright) {
            assert!(b >= a);
        }
    }

    #[test]
    fn untrained_som_rejected() {
        let cfg = FrontEndConfig::default();
        let som = SomGrid::new(4, 4, 64, 0);
        assert!(matches!(
            extract_features(&DMatrix::zeros(128, 2048), &som, &cfg, 1.0),
            Err(Error::UntrainedModel)
        ));
    }

    #[test]
    fn pooling_takes_partial_windows() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let p = max_pool(&m, 2, 2);
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 8.0, 9.0]));
    }
}
