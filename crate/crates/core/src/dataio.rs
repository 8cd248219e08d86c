//! MNIST ingestion: IDX decoding, class filtering, PCA, angle scaling and a
//! binary cache for reduced features.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::parallel::{map_indexed, stream_rng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Environment variable naming the directory with the four IDX files.
pub const DATA_DIR_ENV: &str = "QRESNET_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxTensor {
    Images(RawImages),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Malformed(format!("truncated header at byte {at}")))
}

fn body<'a>(bytes: &'a [u8], header: usize, dims: &[u32]) -> Result<&'a [u8]> {
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::Malformed("declared dimensions overflow".into()))?;
    let rest = &bytes[header.min(bytes.len())..];
    if rest.len() != n {
        return Err(Error::Malformed(format!(
            "header declares {n} data bytes, found {}",
            rest.len()
        )));
    }
    Ok(rest)
}

/// Decodes an unsigned-byte IDX file holding images (3-D) or labels (1-D).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    match be_u32(bytes, 0)? {
        IDX_IMAGES_MAGIC => parse_idx_images(bytes).map(IdxTensor::Images),
        IDX_LABELS_MAGIC => parse_idx_labels(bytes).map(IdxTensor::Labels),
        found => Err(Error::BadMagic {
            found,
            expected: IDX_IMAGES_MAGIC,
        }),
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let dims = [be_u32(bytes, 4)?, be_u32(bytes, 8)?, be_u32(bytes, 12)?];
    let data = body(bytes, 16, &dims)?;
    Ok(RawImages {
        count: dims[0] as usize,
        rows: dims[1] as usize,
        cols: dims[2] as usize,
        pixels: data.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let dims = [be_u32(bytes, 4)?];
    Ok(body(bytes, 8, &dims)?.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Feature rows with their digit labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        }
    }
}

/// Keeps images whose label is in `keep`, in file order, with pixels
/// scaled to `[0, 1]`.
pub fn filter_classes(
    images: &RawImages,
    labels: &[u8],
    keep: &[u8],
    split: Split,
) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::Dimension(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let idx: Vec<usize> = (0..labels.len())
        .filter(|&i| keep.contains(&labels[i]))
        .collect();
    Ok(Dataset {
        features: idx
            .iter()
            .map(|&i| images.image(i).iter().map(|&p| p as f64 / 255.0).collect())
            .collect(),
        labels: idx.iter().map(|&i| labels[i]).collect(),
        split,
    })
}

pub const PCA_TOL: f64 = 1e-9;
pub const PCA_MAX_ITER: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Unit vectors, strongest first.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Covariance `(1/D) Σ (x − μ)(x − μ)ᵀ`, accumulated over row blocks that
/// are summed in block order.
fn covariance(x: &[Vec<f64>], mean: &[f64]) -> Vec<Vec<f64>> {
    let p = mean.len();
    const BLOCK: usize = 512;
    let blocks = x.len().div_ceil(BLOCK);
    let partials = map_indexed(blocks, |b| {
        let mut acc = vec![0.0; p * p];
        let mut centered = vec![0.0; p];
        for row in &x[b * BLOCK..((b + 1) * BLOCK).min(x.len())] {
            for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(mean)) {
                *c = v - m;
            }
            for i in 0..p {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                let dst = &mut acc[i * p..i * p + p];
                for j in i..p {
                    dst[j] += ci * centered[j];
                }
            }
        }
        acc
    });
    let mut cov = vec![vec![0.0; p]; p];
    for part in partials {
        for i in 0..p {
            for j in i..p {
                cov[i][j] += part[i * p + j];
            }
        }
    }
    let d = x.len() as f64;
    for i in 0..p {
        for j in i..p {
            cov[i][j] /= d;
            cov[j][i] = cov[i][j];
        }
    }
    cov
}

/// Top-`k` principal components by power iteration with Gram–Schmidt
/// deflation. Each component's largest-magnitude entry is made positive.
pub fn pca_fit(x: &[Vec<f64>], k: usize) -> Result<PcaModel> {
    let d = x.len();
    let p = x.first().map_or(0, Vec::len);
    if d == 0 || p == 0 {
        return Err(Error::Empty("PCA input".into()));
    }
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::Dimension("ragged PCA input".into()));
    }
    if k == 0 || k > d.min(p) || d <= k {
        return Err(Error::Validation(format!(
            "cannot extract {k} components from {d} rows of width {p}"
        )));
    }
    let mut mean = vec![0.0; p];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= d as f64);
    let cov = covariance(x, &mean);

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for c in 0..k {
        let mut v: Vec<f64> = (0..p)
            .map(|i| 1.0 + ((i * 7 + c * 13) % 17) as f64 / 17.0)
            .collect();
        let orth = |w: &mut Vec<f64>, comps: &[Vec<f64>]| {
            for u in comps {
                let s = dot(w, u);
                w.iter_mut().zip(u).for_each(|(a, b)| *a -= s * b);
            }
        };
        orth(&mut v, &components);
        normalize(&mut v);
        let mut converged = false;
        for _ in 0..PCA_MAX_ITER {
            let mut w: Vec<f64> = cov.iter().map(|row| dot(row, &v)).collect();
            orth(&mut w, &components);
            if normalize(&mut w) == 0.0 {
                converged = true;
                v = w;
                break;
            }
            let change = w
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = w;
            if change < PCA_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                component: c,
                iterations: PCA_MAX_ITER,
            });
        }
        let lead = (0..p)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let cv: Vec<f64> = cov.iter().map(|row| dot(row, &v)).collect();
        variances.push(dot(&v, &cv).max(0.0));
        components.push(v);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: variances,
    })
}

/// `(X − mean) · componentsᵀ`
pub fn pca_transform(model: &PcaModel, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let p = model.mean.len();
    x.iter()
        .map(|row| {
            if row.len() != p {
                return Err(Error::Dimension(format!(
                    "row of width {} for a PCA model of width {p}",
                    row.len()
                )));
            }
            let centered: Vec<f64> = row.iter().zip(&model.mean).map(|(a, b)| a - b).collect();
            Ok(model.components.iter().map(|c| dot(c, &centered)).collect())
        })
        .collect()
}

/// `mean + Σ f_k c_k`
pub fn pca_reconstruct(model: &PcaModel, features: &[f64]) -> Vec<f64> {
    let mut out = model.mean.clone();
    for (f, c) in features.iter().zip(&model.components) {
        out.iter_mut().zip(c).for_each(|(o, ci)| *o += f * ci);
    }
    out
}

/// Per-feature affine map of the training range onto `[0, π]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScale {
    pub fn fit(train: &[Vec<f64>]) -> Result<Self> {
        let k = train.first().map_or(0, Vec::len);
        if train.is_empty() || k == 0 {
            return Err(Error::Empty("training features".into()));
        }
        let mut min = vec![f64::INFINITY; k];
        let mut max = vec![f64::NEG_INFINITY; k];
        for row in train {
            if row.len() != k {
                return Err(Error::Dimension("ragged feature rows".into()));
            }
            for j in 0..k {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        if let Some(j) = (0..k).find(|&j| !(max[j] > min[j])) {
            return Err(Error::DegenerateFeature(j));
        }
        Ok(FeatureScale { min, max })
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|row| {
                if row.len() != self.min.len() {
                    return Err(Error::Dimension("feature width differs from scale".into()));
                }
                Ok(row
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (v - self.min[j]) / (self.max[j] - self.min[j]) * PI)
                    .collect())
            })
            .collect()
    }
}

/// Scales both sets with the map fitted on `train`; test values are not
/// clipped.
pub fn scale_features(
    train: &[Vec<f64>],
    test: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, FeatureScale)> {
    let scale = FeatureScale::fit(train)?;
    Ok((scale.apply(train)?, scale.apply(test)?, scale))
}

/// `n` indices with class proportions preserved (largest class rounded),
/// drawn from stream 0 of `seed`, returned in ascending order.
pub fn stratified_indices(labels: &[u8], n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > labels.len() {
        return Err(Error::Validation(format!(
            "cannot draw {n} of {} samples",
            labels.len()
        )));
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let groups: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    let mut quotas: Vec<usize> = groups
        .iter()
        .map(|g| (n as f64 * g.len() as f64 / labels.len() as f64).round() as usize)
        .collect();
    let assigned: usize = quotas.iter().sum();
    let largest = (0..groups.len())
        .max_by_key(|&g| groups[g].len())
        .unwrap_or(0);
    quotas[largest] = (quotas[largest] + n)
        .saturating_sub(assigned)
        .min(groups[largest].len());
    let mut rng = stream_rng(seed, 0);
    let mut out = Vec::with_capacity(n);
    for (g, &q) in groups.iter().zip(&quotas) {
        out.extend(
            sample(&mut rng, g.len(), q.min(g.len()))
                .into_iter()
                .map(|i| g[i]),
        );
    }
    out.sort_unstable();
    Ok(out)
}

const CACHE_MAGIC: &[u8; 4] = b"QRNF";
const CACHE_VERSION: u32 = 1;

/// `QRNF`, version, `D`, `k` (u32 LE), `D·k` f64 LE row-major, `D` label bytes.
pub fn encode_feature_cache(features: &[Vec<f64>], labels: &[u8]) -> Result<Vec<u8>> {
    if features.len() != labels.len() {
        return Err(Error::Dimension(
            "features and labels differ in length".into(),
        ));
    }
    let k = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != k) {
        return Err(Error::Dimension("ragged feature rows".into()));
    }
    let d = u32::try_from(features.len()).map_err(|_| Error::Capacity("too many rows".into()))?;
    let mut out = Vec::with_capacity(16 + features.len() * (8 * k + 1));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    for row in features {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(labels);
    Ok(out)
}

pub fn decode_feature_cache(bytes: &[u8]) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    if bytes.len() < 16 || &bytes[..4] != CACHE_MAGIC {
        return Err(Error::Malformed("not a feature cache".into()));
    }
    let le =
        |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    if le(4) != CACHE_VERSION {
        return Err(Error::Malformed(format!(
            "unsupported cache version {}",
            le(4)
        )));
    }
    let (d, k) = (le(8) as usize, le(12) as usize);
    let need = d
        .checked_mul(k)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(d + 16))
        .ok_or_else(|| Error::Malformed("cache dimensions overflow".into()))?;
    if bytes.len() != need {
        return Err(Error::Malformed(format!(
            "cache should hold {need} bytes, found {}",
            bytes.len()
        )));
    }
    let mut features = Vec::with_capacity(d);
    let mut at = 16;
    for _ in 0..d {
        let mut row = Vec::with_capacity(k);
        for _ in 0..k {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[at..at + 8]);
            row.push(f64::from_le_bytes(b));
            at += 8;
        }
        features.push(row);
    }
    Ok((features, bytes[at..].to_vec()))
}

pub fn write_feature_cache(path: &Path, features: &[Vec<f64>], labels: &[u8]) -> Result<()> {
    std::fs::write(path, encode_feature_cache(features, labels)?)?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    decode_feature_cache(&std::fs::read(path)?)
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    std::fs::read(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// The train and test sets restricted to `classes`.
pub fn load_mnist(dir: &Path, classes: &[u8]) -> Result<(Dataset, Dataset)> {
    let train = filter_classes(
        &parse_idx_images(&read_file(dir, TRAIN_IMAGES)?)?,
        &parse_idx_labels(&read_file(dir, TRAIN_LABELS)?)?,
        classes,
        Split::Train,
    )?;
    let test = filter_classes(
        &parse_idx_images(&read_file(dir, TEST_IMAGES)?)?,
        &parse_idx_labels(&read_file(dir, TEST_LABELS)?)?,
        classes,
        Split::Test,
    )?;
    Ok((train, test))
}

/// Reduced, angle-scaled features ready for encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub explained_variance: Vec<f64>,
    pub scale: FeatureScale,
}

/// Filters classes, fits PCA with `k` components on the training set and
/// scales both sets to angles using the training range.
pub fn prepare_features(dir: &Path, classes: &[u8], k: usize) -> Result<PreparedData> {
    let (train, test) = load_mnist(dir, classes)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty(format!("no samples of classes {classes:?}")));
    }
    let pca = pca_fit(&train.features, k)?;
    let tr = pca_transform(&pca, &train.features)?;
    let te = pca_transform(&pca, &test.features)?;
    let (tr, te, scale) = scale_features(&tr, &te)?;
    Ok(PreparedData {
        train: Dataset {
            features: tr,
            labels: train.labels,
            split: Split::Train,
        },
        test: Dataset {
            features: te,
            labels: test.labels,
            split: Split::Test,
        },
        explained_variance: pca.explained_variance,
        scale,
    })
}
