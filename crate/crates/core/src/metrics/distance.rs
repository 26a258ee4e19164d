use super::{HistogramRange, MetricConfig, Variable};
use crate::error::{Error, Result};
use crate::patching::{EmbeddingMap, Patch, PatchKey};

fn check_shapes(a: &Patch, b: &Patch) -> Result<()> {
    if a.saturation.shape() != b.saturation.shape()
        || a.concentration.shape() != b.concentration.shape()
    {
        return Err(Error::Shape(format!(
            "patch {}:{} has shape {:?}, patch {}:{} has {:?}",
            a.run_id,
            a.patch_index,
            a.saturation.shape(),
            b.run_id,
            b.patch_index,
            b.saturation.shape()
        )));
    }
    Ok(())
}

/// Minkowski distance of order `p` (1 or 2) between linearized patches.
/// `Variable::Both` concatenates saturation then concentration.
pub fn dist_lp(a: &Patch, b: &Patch, p: u32, variable: Variable) -> Result<f64> {
    check_shapes(a, b)?;
    let mut acc = 0.0f64;
    let mut add = |x: &ndarray::Array3<f64>, y: &ndarray::Array3<f64>| match p {
        1 => x.iter().zip(y).for_each(|(u, v)| acc += (u - v).abs()),
        _ => x.iter().zip(y).for_each(|(u, v)| acc += (u - v) * (u - v)),
    };
    match p {
        1 | 2 => {}
        _ => return Err(Error::Config(format!("unsupported norm order {p}"))),
    }
    if variable.includes_saturation() {
        add(&a.saturation, &b.saturation);
    }
    if variable.includes_concentration() {
        add(&a.concentration, &b.concentration);
    }
    Ok(if p == 2 { acc.sqrt() } else { acc })
}

/// Normalized cumulative histogram of `values` over `bins` equal bins on
/// `[lo, hi]`. Values at or above `hi` land in the last bin, values below `lo`
/// in the first.
pub fn histogram_cdf<I>(values: I, bins: usize, lo: f64, hi: f64) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = f64>,
{
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
    }
    let width = hi - lo;
    if !(width > 0.0) {
        return Err(Error::Config(format!("histogram range ({lo}, {hi}) is empty")));
    }
    let mut counts = vec![0u64; bins];
    let mut n = 0u64;
    for v in values {
        let pos = ((v - lo) / width * bins as f64).floor();
        let idx = if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(bins - 1)
        };
        counts[idx] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Shape("cannot build a histogram of an empty patch".into()));
    }
    let mut cum = 0u64;
    Ok(counts
        .into_iter()
        .map(|c| {
            cum += c;
            cum as f64 / n as f64
        })
        .collect())
}

/// 1-D Wasserstein-1 distance between two histograms given as CDFs over the
/// same bins, with ground distance measured in units of the full range.
pub fn w1_from_cdfs(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    sum / a.len() as f64
}

fn value_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

/// Binning ranges `(saturation, concentration)` for one patch pair.
pub(crate) fn pair_ranges(a: &Patch, b: &Patch, range: HistogramRange) -> ((f64, f64), (f64, f64)) {
    match range {
        HistogramRange::Fixed {
            saturation,
            concentration,
        } => (saturation, concentration),
        HistogramRange::Global => {
            let (_, hi) = value_range(a.concentration.iter().chain(b.concentration.iter()).copied());
            ((0.0, 1.0), widen(0.0, hi.max(0.0)))
        }
        HistogramRange::PerPair => {
            let (slo, shi) = value_range(a.saturation.iter().chain(b.saturation.iter()).copied());
            let (clo, chi) = value_range(a.concentration.iter().chain(b.concentration.iter()).copied());
            (widen(slo, shi), widen(clo, chi))
        }
    }
}

/// Mean over the selected variables of the histogram W1 distance.
///
/// With [`HistogramRange::Global`] the concentration range is taken from the
/// two patches; distance matrices resolve it across all compared runs instead.
pub fn dist_wasserstein(a: &Patch, b: &Patch, cfg: &MetricConfig) -> Result<f64> {
    check_shapes(a, b)?;
    if a.is_empty() {
        return Err(Error::Shape("cannot compare empty patches".into()));
    }
    let (sr, cr) = pair_ranges(a, b, cfg.histogram_range);
    let bins = cfg.histogram_bins;
    let mut parts = Vec::with_capacity(2);
    if cfg.variable.includes_saturation() {
        let ha = histogram_cdf(a.saturation.iter().copied(), bins, sr.0, sr.1)?;
        let hb = histogram_cdf(b.saturation.iter().copied(), bins, sr.0, sr.1)?;
        parts.push(w1_from_cdfs(&ha, &hb));
    }
    if cfg.variable.includes_concentration() {
        let ha = histogram_cdf(a.concentration.iter().copied(), bins, cr.0, cr.1)?;
        let hb = histogram_cdf(b.concentration.iter().copied(), bins, cr.0, cr.1)?;
        parts.push(w1_from_cdfs(&ha, &hb));
    }
    Ok(parts.iter().sum::<f64>() / parts.len() as f64)
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn lookup<'m>(map: &'m EmbeddingMap, key: &PatchKey) -> Result<&'m [f64]> {
    map.get(key)
        .ok_or_else(|| Error::Embedding(format!("no feature vector for patch {key}")))
}

/// Manhattan distance between patch feature vectors. With `subdivisions`
/// set, the sum over aligned sub-patch positions `0..n`.
pub fn dist_embedding(
    a: &PatchKey,
    b: &PatchKey,
    embeddings: &EmbeddingMap,
    subdivisions: Option<usize>,
) -> Result<f64> {
    match subdivisions {
        None => {
            let va = lookup(embeddings, &PatchKey::whole(a.run.clone(), a.patch))?;
            let vb = lookup(embeddings, &PatchKey::whole(b.run.clone(), b.patch))?;
            Ok(l1(va, vb))
        }
        Some(n) => {
            let mut total = 0.0;
            for s in 0..n {
                let va = lookup(embeddings, &PatchKey::sub(a.run.clone(), a.patch, s))?;
                let vb = lookup(embeddings, &PatchKey::sub(b.run.clone(), b.patch, s))?;
                total += l1(va, vb);
            }
            Ok(total)
        }
    }
}
