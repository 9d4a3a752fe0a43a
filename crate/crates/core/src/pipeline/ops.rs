use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{PipelineError, Result, TabularDataset};
use crate::numcore::Tensor;
use crate::rng::{ceil_fraction, stream};

pub fn class_counts(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RareGroupReport {
    /// Original names of the classes folded into "other".
    pub merged: Vec<String>,
    /// Set when every class was rare, leaving a single class.
    pub degenerate: bool,
}

/// Relabels every class with fewer than `min_count` samples as one class
/// named "other", placed after the surviving classes. Classes with no
/// samples are dropped.
pub fn group_rare_classes(ds: &TabularDataset, min_count: usize) -> (TabularDataset, RareGroupReport) {
    let counts = class_counts(&ds.labels, ds.num_classes());
    let rare: Vec<bool> = counts.iter().map(|&n| n > 0 && n < min_count).collect();
    let mut report = RareGroupReport {
        merged: (0..counts.len())
            .filter(|&c| rare[c])
            .map(|c| ds.class_names[c].clone())
            .collect(),
        degenerate: false,
    };
    if report.merged.is_empty() {
        return (ds.clone().compact_classes(), report);
    }
    let mut remap = vec![usize::MAX; counts.len()];
    let mut names = Vec::new();
    for c in 0..counts.len() {
        if counts[c] > 0 && !rare[c] {
            remap[c] = names.len();
            names.push(ds.class_names[c].clone());
        }
    }
    let other = names.len();
    names.push("other".to_string());
    for c in 0..counts.len() {
        if rare[c] {
            remap[c] = other;
        }
    }
    report.degenerate = names.len() == 1;
    let mut out = ds.clone();
    for l in &mut out.labels {
        *l = remap[*l];
    }
    out.class_names = names;
    (out, report)
}

/// Per-class sample counts for [`proportional_downsample`].
///
/// Classes no larger than an equal share of the remaining budget are kept
/// whole, repeatedly, until no more qualify. The rest share what is left in
/// proportion to their size, never dropping below the largest kept class,
/// and are rounded by largest remainder so the total equals `target`.
pub fn downsample_quotas(counts: &[usize], target: usize) -> Result<Vec<usize>> {
    let total: usize = counts.iter().sum();
    if target > total {
        return Err(PipelineError::Invalid(format!(
            "target size {target} exceeds the {total} available samples"
        )));
    }
    let mut kept = vec![false; counts.len()];
    for (c, &n) in counts.iter().enumerate() {
        kept[c] = n == 0;
    }
    let mut budget = target as f64;
    loop {
        let open: Vec<usize> = (0..counts.len()).filter(|&c| !kept[c]).collect();
        if open.is_empty() {
            break;
        }
        let share = budget / open.len() as f64;
        let newly: Vec<usize> = open.into_iter().filter(|&c| counts[c] as f64 <= share).collect();
        if newly.is_empty() {
            break;
        }
        for c in newly {
            kept[c] = true;
            budget -= counts[c] as f64;
        }
    }
    let floor_size = (0..counts.len())
        .filter(|&c| kept[c])
        .map(|c| counts[c])
        .max()
        .unwrap_or(0) as f64;
    let open: Vec<usize> = (0..counts.len()).filter(|&c| !kept[c]).collect();
    let mut real: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
    if !open.is_empty() {
        let filled = |s: f64| open.iter().map(|&c| floor_size.max(s * counts[c] as f64)).sum::<f64>();
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if filled(mid) < budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        for &c in &open {
            real[c] = floor_size.max(hi * counts[c] as f64).min(counts[c] as f64);
        }
    }
    let mut out: Vec<usize> = real.iter().map(|v| (v + 1e-9).floor() as usize).collect();
    while out.iter().sum::<usize>() > target {
        let &c = open
            .iter()
            .max_by_key(|&&c| out[c])
            .expect("overshoot implies open classes");
        out[c] -= 1;
    }
    let mut short = target.saturating_sub(out.iter().sum());
    let mut order: Vec<usize> = open.clone();
    order.sort_by(|&a, &b| {
        let fa = real[a] - out[a] as f64;
        let fb = real[b] - out[b] as f64;
        fb.total_cmp(&fa).then(counts[b].cmp(&counts[a])).then(a.cmp(&b))
    });
    for c in order.into_iter().cycle().take(open.len() * 2) {
        if short == 0 {
            break;
        }
        if out[c] < counts[c] {
            out[c] += 1;
            short -= 1;
        }
    }
    Ok(out)
}

/// Uniformly subsamples the classes above their quota (see
/// [`downsample_quotas`]); surviving rows keep their original order.
pub fn proportional_downsample(ds: &TabularDataset, target_size: usize, seed: u64) -> Result<TabularDataset> {
    let counts = class_counts(&ds.labels, ds.num_classes());
    let quotas = downsample_quotas(&counts, target_size)?;
    if quotas == counts {
        return Ok(ds.clone());
    }
    let mut rng = stream(seed, "downsample");
    let mut keep = Vec::with_capacity(target_size);
    for c in 0..counts.len() {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        if quotas[c] == members.len() {
            keep.extend(members);
        } else {
            keep.extend(
                index::sample(&mut rng, members.len(), quotas[c])
                    .into_iter()
                    .map(|k| members[k]),
            );
        }
    }
    keep.sort_unstable();
    Ok(ds.select_rows(&keep))
}

/// Per-column affine scaling fitted on training rows. Constant columns map
/// to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(train: &Tensor) -> Result<Self> {
        let (m, d) = (train.rows(), train.cols());
        if m == 0 {
            return Err(PipelineError::Invalid(
                "cannot standardize with no training rows".into(),
            ));
        }
        let mut mean = vec![0.0; d];
        for i in 0..m {
            for (acc, v) in mean.iter_mut().zip(train.row(i)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; d];
        for i in 0..m {
            for ((acc, v), mu) in var.iter_mut().zip(train.row(i)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var.into_iter().map(|v| (v / m as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if x.cols() != d {
            return Err(PipelineError::Invalid(format!(
                "scaler fitted on {d} columns, got {}",
                x.cols()
            )));
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, mu), sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = if *sd > 0.0 { (*v - mu) / sd } else { 0.0 };
            }
        }
        Ok(out)
    }
}

/// Standardizes `train` and `test` with statistics of `train` alone.
pub fn standardize(train: &Tensor, test: &Tensor) -> Result<(Tensor, Tensor, Scaler)> {
    let scaler = Scaler::fit(train)?;
    Ok((scaler.transform(train)?, scaler.transform(test)?, scaler))
}

/// Seeded `d x d` Gaussian matrix with unit-length columns.
pub fn mixing_matrix(d: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, "correlation");
    let mut m: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
    for c in 0..d {
        let norm = (0..d).map(|r| m[r * d + c] * m[r * d + c]).sum::<f64>().sqrt();
        if norm > 0.0 {
            for r in 0..d {
                m[r * d + c] /= norm;
            }
        }
    }
    Tensor::new(vec![d, d], m).expect("finite mixing matrix")
}

/// `X (level * mix + (1 - level) * I)`.
pub fn inject_correlation_with(ds: &TabularDataset, level: f64, mix: &Tensor) -> Result<TabularDataset> {
    if !(0.0..=1.0).contains(&level) {
        return Err(PipelineError::Config(format!(
            "correlation level must lie in [0, 1], got {level}"
        )));
    }
    let d = ds.num_features();
    if mix.shape() != [d, d] {
        return Err(PipelineError::Invalid(format!(
            "mixing matrix {:?} for {d} features",
            mix.shape()
        )));
    }
    if level == 0.0 {
        return Ok(ds.clone());
    }
    let mut blend = mix.clone();
    for r in 0..d {
        for c in 0..d {
            let v = &mut blend.data_mut()[r * d + c];
            *v = level * *v + if r == c { 1.0 - level } else { 0.0 };
        }
    }
    let mut out = ds.clone();
    out.features = ds.features.matmul(&blend)?;
    Ok(out)
}

pub fn inject_correlation(ds: &TabularDataset, level: f64, seed: u64) -> Result<TabularDataset> {
    inject_correlation_with(ds, level, &mixing_matrix(ds.num_features(), seed))
}

/// Plug-in mutual information (nats) between an equal-width binning of
/// `column` and `labels`.
pub fn mutual_information(column: &[f64], labels: &[usize], bins: usize) -> f64 {
    assert!(bins >= 2, "at least two bins are required");
    assert_eq!(column.len(), labels.len(), "column and labels differ in length");
    let m = column.len();
    if m == 0 {
        return 0.0;
    }
    let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let classes = labels.iter().max().map_or(0, |&l| l + 1);
    let width = (hi - lo) / bins as f64;
    let bin_of = |v: f64| -> usize {
        if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        }
    };
    let mut joint = vec![0usize; bins * classes];
    let mut pb = vec![0usize; bins];
    let mut pc = vec![0usize; classes];
    for (&v, &l) in column.iter().zip(labels) {
        let b = bin_of(v);
        joint[b * classes + l] += 1;
        pb[b] += 1;
        pc[l] += 1;
    }
    let n = m as f64;
    let mut mi = 0.0;
    for b in 0..bins {
        for c in 0..classes {
            let j = joint[b * classes + c];
            if j > 0 {
                let pj = j as f64 / n;
                mi += pj * (pj * n * n / (pb[b] as f64 * pc[c] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Keeps the `ceil(keep_fraction * d)` columns with the lowest mutual
/// information (ties to the lower index), in their original order.
pub fn weaken_features(ds: &TabularDataset, keep_fraction: f64, bins: usize) -> Result<TabularDataset> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(PipelineError::Config(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let d = ds.num_features();
    let keep = ceil_fraction(keep_fraction, d).clamp(1, d.max(1));
    let cols = ds.features.transpose();
    let mi: Vec<f64> = (0..d)
        .map(|c| mutual_information(cols.row(c), &ds.labels, bins))
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| mi[a].total_cmp(&mi[b]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(keep).collect();
    chosen.sort_unstable();
    Ok(ds.select_columns(&chosen))
}

/// Stratified split: each class sends `round(n_c * (1 - ratio))` samples,
/// clamped to `[1, n_c - 1]`, to the test side. Both index lists are sorted.
pub fn train_test_split(labels: &[usize], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PipelineError::Config(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let classes = labels.iter().max().map_or(0, |&l| l + 1);
    let mut rng = stream(seed, "split");
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        match members.len() {
            0 => continue,
            1 => {
                return Err(PipelineError::Invalid(format!(
                    "class {c} has a single sample and cannot be split"
                )))
            }
            n => {
                let n_test = ((n as f64 * (1.0 - ratio)).round() as usize).clamp(1, n - 1);
                members.shuffle(&mut rng);
                test.extend_from_slice(&members[..n_test]);
                train.extend_from_slice(&members[n_test..]);
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds_with_counts(counts: &[usize]) -> TabularDataset {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| vec![c; n]).collect();
        let m = labels.len();
        let x = Tensor::new(vec![m, 1], (0..m).map(|i| i as f64).collect()).unwrap();
        let names = (0..counts.len()).map(|c| format!("c{c}")).collect();
        TabularDataset::new(vec!["f".into()], x, labels, names).unwrap()
    }

    #[test]
    fn rare_grouping() {
        let ds = ds_with_counts(&[100, 3, 2]);
        let (same, _) = group_rare_classes(&ds, 0);
        assert_eq!(same, ds);
        let (g, report) = group_rare_classes(&ds, 5);
        assert_eq!(class_counts(&g.labels, g.num_classes()), vec![100, 5]);
        assert_eq!(g.class_names, vec!["c0", "other"]);
        assert_eq!(report.merged, vec!["c1", "c2"]);
        assert!(!report.degenerate);
        let (all, report) = group_rare_classes(&ds, 1000);
        assert_eq!(all.class_names, vec!["other"]);
        assert!(report.degenerate);
    }

    #[test]
    fn quota_examples() {
        assert_eq!(downsample_quotas(&[9000, 500], 5000).unwrap(), vec![4500, 500]);
        assert_eq!(
            downsample_quotas(&[4000, 4000, 2000], 5000).unwrap(),
            vec![2000, 2000, 1000]
        );
        assert_eq!(downsample_quotas(&[30, 20], 50).unwrap(), vec![30, 20]);
        assert!(downsample_quotas(&[3, 4], 8).is_err());
    }

    #[test]
    fn quotas_keep_order_when_a_small_large_class_would_undercut() {
        // 2400 is protected, while a plain proportional share of 1000 would be 400
        let q = downsample_quotas(&[2400, 1000, 9000], 5000).unwrap();
        assert_eq!(q.iter().sum::<usize>(), 5000);
        assert!(q[1] <= q[0] && q[0] <= q[2], "{q:?}");
    }

    #[test]
    fn downsample_identity_and_counts() {
        let ds = ds_with_counts(&[90, 10]);
        assert_eq!(proportional_downsample(&ds, 100, 1).unwrap(), ds);
        let small = proportional_downsample(&ds, 50, 1).unwrap();
        assert_eq!(class_counts(&small.labels, 2), vec![40, 10]);
        let rows: Vec<f64> = small.features.data().to_vec();
        assert!(rows.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(proportional_downsample(&ds, 50, 1).unwrap(), small);
    }

    #[test]
    fn standardize_examples() {
        let train = Tensor::new(vec![2, 2], vec![1.0, 7.0, 3.0, 7.0]).unwrap();
        let test = Tensor::new(vec![1, 2], vec![2.0, 9.0]).unwrap();
        let (a, b, s) = standardize(&train, &test).unwrap();
        assert_eq!(a.data(), &[-1.0, 0.0, 1.0, 0.0]);
        assert_eq!(b.data(), &[0.0, 0.0]);
        assert_eq!(s.mean, vec![2.0, 7.0]);
    }

    #[test]
    fn correlation_endpoints() {
        let ds = ds_with_counts(&[3, 3]);
        let wide = ds.select_columns(&[0, 0, 0]);
        assert_eq!(inject_correlation(&wide, 0.0, 4).unwrap(), wide);
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let ds = TabularDataset::new(
            vec!["a".into(), "b".into(), "c".into()],
            x,
            vec![0, 1],
            vec!["p".into(), "q".into()],
        )
        .unwrap();
        let perm = Tensor::new(vec![3, 3], vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let out = inject_correlation_with(&ds, 1.0, &perm).unwrap();
        assert_eq!(out.features.data(), &[2.0, 3.0, 1.0, 5.0, 6.0, 4.0]);
    }

    #[test]
    fn mixing_columns_are_unit_length() {
        let m = mixing_matrix(6, 9);
        let t = m.transpose();
        for c in 0..6 {
            let n: f64 = t.row(c).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mi_examples() {
        let labels = vec![0, 1, 2, 0, 1, 2, 0, 0];
        assert_eq!(mutual_information(&[3.0; 8], &labels, 16), 0.0);
        let copy: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let n = labels.len() as f64;
        let entropy: f64 = [4.0, 2.0, 2.0].iter().map(|&c: &f64| -(c / n) * (c / n).ln()).sum();
        assert!((mutual_information(&copy, &labels, 16) - entropy).abs() < 1e-12);
    }

    #[test]
    fn weakening_counts_and_drops_the_predictor() {
        let m = 200;
        let labels: Vec<usize> = (0..m).map(|i| i % 2).collect();
        let mut rng = stream(1, "t");
        let mut data = Vec::new();
        for &l in &labels {
            for c in 0..10 {
                data.push(if c == 4 { l as f64 } else { rng.sample(StandardNormal) });
            }
        }
        let names = (0..10).map(|c| format!("f{c}")).collect();
        let ds = TabularDataset::new(
            names,
            Tensor::new(vec![m, 10], data).unwrap(),
            labels,
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let w = weaken_features(&ds, 0.3, 16).unwrap();
        assert_eq!(w.num_features(), 3);
        assert!(!w.feature_names.contains(&"f4".to_string()));
        assert_eq!(weaken_features(&ds, 1.0, 16).unwrap(), ds);
    }

    #[test]
    fn split_examples() {
        let (tr, te) = train_test_split(&[0; 10], 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let labels = [0, 0, 0, 0, 0, 0, 0, 0, 1, 1];
        let (tr, te) = train_test_split(&labels, 0.8, 3).unwrap();
        assert!(te.iter().any(|&i| labels[i] == 1));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(train_test_split(&[0, 0, 1], 0.8, 3).is_err());
    }
}
