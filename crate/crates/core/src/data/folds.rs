use crate::rng::{streams, Rng};
use crate::{Error, Result};

/// Partitions row indices into `k` folds preserving the class ratio.
///
/// Each class is shuffled and dealt round-robin, so every fold holds the
/// floor or ceiling of its proportional share. The anomaly class starts
/// dealing where the normal class stopped, which keeps fold sizes within one
/// row of each other. Indices inside a fold are ascending.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "k must be at least 2, got {k}"
        )));
    }
    let mut rng = Rng::with_stream(seed, streams::FOLDS);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [false, true] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Data(format!(
                "class {} has {} member(s), fewer than k = {k}",
                if class { "anomaly" } else { "normal" },
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Seeded subsample of `n` rows with per-class counts proportional to the
/// full data (largest-remainder rounding). Returned indices are ascending.
pub fn stratified_subsample(labels: &[bool], n: usize, seed: u64) -> Result<Vec<usize>> {
    let total = labels.len();
    if n > total {
        return Err(Error::Data(format!("cannot draw {n} rows from {total}")));
    }
    let pos: Vec<usize> = (0..total).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..total).filter(|&i| !labels[i]).collect();
    let n_pos = if total == 0 {
        0
    } else {
        ((pos.len() as f64) * (n as f64) / (total as f64)).round() as usize
    }
    .min(pos.len())
    .max(n.saturating_sub(neg.len()));
    let n_neg = n - n_pos;
    let mut rng = Rng::with_stream(seed, streams::SUBSAMPLE);
    let mut out: Vec<usize> = rng
        .sample_without_replacement(pos.len(), n_pos)
        .into_iter()
        .map(|i| pos[i])
        .chain(
            rng.sample_without_replacement(neg.len(), n_neg)
                .into_iter()
                .map(|i| neg[i]),
        )
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Stratified hold-out split: returns `(train, validation)` index lists.
pub fn train_val_split(
    labels: &[bool],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    let n_val = (labels.len() as f64 * val_fraction).round() as usize;
    let mut rng = Rng::with_stream(seed, streams::SPLIT);
    let val = stratified_subsample(labels, n_val, rng.next_u64())?;
    let mut is_val = vec![false; labels.len()];
    for &i in &val {
        is_val[i] = true;
    }
    let train = (0..labels.len()).filter(|&i| !is_val[i]).collect();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_divisibility() {
        let labels: Vec<bool> = (0..100).map(|i| i % 10 == 0).collect();
        let folds = stratified_kfold(&labels, 5, 3).unwrap();
        for f in &folds {
            assert_eq!(f.len(), 20);
            assert_eq!(f.iter().filter(|&&i| labels[i]).count(), 2);
        }
        assert_eq!(folds, stratified_kfold(&labels, 5, 3).unwrap());
        assert_ne!(folds, stratified_kfold(&labels, 5, 4).unwrap());
    }

    #[test]
    fn too_few_members_is_an_error() {
        let labels = [true, false, false, false, false, false];
        assert!(stratified_kfold(&labels, 2, 0).is_err());
        assert!(stratified_kfold(&labels, 1, 0).is_err());
    }

    #[test]
    fn subsample_keeps_ratio() {
        let labels: Vec<bool> = (0..10_000).map(|i| i % 50 == 0).collect();
        let idx = stratified_subsample(&labels, 1_000, 1).unwrap();
        assert_eq!(idx.len(), 1_000);
        assert_eq!(idx.iter().filter(|&&i| labels[i]).count(), 20);
        let (train, val) = train_val_split(&labels, 0.1, 2).unwrap();
        assert_eq!(val.len(), 1_000);
        assert_eq!(train.len() + val.len(), 10_000);
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(
            n_pos in 5usize..60,
            n_neg in 5usize..200,
            k in 2usize..6,
            seed in 0u64..1000,
        ) {
            let mut labels = vec![true; n_pos];
            labels.extend(std::iter::repeat_n(false, n_neg));
            let folds = stratified_kfold(&labels, k, seed).unwrap();
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for f in &folds {
                let pos = f.iter().filter(|&&i| labels[i]).count() as f64;
                let neg = f.len() as f64 - pos;
                prop_assert!((pos - n_pos as f64 / k as f64).abs() < 1.0);
                prop_assert!((neg - n_neg as f64 / k as f64).abs() < 1.0);
            }
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
