use super::{DataError, Dataset, Partition};
use crate::rng::FedRng;

fn check_clients(n_clients: usize, available: usize, unit: &'static str) -> Result<(), DataError> {
    if n_clients == 0 {
        return Err(DataError::InvalidSpec("n_clients must be positive".into()));
    }
    if n_clients > available {
        return Err(DataError::TooManyClients {
            requested: n_clients,
            available,
            unit,
        });
    }
    Ok(())
}

/// Shuffles `0..n_samples` and deals it into `n_clients` contiguous chunks
/// whose sizes differ by at most one.
pub fn partition_iid(n_samples: usize, n_clients: usize, seed: u64) -> Result<Partition, DataError> {
    check_clients(n_clients, n_samples, "samples")?;
    let mut order: Vec<usize> = (0..n_samples).collect();
    FedRng::new(seed).shuffle(&mut order);
    let (base, extra) = (n_samples / n_clients, n_samples % n_clients);
    let mut assignments = Vec::with_capacity(n_clients);
    let mut start = 0;
    for k in 0..n_clients {
        let len = base + usize::from(k < extra);
        assignments.push(order[start..start + len].to_vec());
        start += len;
    }
    Partition::new(assignments, n_samples)
}

/// Label-skewed partition: for each class, client proportions are drawn from
/// `Dirichlet(alpha, ..., alpha)` and every sample of that class goes to a
/// client drawn from those proportions. Smaller `alpha` means more skew.
///
/// Clients left empty each take one sample from the currently largest client
/// (lowest ID on ties), which gives up its highest index.
pub fn partition_lda(dataset: &Dataset, n_clients: usize, alpha: f64, seed: u64) -> Result<Partition, DataError> {
    check_clients(n_clients, dataset.n_samples(), "samples")?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(DataError::InvalidSpec(format!("LDA alpha must be positive and finite, got {alpha}")));
    }
    let mut rng = FedRng::new(seed);
    let mut assignments = vec![Vec::new(); n_clients];
    for class_indices in dataset.indices_by_class() {
        if class_indices.is_empty() {
            continue;
        }
        let proportions = rng.dirichlet(alpha, n_clients);
        for i in class_indices {
            assignments[rng.categorical(&proportions)].push(i);
        }
    }
    while let Some(empty) = assignments.iter().position(Vec::is_empty) {
        let largest = (0..n_clients)
            .max_by(|&a, &b| assignments[a].len().cmp(&assignments[b].len()).then(b.cmp(&a)))
            .expect("at least one client");
        let donor = &mut assignments[largest];
        let (pos, _) = donor.iter().enumerate().max_by_key(|(_, &i)| i).expect("largest client is nonempty");
        let moved = donor.swap_remove(pos);
        assignments[empty].push(moved);
    }
    Partition::new(assignments, dataset.n_samples())
}

/// Client sizes for a power-law partition, largest first.
///
/// Each client gets `min_samples`; the remaining samples are split in
/// proportion to `rank^-exponent` (rank from 1) with largest-remainder
/// rounding, so sizes sum to `n_samples` exactly.
pub fn power_law_sizes(
    n_samples: usize,
    n_clients: usize,
    exponent: f64,
    min_samples: usize,
) -> Result<Vec<usize>, DataError> {
    if n_clients == 0 || min_samples == 0 {
        return Err(DataError::InvalidSpec("n_clients and min_samples must be positive".into()));
    }
    if !exponent.is_finite() || exponent < 0.0 {
        return Err(DataError::InvalidSpec(format!("power-law exponent must be finite and >= 0, got {exponent}")));
    }
    let floor_total = n_clients
        .checked_mul(min_samples)
        .filter(|&t| t <= n_samples)
        .ok_or(DataError::TooManyClients {
            requested: n_clients,
            available: n_samples / min_samples,
            unit: "clients at min_samples each",
        })?;
    let extra = n_samples - floor_total;
    let weights: Vec<f64> = (1..=n_clients).map(|rank| (rank as f64).powf(-exponent)).collect();
    let total_weight: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| extra as f64 * w / total_weight).collect();
    let mut sizes: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut by_remainder: Vec<usize> = (0..n_clients).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (shares[a] - shares[a].floor(), shares[b] - shares[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in by_remainder.iter().take(extra.saturating_sub(assigned)) {
        sizes[k] += 1;
    }
    sizes.iter_mut().for_each(|s| *s += min_samples);
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    Ok(sizes)
}

/// Power-law client sizes over class-contiguous data: samples are ordered by
/// class (shuffled within each class) and cut into consecutive chunks, the
/// largest chunk going to client 0.
pub fn partition_power_law(
    dataset: &Dataset,
    n_clients: usize,
    exponent: f64,
    min_samples: usize,
    seed: u64,
) -> Result<Partition, DataError> {
    let sizes = power_law_sizes(dataset.n_samples(), n_clients, exponent, min_samples)?;
    let mut rng = FedRng::new(seed);
    let mut order = Vec::with_capacity(dataset.n_samples());
    for mut class_indices in dataset.indices_by_class() {
        rng.shuffle(&mut class_indices);
        order.extend(class_indices);
    }
    let mut assignments = Vec::with_capacity(n_clients);
    let mut start = 0;
    for size in sizes {
        assignments.push(order[start..start + size].to_vec());
        start += size;
    }
    Partition::new(assignments, dataset.n_samples())
}

/// Deals the classes present in `dataset` round-robin to clients; each client
/// holds every sample of its classes (exactly one class when the counts match).
pub fn partition_one_class(dataset: &Dataset, n_clients: usize) -> Result<Partition, DataError> {
    let groups: Vec<Vec<usize>> = dataset
        .indices_by_class()
        .into_iter()
        .filter(|g| !g.is_empty())
        .collect();
    check_clients(n_clients, groups.len(), "classes")?;
    let mut assignments = vec![Vec::new(); n_clients];
    for (position, group) in groups.into_iter().enumerate() {
        assignments[position % n_clients].extend(group);
    }
    Partition::new(assignments, dataset.n_samples())
}

/// Seeded shuffle of `0..n_samples` split into (train, test) index lists, both sorted.
/// At least one sample stays on each side when `n_samples >= 2` and `test_fraction > 0`.
pub fn train_test_split(n_samples: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DataError::InvalidSpec(format!("test_fraction must be in [0, 1), got {test_fraction}")));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    FedRng::new(seed).shuffle(&mut order);
    let mut n_test = (n_samples as f64 * test_fraction).round() as usize;
    if test_fraction > 0.0 && n_samples >= 2 {
        n_test = n_test.clamp(1, n_samples - 1);
    }
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `per_class` samples of each of `classes` classes, features = index.
    fn balanced(classes: usize, per_class: usize) -> Dataset {
        let n = classes * per_class;
        Dataset::new((0..n).map(|i| i as f64).collect(), 1, (0..n).map(|i| i % classes).collect(), classes).unwrap()
    }

    #[test]
    fn lda_single_client_gets_everything() {
        let ds = balanced(3, 10);
        let p = partition_lda(&ds, 1, 0.5, 1).unwrap();
        assert_eq!(p.client(0), (0..30).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn lda_large_alpha_is_balanced() {
        let ds = balanced(10, 1000);
        let p = partition_lda(&ds, 10, 100.0, 42).unwrap();
        for size in p.sizes() {
            assert!((800..=1200).contains(&size), "{size}");
        }
    }

    #[test]
    fn lda_small_alpha_has_lower_entropy() {
        let ds = balanced(10, 1000);
        let skewed = partition_lda(&ds, 10, 0.1, 42).unwrap().mean_label_entropy(&ds);
        let flat = partition_lda(&ds, 10, 100.0, 42).unwrap().mean_label_entropy(&ds);
        assert!(skewed < flat, "{skewed} vs {flat}");
    }

    #[test]
    fn lda_repairs_empty_clients() {
        let ds = balanced(2, 5);
        let p = partition_lda(&ds, 10, 0.01, 7).unwrap();
        assert_eq!(p.n_clients(), 10);
        assert!(p.sizes().iter().all(|&s| s >= 1));
    }

    #[test]
    fn lda_rejects_bad_inputs() {
        let ds = balanced(2, 2);
        assert!(matches!(partition_lda(&ds, 5, 1.0, 0), Err(DataError::TooManyClients { .. })));
        assert!(matches!(partition_lda(&ds, 2, 0.0, 0), Err(DataError::InvalidSpec(_))));
    }

    #[test]
    fn power_law_uniform_limit() {
        let sizes = power_law_sizes(1003, 10, 0.0, 10).unwrap();
        assert!(sizes.iter().all(|&s| s == 100 || s == 101), "{sizes:?}");
    }

    #[test]
    fn power_law_sum_and_order() {
        // exponent 1, 10 clients, floor 10: extra 900 split by 1/rank over H_10
        let sizes = power_law_sizes(1000, 10, 1.0, 10).unwrap();
        assert_eq!(sizes.iter().sum::<usize>(), 1000);
        assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        let harmonic: f64 = (1..=10).map(|r| 1.0 / r as f64).sum();
        let expected_top = 10.0 + 900.0 / harmonic;
        assert!((sizes[0] as f64 - expected_top).abs() <= 1.0, "{sizes:?}");
        assert!(sizes.iter().all(|&s| s >= 10));
    }

    #[test]
    fn power_law_partition_is_class_contiguous() {
        let ds = balanced(4, 50);
        let p = partition_power_law(&ds, 4, 2.0, 5, 3).unwrap();
        // client 0 is the largest and begins with class-0 samples
        assert_eq!(p.sizes(), power_law_sizes(200, 4, 2.0, 5).unwrap());
        assert_eq!(ds.label_histogram(p.client(0))[0], 50.min(p.client(0).len()));
    }

    #[test]
    fn power_law_too_many_clients() {
        let ds = balanced(2, 10);
        assert!(matches!(
            partition_power_law(&ds, 5, 1.0, 5, 0),
            Err(DataError::TooManyClients { .. })
        ));
    }

    #[test]
    fn one_class_per_client() {
        let ds = balanced(10, 5);
        let p = partition_one_class(&ds, 10).unwrap();
        for k in 0..10 {
            let hist = ds.label_histogram(p.client(k));
            assert_eq!(hist.iter().filter(|&&c| c > 0).count(), 1);
        }
        let p = partition_one_class(&ds, 5).unwrap();
        for k in 0..5 {
            let hist = ds.label_histogram(p.client(k));
            assert_eq!(hist.iter().filter(|&&c| c > 0).count(), 2);
        }
        assert!(matches!(partition_one_class(&ds, 11), Err(DataError::TooManyClients { .. })));
    }

    #[test]
    fn iid_split_sizes() {
        let p = partition_iid(103, 10, 4).unwrap();
        assert!(p.sizes().iter().all(|&s| s == 10 || s == 11));
    }

    #[test]
    fn train_test_split_covers_everything() {
        let (train, test) = train_test_split(100, 0.2, 1).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        let mut all: Vec<_> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(train_test_split(10, 1.0, 1).is_err());
    }
}
