//! Seeded synthetic data: Gaussian ID blobs, three kinds of OOD data,
//! covariate/label/concept shifts, and universal adversarial
//! perturbations.
//!
//! Every generator records its parameters and seed in the dataset
//! provenance, so regenerating from the provenance yields byte-identical
//! samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{LabeledDataset, Membership, OodKind, Provenance, ShiftKind};
use crate::error::{Error, Result};
use crate::linalg::{euclidean, Matrix, Vector};
use crate::model::{input_gradient, MlpModel};
use crate::seeding::derive_seed;

/// Minimum pairwise distance between class means, in spreads.
const MEAN_SEPARATION: f64 = 8.0;

/// Bounding-box inflation factor for far-uniform OOD data.
const FAR_UNIFORM_INFLATION: f64 = 5.0;

/// Ring radius in data radii.
const RING_RADIUS_FACTOR: f64 = 4.0;

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

fn unit_direction(dim: usize, rng: &mut ChaCha8Rng) -> Vector {
    loop {
        let g: Vector = (0..dim).map(|_| standard_normal(rng)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return g.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Seeded class means with pairwise separation of at least
/// `MEAN_SEPARATION * spread`.
fn place_means(classes: usize, dim: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    let mut extent = 4.0 * spread * classes as f64;
    let mut means: Vec<Vector> = Vec::with_capacity(classes);
    while means.len() < classes {
        let mut placed = false;
        for _ in 0..200 {
            let candidate: Vector = (0..dim)
                .map(|_| rng.random_range(-extent..extent))
                .collect();
            if means
                .iter()
                .all(|m| euclidean(m, &candidate) >= MEAN_SEPARATION * spread)
            {
                means.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            extent *= 1.5;
        }
    }
    means
}

fn draw_blob_samples(
    means: &[Vector],
    counts: &[usize],
    spread: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vector>, Vec<usize>) {
    let total: usize = counts.iter().sum();
    let mut rows = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (label, (&count, mean)) in counts.iter().zip(means).enumerate() {
        for _ in 0..count {
            rows.push(
                mean.iter()
                    .map(|&m| m + spread * standard_normal(rng))
                    .collect(),
            );
            labels.push(label);
        }
    }
    (rows, labels)
}

/// Gaussian class blobs with distinct seeded means, tagged ID.
pub fn gen_id(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidParameter(
            "classes, per_class and dim must be positive".into(),
        ));
    }
    if spread <= 0.0 || !spread.is_finite() {
        return Err(Error::InvalidParameter("spread must be positive".into()));
    }
    let mut mean_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "id-means"));
    let means = place_means(classes, dim, spread, &mut mean_rng);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "id-samples"));
    let (rows, labels) =
        draw_blob_samples(&means, &vec![per_class; classes], spread, &mut sample_rng);
    LabeledDataset::new(
        Matrix::from_rows(&rows)?,
        labels,
        vec![Membership::Id; classes * per_class],
        Provenance::IdBlobs {
            classes,
            per_class,
            dim,
            spread,
            seed,
            means,
        },
    )
}

/// The blob parameters behind a dataset, chasing derived provenances back
/// to the original generator.
pub fn blob_params(provenance: &Provenance) -> Result<(usize, usize, usize, f64, &[Vector])> {
    match provenance {
        Provenance::IdBlobs {
            classes,
            per_class,
            dim,
            spread,
            means,
            ..
        } => Ok((*classes, *per_class, *dim, *spread, means)),
        Provenance::Resampled { base, .. }
        | Provenance::Ood { base, .. }
        | Provenance::Shifted { base, .. }
        | Provenance::Perturbed { base, .. } => blob_params(base),
        Provenance::Mixed { parts } => {
            parts
                .iter()
                .find_map(|p| blob_params(p).ok())
                .ok_or_else(|| {
                    Error::InvalidInput(
                        "dataset provenance does not lead back to generated blobs".into(),
                    )
                })
        }
        _ => Err(Error::InvalidInput(
            "dataset provenance does not lead back to generated blobs".into(),
        )),
    }
}

/// Fresh draws from the same class means and spread as the reference.
pub fn resample(reference: &LabeledDataset, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    if per_class == 0 {
        return Err(Error::InvalidParameter("per_class must be positive".into()));
    }
    let (classes, _, _, spread, means) = blob_params(&reference.provenance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "resample"));
    let (rows, labels) = draw_blob_samples(means, &vec![per_class; classes], spread, &mut rng);
    LabeledDataset::new(
        Matrix::from_rows(&rows)?,
        labels,
        vec![Membership::Id; classes * per_class],
        Provenance::Resampled {
            base: Box::new(reference.provenance.clone()),
            per_class,
            seed,
        },
    )
}

/// Out-of-distribution samples relative to a reference dataset.
///
/// `far_uniform` draws uniformly over the reference bounding box inflated
/// five-fold; `near_boundary` places points 2-3 spreads from a class
/// mean; `ring` places points exactly four data radii from the data
/// centroid. All are tagged OOD with a placeholder label 0 (relabel via
/// [`LabeledDataset::with_labels`] before training a reject head).
pub fn gen_ood(
    reference: &LabeledDataset,
    kind: OodKind,
    count: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if reference.is_empty() {
        return Err(Error::InvalidInput("reference dataset is empty".into()));
    }
    let dim = reference.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "ood"));
    let mut rows: Vec<Vector> = Vec::with_capacity(count);
    match kind {
        OodKind::FarUniform => {
            let (lo, hi) = bounding_box(&reference.samples);
            for _ in 0..count {
                rows.push(
                    (0..dim)
                        .map(|d| {
                            let center = (lo[d] + hi[d]) / 2.0;
                            let half = ((hi[d] - lo[d]) / 2.0).max(1e-6) * FAR_UNIFORM_INFLATION;
                            rng.random_range(center - half..center + half)
                        })
                        .collect(),
                );
            }
        }
        OodKind::NearBoundary => {
            let (classes, _, _, spread, means) = blob_params(&reference.provenance)?;
            for _ in 0..count {
                let mean = &means[rng.random_range(0..classes)];
                let dir = unit_direction(dim, &mut rng);
                let radius = spread * rng.random_range(2.0..3.0);
                rows.push(mean.iter().zip(&dir).map(|(m, u)| m + radius * u).collect());
            }
        }
        OodKind::Ring => {
            let centroid = reference.samples.column_means()?;
            let data_radius = reference
                .samples
                .row_iter()
                .map(|r| euclidean(r, &centroid))
                .fold(0.0, f64::max);
            let radius = RING_RADIUS_FACTOR * data_radius;
            for _ in 0..count {
                let dir = unit_direction(dim, &mut rng);
                rows.push(
                    centroid
                        .iter()
                        .zip(&dir)
                        .map(|(c, u)| c + radius * u)
                        .collect(),
                );
            }
        }
    }
    LabeledDataset::new(
        if rows.is_empty() {
            Matrix::zeros(0, dim)
        } else {
            Matrix::from_rows(&rows)?
        },
        vec![0; count],
        vec![Membership::Ood; count],
        Provenance::Ood {
            base: Box::new(reference.provenance.clone()),
            kind,
            count,
            seed,
        },
    )
}

/// ID blobs plus far-uniform proxy-OOD samples labeled as the reject
/// class, the supervised stand-in for reject-head training.
pub fn with_proxy_reject(
    id_data: &LabeledDataset,
    ood_count: usize,
    reject_label: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let proxy = gen_ood(id_data, OodKind::FarUniform, ood_count, seed)?.with_labels(reject_label);
    LabeledDataset::concat(&[id_data, &proxy])
}

/// Distribution-shifted datasets from the reference generator.
pub fn gen_shift(reference: &LabeledDataset, kind: ShiftKind, seed: u64) -> Result<LabeledDataset> {
    let (classes, per_class, dim, spread, means) = blob_params(&reference.provenance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shift"));
    let (rows, labels) = match &kind {
        ShiftKind::Covariate { magnitude } => {
            if magnitude.is_nan() || *magnitude <= 0.0 {
                return Err(Error::InvalidParameter(
                    "covariate shift magnitude must be positive".into(),
                ));
            }
            let dir = unit_direction(dim, &mut rng);
            let (mut rows, labels) =
                draw_blob_samples(means, &vec![per_class; classes], spread, &mut rng);
            for row in &mut rows {
                for (x, u) in row.iter_mut().zip(&dir) {
                    *x += magnitude * spread * u;
                }
            }
            (rows, labels)
        }
        ShiftKind::Label { proportions } => {
            if proportions.len() != classes {
                return Err(Error::InvalidParameter(format!(
                    "{} proportions for {classes} classes",
                    proportions.len()
                )));
            }
            if proportions.iter().any(|p| !p.is_finite() || *p < 0.0)
                || proportions.iter().sum::<f64>() <= 0.0
            {
                return Err(Error::InvalidParameter(
                    "proportions must be nonnegative and not all zero".into(),
                ));
            }
            let counts = apportion(proportions, classes * per_class);
            draw_blob_samples(means, &counts, spread, &mut rng)
        }
        ShiftKind::Concept { permutation } => {
            let perm = match permutation {
                Some(p) => {
                    validate_permutation(p, classes)?;
                    p.clone()
                }
                None => (0..classes).map(|c| (c + 1) % classes).collect(),
            };
            let permuted_means: Vec<Vector> =
                (0..classes).map(|c| means[perm[c]].clone()).collect();
            draw_blob_samples(&permuted_means, &vec![per_class; classes], spread, &mut rng)
        }
    };
    let n = rows.len();
    LabeledDataset::new(
        Matrix::from_rows(&rows)?,
        labels,
        vec![Membership::Id; n],
        Provenance::Shifted {
            base: Box::new(reference.provenance.clone()),
            shift: kind,
            seed,
        },
    )
}

/// Largest-remainder apportionment of `total` samples over proportions.
fn apportion(proportions: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = proportions.iter().sum();
    let exact: Vec<f64> = proportions.iter().map(|p| p / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = exact
        .iter()
        .enumerate()
        .map(|(i, e)| (i, e - e.floor()))
        .collect();
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (i, _) in remainders.iter().take(total - assigned) {
        counts[*i] += 1;
    }
    counts
}

fn validate_permutation(perm: &[usize], classes: usize) -> Result<()> {
    if perm.len() != classes {
        return Err(Error::InvalidParameter(format!(
            "permutation has length {}, expected {classes}",
            perm.len()
        )));
    }
    let mut seen = vec![false; classes];
    for &p in perm {
        if p >= classes || seen[p] {
            return Err(Error::InvalidParameter(
                "permutation must cover every class exactly once".into(),
            ));
        }
        seen[p] = true;
    }
    Ok(())
}

fn bounding_box(samples: &Matrix) -> (Vector, Vector) {
    let dim = samples.cols();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for row in samples.row_iter() {
        for d in 0..dim {
            lo[d] = lo[d].min(row[d]);
            hi[d] = hi[d].max(row[d]);
        }
    }
    (lo, hi)
}

/// A single universal perturbation: `epsilon * sign(mean input gradient
/// of the loss over the dataset)`, added to every sample.
///
/// Returns the perturbed dataset (tagged OOD, labels preserved) and the
/// perturbation vector, so white-box detector templates can be built
/// from it. A zero epsilon degenerates to the identity (zero vector,
/// samples unchanged).
pub fn gen_uap(
    model: &MlpModel,
    dataset: &LabeledDataset,
    epsilon: f64,
    seed: u64,
) -> Result<(LabeledDataset, Vector)> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(
            "epsilon must be nonnegative".into(),
        ));
    }
    let dim = dataset.dim();
    let mut mean_grad = vec![0.0; dim];
    for (row, &label) in dataset.samples.row_iter().zip(&dataset.labels) {
        let g = input_gradient(model, row, label)?;
        for (m, gi) in mean_grad.iter_mut().zip(&g) {
            *m += gi;
        }
    }
    let n = dataset.len() as f64;
    let perturbation: Vector = mean_grad
        .iter()
        .map(|g| {
            let g = g / n;
            if g > 0.0 {
                epsilon
            } else if g < 0.0 {
                -epsilon
            } else {
                0.0
            }
        })
        .collect();
    let rows: Vec<Vector> = dataset
        .samples
        .row_iter()
        .map(|r| r.iter().zip(&perturbation).map(|(x, v)| x + v).collect())
        .collect();
    let perturbed = LabeledDataset::new(
        Matrix::from_rows(&rows)?,
        dataset.labels.clone(),
        vec![Membership::Ood; dataset.len()],
        Provenance::Perturbed {
            base: Box::new(dataset.provenance.clone()),
            epsilon,
            seed,
        },
    )?;
    Ok((perturbed, perturbation))
}

/// Regenerate a dataset from its provenance record.
pub fn regenerate(provenance: &Provenance) -> Result<LabeledDataset> {
    match provenance {
        Provenance::IdBlobs {
            classes,
            per_class,
            dim,
            spread,
            seed,
            ..
        } => gen_id(*classes, *per_class, *dim, *spread, *seed),
        Provenance::Resampled {
            base,
            per_class,
            seed,
        } => {
            let reference = regenerate(base)?;
            resample(&reference, *per_class, *seed)
        }
        Provenance::Ood {
            base,
            kind,
            count,
            seed,
        } => {
            let reference = regenerate(base)?;
            gen_ood(&reference, *kind, *count, *seed)
        }
        Provenance::Shifted { base, shift, seed } => {
            let reference = regenerate(base)?;
            gen_shift(&reference, shift.clone(), *seed)
        }
        Provenance::Mixed { parts } => {
            let datasets: Vec<LabeledDataset> =
                parts.iter().map(regenerate).collect::<Result<_>>()?;
            let refs: Vec<&LabeledDataset> = datasets.iter().collect();
            LabeledDataset::concat(&refs)
        }
        Provenance::Perturbed { .. } | Provenance::File { .. } | Provenance::Manual => Err(
            Error::InvalidInput("provenance does not describe a regenerable generator".into()),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_id_counts_and_tags() {
        let d = gen_id(1, 5, 2, 1.0, 3).unwrap();
        assert_eq!(d.len(), 5);
        assert!(d.labels.iter().all(|&l| l == 0));
        assert!(d.membership.iter().all(|&m| m == Membership::Id));
    }

    #[test]
    fn gen_id_is_seed_deterministic() {
        let a = gen_id(3, 20, 2, 1.0, 7).unwrap();
        let b = gen_id(3, 20, 2, 1.0, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_id(3, 20, 2, 1.0, 8).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn class_means_keep_their_distance() {
        let d = gen_id(3, 500, 2, 1.0, 7).unwrap();
        let (_, _, _, spread, means) = blob_params(&d.provenance).unwrap();
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                assert!(euclidean(&means[i], &means[j]) >= 6.0 * spread);
            }
        }
    }

    #[test]
    fn resample_shares_means_but_not_samples() {
        let base = gen_id(2, 50, 2, 1.0, 7).unwrap();
        let again = resample(&base, 30, 9).unwrap();
        assert_eq!(again.len(), 60);
        let (_, _, _, _, m1) = blob_params(&base.provenance).unwrap();
        let (_, _, _, _, m2) = blob_params(&again.provenance).unwrap();
        assert_eq!(m1, m2);
        assert_ne!(base.samples, again.samples);
    }

    #[test]
    fn empty_ood_request_is_empty() {
        let base = gen_id(2, 20, 2, 1.0, 7).unwrap();
        let d = gen_ood(&base, OodKind::Ring, 0, 1).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn ring_samples_sit_on_the_ring() {
        let base = gen_id(3, 100, 2, 1.0, 7).unwrap();
        let centroid = base.samples.column_means().unwrap();
        let radius = base
            .samples
            .row_iter()
            .map(|r| euclidean(r, &centroid))
            .fold(0.0, f64::max);
        let ring = gen_ood(&base, OodKind::Ring, 50, 1).unwrap();
        for row in ring.samples.row_iter() {
            assert!((euclidean(row, &centroid) - 4.0 * radius).abs() < 1e-9);
        }
    }

    #[test]
    fn near_boundary_stays_within_three_spreads() {
        let base = gen_id(3, 100, 2, 1.0, 7).unwrap();
        let (_, _, _, spread, means) = blob_params(&base.provenance).unwrap();
        let near = gen_ood(&base, OodKind::NearBoundary, 50, 1).unwrap();
        for row in near.samples.row_iter() {
            let nearest = means
                .iter()
                .map(|m| euclidean(row, m))
                .fold(f64::INFINITY, f64::min);
            assert!(nearest >= 2.0 * spread - 1e-9 && nearest <= 3.0 * spread + 1e-9);
        }
    }

    #[test]
    fn label_shift_with_degenerate_proportions() {
        let base = gen_id(3, 30, 2, 1.0, 7).unwrap();
        let shifted = gen_shift(
            &base,
            ShiftKind::Label {
                proportions: vec![1.0, 0.0, 0.0],
            },
            5,
        )
        .unwrap();
        assert_eq!(shifted.len(), 90);
        assert!(shifted.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn concept_shift_moves_class_means() {
        let base = gen_id(3, 200, 2, 1.0, 7).unwrap();
        let (_, _, _, _, means) = blob_params(&base.provenance).unwrap();
        let means = means.to_vec();
        let shifted = gen_shift(&base, ShiftKind::Concept { permutation: None }, 5).unwrap();
        // samples labeled c should now cluster around means[(c + 1) % 3]
        for c in 0..3 {
            let rows = shifted.class_rows(c);
            let empirical = rows.column_means().unwrap();
            let expected = &means[(c + 1) % 3];
            assert!(euclidean(&empirical, expected) < 0.5);
        }
    }

    #[test]
    fn covariate_shift_requires_positive_magnitude() {
        let base = gen_id(2, 40, 2, 1.0, 7).unwrap();
        assert!(gen_shift(&base, ShiftKind::Covariate { magnitude: 0.0 }, 5).is_err());
        let shifted = gen_shift(&base, ShiftKind::Covariate { magnitude: 5.0 }, 5).unwrap();
        assert_eq!(shifted.len(), base.len());
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(&[1.0, 0.0, 0.0], 9), vec![9, 0, 0]);
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 9), vec![3, 3, 3]);
        let counts = apportion(&[0.5, 0.3, 0.2], 10);
        assert_eq!(counts.iter().sum::<usize>(), 10);
        assert_eq!(counts, vec![5, 3, 2]);
    }

    #[test]
    fn regenerate_matches_original() {
        let base = gen_id(3, 25, 2, 1.0, 7).unwrap();
        assert_eq!(regenerate(&base.provenance).unwrap(), base);
        let ring = gen_ood(&base, OodKind::Ring, 10, 2).unwrap();
        assert_eq!(regenerate(&ring.provenance).unwrap(), ring);
        let shifted = gen_shift(&base, ShiftKind::Covariate { magnitude: 2.0 }, 3).unwrap();
        assert_eq!(regenerate(&shifted.provenance).unwrap(), shifted);
    }
}
