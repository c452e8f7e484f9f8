//! Examples, per-user shards and the two synthetic benchmarks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{dot, l2_norm, sqrt};
use crate::models::TaskKind;
use crate::rng::{stream, Purpose, StreamKey};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub target: f64,
}

/// One party's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct UserShard {
    pub user_id: usize,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl UserShard {
    pub fn empty(user_id: usize) -> Self {
        UserShard {
            user_id,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        }
    }

    /// Feature dimension, if the shard holds any example.
    pub fn dim(&self) -> Option<usize> {
        self.examples().next().map(|e| e.features.len())
    }

    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Checks the dataset-wide invariants: one feature dimension everywhere and,
/// for classification, targets exactly 0 or 1. Returns the dimension.
pub fn validate_shards(shards: &[UserShard], task: TaskKind) -> Result<usize> {
    let dim = shards
        .iter()
        .find_map(UserShard::dim)
        .ok_or_else(|| Error::config("shards", "no examples"))?;
    for shard in shards {
        for ex in shard.examples() {
            if ex.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: ex.features.len(),
                });
            }
            if ex.features.iter().any(|v| !v.is_finite()) || !ex.target.is_finite() {
                return Err(Error::NonFinite { what: "example" });
            }
            if task == TaskKind::BinaryClassification && ex.target != 0.0 && ex.target != 1.0 {
                return Err(Error::config(
                    "target",
                    format!("user {}: classification label {} is not 0 or 1", shard.user_id, ex.target),
                ));
            }
        }
    }
    Ok(dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(train: usize, validation: usize, test: usize) -> Self {
        SplitSizes {
            train,
            validation,
            test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

/// A 2-d Gaussian input domain for the synthetic regression task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
}

impl DomainSpec {
    /// Lower-triangular `L` with `L Lᵀ = covariance`; fails unless the matrix
    /// is symmetric positive-definite.
    pub fn cholesky(&self) -> Result<[[f64; 2]; 2]> {
        let [[a, b], [c, d]] = self.covariance;
        if [a, b, c, d].iter().any(|v| !v.is_finite()) || self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("covariance", "entries must be finite"));
        }
        if b != c {
            return Err(Error::config("covariance", "matrix is not symmetric"));
        }
        if a <= 0.0 || a * d - b * c <= 0.0 {
            return Err(Error::config("covariance", "matrix is not positive-definite"));
        }
        let l00 = sqrt(a);
        let l10 = b / l00;
        let l11 = sqrt(d - l10 * l10);
        Ok([[l00, 0.0], [l10, l11]])
    }

    /// Per-axis standard deviations.
    pub fn std_devs(&self) -> [f64; 2] {
        [sqrt(self.covariance[0][0]), sqrt(self.covariance[1][1])]
    }
}

/// `5·x1 − 2·x2 + 0.5·x2³`
#[inline]
pub fn synth_target(x1: f64, x2: f64) -> f64 {
    5.0 * x1 - 2.0 * x2 + 0.5 * x2 * x2 * x2
}

/// One shard per domain, inputs drawn from that domain's Gaussian and targets
/// from [`synth_target`]. User `i` draws from its own stream, so adding a user
/// does not perturb the others.
pub fn generate_regression_shards(
    specs: &[DomainSpec],
    sizes: SplitSizes,
    seed: u64,
) -> Result<Vec<UserShard>> {
    if specs.is_empty() {
        return Err(Error::config("domains", "at least one domain is required"));
    }
    if sizes.train == 0 || sizes.validation == 0 || sizes.test == 0 {
        return Err(Error::config("sizes", "train, validation and test sizes must be positive"));
    }
    specs
        .iter()
        .enumerate()
        .map(|(user, spec)| {
            let l = spec.cholesky()?;
            let mut rng = stream(seed, StreamKey::new(Purpose::Data, user, 0));
            let mut draw = |n: usize| -> Vec<Example> {
                (0..n)
                    .map(|_| {
                        let z0: f64 = rng.sample(StandardNormal);
                        let z1: f64 = rng.sample(StandardNormal);
                        let x1 = spec.mean[0] + l[0][0] * z0;
                        let x2 = spec.mean[1] + l[1][0] * z0 + l[1][1] * z1;
                        Example {
                            features: vec![x1, x2],
                            target: synth_target(x1, x2),
                        }
                    })
                    .collect()
            };
            let train = draw(sizes.train);
            let validation = draw(sizes.validation);
            let test = draw(sizes.test);
            Ok(UserShard {
                user_id: user,
                train,
                validation,
                test,
            })
        })
        .collect()
}

/// Parameters of the multi-user binary classification benchmark.
///
/// Every user labels inputs with a shared global separator rotated by a
/// user-specific angle inside a random plane, so pooled training helps but
/// each domain is different. Inputs are additionally shifted per user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationSpec {
    pub num_users: usize,
    pub dim: usize,
    pub sizes: SplitSizes,
    /// Upper bound of the per-user rotation angle, in degrees.
    pub max_rotation_deg: f64,
    /// Probability of flipping each label.
    pub label_noise: f64,
    /// Std of the per-user input mean shift.
    pub domain_shift: f64,
    /// Accepted range for the fraction of positive labels per split.
    pub min_positive: f64,
    pub max_positive: f64,
    /// Which train statistics feature standardization uses.
    pub standardization: Standardization,
}

/// Source of the mean / variance used to standardize features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Standardization {
    /// Each user's own train split.
    PerUser,
    /// The union of all users' train splits.
    Pooled,
}

impl ClassificationSpec {
    pub fn new(num_users: usize, dim: usize, train: usize, test: usize) -> Self {
        ClassificationSpec {
            num_users,
            dim,
            sizes: SplitSizes::new(train, 0, test),
            max_rotation_deg: 45.0,
            label_noise: 0.05,
            domain_shift: 2.0,
            min_positive: 0.3,
            max_positive: 0.7,
            standardization: Standardization::Pooled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_users < 2 {
            return Err(Error::config("num_users", "collaboration needs at least 2 users"));
        }
        if self.dim < 2 {
            return Err(Error::config("dim", "must be at least 2"));
        }
        if self.sizes.train == 0 || self.sizes.test == 0 {
            return Err(Error::config("sizes", "train and test sizes must be positive"));
        }
        if !(0.0..=90.0).contains(&self.max_rotation_deg) {
            return Err(Error::config("max_rotation_deg", "must lie in [0, 90]"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::config("label_noise", "must lie in [0, 0.5)"));
        }
        if !(self.domain_shift >= 0.0 && self.domain_shift.is_finite()) {
            return Err(Error::config("domain_shift", "must be finite and >= 0"));
        }
        if !(0.0 <= self.min_positive && self.min_positive < self.max_positive && self.max_positive <= 1.0) {
            return Err(Error::config("min_positive", "need 0 <= min_positive < max_positive <= 1"));
        }
        Ok(())
    }
}

const MAX_REBALANCE_ATTEMPTS: usize = 10_000;

fn unit_gaussian<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = l2_norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// Generates one shard per user. A user's draw is repeated with a fresh
/// stream until every non-empty split has a positive rate inside
/// `[min_positive, max_positive]`. Features are then standardized with
/// train-split statistics, per user or pooled according to the spec.
pub fn generate_classification_shards(spec: &ClassificationSpec, seed: u64) -> Result<Vec<UserShard>> {
    spec.validate()?;
    let dim = spec.dim;
    let global = unit_gaussian(&mut stream(seed, StreamKey::new(Purpose::Global, 0, 0)), dim);
    let max_angle = spec.max_rotation_deg.to_radians();

    let mut shards = (0..spec.num_users)
        .map(|user| {
            for attempt in 0..MAX_REBALANCE_ATTEMPTS {
                let mut rng = stream(seed, StreamKey::new(Purpose::Data, user, attempt));
                // direction orthogonal to the global separator spans the rotation plane
                let mut ortho = unit_gaussian(&mut rng, dim);
                let along = dot(&ortho, &global);
                ortho.iter_mut().zip(&global).for_each(|(o, g)| *o -= along * g);
                let n = l2_norm(&ortho);
                ortho.iter_mut().for_each(|o| *o /= n);
                let angle = rng.gen_range(0.0..=max_angle);
                let (s, c) = libm::sincos(angle);
                let separator: Vec<f64> = global.iter().zip(&ortho).map(|(g, o)| c * g + s * o).collect();
                let shift: Vec<f64> = (0..dim)
                    .map(|_| spec.domain_shift * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let offset: f64 = 0.5 * rng.sample::<f64, _>(StandardNormal);

                let mut draw = |n: usize| -> Vec<Example> {
                    (0..n)
                        .map(|_| {
                            let features: Vec<f64> = shift
                                .iter()
                                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                                .collect();
                            let clean = dot(&separator, &features) + offset > 0.0;
                            let flip = rng.gen_bool(spec.label_noise);
                            Example {
                                features,
                                target: if clean != flip { 1.0 } else { 0.0 },
                            }
                        })
                        .collect()
                };
                let shard = UserShard {
                    user_id: user,
                    train: draw(spec.sizes.train),
                    validation: draw(spec.sizes.validation),
                    test: draw(spec.sizes.test),
                };
                let balanced = [&shard.train, &shard.validation, &shard.test]
                    .iter()
                    .filter(|split| !split.is_empty())
                    .all(|split| {
                        let rate = positive_rate(split);
                        rate >= spec.min_positive && rate <= spec.max_positive
                    });
                if balanced {
                    return Ok(shard);
                }
            }
            Err(Error::config(
                "min_positive",
                format!("user {user}: could not reach a balanced label split"),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    match spec.standardization {
        Standardization::PerUser => shards.iter_mut().for_each(standardize),
        Standardization::Pooled => standardize_pooled(&mut shards),
    }
    Ok(shards)
}

/// Fraction of examples whose target is 1.
pub fn positive_rate(examples: &[Example]) -> f64 {
    if examples.is_empty() {
        return f64::NAN;
    }
    examples.iter().filter(|e| e.target == 1.0).count() as f64 / examples.len() as f64
}

/// Per-feature mean and inverse standard deviation over a set of examples.
/// Constant features get scale 1.
fn feature_moments<'a>(examples: impl Iterator<Item = &'a Example> + Clone) -> Option<(Vec<f64>, Vec<f64>)> {
    let dim = examples.clone().next()?.features.len();
    let n = examples.clone().count() as f64;
    let mut mean = vec![0.0; dim];
    for ex in examples.clone() {
        mean.iter_mut().zip(&ex.features).for_each(|(m, x)| *m += x / n);
    }
    let mut var = vec![0.0; dim];
    for ex in examples {
        for ((v, x), m) in var.iter_mut().zip(&ex.features).zip(&mean) {
            *v += (x - m) * (x - m) / n;
        }
    }
    let scale = var
        .iter()
        .map(|&v| if v > 1e-24 { 1.0 / sqrt(v) } else { 1.0 })
        .collect();
    Some((mean, scale))
}

fn apply_moments(shard: &mut UserShard, mean: &[f64], scale: &[f64]) {
    for ex in shard
        .train
        .iter_mut()
        .chain(shard.validation.iter_mut())
        .chain(shard.test.iter_mut())
    {
        for ((x, m), s) in ex.features.iter_mut().zip(mean).zip(scale) {
            *x = (*x - m) * s;
        }
    }
}

/// Rescales every split to zero mean / unit variance per feature using the
/// shard's own train statistics.
pub fn standardize(shard: &mut UserShard) {
    if let Some((mean, scale)) = feature_moments(shard.train.iter()) {
        apply_moments(shard, &mean, &scale);
    }
}

/// As [`standardize`], with statistics taken over every shard's train split,
/// so differences between users' input distributions are preserved.
pub fn standardize_pooled(shards: &mut [UserShard]) {
    if let Some((mean, scale)) = feature_moments(shards.iter().flat_map(|s| s.train.iter())) {
        for shard in shards.iter_mut() {
            apply_moments(shard, &mean, &scale);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_domain(mean: [f64; 2]) -> DomainSpec {
        DomainSpec {
            mean,
            covariance: [[1.5, 0.0], [0.0, 1.5]],
        }
    }

    #[test]
    fn synth_target_examples() {
        assert_eq!(synth_target(0.0, 0.0), 0.0);
        assert_eq!(synth_target(1.0, 1.0), 3.5);
        assert_eq!(synth_target(0.0, 2.0), 0.0);
    }

    #[test]
    fn synth_target_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1_000_000 {
            let x1: f64 = rng.gen_range(-10.0..10.0);
            let x2: f64 = rng.gen_range(-10.0..10.0);
            let expected = 5.0 * x1 - 2.0 * x2 + 0.5 * libm::pow(x2, 3.0);
            let got = synth_target(x1, x2);
            assert!((got - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn regression_shards_have_requested_sizes_and_replay() {
        let specs = [identity_domain([-2.0, -2.0]), identity_domain([2.0, 2.0])];
        let sizes = SplitSizes::new(2500, 500, 500);
        let a = generate_regression_shards(&specs, sizes, 42).unwrap();
        assert_eq!(a.len(), 2);
        for (i, s) in a.iter().enumerate() {
            assert_eq!(s.user_id, i);
            assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (2500, 500, 500));
            for ex in s.examples() {
                assert_eq!(ex.target, synth_target(ex.features[0], ex.features[1]));
            }
        }
        let b = generate_regression_shards(&specs, sizes, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_regression_shards(&specs, sizes, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn non_positive_definite_covariance_is_rejected() {
        let spec = DomainSpec {
            mean: [0.0, 0.0],
            covariance: [[1.0, 2.0], [2.0, 1.0]],
        };
        let err = generate_regression_shards(&[spec], SplitSizes::new(10, 10, 10), 1).unwrap_err();
        assert!(matches!(err, Error::Config { field: "covariance", .. }));
        let asym = DomainSpec {
            mean: [0.0, 0.0],
            covariance: [[1.0, 0.1], [0.0, 1.0]],
        };
        assert!(asym.cholesky().is_err());
    }

    #[test]
    fn cholesky_reconstructs_covariance() {
        let spec = DomainSpec {
            mean: [0.0, 0.0],
            covariance: [[1.5, 1.2], [1.2, 4.0]],
        };
        let l = spec.cholesky().unwrap();
        let rebuilt = [
            [l[0][0] * l[0][0], l[0][0] * l[1][0]],
            [l[1][0] * l[0][0], l[1][0] * l[1][0] + l[1][1] * l[1][1]],
        ];
        for i in 0..2 {
            for j in 0..2 {
                assert!((rebuilt[i][j] - spec.covariance[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_sample_means_are_within_three_standard_errors() {
        let spec = DomainSpec {
            mean: [-2.0, 0.5],
            covariance: [[1.5, 1.2], [1.2, 4.0]],
        };
        let shards = generate_regression_shards(&[spec], SplitSizes::new(2500, 500, 500), 9).unwrap();
        let sd = spec.std_devs();
        for split in [&shards[0].train, &shards[0].validation, &shards[0].test] {
            let n = split.len() as f64;
            for axis in 0..2 {
                let m = split.iter().map(|e| e.features[axis]).sum::<f64>() / n;
                assert!((m - spec.mean[axis]).abs() < 3.0 * sd[axis] / sqrt(n), "axis {axis}: {m}");
            }
        }
    }

    #[test]
    fn splits_do_not_share_examples() {
        let shards =
            generate_regression_shards(&[identity_domain([0.0, 0.0])], SplitSizes::new(300, 100, 100), 3).unwrap();
        let mut seen: Vec<&[f64]> = shards[0].examples().map(|e| e.features.as_slice()).collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 500);
    }

    #[test]
    fn classification_shards_match_spam_split() {
        let spec = ClassificationSpec::new(15, 200, 50, 350);
        let shards = generate_classification_shards(&spec, 7).unwrap();
        assert_eq!(shards.len(), 15);
        for s in &shards {
            assert_eq!(s.train.len(), 50);
            assert_eq!(s.test.len(), 350);
            assert!(s.validation.is_empty());
            assert!(s.examples().all(|e| e.features.len() == 200));
            for split in [&s.train, &s.test] {
                let rate = positive_rate(split);
                assert!((0.3..=0.7).contains(&rate), "user {} rate {rate}", s.user_id);
            }
        }
        assert_eq!(validate_shards(&shards, TaskKind::BinaryClassification).unwrap(), 200);
        assert_eq!(shards, generate_classification_shards(&spec, 7).unwrap());
    }

    #[test]
    fn classification_features_are_standardized_on_train() {
        let mut spec = ClassificationSpec::new(3, 6, 80, 40);
        spec.standardization = Standardization::PerUser;
        for s in generate_classification_shards(&spec, 2).unwrap() {
            for j in 0..6 {
                let col: Vec<f64> = s.train.iter().map(|e| e.features[j]).collect();
                let (m, sd) = crate::math::mean_std(&col);
                assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
            }
        }
        spec.standardization = Standardization::Pooled;
        let shards = generate_classification_shards(&spec, 2).unwrap();
        for j in 0..6 {
            let col: Vec<f64> = shards.iter().flat_map(|s| s.train.iter().map(move |e| e.features[j])).collect();
            let (m, sd) = crate::math::mean_std(&col);
            assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_rejects_bad_config() {
        let err = generate_classification_shards(&ClassificationSpec::new(1, 10, 50, 350), 7).unwrap_err();
        assert!(matches!(err, Error::Config { field: "num_users", .. }));
        assert!(generate_classification_shards(&ClassificationSpec::new(3, 10, 0, 350), 7).is_err());
        assert!(generate_classification_shards(&ClassificationSpec::new(3, 1, 5, 5), 7).is_err());
    }

    #[test]
    fn validate_shards_catches_mixed_dimensions_and_bad_labels() {
        let mut shards = generate_classification_shards(&ClassificationSpec::new(2, 4, 10, 10), 1).unwrap();
        shards[1].test[0].target = 0.5;
        assert!(validate_shards(&shards, TaskKind::BinaryClassification).is_err());
        assert!(validate_shards(&shards, TaskKind::Regression).is_ok());
        shards[1].test[0].features.push(1.0);
        assert!(matches!(
            validate_shards(&shards, TaskKind::Regression),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
