//! Synapse-centered patches, augmentation, and contrastive pair batches.
//!
//! Every batch draws its supervoxels without replacement, so the two views of
//! pair `i` share a supervoxel and any two different pairs never do.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::volume_io::{validate_synapses, IntensityVolume, SynapseRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Two different synapses of the same supervoxel.
    DistinctSynapses,
    /// One synapse seen twice under independent augmentations.
    AugmentSame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Draw one of the 48 axis-aligned rotations/reflections per view.
    pub use_octahedral: bool,
    pub intensity_scale_range: [f64; 2],
    /// Additive shift in raw intensity units (0–255 scale).
    pub intensity_shift_range: [f64; 2],
    /// Gaussian noise in raw intensity units (0–255 scale).
    pub noise_sigma: f64,
    pub max_jitter_vox: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            use_octahedral: true,
            intensity_scale_range: [0.8, 1.2],
            intensity_shift_range: [-20.0, 20.0],
            noise_sigma: 5.0,
            max_jitter_vox: 1,
        }
    }
}

impl AugmentConfig {
    /// No-op augmentation.
    pub fn identity() -> Self {
        AugmentConfig {
            use_octahedral: false,
            intensity_scale_range: [1.0, 1.0],
            intensity_shift_range: [0.0, 0.0],
            noise_sigma: 0.0,
            max_jitter_vox: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("intensity_scale_range", self.intensity_scale_range),
            ("intensity_shift_range", self.intensity_shift_range),
        ] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid("augment config", format!("{name} needs lo <= hi, got [{lo}, {hi}]")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("augment config", format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub patch_side: usize,
    pub pair_mode: PairMode,
    pub max_pair_dist_nm: Option<f64>,
    pub batch_pairs: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            patch_side: 16,
            pair_mode: PairMode::DistinctSynapses,
            max_pair_dist_nm: None,
            batch_pairs: 16,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_side < 4 {
            return Err(Error::invalid("sampler config", format!("patch_side must be >= 4, got {}", self.patch_side)));
        }
        if self.batch_pairs < 2 {
            return Err(Error::invalid("sampler config", format!("batch_pairs must be >= 2, got {}", self.batch_pairs)));
        }
        if let Some(d) = self.max_pair_dist_nm {
            if !(d > 0.0) {
                return Err(Error::invalid("sampler config", format!("max_pair_dist_nm must be > 0, got {d}")));
            }
        }
        self.augment.validate()
    }
}

/// Seed for worker stream `worker` of a sampler seeded with `seed`.
pub fn worker_seed(seed: u64, worker: u64) -> u64 {
    seed ^ worker
}

/// An intensity volume with its synapse table, grouped by supervoxel.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub intensity: IntensityVolume,
    pub synapses: Vec<SynapseRecord>,
    groups: BTreeMap<u64, Vec<usize>>,
}

impl Dataset {
    pub fn new(intensity: IntensityVolume, synapses: Vec<SynapseRecord>) -> Result<Self> {
        validate_synapses(&synapses, intensity.dims(), None)?;
        let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, s) in synapses.iter().enumerate() {
            groups.entry(s.supervoxel_id).or_default().push(i);
        }
        Ok(Dataset {
            intensity,
            synapses,
            groups,
        })
    }

    /// Synapse indices per supervoxel, ordered by supervoxel id.
    pub fn groups(&self) -> &BTreeMap<u64, Vec<usize>> {
        &self.groups
    }

    fn dist_nm(&self, a: usize, b: usize) -> f64 {
        let vs = self.intensity.voxel_size_nm();
        let (pa, pb) = (self.synapses[a].pos, self.synapses[b].pos);
        (0..3)
            .map(|i| ((pa[i] as f64 - pb[i] as f64) * vs[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Cube of side `s` centered on `center` (index `s/2` for even `s`), scaled to
/// `[0, 1]`, zero outside the volume. Shape `[s, s, s]`, x fastest.
pub fn extract_patch(vol: &IntensityVolume, center: [i64; 3], s: usize) -> Tensor {
    let half = (s / 2) as i64;
    let [nx, ny, nz] = vol.dims().map(|d| d as i64);
    let mut out = Tensor::zeros(&[s, s, s]);
    let data = out.data_mut();
    let x0 = center[0] - half;
    // clip the x run once per row
    let xa = (-x0).clamp(0, s as i64) as usize;
    let xb = (nx - x0).clamp(0, s as i64) as usize;
    for k in 0..s {
        let z = center[2] - half + k as i64;
        if z < 0 || z >= nz {
            continue;
        }
        for j in 0..s {
            let y = center[1] - half + j as i64;
            if y < 0 || y >= ny || xa >= xb {
                continue;
            }
            let src = vol.index((x0 + xa as i64) as usize, y as usize, z as usize);
            let dst = (k * s + j) * s;
            for (o, &v) in data[dst + xa..dst + xb].iter_mut().zip(&vol.voxels()[src..src + (xb - xa)]) {
                *o = f64::from(v) / 255.0;
            }
        }
    }
    out
}

/// An element of the 48-element octahedral group acting on cube indices.
///
/// Output index `o = (o0, o1, o2)` reads input index `q` with
/// `q[perm[k]] = flip[k] ? s-1-o[k] : o[k]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Octahedral {
    pub perm: [usize; 3],
    pub flip: [bool; 3],
}

const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

impl Octahedral {
    pub const IDENTITY: Octahedral = Octahedral {
        perm: [0, 1, 2],
        flip: [false; 3],
    };

    /// Element `i` of the group, `0 <= i < 48`.
    pub fn from_index(i: usize) -> Self {
        assert!(i < 48);
        Octahedral {
            perm: PERMS[i / 8],
            flip: [i & 1 != 0, i & 2 != 0, i & 4 != 0],
        }
    }

    pub fn all() -> impl Iterator<Item = Octahedral> {
        (0..48).map(Octahedral::from_index)
    }

    pub fn inverse(self) -> Self {
        let mut perm = [0; 3];
        let mut flip = [false; 3];
        for k in 0..3 {
            perm[self.perm[k]] = k;
            flip[self.perm[k]] = self.flip[k];
        }
        Octahedral { perm, flip }
    }

    /// Applies the transform to a cubic `[s, s, s]` tensor.
    pub fn apply(self, patch: &Tensor) -> Tensor {
        let s = patch.shape()[0];
        assert_eq!(patch.shape(), [s, s, s], "octahedral transforms need a cube");
        let mut out = Tensor::zeros(&[s, s, s]);
        let src = patch.data();
        let dst = out.data_mut();
        let mut o = [0usize; 3];
        for (i, d) in dst.iter_mut().enumerate() {
            o[0] = i / (s * s);
            o[1] = (i / s) % s;
            o[2] = i % s;
            let mut q = [0usize; 3];
            for k in 0..3 {
                q[self.perm[k]] = if self.flip[k] { s - 1 - o[k] } else { o[k] };
            }
            *d = src[(q[0] * s + q[1]) * s + q[2]];
        }
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Octahedral symmetry, then `x·a + b`, then Gaussian noise, then clamp to
/// `[0, 1]`. Translation jitter happens at extraction time instead.
pub fn augment(patch: &Tensor, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = if cfg.use_octahedral {
        Octahedral::from_index(rng.random_range(0..48)).apply(patch)
    } else {
        patch.clone()
    };
    let a = uniform(rng, cfg.intensity_scale_range);
    let b = uniform(rng, cfg.intensity_shift_range) / 255.0;
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma / 255.0).expect("sigma validated"));
    for v in out.data_mut() {
        let mut x = *v * a + b;
        if let Some(n) = &noise {
            x += n.sample(rng);
        }
        *v = x.clamp(0.0, 1.0);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub views_a: Vec<Tensor>,
    pub views_b: Vec<Tensor>,
    pub supervoxel_ids: Vec<u64>,
    /// Source synapse of each view, for provenance checks.
    pub synapse_ids_a: Vec<u64>,
    pub synapse_ids_b: Vec<u64>,
}

/// Eligible supervoxels and their admissible positives, computed once per
/// dataset and configuration.
#[derive(Clone, Debug)]
pub struct Sampler {
    cfg: SamplerConfig,
    eligible: Vec<(u64, Vec<(usize, usize)>)>,
}

impl Sampler {
    pub fn new(dataset: &Dataset, cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut eligible = Vec::new();
        for (&sv, members) in dataset.groups() {
            let pairs: Vec<(usize, usize)> = match cfg.pair_mode {
                PairMode::AugmentSame => members.iter().map(|&i| (i, i)).collect(),
                PairMode::DistinctSynapses => {
                    let mut p = Vec::new();
                    for (x, &i) in members.iter().enumerate() {
                        for &j in &members[x + 1..] {
                            if cfg.max_pair_dist_nm.is_none_or(|m| dataset.dist_nm(i, j) <= m) {
                                p.push((i, j));
                            }
                        }
                    }
                    p
                }
            };
            if !pairs.is_empty() {
                eligible.push((sv, pairs));
            }
        }
        if eligible.len() < cfg.batch_pairs {
            return Err(Error::invalid(
                "dataset",
                format!(
                    "only {} eligible supervoxels for batches of {} pairs",
                    eligible.len(),
                    cfg.batch_pairs
                ),
            ));
        }
        Ok(Sampler { cfg, eligible })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    /// Ids of supervoxels that can supply a positive pair.
    pub fn eligible_supervoxels(&self) -> Vec<u64> {
        self.eligible.iter().map(|(sv, _)| *sv).collect()
    }

    fn view(&self, dataset: &Dataset, synapse: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let j = self.cfg.augment.max_jitter_vox as i64;
        let p = dataset.synapses[synapse].pos;
        let center = [0, 1, 2].map(|a| p[a] as i64 + if j > 0 { rng.random_range(-j..=j) } else { 0 });
        let patch = extract_patch(&dataset.intensity, center, self.cfg.patch_side);
        augment(&patch, &self.cfg.augment, rng)
    }

    pub fn sample_batch(&self, dataset: &Dataset, rng: &mut ChaCha8Rng) -> PairBatch {
        let n = self.cfg.batch_pairs;
        let chosen = index::sample(rng, self.eligible.len(), n);
        let mut batch = PairBatch {
            views_a: Vec::with_capacity(n),
            views_b: Vec::with_capacity(n),
            supervoxel_ids: Vec::with_capacity(n),
            synapse_ids_a: Vec::with_capacity(n),
            synapse_ids_b: Vec::with_capacity(n),
        };
        for e in chosen {
            let (sv, pairs) = &self.eligible[e];
            let (mut a, mut b) = pairs[rng.random_range(0..pairs.len())];
            if rng.random_bool(0.5) {
                std::mem::swap(&mut a, &mut b);
            }
            batch.supervoxel_ids.push(*sv);
            batch.synapse_ids_a.push(dataset.synapses[a].id);
            batch.synapse_ids_b.push(dataset.synapses[b].id);
            batch.views_a.push(self.view(dataset, a, rng));
            batch.views_b.push(self.view(dataset, b, rng));
        }
        batch
    }
}

/// One-shot convenience: builds the sampler and draws one batch.
pub fn sample_batch(dataset: &Dataset, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<PairBatch> {
    Ok(Sampler::new(dataset, cfg.clone())?.sample_batch(dataset, rng))
}

/// Deterministic stream for a seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use std::collections::{HashMap, HashSet};

    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::volume_io::DEFAULT_VOXEL_SIZE_NM;

    fn random_volume(dims: [usize; 3], seed: u64) -> IntensityVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        IntensityVolume::new(dims, DEFAULT_VOXEL_SIZE_NM, (0..n).map(|_| rng.random()).collect()).unwrap()
    }

    fn gather_oracle(vol: &IntensityVolume, c: [i64; 3], s: usize) -> Vec<f64> {
        let h = (s / 2) as i64;
        let mut out = Vec::new();
        for k in 0..s as i64 {
            for j in 0..s as i64 {
                for i in 0..s as i64 {
                    let v = vol.get_signed([c[0] - h + i, c[1] - h + j, c[2] - h + k]).unwrap_or(0);
                    out.push(f64::from(v) / 255.0);
                }
            }
        }
        out
    }

    #[test]
    fn constant_volume_patch() {
        let vol = IntensityVolume::filled([10, 10, 10], DEFAULT_VOXEL_SIZE_NM, 128).unwrap();
        let p = extract_patch(&vol, [5, 4, 6], 4);
        assert!(p.data().iter().all(|&v| v == 128.0 / 255.0));
    }

    #[test]
    fn corner_patch_zeroes_outside_octants() {
        let vol = IntensityVolume::filled([10, 10, 10], DEFAULT_VOXEL_SIZE_NM, 200).unwrap();
        let p = extract_patch(&vol, [0, 0, 0], 8);
        for k in 0..8 {
            for j in 0..8 {
                for i in 0..8 {
                    let inside = i >= 4 && j >= 4 && k >= 4;
                    let v = p.data()[(k * 8 + j) * 8 + i];
                    assert_eq!(v, if inside { 200.0 / 255.0 } else { 0.0 });
                }
            }
        }
        assert_eq!(p.data(), gather_oracle(&vol, [0, 0, 0], 8));
    }

    #[test]
    fn patch_matches_gather_for_random_centers() {
        let vol = random_volume([12, 9, 7], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let c = [rng.random_range(-4..16), rng.random_range(-4..13), rng.random_range(-4..11)];
            let s = rng.random_range(4..10);
            assert_eq!(extract_patch(&vol, c, s).data(), gather_oracle(&vol, c, s));
        }
    }

    fn asymmetric_patch(s: usize) -> Tensor {
        Tensor::from_vec(&[s, s, s], (0..s * s * s).map(|i| i as f64 / (s * s * s) as f64).collect()).unwrap()
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let p = asymmetric_patch(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&p, &AugmentConfig::identity(), &mut rng), p);
    }

    #[test]
    fn octahedral_inverse_restores_patch() {
        let p = asymmetric_patch(4);
        let mut images = HashSet::new();
        for g in Octahedral::all() {
            let t = g.apply(&p);
            assert_eq!(g.inverse().apply(&t), p, "{g:?}");
            images.insert(t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        // 48 distinct images: the group acts faithfully
        assert_eq!(images.len(), 48);
        assert_eq!(Octahedral::IDENTITY.apply(&p), p);
    }

    #[test]
    fn scale_only_doubles_mean() {
        let p = Tensor::filled(&[4, 4, 4], 0.25);
        let cfg = AugmentConfig {
            intensity_scale_range: [2.0, 2.0],
            ..AugmentConfig::identity()
        };
        let out = augment(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let mean = out.data().iter().sum::<f64>() / out.len() as f64;
        assert_eq!(mean, 0.5);
        let clamped = augment(&Tensor::filled(&[4, 4, 4], 0.75), &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(clamped.data().iter().all(|&v| v == 1.0));
    }

    fn line_dataset(n_sv: usize, per_sv: usize) -> Dataset {
        let vol = random_volume([64, 64, 8], 3);
        let mut synapses = Vec::new();
        for sv in 0..n_sv {
            for k in 0..per_sv {
                synapses.push(SynapseRecord {
                    id: (sv * 100 + k) as u64,
                    pos: [(k * 3) % 64, (sv * 5) % 64, 4],
                    supervoxel_id: sv as u64 + 1,
                    class_label: None,
                });
            }
        }
        Dataset::new(vol, synapses).unwrap()
    }

    fn small_cfg(n: usize) -> SamplerConfig {
        SamplerConfig {
            patch_side: 4,
            batch_pairs: n,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn exactly_n_supervoxels_with_two_synapses() {
        let ds = line_dataset(4, 2);
        let sampler = Sampler::new(&ds, small_cfg(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let b = sampler.sample_batch(&ds, &mut rng);
            let mut svs = b.supervoxel_ids.clone();
            svs.sort();
            assert_eq!(svs, vec![1, 2, 3, 4]);
            for i in 0..4 {
                let mut pair = [b.synapse_ids_a[i], b.synapse_ids_b[i]];
                pair.sort();
                let base = (b.supervoxel_ids[i] - 1) * 100;
                assert_eq!(pair, [base, base + 1]);
            }
        }
    }

    #[test]
    fn distance_cap_excludes_far_pairs() {
        let vol = random_volume([32, 32, 32], 4);
        let d = 5usize;
        let synapses = vec![
            SynapseRecord { id: 0, pos: [2, 2, 2], supervoxel_id: 1, class_label: None },
            SynapseRecord { id: 1, pos: [2 + d + 1, 2, 2], supervoxel_id: 1, class_label: None },
            SynapseRecord { id: 2, pos: [2, 10, 2], supervoxel_id: 2, class_label: None },
            SynapseRecord { id: 3, pos: [2 + d, 10, 2], supervoxel_id: 2, class_label: None },
            SynapseRecord { id: 4, pos: [2, 20, 2], supervoxel_id: 3, class_label: None },
            SynapseRecord { id: 5, pos: [3, 20, 2], supervoxel_id: 3, class_label: None },
        ];
        let ds = Dataset::new(vol, synapses).unwrap();
        let cfg = SamplerConfig {
            max_pair_dist_nm: Some(8.0 * d as f64),
            ..small_cfg(2)
        };
        let s = Sampler::new(&ds, cfg.clone()).unwrap();
        assert_eq!(s.eligible_supervoxels(), vec![2, 3]);
        let err = Sampler::new(&ds, SamplerConfig { batch_pairs: 3, ..cfg }).unwrap_err();
        assert!(err.to_string().contains("only 2 eligible"));
    }

    #[test]
    fn singletons_only_in_augment_same_mode() {
        let ds = line_dataset(3, 1);
        assert!(Sampler::new(&ds, small_cfg(2)).is_err());
        let cfg = SamplerConfig {
            pair_mode: PairMode::AugmentSame,
            ..small_cfg(3)
        };
        let s = Sampler::new(&ds, cfg).unwrap();
        let b = s.sample_batch(&ds, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(b.synapse_ids_a, b.synapse_ids_b);
        assert_ne!(b.views_a[0], b.views_b[0]);
    }

    #[test]
    fn same_seed_same_batches() {
        let ds = line_dataset(6, 3);
        let s = Sampler::new(&ds, small_cfg(3)).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            assert_eq!(s.sample_batch(&ds, &mut r1), s.sample_batch(&ds, &mut r2));
        }
        assert_eq!(worker_seed(5, 0), 5);
        assert_ne!(worker_seed(5, 1), worker_seed(5, 2));
    }

    #[test]
    fn selection_frequencies_are_uniform() {
        let ds = line_dataset(10, 2);
        let s = Sampler::new(&ds, small_cfg(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut counts: HashMap<u64, usize> = HashMap::new();
        let trials = 10_000;
        for _ in 0..trials {
            for sv in s.sample_batch(&ds, &mut rng).supervoxel_ids {
                *counts.entry(sv).or_default() += 1;
            }
        }
        let p = 3.0 / 10.0;
        let (mean, sd) = (trials as f64 * p, (trials as f64 * p * (1.0 - p)).sqrt());
        for c in counts.values() {
            assert!((*c as f64 - mean).abs() <= 3.0 * sd, "{c} vs {mean}±{sd}");
        }
    }

    proptest! {
        #[test]
        fn batches_keep_both_invariants(seed in any::<u64>(), n in 2usize..6) {
            let ds = line_dataset(8, 3);
            let s = Sampler::new(&ds, small_cfg(n)).unwrap();
            let b = s.sample_batch(&ds, &mut ChaCha8Rng::seed_from_u64(seed));
            let distinct: HashSet<_> = b.supervoxel_ids.iter().collect();
            prop_assert_eq!(distinct.len(), n);
            for i in 0..n {
                let sv = b.supervoxel_ids[i];
                prop_assert_ne!(b.synapse_ids_a[i], b.synapse_ids_b[i]);
                for id in [b.synapse_ids_a[i], b.synapse_ids_b[i]] {
                    let rec = ds.synapses.iter().find(|r| r.id == id).unwrap();
                    prop_assert_eq!(rec.supervoxel_id, sv);
                }
            }
        }
    }
}
