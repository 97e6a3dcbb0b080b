//! Synthetic phantoms: a segmentation made of jittered-grid territories, one
//! latent class per territory, and synapse sites whose local appearance is
//! determined by that class.
//!
//! Each site renders, in order: a shell of `rim_thickness` at
//! `rim_intensity`, a dark bar of `bar_half_length` through the center along a
//! randomly chosen axis, and a filled ball of `blob_radius` at
//! `core_intensity`. The ball is painted last, so only the protruding ends of
//! the bar stay visible and the center voxel always carries the core value.
//! Gaussian noise is added last and clamped to `[0, 255]`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::{IntensityVolume, SegmentationVolume, SynapseRecord, DEFAULT_VOXEL_SIZE_NM};

/// Half-width of the bar cross-section, in voxels.
pub const BAR_HALF_WIDTH: i64 = 1;

/// Interior grid boundaries move by up to this fraction of a cell.
const GRID_JITTER: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassParams {
    pub blob_radius_vox: f64,
    pub rim_thickness_vox: f64,
    pub bar_half_length_vox: f64,
    pub core_intensity: u8,
    pub rim_intensity: u8,
}

impl ClassParams {
    fn outer_radius(&self) -> f64 {
        self.blob_radius_vox + self.rim_thickness_vox
    }

    fn reach(&self) -> f64 {
        self.outer_radius().max(self.bar_half_length_vox)
    }
}

/// Built-in morphology table, cycled when more classes are requested.
pub fn default_class_params(n_classes: usize) -> Vec<ClassParams> {
    let table = [
        ClassParams {
            blob_radius_vox: 2.0,
            rim_thickness_vox: 2.0,
            bar_half_length_vox: 6.0,
            core_intensity: 230,
            rim_intensity: 150,
        },
        ClassParams {
            blob_radius_vox: 3.0,
            rim_thickness_vox: 1.0,
            bar_half_length_vox: 5.0,
            core_intensity: 170,
            rim_intensity: 210,
        },
        ClassParams {
            blob_radius_vox: 4.0,
            rim_thickness_vox: 1.0,
            bar_half_length_vox: 6.0,
            core_intensity: 150,
            rim_intensity: 60,
        },
    ];
    (0..n_classes).map(|k| table[k % table.len()].clone()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub dims: [usize; 3],
    pub voxel_size_nm: [f64; 3],
    pub n_supervoxels: usize,
    pub synapses_per_supervoxel: usize,
    pub n_classes: usize,
    pub noise_sigma: f64,
    /// One entry per class; empty means [`default_class_params`].
    pub class_params: Vec<ClassParams>,
    pub background_intensity: u8,
    pub bar_intensity: u8,
    /// Minimum distance between synapse sites. `None` uses twice the largest
    /// outer shell radius, so shells never overlap.
    pub min_site_separation_vox: Option<f64>,
    pub max_placement_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            dims: [160, 128, 96],
            voxel_size_nm: DEFAULT_VOXEL_SIZE_NM,
            n_supervoxels: 60,
            synapses_per_supervoxel: 8,
            n_classes: 3,
            noise_sigma: 10.0,
            class_params: Vec::new(),
            background_intensity: 110,
            bar_intensity: 20,
            min_site_separation_vox: None,
            max_placement_attempts: 20_000,
        }
    }
}

impl GenConfig {
    pub fn classes(&self) -> Vec<ClassParams> {
        if self.class_params.is_empty() {
            default_class_params(self.n_classes)
        } else {
            self.class_params.clone()
        }
    }

    pub fn site_separation(&self) -> f64 {
        let outer = self.classes().iter().map(ClassParams::outer_radius).fold(0.0, f64::max);
        let floor = 2.0 * self.classes().iter().map(|c| c.blob_radius_vox).fold(0.0, f64::max);
        self.min_site_separation_vox.unwrap_or(2.0 * outer).max(floor)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("generator config", d));
        if self.n_classes == 0 {
            return bad("n_classes must be >= 1".into());
        }
        if self.n_supervoxels < self.n_classes {
            return bad(format!(
                "n_supervoxels ({}) must be >= n_classes ({})",
                self.n_supervoxels, self.n_classes
            ));
        }
        if self.synapses_per_supervoxel == 0 {
            return bad("synapses_per_supervoxel must be >= 1".into());
        }
        if self.dims.iter().any(|&d| d == 0) {
            return bad(format!("dims must be >= 1, got {:?}", self.dims));
        }
        if self.voxel_size_nm.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("voxel sizes must be > 0, got {:?}", self.voxel_size_nm));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        let classes = self.classes();
        if classes.len() != self.n_classes {
            return bad(format!(
                "class_params has {} entries for {} classes",
                classes.len(),
                self.n_classes
            ));
        }
        for (k, c) in classes.iter().enumerate() {
            if !(c.blob_radius_vox > 0.0 && c.rim_thickness_vox > 0.0 && c.bar_half_length_vox > 0.0) {
                return bad(format!("class {}: all radii must be > 0", k + 1));
            }
        }
        if let Some(s) = self.min_site_separation_vox {
            if !(s > 0.0) {
                return bad(format!("min_site_separation_vox must be > 0, got {s}"));
            }
        }
        let cells = grid_counts(self.dims, self.n_supervoxels);
        if cells.iter().zip(self.dims).any(|(&g, d)| g > d) {
            return bad(format!(
                "dims {:?} cannot hold {} territories",
                self.dims, self.n_supervoxels
            ));
        }
        Ok(())
    }
}

/// Axis-aligned box `[lo, hi)` in voxels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Territory {
    pub supervoxel_id: u64,
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Territory {
    /// True when the two boxes share a face of positive area.
    pub fn touches(&self, other: &Territory) -> bool {
        let mut touching_axis = 0;
        for a in 0..3 {
            if self.hi[a] == other.lo[a] || other.hi[a] == self.lo[a] {
                touching_axis += 1;
            } else if self.hi[a] <= other.lo[a] || other.hi[a] <= self.lo[a] {
                return false;
            }
        }
        touching_axis == 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub intensity: IntensityVolume,
    pub segmentation: SegmentationVolume,
    pub synapses: Vec<SynapseRecord>,
    pub class_of_supervoxel: BTreeMap<u64, u32>,
    pub territories: Vec<Territory>,
}

/// Smallest grid whose cell count reaches `n`, refining the axis with the
/// largest cells first.
fn grid_counts(dims: [usize; 3], n: usize) -> [usize; 3] {
    let mut g = [1usize; 3];
    while g.iter().product::<usize>() < n {
        let axis = (0..3)
            .max_by(|&a, &b| {
                let ra = dims[a] as f64 / g[a] as f64;
                let rb = dims[b] as f64 / g[b] as f64;
                ra.partial_cmp(&rb).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        g[axis] += 1;
    }
    g
}

fn jittered_bounds(extent: usize, cells: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let width = extent as f64 / cells as f64;
    let mut b: Vec<usize> = (0..=cells)
        .map(|i| {
            let base = i as f64 * width;
            if i == 0 || i == cells {
                base.round() as usize
            } else {
                let j = rng.random_range(-GRID_JITTER..=GRID_JITTER) * width;
                (base + j).round() as usize
            }
        })
        .collect();
    // keep every cell at least one voxel wide
    for i in 1..cells {
        b[i] = b[i].max(b[i - 1] + 1);
    }
    b
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

pub fn generate(cfg: &GenConfig) -> Result<Phantom> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes = cfg.classes();
    let v = cfg.n_supervoxels;

    let g = grid_counts(cfg.dims, v);
    let bounds: Vec<Vec<usize>> = (0..3).map(|a| jittered_bounds(cfg.dims[a], g[a], &mut rng)).collect();
    let mut territories = Vec::with_capacity(v);
    'cells: for cz in 0..g[2] {
        for cy in 0..g[1] {
            for cx in 0..g[0] {
                if territories.len() == v {
                    break 'cells;
                }
                let c = [cx, cy, cz];
                territories.push(Territory {
                    supervoxel_id: territories.len() as u64 + 1,
                    lo: [0, 1, 2].map(|a| bounds[a][c[a]]),
                    hi: [0, 1, 2].map(|a| bounds[a][c[a] + 1]),
                });
            }
        }
    }

    let mut class_list: Vec<u32> = (0..v).map(|i| (i % cfg.n_classes) as u32 + 1).collect();
    class_list.shuffle(&mut rng);
    let class_of_supervoxel: BTreeMap<u64, u32> = territories
        .iter()
        .zip(&class_list)
        .map(|(t, &c)| (t.supervoxel_id, c))
        .collect();

    let mut segmentation = SegmentationVolume::filled(cfg.dims, cfg.voxel_size_nm, 0)?;
    for t in &territories {
        for z in t.lo[2]..t.hi[2] {
            for y in t.lo[1]..t.hi[1] {
                let row = segmentation.index(t.lo[0], y, z);
                segmentation.voxels_mut()[row..row + (t.hi[0] - t.lo[0])].fill(t.supervoxel_id);
            }
        }
    }

    let sep = cfg.site_separation();
    // keep every shell inside the volume so no rendered site is clipped
    let margin = classes.iter().map(|c| c.outer_radius().ceil() as usize).max().unwrap_or(0);
    let mut sites: Vec<([usize; 3], u64, u32, usize)> = Vec::new();
    for t in &territories {
        let lo = [0, 1, 2].map(|a| t.lo[a].max(margin));
        let hi = [0, 1, 2].map(|a| t.hi[a].min(cfg.dims[a].saturating_sub(margin)));
        if (0..3).any(|a| lo[a] >= hi[a]) {
            return Err(Error::invalid(
                "generator config",
                format!(
                    "infeasible placement in supervoxel {}: territory lies within {margin} voxels of the volume border",
                    t.supervoxel_id
                ),
            ));
        }
        let first = sites.len();
        let mut attempts = 0;
        while sites.len() - first < cfg.synapses_per_supervoxel {
            attempts += 1;
            if attempts > cfg.max_placement_attempts {
                return Err(Error::invalid(
                    "generator config",
                    format!(
                        "infeasible placement in supervoxel {}: placed {} of {} sites after {} attempts",
                        t.supervoxel_id,
                        sites.len() - first,
                        cfg.synapses_per_supervoxel,
                        cfg.max_placement_attempts
                    ),
                ));
            }
            let p = [0, 1, 2].map(|a| rng.random_range(lo[a]..hi[a]));
            let pf = p.map(|c| c as f64);
            if sites.iter().all(|q| dist2(pf, q.0.map(|c| c as f64)) >= sep * sep) {
                let axis = rng.random_range(0..3);
                sites.push((p, t.supervoxel_id, class_of_supervoxel[&t.supervoxel_id], axis));
            }
        }
    }

    let mut intensity = IntensityVolume::filled(cfg.dims, cfg.voxel_size_nm, cfg.background_intensity)?;
    for &(p, _, class, axis) in &sites {
        render_site(&mut intensity, p, &classes[class as usize - 1], axis, cfg.bar_intensity);
    }
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
        for vox in intensity.voxels_mut() {
            let v = f64::from(*vox) + normal.sample(&mut rng);
            *vox = v.round().clamp(0.0, 255.0) as u8;
        }
    }

    let synapses = sites
        .iter()
        .enumerate()
        .map(|(i, &(pos, sv, class, _))| SynapseRecord {
            id: i as u64,
            pos,
            supervoxel_id: sv,
            class_label: Some(class),
        })
        .collect();

    Ok(Phantom {
        intensity,
        segmentation,
        synapses,
        class_of_supervoxel,
        territories,
    })
}

fn render_site(vol: &mut IntensityVolume, center: [usize; 3], c: &ClassParams, bar_axis: usize, bar_intensity: u8) {
    let reach = c.reach().ceil() as i64;
    let ctr = center.map(|v| v as i64);
    let r_core2 = c.blob_radius_vox * c.blob_radius_vox;
    let r_outer2 = c.outer_radius() * c.outer_radius();
    let mut paint = |pass: u8| {
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let d = [dx, dy, dz];
                    let pos = [ctr[0] + dx, ctr[1] + dy, ctr[2] + dz];
                    if !vol.contains(pos) {
                        continue;
                    }
                    let r2 = (dx * dx + dy * dy + dz * dz) as f64;
                    let value = match pass {
                        0 if r2 > r_core2 && r2 <= r_outer2 => Some(c.rim_intensity),
                        1 if (d[bar_axis].abs() as f64) <= c.bar_half_length_vox
                            && (0..3).filter(|&a| a != bar_axis).all(|a| d[a].abs() <= BAR_HALF_WIDTH) =>
                        {
                            Some(bar_intensity)
                        }
                        2 if r2 <= r_core2 => Some(c.core_intensity),
                        _ => None,
                    };
                    if let Some(v) = value {
                        vol.set(pos[0] as usize, pos[1] as usize, pos[2] as usize, v);
                    }
                }
            }
        }
    };
    paint(0);
    paint(1);
    paint(2);
}

/// Result of [`inject_false_merge`].
#[derive(Clone, Debug, PartialEq)]
pub struct FalseMerge {
    /// Surviving id that now covers both fragments.
    pub merged_id: u64,
    pub absorbed_id: u64,
    /// Midpoint (voxel coordinates) of the closest cross-fragment synapse pair.
    pub boundary_midpoint: [f64; 3],
}

/// Relabels every voxel and synapse of `sv_b` to `sv_a`, keeping class
/// labels, which makes `sv_a` violate the one-class-per-supervoxel rule.
pub fn inject_false_merge(phantom: &Phantom, sv_a: u64, sv_b: u64) -> Result<(Phantom, FalseMerge)> {
    if sv_a == sv_b {
        return Err(Error::invalid("false merge", format!("cannot merge supervoxel {sv_a} with itself")));
    }
    let class = |sv: u64| {
        phantom
            .class_of_supervoxel
            .get(&sv)
            .copied()
            .ok_or_else(|| Error::invalid("false merge", format!("unknown supervoxel id {sv}")))
    };
    let (ca, cb) = (class(sv_a)?, class(sv_b)?);
    if ca == cb {
        return Err(Error::invalid(
            "false merge",
            format!("supervoxels {sv_a} and {sv_b} share class {ca}; a same-class merge is undetectable"),
        ));
    }
    let vs = phantom.segmentation.voxel_size_nm();
    let nm = |p: [usize; 3]| [0, 1, 2].map(|a| p[a] as f64 * vs[a]);
    let frag = |sv: u64| phantom.synapses.iter().filter(move |s| s.supervoxel_id == sv);
    let mut best: Option<(f64, [usize; 3], [usize; 3])> = None;
    for a in frag(sv_a) {
        for b in frag(sv_b) {
            let d = dist2(nm(a.pos), nm(b.pos));
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, a.pos, b.pos));
            }
        }
    }
    let (_, pa, pb) = best.ok_or_else(|| {
        Error::invalid("false merge", format!("supervoxels {sv_a} and {sv_b} need at least one synapse each"))
    })?;

    let mut merged = phantom.clone();
    for v in merged.segmentation.voxels_mut() {
        if *v == sv_b {
            *v = sv_a;
        }
    }
    for s in &mut merged.synapses {
        if s.supervoxel_id == sv_b {
            s.supervoxel_id = sv_a;
        }
    }
    merged.class_of_supervoxel.remove(&sv_b);
    Ok((
        merged,
        FalseMerge {
            merged_id: sv_a,
            absorbed_id: sv_b,
            boundary_midpoint: [0, 1, 2].map(|a| (pa[a] as f64 + pb[a] as f64) / 2.0),
        },
    ))
}

/// Picks up to `n` disjoint pairs of face-adjacent territories with different
/// classes, in a seeded random order.
pub fn pick_cross_class_pairs(phantom: &Phantom, n: usize, seed: u64) -> Vec<(u64, u64)> {
    let mut candidates = Vec::new();
    for (i, a) in phantom.territories.iter().enumerate() {
        for b in &phantom.territories[i + 1..] {
            let (ca, cb) = (
                phantom.class_of_supervoxel.get(&a.supervoxel_id),
                phantom.class_of_supervoxel.get(&b.supervoxel_id),
            );
            if ca.is_some() && cb.is_some() && ca != cb && a.touches(b) {
                candidates.push((a.supervoxel_id, b.supervoxel_id));
            }
        }
    }
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut used = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (a, b) in candidates {
        if out.len() == n {
            break;
        }
        if !used.contains(&a) && !used.contains(&b) {
            used.insert(a);
            used.insert(b);
            out.push((a, b));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeSet, HashMap};

    use super::*;

    fn tiny(noise: f64) -> GenConfig {
        GenConfig {
            dims: [24, 24, 24],
            n_supervoxels: 1,
            synapses_per_supervoxel: 1,
            n_classes: 1,
            noise_sigma: noise,
            ..GenConfig::default()
        }
    }

    #[test]
    fn single_site_without_noise() {
        let cfg = tiny(0.0);
        let p = generate(&cfg).unwrap();
        assert_eq!(p.synapses.len(), 1);
        let s = &p.synapses[0];
        let core = cfg.classes()[0].core_intensity;
        assert_eq!(p.intensity.get(s.pos[0], s.pos[1], s.pos[2]), core);
        // exactly one rendered morphology: every non-background voxel lies
        // within the class reach of the single site
        let reach = cfg.classes()[0].reach();
        let [nx, ny, _] = cfg.dims;
        for (i, &v) in p.intensity.voxels().iter().enumerate() {
            if v != cfg.background_intensity {
                let q = [i % nx, (i / nx) % ny, i / (nx * ny)];
                let d = dist2(q.map(|c| c as f64), s.pos.map(|c| c as f64)).sqrt();
                assert!(d <= reach * 3f64.sqrt() + 1e-9);
            }
        }
    }

    #[test]
    fn default_config_class_histogram() {
        let cfg = GenConfig::default();
        let p = generate(&cfg).unwrap();
        assert_eq!(p.synapses.len(), 480);
        let mut hist = HashMap::new();
        for s in &p.synapses {
            *hist.entry(s.class_label.unwrap()).or_insert(0) += 1;
        }
        assert_eq!(hist, HashMap::from([(1, 160), (2, 160), (3, 160)]));
    }

    #[test]
    fn dale_invariant_and_segmentation_agreement() {
        let p = generate(&GenConfig::default()).unwrap();
        let mut classes: HashMap<u64, BTreeSet<u32>> = HashMap::new();
        for s in &p.synapses {
            classes.entry(s.supervoxel_id).or_default().insert(s.class_label.unwrap());
            assert_eq!(p.segmentation.get(s.pos[0], s.pos[1], s.pos[2]), s.supervoxel_id);
            assert_eq!(Some(&s.class_label.unwrap()), p.class_of_supervoxel.get(&s.supervoxel_id));
        }
        assert!(classes.values().all(|c| c.len() == 1));
        assert_eq!(classes.len(), 60);
    }

    #[test]
    fn sites_respect_separation() {
        let cfg = GenConfig::default();
        let p = generate(&cfg).unwrap();
        let sep = cfg.site_separation();
        for (i, a) in p.synapses.iter().enumerate() {
            for b in &p.synapses[i + 1..] {
                let d = dist2(a.pos.map(|c| c as f64), b.pos.map(|c| c as f64)).sqrt();
                assert!(d >= sep, "{} and {} are {d} apart", a.id, b.id);
            }
        }
    }

    #[test]
    fn determinism() {
        let cfg = GenConfig::default();
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        let b = generate(&GenConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(
            a.synapses.iter().map(|s| s.pos).collect::<Vec<_>>(),
            b.synapses.iter().map(|s| s.pos).collect::<Vec<_>>()
        );
    }

    #[test]
    fn size_threshold_recovers_class_without_noise() {
        // Radii 2, 4, 6 (≥ 2 apart). Separation keeps neighbours out of the
        // 16³ window, so a count of non-background voxels decides the class.
        let classes: Vec<ClassParams> = [2.0, 4.0, 6.0]
            .iter()
            .map(|&r| ClassParams {
                blob_radius_vox: r,
                rim_thickness_vox: 1.0,
                bar_half_length_vox: 3.0,
                core_intensity: 220,
                rim_intensity: 170,
            })
            .collect();
        let cfg = GenConfig {
            dims: [120, 120, 60],
            n_supervoxels: 9,
            synapses_per_supervoxel: 3,
            noise_sigma: 0.0,
            class_params: classes,
            min_site_separation_vox: Some(24.0),
            ..GenConfig::default()
        };
        let p = generate(&cfg).unwrap();
        let count = |c: [usize; 3]| {
            let mut n = 0;
            for z in -8..8i64 {
                for y in -8..8i64 {
                    for x in -8..8i64 {
                        let q = [c[0] as i64 + x, c[1] as i64 + y, c[2] as i64 + z];
                        if p.intensity.get_signed(q).is_some_and(|v| v != cfg.background_intensity) {
                            n += 1;
                        }
                    }
                }
            }
            n
        };
        // thresholds halfway between the ball volumes of radius 3 and 5
        // (outer radius = blob + rim)
        let vol = |r: f64| 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        let (t1, t2) = ((vol(3.0) + vol(5.0)) / 2.0, (vol(5.0) + vol(7.0)) / 2.0);
        for s in &p.synapses {
            let n = count(s.pos) as f64;
            let predicted = if n < t1 { 1 } else if n < t2 { 2 } else { 3 };
            assert_eq!(Some(predicted), s.class_label, "synapse {} count {n}", s.id);
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&GenConfig { n_classes: 0, ..GenConfig::default() }).is_err());
        assert!(generate(&GenConfig { n_supervoxels: 2, n_classes: 3, ..GenConfig::default() }).is_err());
        let err = generate(&GenConfig {
            dims: [40, 40, 40],
            synapses_per_supervoxel: 50,
            max_placement_attempts: 500,
            ..GenConfig::default()
        })
        .unwrap_err()
        .to_string();
        assert!(err.contains("infeasible placement in supervoxel"), "{err}");
    }

    fn two_single_site_supervoxels() -> Phantom {
        generate(&GenConfig {
            dims: [64, 32, 32],
            n_supervoxels: 2,
            synapses_per_supervoxel: 1,
            n_classes: 2,
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn merge_two_single_synapse_supervoxels() {
        let p = two_single_site_supervoxels();
        let (m, info) = inject_false_merge(&p, 1, 2).unwrap();
        assert_eq!(info.merged_id, 1);
        let merged: Vec<_> = m.synapses.iter().filter(|s| s.supervoxel_id == 1).collect();
        assert_eq!(merged.len(), 2);
        let labels: BTreeSet<_> = merged.iter().map(|s| s.class_label).collect();
        assert_eq!(labels.len(), 2);
        assert!(!m.segmentation.voxels().contains(&2));
        assert_eq!(m.intensity, p.intensity);
    }

    #[test]
    fn merge_errors() {
        let p = two_single_site_supervoxels();
        assert!(inject_false_merge(&p, 1, 1).is_err());
        assert!(inject_false_merge(&p, 1, 9).is_err());
        let same = generate(&GenConfig {
            dims: [64, 32, 32],
            n_supervoxels: 2,
            synapses_per_supervoxel: 1,
            n_classes: 1,
            ..GenConfig::default()
        })
        .unwrap();
        assert!(inject_false_merge(&same, 1, 2).unwrap_err().to_string().contains("same-class"));
    }

    #[test]
    fn boundary_midpoint_is_closest_cross_pair() {
        let p = generate(&GenConfig::default()).unwrap();
        for (a, b) in pick_cross_class_pairs(&p, 5, 3) {
            let (_, info) = inject_false_merge(&p, a, b).unwrap();
            let mut best = (f64::INFINITY, [0.0; 3]);
            for x in p.synapses.iter().filter(|s| s.supervoxel_id == a) {
                for y in p.synapses.iter().filter(|s| s.supervoxel_id == b) {
                    let d: f64 = (0..3).map(|i| (x.pos[i] as f64 - y.pos[i] as f64).powi(2)).sum();
                    if d < best.0 {
                        best = (d, [0, 1, 2].map(|i| (x.pos[i] + y.pos[i]) as f64 / 2.0));
                    }
                }
            }
            assert_eq!(info.boundary_midpoint, best.1);
        }
    }

    #[test]
    fn cross_class_pairs_are_disjoint_adjacent_and_mixed() {
        let p = generate(&GenConfig::default()).unwrap();
        let pairs = pick_cross_class_pairs(&p, 5, 0);
        assert_eq!(pairs.len(), 5);
        let mut seen = BTreeSet::new();
        let terr = |id: u64| p.territories.iter().find(|t| t.supervoxel_id == id).unwrap();
        for (a, b) in pairs {
            assert!(seen.insert(a) && seen.insert(b));
            assert_ne!(p.class_of_supervoxel[&a], p.class_of_supervoxel[&b]);
            assert!(terr(a).touches(terr(b)));
        }
    }

    #[test]
    fn grid_counts_cover_request() {
        assert_eq!(grid_counts([160, 128, 96], 60).iter().product::<usize>(), 60);
        assert!(grid_counts([10, 10, 10], 7).iter().product::<usize>() >= 7);
        assert_eq!(grid_counts([5, 5, 5], 1), [1, 1, 1]);
    }
}
