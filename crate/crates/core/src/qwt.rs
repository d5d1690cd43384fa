//! Dual-tree quaternion wavelet transform.
//!
//! Four separable multilevel DWTs run side by side. With `h` the tree-A and
//! `g` the tree-B filter bank (a Hilbert pair), tree `a` filters rows and
//! columns with `(h, h)`, tree `b` with `(g, h)`, tree `c` with `(h, g)` and
//! tree `d` with `(g, g)`, listed as (along x, along y). Every coefficient of
//! a sub-band becomes the quaternion `a + b·i + c·j + d·k` built from the
//! four trees at that position.
//!
//! Level 1 uses the Farras pair, deeper levels the 10-tap q-shift pair.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, shape, Result};
use crate::numerics::{ImageGrid, Quaternion};
use crate::wavelet::{
    dwt2d_multilevel_with, idwt2d_multilevel_with, FilterFamily, FilterPair, SubbandSet, Tree,
};

/// A grid of quaternion coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct QuatGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Quaternion>,
}

impl QuatGrid {
    fn from_trees(trees: [&ImageGrid; 4]) -> Self {
        let (height, width, _) = trees[0].dims();
        let data = (0..height * width)
            .map(|i| {
                Quaternion::new(
                    trees[0].data()[i],
                    trees[1].data()[i],
                    trees[2].data()[i],
                    trees[3].data()[i],
                )
            })
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn get(&self, y: usize, x: usize) -> Quaternion {
        self.data[y * self.width + x]
    }

    /// One quaternion component (0 = a … 3 = d) as a real plane.
    pub fn component(&self, k: usize) -> ImageGrid {
        ImageGrid::from_fn(self.height, self.width, 1, |y, x, _| {
            self.get(y, x).components()[k]
        })
    }

    pub fn magnitude(&self) -> ImageGrid {
        ImageGrid::from_fn(self.height, self.width, 1, |y, x, _| self.get(y, x).magnitude())
    }

    /// `Σ |q|²` over the grid.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|q| q.norm_sqr()).sum()
    }
}

/// The four quaternion sub-bands of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct QwtLevel {
    pub phi_q: QuatGrid,
    pub psi_h: QuatGrid,
    pub psi_v: QuatGrid,
    pub psi_d: QuatGrid,
    pub source_dims: (usize, usize),
}

impl QwtLevel {
    pub fn subbands(&self) -> [&QuatGrid; 4] {
        [&self.phi_q, &self.psi_h, &self.psi_v, &self.psi_d]
    }

    pub fn details(&self) -> [&QuatGrid; 3] {
        [&self.psi_h, &self.psi_v, &self.psi_d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QwtDecomposition {
    pub levels: Vec<QwtLevel>,
    pub source_dims: (usize, usize),
}

impl QwtDecomposition {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, level: usize) -> Result<&QwtLevel> {
        if level == 0 || level > self.levels.len() {
            return Err(invalid(format!(
                "level {level} out of range 1..={}",
                self.levels.len()
            )));
        }
        Ok(&self.levels[level - 1])
    }
}

/// Filter bank of one tree along one axis at a given level.
pub fn qwt_filter(level: usize, tree: Tree) -> FilterPair {
    let family = if level <= 1 {
        FilterFamily::FarrasFirstStage
    } else {
        FilterFamily::QShift10
    };
    FilterPair::dual(family, tree)
}

/// Per-tree `(x, y)` branch choice, in component order a, b, c, d.
pub const TREE_BRANCHES: [(Tree, Tree); 4] = [
    (Tree::A, Tree::A),
    (Tree::B, Tree::A),
    (Tree::A, Tree::B),
    (Tree::B, Tree::B),
];

struct Banks {
    first: [FilterPair; 2],
    deep: [FilterPair; 2],
}

impl Banks {
    fn new() -> Self {
        Self {
            first: [qwt_filter(1, Tree::A), qwt_filter(1, Tree::B)],
            deep: [qwt_filter(2, Tree::A), qwt_filter(2, Tree::B)],
        }
    }

    fn get(&self, level: usize, tree: Tree) -> &FilterPair {
        let set = if level <= 1 { &self.first } else { &self.deep };
        match tree {
            Tree::A => &set[0],
            Tree::B => &set[1],
        }
    }
}

/// The multilevel pyramid of a single tree (`tree` in 0..4).
pub fn qwt_tree(image: &ImageGrid, levels: usize, tree: usize) -> Result<Vec<SubbandSet>> {
    let (bx, by) = *TREE_BRANCHES
        .get(tree)
        .ok_or_else(|| invalid(format!("tree index {tree} out of range 0..4")))?;
    let banks = Banks::new();
    dwt2d_multilevel_with(image, levels, |l| (banks.get(l, bx), banks.get(l, by)))
}

pub fn qwt_forward(image: &ImageGrid, levels: usize) -> Result<QwtDecomposition> {
    if image.channels() != 1 {
        return Err(invalid(format!(
            "transform takes one channel, got {}",
            image.channels()
        )));
    }
    let trees = (0..4)
        .map(|t| qwt_tree(image, levels, t))
        .collect::<Result<Vec<_>>>()?;
    let levels = (0..levels)
        .map(|l| {
            let at = |f: fn(&SubbandSet) -> &ImageGrid| {
                QuatGrid::from_trees([f(&trees[0][l]), f(&trees[1][l]), f(&trees[2][l]), f(&trees[3][l])])
            };
            QwtLevel {
                phi_q: at(|s| &s.ll),
                psi_h: at(|s| &s.lh),
                psi_v: at(|s| &s.hl),
                psi_d: at(|s| &s.hh),
                source_dims: trees[0][l].source_dims,
            }
        })
        .collect();
    Ok(QwtDecomposition {
        levels,
        source_dims: (image.height(), image.width()),
    })
}

/// Inverts every tree and averages the four reconstructions.
pub fn qwt_inverse(decomp: &QwtDecomposition) -> Result<ImageGrid> {
    if decomp.levels.is_empty() {
        return Err(invalid("decomposition has no levels"));
    }
    let mut expected = decomp.source_dims;
    for (i, lvl) in decomp.levels.iter().enumerate() {
        if lvl.source_dims != expected {
            return Err(shape(format!(
                "level {} built from {:?}, expected {:?}",
                i + 1,
                lvl.source_dims,
                expected
            )));
        }
        let half = (expected.0.div_ceil(2), expected.1.div_ceil(2));
        for g in lvl.subbands() {
            if (g.height, g.width) != half || g.data.len() != half.0 * half.1 {
                return Err(shape(format!(
                    "level {} sub-band is {}x{}, expected {}x{}",
                    i + 1,
                    g.height,
                    g.width,
                    half.0,
                    half.1
                )));
            }
        }
        expected = half;
    }
    let banks = Banks::new();
    let (h, w) = decomp.source_dims;
    let mut acc = ImageGrid::zeros(h, w, 1);
    for (t, &(bx, by)) in TREE_BRANCHES.iter().enumerate() {
        let pyramid: Vec<SubbandSet> = decomp
            .levels
            .iter()
            .enumerate()
            .map(|(i, lvl)| SubbandSet {
                ll: lvl.phi_q.component(t),
                lh: lvl.psi_h.component(t),
                hl: lvl.psi_v.component(t),
                hh: lvl.psi_d.component(t),
                level: i + 1,
                source_dims: lvl.source_dims,
            })
            .collect();
        let rec = idwt2d_multilevel_with(&pyramid, |l| (banks.get(l, bx), banks.get(l, by)))?;
        acc = acc.zip_map(&rec, |p, q| p + q)?;
    }
    Ok(acc.map(|v| 0.25 * v))
}

/// The 16 real planes of one level, ordered
/// `[phi_q.a..d, psi_h.a..d, psi_v.a..d, psi_d.a..d]`.
pub fn qwt_planes(decomp: &QwtDecomposition, level: usize) -> Result<ImageGrid> {
    let lvl = decomp.level(level)?;
    let planes: Vec<ImageGrid> = lvl
        .subbands()
        .iter()
        .flat_map(|g| (0..4).map(move |k| g.component(k)))
        .collect();
    ImageGrid::from_planes(&planes)
}

/// Detail-band energies of every level, in level-major `[h, v, d]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProfile {
    /// `Σ|q|²` per quaternion sub-band.
    pub quaternion: Vec<f64>,
    /// `Σ a²` per sub-band of tree `a` alone, i.e. the plain real DWT.
    pub real: Vec<f64>,
}

pub fn energy_profile(decomp: &QwtDecomposition) -> EnergyProfile {
    let mut quaternion = Vec::new();
    let mut real = Vec::new();
    for lvl in &decomp.levels {
        for g in lvl.details() {
            quaternion.push(g.energy());
            real.push(g.data.iter().map(|q| q.a * q.a).sum());
        }
    }
    EnergyProfile { quaternion, real }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{dwt2d_separable, idwt2d_multilevel_with as inv};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> ImageGrid {
        ImageGrid::from_fn(h, w, 1, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn constant_image_has_no_detail() {
        let d = qwt_forward(&ImageGrid::filled(16, 16, 1, 0.6), 2).unwrap();
        for lvl in &d.levels {
            for g in lvl.details() {
                assert!(g.magnitude().data().iter().all(|m| *m < 1e-12));
            }
        }
        let p = qwt_planes(&d, 1).unwrap();
        assert_eq!(p.channels(), 16);
        for c in 4..16 {
            assert!(p.channel(c).unwrap().data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn roundtrip_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for &(h, w, levels) in &[(32, 32, 1), (32, 32, 3), (20, 12, 2), (9, 15, 1)] {
            let img = random_image(&mut rng, h, w);
            let d = qwt_forward(&img, levels).unwrap();
            assert_eq!(d.num_levels(), levels);
            assert!(qwt_inverse(&d).unwrap().rms_diff(&img).unwrap() < 1e-6);
        }
    }

    #[test]
    fn every_tree_reconstructs_alone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(32);
        let img = random_image(&mut rng, 32, 32);
        let banks = Banks::new();
        for (t, &(bx, by)) in TREE_BRANCHES.iter().enumerate() {
            let p = qwt_tree(&img, 2, t).unwrap();
            let rec = inv(&p, |l| (banks.get(l, bx), banks.get(l, by))).unwrap();
            assert!(rec.rms_diff(&img).unwrap() < 1e-10);
        }
    }

    #[test]
    fn planes_match_independent_trees() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        let img = random_image(&mut rng, 16, 16);
        let d = qwt_forward(&img, 1).unwrap();
        let p = qwt_planes(&d, 1).unwrap();
        // Recompute each tree directly from the filter banks.
        let trees = [
            (Tree::A, Tree::A),
            (Tree::B, Tree::A),
            (Tree::A, Tree::B),
            (Tree::B, Tree::B),
        ];
        for (t, (bx, by)) in trees.into_iter().enumerate() {
            let fx = FilterPair::dual(FilterFamily::FarrasFirstStage, bx);
            let fy = FilterPair::dual(FilterFamily::FarrasFirstStage, by);
            let s = dwt2d_separable(&img, &fx, &fy).unwrap();
            for (band, g) in [&s.ll, &s.lh, &s.hl, &s.hh].into_iter().enumerate() {
                let c = p.channel(band * 4 + t).unwrap();
                assert_eq!(c.data(), g.data(), "tree {t} band {band}");
            }
        }
    }

    #[test]
    fn level_out_of_range() {
        let d = qwt_forward(&ImageGrid::zeros(8, 8, 1), 2).unwrap();
        assert!(qwt_planes(&d, 0).is_err());
        assert!(qwt_planes(&d, 3).is_err());
        assert!(qwt_planes(&d, 2).is_ok());
        assert!(qwt_forward(&ImageGrid::zeros(8, 8, 1), 4).is_err());
        assert!(qwt_forward(&ImageGrid::zeros(8, 8, 3), 1).is_err());
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let mut d = qwt_forward(&ImageGrid::zeros(8, 8, 1), 1).unwrap();
        d.levels[0].psi_d.width = 3;
        assert!(qwt_inverse(&d).is_err());
    }

    #[test]
    fn negation_preserves_magnitude() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(34);
        let img = random_image(&mut rng, 16, 16);
        let d = qwt_forward(&img, 2).unwrap();
        let n = qwt_forward(&img.map(|v| -v), 2).unwrap();
        for (a, b) in d.levels.iter().zip(&n.levels) {
            for (ga, gb) in a.subbands().iter().zip(b.subbands()) {
                for (qa, qb) in ga.data.iter().zip(&gb.data) {
                    assert!(((-*qb).magnitude() - qa.magnitude()).abs() < 1e-9);
                    assert!((qa.a + qb.a).abs() < 1e-12);
                }
            }
        }
    }

    fn relative_change(before: &[f64], after: &[f64]) -> f64 {
        let num: f64 = before.iter().zip(after).map(|(a, b)| (a - b).abs()).sum();
        num / before.iter().sum::<f64>()
    }

    #[test]
    fn impulse_shift_is_gentler_on_magnitudes() {
        let img = ImageGrid::from_fn(32, 32, 1, |y, x, _| if y == 13 && x == 17 { 1.0 } else { 0.0 });
        let p0 = energy_profile(&qwt_forward(&img, 2).unwrap());
        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
            let p1 = energy_profile(&qwt_forward(&img.roll(dy, dx), 2).unwrap());
            let q = relative_change(&p0.quaternion, &p1.quaternion);
            let r = relative_change(&p0.real, &p1.real);
            assert!(r > 0.0 && 3.0 * q <= r, "shift ({dy},{dx}): qwt {q}, dwt {r}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn roundtrip_prop(h in 4usize..24, w in 4usize..24, seed in 0u64..500) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, h, w);
            let d = qwt_forward(&img, 2).unwrap();
            prop_assert!(qwt_inverse(&d).unwrap().rms_diff(&img).unwrap() < 1e-6);
        }
    }
}
