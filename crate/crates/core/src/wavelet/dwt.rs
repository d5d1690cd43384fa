use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::filters::FilterPair;
use crate::error::{invalid, shape, Result};
use crate::numerics::ImageGrid;

/// One level of a 2D decomposition.
///
/// `lh` responds to horizontal structure (lowpass along x, highpass along y),
/// `hl` to vertical structure, `hh` to diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    pub ll: ImageGrid,
    pub lh: ImageGrid,
    pub hl: ImageGrid,
    pub hh: ImageGrid,
    pub level: usize,
    /// Spatial dims of the grid this level was computed from.
    pub source_dims: (usize, usize),
}

impl SubbandSet {
    pub fn details(&self) -> [&ImageGrid; 3] {
        [&self.lh, &self.hl, &self.hh]
    }

    pub fn detail_energy(&self) -> f64 {
        self.details().iter().map(|g| g.sum_squares()).sum()
    }

    pub fn energy(&self) -> f64 {
        self.ll.sum_squares() + self.detail_energy()
    }
}

/// Single-level 1D analysis. Odd lengths are padded by repeating the last
/// sample; the signal is treated as periodic beyond its (padded) ends.
pub fn dwt1d(signal: &[f64], filters: &FilterPair) -> Result<(Vec<f64>, Vec<f64>)> {
    if signal.is_empty() {
        return Err(invalid("cannot transform an empty signal"));
    }
    let padded;
    let x = if signal.len() % 2 == 1 {
        padded = pad_to_even(signal);
        &padded[..]
    } else {
        signal
    };
    let half = x.len() / 2;
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    analyze(x, &filters.lowpass, &filters.highpass, &mut approx, &mut detail);
    Ok((approx, detail))
}

/// Single-level 1D synthesis; returns the even-length (padded) signal.
pub fn idwt1d(approx: &[f64], detail: &[f64], filters: &FilterPair) -> Result<Vec<f64>> {
    if approx.len() != detail.len() {
        return Err(shape(format!(
            "approx has {} samples, detail has {}",
            approx.len(),
            detail.len()
        )));
    }
    if approx.is_empty() {
        return Err(invalid("cannot invert an empty transform"));
    }
    let mut out = vec![0.0; approx.len() * 2];
    synthesize(approx, detail, &filters.synth_lowpass, &filters.synth_highpass, &mut out);
    Ok(out)
}

fn pad_to_even(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.push(x[x.len() - 1]);
    v
}

fn analyze(x: &[f64], h0: &[f64], h1: &[f64], lo: &mut [f64], hi: &mut [f64]) {
    let n = x.len();
    for k in 0..lo.len() {
        let (mut a, mut d) = (0.0, 0.0);
        for (t, (&l, &h)) in h0.iter().zip(h1).enumerate() {
            let v = x[(2 * k + t) % n];
            a += l * v;
            d += h * v;
        }
        lo[k] = a;
        hi[k] = d;
    }
}

fn synthesize(lo: &[f64], hi: &[f64], g0: &[f64], g1: &[f64], out: &mut [f64]) {
    let n = out.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..lo.len() {
        for (t, (&l, &h)) in g0.iter().zip(g1).enumerate() {
            out[(2 * k + t) % n] += l * lo[k] + h * hi[k];
        }
    }
}

/// Separable single-level 2D analysis: rows with `fx`, then columns with
/// `fy`.
pub fn dwt2d_separable(image: &ImageGrid, fx: &FilterPair, fy: &FilterPair) -> Result<SubbandSet> {
    let (h, w, c) = image.dims();
    if c != 1 {
        return Err(invalid(format!(
            "2D transform takes one channel, got {c}; split channels first"
        )));
    }
    if h == 0 || w == 0 {
        return Err(invalid("cannot transform an empty image"));
    }
    let (hp, wp) = (h + h % 2, w + w % 2);
    let (h2, w2) = (hp / 2, wp / 2);

    // Row pass: low/high halves along x, on the padded row count.
    let mut low_x = vec![0.0; hp * w2];
    let mut high_x = vec![0.0; hp * w2];
    let mut row = vec![0.0; wp];
    for y in 0..hp {
        let sy = y.min(h - 1);
        for x in 0..wp {
            row[x] = image.get(sy, x.min(w - 1), 0);
        }
        analyze(
            &row,
            &fx.lowpass,
            &fx.highpass,
            &mut low_x[y * w2..(y + 1) * w2],
            &mut high_x[y * w2..(y + 1) * w2],
        );
    }

    let mut out = [
        vec![0.0; h2 * w2],
        vec![0.0; h2 * w2],
        vec![0.0; h2 * w2],
        vec![0.0; h2 * w2],
    ];
    let mut col = vec![0.0; hp];
    let mut lo = vec![0.0; h2];
    let mut hi = vec![0.0; h2];
    for (src, (lo_dst, hi_dst)) in [(&low_x, (0, 1)), (&high_x, (2, 3))] {
        for x in 0..w2 {
            for y in 0..hp {
                col[y] = src[y * w2 + x];
            }
            analyze(&col, &fy.lowpass, &fy.highpass, &mut lo, &mut hi);
            for y in 0..h2 {
                out[lo_dst][y * w2 + x] = lo[y];
                out[hi_dst][y * w2 + x] = hi[y];
            }
        }
    }
    let [ll, lh, hl, hh] = out.map(|d| ImageGrid::from_vec(h2, w2, 1, d).expect("sized above"));
    Ok(SubbandSet {
        ll,
        lh,
        hl,
        hh,
        level: 1,
        source_dims: (h, w),
    })
}

pub fn idwt2d_separable(bands: &SubbandSet, fx: &FilterPair, fy: &FilterPair) -> Result<ImageGrid> {
    let (h2, w2, _) = bands.ll.dims();
    for b in bands.details() {
        if b.dims() != (h2, w2, 1) {
            return Err(shape(format!(
                "sub-band dims {:?} do not match ll {:?}",
                b.dims(),
                bands.ll.dims()
            )));
        }
    }
    if bands.ll.channels() != 1 {
        return Err(shape("sub-bands must be single-channel"));
    }
    let (h, w) = bands.source_dims;
    if (h + h % 2) / 2 != h2 || (w + w % 2) / 2 != w2 {
        return Err(shape(format!(
            "source dims {h}x{w} inconsistent with sub-band dims {h2}x{w2}"
        )));
    }
    let (hp, wp) = (h2 * 2, w2 * 2);
    let mut low_x = vec![0.0; hp * w2];
    let mut high_x = vec![0.0; hp * w2];
    let mut col = vec![0.0; hp];
    let mut lo = vec![0.0; h2];
    let mut hi = vec![0.0; h2];
    for (dst, lo_src, hi_src) in [
        (&mut low_x, &bands.ll, &bands.lh),
        (&mut high_x, &bands.hl, &bands.hh),
    ] {
        for x in 0..w2 {
            for y in 0..h2 {
                lo[y] = lo_src.get(y, x, 0);
                hi[y] = hi_src.get(y, x, 0);
            }
            synthesize(&lo, &hi, &fy.synth_lowpass, &fy.synth_highpass, &mut col);
            for y in 0..hp {
                dst[y * w2 + x] = col[y];
            }
        }
    }
    let mut row = vec![0.0; wp];
    let mut out = ImageGrid::zeros(h, w, 1);
    for y in 0..h {
        synthesize(
            &low_x[y * w2..(y + 1) * w2],
            &high_x[y * w2..(y + 1) * w2],
            &fx.synth_lowpass,
            &fx.synth_highpass,
            &mut row,
        );
        for x in 0..w {
            out.set(y, x, 0, row[x]);
        }
    }
    Ok(out)
}

pub fn dwt2d(image: &ImageGrid, filters: &FilterPair) -> Result<SubbandSet> {
    dwt2d_separable(image, filters, filters)
}

pub fn idwt2d(bands: &SubbandSet, filters: &FilterPair) -> Result<ImageGrid> {
    idwt2d_separable(bands, filters, filters)
}

fn check_levels(image: &ImageGrid, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(invalid("levels must be at least 1"));
    }
    let need = 1usize.checked_shl(levels as u32).unwrap_or(usize::MAX);
    if image.height() < need || image.width() < need {
        return Err(invalid(format!(
            "{levels} levels need at least {need}x{need}, image is {}x{}",
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Pyramid where level `l` (1-based) uses the filters chosen by
/// `select(l)` as `(along x, along y)`.
pub fn dwt2d_multilevel_with<'f>(
    image: &ImageGrid,
    levels: usize,
    mut select: impl FnMut(usize) -> (&'f FilterPair, &'f FilterPair),
) -> Result<Vec<SubbandSet>> {
    check_levels(image, levels)?;
    let mut out: Vec<SubbandSet> = Vec::with_capacity(levels);
    for l in 1..=levels {
        let src = out.last().map_or(image, |s| &s.ll);
        let (fx, fy) = select(l);
        let mut s = dwt2d_separable(src, fx, fy)?;
        s.level = l;
        out.push(s);
    }
    Ok(out)
}

pub fn idwt2d_multilevel_with<'f>(
    pyramid: &[SubbandSet],
    mut select: impl FnMut(usize) -> (&'f FilterPair, &'f FilterPair),
) -> Result<ImageGrid> {
    let Some(coarsest) = pyramid.last() else {
        return Err(invalid("empty pyramid"));
    };
    let mut ll = coarsest.ll.clone();
    for s in pyramid.iter().rev() {
        let (fx, fy) = select(s.level);
        let level = SubbandSet {
            ll,
            lh: s.lh.clone(),
            hl: s.hl.clone(),
            hh: s.hh.clone(),
            level: s.level,
            source_dims: s.source_dims,
        };
        ll = idwt2d_separable(&level, fx, fy)?;
    }
    Ok(ll)
}

/// Multilevel pyramid; every level keeps its `ll`, the last one is the
/// coarsest approximation.
pub fn dwt2d_multilevel(image: &ImageGrid, filters: &FilterPair, levels: usize) -> Result<Vec<SubbandSet>> {
    dwt2d_multilevel_with(image, levels, |_| (filters, filters))
}

pub fn idwt2d_multilevel(pyramid: &[SubbandSet], filters: &FilterPair) -> Result<ImageGrid> {
    idwt2d_multilevel_with(pyramid, |_| (filters, filters))
}

#[cfg(test)]
mod tests {
    use super::super::filters::{FilterFamily, Tree};
    use super::*;
    use core::f64::consts::SQRT_2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn families() -> Vec<FilterPair> {
        vec![
            FilterPair::new(FilterFamily::Haar),
            FilterPair::new(FilterFamily::Daub4),
            FilterPair::dual(FilterFamily::FarrasFirstStage, Tree::A),
            FilterPair::dual(FilterFamily::FarrasFirstStage, Tree::B),
            FilterPair::dual(FilterFamily::QShift10, Tree::A),
            FilterPair::dual(FilterFamily::QShift10, Tree::B),
        ]
    }

    fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> ImageGrid {
        ImageGrid::from_fn(h, w, 1, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn haar_1d_examples() {
        let f = FilterPair::haar();
        let (a, d) = dwt1d(&[1.0, 1.0], &f).unwrap();
        assert!((a[0] - SQRT_2).abs() < 1e-15 && d[0].abs() < 1e-15);
        let (a, d) = dwt1d(&[1.0, -1.0], &f).unwrap();
        assert!(a[0].abs() < 1e-15 && (d[0] - SQRT_2).abs() < 1e-15);
        let x = idwt1d(&[SQRT_2], &[0.0], &f).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        let x = idwt1d(&[0.0], &[SQRT_2], &f).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let f = FilterPair::haar();
        assert!(dwt1d(&[], &f).is_err());
        assert!(idwt1d(&[1.0], &[1.0, 2.0], &f).is_err());
        let rgb = ImageGrid::zeros(4, 4, 3);
        assert!(dwt2d(&rgb, &f).is_err());
        let img = ImageGrid::zeros(8, 8, 1);
        assert!(dwt2d_multilevel(&img, &f, 4).is_err());
        assert!(dwt2d_multilevel(&img, &f, 0).is_err());
        let mut s = dwt2d(&img, &f).unwrap();
        s.hh = ImageGrid::zeros(3, 4, 1);
        assert!(idwt2d(&s, &f).is_err());
    }

    #[test]
    fn roundtrip_1d_random_16() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for f in families() {
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a, d) = dwt1d(&x, &f).unwrap();
            let y = idwt1d(&a, &d, &f).unwrap();
            for (p, q) in x.iter().zip(&y) {
                assert!((p - q).abs() < 1e-10, "{:?}", f.name);
            }
        }
    }

    #[test]
    fn odd_length_is_padded_and_recoverable() {
        let f = FilterPair::new(FilterFamily::Daub4);
        let x = [0.3, 0.1, 0.9, 0.4, 0.7];
        let (a, d) = dwt1d(&x, &f).unwrap();
        assert_eq!(a.len(), 3);
        let y = idwt1d(&a, &d, &f).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((y[5] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn constant_haar_2d() {
        let img = ImageGrid::filled(8, 8, 1, 0.3);
        let s = dwt2d(&img, &FilterPair::haar()).unwrap();
        assert_eq!(s.ll.dims(), (4, 4, 1));
        assert!(s.ll.data().iter().all(|v| (v - 0.6).abs() < 1e-14));
        for b in s.details() {
            assert!(b.data().iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn horizontal_edge_lands_in_lh() {
        // Top half dark, bottom half bright: variation along y only.
        let img = ImageGrid::from_fn(16, 16, 1, |y, _, _| if y < 7 { 0.0 } else { 1.0 });
        for f in families() {
            let s = dwt2d(&img, &f).unwrap();
            assert!(s.lh.sum_squares() > 10.0 * s.hl.sum_squares() + 1e-9, "{:?}", f.name);
        }
        let t = ImageGrid::from_fn(16, 16, 1, |_, x, _| if x < 7 { 0.0 } else { 1.0 });
        let s = dwt2d(&t, &FilterPair::new(FilterFamily::Daub4)).unwrap();
        assert!(s.hl.sum_squares() > 10.0 * s.lh.sum_squares());
    }

    #[test]
    fn roundtrip_and_parseval_2d() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        for f in families() {
            for &(h, w) in &[(16, 16), (8, 12), (2, 2), (64, 64)] {
                let img = random_image(&mut rng, h, w);
                let s = dwt2d(&img, &f).unwrap();
                let back = idwt2d(&s, &f).unwrap();
                assert!(back.rms_diff(&img).unwrap() < 1e-10);
                assert!((s.energy() - img.sum_squares()).abs() < 1e-8 * img.sum_squares());
            }
        }
    }

    #[test]
    fn odd_dims_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let img = random_image(&mut rng, 9, 7);
        let f = FilterPair::dual(FilterFamily::QShift10, Tree::B);
        let s = dwt2d(&img, &f).unwrap();
        assert_eq!(s.ll.dims(), (5, 4, 1));
        assert!(idwt2d(&s, &f).unwrap().rms_diff(&img).unwrap() < 1e-10);
    }

    #[test]
    fn multilevel() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(24);
        let f = FilterPair::new(FilterFamily::Daub4);
        let img = random_image(&mut rng, 32, 32);
        let one = dwt2d_multilevel(&img, &f, 1).unwrap();
        assert_eq!(one[0], dwt2d(&img, &f).unwrap());
        let p = dwt2d_multilevel(&img, &f, 3).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[2].ll.dims(), (4, 4, 1));
        assert!(idwt2d_multilevel(&p, &f).unwrap().rms_diff(&img).unwrap() < 1e-8);

        let c = ImageGrid::filled(16, 16, 1, 0.8);
        for s in dwt2d_multilevel(&c, &f, 2).unwrap() {
            assert!(s.detail_energy() < 1e-24);
        }
    }

    #[test]
    fn impulse_shift_changes_detail_energy() {
        let f = FilterPair::new(FilterFamily::Daub4);
        let energies: Vec<f64> = (0..8)
            .map(|s| {
                let img = ImageGrid::from_fn(16, 16, 1, |y, x, _| if y == 8 && x == 4 + s { 1.0 } else { 0.0 });
                dwt2d(&img, &f).unwrap().detail_energy()
            })
            .collect();
        let mean = energies.iter().sum::<f64>() / 8.0;
        let var = energies.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / 8.0;
        assert!(var > 1e-6, "{energies:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn perfect_reconstruction_any_size(h in 1usize..20, w in 1usize..20, seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, h, w);
            for f in families() {
                let back = idwt2d(&dwt2d(&img, &f).unwrap(), &f).unwrap();
                prop_assert!(back.rms_diff(&img).unwrap() < 1e-10);
            }
        }
    }
}
