use alloc::vec::Vec;

/// Supported orthonormal filter families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterFamily {
    Haar,
    Daub4,
    /// Farras nearly-symmetric pair, used at the first dual-tree stage.
    FarrasFirstStage,
    /// Kingsbury 10-tap quarter-shift pair, used at deeper dual-tree stages.
    QShift10,
}

/// Which branch of a dual-tree filter bank. Single-tree families ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tree {
    A,
    B,
}

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;

const DAUB4: [f64; 4] = [
    0.482_962_913_144_534_143_37,
    0.836_516_303_737_807_905_58,
    0.224_143_868_042_013_381_03,
    -0.129_409_522_551_260_381_17,
];

// Farras taps in closed form: a = 1/(8√2), b,c = (1/√2 ± √(15/32)) / 2.
const FARRAS_A: f64 = 0.088_388_347_648_318_440_55;
const FARRAS_B: f64 = 0.695_879_989_034_002_583_11;
const FARRAS_C: f64 = 0.011_226_792_152_544_941_29;

const FARRAS_TREE_A: [f64; 10] = [
    0.0, -FARRAS_A, FARRAS_A, FARRAS_B, FARRAS_B, FARRAS_A, -FARRAS_A, FARRAS_C, FARRAS_C, 0.0,
];
const FARRAS_TREE_B: [f64; 10] = [
    FARRAS_C, FARRAS_C, -FARRAS_A, FARRAS_A, FARRAS_B, FARRAS_B, FARRAS_A, -FARRAS_A, 0.0, 0.0,
];

// Published 10-tap q-shift lowpass, re-solved to double precision for exact
// double-shift orthonormality and a zero at Nyquist. Tree B is its time reverse.
const QSHIFT_TREE_A: [f64; 10] = [
    0.035_163_837_344_447_815,
    0.0,
    -0.088_329_423_060_222_134,
    0.233_890_320_311_910_56,
    0.760_272_366_902_321_84,
    0.587_518_300_350_420_51,
    0.0,
    -0.114_301_839_475_783_54,
    0.0,
    0.0,
];

/// Orthonormal two-channel analysis bank with its synthesis counterpart.
///
/// Analysis is correlation followed by keeping even samples; synthesis is the
/// exact adjoint, so the synthesis taps equal the analysis taps.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPair {
    pub name: FilterFamily,
    pub tree: Tree,
    pub lowpass: Vec<f64>,
    pub highpass: Vec<f64>,
    pub synth_lowpass: Vec<f64>,
    pub synth_highpass: Vec<f64>,
}

impl FilterPair {
    pub fn new(name: FilterFamily) -> Self {
        Self::dual(name, Tree::A)
    }

    pub fn dual(name: FilterFamily, tree: Tree) -> Self {
        let low: Vec<f64> = match (name, tree) {
            (FilterFamily::Haar, _) => alloc::vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2],
            (FilterFamily::Daub4, _) => DAUB4.to_vec(),
            (FilterFamily::FarrasFirstStage, Tree::A) => FARRAS_TREE_A.to_vec(),
            (FilterFamily::FarrasFirstStage, Tree::B) => FARRAS_TREE_B.to_vec(),
            (FilterFamily::QShift10, Tree::A) => QSHIFT_TREE_A.to_vec(),
            (FilterFamily::QShift10, Tree::B) => QSHIFT_TREE_A.iter().rev().copied().collect(),
        };
        let tree = match name {
            FilterFamily::Haar | FilterFamily::Daub4 => Tree::A,
            _ => tree,
        };
        let high = alternating_flip(&low);
        Self {
            name,
            tree,
            synth_lowpass: low.clone(),
            synth_highpass: high.clone(),
            lowpass: low,
            highpass: high,
        }
    }

    pub fn haar() -> Self {
        Self::new(FilterFamily::Haar)
    }

    pub fn len(&self) -> usize {
        self.lowpass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lowpass.is_empty()
    }
}

/// `g[n] = (−1)^n · h[L−1−n]`.
fn alternating_flip(h: &[f64]) -> Vec<f64> {
    let l = h.len();
    (0..l)
        .map(|n| {
            let v = h[l - 1 - n];
            if n % 2 == 0 {
                v
            } else {
                -v
            }
        })
        .collect()
}
