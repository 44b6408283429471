//! Concept inventories and the surface words of the two artificial languages.

pub const ENTITIES_A: [&str; 10] = [
    "dog", "cat", "man", "woman", "boy", "girl", "horse", "bird", "child", "cow",
];
pub const ENTITIES_B: [&str; 10] = [
    "kavo", "miru", "tesan", "olin", "pudo", "sefa", "ruvi", "naku", "telo", "gomi",
];

pub const ATTRIBUTES_A: [&str; 8] = [
    "red", "blue", "green", "black", "white", "brown", "yellow", "small",
];
pub const ATTRIBUTES_B: [&str; 8] = [
    "roki", "buna", "gelo", "kuro", "sivi", "baru", "yelu", "chipo",
];

pub const ACTIONS_A: [&str; 8] = [
    "runs", "sits", "jumps", "sleeps", "plays", "walks", "stands", "eats",
];
pub const ACTIONS_B: [&str; 8] = [
    "teku", "nomi", "pira", "zuda", "rosa", "wemi", "fola", "kesu",
];

pub const LOCATIONS_A: [&str; 8] = [
    "park", "beach", "street", "field", "house", "snow", "river", "garden",
];
pub const LOCATIONS_B: [&str; 8] = [
    "paro", "hama", "dori", "noha", "ieta", "yuki", "kawa", "niwa",
];

/// Language A function words: article, preposition, determiner, conjunction,
/// sentence end.
pub const A_ARTICLE: &str = "a";
pub const A_PREP: &str = "in";
pub const A_DET: &str = "the";
pub const A_CONJ: &str = "and";
pub const A_END: &str = ".";

/// Language B function words: subject marker, locative marker, conjunction.
pub const B_SUBJ: &str = "ko";
pub const B_LOC: &str = "ni";
pub const B_CONJ: &str = "su";

/// Closed concept inventories with paired surface forms. Slot order in a
/// fact is entity, attribute, action, location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inventory {
    pub slots: [Vec<(&'static str, &'static str)>; 4],
}

impl Default for Inventory {
    fn default() -> Self {
        let pair = |a: &[&'static str], b: &[&'static str]| -> Vec<_> {
            a.iter().copied().zip(b.iter().copied()).collect()
        };
        Self {
            slots: [
                pair(&ENTITIES_A, &ENTITIES_B),
                pair(&ATTRIBUTES_A, &ATTRIBUTES_B),
                pair(&ACTIONS_A, &ACTIONS_B),
                pair(&LOCATIONS_A, &LOCATIONS_B),
            ],
        }
    }
}

impl Inventory {
    /// Keeps the first `n` concepts of each slot.
    pub fn truncated(sizes: [usize; 4]) -> Self {
        let mut inv = Self::default();
        for (slot, n) in inv.slots.iter_mut().zip(sizes) {
            slot.truncate(n);
        }
        inv
    }

    pub fn feature_dim(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }

    /// Column offset of each slot in a feature vector.
    pub fn offsets(&self) -> [usize; 4] {
        let mut o = [0; 4];
        for k in 1..4 {
            o[k] = o[k - 1] + self.slots[k - 1].len();
        }
        o
    }
}
