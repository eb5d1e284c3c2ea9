use serde::{Deserialize, Serialize};

/// Cooperation strategies with a closed-form per-node multiplication count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountedAlgorithm {
    USup,
    MsdAlg,
    LsAlg,
}

impl CountedAlgorithm {
    pub const ALL: [CountedAlgorithm; 3] = [Self::USup, Self::LsAlg, Self::MsdAlg];

    pub fn name(self) -> &'static str {
        match self {
            Self::USup => "usup",
            Self::MsdAlg => "msd_alg",
            Self::LsAlg => "ls_alg",
        }
    }
}

/// Multiplications per node and iteration spent on cooperation, excluding the
/// local filter update. `neighborhood` is `|𝒩_n|`, the node included.
pub fn multiplication_count(alg: CountedAlgorithm, order: u64, neighborhood: u64) -> u64 {
    let k = neighborhood;
    match alg {
        CountedAlgorithm::USup => (k + 3) * order + 7,
        CountedAlgorithm::MsdAlg => (k * k + 3 * k + 2) / 2 * order + 2 * k * k,
        // k³/3 rounded to the nearest integer: k³ mod 3 is never 1.5.
        CountedAlgorithm::LsAlg => 2 * (k + 1) * order + (k * k * k + 1) / 3 + k * k + k,
    }
}
