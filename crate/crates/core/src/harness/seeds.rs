//! Independent random streams derived from one scenario seed.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Errors,
    Init,
    Shuffle,
    Attack,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Errors => 0x6572_726f_7273,
            Stream::Init => 0x696e_6974,
            Stream::Shuffle => 0x0073_6875_6666_6c65,
            Stream::Attack => 0x6174_7461_636b,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.tag())
}

/// Seed of scenario `index` under `base_seed`.
pub fn scenario_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}
