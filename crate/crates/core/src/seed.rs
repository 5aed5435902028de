//! Deterministic seed derivation.
//!
//! All randomness in the simulator flows from explicit `u64` seeds through
//! these mixers, so results are reproducible across platforms and
//! independent of evaluation order. The mixer is splitmix64, which has a
//! fixed definition (unlike `std`'s hashers).

/// One splitmix64 scramble step.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mix two values into a derived seed.
#[inline]
pub fn mix2(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.wrapping_mul(0xA24B_AED4_963E_E407))
}

/// Mix three values into a derived seed.
#[inline]
pub fn mix3(a: u64, b: u64, c: u64) -> u64 {
    mix2(mix2(a, b), c)
}

/// Stream tags keeping independent draws from colliding.
pub mod stream {
    pub const USER_DROP: u64 = 0x5553_4552;
    pub const PROPAGATION: u64 = 0x5052_4F50;
}
