//! Stable LSD radix sort for (bucket key, point index) pairs.

use crate::grid::KeyIndex;

const DIGIT_BITS: u32 = 8;
const BINS: usize = 1 << DIGIT_BITS;

/// Number of 8-bit digit passes needed for keys of `key_bits` bits.
pub fn digit_passes(key_bits: u32) -> u32 {
    key_bits.div_ceil(DIGIT_BITS)
}

/// Sorts `pairs` ascending by key with a stable LSD radix sort over 8-bit
/// digits. Keys must fit in `key_bits` bits; higher bits are ignored.
pub fn radix_sort_pairs(pairs: &mut Vec<KeyIndex>, key_bits: u32) {
    let passes = digit_passes(key_bits.min(32));
    if pairs.len() < 2 || passes == 0 {
        return;
    }
    let mut scratch = vec![KeyIndex::default(); pairs.len()];
    let mut src: &mut Vec<KeyIndex> = pairs;
    let mut dst: &mut Vec<KeyIndex> = &mut scratch;
    for pass in 0..passes {
        let shift = pass * DIGIT_BITS;
        let digit = |p: &KeyIndex| ((p.key.0 >> shift) as usize) & (BINS - 1);

        let mut offsets = [0usize; BINS];
        for p in src.iter() {
            offsets[digit(p)] += 1;
        }
        let mut sum = 0;
        for slot in offsets.iter_mut() {
            let count = *slot;
            *slot = sum;
            sum += count;
        }
        for p in src.iter() {
            let d = digit(p);
            dst[offsets[d]] = *p;
            offsets[d] += 1;
        }
        std::mem::swap(&mut src, &mut dst);
    }
    // after an odd number of passes the sorted data sits in the scratch buffer
    if passes % 2 == 1 {
        std::mem::swap(pairs, &mut scratch);
    }
}

/// Convenience wrapper returning a sorted copy.
pub fn radix_sorted(mut pairs: Vec<KeyIndex>, key_bits: u32) -> Vec<KeyIndex> {
    radix_sort_pairs(&mut pairs, key_bits);
    pairs
}
