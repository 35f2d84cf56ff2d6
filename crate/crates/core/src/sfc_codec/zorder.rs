/// Interleave `bits` low bits of each axis, axis 0 least significant.
pub(super) fn interleave(cells: &[u32], bits: u32) -> u64 {
    let d = cells.len() as u32;
    let mut code = 0u64;
    for i in 0..bits {
        for (a, &c) in cells.iter().enumerate() {
            code |= u64::from((c >> i) & 1) << (i * d + a as u32);
        }
    }
    code
}

pub(super) fn deinterleave(code: u64, cells: &mut [u32], bits: u32) {
    let d = cells.len() as u32;
    cells.fill(0);
    for i in 0..bits {
        for (a, c) in cells.iter_mut().enumerate() {
            *c |= (((code >> (i * d + a as u32)) & 1) as u32) << i;
        }
    }
}
