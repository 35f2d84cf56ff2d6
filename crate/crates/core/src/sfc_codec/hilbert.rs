//! Skilling's transpose-based Hilbert transform for 2 or more axes.

/// Axes to Hilbert index. `x` is consumed as scratch.
pub(super) fn encode(x: &mut [u32], bits: u32) -> u64 {
    let n = x.len();
    let m = 1u32 << (bits - 1);

    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..n {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }

    for i in 1..n {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[n - 1] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in x.iter_mut() {
        *v ^= t;
    }

    // transposed form: bit j of axis i sits at position j*n + (n-1-i)
    let mut code = 0u64;
    for j in (0..bits).rev() {
        for v in x.iter() {
            code = (code << 1) | u64::from((v >> j) & 1);
        }
    }
    code
}

/// Hilbert index to axes, written into `x`.
pub(super) fn decode(code: u64, x: &mut [u32], bits: u32) {
    let n = x.len();
    x.fill(0);
    let mut pos = u64::from(bits) * n as u64;
    for j in (0..bits).rev() {
        for v in x.iter_mut() {
            pos -= 1;
            *v |= (((code >> pos) & 1) as u32) << j;
        }
    }

    let big = 2u64 << (bits - 1);
    let t = x[n - 1] >> 1;
    for i in (1..n).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;

    let mut q = 2u64;
    while q != big {
        let qq = q as u32;
        let p = qq - 1;
        for i in (0..n).rev() {
            if x[i] & qq != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
}
