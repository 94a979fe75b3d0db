//! Binary16 emulation on top of f32 storage.
//!
//! Target hardware runs half precision natively; here every value crossing a
//! tensor boundary is squeezed through binary16 and widened back, so the f32
//! buffers hold exactly the values a real FP16 device would see. Rounding is
//! round-to-nearest, ties-to-even. Overflow saturates to the infinities,
//! subnormals are kept, and NaN stays NaN.

/// Converts an f32 to binary16 bits with round-to-nearest-even.
pub fn f16_bits_from_f32(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let mant = bits & 0x007F_FFFF;

    if exp == 0xFF {
        // Infinity or NaN; NaN becomes the canonical quiet NaN.
        return if mant != 0 { sign | 0x7E00 } else { sign | 0x7C00 };
    }

    // Rebias from f32 (127) to f16 (15).
    let e = exp - 112;
    if e >= 0x1F {
        return sign | 0x7C00;
    }
    if e >= 1 {
        // Normal result: keep 10 of the 23 mantissa bits.
        let m = (mant >> 13) as u16;
        let rest = mant & 0x1FFF;
        let mut h = ((e as u16) << 10) | m;
        if rest > 0x1000 || (rest == 0x1000 && (m & 1) == 1) {
            // Carry may roll into the exponent; 0x7C00 is then infinity,
            // which is exactly the saturation we want.
            h += 1;
        }
        return sign | h;
    }
    if e < -10 {
        // Below half of the smallest subnormal: rounds to signed zero.
        return sign;
    }
    // Subnormal result: shift the full 24-bit significand down.
    let m = mant | 0x0080_0000;
    let shift = (14 - e) as u32;
    let q = (m >> shift) as u16;
    let rest = m & ((1 << shift) - 1);
    let half = 1u32 << (shift - 1);
    let rounded = if rest > half || (rest == half && (q & 1) == 1) {
        // A carry out of the subnormal range lands on the smallest normal
        // value, which the plain bit pattern already encodes.
        q + 1
    } else {
        q
    };
    sign | rounded
}

/// Widens binary16 bits to the exact f32 value they denote.
pub fn f32_from_f16_bits(h: u16) -> f32 {
    let sign = ((h as u32) & 0x8000) << 16;
    let exp = (h >> 10) & 0x1F;
    let mant = (h & 0x3FF) as u32;
    match exp {
        0 => {
            // Zero or subnormal: mant * 2^-24, exact in f32.
            let magnitude = mant as f32 * f32::from_bits(0x3380_0000);
            if sign != 0 {
                -magnitude
            } else {
                magnitude
            }
        }
        0x1F => {
            if mant != 0 {
                f32::from_bits(sign | 0x7FC0_0000)
            } else {
                f32::from_bits(sign | 0x7F80_0000)
            }
        }
        _ => f32::from_bits(sign | ((exp as u32 + 112) << 23) | (mant << 13)),
    }
}

/// Rounds an f32 to the nearest binary16 value, returned widened to f32.
pub fn round_f16(x: f32) -> f32 {
    f32_from_f16_bits(f16_bits_from_f32(x))
}
