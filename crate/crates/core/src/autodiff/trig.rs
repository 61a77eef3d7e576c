//! Fused sine/cosine for the network's activation sweep.
//!
//! One Cody–Waite reduction by π/2 feeds both minimax kernels, which is
//! about three times cheaper than separate `sin` and `cos` calls. Arguments
//! beyond `LIMIT` (and non-finite ones) go through `libm`.

const LIMIT: f64 = 1.0e5;
const SHIFTER: f64 = 6_755_399_441_055_744.0;
const INV_PIO2: f64 = 6.366_197_723_675_813_824_33e-1;
const PIO2_1: f64 = 1.570_796_326_734_125_614_17e0;
const PIO2_2: f64 = 6.077_100_506_303_965_976_60e-11;
const PIO2_2T: f64 = 2.022_266_248_795_950_631_54e-21;

const S1: f64 = -1.666_666_666_666_663_243_48e-1;
const S2: f64 = 8.333_333_333_322_489_461_24e-3;
const S3: f64 = -1.984_126_982_985_794_931_34e-4;
const S4: f64 = 2.755_731_370_707_006_767_89e-6;
const S5: f64 = -2.505_076_025_340_686_341_95e-8;
const S6: f64 = 1.589_690_995_211_550_102_21e-10;

const C1: f64 = 4.166_666_666_666_660_190_37e-2;
const C2: f64 = -1.388_888_888_887_410_957_49e-3;
const C3: f64 = 2.480_158_728_947_672_941_78e-5;
const C4: f64 = -2.755_731_435_139_066_330_35e-7;
const C5: f64 = 2.087_572_321_298_174_827_90e-9;
const C6: f64 = -1.135_964_755_778_819_482_65e-11;

#[inline]
fn kernel_sin(x: f64, y: f64) -> f64 {
    let z = x * x;
    let w = z * z;
    let r = S2 + z * (S3 + z * S4) + z * w * (S5 + z * S6);
    let v = z * x;
    x - ((z * (0.5 * y - v * r) - y) - v * S1)
}

#[inline]
fn kernel_cos(x: f64, y: f64) -> f64 {
    let z = x * x;
    let w = z * z;
    let r = z * (C1 + z * (C2 + z * C3)) + w * w * (C4 + z * (C5 + z * C6));
    let hz = 0.5 * z;
    let w = 1.0 - hz;
    w + (((1.0 - w) - hz) + (z * r - x * y))
}

/// `(sin x, cos x)` to within an ulp or so.
#[inline]
pub fn sin_cos(x: f64) -> (f64, f64) {
    if !(x.abs() < LIMIT) {
        return libm::sincos(x);
    }
    reduced(x)
}

/// Elementwise [`sin_cos`] into fresh vectors. The main loop has no
/// branches so it vectorises; out-of-range entries are patched afterwards.
pub(crate) fn sin_cos_all(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (mut s, mut c): (Vec<f64>, Vec<f64>) = x.iter().map(|&v| reduced(v)).unzip();
    for (i, &v) in x.iter().enumerate() {
        if !(v.abs() < LIMIT) {
            (s[i], c[i]) = libm::sincos(v);
        }
    }
    (s, c)
}

#[inline(always)]
fn reduced(x: f64) -> (f64, f64) {    // Round to nearest through the 2^52 + 2^51 shifter.
    let n = (x * INV_PIO2 + SHIFTER) - SHIFTER;
    // n·PIO2_1 and n·PIO2_2 are exact: both constants carry 33 bits.
    let r = x - n * PIO2_1;
    let w = n * PIO2_2;
    let y0 = r - w;
    let w = n * PIO2_2T - ((r - y0) - w);
    let hi = y0 - w;
    let lo = (y0 - hi) - w;
    let s = kernel_sin(hi, lo);
    let c = kernel_cos(hi, lo);
    // Quadrant fix-up without branches: odd quadrants swap, bit 1 of q
    // flips the sine, bit 1 of q+1 flips the cosine.
    let q = n as i64;
    let odd = q & 1 != 0;
    let (a, b) = (if odd { c } else { s }, if odd { s } else { c });
    let sa = ((q & 2) as u64) << 62;
    let sb = (((q + 1) & 2) as u64) << 62;
    (f64::from_bits(a.to_bits() ^ sa), f64::from_bits(b.to_bits() ^ sb))
}
