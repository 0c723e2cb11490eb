//! Globally adaptive Gauss–Kronrod (7/15) quadrature for complex integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

const ROUNDOFF: f64 = 50.0 * f64::EPSILON;

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOutcome {
    pub value: Complex64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadFailure {
    pub value: Complex64,
    pub error: f64,
}

struct Panel {
    a: f64,
    b: f64,
    value: Complex64,
    error: f64,
    magnitude: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Kronrod estimate, Kronrod−Gauss error, and the Kronrod estimate of `∫|f|`.
fn gk15<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> (Complex64, f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut magnitude = fc.norm() * WGK[7];
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let (lo, hi) = (f(center - dx), f(center + dx));
        let pair = lo + hi;
        kronrod += pair * wk;
        magnitude += (lo.norm() + hi.norm()) * wk;
        if j % 2 == 1 {
            gauss += pair * WG[j / 2];
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).norm();
    (value, error, magnitude * half.abs())
}

/// Integrates `f` over `[breaks[0], breaks.last()]`, starting from the given
/// partition and bisecting the worst panel until the summed error estimate is
/// below `max(abs_tol, rel_tol·|I|)`. Cancellation in oscillatory integrands
/// puts a floor of a few ulps of `∫|f|` under any achievable error, so that
/// floor is also accepted.
pub fn integrate<F: Fn(f64) -> Complex64>(
    f: F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Result<QuadOutcome, QuadFailure> {
    let mut heap = BinaryHeap::with_capacity(breaks.len() * 2);
    let mut total = Complex64::new(0.0, 0.0);
    let mut error = 0.0;
    let mut magnitude = 0.0;
    for w in breaks.windows(2) {
        let (value, err, mag) = gk15(&f, w[0], w[1]);
        total += value;
        error += err;
        magnitude += mag;
        heap.push(Panel {
            a: w[0],
            b: w[1],
            value,
            error: err,
            magnitude: mag,
        });
    }
    while error > abs_tol.max(rel_tol * total.norm()).max(ROUNDOFF * magnitude) {
        if heap.len() >= max_panels {
            return Err(QuadFailure {
                value: total,
                error,
            });
        }
        let worst = heap.pop().expect("non-empty partition");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // panel can no longer be split in floating point
            return Err(QuadFailure {
                value: total,
                error,
            });
        }
        total -= worst.value;
        error -= worst.error;
        magnitude -= worst.magnitude;
        for (a, b) in [(worst.a, mid), (mid, worst.b)] {
            let (value, err, mag) = gk15(&f, a, b);
            total += value;
            error += err;
            magnitude += mag;
            heap.push(Panel {
                a,
                b,
                value,
                error: err,
                magnitude: mag,
            });
        }
    }
    // re-sum to shed the drift of the running updates
    let value = heap.iter().map(|p| p.value).sum();
    let error = heap.iter().map(|p| p.error).sum();
    Ok(QuadOutcome { value, error })
}
