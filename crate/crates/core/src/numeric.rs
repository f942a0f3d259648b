//! Small numerical kernels shared by the measure, entropy and typical-set code.

use crate::error::Result;

/// Neumaier compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Composite Simpson rule on `panels` uniform panels over `[a, b]`.
///
/// The integrand returns `(value, error)` so nested integrals can hand their
/// own error estimates up to the outer rule. The returned error is the
/// Richardson estimate `|S_N - S_{N/2}| / 15` plus the Simpson-weighted inner
/// errors. `panels` must be a positive multiple of 4 so that the half grid is
/// itself a valid Simpson grid.
pub fn simpson(
    a: f64,
    b: f64,
    panels: usize,
    integrand: &mut dyn FnMut(f64) -> Result<(f64, f64)>,
) -> Result<(f64, f64)> {
    debug_assert!(panels >= 4 && panels % 4 == 0);
    let h = (b - a) / panels as f64;
    let mut fine = CompensatedSum::new();
    let mut coarse = CompensatedSum::new();
    let mut inner_err = 0.0;
    for k in 0..=panels {
        let x = if k == panels { b } else { a + h * k as f64 };
        let (v, e) = integrand(x)?;
        let w_fine = if k == 0 || k == panels {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        fine.add(w_fine * v);
        inner_err += w_fine * e.abs();
        if k % 2 == 0 {
            let j = k / 2;
            let w_coarse = if k == 0 || k == panels {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            coarse.add(w_coarse * v);
        }
    }
    let fine = fine.value() * h / 3.0;
    let coarse = coarse.value() * 2.0 * h / 3.0;
    let richardson = (fine - coarse).abs() / 15.0;
    Ok((fine, richardson + inner_err * h.abs() / 3.0))
}

/// Round `n` up to a positive multiple of 4.
pub fn simpson_panels(n: usize) -> usize {
    n.max(4).div_ceil(4) * 4
}

/// `ln` of the multinomial coefficient `n! / prod(k_i!)`.
pub fn ln_multinomial(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    ln_factorial(n) - counts.iter().map(|&k| ln_factorial(k)).sum::<f64>()
}

fn ln_factorial(n: usize) -> f64 {
    statrs::function::factorial::ln_factorial(n as u64)
}

/// Exact multinomial coefficient, or `None` on `u128` overflow.
pub fn multinomial_exact(counts: &[usize]) -> Option<u128> {
    let mut total: usize = 0;
    let mut acc: u128 = 1;
    for &k in counts {
        for i in 1..=k {
            total += 1;
            // acc = M * C(total - 1, i - 1) here, so acc * total is divisible by i.
            acc = acc.checked_mul(total as u128)? / i as u128;
        }
    }
    Some(acc)
}

/// Multinomial coefficient as `f64`, taking the exact integer path below 1e15.
pub fn multinomial(counts: &[usize]) -> f64 {
    match multinomial_exact(counts) {
        Some(m) if m < 1_000_000_000_000_000 => m as f64,
        _ => ln_multinomial(counts).exp(),
    }
}
