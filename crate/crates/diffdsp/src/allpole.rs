//! Time-varying all-pole filtering with exact reverse-mode gradients.
//!
//! The forward recursion is
//!
//! ```text
//! y(n) = x(n) - sum_{i=1..M} a_i(n) * y(n-i),      y(n<0) = 0
//! ```
//!
//! Unrolling it expresses `y` as an instantaneous FIR of the input,
//! `y(n) = x(n) + sum_i b_i(n) x(n-i)`, where each `b_i(n)` sums over all ways
//! the recursion can walk back `i` samples in steps of at most `M` lags. That
//! identity yields a closed form for the backward pass: the adjoint of the
//! filter is the *same* recursion run on the time-reversed upstream gradient
//! with time-shifted, time-reversed coefficients, so gradients cost one extra
//! filter pass instead of an O(N^2) unroll.

use crate::error::FilterError;
use crate::signal::CoeffTrajectory;

/// Gradients of a scalar loss through [`allpole_forward`].
#[derive(Debug, Clone)]
pub struct AllPoleGrad {
    /// d loss / d x(n).
    pub grad_x: Vec<f64>,
    /// d loss / d a_i(n); same layout as the coefficient trajectory
    /// (column `i` is lag `i + 1`).
    pub grad_coeffs: CoeffTrajectory,
}

fn check_shapes(x_len: usize, a: &CoeffTrajectory) -> Result<(), FilterError> {
    if a.rows() != x_len {
        return Err(FilterError::ShapeMismatch(format!(
            "signal has {} samples but coefficient trajectory has {} rows",
            x_len,
            a.rows()
        )));
    }
    Ok(())
}

/// Runs the all-pole recursion with zero initial conditions.
///
/// Column `i` of `a` is the feedback coefficient at lag `i + 1`. Fails if the
/// trajectory row count differs from the signal length, or if the recursion
/// produces a non-finite sample (reporting the first bad index).
pub fn allpole_forward(x: &[f64], a: &CoeffTrajectory) -> Result<Vec<f64>, FilterError> {
    check_shapes(x.len(), a)?;
    let order = a.cols();
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let mut acc = x[n];
        let row = a.row(n);
        for i in 1..=order.min(n) {
            acc -= row[i - 1] * y[n - i];
        }
        if !acc.is_finite() {
            return Err(FilterError::NonFiniteOutput { index: n });
        }
        y[n] = acc;
    }
    Ok(y)
}

/// Time-reverses a signal.
pub fn flipped(x: &[f64]) -> Vec<f64> {
    x.iter().rev().copied().collect()
}

/// Reverses a coefficient trajectory along time (rows).
pub fn flipped_rows(a: &CoeffTrajectory) -> CoeffTrajectory {
    let cols = a.cols();
    let rows = a.rows();
    let mut data = Vec::with_capacity(rows * cols);
    for n in (0..rows).rev() {
        data.extend_from_slice(a.row(n));
    }
    CoeffTrajectory::from_rows(data, cols).expect("same shape as input")
}

/// Advances each coefficient column by its own lag: the output row `n` holds
/// `a_i(n + i)`, zero-padded where `n + i` runs past the final row. Feeding the
/// shifted, time-reversed trajectory back into [`allpole_forward`] turns the
/// forward kernel into its own adjoint.
pub fn shift_coeffs(a: &CoeffTrajectory) -> CoeffTrajectory {
    let rows = a.rows();
    let cols = a.cols();
    let mut data = vec![0.0; rows * cols];
    for n in 0..rows {
        for i in 1..=cols {
            if n + i < rows {
                data[n * cols + (i - 1)] = a.at(n + i, i - 1);
            }
        }
    }
    CoeffTrajectory::from_rows(data, cols).expect("same shape as input")
}

/// Reverse-mode gradients through [`allpole_forward`].
///
/// `grad_y` is the upstream gradient d loss / d y(n) and `y` the retained
/// forward output. The input gradient is one pass of the forward kernel over
/// the reversed upstream gradient with reversed shifted coefficients; the
/// coefficient gradient then follows pointwise as
/// `d loss / d a_i(n) = -grad_x(n) * y(n - i)`.
pub fn allpole_backward(
    grad_y: &[f64],
    y: &[f64],
    a: &CoeffTrajectory,
) -> Result<AllPoleGrad, FilterError> {
    if grad_y.len() != y.len() {
        return Err(FilterError::ShapeMismatch(format!(
            "gradient has {} samples but retained output has {}",
            grad_y.len(),
            y.len()
        )));
    }
    check_shapes(y.len(), a)?;
    let shifted = shift_coeffs(a);
    let w = allpole_forward(&flipped(grad_y), &flipped_rows(&shifted))?;
    let grad_x = flipped(&w);

    let cols = a.cols();
    let mut grad_a = vec![0.0; y.len() * cols];
    for n in 0..y.len() {
        for i in 1..=cols.min(n) {
            grad_a[n * cols + (i - 1)] = -grad_x[n] * y[n - i];
        }
    }
    Ok(AllPoleGrad {
        grad_x,
        grad_coeffs: CoeffTrajectory::from_rows(grad_a, cols).expect("same shape as input"),
    })
}

/// Hard cap on the number of recursion paths the brute-force reference will
/// enumerate for a single coefficient.
pub const ENUMERATION_BUDGET: u64 = 10_000_000;

fn composition_count(total: usize, max_part: usize) -> u64 {
    // counts[t] = number of compositions of t into parts 1..=max_part
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for t in 1..=total {
        for p in 1..=max_part.min(t) {
            counts[t] = counts[t].saturating_add(counts[t - p]);
        }
    }
    counts[total]
}

fn for_each_composition(total: usize, max_part: usize, visit: &mut impl FnMut(&[usize])) {
    fn walk(
        remaining: usize,
        max_part: usize,
        parts: &mut Vec<usize>,
        visit: &mut impl FnMut(&[usize]),
    ) {
        if remaining == 0 {
            visit(parts);
            return;
        }
        for p in 1..=max_part.min(remaining) {
            parts.push(p);
            walk(remaining - p, max_part, parts, visit);
            parts.pop();
        }
    }
    walk(total, max_part, &mut Vec::new(), visit);
}

fn enumeration_guard(lag: usize, order: usize) -> Result<(), FilterError> {
    if composition_count(lag, order) > ENUMERATION_BUDGET {
        return Err(FilterError::EnumerationBudget {
            lag,
            order,
            budget: ENUMERATION_BUDGET,
        });
    }
    Ok(())
}

/// Brute-force reference for the instantaneous FIR coefficient `b_lag(n)` of
/// the unrolled recursion: sums `(-1)^m * a_{p_1}(n) * a_{p_2}(n - p_1) * ...`
/// over every composition `p` of `lag` into `m` parts of size at most the
/// filter order, walking the recursion paths explicitly.
///
/// Exponential in `lag`; guarded by [`ENUMERATION_BUDGET`]. Requires
/// `lag <= n` so that every visited row exists.
pub fn brute_force_ir_coeff(
    a: &CoeffTrajectory,
    n: usize,
    lag: usize,
) -> Result<f64, FilterError> {
    if lag == 0 {
        return Ok(1.0);
    }
    if lag > n || n >= a.rows() {
        return Err(FilterError::BadArgument(format!(
            "need lag <= n < rows, got lag {lag}, n {n}, rows {}",
            a.rows()
        )));
    }
    enumeration_guard(lag, a.cols())?;
    let mut acc = 0.0;
    for_each_composition(lag, a.cols(), &mut |parts| {
        let mut prod = 1.0;
        let mut time = n;
        for &p in parts {
            prod *= a.at(time, p - 1);
            time -= p;
        }
        let sign = if parts.len() % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * prod;
    });
    Ok(acc)
}

/// Brute-force reference for the same coefficient evaluated against a
/// *shifted* trajectory (see [`shift_coeffs`]): each composition is walked in
/// reverse with times accumulating forward from `n`, which by the shift
/// identity reproduces `b_lag(n + lag)` of the original trajectory exactly.
pub fn brute_force_ir_coeff_shifted(
    shifted: &CoeffTrajectory,
    n: usize,
    lag: usize,
) -> Result<f64, FilterError> {
    if lag == 0 {
        return Ok(1.0);
    }
    if n + lag >= shifted.rows() {
        return Err(FilterError::BadArgument(format!(
            "need n + lag < rows, got lag {lag}, n {n}, rows {}",
            shifted.rows()
        )));
    }
    enumeration_guard(lag, shifted.cols())?;
    let mut acc = 0.0;
    for_each_composition(lag, shifted.cols(), &mut |parts| {
        // Walking the reversed composition with forward-accumulating times
        // visits, factor for factor, the same entries as the unshifted walk.
        let mut prod = 1.0;
        let mut time = n + lag;
        for &p in parts {
            time -= p;
            prod *= shifted.at(time, p - 1);
        }
        let sign = if parts.len() % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * prod;
    });
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_trajectory(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> CoeffTrajectory {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
        CoeffTrajectory::from_rows(data, cols).unwrap()
    }

    fn random_signal(rng: &mut impl Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    // Independent sample-by-sample reference written as a ring of past outputs
    // rather than indexing back into y.
    fn reference_recursion(x: &[f64], a: &CoeffTrajectory) -> Vec<f64> {
        let order = a.cols();
        let mut history = vec![0.0; order];
        let mut out = Vec::with_capacity(x.len());
        for (n, &xn) in x.iter().enumerate() {
            let feedback: f64 = (0..order)
                .filter(|i| *i < n.min(order))
                .map(|i| a.at(n, i) * history[i])
                .sum();
            let yn = xn - feedback;
            history.rotate_right(1);
            history[0] = yn;
            out.push(yn);
        }
        out
    }

    #[test]
    fn forward_matches_reference_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, m) in &[(16usize, 2usize), (64, 1), (48, 3), (33, 6)] {
            let a = random_trajectory(&mut rng, n, m, 0.3);
            let x = random_signal(&mut rng, n);
            let y = allpole_forward(&x, &a).unwrap();
            let y_ref = reference_recursion(&x, &a);
            for (got, want) in y.iter().zip(&y_ref) {
                assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
            }
        }
    }

    #[test]
    fn zero_coefficients_pass_input_through() {
        let x = vec![1.0, -2.0, 3.5, 0.25];
        let a = CoeffTrajectory::constant(&[0.0, 0.0], x.len()).unwrap();
        assert_eq!(allpole_forward(&x, &a).unwrap(), x);
    }

    #[test]
    fn forward_is_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_trajectory(&mut rng, 40, 2, 0.4);
        let x = random_signal(&mut rng, 40);
        let y = allpole_forward(&x, &a).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| 3.25 * v).collect();
        let y_scaled = allpole_forward(&scaled, &a).unwrap();
        for (ys, y1) in y_scaled.iter().zip(&y) {
            assert!((ys - 3.25 * y1).abs() <= 1e-12 * y1.abs().max(1.0));
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(flipped(&flipped(&x)), x);
        let a = CoeffTrajectory::from_rows(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2).unwrap();
        assert_eq!(flipped_rows(&flipped_rows(&a)), a);
    }

    #[test]
    fn shift_advances_each_column_by_its_lag() {
        // M=1: shifted column is a_1(n+1) with a zero final row.
        let a = CoeffTrajectory::from_rows(vec![10.0, 20.0, 30.0, 40.0], 1).unwrap();
        let s = shift_coeffs(&a);
        assert_eq!(s.data(), &[20.0, 30.0, 40.0, 0.0]);

        // Constant trajectory: shifting only zero-pads the tail rows.
        let c = CoeffTrajectory::constant(&[0.5, -0.25], 6).unwrap();
        let sc = shift_coeffs(&c);
        for n in 0..6 {
            for i in 1..=2usize {
                let want = if n + i < 6 { c.at(0, i - 1) } else { 0.0 };
                assert_eq!(sc.at(n, i - 1), want);
            }
        }
    }

    #[test]
    fn brute_force_matches_hand_enumeration_order_two_lag_three() {
        // Compositions of 3 into parts <= 2 are {1+1+1, 1+2, 2+1}; each step of
        // the recursion contributes a factor of -a, so the three paths carry
        // signs -, +, +.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_trajectory(&mut rng, 8, 2, 0.8);
        let n = 5;
        let a1 = |t: usize| a.at(t, 0);
        let a2 = |t: usize| a.at(t, 1);
        let want = -a1(n) * a1(n - 1) * a1(n - 2) + a1(n) * a2(n - 1) + a2(n) * a1(n - 2);
        let got = brute_force_ir_coeff(&a, n, 3).unwrap();
        assert!((got - want).abs() < 1e-15, "got {got}, want {want}");
    }

    #[test]
    fn brute_force_order_one_is_a_signed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_trajectory(&mut rng, 12, 1, 0.9);
        for lag in 1..=6usize {
            let n = 9;
            let mut want = 1.0;
            for j in 0..lag {
                want *= a.at(n - j, 0);
            }
            if lag % 2 == 1 {
                want = -want;
            }
            let got = brute_force_ir_coeff(&a, n, lag).unwrap();
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_equals_unrolled_fir_of_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(n, m) in &[(16usize, 1usize), (16, 2), (14, 3)] {
            let a = random_trajectory(&mut rng, n, m, 0.5);
            let x = random_signal(&mut rng, n);
            let y = allpole_forward(&x, &a).unwrap();
            for t in 0..n {
                let mut want = x[t];
                for lag in 1..=t {
                    want += brute_force_ir_coeff(&a, t, lag).unwrap() * x[t - lag];
                }
                assert!(
                    (y[t] - want).abs() < 1e-10,
                    "sample {t}: filter {} vs unrolled {want}",
                    y[t]
                );
            }
        }
    }

    #[test]
    fn shift_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(n_rows, m) in &[(18usize, 1usize), (18, 2), (16, 3)] {
            let a = random_trajectory(&mut rng, n_rows, m, 0.7);
            let shifted = shift_coeffs(&a);
            for n in 0..n_rows {
                for lag in 1..=(n_rows - 1 - n).min(10) {
                    let direct = brute_force_ir_coeff(&a, n + lag, lag).unwrap();
                    let via_shift = brute_force_ir_coeff_shifted(&shifted, n, lag).unwrap();
                    assert_eq!(direct, via_shift, "n {n} lag {lag} order {m}");
                }
            }
        }
    }

    #[test]
    fn backward_input_gradient_matches_unrolled_fir() {
        // d y(n+i) / d x(n) = b_i(n+i), so grad_x(n) must equal
        // grad_y(n) + sum_i b_i(n+i) grad_y(n+i).
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for &(n_len, m) in &[(16usize, 1usize), (16, 2), (12, 3)] {
            let a = random_trajectory(&mut rng, n_len, m, 0.5);
            let x = random_signal(&mut rng, n_len);
            let y = allpole_forward(&x, &a).unwrap();
            let grad_y = random_signal(&mut rng, n_len);
            let grads = allpole_backward(&grad_y, &y, &a).unwrap();
            for n in 0..n_len {
                let mut want = grad_y[n];
                for i in 1..n_len - n {
                    want += brute_force_ir_coeff(&a, n + i, i).unwrap() * grad_y[n + i];
                }
                assert!(
                    (grads.grad_x[n] - want).abs() < 1e-10,
                    "sample {n}: backward {} vs unrolled {want}",
                    grads.grad_x[n]
                );
            }
        }
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (n_len, m) = (24usize, 2usize);
        let a = random_trajectory(&mut rng, n_len, m, 0.4);
        let x = random_signal(&mut rng, n_len);
        let w = random_signal(&mut rng, n_len); // loss = <w, y>
        let y = allpole_forward(&x, &a).unwrap();
        let grads = allpole_backward(&w, &y, &a).unwrap();
        let loss = |x: &[f64], a: &CoeffTrajectory| -> f64 {
            allpole_forward(x, a)
                .unwrap()
                .iter()
                .zip(&w)
                .map(|(y, w)| y * w)
                .sum()
        };
        let h = 1e-6;
        for n in 0..n_len {
            let mut xp = x.clone();
            xp[n] += h;
            let mut xm = x.clone();
            xm[n] -= h;
            let fd = (loss(&xp, &a) - loss(&xm, &a)) / (2.0 * h);
            let got = grads.grad_x[n];
            assert!((fd - got).abs() <= 1e-6 * fd.abs().max(1.0), "x[{n}]: fd {fd} vs {got}");
        }
        for n in 0..n_len {
            for i in 0..m {
                let per = |delta: f64| {
                    let mut d = a.data().to_vec();
                    d[n * m + i] += delta;
                    loss(&x, &CoeffTrajectory::from_rows(d, m).unwrap())
                };
                let fd = (per(h) - per(-h)) / (2.0 * h);
                let got = grads.grad_coeffs.at(n, i);
                assert!(
                    (fd - got).abs() <= 1e-6 * fd.abs().max(1.0),
                    "a[{n},{i}]: fd {fd} vs {got}"
                );
            }
        }
    }

    #[test]
    fn unstable_recursion_reports_first_bad_index() {
        let n = 4000;
        let a = CoeffTrajectory::constant(&[-2.0], n).unwrap();
        let x: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat(0.0)).take(n).collect();
        match allpole_forward(&x, &a) {
            Err(FilterError::NonFiniteOutput { index }) => {
                // 2^n overflows f64 just past n = 1023.
                assert!(index > 1000 && index < 1100, "index {index}");
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn enumeration_budget_is_enforced() {
        let a = CoeffTrajectory::constant(&[0.1; 6], 200).unwrap();
        match brute_force_ir_coeff(&a, 199, 120) {
            Err(FilterError::EnumerationBudget { .. }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = CoeffTrajectory::constant(&[0.5], 8).unwrap();
        let x = vec![0.0; 9];
        assert!(matches!(allpole_forward(&x, &a), Err(FilterError::ShapeMismatch(_))));
    }
}
