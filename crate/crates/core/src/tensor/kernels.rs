//! Plain forward kernels on [`Tensor`] values. The gradient tape calls these
//! for its forward pass; they are also usable on their own.

use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Dot product with eight independent accumulators so the loop vectorizes
/// while staying deterministic.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let (rest_a, rest_b) = (chunks_a.remainder(), chunks_b.remainder());
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..8 {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in rest_a.iter().zip(rest_b) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn relu<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

/// Left offset of a same-length convolution with a filter of `width`
/// columns. Output position `y` reads input columns `y - offset ..
/// y - offset + width`.
pub fn conv_offset(width: usize) -> usize {
    (width - 1) / 2
}

/// Valid output range for filter column `j`: positions `y` where
/// `y + j - offset` lies inside `[0, len)`.
pub(crate) fn tap_range(len: usize, j: usize, offset: usize) -> (usize, usize) {
    // input column = y + j - offset
    let lo = offset.saturating_sub(j);
    let hi = (len + offset).saturating_sub(j).min(len);
    (lo, hi.max(lo))
}

/// Convolution over time of a `d×T` grid with a `d×w` filter spanning the
/// full height. The output has length `T`; columns outside `[0, T)` read as
/// zero.
pub fn conv_time<T: Scalar>(input: &Tensor<T>, filter: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, len) = input.dims2()?;
    let (fd, width) = filter.dims2()?;
    if fd != d {
        return Err(Error::shape(
            "conv_time",
            format!("filter height {fd} does not match input height {d}"),
        ));
    }
    if len == 0 || width == 0 {
        return Err(Error::shape(
            "conv_time",
            format!("empty input ({d}x{len}) or filter ({fd}x{width})"),
        ));
    }
    let mut out = vec![T::zero(); len];
    conv_time_into(input.data(), d, len, filter.data(), width, &mut out);
    Ok(Tensor::vector(out))
}

pub(crate) fn conv_time_into<T: Scalar>(
    input: &[T],
    d: usize,
    len: usize,
    filter: &[T],
    width: usize,
    out: &mut [T],
) {
    let offset = conv_offset(width);
    for i in 0..d {
        let row = &input[i * len..(i + 1) * len];
        for j in 0..width {
            let f = filter[i * width + j];
            if f == T::zero() {
                continue;
            }
            let (lo, hi) = tap_range(len, j, offset);
            if lo >= hi {
                continue;
            }
            let src = &row[lo + j - offset..hi + j - offset];
            axpy(f, src, &mut out[lo..hi]);
        }
    }
}

/// Maximum over all positions with the index of the first maximum.
pub fn max_pool_time<T: Scalar>(values: &[T]) -> Result<(T, usize)> {
    let first = *values
        .first()
        .ok_or_else(|| Error::shape("max_pool_time", "empty feature map"))?;
    let mut best = (first, 0);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

/// Non-overlapping window max pooling over an `H×W` map, stride equal to the
/// window. A trailing partial window pools whatever cells remain. Returns
/// the pooled `⌈H/ph⌉×⌈W/pw⌉` map and, per output cell, the flat index of
/// the first maximal input cell.
pub fn max_pool_window<T: Scalar>(
    map: &Tensor<T>,
    window: (usize, usize),
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (ph, pw) = window;
    if ph == 0 || pw == 0 {
        return Err(Error::shape(
            "max_pool_window",
            format!("zero-sized window {window:?}"),
        ));
    }
    let (h, w) = map.dims2()?;
    if h == 0 || w == 0 {
        return Err(Error::shape("max_pool_window", "empty map"));
    }
    let (oh, ow) = (h.div_ceil(ph), w.div_ceil(pw));
    let mut out = Vec::with_capacity(oh * ow);
    let mut argmax = Vec::with_capacity(oh * ow);
    let data = map.data();
    for orow in 0..oh {
        for ocol in 0..ow {
            let mut best_idx = orow * ph * w + ocol * pw;
            let mut best = data[best_idx];
            for r in orow * ph..((orow + 1) * ph).min(h) {
                for c in ocol * pw..((ocol + 1) * pw).min(w) {
                    let idx = r * w + c;
                    if data[idx] > best {
                        best = data[idx];
                        best_idx = idx;
                    }
                }
            }
            out.push(best);
            argmax.push(best_idx);
        }
    }
    Ok((Tensor::new(vec![oh, ow], out)?, argmax))
}

/// Numerically stable softmax (max subtraction).
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-ln(probs[label])`.
pub fn cross_entropy<T: Scalar>(probs: &[T], label: usize) -> Result<T> {
    let p = probs.get(label).ok_or_else(|| {
        Error::invalid(format!(
            "label {label} out of range for {} classes",
            probs.len()
        ))
    })?;
    Ok(-p.ln())
}

/// `logsumexp(z) - z[label]`, the cross-entropy of `softmax(z)` computed
/// without forming `ln` of a possibly underflowed probability.
pub fn cross_entropy_logits<T: Scalar>(z: &[T], label: usize) -> Result<T> {
    if label >= z.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            z.len()
        )));
    }
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + z.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
    Ok(lse - z[label])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted-dropout mask: each entry is `0` with probability `rate`, else
/// `1/(1-rate)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    assert!(
        (0.0..1.0).contains(&rate),
        "dropout rate must lie in [0, 1)"
    );
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rate > 0.0 && rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Tensor<T> {
    match mode {
        DropoutMode::Eval => x.clone(),
        DropoutMode::Train if rate == 0.0 => x.clone(),
        DropoutMode::Train => {
            let mask = dropout_mask::<T, R>(x.len(), rate, rng);
            let mut out = x.clone();
            for (v, m) in out.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(rows: usize, cols: usize, v: f64) -> Tensor<f64> {
        Tensor::filled(&[rows, cols], v)
    }

    /// Direct transcription of the same-length correlation with explicit
    /// bounds checks.
    fn conv_oracle(input: &Tensor<f64>, filter: &Tensor<f64>) -> Vec<f64> {
        let (d, t) = input.dims2().unwrap();
        let (_, w) = filter.dims2().unwrap();
        let off = (w - 1) as isize / 2;
        (0..t)
            .map(|y| {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..w {
                        let col = y as isize + j as isize - off;
                        if col >= 0 && (col as usize) < t {
                            s += input.at(i, col as usize) * filter.at(i, j);
                        }
                    }
                }
                s
            })
            .collect()
    }

    #[test]
    fn conv_width_one_sums_columns() {
        let out = conv_time(&grid(3, 3, 1.0), &grid(3, 1, 1.0)).unwrap();
        assert_eq!(out.data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn conv_width_three_pads_with_zeros() {
        let out = conv_time(&grid(3, 3, 1.0), &grid(3, 3, 1.0)).unwrap();
        assert_eq!(out.data(), &[6.0, 9.0, 6.0]);
    }

    #[test]
    fn conv_zero_filter() {
        let input = Tensor::from_fn(&[4, 6], |i| i as f64 - 7.5);
        let out = conv_time(&input, &grid(4, 3, 0.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_height_mismatch() {
        let err = conv_time(&grid(3, 4, 1.0), &grid(2, 3, 1.0)).unwrap_err();
        assert!(err.to_string().contains("filter height 2"), "{err}");
    }

    #[test]
    fn conv_filter_wider_than_input() {
        let input = Tensor::from_fn(&[2, 2], |i| (i + 1) as f64);
        let filter = Tensor::from_fn(&[2, 5], |i| (i as f64) * 0.5 - 1.0);
        let out = conv_time(&input, &filter).unwrap();
        assert_eq!(out.data(), conv_oracle(&input, &filter).as_slice());
    }

    #[test]
    fn max_pool_time_examples() {
        assert_eq!(max_pool_time(&[-1.0, 3.0, 2.0]).unwrap(), (3.0, 1));
        assert_eq!(max_pool_time(&[5.0]).unwrap(), (5.0, 0));
        assert_eq!(max_pool_time(&[2.0, 2.0]).unwrap(), (2.0, 0));
        assert!(max_pool_time::<f64>(&[]).is_err());
    }

    #[test]
    fn max_pool_window_examples() {
        let m = Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(max_pool_window(&m, (2, 1)).unwrap().0.data(), &[2.0, 4.0]);

        let m = Tensor::new(vec![3, 1], vec![1.0, 5.0, 2.0]).unwrap();
        assert_eq!(max_pool_window(&m, (2, 1)).unwrap().0.data(), &[5.0, 2.0]);

        let ramp = Tensor::from_fn(&[36, 1], |i| (i + 1) as f64);
        let (pooled, arg) = max_pool_window(&ramp, (18, 1)).unwrap();
        assert_eq!(pooled.data(), &[18.0, 36.0]);
        assert_eq!(pooled.shape(), &[2, 1]);
        assert_eq!(arg, vec![17, 35]);

        assert!(max_pool_window(&ramp, (0, 1)).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p: Vec<f64> = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
        assert!(cross_entropy_logits(&[0.0, 1.0], 5).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(&[7], |i| i as f64 - 2.0);
        assert_eq!(dropout(&x, 0.5, DropoutMode::Eval, &mut rng), x);
        assert_eq!(dropout(&x, 0.0, DropoutMode::Train, &mut rng), x);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::filled(&[100_000], 1.0);
        let y = dropout(&x, 0.5, DropoutMode::Train, &mut rng);
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    proptest! {
        #[test]
        fn conv_matches_oracle(d in 1usize..=8, t in 1usize..=12, w in 1usize..=5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let input = Tensor::from_fn(&[d, t], |_| rng.gen_range(-1.0..1.0));
            let filter = Tensor::from_fn(&[d, w], |_| rng.gen_range(-1.0..1.0));
            let out = conv_time(&input, &filter).unwrap();
            for (a, b) in out.data().iter().zip(conv_oracle(&input, &filter)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_normalized_and_shift_invariant(
            z in prop::collection::vec(-50.0f64..50.0, 1..10),
            c in -100.0f64..100.0,
        ) {
            let p = softmax(&z);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn window_pool_is_monotone(
            h in 1usize..12, w in 1usize..4, ph in 1usize..6, pw in 1usize..3,
            seed in any::<u64>(), bump in 0.0f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Tensor::from_fn(&[h, w], |_| rng.gen_range(-1.0..1.0));
            let cell = rng.gen_range(0..h * w);
            let mut bumped = m.clone();
            bumped.data_mut()[cell] += bump;
            let (a, _) = max_pool_window(&m, (ph, pw)).unwrap();
            let (b, _) = max_pool_window(&bumped, (ph, pw)).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!(y >= x);
            }
        }
    }
}
