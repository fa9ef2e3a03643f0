//! Four-test statistical battery with the pass criteria applied to the
//! final bit stream: frequency (monobit), block frequency, runs, and
//! longest run of ones.
//!
//! Single-sequence verdicts use the standard erfc / incomplete-gamma forms.
//! `battery` runs every test over fixed-length sub-sequences, reports the
//! passing proportion per test, and condenses the per-sequence p-values into
//! a 10-bin uniformity p-value. A test item passes when the uniformity
//! p-value reaches 0.01 and the proportion reaches 0.98.

use crate::bits::BitBuf;
use thiserror::Error;

// Complementary error function, double-precision rational approximations
// over three ranges (the classic CALERF segmentation). Max relative error
// about 1.2e-16; the library erfc misses the 1e-12 absolute accuracy this
// module contracts for.
const ERF_A: [f64; 5] = [
    3.16112374387056560,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [
    2.56852019228982242,
    1.87295284992346047,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
const INV_SQRT_PI: f64 = 5.6418958354775628695e-1;

/// `erfc(x)` to full double precision.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        // erfc via erf on the central interval
        let z = if y > 1.1e-16 { y * y } else { 0.0 };
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        return 1.0 - x * (num + ERF_A[3]) / (den + ERF_B[3]);
    }
    let result = if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        scaled_exp(y) * (num + ERF_C[7]) / (den + ERF_D[7])
    } else if y < 26.6 {
        let z = 1.0 / (y * y);
        let mut num = ERF_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERF_P[i]) * z;
            den = (den + ERF_Q[i]) * z;
        }
        let tail = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
        scaled_exp(y) * (INV_SQRT_PI - tail) / y
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// `exp(-y^2)` split so the argument reduction loses no precision.
fn scaled_exp(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// Regularized upper incomplete gamma `Q(a, x)`, with the degenerate
/// `x <= 0` case pinned at 1.
pub fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        statrs::function::gamma::gamma_ur(a, x)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RandTestError {
    #[error("sequence of {got} bits is shorter than the minimum {min} for {test}")]
    TooShort { test: &'static str, got: usize, min: usize },
    #[error("block length {0} is invalid for this input")]
    BadBlockLength(usize),
    #[error("battery needs at least {min} sub-sequences, got {got}")]
    TooFewSubsequences { got: usize, min: usize },
}

/// Per-sequence pass threshold.
pub const P_THRESHOLD: f64 = 0.01;
/// Proportion-of-passing-sequences threshold.
pub const PROPORTION_THRESHOLD: f64 = 0.98;

/// Verdict of one test item.
#[derive(Debug, Clone, PartialEq)]
pub struct TestVerdict {
    pub test: &'static str,
    pub p_value: f64,
    pub pass: bool,
    /// Fraction of sub-sequences whose p-value reached the threshold;
    /// 1.0 or 0.0 for single-sequence runs.
    pub proportion: f64,
    pub proportion_pass: bool,
}

impl TestVerdict {
    fn single(test: &'static str, p_value: f64) -> Self {
        let pass = p_value >= P_THRESHOLD;
        Self {
            test,
            p_value,
            pass,
            proportion: if pass { 1.0 } else { 0.0 },
            proportion_pass: pass,
        }
    }

    pub fn passes_both(&self) -> bool {
        self.pass && self.proportion_pass
    }
}

/// Frequency (monobit) test: `p = erfc(|S_n| / sqrt(2 n))` with
/// `S_n = #ones - #zeros`.
pub fn monobit(bits: &BitBuf) -> Result<TestVerdict, RandTestError> {
    let n = bits.len();
    if n < 100 {
        return Err(RandTestError::TooShort { test: "monobit", got: n, min: 100 });
    }
    let ones = bits.count_ones() as f64;
    let s = 2.0 * ones - n as f64;
    let p = erfc(s.abs() / (2.0 * n as f64).sqrt());
    Ok(TestVerdict::single("monobit", p))
}

/// Frequency within a block: chi-square of per-block one-fractions.
pub fn block_frequency(bits: &BitBuf, block_len: usize) -> Result<TestVerdict, RandTestError> {
    let n = bits.len();
    if n < 100 {
        return Err(RandTestError::TooShort { test: "block_frequency", got: n, min: 100 });
    }
    if block_len == 0 || block_len > n {
        return Err(RandTestError::BadBlockLength(block_len));
    }
    let blocks = n / block_len;
    if blocks == 0 {
        return Err(RandTestError::BadBlockLength(block_len));
    }
    let mut chi = 0.0;
    for b in 0..blocks {
        let mut ones = 0usize;
        for i in 0..block_len {
            ones += bits.get(b * block_len + i) as usize;
        }
        let pi = ones as f64 / block_len as f64;
        chi += (pi - 0.5) * (pi - 0.5);
    }
    chi *= 4.0 * block_len as f64;
    let p = igamc(blocks as f64 / 2.0, chi / 2.0);
    Ok(TestVerdict::single("block_frequency", p))
}

/// Runs test: total number of runs against its expectation under the
/// observed bias. Sequences failing the monobit precondition score zero.
pub fn runs(bits: &BitBuf) -> Result<TestVerdict, RandTestError> {
    let n = bits.len();
    if n < 100 {
        return Err(RandTestError::TooShort { test: "runs", got: n, min: 100 });
    }
    let pi = bits.count_ones() as f64 / n as f64;
    if (pi - 0.5).abs() >= 2.0 / (n as f64).sqrt() {
        return Ok(TestVerdict::single("runs", 0.0));
    }
    let mut v = 1u64;
    let mut prev = bits.get(0);
    for i in 1..n {
        let cur = bits.get(i);
        v += (cur != prev) as u64;
        prev = cur;
    }
    let expected = 2.0 * n as f64 * pi * (1.0 - pi);
    let p = erfc((v as f64 - expected).abs() / (2.0 * (2.0 * n as f64).sqrt() * pi * (1.0 - pi)));
    Ok(TestVerdict::single("runs", p))
}

struct LongestRunTable {
    block_len: usize,
    classes: &'static [f64],
    min_class: u32,
}

// Reference category probabilities for longest-run-of-ones classes.
const LR_SMALL: [f64; 4] = [0.2148, 0.3672, 0.2305, 0.1875];
const LR_MEDIUM: [f64; 6] = [0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124];
const LR_LARGE: [f64; 7] = [0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727];

fn longest_run_table(n: usize) -> Option<LongestRunTable> {
    if n >= 750_000 {
        Some(LongestRunTable { block_len: 10_000, classes: &LR_LARGE, min_class: 10 })
    } else if n >= 6_272 {
        Some(LongestRunTable { block_len: 128, classes: &LR_MEDIUM, min_class: 4 })
    } else if n >= 128 {
        Some(LongestRunTable { block_len: 8, classes: &LR_SMALL, min_class: 1 })
    } else {
        None
    }
}

/// Longest run of ones within fixed-size blocks, chi-square against the
/// reference class probabilities.
pub fn longest_run(bits: &BitBuf) -> Result<TestVerdict, RandTestError> {
    let n = bits.len();
    let table = longest_run_table(n)
        .ok_or(RandTestError::TooShort { test: "longest_run", got: n, min: 128 })?;
    let blocks = n / table.block_len;
    let k = table.classes.len();
    let mut nu = vec![0u64; k];
    for b in 0..blocks {
        let mut best = 0u32;
        let mut cur = 0u32;
        for i in 0..table.block_len {
            if bits.get(b * table.block_len + i) {
                cur += 1;
                best = best.max(cur);
            } else {
                cur = 0;
            }
        }
        let class = best
            .saturating_sub(table.min_class)
            .min(k as u32 - 1) as usize;
        // runs shorter than the lowest class fold into it
        let class = if best <= table.min_class { 0 } else { class };
        nu[class] += 1;
    }
    let mut chi = 0.0;
    for (c, &pi) in table.classes.iter().enumerate() {
        let expected = blocks as f64 * pi;
        let d = nu[c] as f64 - expected;
        chi += d * d / expected;
    }
    let p = igamc((k - 1) as f64 / 2.0, chi / 2.0);
    Ok(TestVerdict::single("longest_run", p))
}

/// Everything the battery computed for one test item.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryItem {
    pub verdict: TestVerdict,
    /// Per-sub-sequence p-values, in order.
    pub p_values: Vec<f64>,
}

/// Minimum sub-sequence count for the battery thresholds to mean anything.
pub const MIN_SUBSEQUENCES: usize = 50;

/// Uniformity p-value of a p-value sample: 10-bin chi-square.
pub fn uniformity_p_value(ps: &[f64]) -> f64 {
    let mut bins = [0u64; 10];
    for &p in ps {
        let b = ((p * 10.0).floor() as usize).min(9);
        bins[b] += 1;
    }
    let expected = ps.len() as f64 / 10.0;
    let chi: f64 = bins.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    igamc(4.5, chi / 2.0)
}

/// Runs the four tests over consecutive sub-sequences of `subsequence_len`
/// bits. Per item: the proportion of sub-sequences at `p >= 0.01` and the
/// uniformity p-value of the per-sequence p-values; both thresholds apply.
pub fn battery(
    bits: &BitBuf,
    subsequence_len: usize,
    block_len: usize,
) -> Result<Vec<BatteryItem>, RandTestError> {
    if subsequence_len == 0 {
        return Err(RandTestError::BadBlockLength(subsequence_len));
    }
    let count = bits.len() / subsequence_len;
    if count < MIN_SUBSEQUENCES {
        return Err(RandTestError::TooFewSubsequences { got: count, min: MIN_SUBSEQUENCES });
    }
    type TestFn<'a> = Box<dyn Fn(&BitBuf) -> Result<TestVerdict, RandTestError> + Sync + 'a>;
    let tests: Vec<(&'static str, TestFn)> = vec![
        ("monobit", Box::new(monobit)),
        ("block_frequency", Box::new(move |b: &BitBuf| block_frequency(b, block_len))),
        ("runs", Box::new(runs)),
        ("longest_run", Box::new(longest_run)),
    ];

    let mut per_test: Vec<Vec<f64>> = vec![Vec::with_capacity(count); tests.len()];
    for s in 0..count {
        let seq = bits.slice(s * subsequence_len, subsequence_len);
        for (t, (_, f)) in tests.iter().enumerate() {
            per_test[t].push(f(&seq)?.p_value);
        }
    }

    Ok(tests
        .iter()
        .zip(per_test)
        .map(|((name, _), ps)| {
            let passing = ps.iter().filter(|&&p| p >= P_THRESHOLD).count();
            let proportion = passing as f64 / ps.len() as f64;
            let p_value = uniformity_p_value(&ps);
            BatteryItem {
                verdict: TestVerdict {
                    test: name,
                    p_value,
                    pass: p_value >= P_THRESHOLD,
                    proportion,
                    proportion_pass: proportion >= PROPORTION_THRESHOLD,
                },
                p_values: ps,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alternating(n: usize) -> BitBuf {
        let mut b = BitBuf::zeros(n);
        for i in (1..n).step_by(2) {
            b.set(i, true);
        }
        b
    }

    fn ones(n: usize) -> BitBuf {
        let mut b = BitBuf::zeros(n);
        for i in 0..n {
            b.set(i, true);
        }
        b
    }

    /// First 100 binary digits of pi (a fixed published constant).
    fn pi_bits() -> BitBuf {
        let s = "1100100100001111110110101010001000100001011010001100001000110100\
                 110001001100011001100010100010111000";
        BitBuf::from_bits(&s.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    #[test]
    fn special_function_accuracy_pins() {
        // frozen from an arbitrary-precision evaluation; the battery formulas
        // assume at least 1e-12 absolute accuracy here
        let erfc_pins = [
            (0.5, 0.47950012218695346),
            (1.0, 0.15729920705028513),
            (2.0, 0.0046777349810472658),
            (3.5, 7.4309837234141275e-7),
            (5.0, 1.5374597944280349e-12),
        ];
        for (x, v) in erfc_pins {
            assert!((erfc(x) - v).abs() < 1e-12, "erfc({x})");
        }
        let igamc_pins = [
            (0.5, 0.25, 0.47950012218695346),
            (1.5, 14.62, 1.9938836707156879e-6),
            (3.0, 2.0, 0.67667641618306346),
            (4.5, 9.0, 0.035173539466984794),
            (2.5, 0.3, 0.98800324279409373),
        ];
        for (a, x, v) in igamc_pins {
            assert!((igamc(a, x) - v).abs() < 1e-12, "Q({a},{x})");
        }
        assert_eq!(igamc(5.0, 0.0), 1.0);
    }

    #[test]
    fn monobit_balanced_biased_and_reference() {
        let v = monobit(&alternating(100)).unwrap();
        assert_eq!(v.p_value, 1.0);
        assert!(v.pass);

        let v = monobit(&BitBuf::zeros(100)).unwrap();
        assert!((v.p_value - 1.5239706e-23).abs() < 1e-28);
        assert!(!v.pass);

        // frozen: erfc(16 / sqrt(200))
        let v = monobit(&pi_bits()).unwrap();
        assert!((v.p_value - 0.10959858339911599).abs() < 1e-12);
        assert!(v.pass);

        assert!(monobit(&BitBuf::zeros(99)).is_err());
    }

    #[test]
    fn monobit_and_block_frequency_complement_invariant() {
        let bits = pi_bits();
        let mut flipped = BitBuf::zeros(bits.len());
        for i in 0..bits.len() {
            flipped.set(i, !bits.get(i));
        }
        assert_eq!(monobit(&bits).unwrap().p_value, monobit(&flipped).unwrap().p_value);
        assert_eq!(
            block_frequency(&bits, 10).unwrap().p_value,
            block_frequency(&flipped, 10).unwrap().p_value
        );
    }

    #[test]
    fn block_frequency_all_ones_fails() {
        // frozen: chi2 = 1000 over 10 blocks of 100
        let v = block_frequency(&ones(1000), 100).unwrap();
        assert!(v.p_value < 1e-200);
        assert!(!v.pass);
        let v = block_frequency(&alternating(1000), 100).unwrap();
        assert_eq!(v.p_value, 1.0);
    }

    #[test]
    fn runs_alternating_is_maximal() {
        // n runs instead of the expected n/2; frozen p = erfc(sqrt(50)/...)
        let v = runs(&alternating(100)).unwrap();
        assert!((v.p_value - 1.5239706048321052e-23).abs() < 1e-28);
        assert!(!v.pass);
    }

    #[test]
    fn runs_biased_precondition_scores_zero() {
        let v = runs(&ones(100)).unwrap();
        assert_eq!(v.p_value, 0.0);
    }

    #[test]
    fn longest_run_all_zeros_fails() {
        // frozen: every 8-bit block in class 0, chi2 = 58.487895716945996
        let v = longest_run(&BitBuf::zeros(128)).unwrap();
        assert!((v.p_value - 1.2366066003143022e-12).abs() < 1e-18);
        assert!(!v.pass);
        assert!(longest_run(&BitBuf::zeros(127)).is_err());
    }

    #[test]
    fn longest_run_passes_on_seeded_uniform_bits() {
        let v = longest_run(&BitBuf::random(4242, 1 << 20)).unwrap();
        assert!(v.pass, "p = {}", v.p_value);
    }

    #[test]
    fn battery_thresholds_and_shape() {
        let bits = BitBuf::random(7, 60 * 4096);
        let items = battery(&bits, 4096, 128).unwrap();
        assert_eq!(items.len(), 4);
        for item in &items {
            assert_eq!(item.p_values.len(), 60);
            assert!(item.verdict.proportion >= PROPORTION_THRESHOLD, "{:?}", item.verdict);
            assert!(item.verdict.p_value >= P_THRESHOLD, "{:?}", item.verdict);
            assert!(item.verdict.passes_both());
        }
    }

    #[test]
    fn battery_rejects_insufficient_data() {
        let bits = BitBuf::random(7, 10 * 4096);
        assert_eq!(
            battery(&bits, 4096, 128).unwrap_err(),
            RandTestError::TooFewSubsequences { got: 10, min: 50 }
        );
    }

    #[test]
    fn battery_fails_designed_bias() {
        // heavily biased bits: monobit proportion collapses
        let mut bits = BitBuf::zeros(60 * 4096);
        let noise = BitBuf::random(9, 60 * 4096);
        for i in 0..bits.len() {
            bits.set(i, noise.get(i) && noise.get((i + 1) % bits.len()));
        }
        let items = battery(&bits, 4096, 128).unwrap();
        let mono = items.iter().find(|i| i.verdict.test == "monobit").unwrap();
        assert!(!mono.verdict.passes_both());
    }

    #[test]
    fn p_values_stay_in_unit_interval() {
        for seed in 0..20 {
            let bits = BitBuf::random(seed, 2048);
            for v in [
                monobit(&bits).unwrap(),
                block_frequency(&bits, 64).unwrap(),
                runs(&bits).unwrap(),
                longest_run(&bits).unwrap(),
            ] {
                assert!((0.0..=1.0).contains(&v.p_value), "{v:?}");
            }
        }
    }

    #[test]
    fn p_values_approximately_uniform_on_ideal_coin() {
        // Kolmogorov-Smirnov over 100 sub-sequences against the 1% critical
        // value 1.62762/sqrt(k)
        let k = 100;
        let len = 1 << 15;
        let bits = BitBuf::random(314159, k * len);
        let items = battery(&bits, len, 1024).unwrap();
        let crit = 1.62762 / (k as f64).sqrt();
        for item in &items {
            let mut ps = item.p_values.clone();
            ps.sort_by(f64::total_cmp);
            let n = ps.len() as f64;
            let mut d: f64 = 0.0;
            for (i, &p) in ps.iter().enumerate() {
                d = d.max(((i + 1) as f64 / n - p).abs());
                d = d.max((p - i as f64 / n).abs());
            }
            assert!(d < crit, "{}: KS {d} >= {crit}", item.verdict.test);
        }
    }
}
