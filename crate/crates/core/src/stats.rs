//! Small statistics helpers shared by the Monte Carlo estimators and tests:
//! running moments, compensated summation, binomial intervals, chi-square
//! goodness of fit, and the few special functions they need.

/// Kahan compensated accumulator; the Feynman-Kac integrals sum values whose
/// dynamic range spans several orders of magnitude over ~N^d terms.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(samples: &[f64]) -> MeanSe {
    let n = samples.len();
    assert!(n >= 2, "need at least two samples");
    let mut s = Kahan::new();
    for &x in samples {
        s.add(x);
    }
    let mean = s.value() / n as f64;
    let mut q = Kahan::new();
    for &x in samples {
        let d = x - mean;
        q.add(d * d);
    }
    let var = q.value() / (n as f64 - 1.0);
    MeanSe {
        mean,
        se: (var / n as f64).sqrt(),
        n,
    }
}

/// Binomial proportion with its Wilson 99.7% interval (z = 3).
#[derive(Debug, Clone, Copy)]
pub struct Proportion {
    pub p_hat: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

pub fn proportion(successes: usize, n: usize) -> Proportion {
    assert!(n > 0);
    let z = 3.0;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let se = (p * (1.0 - p) / nf).sqrt();
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * ((p * (1.0 - p) + z * z / (4.0 * nf)) / nf).sqrt() / denom;
    Proportion {
        p_hat: p,
        se,
        lo: (centre - half).max(0.0),
        hi: (centre + half).min(1.0),
        n,
    }
}

pub fn combined_se(se1: f64, se2: f64) -> f64 {
    (se1 * se1 + se2 * se2).sqrt()
}

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = 0.99999999999980993;
    let t = x + 7.5;
    for (i, &c) in COEFFS.iter().enumerate() {
        a += c / (x + (i as f64) + 1.0);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x).
pub fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut k = a;
        for _ in 0..500 {
            k += 1.0;
            term *= x / k;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (sum.ln() + a * x.ln() - x - ln_gamma(a)).exp()
    } else {
        // continued fraction for Q(a, x), modified Lentz
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (a * x.ln() - x - ln_gamma(a)).exp() * h;
        1.0 - q
    }
}

/// Survival function of the chi-square distribution with `k` degrees of
/// freedom.
pub fn chi2_sf(stat: f64, k: usize) -> f64 {
    1.0 - reg_lower_gamma(k as f64 / 2.0, stat / 2.0)
}

/// Chi-square goodness-of-fit p-value of observed counts against expected
/// counts. Bins with expectation below `min_expected` are pooled into the
/// last bin.
pub fn chi2_gof_pvalue(observed: &[f64], expected: &[f64], min_expected: f64) -> f64 {
    assert_eq!(observed.len(), expected.len());
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let mut pool_o = 0.0;
    let mut pool_e = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        if e < min_expected {
            pool_o += o;
            pool_e += e;
        } else {
            obs.push(o);
            exp.push(e);
        }
    }
    if pool_e > 0.0 {
        obs.push(pool_o);
        exp.push(pool_e);
    }
    if obs.len() < 2 {
        return 1.0;
    }
    let stat: f64 = obs
        .iter()
        .zip(&exp)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    chi2_sf(stat, obs.len() - 1)
}

/// Poisson pmf.
pub fn poisson_pmf(lambda: f64, k: usize) -> f64 {
    (-(lambda) + (k as f64) * lambda.ln() - ln_gamma(k as f64 + 1.0)).exp()
}

/// Poisson sample (inversion for small means, normal-walk correction for
/// large ones would be overkill here: means stay below a few hundred).
pub fn sample_poisson<R: rand::Rng>(lambda: f64, rng: &mut R) -> usize {
    assert!(lambda >= 0.0);
    if lambda == 0.0 {
        return 0;
    }
    if lambda < 30.0 {
        let l = (-lambda).exp();
        let mut k = 0usize;
        let mut p = 1.0;
        loop {
            p *= rng.gen::<f64>();
            if p <= l {
                return k;
            }
            k += 1;
        }
    }
    // split recursively: Poisson(a + b) = Poisson(a) + Poisson(b)
    let half = lambda / 2.0;
    sample_poisson(half, rng) + sample_poisson(lambda - half, rng)
}

pub fn sample_exp<R: rand::Rng>(rate: f64, rng: &mut R) -> f64 {
    assert!(rate > 0.0);
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j) = (0usize, 0usize);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Least-squares slope and intercept of y against x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Scaled modified Bessel function `e^{-x} I_0(x)` for `x >= 0`
/// (Abramowitz-Stegun 9.8.1/9.8.2).
pub fn bessel_i0_scaled(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 3.75 {
        let t = x / 3.75;
        let t2 = t * t;
        let i0 = 1.0
            + t2 * (3.5156229
                + t2 * (3.0899424
                    + t2 * (1.2067492 + t2 * (0.2659732 + t2 * (0.0360768 + t2 * 0.0045813)))));
        i0 * (-x).exp()
    } else {
        let t = 3.75 / x;
        let p = 0.39894228
            + t * (0.01328592
                + t * (0.00225319
                    + t * (-0.00157565
                        + t * (0.00916281
                            + t * (-0.02057706
                                + t * (0.02635537 + t * (-0.01647633 + t * 0.00392377)))))));
        p / x.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_matches_factorials() {
        for n in 1..10usize {
            let exact: f64 = (1..n).map(|k| (k as f64).ln()).sum();
            assert!((ln_gamma(n as f64) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn chi2_sf_reference_values() {
        // chi2 with 2 dof is Exp(1/2): sf(x) = exp(-x/2)
        for &x in &[0.5, 1.0, 3.0, 10.0] {
            assert!((chi2_sf(x, 2) - (-x / 2.0f64).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn poisson_pmf_sums_to_one() {
        let lambda = 4.2;
        let total: f64 = (0..60).map(|k| poisson_pmf(lambda, k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_sampler_mean() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let lambda = 70.0;
        let n = 20000;
        let mean: f64 = (0..n)
            .map(|_| sample_poisson(lambda, &mut rng) as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - lambda).abs() < 3.0 * (lambda / n as f64).sqrt());
    }

    #[test]
    fn bessel_i0_scaled_small_argument() {
        // I_0(0.1) = 1.00250156...
        let v = bessel_i0_scaled(0.1) * (0.1f64).exp();
        assert!((v - 1.0025015629340956).abs() < 1e-7);
    }

    #[test]
    fn wilson_interval_contains_p_hat() {
        let p = proportion(37, 1000);
        assert!(p.lo <= p.p_hat && p.p_hat <= p.hi);
    }
}
