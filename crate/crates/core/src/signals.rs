//! Synthetic signals and the cyclic shift / convolution / window primitives.
//!
//! Formulas in the docs use 1-based indices with `[n]_m` meaning `n mod m`;
//! storage is 0-based and every index conversion lives in this module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of indices.
///
/// The result depends only on `(master, path)`, never on evaluation order, so
/// work items can be scheduled in any order and still see identical streams.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(master), |h, &i| {
        mix64(h ^ mix64(i.wrapping_add(0xA076_1D64_78BD_642F)))
    })
}

/// The generator used everywhere randomness is needed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard Gaussian vector of length `n`.
pub fn gaussian_vector(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Inner product with four independent accumulators (vectorizes; fixed summation order).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `P_S[v] = v / ‖v‖₂`, or `None` for the zero vector.
pub fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm2(v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / n).collect())
}

/// Uniformly random point on the unit sphere in ℝⁿ.
pub fn random_unit(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        if let Some(u) = normalize(&gaussian_vector(n, rng)) {
            return u;
        }
    }
}

/// A unit-norm filter `a₀ ∈ 𝕊^{k−1}`, `k ≥ 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    values: Vec<f64>,
}

impl Kernel {
    /// Normalizes `values` onto the sphere.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::param(
                "Kernel::new",
                format!("kernel length {} < 2", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("Kernel::new", "non-finite kernel entry"));
        }
        let values =
            normalize(&values).ok_or_else(|| Error::DegenerateKernel("zero kernel".into()))?;
        Ok(Kernel { values })
    }

    /// The delta kernel `e₁ ∈ ℝᵏ`.
    pub fn delta(k: usize) -> Result<Self> {
        let mut v = vec![0.0; k];
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
        Kernel::new(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// Families of random kernels used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// Uniform on the sphere (normalized standard Gaussian).
    Generic,
    /// Random kernel whose length-k DFT is supported on the middle third of the
    /// non-negative frequencies `0..=k/2` (and their mirror images).
    Bandpass,
    /// `P_S[e₁ + spread·g]` with Gaussian `g`: low shift coherence, condition number near 1.
    NearDelta { spread: f64 },
}

impl KernelFamily {
    pub fn sample(&self, k: usize, seed: u64) -> Result<Kernel> {
        let mut rng = rng_from_seed(seed);
        match *self {
            KernelFamily::Generic => Kernel::new(gaussian_vector(k, &mut rng)),
            KernelFamily::Bandpass => Kernel::new(bandpass_values(k, &mut rng)),
            KernelFamily::NearDelta { spread } => {
                let mut v: Vec<f64> = gaussian_vector(k, &mut rng)
                    .into_iter()
                    .map(|g| spread * g)
                    .collect();
                if let Some(first) = v.first_mut() {
                    *first += 1.0;
                }
                Kernel::new(v)
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            KernelFamily::Generic => "generic".into(),
            KernelFamily::Bandpass => "bandpass".into(),
            KernelFamily::NearDelta { spread } => format!("neardelta:{spread}"),
        }
    }

    /// Inverse of [`KernelFamily::name`]; `neardelta` alone uses spread 0.01.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "generic" => Ok(KernelFamily::Generic),
            "bandpass" => Ok(KernelFamily::Bandpass),
            "neardelta" => Ok(KernelFamily::NearDelta { spread: 0.01 }),
            other => {
                if let Some(rest) = other.strip_prefix("neardelta:") {
                    let spread: f64 = rest.parse().map_err(|_| {
                        Error::param("KernelFamily::parse", format!("bad spread {rest:?}"))
                    })?;
                    if spread.is_finite() && spread >= 0.0 {
                        return Ok(KernelFamily::NearDelta { spread });
                    }
                }
                Err(Error::param(
                    "KernelFamily::parse",
                    format!("unknown kernel family {other:?}"),
                ))
            }
        }
    }
}

/// Band of frequency indices `[lo, hi]` covering the middle third of `0..=k/2`.
pub fn bandpass_band(k: usize) -> (usize, usize) {
    let nyquist = k / 2;
    let lo = (nyquist as f64 / 3.0).ceil() as usize;
    let hi = ((2 * nyquist) as f64 / 3.0).floor() as usize;
    (lo.max(1), hi.max(lo.max(1)))
}

fn bandpass_values(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (lo, hi) = bandpass_band(k);
    let mut v = vec![0.0; k];
    for f in lo..=hi {
        let c: f64 = rng.sample(StandardNormal);
        let s: f64 = rng.sample(StandardNormal);
        let w = 2.0 * std::f64::consts::PI * f as f64 / k as f64;
        for (n, vn) in v.iter_mut().enumerate() {
            let phase = w * n as f64;
            *vn += c * phase.cos() + s * phase.sin();
        }
    }
    v
}

/// Bernoulli-Gaussian activation `x₀(i) = ωᵢ gᵢ`, `ωᵢ ~ Ber(θ)`, `gᵢ ~ N(0,1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSignal {
    pub mask: Vec<bool>,
    pub gauss: Vec<f64>,
    pub theta: f64,
    pub seed: u64,
}

impl SparseSignal {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Realized support size.
    pub fn support(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn values(&self) -> Vec<f64> {
        self.mask
            .iter()
            .zip(&self.gauss)
            .map(|(&on, &g)| if on { g } else { 0.0 })
            .collect()
    }
}

/// Draws an i.i.d. BG(θ) vector of length `m`.
///
/// The mask and the Gaussian values come from two independent streams derived
/// from `seed`, so the values at a position do not depend on `theta`.
pub fn sample_bg(m: usize, theta: f64, seed: u64) -> Result<SparseSignal> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::param(
            "sample_bg",
            format!("theta = {theta} not in (0, 1)"),
        ));
    }
    if m == 0 {
        return Err(Error::param("sample_bg", "m must be positive"));
    }
    let mut mask_rng = rng_from_seed(derive_seed(seed, &[0]));
    let mask = (0..m).map(|_| mask_rng.gen::<f64>() < theta).collect();
    let mut gauss_rng = rng_from_seed(derive_seed(seed, &[1]));
    let gauss = gaussian_vector(m, &mut gauss_rng);
    Ok(SparseSignal {
        mask,
        gauss,
        theta,
        seed,
    })
}

/// An observation `y ∈ ℝᵐ` together with the kernel length `k` it is analyzed with.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Vec<f64>,
    pub k: usize,
}

impl Observation {
    pub fn new(y: Vec<f64>, k: usize) -> Result<Self> {
        if k == 0 || y.len() < k {
            return Err(Error::dim(
                "Observation::new",
                format!("m = {} < k = {}", y.len(), k),
            ));
        }
        Ok(Observation { y, k })
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }
}

/// `s_τ[v]`: `out(i) = v([i − τ − 1]_m + 1)`.
pub fn cyclic_shift(v: &[f64], tau: i64) -> Vec<f64> {
    let m = v.len();
    if m == 0 {
        return Vec::new();
    }
    let t = tau.rem_euclid(m as i64) as usize;
    let mut out = Vec::with_capacity(m);
    out.extend_from_slice(&v[m - t..]);
    out.extend_from_slice(&v[..m - t]);
    out
}

/// `v̌ = [v₁, v_m, v_{m−1}, …, v₂]`.
pub fn reverse(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    if let Some((first, rest)) = v.split_first() {
        out.push(*first);
        out.extend(rest.iter().rev());
    }
    out
}

/// `ι(a)`: pads `a` with zeros to length `m`.
pub fn zero_pad(a: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < a.len() {
        return Err(Error::dim(
            "zero_pad",
            format!("m = {} < k = {}", m, a.len()),
        ));
    }
    let mut out = a.to_vec();
    out.resize(m, 0.0);
    Ok(out)
}

/// `ι*`: keeps the first `k` entries.
pub fn truncate(v: &[f64], k: usize) -> Result<Vec<f64>> {
    if k > v.len() {
        return Err(Error::dim(
            "truncate",
            format!("k = {} > m = {}", k, v.len()),
        ));
    }
    Ok(v[..k].to_vec())
}

/// `ι_k* s_τ[ι(a)]`: the shift truncation of a kernel, padded to `2k − 1` before shifting.
pub fn shift_truncation(a: &[f64], tau: i64) -> Vec<f64> {
    let k = a.len();
    let padded = zero_pad(a, 2 * k - 1).expect("2k - 1 >= k");
    cyclic_shift(&padded, tau)[..k].to_vec()
}

/// Cyclic convolution `y(j) = Σ_{i=1..k} a(i) x([j − i]_m + 1)`, direct O(mk).
pub fn convolve(a: &Kernel, x: &[f64]) -> Result<Observation> {
    let y = cyclic_convolve(a.values(), x)?;
    Observation::new(y, a.len())
}

/// Cyclic convolution of a short filter with a long signal, without the unit-norm requirement.
pub fn cyclic_convolve(a: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let (k, m) = (a.len(), x.len());
    if k == 0 || m < k {
        return Err(Error::dim("convolve", format!("m = {m} < k = {k}")));
    }
    let mut y = vec![0.0; m];
    for (t, &at) in a.iter().enumerate() {
        if at == 0.0 {
            continue;
        }
        // y[j] += a[t] x[j - t] split at the wrap point.
        let (head, tail) = y.split_at_mut(t);
        for (yj, xj) in tail.iter_mut().zip(&x[..m - t]) {
            *yj += at * xj;
        }
        for (yj, xj) in head.iter_mut().zip(&x[m - t..]) {
            *yj += at * xj;
        }
    }
    Ok(y)
}

/// `y` followed by its first `k − 1` entries, so window `i` is the contiguous slice `[i, i + k)`.
pub fn wrap_extend(y: &[f64], k: usize) -> Vec<f64> {
    let mut ext = Vec::with_capacity(y.len() + k.saturating_sub(1));
    ext.extend_from_slice(y);
    let mut need = k.saturating_sub(1);
    while need > 0 {
        let take = need.min(y.len());
        ext.extend_from_slice(&y[..take]);
        need -= take;
    }
    ext
}

/// `Yᵀw`: entry `i` is `⟨y_i, w⟩` with `y_i = [y_i, …, y_{1+[i+k−2]_m}]`.
pub fn correlate_windows(y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    check_windows("correlate_windows", y, w.len())?;
    Ok(correlate_extended(&wrap_extend(y, w.len()), y.len(), w))
}

/// `Yη = Σᵢ ηᵢ y_i ∈ ℝᵏ`, the adjoint of [`correlate_windows`].
pub fn scatter_windows(y: &[f64], eta: &[f64], k: usize) -> Result<Vec<f64>> {
    check_windows("scatter_windows", y, k)?;
    if eta.len() != y.len() {
        return Err(Error::dim(
            "scatter_windows",
            format!("eta has {} entries, m = {}", eta.len(), y.len()),
        ));
    }
    Ok(scatter_extended(&wrap_extend(y, k), eta, k))
}

fn check_windows(op: &'static str, y: &[f64], k: usize) -> Result<()> {
    if k == 0 || k > y.len() {
        return Err(Error::dim(
            op,
            format!("window length {} incompatible with m = {}", k, y.len()),
        ));
    }
    Ok(())
}

pub(crate) fn correlate_extended(y_ext: &[f64], m: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    (0..m).map(|i| dot(&y_ext[i..i + k], w)).collect()
}

pub(crate) fn scatter_extended(y_ext: &[f64], eta: &[f64], k: usize) -> Vec<f64> {
    let m = eta.len();
    (0..k).map(|j| dot(&y_ext[j..j + m], eta)).collect()
}

/// The `i`-th cyclic window (0-based start) of length `k`.
pub fn window(y: &[f64], start: usize, k: usize) -> Vec<f64> {
    let m = y.len();
    (0..k).map(|j| y[(start + j) % m]).collect()
}

/// Cyclic autocorrelation `r(τ) = Σ_l y_l y_{[l+τ−1]_m+1}` for `τ = 0..lags`.
pub fn cyclic_autocorrelation(y: &[f64], lags: usize) -> Vec<f64> {
    let ext = wrap_extend(y, lags);
    let m = y.len();
    (0..lags)
        .map(|tau| dot(&ext[..m], &ext[tau..tau + m]))
        .collect()
}
