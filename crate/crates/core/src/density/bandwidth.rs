use crate::density::kernel::KernelSpec;
use crate::error::{Error, Result};

/// `Γ(x)` for `x` a positive multiple of one half.
fn gamma_half_integer(two_x: usize) -> f64 {
    debug_assert!(two_x >= 1);
    let (mut value, mut arg) = if two_x % 2 == 0 {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt(), 0.5)
    };
    let target = two_x as f64 / 2.0;
    while arg < target {
        value *= arg;
        arg += 1.0;
    }
    value
}

/// Maximal-smoothing bandwidth for whitened (unit covariance) data:
///
/// `h = [ (d+8)^((d+6)/2) π^(d/2) R(K) / (16 n (d+2) Γ((d+8)/2)) ]^(1/(d+4))`
///
/// where `R(K) = ∫K²`.
pub fn terrell_bandwidth_for_roughness(n: f64, d: usize, roughness: f64) -> Result<f64> {
    if !(n >= 2.0) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth needs at least 2 samples, got {n}"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    if !(roughness > 0.0) {
        return Err(Error::InvalidArgument("kernel roughness must be positive".into()));
    }
    let df = d as f64;
    let numerator =
        (df + 8.0).powf((df + 6.0) / 2.0) * std::f64::consts::PI.powf(df / 2.0) * roughness;
    let denominator = 16.0 * n * (df + 2.0) * gamma_half_integer(d + 8);
    Ok((numerator / denominator).powf(1.0 / (df + 4.0)))
}

pub fn terrell_bandwidth(n: usize, d: usize, kernel: &KernelSpec) -> Result<f64> {
    if kernel.dims != d {
        return Err(Error::Dimension(format!(
            "kernel is {}-variate, data is {d}-variate",
            kernel.dims
        )));
    }
    terrell_bandwidth_for_roughness(n as f64, d, kernel.roughness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::kernel::KernelShape;

    // Reference values evaluated with 50-digit arithmetic (mpmath).
    const GAUSS_D1_N1000: f64 = 0.287_333_762_283_077_376_468_718_4;
    const BOX_D3_N1000: f64 = 0.502_335_178_807_377_227_688_925_5;
    const BOX_D3_N3_3E6: f64 = 0.157_887_862_242_426_970_540_364_2;
    const TRIANGLE_D2_N5000: f64 = 0.349_355_583_844_684_343_007_699_4;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_half_integer(2), 1.0);
        assert_eq!(gamma_half_integer(10), 24.0);
        assert!((gamma_half_integer(9) - 11.631_728_396_567_448).abs() < 1e-12);
    }

    #[test]
    fn matches_high_precision_closed_form() {
        let g = 1.0 / (2.0 * std::f64::consts::PI.sqrt());
        assert!(rel(terrell_bandwidth_for_roughness(1000.0, 1, g).unwrap(), GAUSS_D1_N1000) < 1e-12);
        let b3 = KernelSpec::boxed(3);
        assert!(rel(terrell_bandwidth(1000, 3, &b3).unwrap(), BOX_D3_N1000) < 1e-12);
        assert!(rel(terrell_bandwidth(3_300_000, 3, &b3).unwrap(), BOX_D3_N3_3E6) < 1e-12);
        let t2 = KernelSpec::new(KernelShape::Triangle, 2).unwrap();
        assert!(rel(terrell_bandwidth(5000, 2, &t2).unwrap(), TRIANGLE_D2_N5000) < 1e-12);
    }

    #[test]
    fn doubling_n_shrinks_by_fixed_factor() {
        for d in 1..=6 {
            let k = KernelSpec::boxed(d);
            let h1 = terrell_bandwidth(777, d, &k).unwrap();
            let h2 = terrell_bandwidth(1554, d, &k).unwrap();
            assert!(rel(h1 / h2, 2f64.powf(1.0 / (d as f64 + 4.0))) < 1e-13);
        }
    }

    #[test]
    fn monotone_and_rejects_tiny_samples() {
        let k = KernelSpec::boxed(3);
        let big = terrell_bandwidth(3_300_000, 3, &k).unwrap();
        assert!(big > 0.0 && big.is_finite());
        assert!(big < terrell_bandwidth(1000, 3, &k).unwrap());
        assert!(terrell_bandwidth(1, 3, &k).is_err());
        assert!(terrell_bandwidth(10, 2, &k).is_err());
    }
}
