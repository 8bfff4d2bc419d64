//! Shared fixtures for the benchmarks.

use fluoro_core::{FluorescenceLobe, FluorescentMaterial, Illuminant, WavelengthGrid};

/// A two-Gaussian material typical of interactive editing.
pub fn sample_material() -> FluorescentMaterial {
    let lobe = |alpha_bar, mu_a, sigma_a, mu_e, sigma_e| FluorescenceLobe {
        alpha_bar,
        mu_a,
        sigma_a,
        mu_e,
        sigma_e,
    };
    FluorescentMaterial::new(
        [0.2, 0.22, 0.3],
        vec![lobe(0.6, 390.0, 30.0, 520.0, 30.0), lobe(0.3, 450.0, 40.0, 610.0, 25.0)],
    )
    .expect("valid material")
}

pub fn d65() -> Illuminant {
    Illuminant::builtin("D65", WavelengthGrid::default()).expect("builtin")
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixtures_are_valid() {
        super::sample_material().validate().unwrap();
        assert_eq!(super::d65().name(), "D65");
    }
}
