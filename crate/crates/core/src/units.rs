//! Atomic-unit conversions.

/// Hartree energy in eV.
pub const HARTREE_EV: f64 = 27.211_386_245_988;
/// Bohr radius in nm.
pub const BOHR_NM: f64 = 0.052_917_721_090_3;
/// Speed of light in atomic units.
pub const SPEED_OF_LIGHT_AU: f64 = 137.035_999_084;
/// Atomic unit of time in fs.
pub const AU_TIME_FS: f64 = 0.024_188_843_265_857;
/// Intensity corresponding to a unit peak field, W/cm².
pub const ATOMIC_INTENSITY_WCM2: f64 = 3.509e16;

/// Angular frequency (a.u.) of light with wavelength `nm`.
pub fn angular_frequency(wavelength_nm: f64) -> f64 {
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_AU * BOHR_NM / wavelength_nm
}

/// Peak electric field (a.u.) of a linearly polarised pulse of intensity `wcm2`.
pub fn peak_field(intensity_wcm2: f64) -> f64 {
    (intensity_wcm2 / ATOMIC_INTENSITY_WCM2).sqrt()
}

pub fn ev_to_hartree(ev: f64) -> f64 {
    ev / HARTREE_EV
}

pub fn hartree_to_ev(h: f64) -> f64 {
    h * HARTREE_EV
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_at_390nm() {
        assert!((angular_frequency(390.0) - 45.5636 / 390.0).abs() < 1e-5);
        assert!((angular_frequency(390.0) - 0.11683).abs() < 5e-6);
    }

    #[test]
    fn field_at_1e14() {
        assert!((peak_field(1e14) - 0.05338).abs() < 5e-6);
    }
}
