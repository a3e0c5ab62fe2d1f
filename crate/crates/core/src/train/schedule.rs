use crate::error::{Error, Result};

/// Cosine-annealed learning rate for epoch `e` of `epochs`:
/// `lr_final + ½(lr_initial − lr_final)(1 + cos(πe/E))`.
///
/// Evaluated as the convex combination `w·lr_initial + (1 − w)·lr_final`
/// so both endpoints are reproduced exactly.
pub fn lr_at_epoch(e: usize, epochs: usize, lr_initial: f64, lr_final: f64) -> Result<f64> {
    if e > epochs {
        return Err(Error::Contract(format!("epoch {e} outside schedule [0, {epochs}]")));
    }
    if epochs == 0 {
        return Ok(lr_initial);
    }
    let w = 0.5 * (1.0 + (std::f64::consts::PI * e as f64 / epochs as f64).cos());
    Ok(w * lr_initial + (1.0 - w) * lr_final)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_midpoint_and_monotonicity() {
        assert_eq!(lr_at_epoch(0, 300, 1e-4, 1e-5).unwrap(), 1e-4);
        assert_eq!(lr_at_epoch(300, 300, 1e-4, 1e-5).unwrap(), 1e-5);
        assert!((lr_at_epoch(150, 300, 1e-4, 1e-5).unwrap() - 5.5e-5).abs() < 1e-12);
        let lrs: Vec<_> = (0..=300).map(|e| lr_at_epoch(e, 300, 1e-4, 1e-5).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(lr_at_epoch(301, 300, 1e-4, 1e-5).is_err());
    }
}
