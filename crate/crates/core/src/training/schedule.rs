use super::config::TrainConfig;
use crate::error::{Error, Result};

/// Learning rate for `epoch`: constant `lr0`, then linear decay to 0 at `epochs`.
///
/// `epoch == epochs` is accepted as the schedule's endpoint.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.epochs {
        return Err(Error::EpochOutOfRange {
            epoch,
            epochs: cfg.epochs,
        });
    }
    let total = cfg.epochs as f64;
    let start = total * cfg.decay_start_fraction;
    let e = epoch as f64;
    if e < start {
        return Ok(cfg.lr0);
    }
    let span = total - start;
    if span <= 0.0 {
        return Ok(0.0);
    }
    Ok(cfg.lr0 * (total - e) / span)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_schedule(99, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_schedule(100, &cfg).unwrap(), 1e-4);
        assert!((lr_schedule(150, &cfg).unwrap() - 5e-5).abs() < 1e-18);
        assert_eq!(lr_schedule(200, &cfg).unwrap(), 0.0);
        assert!(lr_schedule(201, &cfg).is_err());
    }

    #[test]
    fn non_increasing() {
        for frac in [0.0, 0.3, 0.5, 1.0] {
            let cfg = TrainConfig {
                decay_start_fraction: frac,
                epochs: 37,
                ..Default::default()
            };
            let lrs: Vec<f64> = (0..=37).map(|e| lr_schedule(e, &cfg).unwrap()).collect();
            assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(*lrs.last().unwrap(), 0.0);
        }
    }
}
