/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to
/// 0 at step `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl Schedule {
    pub fn new(peak: f64, warmup: usize, total: usize) -> Self {
        Schedule {
            peak,
            warmup: warmup.min(total),
            total,
        }
    }

    /// Learning rate for the 0-based step `s` of the phase.
    pub fn lr(&self, s: usize) -> f64 {
        if s < self.warmup {
            return self.peak * s as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup);
        if span == 0 {
            return self.peak;
        }
        let progress = ((s - self.warmup) as f64 / span as f64).min(1.0);
        self.peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_cosine() {
        let s = Schedule::new(1e-3, 10, 110);
        assert_eq!(s.lr(0), 0.0);
        assert!((s.lr(5) - 5e-4).abs() < 1e-18);
        assert_eq!(s.lr(10), 1e-3);
        assert!((s.lr(60) - 5e-4).abs() < 1e-15);
        assert!(s.lr(109) > 0.0 && s.lr(109) < 1e-6);
        assert!(s.lr(110).abs() < 1e-20);
    }

    #[test]
    fn no_warmup_starts_at_peak() {
        assert_eq!(Schedule::new(2.0, 0, 10).lr(0), 2.0);
    }

    #[test]
    fn warmup_only_phase() {
        let s = Schedule::new(1.0, 100, 100);
        assert_eq!(s.lr(0), 0.0);
        assert_eq!(s.lr(99), 0.99);
    }
}
