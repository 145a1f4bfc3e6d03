//! Neumaier compensated summation. Used wherever a series runs past ~1e6
//! terms, so accumulated rounding stays near one ulp of the exact sum.

#[derive(Debug, Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum_compensated(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Compensated::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancellation() {
        let mut acc = Compensated::new();
        acc.add(1.0);
        acc.add(1e100);
        acc.add(1.0);
        acc.add(-1e100);
        assert_eq!(acc.value(), 2.0);
    }

    #[test]
    fn harmonic_matches_f64_sum_closely() {
        let naive: f64 = (1..=1_000_000).map(|k| 1.0 / k as f64).sum();
        let comp = sum_compensated((1..=1_000_000).map(|k| 1.0 / k as f64));
        assert!((naive - comp).abs() < 1e-9);
        // reference from exact rational arithmetic
        assert!((comp - 14.392_726_722_865_724).abs() < 1e-12);
    }
}
