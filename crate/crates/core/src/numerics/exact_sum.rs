/// Exactly accumulated sum of `f64` values, rounded once on read.
///
/// Holds a nonoverlapping expansion of partial sums (Shewchuk's algorithm), so
/// the result is independent of insertion order and of how a total is split
/// into terms. `add_product` folds in `a * b` without rounding the product.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        debug_assert!(x.is_finite(), "exact sum of a non-finite value");
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let err = a.mul_add(b, -p);
        self.add(p);
        if err != 0.0 {
            self.add(err);
        }
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    /// The exact sum correctly rounded to the nearest `f64`.
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let Some(&last) = p.last() else { return 0.0 };
        let mut n = p.len() - 1;
        let mut hi = last;
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            let y = p[n - 1];
            n -= 1;
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Round-half-even correction when the dropped tail points the same way.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

impl Extend<f64> for ExactSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cancels_catastrophically_large_terms() {
        let mut s = ExactSum::new();
        s.extend([1e100, 1.0, -1e100, 1e-100]);
        assert_eq!(s.value(), 1.0 + 1e-100);
        let mut s = ExactSum::new();
        s.extend([0.1; 10]);
        assert_eq!(s.value(), 1.0);
    }

    #[test]
    fn product_is_not_rounded_early() {
        let a = 1.0 + f64::EPSILON;
        let mut s = ExactSum::new();
        s.add_product(a, a);
        s.add(-1.0);
        s.add(-2.0 * f64::EPSILON);
        assert_eq!(s.value(), f64::EPSILON * f64::EPSILON);
    }

    proptest! {
        #[test]
        fn weighting_equals_repetition(vals in prop::collection::vec(-1e3f64..1e3, 1..20), k in 1u32..9) {
            let mut weighted = ExactSum::new();
            let mut repeated = ExactSum::new();
            for &v in &vals {
                weighted.add_product(k as f64, v);
            }
            for _ in 0..k {
                for &v in vals.iter().rev() {
                    repeated.add(v);
                }
            }
            prop_assert_eq!(weighted.value().to_bits(), repeated.value().to_bits());
        }
    }
}
