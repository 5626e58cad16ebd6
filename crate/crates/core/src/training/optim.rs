use std::collections::BTreeMap;

use autodiff::Array;

use crate::networks::ParamSet;

const ADAM_EPSILON: f64 = 1e-8;

/// Adam moments for a group of parameter sets, keyed `<set>/<param>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub t: u64,
    pub m: BTreeMap<String, Array>,
    pub v: BTreeMap<String, Array>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Self { learning_rate, beta1, beta2, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update of every parameter in `sets` that has a gradient in
    /// `grads`. Parameters without a gradient are left alone.
    pub fn step(&mut self, sets: &mut [(&str, &mut ParamSet)], grads: &BTreeMap<String, Array>) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.learning_rate;
        for (set_name, set) in sets.iter_mut() {
            for (name, p) in set.iter_mut() {
                let key = format!("{set_name}/{name}");
                let Some(g) = grads.get(&key) else { continue };
                let m = self.m.entry(key.clone()).or_insert_with(|| Array::zeros(p.raw_dim()));
                let v = self.v.entry(key).or_insert_with(|| Array::zeros(p.raw_dim()));
                ndarray::Zip::from(&mut **p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut set = ParamSet::new();
        set.insert("w", Array::from_elem(IxDyn(&[2]), 1.0));
        let mut grads = BTreeMap::new();
        grads.insert("s/w".to_string(), Array::from_shape_vec(IxDyn(&[2]), vec![0.5, -3.0]).unwrap());
        let mut opt = Adam::new(0.1, 0.5, 0.9);
        opt.step(&mut [("s", &mut set)], &grads);
        let w = set.get("w").unwrap();
        assert!((w[[0]] - 0.9).abs() < 1e-6);
        assert!((w[[1]] - 1.1).abs() < 1e-6);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut set = ParamSet::new();
        set.insert("x", Array::from_elem(IxDyn(&[1]), 5.0));
        let mut opt = Adam::new(0.05, 0.9, 0.999);
        for _ in 0..2000 {
            let x = set.get("x").unwrap()[[0]];
            let mut grads = BTreeMap::new();
            grads.insert("q/x".to_string(), Array::from_elem(IxDyn(&[1]), 2.0 * (x - 2.0)));
            opt.step(&mut [("q", &mut set)], &grads);
        }
        assert!((set.get("x").unwrap()[[0]] - 2.0).abs() < 1e-2);
    }
}
