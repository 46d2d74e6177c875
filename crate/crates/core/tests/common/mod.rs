//! Naive reference implementations used as test oracles. Everything here
//! works directly from label vectors with quadratic loops and shares no code
//! with the engine.
#![allow(dead_code)]

use abcde_core::model::{Dataset, ItemRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Clone, Debug)]
pub struct Naive {
    pub ids: Vec<String>,
    pub weights: Vec<f64>,
    pub base: Vec<usize>,
    pub exp: Vec<usize>,
}

pub struct NaivePair {
    pub i: usize,
    pub j: usize,
    pub category: &'static str,
    pub u: f64,
    pub l: f64,
}

impl Naive {
    pub fn new(weights: Vec<f64>, base: Vec<usize>, exp: Vec<usize>) -> Self {
        let ids = (0..weights.len()).map(|k| format!("i{k:03}")).collect();
        Self {
            ids,
            weights,
            base,
            exp,
        }
    }

    /// Fixture F: a,b,c,d with weights 1..4, Base {a,b},{c,d}, Exp {a},{b,c,d}.
    pub fn fixture_f() -> Self {
        Self {
            ids: ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
            weights: vec![1.0, 2.0, 3.0, 4.0],
            base: vec![0, 0, 1, 1],
            exp: vec![0, 1, 1, 1],
        }
    }

    pub fn random(rng: &mut impl Rng, n: usize, base_k: usize, exp_k: usize) -> Self {
        let weights = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let base = (0..n).map(|_| rng.random_range(0..base_k)).collect();
        let exp = (0..n).map(|_| rng.random_range(0..exp_k)).collect();
        Self::new(weights, base, exp)
    }

    pub fn seeded(seed: u64, n: usize, base_k: usize, exp_k: usize) -> Self {
        Self::random(&mut ChaCha20Rng::seed_from_u64(seed), n, base_k, exp_k)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn records(&self) -> Vec<ItemRecord> {
        (0..self.len())
            .map(|k| {
                ItemRecord::new(
                    self.ids[k].clone(),
                    self.weights[k],
                    format!("B{}", self.base[k]),
                    format!("E{}", self.exp[k]),
                )
            })
            .collect()
    }

    pub fn dataset(&self) -> Dataset {
        Dataset::from_records(self.records()).unwrap()
    }

    pub fn index(&self, id: &str) -> usize {
        self.ids.iter().position(|x| x == id).unwrap()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn cluster(labels: &[usize], i: usize) -> Vec<usize> {
        (0..labels.len()).filter(|&j| labels[j] == labels[i]).collect()
    }

    pub fn base_of(&self, i: usize) -> Vec<usize> {
        Self::cluster(&self.base, i)
    }

    pub fn exp_of(&self, i: usize) -> Vec<usize> {
        Self::cluster(&self.exp, i)
    }

    fn w(&self, set: &[usize]) -> f64 {
        set.iter().map(|&j| self.weights[j]).sum()
    }

    /// (split, merge, jd) of item `i` straight from the set definitions.
    pub fn item(&self, i: usize) -> (f64, f64, f64) {
        let b = self.base_of(i);
        let e = self.exp_of(i);
        let b_minus_e: Vec<usize> = b.iter().copied().filter(|j| !e.contains(j)).collect();
        let e_minus_b: Vec<usize> = e.iter().copied().filter(|j| !b.contains(j)).collect();
        let mut union = b.clone();
        union.extend(e_minus_b.iter().copied());
        (
            self.w(&b_minus_e) / self.w(&b),
            self.w(&e_minus_b) / self.w(&e),
            (self.w(&b_minus_e) + self.w(&e_minus_b)) / self.w(&union),
        )
    }

    pub fn set(&self, members: &[usize]) -> (f64, f64, f64) {
        let total = self.w(members);
        let mut acc = (0.0, 0.0, 0.0);
        for &i in members {
            let (s, m, j) = self.item(i);
            acc.0 += self.weights[i] * s;
            acc.1 += self.weights[i] * m;
            acc.2 += self.weights[i] * j;
        }
        (acc.0 / total, acc.1 / total, acc.2 / total)
    }

    pub fn overall(&self) -> (f64, f64, f64) {
        self.set(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn affected(&self, i: usize) -> bool {
        self.base_of(i) != self.exp_of(i)
    }

    /// Every ordered pair `(i, j)` with `j ∈ Base(i) ∪ Exp(i)`, normalized `u`.
    pub fn pairs(&self) -> Vec<NaivePair> {
        let total = self.total();
        let mut out = Vec::new();
        for i in 0..self.len() {
            let b = self.base_of(i);
            let e = self.exp_of(i);
            let (wb, we) = (self.w(&b), self.w(&e));
            for j in 0..self.len() {
                let (in_b, in_e) = (b.contains(&j), e.contains(&j));
                let (wi, wj) = (self.weights[i], self.weights[j]);
                let (category, u, l) = match (in_b, in_e) {
                    (true, false) => ("split", wi / total * wj / wb, -1.0),
                    (false, true) => ("merge", wi / total * wj / we, 1.0),
                    (true, true) => (
                        "stable",
                        wi / total * (wb - we).abs() / (wb * we) * wj,
                        if wb - we < 0.0 { -1.0 } else { 1.0 },
                    ),
                    (false, false) => continue,
                };
                out.push(NaivePair {
                    i,
                    j,
                    category,
                    u,
                    l,
                });
            }
        }
        out
    }

    /// `ΔPrecision(T)` as the weighted average of per-item precision deltas,
    /// where precision is the weight fraction of an item's cluster that is
    /// equivalent to it.
    pub fn delta_precision(&self, eq: &dyn Fn(usize, usize) -> bool) -> f64 {
        let precision = |cluster: &[usize], i: usize| {
            cluster
                .iter()
                .filter(|&&j| eq(i, j))
                .map(|&j| self.weights[j])
                .sum::<f64>()
                / self.w(cluster)
        };
        (0..self.len())
            .map(|i| {
                self.weights[i] * (precision(&self.exp_of(i), i) - precision(&self.base_of(i), i))
            })
            .sum::<f64>()
            / self.total()
    }

    /// (good_split, bad_split, good_merge, bad_merge) by enumeration.
    pub fn rates(&self, eq: &dyn Fn(usize, usize) -> bool) -> (f64, f64, f64, f64) {
        let mut r = (0.0, 0.0, 0.0, 0.0);
        for p in self.pairs() {
            let e = eq(p.i, p.j);
            match (p.category, e) {
                ("split", false) => r.0 += p.u,
                ("split", true) => r.1 += p.u,
                ("merge", true) => r.2 += p.u,
                ("merge", false) => r.3 += p.u,
                _ => {}
            }
        }
        r
    }

    /// Oracle equivalence from a hidden "true" labelling.
    pub fn truth_oracle(truth: Vec<usize>) -> impl Fn(usize, usize) -> bool {
        move |i, j| i == j || truth[i] == truth[j]
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
