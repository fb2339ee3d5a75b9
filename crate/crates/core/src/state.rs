use serde::{Deserialize, Serialize};

/// Hybrid state `z = (x1, x2, tau)` stored contiguously as `[x1.., x2.., tau]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "StateRepr", try_from = "StateRepr")]
pub struct HybridState {
    data: Vec<f64>,
}

impl HybridState {
    /// # Panics
    ///
    /// If `x1` and `x2` have different lengths.
    pub fn new(x1: &[f64], x2: &[f64], tau: f64) -> Self {
        assert_eq!(x1.len(), x2.len(), "x1 and x2 must have the same dimension");
        let mut data = Vec::with_capacity(2 * x1.len() + 1);
        data.extend_from_slice(x1);
        data.extend_from_slice(x2);
        data.push(tau);
        Self { data }
    }

    /// # Panics
    ///
    /// If `data.len()` is not odd.
    pub fn from_flat(data: Vec<f64>) -> Self {
        assert!(
            data.len() % 2 == 1,
            "flat hybrid state must have length 2n+1"
        );
        Self { data }
    }

    /// Position dimension `n`.
    pub fn dim(&self) -> usize {
        (self.data.len() - 1) / 2
    }

    pub fn x1(&self) -> &[f64] {
        &self.data[..self.dim()]
    }

    pub fn x2(&self) -> &[f64] {
        let n = self.dim();
        &self.data[n..2 * n]
    }

    pub fn tau(&self) -> f64 {
        self.data[self.data.len() - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        crate::norm(&self.data)
    }
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    x1: Vec<f64>,
    x2: Vec<f64>,
    tau: f64,
}

impl From<HybridState> for StateRepr {
    fn from(s: HybridState) -> Self {
        Self {
            x1: s.x1().to_vec(),
            x2: s.x2().to_vec(),
            tau: s.tau(),
        }
    }
}

impl TryFrom<StateRepr> for HybridState {
    type Error = String;

    fn try_from(r: StateRepr) -> Result<Self, Self::Error> {
        if r.x1.len() != r.x2.len() {
            return Err(format!(
                "x1 has {} entries but x2 has {}",
                r.x1.len(),
                r.x2.len()
            ));
        }
        Ok(HybridState::new(&r.x1, &r.x2, r.tau))
    }
}

/// Hybrid time `(t, j)`: flow time and jump count. Ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct HybridTime {
    pub t: f64,
    pub j: u64,
}

impl HybridTime {
    pub const ZERO: HybridTime = HybridTime { t: 0.0, j: 0 };

    pub fn new(t: f64, j: u64) -> Self {
        Self { t, j }
    }
}
