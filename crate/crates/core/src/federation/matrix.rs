//! Knowledge-transfer matrix: who distills from whom in a round.

use serde::{Deserialize, Serialize};

/// `entries[p][q] == 1` means client `p` learns from client `q`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeMatrix {
    entries: Vec<Vec<u8>>,
    round: usize,
}

impl KnowledgeMatrix {
    /// Asymmetric rule: `p` learns from `q` iff `p != q` and `ACC_p <= ACC_q`.
    pub fn from_accuracies(accuracies: &[f64], round: usize) -> Self {
        let entries = accuracies
            .iter()
            .enumerate()
            .map(|(p, &acc_p)| {
                accuracies
                    .iter()
                    .enumerate()
                    .map(|(q, &acc_q)| u8::from(p != q && acc_p <= acc_q))
                    .collect()
            })
            .collect();
        Self { entries, round }
    }

    /// Every client learns from every other client.
    pub fn symmetric(clients: usize, round: usize) -> Self {
        let entries = (0..clients)
            .map(|p| (0..clients).map(|q| u8::from(p != q)).collect())
            .collect();
        Self { entries, round }
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    /// Round in which the matrix was built.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn get(&self, p: usize, q: usize) -> u8 {
        self.entries[p][q]
    }

    pub fn row(&self, p: usize) -> &[u8] {
        &self.entries[p]
    }

    pub fn entries(&self) -> &[Vec<u8>] {
        &self.entries
    }

    pub fn ones(&self) -> usize {
        self.entries.iter().flatten().map(|&v| usize::from(v)).sum()
    }

    /// Fraction of off-diagonal entries that are one.
    pub fn density(&self) -> f64 {
        let k = self.size();
        if k < 2 {
            0.0
        } else {
            self.ones() as f64 / (k * (k - 1)) as f64
        }
    }

    /// Sources client `p` learns from, in index order.
    pub fn sources(&self, p: usize) -> Vec<usize> {
        self.entries[p]
            .iter()
            .enumerate()
            .filter(|&(_, &v)| v == 1)
            .map(|(q, _)| q)
            .collect()
    }
}

/// Builds the asymmetric transfer matrix from held-out accuracies.
pub fn build_transfer_matrix(accuracies: &[f64]) -> KnowledgeMatrix {
    KnowledgeMatrix::from_accuracies(accuracies, 0)
}
