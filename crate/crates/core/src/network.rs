//! Random graph and synaptic signs.
//!
//! Vertex `j` sends input to vertex `i` iff `V_{ji} = 1`; every edge
//! indicator (self-loops included) is an independent Bernoulli(q) draw, so
//! the graph is directed. Each source carries a sign `U_j = ±1` with
//! `P(U_j = 1) = p`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::check_probability;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Dense bit-packed `N × N` indicator matrix, row `j` = source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        let words_per_row = n.div_ceil(64);
        Adjacency {
            n,
            words_per_row,
            bits: vec![0; n * words_per_row],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, source: usize, target: usize) -> bool {
        let w = self.bits[source * self.words_per_row + target / 64];
        (w >> (target % 64)) & 1 == 1
    }

    /// `V_{source,target}` as `0.0` or `1.0`.
    #[inline]
    pub fn indicator(&self, source: usize, target: usize) -> f64 {
        if self.get(source, target) {
            1.0
        } else {
            0.0
        }
    }

    pub fn set(&mut self, source: usize, target: usize, value: bool) {
        let idx = source * self.words_per_row + target / 64;
        let mask = 1u64 << (target % 64);
        if value {
            self.bits[idx] |= mask;
        } else {
            self.bits[idx] &= !mask;
        }
    }

    /// Targets `i` with `V_{source,i} = 1`, in increasing order.
    pub fn targets(&self, source: usize) -> Targets<'_> {
        let start = source * self.words_per_row;
        Targets {
            words: &self.bits[start..start + self.words_per_row],
            word: 0,
            current: self.bits.get(start).copied().unwrap_or(0),
        }
    }

    /// Sources `j` with `V_{j,target} = 1` (column view).
    pub fn sources(&self, target: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.get(j, target)).collect()
    }

    pub fn out_degree(&self, source: usize) -> usize {
        let start = source * self.words_per_row;
        self.bits[start..start + self.words_per_row]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    pub fn in_degree(&self, target: usize) -> usize {
        (0..self.n).filter(|&j| self.get(j, target)).count()
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn row_string(&self, source: usize) -> String {
        (0..self.n)
            .map(|i| if self.get(source, i) { '1' } else { '0' })
            .collect()
    }
}

pub struct Targets<'a> {
    words: &'a [u64],
    word: usize,
    current: u64,
}

impl Iterator for Targets<'_> {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        loop {
            if self.current != 0 {
                let bit = self.current.trailing_zeros() as usize;
                self.current &= self.current - 1;
                return Some(self.word * 64 + bit);
            }
            self.word += 1;
            if self.word >= self.words.len() {
                return None;
            }
            self.current = self.words[self.word];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    ErdosRenyi,
    /// Vertices 0 and 1 receive input from complementary halves.
    Complementary,
}

/// Graph and signs of one network realisation. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfiguration {
    kind: NetworkKind,
    p: f64,
    q: f64,
    seed: u64,
    adjacency: Adjacency,
    signs: Vec<i8>,
}

impl NetworkConfiguration {
    /// Builds a configuration from explicit matrices.
    pub fn from_parts(
        kind: NetworkKind,
        p: f64,
        q: f64,
        seed: u64,
        adjacency: Adjacency,
        signs: Vec<i8>,
    ) -> Result<Self> {
        check_probability("p", p)?;
        check_probability("q", q)?;
        if adjacency.n() == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        if signs.len() != adjacency.n() {
            return Err(Error::param(
                "signs",
                format!("expected {} signs, got {}", adjacency.n(), signs.len()),
            ));
        }
        if signs.iter().any(|&u| u != 1 && u != -1) {
            return Err(Error::param("signs", "every sign must be +1 or -1"));
        }
        Ok(NetworkConfiguration {
            kind,
            p,
            q,
            seed,
            adjacency,
            signs,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    #[inline]
    pub fn sign(&self, j: usize) -> f64 {
        f64::from(self.signs[j])
    }

    /// `Σ_j U_j`; nonzero only when exact balance was impossible.
    pub fn sign_sum(&self) -> i64 {
        self.signs.iter().map(|&u| i64::from(u)).sum()
    }

    pub fn to_file(&self, include_matrices: bool) -> NetworkFile {
        NetworkFile {
            kind: self.kind,
            n: self.n(),
            p: self.p,
            q: self.q,
            seed: self.seed,
            adjacency: include_matrices
                .then(|| (0..self.n()).map(|j| self.adjacency.row_string(j)).collect()),
            signs: include_matrices.then(|| self.signs.clone()),
        }
    }
}

/// Serialised network: parameters plus optional explicit matrices.
///
/// Without matrices the network is regenerated from `(kind, n, p, q, seed)`.
/// Adjacency rows are strings of `0`/`1`, row `j` listing the targets of `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub kind: NetworkKind,
    pub n: usize,
    pub p: f64,
    pub q: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signs: Option<Vec<i8>>,
}

impl NetworkFile {
    pub fn into_network(self) -> Result<NetworkConfiguration> {
        match (self.adjacency, self.signs) {
            (Some(rows), Some(signs)) => {
                if rows.len() != self.n {
                    return Err(Error::param("adjacency", "row count differs from n"));
                }
                let mut adj = Adjacency::empty(self.n);
                for (j, row) in rows.iter().enumerate() {
                    if row.len() != self.n {
                        return Err(Error::param("adjacency", format!("row {j} has wrong length")));
                    }
                    for (i, c) in row.chars().enumerate() {
                        match c {
                            '0' => {}
                            '1' => adj.set(j, i, true),
                            _ => return Err(Error::param("adjacency", format!("bad entry {c:?}"))),
                        }
                    }
                }
                NetworkConfiguration::from_parts(self.kind, self.p, self.q, self.seed, adj, signs)
            }
            (None, None) => match self.kind {
                NetworkKind::ErdosRenyi => sample_network(self.n, self.p, self.q, self.seed),
                NetworkKind::Complementary => build_complementary_network(self.n, self.seed),
            },
            _ => Err(Error::param("network", "adjacency and signs must be given together")),
        }
    }
}

/// Samples the q-Erdős–Rényi graph with i.i.d. signs.
pub fn sample_network(n: usize, p: f64, q: f64, seed: u64) -> Result<NetworkConfiguration> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    check_probability("p", p)?;
    check_probability("q", q)?;
    let mut adj = Adjacency::empty(n);
    let mut edges = rng::stream(seed, Stream::Edges);
    let words_per_row = adj.words_per_row;
    for row in adj.bits.chunks_exact_mut(words_per_row) {
        for (w, word) in row.iter_mut().enumerate() {
            let width = (n - 64 * w).min(64);
            let mask = if width == 64 { !0 } else { (1u64 << width) - 1 };
            *word = bernoulli_word(&mut edges, q) & mask;
        }
    }
    let mut sign_rng = rng::stream(seed, Stream::Signs);
    let signs = (0..n)
        .map(|_| if sign_rng.random::<f64>() < p { 1 } else { -1 })
        .collect();
    NetworkConfiguration::from_parts(NetworkKind::ErdosRenyi, p, q, seed, adj, signs)
}

/// 64 independent Bernoulli(q) bits, `q` resolved to 53 binary digits.
///
/// Every lane compares a uniform with `q` digit by digit, most significant
/// first, drawing one digit per lane from each random word. A lane settles
/// at the first digit where the two differ, so about two words are needed.
fn bernoulli_word<R: Rng>(rng: &mut R, q: f64) -> u64 {
    if q >= 1.0 {
        return !0;
    }
    let digits = (q * (1u64 << 53) as f64) as u64;
    let (mut ones, mut open) = (0u64, !0u64);
    for k in (0..53).rev() {
        if open == 0 {
            break;
        }
        let r = rng.next_u64();
        if (digits >> k) & 1 == 1 {
            ones |= open & !r;
            open &= r;
        } else {
            open &= !r;
        }
    }
    ones
}

/// Network where vertices 0 and 1 receive input from disjoint halves.
///
/// Columns 0 and 1 each have exactly `n/2` ones on complementary supports.
/// Signs are balanced inside each half, so `W^{N,0} = W^{N,1}`; when `n/2`
/// is odd each half is off by one in the same direction and `Σ_j U_j = ±2`.
/// All other columns are Bernoulli(1/2) and `p = q = 1/2`.
pub fn build_complementary_network(n: usize, seed: u64) -> Result<NetworkConfiguration> {
    if n == 0 || n % 2 == 1 {
        return Err(Error::param("n", format!("{n} must be a positive even integer")));
    }
    let half = n / 2;
    let mut layout = rng::stream(seed, Stream::Layout);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut layout);
    let (first, second) = order.split_at(half);

    let mut adj = Adjacency::empty(n);
    let mut edges = rng::stream(seed, Stream::Edges);
    for j in 0..n {
        for i in 2..n {
            if edges.random::<f64>() < 0.5 {
                adj.set(j, i, true);
            }
        }
    }
    for &j in first {
        adj.set(j, 0, true);
    }
    for &j in second {
        adj.set(j, 1, true);
    }

    // Same surplus sign in both halves keeps the two inputs equal.
    let surplus: i8 = if layout.random::<bool>() { 1 } else { -1 };
    let mut signs = vec![0i8; n];
    for group in [first, second] {
        let mut group_signs: Vec<i8> = (0..group.len())
            .map(|k| {
                if k < group.len() / 2 {
                    1
                } else if k < 2 * (group.len() / 2) {
                    -1
                } else {
                    surplus
                }
            })
            .collect();
        group_signs.shuffle(&mut layout);
        for (&j, u) in group.iter().zip(group_signs) {
            signs[j] = u;
        }
    }
    NetworkConfiguration::from_parts(NetworkKind::Complementary, 0.5, 0.5, seed, adj, signs)
}

/// Weight statistics of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStatistics {
    /// `(1/N) Σ_i V_{ji}` per source `j`.
    pub row_mean_v: Vec<f64>,
    /// `(1/N) Σ_j U_j V_{ji}` per target `i`.
    pub mean_uv_per_target: Vec<f64>,
    /// `W^N = N^{-1/2} Σ_j (U_j − (2p−1))`.
    pub w_n: f64,
    /// `W̃^{N,i} = N^{-1/2} Σ_j U_j (V_{ji} − q)`.
    pub w_tilde: Vec<f64>,
    /// `W^{N,i} = N^{-1/2} Σ_j (U_j V_{ji} − (2p−1) q)`.
    pub w_n_i: Vec<f64>,
    /// `(1/N) Σ_i (W^{N,i})²`.
    pub mean_square_w: f64,
}

impl WeightStatistics {
    /// `max_i |W^{N,i} − (q W^N + W̃^{N,i})|`.
    pub fn decomposition_residual(&self, q: f64) -> f64 {
        self.w_n_i
            .iter()
            .zip(&self.w_tilde)
            .map(|(w, wt)| (w - (q * self.w_n + wt)).abs())
            .fold(0.0, f64::max)
    }
}

pub fn compute_weight_statistics(net: &NetworkConfiguration) -> WeightStatistics {
    let n = net.n();
    let nf = n as f64;
    let sqrt_n = nf.sqrt();
    let (p, q) = (net.p(), net.q());
    let drift = 2.0 * p - 1.0;
    let adj = net.adjacency();

    let row_mean_v = (0..n).map(|j| adj.out_degree(j) as f64 / nf).collect();
    let w_n = net.signs().iter().map(|&u| f64::from(u) - drift).sum::<f64>() / sqrt_n;

    // Signed in-degrees are exact integers; scale once at the end.
    let mut signed_in = vec![0i64; n];
    for j in 0..n {
        let u = i64::from(net.signs()[j]);
        for i in adj.targets(j) {
            signed_in[i] += u;
        }
    }
    let sign_sum = net.sign_sum() as f64;
    let uv: Vec<f64> = signed_in.iter().map(|&s| s as f64).collect();
    let mut w_tilde: Vec<f64> = uv.iter().map(|s| s - q * sign_sum).collect();
    let mut w_n_i: Vec<f64> = uv.iter().map(|s| s - nf * drift * q).collect();
    let mean_uv_per_target = uv.iter().map(|s| s / nf).collect();
    for x in w_tilde.iter_mut().chain(w_n_i.iter_mut()) {
        *x /= sqrt_n;
    }
    let mean_square_w = w_n_i.iter().map(|w| w * w).sum::<f64>() / nf;
    WeightStatistics {
        row_mean_v,
        mean_uv_per_target,
        w_n,
        w_tilde,
        w_n_i,
        mean_square_w,
    }
}
