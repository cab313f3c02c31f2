//! Token vocabulary with fixed embeddings and ε-similarity structure.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SimRng};

const NORM_TOL: f64 = 1e-9;
const MAX_PLACEMENT_TRIES: usize = 20_000;

/// Dense token id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub usize);

impl Token {
    pub fn id(self) -> usize {
        self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Immutable embedding table plus the ε used for similarity edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    embeddings: Array2<f64>,
    epsilon: f64,
    unit_normalized: bool,
}

impl EmbeddingSpace {
    /// Wraps an explicit embedding matrix (row `i` is token `i`).
    pub fn from_rows(embeddings: Array2<f64>, epsilon: f64) -> Result<Self> {
        let (vocab, dim) = embeddings.dim();
        if dim < 2 {
            return Err(Error::Construction(format!("dim must be >= 2, got {dim}")));
        }
        if vocab < 4 {
            return Err(Error::Construction(format!(
                "vocab_size must be >= 4, got {vocab}"
            )));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::Construction(format!(
                "epsilon must be finite and non-negative, got {epsilon}"
            )));
        }
        if embeddings.iter().any(|x| !x.is_finite()) {
            return Err(Error::Construction(
                "embeddings contain non-finite entries".into(),
            ));
        }
        let unit_normalized = embeddings
            .rows()
            .into_iter()
            .all(|row| (row.dot(&row).sqrt() - 1.0).abs() <= NORM_TOL);
        Ok(Self {
            embeddings,
            epsilon,
            unit_normalized,
        })
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_unit_normalized(&self) -> bool {
        self.unit_normalized
    }

    /// Cosine threshold equivalent to ε on the unit sphere: 1 − ε²/2.
    pub fn tau(&self) -> f64 {
        1.0 - self.epsilon * self.epsilon / 2.0
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn embedding(&self, t: Token) -> ArrayView1<'_, f64> {
        self.embeddings.row(t.0)
    }

    pub fn contains(&self, t: Token) -> bool {
        t.0 < self.vocab_size()
    }

    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.vocab_size()).map(Token)
    }

    pub fn distance(&self, a: Token, b: Token) -> f64 {
        let diff = &self.embedding(a) - &self.embedding(b);
        diff.dot(&diff).sqrt()
    }

    pub fn cosine(&self, a: Token, b: Token) -> Result<f64> {
        cosine_of(self.embedding(a), self.embedding(b))
            .ok_or_else(|| Error::Domain(format!("zero-norm embedding in cosine({a}, {b})")))
    }

    pub fn are_neighbors(&self, a: Token, b: Token) -> bool {
        a != b && self.distance(a, b) <= self.epsilon
    }

    /// All other tokens within distance ε of `t`.
    pub fn epsilon_neighborhood(&self, t: Token) -> BTreeSet<Token> {
        self.tokens()
            .filter(|&u| self.are_neighbors(t, u))
            .collect()
    }

    /// Tokens reachable from `t` by at most `depth` similarity hops, `t` included.
    pub fn closure(&self, t: Token, depth: usize) -> BTreeSet<Token> {
        let mut seen = BTreeSet::from([t]);
        let mut frontier = VecDeque::from([(t, 0usize)]);
        while let Some((u, d)) = frontier.pop_front() {
            if d == depth {
                continue;
            }
            for w in self.epsilon_neighborhood(u) {
                if seen.insert(w) {
                    frontier.push_back((w, d + 1));
                }
            }
        }
        seen
    }

    /// Number of ordered pairs (t, t′), t ≠ t′, within distance ε.
    pub fn similarity_edge_count(&self) -> usize {
        let n = self.vocab_size();
        let mut count = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.are_neighbors(Token(i), Token(j)) {
                    count += 2;
                }
            }
        }
        count
    }

    /// Connected components of the similarity graph, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<Token>> {
        let n = self.vocab_size();
        let mut label = vec![usize::MAX; n];
        let mut out = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let comp_id = out.len();
            let mut members = Vec::new();
            let mut stack = vec![start];
            label[start] = comp_id;
            while let Some(u) = stack.pop() {
                members.push(Token(u));
                for (w, l) in label.iter_mut().enumerate() {
                    if *l == usize::MAX && self.are_neighbors(Token(u), Token(w)) {
                        *l = comp_id;
                        stack.push(w);
                    }
                }
            }
            members.sort();
            out.push(members);
        }
        out
    }

    /// New space with `rows` appended as tokens `vocab_size..`.
    pub fn extend(&self, rows: &Array2<f64>) -> Result<Self> {
        if rows.ncols() != self.dim() {
            return Err(Error::Contract(format!(
                "extension rows have dim {}, space has {}",
                rows.ncols(),
                self.dim()
            )));
        }
        let stacked = ndarray::concatenate(Axis(0), &[self.embeddings.view(), rows.view()])
            .expect("column counts checked above");
        Self::from_rows(stacked, self.epsilon)
    }

    /// Flat text form: `vocab dim epsilon normalized` header, then one row per token.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {:.16e} {}\n",
            self.vocab_size(),
            self.dim(),
            self.epsilon,
            self.unit_normalized
        );
        write_matrix_rows(&mut out, &self.embeddings);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                1,
                "header must be `vocab dim epsilon normalized`",
            ));
        }
        let vocab: usize = parse_field(fields[0], 1)?;
        let dim: usize = parse_field(fields[1], 1)?;
        let epsilon: f64 = parse_field(fields[2], 1)?;
        let normalized: bool = parse_field(fields[3], 1)?;
        let rows = read_matrix_rows(&mut lines, vocab, dim)?;
        let space = Self::from_rows(rows, epsilon)?;
        if space.unit_normalized != normalized {
            return Err(Error::parse(1, "normalized flag disagrees with row norms"));
        }
        Ok(space)
    }
}

pub(crate) fn cosine_of(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

pub(crate) fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("cannot parse `{s}`")))
}

pub(crate) fn write_matrix_rows(out: &mut String, m: &Array2<f64>) {
    use std::fmt::Write;
    for row in m.rows() {
        let mut first = true;
        for x in row {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{x:.16e}").expect("writing to String cannot fail");
        }
        out.push('\n');
    }
}

pub(crate) fn read_matrix_rows<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    nrows: usize,
    ncols: usize,
) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(nrows * ncols);
    for r in 0..nrows {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| Error::parse(0, format!("expected {nrows} rows, found {r}")))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(parse_field::<f64>(tok, idx + 1)?);
        }
        if data.len() - before != ncols {
            return Err(Error::parse(
                idx + 1,
                format!("expected {ncols} values, found {}", data.len() - before),
            ));
        }
    }
    Ok(Array2::from_shape_vec((nrows, ncols), data).expect("length checked row by row"))
}

/// Layout of the clustered vocabulary; unclustered tokens are placed isolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub vocab_size: usize,
    pub cluster_sizes: Vec<usize>,
    /// Max distance of a member from its (virtual) cluster center.
    pub intra_radius: f64,
    /// Min distance between any two cluster centers.
    pub center_min_separation: f64,
}

impl ClusterSpec {
    pub fn uniform(
        vocab_size: usize,
        num_clusters: usize,
        cluster_size: usize,
        intra_radius: f64,
        center_min_separation: f64,
    ) -> Self {
        Self {
            vocab_size,
            cluster_sizes: vec![cluster_size; num_clusters],
            intra_radius,
            center_min_separation,
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn clustered_tokens(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }
}

/// Builds a unit-normalized space: clusters take the lowest ids in order, every
/// remaining token is isolated (nearest neighbour farther than ε).
pub fn generate_clustered_space(
    spec: &ClusterSpec,
    dim: usize,
    epsilon: f64,
    seed: u64,
) -> Result<EmbeddingSpace> {
    validate_spec(spec, dim, epsilon)?;
    let mut rng = rng_from_seed(seed);
    let mut rows: Vec<Array1<f64>> = Vec::with_capacity(spec.vocab_size);
    let mut centers: Vec<Array1<f64>> = Vec::with_capacity(spec.num_clusters());

    for &size in &spec.cluster_sizes {
        let center = place(&mut rng, dim, "center_min_separation", |c| {
            centers
                .iter()
                .all(|o| dist(c, o) > spec.center_min_separation)
                && rows
                    .iter()
                    .all(|o| dist(c, o) > epsilon + spec.intra_radius)
        })?;
        // Members sit at a random chord distance in [r/2, r] from the center.
        for _ in 0..size {
            let rho = if size == 1 {
                0.0
            } else {
                rng.random_range(0.5..=1.0) * spec.intra_radius
            };
            rows.push(offset_on_sphere(&mut rng, &center, rho));
        }
        centers.push(center);
    }

    while rows.len() < spec.vocab_size {
        let v = place(
            &mut rng,
            dim,
            "isolation (nearest neighbour > epsilon)",
            |v| {
                rows.iter().all(|o| dist(v, o) > epsilon)
                    && centers
                        .iter()
                        .all(|c| dist(v, c) > epsilon + spec.intra_radius)
            },
        )?;
        rows.push(v);
    }

    let mut m = Array2::zeros((spec.vocab_size, dim));
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).assign(r);
    }
    EmbeddingSpace::from_rows(m, epsilon)
}

fn validate_spec(spec: &ClusterSpec, dim: usize, epsilon: f64) -> Result<()> {
    let fail = |msg: String| Err(Error::Construction(msg));
    if dim < 2 {
        return fail(format!("dim must be >= 2, got {dim}"));
    }
    if spec.vocab_size < 4 {
        return fail(format!("vocab_size must be >= 4, got {}", spec.vocab_size));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return fail(format!(
            "epsilon must be finite and non-negative, got {epsilon}"
        ));
    }
    if spec.clustered_tokens() > spec.vocab_size {
        return fail(format!(
            "cluster sizes sum to {} > vocab_size {}",
            spec.clustered_tokens(),
            spec.vocab_size
        ));
    }
    if spec.cluster_sizes.contains(&0) {
        return fail("cluster sizes must be >= 1".into());
    }
    let multi = spec.cluster_sizes.iter().any(|&s| s > 1);
    if multi && !(spec.intra_radius > 0.0 && spec.intra_radius < epsilon / 2.0) {
        return fail(format!(
            "intra_radius must lie in (0, epsilon/2) = (0, {}), got {}",
            epsilon / 2.0,
            spec.intra_radius
        ));
    }
    if spec.num_clusters() > 1 && spec.center_min_separation <= 2.0 * spec.intra_radius + epsilon {
        return fail(format!(
            "center_min_separation must exceed 2*intra_radius + epsilon = {}, got {}",
            2.0 * spec.intra_radius + epsilon,
            spec.center_min_separation
        ));
    }
    Ok(())
}

fn dist(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = a - b;
    d.dot(&d).sqrt()
}

pub(crate) fn random_unit(rng: &mut SimRng, dim: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = v.dot(&v).sqrt();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Unit vector orthogonal to every row of `basis` (rows assumed orthonormal).
pub(crate) fn random_unit_orthogonal(
    rng: &mut SimRng,
    dim: usize,
    basis: &[Array1<f64>],
) -> Array1<f64> {
    loop {
        let mut v = random_unit(rng, dim);
        for b in basis {
            let p = v.dot(b);
            v.scaled_add(-p, b);
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Point on the unit sphere at chord distance `rho` from unit vector `c`.
fn offset_on_sphere(rng: &mut SimRng, c: &Array1<f64>, rho: f64) -> Array1<f64> {
    if rho == 0.0 {
        return c.clone();
    }
    let p = random_unit_orthogonal(rng, c.len(), std::slice::from_ref(c));
    let theta = 2.0 * (rho / 2.0).asin();
    let v = c * theta.cos() + p * theta.sin();
    let n = v.dot(&v).sqrt();
    v / n
}

fn place(
    rng: &mut SimRng,
    dim: usize,
    constraint: &str,
    accept: impl Fn(&Array1<f64>) -> bool,
) -> Result<Array1<f64>> {
    for _ in 0..MAX_PLACEMENT_TRIES {
        let v = random_unit(rng, dim);
        if accept(&v) {
            return Ok(v);
        }
    }
    Err(Error::Construction(format!(
        "could not satisfy {constraint} after {MAX_PLACEMENT_TRIES} tries in {dim} dimensions"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small_space(rows: Array2<f64>) -> EmbeddingSpace {
        EmbeddingSpace::from_rows(rows, 0.4).unwrap()
    }

    #[test]
    fn cosine_closed_forms() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = small_space(array![[1.0, 0.0], [h, h], [0.0, 1.0], [-1.0, 0.0]]);
        assert_abs_diff_eq!(s.cosine(Token(0), Token(0)).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.cosine(Token(0), Token(2)).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.cosine(Token(0), Token(1)).unwrap(), h, epsilon = 1e-15);
        assert_eq!(
            s.cosine(Token(1), Token(3)).unwrap(),
            s.cosine(Token(3), Token(1)).unwrap()
        );
    }

    #[test]
    fn cosine_zero_norm_is_domain_error() {
        let s = small_space(array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        assert!(matches!(
            s.cosine(Token(0), Token(1)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn singleton_cluster_is_isolated() {
        let spec = ClusterSpec::uniform(8, 1, 1, 0.1, 1.0);
        let s = generate_clustered_space(&spec, 8, 0.4, 3).unwrap();
        assert!(s.epsilon_neighborhood(Token(0)).is_empty());
    }

    #[test]
    fn five_cluster_fully_connected() {
        let spec = ClusterSpec::uniform(20, 1, 5, 0.1, 1.0);
        let s = generate_clustered_space(&spec, 16, 0.4, 9).unwrap();
        for i in 0..5 {
            let expect: BTreeSet<Token> = (0..5).filter(|&j| j != i).map(Token).collect();
            assert_eq!(s.epsilon_neighborhood(Token(i)), expect);
        }
        assert_eq!(s.similarity_edge_count(), 20);
        for i in 5..20 {
            assert!(s.epsilon_neighborhood(Token(i)).is_empty());
        }
    }

    #[test]
    fn zero_epsilon_has_no_neighbors() {
        let spec = ClusterSpec::uniform(10, 0, 1, 0.0, 0.0);
        let s = generate_clustered_space(&spec, 4, 0.0, 1).unwrap();
        assert_eq!(s.similarity_edge_count(), 0);
    }

    #[test]
    fn infeasible_separation_names_constraint() {
        let spec = ClusterSpec::uniform(40, 30, 1, 0.0, 1.9);
        let err = generate_clustered_space(&spec, 2, 0.1, 0).unwrap_err();
        assert!(err.to_string().contains("center_min_separation"), "{err}");
    }

    #[test]
    fn invalid_spec_rejected() {
        let too_many = ClusterSpec::uniform(8, 2, 5, 0.1, 1.0);
        assert!(generate_clustered_space(&too_many, 8, 0.4, 0).is_err());
        let wide = ClusterSpec::uniform(16, 1, 5, 0.3, 1.0);
        assert!(generate_clustered_space(&wide, 8, 0.4, 0).is_err());
        let ok = ClusterSpec::uniform(16, 1, 5, 0.1, 1.0);
        assert!(generate_clustered_space(&ok, 1, 0.4, 0).is_err());
    }

    #[test]
    fn closure_depths() {
        let spec = ClusterSpec::uniform(20, 2, 5, 0.15, 1.2);
        let s = generate_clustered_space(&spec, 16, 0.4, 2).unwrap();
        assert_eq!(s.closure(Token(0), 0), BTreeSet::from([Token(0)]));
        assert_eq!(s.closure(Token(0), 1).len(), 5);
        assert_eq!(s.closure(Token(12), 3), BTreeSet::from([Token(12)]));
        let comps = s.components();
        assert_eq!(comps[0], (0..5).map(Token).collect::<Vec<_>>());
        assert_eq!(comps.len(), 2 + 10);
    }

    #[test]
    fn text_roundtrip_exact() {
        let spec = ClusterSpec::uniform(12, 2, 3, 0.1, 1.0);
        let s = generate_clustered_space(&spec, 5, 0.4, 11).unwrap();
        let back = EmbeddingSpace::from_text(&s.to_text()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn extend_appends_rows() {
        let spec = ClusterSpec::uniform(6, 0, 1, 0.0, 0.0);
        let s = generate_clustered_space(&spec, 3, 0.2, 4).unwrap();
        let extra = array![[1.0, 0.0, 0.0]];
        let e = s.extend(&extra).unwrap();
        assert_eq!(e.vocab_size(), 7);
        assert_eq!(e.embedding(Token(6)), extra.row(0));
        assert!(s.extend(&array![[1.0, 0.0]]).is_err());
    }
}
