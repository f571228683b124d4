//! Exact-match METEOR.
//!
//! The alignment maximizes the number of matched tokens, then minimizes the
//! number of chunks (runs contiguous in both sequences). The minimization is
//! an exact branch-and-bound search seeded with a greedy longest-run tiling;
//! if the search exhausts its node budget the best alignment found so far is
//! used.

use std::collections::HashMap;

const SEARCH_BUDGET: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeteorDetail {
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub score: f64,
    /// False if the chunk search hit its budget.
    pub exact: bool,
}

pub fn meteor(pred: &[String], reference: &[String]) -> f64 {
    meteor_detail(pred, reference).score
}

pub fn meteor_detail(pred: &[String], reference: &[String]) -> MeteorDetail {
    let (p, r, n_types) = intern(pred, reference);
    let (alignment, exact) = align(&p, &r, n_types);
    let matches = alignment.iter().filter(|a| a.is_some()).count();
    if matches == 0 {
        return MeteorDetail {
            matches: 0,
            chunks: 0,
            precision: 0.0,
            recall: 0.0,
            score: 0.0,
            exact,
        };
    }
    let chunks = count_chunks(&alignment);
    let precision = matches as f64 / pred.len() as f64;
    let recall = matches as f64 / reference.len() as f64;
    let fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
    // Cube the integer counts so identical inputs give exactly 1 - 0.5/m^3.
    let penalty = 0.5 * (chunks as f64).powi(3) / (matches as f64).powi(3);
    MeteorDetail {
        matches,
        chunks,
        precision,
        recall,
        score: fmean * (1.0 - penalty),
        exact,
    }
}

fn intern(a: &[String], b: &[String]) -> (Vec<usize>, Vec<usize>, usize) {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut out = [Vec::with_capacity(a.len()), Vec::with_capacity(b.len())];
    for (seq, dst) in [a, b].into_iter().zip(out.iter_mut()) {
        for t in seq {
            let next = ids.len();
            dst.push(*ids.entry(t.as_str()).or_insert(next));
        }
    }
    let n = ids.len();
    let [pa, pb] = out;
    (pa, pb, n)
}

/// Number of maximal runs `i -> j, i+1 -> j+1, ...` in a pred-indexed alignment.
pub(crate) fn count_chunks(alignment: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    for i in 0..alignment.len() {
        if let Some(j) = alignment[i] {
            let continues = i > 0 && j > 0 && alignment[i - 1] == Some(j - 1);
            if !continues {
                chunks += 1;
            }
        }
    }
    chunks
}

/// Greedy tiling: repeatedly claim the longest run of equal tokens among
/// unclaimed positions (earliest pred, then earliest ref position on ties).
fn greedy(p: &[usize], r: &[usize]) -> Vec<Option<usize>> {
    let mut alignment = vec![None; p.len()];
    let mut used_r = vec![false; r.len()];
    loop {
        let mut best = (0usize, 0usize, 0usize); // (len, i, j)
        let mut run = vec![0usize; r.len() + 1];
        for i in 0..p.len() {
            let mut next = vec![0usize; r.len() + 1];
            for j in 0..r.len() {
                if alignment[i].is_none() && !used_r[j] && p[i] == r[j] {
                    next[j + 1] = run[j] + 1;
                    let len = next[j + 1];
                    if len > best.0 {
                        best = (len, i + 1 - len, j + 1 - len);
                    }
                }
            }
            run = next;
        }
        if best.0 == 0 {
            return alignment;
        }
        let (len, i0, j0) = best;
        for k in 0..len {
            alignment[i0 + k] = Some(j0 + k);
            used_r[j0 + k] = true;
        }
    }
}

struct Search<'a> {
    p: &'a [usize],
    candidates: Vec<Vec<usize>>,
    /// Matches still owed per token type.
    need: Vec<usize>,
    /// Pred occurrences of each type at positions >= current.
    left: Vec<usize>,
    used_r: Vec<bool>,
    current: Vec<Option<usize>>,
    best: Vec<Option<usize>>,
    best_chunks: usize,
    nodes: usize,
    exhausted: bool,
}

impl Search<'_> {
    fn run(&mut self, i: usize, chunks: usize) {
        if chunks >= self.best_chunks {
            return;
        }
        if self.nodes >= SEARCH_BUDGET {
            self.exhausted = true;
            return;
        }
        self.nodes += 1;
        if i == self.p.len() {
            self.best_chunks = chunks;
            self.best = self.current.clone();
            return;
        }
        let t = self.p[i];
        self.left[t] -= 1;
        if self.need[t] > 0 {
            let prev = if i > 0 { self.current[i - 1] } else { None };
            let mut order: Vec<usize> = self.candidates[i]
                .iter()
                .copied()
                .filter(|&j| !self.used_r[j])
                .collect();
            // Try extending the running chunk first.
            if let Some(pj) = prev {
                if let Some(pos) = order.iter().position(|&j| j == pj + 1) {
                    order.swap(0, pos);
                }
            }
            for j in order {
                let extends = prev.is_some_and(|pj| pj + 1 == j);
                self.used_r[j] = true;
                self.need[t] -= 1;
                self.current[i] = Some(j);
                self.run(i + 1, chunks + usize::from(!extends));
                self.current[i] = None;
                self.need[t] += 1;
                self.used_r[j] = false;
            }
        }
        // Leave this occurrence unmatched only if later ones can still
        // satisfy the type's quota.
        if self.left[t] >= self.need[t] {
            self.run(i + 1, chunks);
        }
        self.left[t] += 1;
    }
}

fn align(p: &[usize], r: &[usize], n_types: usize) -> (Vec<Option<usize>>, bool) {
    let seed = greedy(p, r);
    let mut count_p = vec![0usize; n_types];
    let mut count_r = vec![0usize; n_types];
    p.iter().for_each(|&t| count_p[t] += 1);
    r.iter().for_each(|&t| count_r[t] += 1);
    let need: Vec<usize> = (0..n_types).map(|t| count_p[t].min(count_r[t])).collect();
    let mut positions: Vec<Vec<usize>> = vec![Vec::new(); n_types];
    for (j, &t) in r.iter().enumerate() {
        positions[t].push(j);
    }
    let seed_chunks = count_chunks(&seed);
    let mut search = Search {
        p,
        candidates: p.iter().map(|&t| positions[t].clone()).collect(),
        need,
        left: count_p,
        used_r: vec![false; r.len()],
        current: vec![None; p.len()],
        best: seed,
        best_chunks: seed_chunks,
        nodes: 0,
        exhausted: false,
    };
    search.run(0, 0);
    (search.best, !search.exhausted)
}
