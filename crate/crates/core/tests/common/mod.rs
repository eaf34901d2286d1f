//! Test-only oracles and fixtures.
//!
//! Nothing here calls into the crate's numeric code: covariance, eigenvalues
//! and entropies are recomputed with plain loops and a cyclic Jacobi solver.

#![allow(dead_code, clippy::needless_range_loop)]

use std::path::{Path, PathBuf};

use erank_core::{write_manifest, write_tensor, DumpManifest, ManifestEntry, RepresentationSet, TensorFile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn to_reps(rows: &[Vec<f64>]) -> RepresentationSet {
    RepresentationSet::from_rows(rows).unwrap()
}

/// Covariance of normalized centered rows by explicit loops. Rows whose
/// centered norm is below `1e-12` of the largest are left out.
pub fn oracle_covariance(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, usize) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| (0..d).map(|j| r[j] - mean[j]).collect()).collect();
    let norms: Vec<f64> = centered.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let max = norms.iter().cloned().fold(0.0, f64::max);
    let mut cov = vec![vec![0.0; d]; d];
    let mut kept = 0;
    for (c, norm) in centered.iter().zip(&norms) {
        if *norm == 0.0 || *norm < 1e-12 * max {
            continue;
        }
        kept += 1;
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (c[a] / norm) * (c[b] / norm);
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= kept as f64;
        }
    }
    (cov, kept)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, unsorted.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let total: f64 = a.iter().flatten().map(|v| v * v).sum();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    off += a[p][q] * a[p][q];
                }
            }
        }
        if off <= 1e-32 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

pub fn shannon_entropy(weights: &[f64]) -> f64 {
    let clipped: Vec<f64> = weights.iter().map(|w| w.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    -clipped
        .iter()
        .map(|w| w / total)
        .filter(|p| *p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Matrix entropy of a sentence's representations, computed from scratch.
pub fn oracle_entropy(rows: &[Vec<f64>]) -> f64 {
    let (cov, _) = oracle_covariance(rows);
    shannon_entropy(&jacobi_eigenvalues(cov))
}

/// Effective rank of an arbitrary matrix via the eigenvalues of `A^T A`.
pub fn oracle_erank_general(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let d = rows[0].len();
    let mut ata = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in 0..d {
            ata[a][b] = (0..n).map(|i| rows[i][a] * rows[i][b]).sum();
        }
    }
    let mut eig = jacobi_eigenvalues(ata);
    eig.sort_by(|x, y| y.total_cmp(x));
    let sigma: Vec<f64> = eig.iter().take(n.min(d)).map(|l| l.max(0.0).sqrt()).collect();
    shannon_entropy(&sigma).exp()
}

pub struct Sentence {
    pub id: String,
    pub rows: Vec<Vec<f64>>,
    pub logprobs: Option<Vec<f64>>,
}

/// Writes a corpus as f64 tensors plus a manifest under `dir/name/`.
pub fn write_corpus(dir: &Path, name: &str, model_id: &str, sentences: &[Sentence]) -> PathBuf {
    let root = dir.join(name);
    std::fs::create_dir_all(root.join("reps")).unwrap();
    let d = sentences[0].rows[0].len();
    let mut manifest = DumpManifest::new(model_id, "synthetic", d);
    for s in sentences {
        let rel = PathBuf::from(format!("reps/{}.npy", s.id));
        let data = s.rows.iter().flatten().copied().collect();
        write_tensor(&TensorFile::matrix_f64(s.rows.len(), d, data).unwrap(), root.join(&rel)).unwrap();
        let logprobs_path = s.logprobs.as_ref().map(|lp| {
            let rel = PathBuf::from(format!("reps/{}.logprobs.npy", s.id));
            write_tensor(&TensorFile::vector_f64(lp.clone()), root.join(&rel)).unwrap();
            rel
        });
        manifest.entries.push(ManifestEntry {
            sentence_id: s.id.clone(),
            reps_path: rel,
            token_count: s.rows.len(),
            logprobs_path,
        });
    }
    let path = root.join("manifest.json");
    write_manifest(&manifest, &path).unwrap();
    path
}

/// A seeded corpus of random sentences with 3..=`max_n` tokens and dimension `d`.
pub fn random_corpus(seed: u64, sentences: usize, max_n: usize, d: usize, with_logprobs: bool) -> Vec<Sentence> {
    let mut rng = rng(seed);
    (0..sentences)
        .map(|i| {
            let n = rng.random_range(3..=max_n);
            let rows = random_rows(&mut rng, n, d);
            let logprobs = with_logprobs.then(|| (0..n).map(|_| -rng.random_range(0.0..8.0)).collect());
            Sentence {
                id: format!("s{i:03}"),
                rows,
                logprobs,
            }
        })
        .collect()
}
