//! Seeded property checks shared by the `properties` and `acceptance` targets.
//! Every check returns `Err` with a description of the first violation.

#![allow(dead_code)]

use mediatop::dissim::DenseMatrix;
use mediatop::fast_som::{block_sums, bnb_bounds, ReceptiveFields, Theta};
use mediatop::median::{train_median_weighted, MedianFit};
use mediatop::metric::weighted_edit_distance;
use mediatop::patch::{patch_median_ng, PatchConfig};
use mediatop::rank::{argmin, ranks_from_distances};
use mediatop::schedule::neighborhood_weight;
use mediatop::{
    train_median, Algorithm, AnnealingSchedule, Labels, Lattice, MedianConfig, MedianPrototypes, SupervisionConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Squared Euclidean distances of `n` uniform points in `[0,1)^dim`.
pub fn random_points_matrix(n: usize, dim: usize, seed: u64) -> DenseMatrix {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..n * dim).map(|_| r.gen::<f64>()).collect();
    DenseMatrix::from_fn(n, |i, j| {
        (0..dim).map(|t| (x[i * dim + t] - x[j * dim + t]).powi(2)).sum()
    })
    .unwrap()
}

/// Symmetric, zero diagonal, small integer entries: many exact ties.
pub fn random_integer_matrix(n: usize, seed: u64) -> DenseMatrix {
    let mut r = rng(seed);
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let x = r.gen_range(1..8) as f64;
            v[i * n + j] = x;
            v[j * n + i] = x;
        }
    }
    DenseMatrix::from_vec(n, v).unwrap()
}

pub fn random_labels(n: usize, classes: usize, seed: u64) -> Labels {
    let mut r = rng(seed);
    let c: Vec<Option<usize>> = (0..n).map(|_| Some(r.gen_range(0..classes))).collect();
    Labels::from_classes(&c, (0..classes).map(|i| format!("c{i}")).collect()).unwrap()
}

pub fn square_lattice(k: usize) -> Lattice {
    let s = (k as f64).sqrt().round() as usize;
    if s * s == k {
        Lattice::rectangular(s, s).unwrap()
    } else {
        Lattice::chain(k).unwrap()
    }
}

/// Ranks are a permutation of `0..K` and rank 0 is the lowest-index minimum.
pub fn check_rank_permutation(seed: u64) -> Check {
    let mut r = rng(seed);
    for _ in 0..200 {
        let k = r.gen_range(1..40);
        let d: Vec<f64> = (0..k).map(|_| r.gen_range(0..5) as f64 * 0.5).collect();
        let mut ranks = vec![0u32; k];
        ranks_from_distances(&d, &mut ranks);
        let mut seen = vec![false; k];
        for &x in &ranks {
            let x = x as usize;
            if x >= k || seen[x] {
                return Err(format!("ranks {ranks:?} are not a permutation"));
            }
            seen[x] = true;
        }
        let best = argmin(&d);
        if ranks[best] != 0 || d.iter().position(|&v| v == d[best]) != Some(best) {
            return Err(format!("rank 0 is not the first minimum of {d:?}"));
        }
        for a in 0..k {
            for b in 0..k {
                if d[a] < d[b] && ranks[a] > ranks[b] {
                    return Err(format!("ranks {ranks:?} disagree with {d:?}"));
                }
            }
        }
    }
    Ok(())
}

/// At constant σ the cost never rises after an epoch whose prototypes were
/// all unconstrained argmins (no collision redirect).
pub fn check_cost_descent(seed: u64) -> Check {
    cost_descent(seed, false)
}

/// At constant σ the cost never rises between consecutive rounds, redirects
/// included.
pub fn check_cost_descent_every_round(seed: u64) -> Check {
    cost_descent(seed, true)
}

fn cost_descent(seed: u64, every_round: bool) -> Check {
    let n = 40 + (seed as usize * 37) % 120;
    let d = random_points_matrix(n, 3, seed);
    let labels = random_labels(n, 3, seed + 1);
    for alg in [Algorithm::MedianNg, Algorithm::MedianSom, Algorithm::Kmedoids] {
        for sup in [SupervisionConfig::default(), SupervisionConfig::supervised(0.4).unwrap()] {
            let cfg = MedianConfig::new(alg, 9)
                .epochs(30)
                .seed(seed)
                .supervision(sup)
                .lattice(Lattice::rectangular(3, 3).unwrap())
                .schedule(AnnealingSchedule::constant(0.7, 30).unwrap());
            let fit = train_median(&d, Some(&labels), &cfg).map_err(|e| e.to_string())?;
            for w in fit.history.windows(2) {
                if (every_round || w[0].collisions == 0) && w[1].cost > w[0].cost * (1.0 + 1e-12) {
                    return Err(format!(
                        "{} beta {} seed {seed}: cost rose {} -> {} after epoch {} ({} redirects)",
                        alg.id(),
                        sup.beta,
                        w[0].cost,
                        w[1].cost,
                        w[0].epoch,
                        w[0].collisions
                    ));
                }
            }
        }
    }
    Ok(())
}

/// An annealed run settles within 500 epochs when σ stops after 50.
pub fn check_finite_convergence(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.gen_range(30..=500);
    let k = [3, 4, 9, 16][r.gen_range(0..4)].min(n);
    let d = if seed.is_multiple_of(2) { random_points_matrix(n, 2, seed) } else { random_integer_matrix(n, seed) };
    for alg in [Algorithm::MedianNg, Algorithm::MedianSom, Algorithm::Kmedoids] {
        let cfg = MedianConfig::new(alg, k)
            .epochs(500)
            .seed(seed)
            .lattice(square_lattice(k))
            .schedule(AnnealingSchedule::new(k as f64 / 2.0, 0.01, 50).unwrap());
        let fit = train_median(&d, None, &cfg).map_err(|e| e.to_string())?;
        if !fit.converged || fit.epochs_run > 500 {
            return Err(format!("{} N={n} K={k} seed {seed}: not converged after {}", alg.id(), fit.epochs_run));
        }
    }
    Ok(())
}

/// Every lower bound `η(m, j)` is at most the true SOM criterion of every
/// point of class `m`, computed here straight from the matrix.
pub fn check_bound_soundness(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.gen_range(20..=200);
    let k = [4, 9, 16][r.gen_range(0..3)];
    let d = if seed.is_multiple_of(2) { random_points_matrix(n, 2, seed) } else { random_integer_matrix(n, seed) };
    let owner: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
    let fields = ReceptiveFields::from_owner(owner.clone(), k).map_err(|e| e.to_string())?;
    let s = block_sums(&d, &fields).map_err(|e| e.to_string())?;
    let lattice = square_lattice(k);
    for sigma in [0.05, 0.5, 2.0] {
        for theta in [Theta::SelfOnly, Theta::Full] {
            let b = bnb_bounds(&s, theta, &lattice, sigma).map_err(|e| e.to_string())?;
            for j in 0..k {
                let h: Vec<f64> = (0..k).map(|c| neighborhood_weight(lattice.nd(c, j), sigma).unwrap()).collect();
                for l in 0..n {
                    let mut crit = 0.0;
                    for i in 0..n {
                        crit += h[owner[i]] * d.row(i)[l];
                    }
                    let m = owner[l];
                    let eta = b.eta(m, j);
                    if eta > crit * (1.0 + 1e-12) + 1e-12 {
                        return Err(format!("seed {seed} {theta:?} σ={sigma}: η({m},{j})={eta} > {crit} at point {l}"));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Weighting a point by `m` is training on `m` copies of it, as long as no
/// prototype is redirected by a collision. Distances are small integers so
/// both sums are exact.
pub fn check_multiplicity_equivalence(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.gen_range(12..40);
    let x: Vec<f64> = (0..n).map(|_| r.gen_range(0..30) as f64).collect();
    let mult: Vec<usize> = (0..n).map(|_| r.gen_range(1..4)).collect();
    let mut dup = Vec::new();
    let mut first = Vec::new();
    for (i, &m) in mult.iter().enumerate() {
        first.push(dup.len());
        dup.extend(std::iter::repeat_n(i, m));
    }
    let dw = DenseMatrix::from_fn(n, |i, j| (x[i] - x[j]).abs()).unwrap();
    let dd = DenseMatrix::from_fn(dup.len(), |a, b| (x[dup[a]] - x[dup[b]]).abs()).unwrap();
    let w: Vec<f64> = mult.iter().map(|&m| m as f64).collect();
    let k = r.gen_range(1..5);
    let init: Vec<usize> = mediatop::rng::sample_distinct(&mut mediatop::rng::rng(seed), n, k);
    for alg in [Algorithm::MedianNg, Algorithm::MedianSom] {
        let cfg = MedianConfig::new(alg, k)
            .epochs(15)
            .lattice(Lattice::chain(k).unwrap())
            .schedule(AnnealingSchedule::new(1.5, 0.05, 15).unwrap());
        let a = train_median_weighted(&dw, None, Some(&w), Some(MedianPrototypes::new(init.clone())), &cfg)
            .map_err(|e| e.to_string())?;
        let b_init = init.iter().map(|&i| first[i]).collect();
        let b = train_median_weighted(&dd, None, None, Some(MedianPrototypes::new(b_init)), &cfg)
            .map_err(|e| e.to_string())?;
        if redirected(&a) || redirected(&b) {
            continue;
        }
        let mapped: Vec<usize> = b.prototypes.loc.iter().map(|&l| dup[l]).collect();
        if mapped != a.prototypes.loc {
            return Err(format!("{} seed {seed}: weighted {:?} vs copies {:?}", alg.id(), a.prototypes.loc, mapped));
        }
        if a.quantization.half != b.quantization.half {
            return Err(format!("{} seed {seed}: cost {} vs {}", alg.id(), a.quantization.half, b.quantization.half));
        }
    }
    Ok(())
}

fn redirected(f: &MedianFit) -> bool {
    f.history.iter().any(|e| e.collisions > 0)
}

/// One patch is plain median NG, bit for bit.
pub fn check_single_patch_equivalence(seed: u64) -> Check {
    let n = 30 + (seed as usize * 53) % 170;
    let d = random_points_matrix(n, 4, seed);
    let labels = random_labels(n, 2, seed + 7);
    for sup in [SupervisionConfig::default(), SupervisionConfig::supervised(0.3).unwrap()] {
        let cfg = MedianConfig::new(Algorithm::MedianNg, 6).epochs(25).seed(seed).supervision(sup);
        let plain = train_median(&d, Some(&labels), &cfg).map_err(|e| e.to_string())?;
        let patch = patch_median_ng(&d, Some(&labels), &PatchConfig::new(cfg, 1)).map_err(|e| e.to_string())?;
        if patch.prototypes.loc != plain.prototypes.loc {
            return Err(format!("seed {seed}: {:?} vs {:?}", patch.prototypes.loc, plain.prototypes.loc));
        }
        let q = patch.history[0].quantization_half;
        if q.to_bits() != plain.quantization.half.to_bits() {
            return Err(format!("seed {seed}: cost {q} vs {}", plain.quantization.half));
        }
        if sup.enabled && patch.prototypes.labels.as_ref() != plain.prototypes.labels.as_ref() {
            return Err(format!("seed {seed}: label vectors differ"));
        }
    }
    Ok(())
}

/// Minimum over all alignments by plain recursion.
pub fn edit_oracle(a: &[f64], b: &[f64], indel: f64) -> f64 {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len() as f64 * indel,
        (_, None) => a.len() as f64 * indel,
        (Some((&u, ra)), Some((&v, rb))) => {
            let sub = (u - v).abs() + edit_oracle(ra, rb, indel);
            let del = indel + edit_oracle(ra, b, indel);
            let ins = indel + edit_oracle(a, rb, indel);
            sub.min(del).min(ins)
        }
    }
}

/// Symmetry, identity and agreement with the recursive oracle on short
/// sequences with integer entries, where all sums are exact.
pub fn check_edit_distance(seed: u64) -> Check {
    let mut r = rng(seed);
    for _ in 0..100 {
        let a: Vec<f64> = (0..r.gen_range(0..7)).map(|_| r.gen_range(0..10) as f64).collect();
        let b: Vec<f64> = (0..r.gen_range(0..7)).map(|_| r.gen_range(0..10) as f64).collect();
        let indel = [0.5, 2.0, 4.5][r.gen_range(0..3)];
        let ab = weighted_edit_distance(&a, &b, indel);
        if ab != weighted_edit_distance(&b, &a, indel) {
            return Err(format!("asymmetric on {a:?}, {b:?}"));
        }
        if weighted_edit_distance(&a, &a, indel) != 0.0 {
            return Err(format!("nonzero self distance on {a:?}"));
        }
        let o = edit_oracle(&a, &b, indel);
        if ab != o {
            return Err(format!("{a:?} vs {b:?} indel {indel}: {ab} != oracle {o}"));
        }
    }
    Ok(())
}
