//! Reads exported SDPA files back with a standalone parser and checks every
//! `Fi • Y` against the in-memory rows.

use std::collections::HashMap;

use nalgebra::DMatrix;
use sparse_psatz::sdp::{export_sdpa, write_sdpa, SdpaLayout, SdpProblem, SparseRows};
use sparse_psatz::sparsity::{Mode, RelaxationOrder};
use sparse_psatz::verify::{build_program, VerifyOptions};
use sparse_psatz::{Activation, IntervalBox, NetworkModel};

struct Sdpa {
    m: usize,
    sizes: Vec<i64>,
    c: Vec<f64>,
    /// (matrix, block) -> entries (i, j, value), 1-based.
    mats: HashMap<(usize, usize), Vec<(usize, usize, f64)>>,
}

fn parse(text: &str) -> Sdpa {
    let mut tokens = text
        .lines()
        .filter(|l| !l.starts_with('*') && !l.starts_with('"'))
        .flat_map(|l| {
            l.split(|c: char| c.is_whitespace() || ",{}()".contains(c))
                .filter(|t| !t.is_empty())
                .collect::<Vec<_>>()
        });
    let m: usize = tokens.next().unwrap().parse().unwrap();
    let nb: usize = tokens.next().unwrap().parse().unwrap();
    let sizes: Vec<i64> = (0..nb).map(|_| tokens.next().unwrap().parse().unwrap()).collect();
    let c: Vec<f64> = (0..m).map(|_| tokens.next().unwrap().parse().unwrap()).collect();
    let rest: Vec<&str> = tokens.collect();
    assert_eq!(rest.len() % 5, 0);
    let mut mats: HashMap<(usize, usize), Vec<(usize, usize, f64)>> = HashMap::new();
    for e in rest.chunks(5) {
        let (mat, blk, i, j): (usize, usize, usize, usize) =
            (e[0].parse().unwrap(), e[1].parse().unwrap(), e[2].parse().unwrap(), e[3].parse().unwrap());
        let v: f64 = e[4].parse().unwrap();
        assert!(i <= j, "upper triangle only");
        if sizes[blk - 1] < 0 {
            assert_eq!(i, j, "diagonal block entry off the diagonal");
        }
        mats.entry((mat, blk)).or_default().push((i, j, v));
    }
    Sdpa { m, sizes, c, mats }
}

/// `F • Y` for symmetric `F` given by its upper triangle.
fn inner(sdpa: &Sdpa, mat: usize, y: &[DMatrix<f64>]) -> f64 {
    let mut total = 0.0;
    for blk in 1..=sdpa.sizes.len() {
        for &(i, j, v) in sdpa.mats.get(&(mat, blk)).map(Vec::as_slice).unwrap_or(&[]) {
            let w = if i == j { 1.0 } else { 2.0 };
            total += w * v * y[blk - 1][(i - 1, j - 1)];
        }
    }
    total
}

fn lcg(state: &mut u64) -> f64 {
    *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ((*state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

/// Maps block-diagonal `Y` to the decision vector it encodes.
fn decision_vector(problem: &SdpProblem, layout: &SdpaLayout, y: &[DMatrix<f64>]) -> Vec<f64> {
    let mut x = vec![0.0; problem.n_vars()];
    let nf = layout.free_pairs;
    for k in 0..nf {
        x[k] = y[0][(k, k)] - y[0][(nf + k, nf + k)];
    }
    let offsets = problem.block_offsets();
    for map in &layout.blocks {
        let k = map.source_block;
        let off = offsets[k];
        let yb = &y[map.sdpa_block - 1];
        if let Some(d) = map.diagonal_index {
            x[off] = yb[(d - 1, d - 1)];
            continue;
        }
        let mut idx = off;
        for j in 0..problem.blocks[k] {
            for i in 0..=j {
                x[idx] = if i == j { yb[(i, i)] } else { std::f64::consts::SQRT_2 * yb[(i, j)] };
                idx += 1;
            }
        }
    }
    x
}

fn check(problem: &SdpProblem) {
    let mut buf = Vec::new();
    let layout = export_sdpa(problem, &mut buf).unwrap();
    let sdpa = parse(std::str::from_utf8(&buf).unwrap());
    assert_eq!(sdpa.m, problem.n_rows());
    assert_eq!(sdpa.c, problem.b);
    let mut seed = 0x5eed;
    let y: Vec<DMatrix<f64>> = sdpa
        .sizes
        .iter()
        .map(|&s| {
            let n = s.unsigned_abs() as usize;
            let mut m = DMatrix::from_fn(n, n, |_, _| lcg(&mut seed));
            m = &m + m.transpose();
            if s < 0 {
                m = DMatrix::from_diagonal(&m.diagonal());
            }
            m
        })
        .collect();
    let x = decision_vector(problem, &layout, &y);
    let ax = problem.a.mul_vec(&x);
    for (r, v) in ax.iter().enumerate() {
        let f = inner(&sdpa, r + 1, &y);
        assert!((f - v).abs() < 1e-10 * (1.0 + v.abs()), "row {r}: {f} vs {v}");
    }
    let f0 = inner(&sdpa, 0, &y);
    assert!((f0 + problem.objective(&x)).abs() < 1e-10 * (1.0 + f0.abs()));
}

#[test]
fn small_mixed_program() {
    let a = SparseRows::from_triplets(
        2,
        1 + 1 + 6,
        vec![(0, 0, 1.0), (0, 1, -2.0), (0, 3, 0.5), (1, 2, 1.0), (1, 7, -1.5), (1, 5, 3.0)],
    );
    let p = SdpProblem::new(1, vec![1, 3], a, vec![1.0, -0.25], vec![1.0, 0.0, 0.3, 0.0, 0.0, 0.0, 2.0, 0.0]).unwrap();
    check(&p);
}

#[test]
fn certificate_programs() {
    let input = IntervalBox::uniform(2, -1.0, 1.0).unwrap();
    for (act, mode) in [
        (Activation::Relu, Mode::Sparse),
        (Activation::Sigmoid, Mode::Sparse),
        (Activation::Tanh, Mode::Dense),
    ] {
        let model = NetworkModel::random(2, 2, 2, 2, act, 11).unwrap();
        let options = VerifyOptions {
            mode,
            order: RelaxationOrder::Fixed(2),
            sample: None,
            ..VerifyOptions::default()
        };
        let program = build_program(&model, &input, &[1.0, -0.5], &options).unwrap();
        check(&program.problem);
    }
}

#[test]
fn file_and_stream_agree() {
    let model = NetworkModel::random(1, 1, 3, 2, Activation::Relu, 2).unwrap();
    let input = IntervalBox::uniform(1, -1.0, 1.0).unwrap();
    let program = build_program(&model, &input, &[1.0], &VerifyOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.dat-s");
    let from_file = write_sdpa(&program.problem, &path).unwrap();
    let mut buf = Vec::new();
    let from_stream = export_sdpa(&program.problem, &mut buf).unwrap();
    assert_eq!(from_file, from_stream);
    assert_eq!(std::fs::read(&path).unwrap(), buf);
}
