//! Sparse SDPA (`.dat-s`) export.
//!
//! The problem is written as the SDPA dual `max F0•Y s.t. Fi•Y = ci, Y ⪰ 0` with
//! `Fi` the matrix form of row `i` of `A`, `ci = bi` and `F0 = -C`, so the optimal
//! value reported by an SDPA-format solver is `-(cᵀx*)`. Free scalars are split
//! as `x = p - q` and, together with all order-1 blocks, form one diagonal block
//! listed first with negative size.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{svec_len, SdpProblem, SQRT2};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdpaBlockMap {
    /// 1-based SDPA block number.
    pub sdpa_block: usize,
    /// 1-based position inside the diagonal block, for order-1 sources.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagonal_index: Option<usize>,
    /// Index into `SdpProblem::blocks`.
    pub source_block: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdpaLayout {
    pub diagonal_size: usize,
    pub free_pairs: usize,
    pub blocks: Vec<SdpaBlockMap>,
}

struct Position {
    blk: usize,
    i: usize,
    j: usize,
    /// Entry value is the coefficient divided by this.
    div: f64,
}

fn layout(problem: &SdpProblem) -> (SdpaLayout, Vec<usize>, Vec<Vec<Position>>) {
    let n_free = problem.n_free;
    let scalars: Vec<usize> = (0..problem.blocks.len())
        .filter(|&k| problem.blocks[k] == 1)
        .collect();
    let diagonal_size = 2 * n_free + scalars.len();
    let has_diag = diagonal_size > 0;
    let diag_blk = 1;
    let mut next_blk = if has_diag { 2 } else { 1 };
    let mut sizes = Vec::new();
    let mut maps = Vec::new();
    let mut pos: Vec<Vec<Position>> = (0..problem.n_vars()).map(|_| Vec::new()).collect();

    for k in 0..n_free {
        pos[k].push(Position { blk: diag_blk, i: k + 1, j: k + 1, div: 1.0 });
        pos[k].push(Position { blk: diag_blk, i: n_free + k + 1, j: n_free + k + 1, div: -1.0 });
    }
    let offsets = problem.block_offsets();
    let mut scalar_pos = 2 * n_free;
    for (k, &order) in problem.blocks.iter().enumerate() {
        let off = offsets[k];
        if order == 1 {
            scalar_pos += 1;
            pos[off].push(Position { blk: diag_blk, i: scalar_pos, j: scalar_pos, div: 1.0 });
            maps.push(SdpaBlockMap {
                sdpa_block: diag_blk,
                diagonal_index: Some(scalar_pos),
                source_block: k,
            });
            continue;
        }
        let blk = next_blk;
        next_blk += 1;
        sizes.push(order);
        maps.push(SdpaBlockMap {
            sdpa_block: blk,
            diagonal_index: None,
            source_block: k,
        });
        let mut idx = off;
        for j in 0..order {
            for i in 0..=j {
                let div = if i == j { 1.0 } else { SQRT2 };
                pos[idx].push(Position { blk, i: i + 1, j: j + 1, div });
                idx += 1;
            }
        }
        debug_assert_eq!(idx - off, svec_len(order));
    }
    maps.sort_by_key(|m| m.source_block);
    let mut all_sizes = Vec::new();
    if has_diag {
        all_sizes.push(diagonal_size);
    }
    all_sizes.extend(sizes);
    (
        SdpaLayout {
            diagonal_size,
            free_pairs: n_free,
            blocks: maps,
        },
        all_sizes,
        pos,
    )
}

fn write_matrix<W: Write>(
    out: &mut W,
    matno: usize,
    coeffs: impl Iterator<Item = (usize, f64)>,
    pos: &[Vec<Position>],
) -> std::io::Result<()> {
    let mut entries: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (col, v) in coeffs {
        for p in &pos[col] {
            let val = v / p.div;
            if val != 0.0 {
                entries.push((p.blk, p.i, p.j, val));
            }
        }
    }
    entries.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    for (blk, i, j, val) in entries {
        writeln!(out, "{matno} {blk} {i} {j} {val}")?;
    }
    Ok(())
}

pub fn export_sdpa<W: Write>(problem: &SdpProblem, mut out: W) -> std::io::Result<SdpaLayout> {
    let (layout, sizes, pos) = layout(problem);
    let diag = layout.diagonal_size > 0;
    writeln!(out, "{}", problem.n_rows())?;
    writeln!(out, "{}", sizes.len())?;
    let size_line: Vec<String> = sizes
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if k == 0 && diag {
                format!("-{s}")
            } else {
                s.to_string()
            }
        })
        .collect();
    writeln!(out, "{}", size_line.join(" "))?;
    let rhs: Vec<String> = problem.b.iter().map(|v| v.to_string()).collect();
    writeln!(out, "{}", rhs.join(" "))?;
    write_matrix(
        &mut out,
        0,
        problem.c.iter().enumerate().map(|(k, &v)| (k, -v)),
        &pos,
    )?;
    for r in 0..problem.n_rows() {
        write_matrix(&mut out, r + 1, problem.a.row(r), &pos)?;
    }
    out.flush()?;
    Ok(layout)
}

pub fn write_sdpa(problem: &SdpProblem, path: impl AsRef<Path>) -> Result<SdpaLayout> {
    let file = BufWriter::new(File::create(path)?);
    Ok(export_sdpa(problem, file)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{svec_index, SparseRows};

    #[test]
    fn one_constraint_golden() {
        // min X11 s.t. X22 = 1
        let a = SparseRows::from_triplets(1, 3, vec![(0, svec_index(1, 1), 1.0)]);
        let mut c = vec![0.0; 3];
        c[svec_index(0, 0)] = 1.0;
        let p = SdpProblem::new(0, vec![2], a, vec![1.0], c).unwrap();
        let mut buf = Vec::new();
        export_sdpa(&p, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "1\n1\n2\n1\n0 1 1 1 -1\n1 1 2 2 1\n"
        );
    }

    #[test]
    fn free_and_scalar_blocks_share_the_diagonal() {
        // γ free, s ≥ 0, 2x2 block; γ - s + √2·X12 = 3
        let a = SparseRows::from_triplets(1, 5, vec![(0, 0, 1.0), (0, 1, -1.0), (0, 3, SQRT2)]);
        let p = SdpProblem::new(1, vec![1, 2], a, vec![3.0], vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        let layout = export_sdpa(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "1\n2\n-3 2\n3\n0 1 1 1 -1\n0 1 2 2 1\n1 1 1 1 1\n1 1 2 2 -1\n1 1 3 3 -1\n1 2 1 2 1\n"
        );
        assert_eq!(layout.diagonal_size, 3);
        assert_eq!(layout.blocks[0].diagonal_index, Some(3));
        assert_eq!(layout.blocks[1].sdpa_block, 2);
    }
}
