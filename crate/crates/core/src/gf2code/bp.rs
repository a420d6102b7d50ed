//! Sum-product decoding with a flooding schedule.
//!
//! LLRs follow the crate-wide convention `log P(b=0)/P(b=1)`.

use super::{CodeError, ParityCheckMatrix};

const MSG_CAP: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BpOutput {
    pub bits: Vec<u8>,
    /// Posterior LLRs after the last iteration (the input when none ran).
    pub llr: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub fn bp_decode(h: &ParityCheckMatrix, channel_llr: &[f64], max_iter: usize) -> Result<BpOutput, CodeError> {
    let n = h.n();
    if channel_llr.len() != n {
        return Err(CodeError::Length { expected: n, got: channel_llr.len() });
    }
    if let Some(i) = channel_llr.iter().position(|v| !v.is_finite()) {
        return Err(CodeError::NonFiniteLlr(i));
    }
    let hard = |llr: &[f64]| llr.iter().map(|&l| u8::from(l < 0.0)).collect::<Vec<u8>>();
    let mut bits = hard(channel_llr);
    let mut posterior = channel_llr.to_vec();
    if h.syndrome_ok(&bits) {
        return Ok(BpOutput { bits, llr: posterior, converged: true, iterations: 0 });
    }

    // Edge storage in row order; `col_edges[i]` lists edge ids touching bit i.
    let mut offsets = Vec::with_capacity(h.m() + 1);
    offsets.push(0);
    for j in 0..h.m() {
        offsets.push(offsets[j] + h.row_degree(j));
    }
    let edge_col: Vec<usize> = h.rows().iter().flatten().copied().collect();
    let mut col_edges = vec![Vec::new(); n];
    for (e, &i) in edge_col.iter().enumerate() {
        col_edges[i].push(e);
    }
    let mut v2c: Vec<f64> = edge_col.iter().map(|&i| channel_llr[i]).collect();
    let mut c2v = vec![0.0; edge_col.len()];
    let mut t = Vec::new();

    for iter in 1..=max_iter {
        for j in 0..h.m() {
            let span = offsets[j]..offsets[j + 1];
            t.clear();
            t.extend(v2c[span.clone()].iter().map(|&m| (0.5 * m).tanh()));
            for (k, e) in span.enumerate() {
                let prod: f64 = t.iter().enumerate().filter(|&(q, _)| q != k).map(|(_, v)| v).product();
                let p = prod.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
                c2v[e] = (2.0 * p.atanh()).clamp(-MSG_CAP, MSG_CAP);
            }
        }
        for i in 0..n {
            let total = channel_llr[i] + col_edges[i].iter().map(|&e| c2v[e]).sum::<f64>();
            posterior[i] = total;
            for &e in &col_edges[i] {
                v2c[e] = (total - c2v[e]).clamp(-MSG_CAP, MSG_CAP);
            }
        }
        bits = hard(&posterior);
        if h.syndrome_ok(&bits) {
            return Ok(BpOutput { bits, llr: posterior, converged: true, iterations: iter });
        }
    }
    Ok(BpOutput { bits, llr: posterior, converged: false, iterations: max_iter })
}
