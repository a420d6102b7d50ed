//! Seeded regular LDPC construction.
//!
//! Columns are filled one at a time. Each column picks `d_v` checks with
//! spare capacity, preferring checks that do not already share a column with
//! the ones picked so far (a shared pair would close a 4-cycle), then checks
//! with the most spare capacity, then a random tie-break. A run that gets
//! stuck, creates a 4-cycle, or ends rank deficient is discarded and the
//! construction restarts from the next RNG state.
//!
//! When the counting bound `N·C(d_v,2) > C(M,2)` rules out a 4-cycle-free
//! matrix, every attempt is completed and the full-rank result with the
//! fewest 4-cycles is kept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CodeError, Encoder, ParityCheckMatrix};

const MAX_ATTEMPTS: usize = 2000;
const FALLBACK_ATTEMPTS: usize = 200;

pub fn generate_regular_code(n: usize, d_v: usize, d_c: usize, seed: u64) -> Result<ParityCheckMatrix, CodeError> {
    if n == 0 || d_v == 0 || d_c == 0 {
        return Err(CodeError::Parameters("N, d_v and d_c must be positive".into()));
    }
    if !(n * d_v).is_multiple_of(d_c) {
        return Err(CodeError::Parameters(format!("N·d_v = {} is not divisible by d_c = {d_c}", n * d_v)));
    }
    let m = n * d_v / d_c;
    if d_v > m || d_c > n {
        return Err(CodeError::Parameters(format!("degrees ({d_v},{d_c}) do not fit a {m}x{n} matrix")));
    }
    let cycle_free_possible = n * d_v * (d_v - 1) / 2 <= m * (m - 1) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if cycle_free_possible {
        for _ in 0..MAX_ATTEMPTS {
            if let Some((h, 0)) = attempt(n, m, d_v, d_c, true, &mut rng) {
                if Encoder::new(&h).is_ok() {
                    return Ok(h);
                }
            }
        }
        return Err(CodeError::AttemptBudget { attempts: MAX_ATTEMPTS });
    }

    let mut best: Option<(ParityCheckMatrix, usize)> = None;
    for _ in 0..FALLBACK_ATTEMPTS {
        if let Some((h, cycles)) = attempt(n, m, d_v, d_c, false, &mut rng) {
            if best.as_ref().is_none_or(|(_, c)| cycles < *c) && Encoder::new(&h).is_ok() {
                best = Some((h, cycles));
            }
        }
    }
    best.map(|(h, _)| h).ok_or(CodeError::AttemptBudget { attempts: FALLBACK_ATTEMPTS })
}

/// One greedy pass. Returns the matrix and its 4-cycle count, or `None` when
/// it gets stuck (or, in strict mode, as soon as a 4-cycle is unavoidable).
fn attempt(
    n: usize,
    m: usize,
    d_v: usize,
    d_c: usize,
    strict: bool,
    rng: &mut ChaCha8Rng,
) -> Option<(ParityCheckMatrix, usize)> {
    let mut capacity = vec![d_c; m];
    let mut pair_uses = vec![0usize; m * m];
    let mut rows: Vec<Vec<usize>> = vec![Vec::with_capacity(d_c); m];
    let mut cycles = 0;
    let mut order: Vec<usize> = (0..m).collect();
    for col in 0..n {
        let mut picked: Vec<usize> = Vec::with_capacity(d_v);
        for _ in 0..d_v {
            // Fisher-Yates shuffle gives the random tie-break.
            for k in (1..m).rev() {
                order.swap(k, rng.random_range(0..=k));
            }
            let best = order
                .iter()
                .copied()
                .filter(|&r| capacity[r] > 0 && !picked.contains(&r))
                .min_by_key(|&r| {
                    let reuse: usize = picked.iter().map(|&p| pair_uses[p * m + r]).sum();
                    (reuse, std::cmp::Reverse(capacity[r]))
                })?;
            let reuse: usize = picked.iter().map(|&p| pair_uses[p * m + best]).sum();
            if strict && reuse > 0 {
                return None;
            }
            cycles += reuse;
            picked.push(best);
        }
        for (a, &p) in picked.iter().enumerate() {
            capacity[p] -= 1;
            rows[p].push(col);
            for &q in &picked[a + 1..] {
                pair_uses[p * m + q] += 1;
                pair_uses[q * m + p] += 1;
            }
        }
    }
    let h = ParityCheckMatrix::from_rows(n, rows).ok()?;
    Some((h, cycles))
}
