//! Drawing values from generators and measuring the samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::surface::{apply_function, sample_expr, EvalOptions, Expr, Program, SurfaceValue};
use crate::weights::{WeightAssignment, WeightTable};

/// Random number generator for sample `index` of a run seeded with `seed`.
/// Each index gets its own ChaCha stream, so samples do not depend on the
/// order in which they are drawn.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `n` independent values of `program`'s `main` under weights `w`.
pub fn sample(
    program: &Program,
    table: &mut WeightTable,
    w: &WeightAssignment,
    n: usize,
    seed: u64,
) -> Result<Vec<SurfaceValue>> {
    let entry = program
        .main
        .as_ref()
        .ok_or_else(|| Error::Eval("program has no `main`".into()))?;
    sample_entry(program, entry, table, w, n, seed, 0)
}

/// Draws `n` values of `entry` using sample indices `first..first + n`.
pub fn sample_entry(
    program: &Program,
    entry: &Expr,
    table: &mut WeightTable,
    w: &WeightAssignment,
    n: usize,
    seed: u64,
    first: u64,
) -> Result<Vec<SurfaceValue>> {
    let opts = EvalOptions::default();
    (0..n as u64)
        .map(|i| sample_expr(program, entry, table, w, sample_rng(seed, first + i), &opts))
        .collect()
}

/// Evaluates the Boolean predicate `validity` of `program` on `v`.
pub fn check_validity(program: &Program, validity: &str, v: &SurfaceValue) -> Result<bool> {
    match apply_function(program, validity, v)? {
        SurfaceValue::Bool(b) => Ok(b),
        other => Err(Error::Eval(format!(
            "`{validity}` returned {other}, expected a Boolean"
        ))),
    }
}

/// One row of an empirical report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub samples: usize,
    pub unique: usize,
    pub unique_valid: usize,
    pub validity_rate: f64,
}

/// 1, 2, 5, 10, 20, 50, ... up to and including `n`.
pub fn log_spaced(n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut base = 1usize;
    'outer: loop {
        for m in [1, 2, 5] {
            let k = base * m;
            if k >= n {
                break 'outer;
            }
            out.push(k);
        }
        base *= 10;
    }
    out.push(n);
    out
}

/// Counts of unique and unique valid samples among the first `k` samples,
/// for every `k` in `checkpoints`. Without a predicate every sample counts
/// as valid.
pub fn report_samples(
    program: &Program,
    samples: &[SurfaceValue],
    validity: Option<&str>,
    checkpoints: &[usize],
) -> Result<Vec<ReportRow>> {
    let mut seen = FxHashSet::default();
    let mut seen_valid = FxHashSet::default();
    let mut valid = 0usize;
    let mut rows = Vec::new();
    let mut next = checkpoints
        .iter()
        .copied()
        .filter(|&c| c >= 1 && c <= samples.len())
        .peekable();
    for (i, v) in samples.iter().enumerate() {
        let ok = match validity {
            Some(f) => check_validity(program, f, v)?,
            None => true,
        };
        if ok {
            valid += 1;
            seen_valid.insert(v);
        }
        seen.insert(v);
        while next.peek() == Some(&(i + 1)) {
            next.next();
            rows.push(ReportRow {
                samples: i + 1,
                unique: seen.len(),
                unique_valid: seen_valid.len(),
                validity_rate: valid as f64 / (i + 1) as f64,
            });
        }
    }
    Ok(rows)
}

/// Samples `n` values and reports at log-spaced sample counts.
pub fn empirical_report(
    program: &Program,
    table: &mut WeightTable,
    w: &WeightAssignment,
    validity: Option<&str>,
    n: usize,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    let samples = sample(program, table, w, n, seed)?;
    report_samples(program, &samples, validity, &log_spaced(n))
}

/// Pearson chi-square statistic of observed counts against expected
/// probabilities, pooling cells whose expected count is below 5. Returns the
/// statistic and the degrees of freedom. Observations outside `expected`
/// make the statistic infinite.
pub fn chi_square(
    observed: &[(SurfaceValue, usize)],
    expected: &crate::inference::Distribution,
) -> (f64, usize) {
    let n: usize = observed.iter().map(|(_, c)| c).sum();
    let nf = n as f64;
    let counts: rustc_hash::FxHashMap<&SurfaceValue, usize> =
        observed.iter().map(|(v, c)| (v, *c)).collect();
    if counts.keys().any(|v| !expected.contains_key(*v)) {
        return (f64::INFINITY, 0);
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut pool_e, mut pool_o) = (0.0, 0.0);
    for (v, p) in expected {
        let e = p * nf;
        let o = counts.get(v).copied().unwrap_or(0) as f64;
        if e < 5.0 {
            pool_e += e;
            pool_o += o;
        } else {
            cells.push((o, e));
        }
    }
    if pool_e > 0.0 {
        cells.push((pool_o, pool_e));
    }
    let stat = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    (stat, cells.len().saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::parse_program;

    #[test]
    fn log_spacing() {
        assert_eq!(log_spaced(100), vec![1, 2, 5, 10, 20, 50, 100]);
        assert_eq!(log_spaced(30), vec![1, 2, 5, 10, 20, 30]);
        assert_eq!(log_spaced(1), vec![1]);
    }

    #[test]
    fn sampling_is_reproducible_and_index_addressed() {
        let p = parse_program("(main (tuple (flip 0.5) (uniform 0 1 2 3 4 5 6 7)))").unwrap();
        let mut t = WeightTable::new();
        let w = t.initial();
        let a = sample(&p, &mut t, &w, 50, 9).unwrap();
        let b = sample(&p, &mut t, &w, 50, 9).unwrap();
        assert_eq!(a, b);
        let tail = sample_entry(&p, p.main.as_ref().unwrap(), &mut t, &w, 10, 9, 40).unwrap();
        assert_eq!(&a[40..], &tail[..]);
        let c = sample(&p, &mut t, &w, 50, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn report_counts_unique_and_valid() {
        let p = parse_program("(define (small n) (< n 2)) (main (uniform 0 1 2 3))").unwrap();
        let samples: Vec<SurfaceValue> = [0, 1, 1, 3, 2, 0]
            .iter()
            .map(|&n| SurfaceValue::Nat(n))
            .collect();
        let rows = report_samples(&p, &samples, Some("small"), &[1, 4, 6]).unwrap();
        assert_eq!(
            rows[0],
            ReportRow {
                samples: 1,
                unique: 1,
                unique_valid: 1,
                validity_rate: 1.0
            }
        );
        assert_eq!(
            rows[1],
            ReportRow {
                samples: 4,
                unique: 3,
                unique_valid: 2,
                validity_rate: 0.75
            }
        );
        assert_eq!(rows[2].unique, 4);
        assert_eq!(rows[2].unique_valid, 2);
    }
}
