use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KappaError {
    #[error("no items to rate")]
    Empty,
    #[error("row {row} has {len} categories, expected {expected}")]
    Ragged {
        row: usize,
        len: usize,
        expected: usize,
    },
    #[error("item {row} has {raters} ratings; at least two are needed")]
    TooFewRaters { row: usize, raters: u64 },
}

/// Fleiss' kappa over an item × category count matrix. Items may have
/// different numbers of raters. When every rating falls in one category the
/// agreement is perfect and the result is 1.0.
pub fn fleiss_kappa<R: AsRef<[u32]>>(counts: &[R]) -> Result<f64, KappaError> {
    let first = counts.first().ok_or(KappaError::Empty)?.as_ref();
    let k = first.len();
    if k == 0 {
        return Err(KappaError::Empty);
    }
    let mut totals = vec![0u64; k];
    let mut grand = 0u64;
    let mut p_sum = 0.0;
    for (row, r) in counts.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != k {
            return Err(KappaError::Ragged {
                row,
                len: r.len(),
                expected: k,
            });
        }
        let n: u64 = r.iter().map(|&c| u64::from(c)).sum();
        if n < 2 {
            return Err(KappaError::TooFewRaters { row, raters: n });
        }
        let sq: u64 = r.iter().map(|&c| u64::from(c) * u64::from(c)).sum();
        p_sum += (sq - n) as f64 / (n * (n - 1)) as f64;
        for (t, &c) in totals.iter_mut().zip(r) {
            *t += u64::from(c);
        }
        grand += n;
    }
    let p_bar = p_sum / counts.len() as f64;
    let p_e: f64 = totals
        .iter()
        .map(|&t| {
            let p = t as f64 / grand as f64;
            p * p
        })
        .sum();
    if totals.iter().filter(|&&t| t > 0).count() == 1 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}
