//! Column defects: stripes (columns overwritten with a bright constant) and
//! deadlines (spans of columns zeroed).

use super::{per_band, record, require_normalized, Degradation, DegradationRecord, Sampled};
use crate::error::{Error, Result};
use crate::hsi::HsiCube;

/// Widest dead span.
pub const MAX_DEADLINE_WIDTH: usize = 3;

fn set_column(band: &mut [f32], width: usize, col: usize, value: f32) {
    for row in band.chunks_exact_mut(width) {
        row[col] = value;
    }
}

/// Per band: `n_c ~ U_int[a, b)` distinct columns are overwritten with one
/// intensity `lambda_c ~ U(0.6, 0.8)`.
pub fn apply_stripes(
    cube: &HsiCube,
    a: usize,
    b: usize,
    seed: u64,
) -> Result<(HsiCube, DegradationRecord)> {
    require_normalized(cube)?;
    let w = cube.width();
    if a >= b {
        return Err(Error::Argument(format!(
            "stripe count range [{a}, {b}) is empty"
        )));
    }
    if b > w {
        return Err(Error::Config(format!(
            "stripe count bound {b} exceeds width {w}"
        )));
    }
    let mut out = cube.clone();
    let drawn = per_band(&mut out, seed, "stripe", |_, band, s| {
        let n = s.int_in(a, b);
        let mut cols = s.sample_distinct(w, n);
        cols.sort_unstable();
        let value = s.uniform_in(0.6, 0.8);
        for &c in &cols {
            set_column(band, w, c, value as f32);
        }
        (cols, value)
    });
    let (cols, values): (Vec<_>, Vec<_>) = drawn.into_iter().unzip();
    let sampled = Sampled {
        stripe_columns: Some(cols),
        stripe_values: Some(values),
        ..Sampled::default()
    };
    Ok((
        out,
        record(cube, Degradation::Stripe { a, b }, seed, sampled),
    ))
}

/// Per band: `n_c ~ U_int[a, b)` distinct start columns from `1..=W-3`, each
/// with a width drawn from `{1, 2, 3}`; the spans are zeroed over the full
/// height.
pub fn apply_deadlines(
    cube: &HsiCube,
    a: usize,
    b: usize,
    seed: u64,
) -> Result<(HsiCube, DegradationRecord)> {
    require_normalized(cube)?;
    let w = cube.width();
    if a >= b {
        return Err(Error::Argument(format!(
            "deadline count range [{a}, {b}) is empty"
        )));
    }
    if w < MAX_DEADLINE_WIDTH + 1 || b > w - MAX_DEADLINE_WIDTH {
        return Err(Error::Config(format!(
            "deadline count bound {b} exceeds the {} admissible start columns",
            w.saturating_sub(MAX_DEADLINE_WIDTH)
        )));
    }
    let mut out = cube.clone();
    let drawn = per_band(&mut out, seed, "deadline", |_, band, s| {
        let n = s.int_in(a, b);
        let mut starts: Vec<usize> = s
            .sample_distinct(w - MAX_DEADLINE_WIDTH, n)
            .into_iter()
            .map(|j| j + 1)
            .collect();
        starts.sort_unstable();
        let widths: Vec<usize> = starts
            .iter()
            .map(|_| s.int_in(1, MAX_DEADLINE_WIDTH + 1))
            .collect();
        for (&start, &width) in starts.iter().zip(&widths) {
            for c in start..start + width {
                set_column(band, w, c, 0.0);
            }
        }
        (starts, widths)
    });
    let (starts, widths): (Vec<_>, Vec<_>) = drawn.into_iter().unzip();
    let sampled = Sampled {
        deadline_starts: Some(starts),
        deadline_widths: Some(widths),
        ..Sampled::default()
    };
    Ok((
        out,
        record(cube, Degradation::Deadline { a, b }, seed, sampled),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn constant(h: usize, w: usize, c: usize, v: f32) -> HsiCube {
        HsiCube::filled(h, w, c, v)
            .unwrap()
            .mark_normalized()
            .unwrap()
    }

    fn uniform_columns(cube: &HsiCube, band: usize, pred: impl Fn(f32) -> bool) -> BTreeSet<usize> {
        let w = cube.width();
        let b = cube.band(band);
        (0..w)
            .filter(|&c| {
                let first = b[c];
                pred(first) && b.chunks_exact(w).all(|row| row[c] == first)
            })
            .collect()
    }

    #[test]
    fn degenerate_range_fixes_count() {
        let cube = constant(8, 40, 5, 0.2);
        let (_, rec) = apply_stripes(&cube, 7, 8, 1).unwrap();
        assert!(rec
            .sampled
            .stripe_columns
            .unwrap()
            .iter()
            .all(|c| c.len() == 7));
        let (_, rec) = apply_deadlines(&cube, 4, 5, 1).unwrap();
        assert!(rec
            .sampled
            .deadline_starts
            .unwrap()
            .iter()
            .all(|c| c.len() == 4));
    }

    #[test]
    fn stripe_columns_match_record() {
        let cube = constant(16, 64, 6, 0.2);
        let (out, rec) = apply_stripes(&cube, 30, 35, 77).unwrap();
        let cols = rec.sampled.stripe_columns.unwrap();
        let values = rec.sampled.stripe_values.unwrap();
        for c in 0..6 {
            assert!((30..35).contains(&cols[c].len()));
            assert!((0.6..0.8).contains(&values[c]));
            let seen = uniform_columns(&out, c, |v| (0.6..=0.8).contains(&v));
            assert_eq!(seen, cols[c].iter().copied().collect());
        }
    }

    #[test]
    fn single_dead_column() {
        let cube = constant(6, 10, 1, 1.0);
        // Find a seed where the lone span has width 1.
        for seed in 0..100 {
            let (out, rec) = apply_deadlines(&cube, 1, 2, seed).unwrap();
            if rec.sampled.deadline_widths.as_ref().unwrap()[0] == vec![1] {
                assert_eq!(uniform_columns(&out, 0, |v| v == 0.0).len(), 1);
                return;
            }
        }
        panic!("no width-1 draw in 100 seeds");
    }

    #[test]
    fn dead_columns_equal_merged_spans() {
        let cube = constant(8, 48, 8, 1.0);
        let (out, rec) = apply_deadlines(&cube, 10, 15, 5).unwrap();
        let starts = rec.sampled.deadline_starts.unwrap();
        let widths = rec.sampled.deadline_widths.unwrap();
        for c in 0..8 {
            let expected: BTreeSet<usize> = starts[c]
                .iter()
                .zip(&widths[c])
                .flat_map(|(&s, &w)| s..s + w)
                .collect();
            assert!(expected.iter().all(|&col| (1..48).contains(&col)));
            assert!(starts[c].iter().all(|&s| (1..=45).contains(&s)));
            assert_eq!(uniform_columns(&out, c, |v| v == 0.0), expected);
        }
    }

    #[test]
    fn bounds_are_config_errors() {
        let cube = constant(4, 10, 1, 0.5);
        assert!(matches!(
            apply_stripes(&cube, 3, 11, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            apply_deadlines(&cube, 3, 8, 0),
            Err(Error::Config(_))
        ));
        assert!(apply_deadlines(&cube, 3, 7, 0).is_ok());
    }
}
