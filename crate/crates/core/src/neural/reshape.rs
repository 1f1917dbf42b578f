//! Turning flat feature vectors into images and pseudo-sequences.

use super::{NeuralError, Tensor};

/// Side of the square image built from `n` features: the largest `s` with
/// `s² ≤ n`, or `s² < n` when `strict`.
pub fn square_side(n: usize, strict: bool) -> Result<usize, NeuralError> {
    let min = if strict { 2 } else { 1 };
    if n < min {
        return Err(NeuralError::InputTooShort { n, min });
    }
    let mut s = (n as f64).sqrt() as usize;
    while s * s > n {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= n {
        s += 1;
    }
    if strict && s * s == n {
        s -= 1;
    }
    Ok(s)
}

pub fn is_composite(c: usize) -> bool {
    c >= 4 && (2..).take_while(|d| d * d <= c).any(|d| c % d == 0)
}

/// `(A, B)` for the sequence view: `C = A·B` is the largest composite `≤ n`
/// (`< n` when `strict`) and `A` its largest divisor not above `√C`.
pub fn sequence_shape(n: usize, strict: bool) -> Result<(usize, usize), NeuralError> {
    let min = if strict { 5 } else { 4 };
    if n < min {
        return Err(NeuralError::InputTooShort { n, min });
    }
    let top = if strict { n - 1 } else { n };
    let c = (4..=top).rev().find(|&c| is_composite(c)).expect("4 is composite");
    let a = (1..).take_while(|a| a * a <= c).filter(|a| c % a == 0).last().expect("1 divides");
    Ok((a, c / a))
}

pub fn to_square_image(v: &[f64], strict: bool) -> Result<Tensor, NeuralError> {
    let s = square_side(v.len(), strict)?;
    Tensor::new(vec![1, s, s], v[..s * s].to_vec())
}

pub fn to_sequence(v: &[f64], strict: bool) -> Result<Tensor, NeuralError> {
    let (a, b) = sequence_shape(v.len(), strict)?;
    Tensor::new(vec![a, b], v[..a * b].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_examples() {
        let v: Vec<f64> = (0..110).map(f64::from).collect();
        let t = to_square_image(&v, false).unwrap();
        assert_eq!(t.shape, vec![1, 10, 10]);
        assert_eq!(t.data, v[..100]);
        assert_eq!(square_side(49, false).unwrap(), 7);
        assert_eq!(square_side(3, false).unwrap(), 1);
        assert_eq!(square_side(49, true).unwrap(), 6);
    }

    #[test]
    fn sequence_examples() {
        assert_eq!(sequence_shape(47, false).unwrap(), (2, 23));
        assert_eq!(sequence_shape(36, false).unwrap(), (6, 6));
        assert_eq!(sequence_shape(12, false).unwrap(), (3, 4));
        assert_eq!(sequence_shape(36, true).unwrap(), (5, 7));
        assert!(matches!(sequence_shape(3, false), Err(NeuralError::InputTooShort { n: 3, min: 4 })));
    }
}
