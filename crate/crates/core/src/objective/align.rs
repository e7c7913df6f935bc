/// Bring a feature vector to length `target`.
///
/// Shorter inputs are tiled and truncated; longer inputs are average-pooled
/// with pool size and stride `len / target`, then truncated.
pub fn align_dims(z: &[f64], target: usize) -> Vec<f64> {
    let len = z.len();
    assert!(len > 0, "cannot align an empty vector");
    if len == target {
        return z.to_vec();
    }
    if len < target {
        return (0..target).map(|i| z[i % len]).collect();
    }
    let pool = len / target;
    let mut out: Vec<f64> = z
        .chunks_exact(pool)
        .take(target)
        .map(|c| c.iter().sum::<f64>() / pool as f64)
        .collect();
    // unreachable for pool = floor(len/target), kept for completeness
    while out.len() < target {
        out.push(*out.last().expect("non-empty"));
    }
    out
}

/// Adjoint of [`align_dims`]: maps a gradient w.r.t. the aligned vector back
/// to the original length `len`.
pub fn align_dims_backward(grad: &[f64], len: usize) -> Vec<f64> {
    let target = grad.len();
    let mut out = vec![0.0; len];
    if len == target {
        out.copy_from_slice(grad);
    } else if len < target {
        for (i, g) in grad.iter().enumerate() {
            out[i % len] += g;
        }
    } else {
        let pool = len / target;
        for (i, g) in grad.iter().enumerate() {
            for o in &mut out[i * pool..(i + 1) * pool] {
                *o += g / pool as f64;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn examples() {
        assert_eq!(align_dims(&[1.0, 2.0, 3.0], 3), vec![1.0, 2.0, 3.0]);
        assert_eq!(align_dims(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 3.5]);
        assert_eq!(align_dims(&[5.0, 6.0], 5), vec![5.0, 6.0, 5.0, 6.0, 5.0]);
        // pool of 2 over 5 values, tail dropped
        assert_eq!(align_dims(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0]);
    }

    #[test]
    fn backward_is_the_adjoint() {
        // <align(z), g> == <z, align_backward(g)> for every length pair
        let mut rng = Rng::new(1);
        for len in 1..12 {
            for target in 1..12 {
                let z: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
                let g: Vec<f64> = (0..target).map(|_| rng.normal()).collect();
                let lhs: f64 = align_dims(&z, target)
                    .iter()
                    .zip(&g)
                    .map(|(a, b)| a * b)
                    .sum();
                let rhs: f64 = z
                    .iter()
                    .zip(align_dims_backward(&g, len))
                    .map(|(a, b)| a * b)
                    .sum();
                assert!((lhs - rhs).abs() < 1e-12, "{len}->{target}");
            }
        }
    }
}
