use glt::GltError;

/// Relative mean absolute error `|y - y_hat|_1 / |y|_1`.
pub fn rmae(truth: &[f64], estimate: &[f64]) -> glt::Result<f64> {
    if truth.len() != estimate.len() {
        return Err(GltError::InvalidArgument(format!(
            "length mismatch: {} truth values, {} estimates",
            truth.len(),
            estimate.len()
        )));
    }
    let norm: f64 = truth.iter().map(|y| y.abs()).sum();
    if !(norm > 0.0) {
        return Err(GltError::InvalidArgument("truth has zero l1 norm".into()));
    }
    let err: f64 = truth.iter().zip(estimate).map(|(y, e)| (y - e).abs()).sum();
    Ok(err / norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub se: f64,
    pub median: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let count = values.len();
    if count == 0 {
        return Summary { count, mean: f64::NAN, se: f64::NAN, median: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let se = if count > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64 / count as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if count % 2 == 1 {
        sorted[count / 2]
    } else {
        0.5 * (sorted[count / 2 - 1] + sorted[count / 2])
    };
    Summary { count, mean, se, median }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(rmae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmae(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), 0.5);
        assert!(rmae(&[0.0, 0.0], &[1.0, 3.0]).is_err());
        assert!(rmae(&[1.0], &[1.0, 3.0]).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(summarize(&[3.0, 1.0, 2.0]).median, 2.0);
        assert_eq!(summarize(&[4.0, 1.0, 2.0, 3.0]).median, 2.5);
    }
}
