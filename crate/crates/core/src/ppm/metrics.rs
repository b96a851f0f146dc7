use crate::error::{Error, Result};

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation. `Ok(None)` when either input is constant.
pub fn spearman(pred: &[f64], actual: &[f64]) -> Result<Option<f64>> {
    if pred.len() != actual.len() {
        return Err(Error::validation(format!(
            "spearman of {} predictions and {} targets",
            pred.len(),
            actual.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::validation("spearman needs at least 2 points"));
    }
    Ok(pearson(&average_ranks(pred), &average_ranks(actual)))
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(Error::validation(format!(
            "rmse of {} predictions and {} targets",
            pred.len(),
            actual.len()
        )));
    }
    let ss: f64 = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((ss / pred.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &a).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap().unwrap() + 1.0).abs() < 1e-12);
        let r = spearman(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap().unwrap();
        assert!((r - 0.8).abs() < 1e-9);
        assert_eq!(spearman(&a, &[2.0; 4]).unwrap(), None);
        assert!(spearman(&a, &a[..3]).is_err());
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.53553).abs() < 1e-5);
        assert_eq!(rmse(&[2.0], &[1.0]).unwrap(), 1.0);
    }
}
