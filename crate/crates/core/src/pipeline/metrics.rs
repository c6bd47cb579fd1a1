use crate::error::{Error, Result};

/// Macro-F1 over the two classes of one axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacroF1 {
    /// In `[0, 100]`.
    pub score: f64,
    /// Per class: absent from both predictions and labels (scored as 0).
    pub absent: [bool; 2],
}

/// Binary confusion counts `(tp, fp, fn)` for class `c`.
fn counts(preds: &[u8], labels: &[u8], c: u8) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (&p, &y) in preds.iter().zip(labels) {
        match (p == c, y == c) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    (tp, fp, fn_)
}

pub fn macro_f1_detail(preds: &[u8], labels: &[u8]) -> Result<MacroF1> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if let Some(bad) = preds.iter().chain(labels).find(|&&v| v > 1) {
        return Err(Error::Parameter(format!("binary class expected, got {bad}")));
    }
    let mut sum = 0.0;
    let mut absent = [false; 2];
    for c in 0..2u8 {
        let (tp, fp, fn_) = counts(preds, labels, c);
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            absent[c as usize] = true;
        } else {
            sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(MacroF1 {
        score: sum / 2.0 * 100.0,
        absent,
    })
}

/// Unweighted mean of the two per-class F1 scores, as a percentage.
pub fn macro_f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    Ok(macro_f1_detail(preds, labels)?.score)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(macro_f1(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 100.0);
        let m = macro_f1(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap();
        assert!((m - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(macro_f1(&[1, 0, 1], &[0, 1, 0]).unwrap(), 0.0);
        let d = macro_f1_detail(&[1, 1], &[1, 1]).unwrap();
        assert_eq!(d.score, 50.0);
        assert_eq!(d.absent, [true, false]);
        assert!(macro_f1(&[0], &[0, 1]).is_err());
        assert!(macro_f1(&[], &[]).is_err());
        assert!(macro_f1(&[2], &[0]).is_err());
    }
}
