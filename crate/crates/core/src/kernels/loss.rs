use crate::error::{Error, Result};
use crate::tensor::ClipTensor;

/// Mean per-pixel softmax cross-entropy over all `(h, w, t)` sites.
///
/// `labels` holds one class index per site in layout order. Returns the loss
/// and its gradient `(softmax − onehot) / sites` with respect to the logits.
pub fn softmax_ce_loss(logits: &ClipTensor, labels: &[usize]) -> Result<(f64, ClipTensor)> {
    let s = logits.shape();
    let classes = s.c;
    if classes < 2 {
        return Err(Error::Shape(format!("need at least 2 classes, got {classes}")));
    }
    let sites = s.batch_len() * s.sites();
    if labels.len() != sites {
        return Err(Error::Mismatch(format!("{} labels for {sites} sites", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    let inv = 1.0 / sites as f64;
    let mut grad = vec![0.0; logits.data().len()];
    let mut loss = 0.0;
    for ((z, g), &label) in logits.data().chunks_exact(classes).zip(grad.chunks_exact_mut(classes)).zip(labels) {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (gi, &zi) in g.iter_mut().zip(z) {
            *gi = (zi - max).exp();
            denom += *gi;
        }
        // -log softmax[label] = log Σ exp(z - max) - (z[label] - max)
        loss += denom.ln() - (z[label] - max);
        for gi in g.iter_mut() {
            *gi *= inv / denom;
        }
        g[label] -= inv;
    }
    Ok((loss * inv, ClipTensor::from_vec(s, grad)?))
}

/// Index of the largest logit per site; ties go to the lowest class.
pub fn argmax_classes(logits: &ClipTensor) -> Vec<usize> {
    logits
        .data()
        .chunks_exact(logits.shape().c)
        .map(|z| {
            let mut best = 0;
            for (i, &v) in z.iter().enumerate() {
                if v > z[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
