use crate::error::{Error, Result};

/// Parallel scores and target labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub targets: Vec<bool>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, targets: Vec<bool>) -> Result<Self> {
        if scores.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} scores but {} labels",
                scores.len(),
                targets.len()
            )));
        }
        Ok(Self { scores, targets })
    }

    /// Builds a set from separate target and nontarget score lists.
    pub fn from_split(targets: &[f64], nontargets: &[f64]) -> Self {
        let mut scores = targets.to_vec();
        scores.extend_from_slice(nontargets);
        let mut labels = vec![true; targets.len()];
        labels.resize(scores.len(), false);
        Self {
            scores,
            targets: labels,
        }
    }

    pub fn push(&mut self, score: f64, target: bool) {
        self.scores.push(score);
        self.targets.push(target);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn num_targets(&self) -> usize {
        self.targets.iter().filter(|&&t| t).count()
    }

    pub fn num_nontargets(&self) -> usize {
        self.len() - self.num_targets()
    }

    /// Applies `f` to every score.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            scores: self.scores.iter().map(|&s| f(s)).collect(),
            targets: self.targets.clone(),
        }
    }
}

/// Equal error rate and the threshold where it occurs.
///
/// Thresholds sweep every distinct score plus a final point above all of
/// them. A trial is accepted when its score is `>= θ`, so
/// `FAR(θ) = #{nontarget >= θ} / N` and `FRR(θ) = #{target < θ} / P`.
/// FRR − FAR rises from negative at the lowest score to positive past the
/// highest; the EER is read off the linear interpolation between the two
/// sweep points bracketing the first sign change.
pub fn compute_eer(set: &ScoreSet) -> Result<(f64, f64)> {
    let (p, n) = (set.num_targets(), set.num_nontargets());
    if p == 0 || n == 0 {
        return Err(Error::DegenerateScores {
            targets: p,
            nontargets: n,
        });
    }
    if set.scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let mut pairs: Vec<(f64, bool)> = set
        .scores
        .iter()
        .copied()
        .zip(set.targets.iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Counts strictly below the current threshold.
    let (mut targets_below, mut nontargets_below) = (0usize, 0usize);
    let mut prev: Option<(f64, f64, f64)> = None; // (θ, FAR, FRR)
    let mut i = 0;
    loop {
        let theta = if i < pairs.len() {
            pairs[i].0
        } else {
            f64::INFINITY
        };
        let far = (n - nontargets_below) as f64 / n as f64;
        let frr = targets_below as f64 / p as f64;
        if frr - far >= 0.0 {
            let Some((theta_a, far_a, frr_a)) = prev else {
                // Unreachable: at the lowest score every nontarget is accepted.
                return Ok((far, theta));
            };
            let (da, db) = (frr_a - far_a, frr - far);
            let t = -da / (db - da);
            let eer = far_a + t * (far - far_a);
            let threshold = if theta.is_finite() {
                theta_a + t * (theta - theta_a)
            } else {
                theta_a
            };
            return Ok((eer, threshold));
        }
        prev = Some((theta, far, frr));
        // Advance past every copy of this score.
        while i < pairs.len() && pairs[i].0 == theta {
            if pairs[i].1 {
                targets_below += 1;
            } else {
                nontargets_below += 1;
            }
            i += 1;
        }
    }
}
