//! Direct, slow reference computations. None of these share code with the
//! production paths they are compared against.

/// Membrane potential `t` seconds after a synaptic current of size `w`
/// starts decaying into a resting neuron (v = 0), from the closed-form
/// solution of `tau_mem v' = -v + i`, `tau_syn i' = -i`.
pub fn lif_kick_response(w: f64, tau_mem: f64, tau_syn: f64, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    if tau_mem == tau_syn {
        return w * t / tau_mem * (-t / tau_mem).exp();
    }
    w * tau_syn / (tau_syn - tau_mem) * ((-t / tau_syn).exp() - (-t / tau_mem).exp())
}

/// Exponentially filtered spike trains sampled at `k * period` for
/// `k < rows`: `x[k][n] = sum over spikes s of n with s <= t_k of
/// exp(-(t_k - s) / tau)`. Quadratic in the input.
pub fn convolve_spikes(spikes: &[(f64, u32)], n_neurons: usize, tau: f64, period: f64, rows: usize) -> Vec<Vec<f64>> {
    let mut x = vec![vec![0.0; n_neurons]; rows];
    for (k, row) in x.iter_mut().enumerate() {
        let t = k as f64 * period;
        for &(s, n) in spikes {
            if s <= t {
                row[n as usize] += (-(t - s) / tau).exp();
            }
        }
    }
    x
}

/// `|X W - Y|^2 + ridge |W|^2` with `x` and `y` as rows and `w[unit]` the
/// weight vector of one output column.
pub fn ridge_objective(x: &[Vec<f64>], y: &[Vec<f64>], w: &[Vec<f64>], ridge: f64) -> f64 {
    let mut sse = 0.0;
    for (xr, yr) in x.iter().zip(y) {
        for (u, wu) in w.iter().enumerate() {
            let pred: f64 = xr.iter().zip(wu).map(|(a, b)| a * b).sum();
            sse += (pred - yr[u]).powi(2);
        }
    }
    let norm: f64 = w.iter().flatten().map(|v| v * v).sum();
    sse + ridge * norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Span {
    /// Anomalous segment of the given class index.
    Segment(usize),
    Normal,
    /// Scored as neither (anomalous beats outside segments).
    Other,
}

/// Half-open range of score indices `[start, end)` and what it counts as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoredSpan {
    pub start: usize,
    pub end: usize,
    pub kind: Span,
}

/// Threshold chosen by trying every distinct score value of one unit and
/// tallying misses and false alarms sample by sample. Ties go to the larger
/// threshold. Returns `(theta, cost)`.
pub fn exhaustive_threshold(scores: &[f64], spans: &[ScoredSpan], class: usize, lambda: f64) -> (f64, f64) {
    let mut candidates = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (f64::NAN, f64::INFINITY);
    for &theta in &candidates {
        let mut missed = 0usize;
        let mut alarms = 0usize;
        for sp in spans {
            let hit = scores[sp.start..sp.end].iter().any(|&s| s > theta);
            match sp.kind {
                Span::Segment(c) if c == class && !hit => missed += 1,
                Span::Normal if hit => alarms += 1,
                _ => {}
            }
        }
        let cost = missed as f64 + lambda * alarms as f64;
        if cost <= best.1 {
            best = (theta, cost);
        }
    }
    best
}

/// Hand-countable outcome tally: for each span, whether any unit fired
/// inside it. Returns overall `(tp, fn, fp, tn)`.
pub fn tally(fired: &[bool], spans: &[ScoredSpan]) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (sp, &f) in spans.iter().zip(fired) {
        match (sp.kind, f) {
            (Span::Segment(_), true) => c.0 += 1,
            (Span::Segment(_), false) => c.1 += 1,
            (Span::Normal, true) => c.2 += 1,
            (Span::Normal, false) => c.3 += 1,
            (Span::Other, _) => {}
        }
    }
    c
}
