//! Pool-adjacent-violators projection onto nonincreasing sequences.

/// Replaces `v` by its least-squares nonincreasing projection and returns the
/// sup-norm size of the correction.
pub fn project_nonincreasing(v: &mut [f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v.iter() {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 >= s1 / n1 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().expect("nonempty") = (s0 + s1, n0 + n1);
        }
    }
    let mut moved = 0.0f64;
    let mut i = 0;
    for (s, n) in blocks {
        let m = s / n as f64;
        for x in &mut v[i..i + n] {
            moved = moved.max((*x - m).abs());
            *x = m;
        }
        i += n;
    }
    moved
}
