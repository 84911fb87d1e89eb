//! Windowed sums of polynomial kernels over sorted points.
//!
//! For a sorted point set `x_1 ≤ … ≤ x_n`, a bandwidth `h` and a polynomial
//! `p` of degree ≤ 8, [`WindowSum::sum`] returns
//! `Σ_{|x_i - t| ≤ h} p((x_i - t)/h)` in `O(log n)` time.
//!
//! Points are cut into blocks of width `h`. Each block stores prefix sums of
//! the powers of `(x - anchor)/h` where `|x - anchor| ≤ h/2`, so the
//! shifted moments at query time never involve large powers and the result
//! keeps full relative precision regardless of `h`.

const MOMENTS: usize = 9;
pub const MAX_DEGREE: usize = MOMENTS - 1;

const BINOM: [[f64; MOMENTS]; MOMENTS] = binomials();

const fn binomials() -> [[f64; MOMENTS]; MOMENTS] {
    let mut t = [[0.0; MOMENTS]; MOMENTS];
    let mut k = 0;
    while k < MOMENTS {
        t[k][0] = 1.0;
        let mut m = 1;
        while m <= k {
            t[k][m] = t[k - 1][m - 1] + if m < k { t[k - 1][m] } else { 0.0 };
            m += 1;
        }
        k += 1;
    }
    t
}

#[derive(Debug, Clone)]
struct Block {
    start: usize,
    end: usize,
    anchor: f64,
    /// `prefix[i - start]` = moments of points `start..i` (exclusive end).
    prefix: Vec<[f64; MOMENTS]>,
}

#[derive(Debug, Clone)]
pub struct WindowSum {
    points: Vec<f64>,
    h: f64,
    blocks: Vec<Block>,
    /// Block index of every point.
    block_of: Vec<u32>,
}

impl WindowSum {
    /// `points` must be finite; they are sorted internally.
    pub fn new(mut points: Vec<f64>, h: f64) -> Self {
        assert!(h > 0.0 && h.is_finite(), "window half-width must be positive");
        points.sort_by(f64::total_cmp);
        let mut blocks = Vec::new();
        let mut block_of = Vec::with_capacity(points.len());
        let mut i = 0;
        while i < points.len() {
            let start = i;
            let left = points[i];
            let mut end = i;
            while end < points.len() && points[end] - left <= h {
                end += 1;
            }
            let anchor = left + 0.5 * h;
            let mut prefix = Vec::with_capacity(end - start + 1);
            let mut acc = [0.0; MOMENTS];
            prefix.push(acc);
            for &x in &points[start..end] {
                let z = (x - anchor) / h;
                let mut pw = 1.0;
                for a in acc.iter_mut() {
                    *a += pw;
                    pw *= z;
                }
                prefix.push(acc);
            }
            let id = blocks.len() as u32;
            block_of.extend(std::iter::repeat(id).take(end - start));
            blocks.push(Block {
                start,
                end,
                anchor,
                prefix,
            });
            i = end;
        }
        Self {
            points,
            h,
            blocks,
            block_of,
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// Number of points `≤ t`.
    pub fn count_le(&self, t: f64) -> usize {
        self.points.partition_point(|&x| x <= t)
    }

    /// Number of points `< t`.
    pub fn count_lt(&self, t: f64) -> usize {
        self.points.partition_point(|&x| x < t)
    }

    /// `Σ p((x_i - t)/h)` over points with `|x_i - t| ≤ h`; `coeffs` in the
    /// power basis, at most [`MAX_DEGREE`] + 1 entries.
    pub fn sum(&self, t: f64, coeffs: &[f64]) -> f64 {
        let lo = self.count_lt(t - self.h);
        let hi = self.count_le(t + self.h);
        self.sum_range(lo, hi, t, coeffs)
    }

    /// Same polynomial sum restricted to the sorted index range `lo..hi`.
    pub fn sum_range(&self, lo: usize, hi: usize, t: f64, coeffs: &[f64]) -> f64 {
        debug_assert!(coeffs.len() <= MOMENTS);
        if lo >= hi {
            return 0.0;
        }
        let deg = coeffs.len().saturating_sub(1);
        let mut total = 0.0;
        let mut b = self.block_of[lo] as usize;
        let mut idx = lo;
        while idx < hi {
            let blk = &self.blocks[b];
            let a = idx - blk.start;
            let e = hi.min(blk.end) - blk.start;
            let pa = &blk.prefix[a];
            let pe = &blk.prefix[e];
            let mut s = [0.0; MOMENTS];
            for m in 0..=deg {
                s[m] = pe[m] - pa[m];
            }
            // Σ ((x - t)/h)^k = Σ_m C(k, m) z^m δ^(k-m), δ = (anchor - t)/h
            let delta = (blk.anchor - t) / self.h;
            let mut dpow = [1.0; MOMENTS];
            for k in 1..=deg {
                dpow[k] = dpow[k - 1] * delta;
            }
            for (k, &ck) in coeffs.iter().enumerate() {
                if ck == 0.0 {
                    continue;
                }
                let mut tk = 0.0;
                for m in 0..=k {
                    tk += BINOM[k][m] * s[m] * dpow[k - m];
                }
                total += ck * tk;
            }
            idx = blk.end;
            b += 1;
        }
        total
    }
}
